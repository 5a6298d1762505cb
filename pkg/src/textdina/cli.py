"""Command-line entry points: tau, simulate, fit, eval, report.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 convergence
failure under --strict, 5 internal error.
"""

import argparse
import os
import sys
from dataclasses import asdict, replace
from types import SimpleNamespace

import numpy as np

from . import io as tdio
from .errors import (
    CapacityError,
    ConfigError,
    DataError,
    DegenerateVarianceError,
    DimensionError,
    DomainError,
    TextDinaError,
)
from .metrics import map_q_from_freq, score_summary, summarize
from .priors import PRESETS, preset
from .sampler import FitData, SamplerConfig, run_mcmc
from .simulate import (
    SimCondition,
    condition_stream,
    default_tau_pool,
    make_truth,
    simulate_replication,
)
from .text_signal import compute_tau, standardize_tau

RHAT_LIMIT = 1.1

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIAGNOSTICS = 4
EXIT_INTERNAL = 5


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="textdina",
        description="Dynamic DINA cognitive diagnosis with a text-informed Q prior",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_tau = sub.add_parser("tau", help="compute item text signals from embeddings")
    p_tau.add_argument("--embeddings", required=True, help="embeddings.json input")
    p_tau.add_argument("--out", required=True, help="tau.json output path")
    p_tau.add_argument("--standardize", choices=("per-time", "union"), default="per-time",
                       help="standardisation pool: each time point or all items together")
    p_tau.add_argument("--force", action="store_true", help="overwrite existing output")

    p_sim = sub.add_parser("simulate", help="generate one synthetic dataset plus truth")
    p_sim.add_argument("--out", required=True, help="output directory")
    p_sim.add_argument("--seed", required=True, type=int)
    p_sim.add_argument("--n", type=int, default=800, help="learners")
    p_sim.add_argument("--j", type=int, default=10, help="items per time point")
    p_sim.add_argument("--rep", type=int, default=0, help="replication index")
    p_sim.add_argument("--pool", default=None, help="JSON file with a custom tau pool")
    p_sim.add_argument("--tau-mode", choices=("independent", "conditional"),
                       default="independent")
    p_sim.add_argument("--force", action="store_true")

    p_fit = sub.add_parser("fit", help="fit the model to a dataset")
    p_fit.add_argument("--responses", required=True)
    p_fit.add_argument("--covariates", required=True)
    p_fit.add_argument("--tau", default=None, help="tau.json (omit for the baseline model)")
    p_fit.add_argument("--out", required=True, help="output directory")
    p_fit.add_argument("--seed", required=True, type=int)
    p_fit.add_argument("--chains", type=int, default=3)
    p_fit.add_argument("--burnin", type=int, default=3000)
    p_fit.add_argument("--keep", type=int, default=3000)
    p_fit.add_argument("--thin", type=int, default=1)
    p_fit.add_argument("--preset", choices=sorted(PRESETS), default="sim-default")
    p_fit.add_argument("--pin-lambda", type=float, default=None, metavar="VALUE",
                       help="pin the text-signal strength (0 reduces to the baseline model)")
    p_fit.add_argument("--gamma10-prior", choices=("loss-averse", "standard"),
                       default="loss-averse",
                       help="prior on the loss-of-mastery intercept: N(-3,1) or N(0,1)")
    p_fit.add_argument("--attributes", type=int, default=2)
    p_fit.add_argument("--constraints", choices=("strict", "relaxed"), default="strict")
    p_fit.add_argument("--strict", action="store_true",
                       help="exit 4 if any monitored R-hat exceeds 1.1")
    p_fit.add_argument("--force", action="store_true")
    p_fit.add_argument("--no-save-alpha", action="store_true",
                       help="skip the (large) per-learner mastery draws file")

    p_eval = sub.add_parser("eval", help="score a fit against a truth manifest")
    p_eval.add_argument("--summary", required=True, help="summaries.json from fit")
    p_eval.add_argument("--truth", required=True, help="truth.json from simulate")
    p_eval.add_argument("--out", required=True, help="output directory")
    p_eval.add_argument("--condition", default="-")
    p_eval.add_argument("--replication", default="-")
    p_eval.add_argument("--model", default="-")
    p_eval.add_argument("--force", action="store_true")

    p_rep = sub.add_parser("report", help="aggregate metrics files into tables")
    p_rep.add_argument("--study", required=True, help="study directory to scan")
    p_rep.add_argument("--out", required=True, help="output directory")
    p_rep.add_argument("--allow-mixed", action="store_true",
                       help="aggregate metrics produced under differing config hashes")
    p_rep.add_argument("--boot", type=int, default=1000, help="bootstrap resamples")
    return parser


def _refuse_overwrite(paths, force: bool) -> None:
    existing = [p for p in paths if os.path.exists(p)]
    if existing and not force:
        raise ConfigError(
            f"refusing to overwrite existing output ({existing[0]}); pass --force"
        )


# ---------------------------------------------------------------------------
# tau


def cmd_tau(args) -> int:
    items, encoder = tdio.load_embeddings(args.embeddings)
    _refuse_overwrite([args.out], args.force)
    signals = [compute_tau(item) for item in items]
    if args.standardize == "union":
        std = standardize_tau([sig.tau_raw for sig in signals])
        for sig, value in zip(signals, std):
            sig.tau_std = float(value)
    else:
        times = sorted({sig.time_index for sig in signals})
        for t in times:
            group = [sig for sig in signals if sig.time_index == t]
            std = standardize_tau([sig.tau_raw for sig in group])
            for sig, value in zip(group, std):
                sig.tau_std = float(value)
    payload = {"command": "tau", "standardize": args.standardize, "encoder": encoder}
    meta = {"config_hash": tdio.config_fingerprint(payload), "seed": "-"}
    entries = [{"item_id": sig.item_id, "time": sig.time_index,
                "tau_raw": sig.tau_raw, "tau_std": sig.tau_std} for sig in signals]
    tdio.write_tau_json(args.out, entries, encoder, meta)
    print(f"wrote {args.out} ({len(entries)} items)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    condition = SimCondition(n_learners=args.n, n_items=args.j, n_reps=args.rep + 1,
                             seed=args.seed)
    pool = default_tau_pool()
    if args.pool:
        pool = np.asarray(tdio.read_json(args.pool)["values"], dtype=float)
    out_dir = args.out
    _refuse_overwrite([os.path.join(out_dir, "responses.csv")], args.force)
    truth = make_truth(condition, condition_stream(condition, 0))
    data, rep_truth, tau = simulate_replication(condition, truth, args.rep,
                                                pool=pool, tau_mode=args.tau_mode)
    payload = {"command": "simulate", "n": args.n, "j": args.j,
               "rep": args.rep, "tau_mode": args.tau_mode}
    meta = {"config_hash": tdio.config_fingerprint(payload), "seed": args.seed}
    os.makedirs(out_dir, exist_ok=True)
    tdio.write_dataset_bundle(out_dir, data.Y, data.Z, tau, data.tau_std,
                              rep_truth, meta)
    print(f"wrote dataset to {out_dir} "
          f"(N={args.n}, J={args.j}, T={condition.n_times}, rep={args.rep})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit


def cmd_fit(args) -> int:
    if args.pin_lambda is not None and args.pin_lambda != 0.0:
        raise ConfigError("--pin-lambda currently supports only the value 0")
    prior = preset(args.preset, pin_lambda=args.pin_lambda is not None)
    if args.gamma10_prior == "standard":
        prior = replace(prior, gamma10_loss_averse=False)

    records, _ = tdio.read_responses_csv(args.responses)
    Y, student_ids, item_ids_per_time = tdio.pivot_responses(records)
    cov_students, z_raw, _, _ = tdio.read_covariates_csv(args.covariates)
    if cov_students != student_ids:
        raise DataError("covariates and responses disagree on the student roster")
    Z = tdio.standardize_covariates(z_raw)
    tau_std = None
    if args.tau:
        entries, _, _ = tdio.read_tau_json(args.tau)
        tau_std = tdio.tau_matrix(entries, item_ids_per_time)
    data = FitData(Y=Y, Z=Z, n_attributes=args.attributes, tau_std=tau_std)

    config = SamplerConfig(
        n_chains=args.chains, n_burnin=args.burnin, n_keep=args.keep,
        thin=args.thin, seed=args.seed, constraints=args.constraints,
        save_alpha=not args.no_save_alpha,
    )
    out_dir = args.out
    outputs = [os.path.join(out_dir, name)
               for name in ("summaries.json", "diagnostics.json", "draws_q.csv")]
    _refuse_overwrite(outputs, args.force)

    mc, diag = run_mcmc(data, prior, config)
    summary = summarize(mc)

    payload = {"command": "fit", "prior": asdict(prior),
               "sampler": {k: v for k, v in asdict(config).items()
                           if k not in ("seed", "fix_item_params", "fix_coeffs", "fix_hyper")},
               "attributes": args.attributes}
    meta = {"config_hash": tdio.config_fingerprint(payload), "seed": args.seed}
    os.makedirs(out_dir, exist_ok=True)
    tdio.write_json(os.path.join(out_dir, "summaries.json"),
                    tdio.summary_payload(mc, diag, summary, meta, extra={
                        "map_q": map_q_from_freq(summary.pattern_freq),
                        "item_ids": item_ids_per_time,
                    }))
    tdio.write_json(os.path.join(out_dir, "diagnostics.json"),
                    tdio.diagnostics_payload(diag, meta))
    tdio.write_draws_csv(out_dir, mc, meta)

    max_rhat = diag.max_rhat
    print(f"fit complete: {config.n_chains} chains x {config.n_keep} kept draws; "
          f"max rhat = {max_rhat:.4f}" if diag.rhat else "fit complete (no rhat computed)")
    if args.strict and diag.rhat and max_rhat > RHAT_LIMIT:
        print(f"convergence failure: max rhat {max_rhat:.4f} > {RHAT_LIMIT}", file=sys.stderr)
        return EXIT_DIAGNOSTICS
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args) -> int:
    summary, fit_meta, _ = tdio.load_summary(args.summary)
    if not os.path.exists(args.truth):
        raise DataError(
            f"missing truth manifest: {args.truth} (produced by `textdina simulate`; "
            f"pass its truth.json here)"
        )
    path_json = os.path.join(args.out, "metrics.json")
    path_csv = os.path.join(args.out, "metrics.csv")
    _refuse_overwrite([path_json, path_csv], args.force)
    truth_dict = tdio.load_truth(args.truth)
    truth = SimpleNamespace(**{k: v for k, v in truth_dict.items() if k != "meta"})
    if not hasattr(truth, "alpha"):
        truth.alpha = None
    report = score_summary(summary, truth)
    meta = {"config_hash": fit_meta.get("config_hash", "-"),
            "seed": fit_meta.get("seed", "-"), "condition": args.condition,
            "replication": args.replication, "model": args.model}
    os.makedirs(args.out, exist_ok=True)
    tdio.write_metrics(path_json, path_csv, report, meta)
    flat = report.flat()
    shown = {k: flat[k] for k in sorted(flat) if k.startswith(("acc", "par"))}
    print("metrics:", ", ".join(f"{k}={v:.4f}" for k, v in shown.items() if v is not None))
    return EXIT_OK


# ---------------------------------------------------------------------------
# report


Q_COLUMNS = ("acc", "fpr", "fnr", "pip_true", "pip_false")
PROFILE_COLUMNS = ("par", "aar")
HEADLINE_FAMILIES = ("g", "s", "beta0", "beta_z", "gamma01")


def _collect_metrics(study_dir):
    rows = []
    for root, _, files in os.walk(study_dir):
        for name in files:
            if name == "metrics.json":
                payload = tdio.read_json(os.path.join(root, name))
                rows.append(payload)
    if not rows:
        raise DataError(f"no metrics.json files found under {study_dir}")
    return rows


def _fmt_cell(mean, se):
    if mean is None:
        return "--"
    if se is None:
        return f"{mean:.3f} (--)"
    return f"{mean:.3f} ({se:.3f})"


def _table(title, header, rows) -> str:
    widths = [max(len(header[c]), *(len(r[c]) for r in rows)) for c in range(len(header))]
    lines = [title, ""]
    lines.append("  ".join(h.ljust(widths[i]) for i, h in enumerate(header)))
    lines.append("  ".join("-" * widths[i] for i in range(len(header))))
    for row in rows:
        lines.append("  ".join(row[i].ljust(widths[i]) for i in range(len(row))))
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    from .metrics import bootstrap_se

    payloads = _collect_metrics(args.study)
    hashes = {p.get("meta", {}).get("config_hash", "-") for p in payloads}
    if len(hashes) > 1 and not args.allow_mixed:
        raise ConfigError(
            f"metrics were produced under {len(hashes)} different config hashes "
            f"({sorted(hashes)}); pass --allow-mixed to aggregate anyway"
        )

    groups = {}
    for p in payloads:
        meta = p.get("meta", {})
        key = (str(meta.get("condition", "-")), str(meta.get("model", "-")))
        groups.setdefault(key, []).append(p["metrics"])

    aggregate = {}
    metric_names = sorted({m for rows in groups.values() for row in rows for m in row})
    for key, rows in sorted(groups.items()):
        agg = {}
        for metric in metric_names:
            values = [r[metric] for r in rows if r.get(metric) is not None]
            if not values:
                agg[metric] = (None, None)
                continue
            mean = float(np.mean(values))
            se = bootstrap_se(values, n_boot=args.boot, seed=0) if len(values) > 1 else None
            agg[metric] = (mean, se)
        aggregate[key] = agg

    os.makedirs(args.out, exist_ok=True)
    lines = ["condition,model,metric,mean,se,n_reps"]
    for (condition, model), agg in sorted(aggregate.items()):
        n_reps = len(groups[(condition, model)])
        for metric in metric_names:
            mean, se = agg[metric]
            lines.append(
                ",".join([condition, model, metric,
                          "" if mean is None else tdio.fmt_float(mean),
                          "" if se is None else tdio.fmt_float(se), str(n_reps)]))
    tdio.atomic_write_text(os.path.join(args.out, "aggregate.csv"), "\n".join(lines) + "\n")

    report = _render_report(aggregate, metric_names)
    tdio.atomic_write_text(os.path.join(args.out, "report.txt"), report)
    print(report)
    print(f"wrote {os.path.join(args.out, 'aggregate.csv')} and report.txt")
    return EXIT_OK


def _render_report(aggregate, metric_names) -> str:
    times = sorted({int(m.split(".t")[-1]) for m in metric_names
                    if m.startswith("acc.t")})
    blocks = []

    header = ["condition", "model", "T"] + [c.upper() for c in Q_COLUMNS]
    rows = []
    for (condition, model), agg in sorted(aggregate.items()):
        for t in times:
            cells = [condition, model, str(t)]
            for col in Q_COLUMNS:
                mean, se = agg.get(f"{col}.t{t}", (None, None))
                cells.append(_fmt_cell(mean, se))
            rows.append(cells)
    blocks.append(_table("Q-matrix recovery, mean (SE) over replications", header, rows))

    ks = sorted({m.split(".")[1] for m in metric_names if m.startswith("aar.")})
    header = ["condition", "model", "T", "PAR"] + [f"AAR {k}" for k in ks]
    rows = []
    for (condition, model), agg in sorted(aggregate.items()):
        for t in times:
            cells = [condition, model, str(t)]
            mean, se = agg.get(f"par.t{t}", (None, None))
            cells.append(_fmt_cell(mean, se))
            for k in ks:
                mean, se = agg.get(f"aar.{k}.t{t}", (None, None))
                cells.append(_fmt_cell(mean, se))
            rows.append(cells)
    blocks.append(_table("Attribute-profile recovery, mean (SE)", header, rows))

    header = ["condition", "model"]
    for family in HEADLINE_FAMILIES:
        header += [f"{family} RMSE", f"{family} MAE"]
    rows = []
    for (condition, model), agg in sorted(aggregate.items()):
        cells = [condition, model]
        for family in HEADLINE_FAMILIES:
            mean, se = agg.get(f"rmse.{family}", (None, None))
            cells.append(_fmt_cell(mean, se))
            mean, se = agg.get(f"mae.{family}", (None, None))
            cells.append(_fmt_cell(mean, se))
        rows.append(cells)
    blocks.append(_table("Parameter estimation accuracy, mean (SE)", header, rows))
    return "\n".join(blocks)


# ---------------------------------------------------------------------------


COMMANDS = {
    "tau": cmd_tau,
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "eval": cmd_eval,
    "report": cmd_report,
}

DATA_ERRORS = (DataError, DomainError, DimensionError, DegenerateVarianceError, CapacityError)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TextDinaError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # pragma: no cover - unexpected failure
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
