"""Synthetic-study generation and the condition x replication harness.

A study condition fixes the true Q-matrices (30-item reference forms with
shorter forms as nested leading subsets), item parameters drawn once per
condition, structural coefficients, and covariates. Text signals are drawn
from a Gaussian-kernel density estimate over an empirical pool and
standardised per time point. Each replication simulates trajectories and
responses, fits the baseline (text prior off) and text-prior models on the
same data and seeds, and scores recovery; aggregation attaches bootstrap
standard errors over replications.
"""

import json
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np

from . import rng as rngmod
from .errors import ConfigError, DegenerateVarianceError, DimensionError
from .metrics import bootstrap_se, score_summary
from .model import STRICT, check_identifiable, ideal_responses, sigmoid
from .priors import PriorConfig
from .sampler import FitData, SamplerConfig, run_mcmc
from .text_signal import standardize_tau

# Reference 30-item two-attribute forms at the two time points. Shorter
# forms are the leading J rows; every nested form stays admissible.
TRUE_Q_30_T1 = np.array([
    [1, 0], [1, 0], [0, 1], [0, 1], [1, 0], [1, 1], [0, 1], [0, 1], [1, 0], [0, 1],
    [1, 0], [1, 0], [1, 0], [0, 1], [1, 1], [1, 0], [1, 1], [1, 1], [1, 1], [0, 1],
    [0, 1], [1, 0], [0, 1], [0, 1], [0, 1], [1, 0], [0, 1], [1, 0], [1, 1], [1, 1],
], dtype=np.int8)

TRUE_Q_30_T2 = np.array([
    [1, 0], [0, 1], [1, 0], [0, 1], [1, 1], [1, 0], [1, 0], [1, 1], [1, 1], [1, 1],
    [1, 1], [0, 1], [1, 1], [1, 1], [1, 1], [1, 1], [1, 1], [0, 1], [1, 1], [0, 1],
    [1, 1], [1, 0], [0, 1], [1, 1], [1, 1], [1, 1], [1, 1], [0, 1], [1, 0], [1, 1],
], dtype=np.int8)

N_GRID = (800, 1600, 2400)
J_GRID = (10, 20, 30)


def true_q(j_items: int) -> np.ndarray:
    """(T, J, K) true Q stack: leading rows of the 30-item reference forms."""
    if j_items not in J_GRID:
        raise ConfigError(
            f"J={j_items} is outside the study grid {J_GRID}; pass a custom Q "
            f"to SimCondition for other lengths"
        )
    return np.stack([TRUE_Q_30_T1[:j_items], TRUE_Q_30_T2[:j_items]])


@dataclass
class SimCondition:
    """One cell of the simulation grid."""

    n_learners: int = 800
    n_items: int = 10
    n_reps: int = 5
    seed: int = 0
    n_covariates: int = 2
    custom_q: np.ndarray = None  # (T, J, K); overrides the grid forms
    constraints: str = STRICT

    def __post_init__(self):
        if self.n_learners < 1 or self.n_reps < 1:
            raise ConfigError("n_learners and n_reps must be >= 1")
        if self.custom_q is None:
            if self.n_items not in J_GRID:
                raise ConfigError(
                    f"J={self.n_items} not in the study grid {J_GRID}; supply "
                    f"custom_q for non-grid test lengths"
                )
        else:
            self.custom_q = np.asarray(self.custom_q, dtype=np.int8)
            if self.custom_q.ndim != 3 or self.custom_q.shape[1] != self.n_items:
                raise ConfigError("custom_q must be (T, J, K) matching n_items")
        for t in range(self.q_true.shape[0]):
            ok, violations = check_identifiable(self.q_true[t], self.constraints)
            if not ok:
                raise ConfigError(
                    f"true Q at time {t + 1} violates {violations} under "
                    f"{self.constraints!r} constraints"
                )

    @property
    def q_true(self) -> np.ndarray:
        return self.custom_q if self.custom_q is not None else true_q(self.n_items)

    @property
    def n_times(self) -> int:
        return self.q_true.shape[0]

    @property
    def n_attributes(self) -> int:
        return self.q_true.shape[2]

    @property
    def label(self) -> str:
        return f"N{self.n_learners}_J{self.n_items}"


@dataclass
class SimTruth:
    """Generating parameter values for one condition (alpha filled per rep)."""

    q: np.ndarray
    g: np.ndarray
    s: np.ndarray
    beta0: np.ndarray
    beta_z: np.ndarray
    gamma01: np.ndarray
    gamma10: np.ndarray
    alpha: np.ndarray = None


# ---------------------------------------------------------------------------
# kernel density sampling of the text signal


@dataclass
class KdeSampler:
    """Gaussian-kernel mixture over an empirical pool of signal values."""

    points: np.ndarray
    bandwidth: float = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).ravel()
        if self.points.size < 2:
            raise DimensionError("KDE pool needs at least 2 points")
        if self.bandwidth is None:
            self.bandwidth = kde_bandwidth(self.points)
        if self.bandwidth <= 0:
            raise DegenerateVarianceError("bandwidth must be positive")


def kde_bandwidth(points) -> float:
    """Normal reference rule: 1.06 * sd * M^(-1/5), sd with denominator M-1."""
    points = np.asarray(points, dtype=float).ravel()
    if points.size < 2:
        raise DegenerateVarianceError("bandwidth needs at least 2 points")
    sd = points.std(ddof=1)
    if sd == 0.0:
        raise DegenerateVarianceError("bandwidth undefined for a constant pool")
    return float(1.06 * sd * points.size ** (-0.2))


def kde_sample(sampler: KdeSampler, n: int, rng) -> np.ndarray:
    """Exact draws from the Gaussian-kernel mixture: point + N(0, h^2) jitter."""
    idx = rng.integers(0, sampler.points.size, size=n)
    return sampler.points[idx] + sampler.bandwidth * rng.standard_normal(n)


def default_tau_pool() -> np.ndarray:
    """Bundled 40-point reference pool (approximate shape, not measured data)."""
    ref = resources.files("textdina.data").joinpath("tau_pool_reference.json")
    return np.asarray(json.loads(ref.read_text())["values"], dtype=float)


def gen_tau(condition: SimCondition, pool, rng, mode: str = "independent") -> np.ndarray:
    """Per-time standardised text signals, drawn from the pool's KDE.

    mode "independent" draws signals unrelated to the true Q;
    mode "conditional" rank-couples the draws to true row sparsity (larger
    signals on sparser rows), matching the assumption the prior encodes.
    """
    if mode not in ("independent", "conditional"):
        raise ConfigError(f"unknown tau mode {mode!r}")
    sampler = KdeSampler(points=pool)
    j_items = condition.n_items
    out = np.zeros((condition.n_times, j_items))
    for t in range(condition.n_times):
        draws = kde_sample(sampler, j_items, rng)
        if mode == "conditional":
            row_sums = condition.q_true[t].sum(axis=1)
            shuffled = rng.permutation(j_items)
            order = shuffled[np.argsort(row_sums[shuffled], kind="stable")]
            ranked = np.sort(draws)[::-1]  # largest signal -> sparsest row
            draws = np.empty(j_items)
            draws[order] = ranked
        out[t] = standardize_tau(draws)
    return out


# ---------------------------------------------------------------------------
# truth and data generation


GS_TRUTH_RANGE = (0.05, 0.2)


def make_truth(condition: SimCondition, rng) -> SimTruth:
    """Condition-level truths: random item parameters, fixed-pattern coefficients.

    The guessing/slipping range keeps the Bayes-optimal profile agreement in
    the high-0.9 region reported for the reference protocol; noisier items
    (e.g. up to 0.3) push the attainable ceiling to ~0.90 even with the true
    parameters known.
    """
    t_points = condition.n_times
    j_items = condition.n_items
    k_attrs = condition.n_attributes
    c_covs = condition.n_covariates
    g = rng.uniform(*GS_TRUTH_RANGE, size=(t_points, j_items))
    s = rng.uniform(*GS_TRUTH_RANGE, size=(t_points, j_items))
    signs = np.fromfunction(lambda k, c: np.where((k + c) % 2 == 0, 0.5, -0.5),
                            (k_attrs, c_covs))
    gamma01 = np.hstack([np.zeros((k_attrs, 1)), signs])
    gamma10 = np.hstack([np.full((k_attrs, 1), -3.0), np.zeros((k_attrs, c_covs))])
    return SimTruth(
        q=condition.q_true.copy(),
        g=g,
        s=s,
        beta0=np.zeros(k_attrs),
        beta_z=signs.copy(),
        gamma01=gamma01,
        gamma10=gamma10,
    )


def gen_covariates(condition: SimCondition, rng) -> np.ndarray:
    """Standard-normal covariates, standardised exactly (mean 0, var 1, ddof=1)."""
    raw = rng.standard_normal((condition.n_learners, condition.n_covariates))
    return (raw - raw.mean(axis=0)) / raw.std(axis=0, ddof=1)


def gen_trajectories(truth: SimTruth, Z, rng) -> np.ndarray:
    """Mastery trajectories: initial logistic draw, then gain/loss transitions."""
    n = Z.shape[0]
    k_attrs = truth.beta0.shape[0]
    t_points = truth.q.shape[0]
    alpha = np.zeros((n, k_attrs, t_points), dtype=np.int8)
    for k in range(k_attrs):
        p1 = sigmoid(truth.beta0[k] + Z @ truth.beta_z[k])
        alpha[:, k, 0] = rng.random(n) < p1
    for t in range(1, t_points):
        for k in range(k_attrs):
            p_gain = sigmoid(truth.gamma01[k, 0] + Z @ truth.gamma01[k, 1:])
            p_loss = sigmoid(truth.gamma10[k, 0] + Z @ truth.gamma10[k, 1:])
            prev = alpha[:, k, t - 1]
            p_master = np.where(prev == 1, 1.0 - p_loss, p_gain)
            alpha[:, k, t] = rng.random(n) < p_master
    return alpha


def gen_responses(truth: SimTruth, alpha, rng) -> np.ndarray:
    """Bernoulli responses through the noisy-AND link with the true Q."""
    n = alpha.shape[0]
    t_points, j_items, _ = truth.q.shape
    Y = np.zeros((n, j_items, t_points), dtype=np.int8)
    for t in range(t_points):
        eta = ideal_responses(alpha[:, :, t], truth.q[t])
        p = np.where(eta == 1, 1.0 - truth.s[t][None, :], truth.g[t][None, :])
        Y[:, :, t] = rng.random((n, j_items)) < p
    return Y


def condition_stream(condition: SimCondition, *path) -> np.random.Generator:
    """Stream scoped to one grid cell, so a shared seed never aliases streams."""
    return rngmod.substream(condition.seed, condition.n_learners,
                            condition.n_items, *path)


def simulate_replication(condition: SimCondition, truth: SimTruth, rep: int,
                         pool=None, tau_mode: str = "independent"):
    """One replication's (FitData, truth-with-alpha, raw tau) under disjoint streams."""
    if pool is None:
        pool = default_tau_pool()
    tau = gen_tau(condition, pool, condition_stream(condition, rep + 1, 0), tau_mode)
    Z = gen_covariates(condition, condition_stream(condition, rep + 1, 1))
    alpha = gen_trajectories(truth, Z, condition_stream(condition, rep + 1, 2))
    Y = gen_responses(truth, alpha, condition_stream(condition, rep + 1, 3))
    data = FitData(Y=Y, Z=Z, n_attributes=condition.n_attributes, tau_std=tau)
    return data, replace(truth, alpha=alpha), tau


def replication_fit_seed(condition: SimCondition, rep: int) -> int:
    """Chain master seed for one replication (shared by both fitted models)."""
    ss = np.random.SeedSequence(
        entropy=int(condition.seed),
        spawn_key=(condition.n_learners, condition.n_items, rep + 1, 4))
    return int(ss.generate_state(1)[0])


# ---------------------------------------------------------------------------
# study harness


@dataclass
class StudyResult:
    """Per-replication metric rows plus bootstrap-aggregated summaries."""

    rows: list = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)  # (label, model) -> {metric: (mean, se)}
    manifest: dict = field(default_factory=dict)


MODELS = ("baseline", "text")


def run_study(conditions, sampler_config: SamplerConfig, prior: PriorConfig,
              pool=None, tau_mode: str = "independent", models=MODELS,
              n_boot: int = 1000, out_dir=None, progress=None) -> StudyResult:
    """Simulate, fit, and score every condition x replication x model cell.

    The baseline model is the same prior with the text term pinned off; both
    models see identical data and chain seeds within a replication. With
    out_dir set, per-replication datasets, fit summaries, and metrics are
    persisted alongside a study manifest and the aggregate table.
    """
    from dataclasses import asdict

    from . import io as tdio
    from .metrics import summarize

    if pool is None:
        pool = default_tau_pool()
    priors = {"baseline": replace(prior, lambda_enabled=False),
              "text": replace(prior, lambda_enabled=True)}
    payload = {
        "command": "study",
        "prior": asdict(replace(prior, lambda_enabled=True)),
        "sampler": {k: v for k, v in asdict(sampler_config).items()
                    if k not in ("seed", "fix_item_params", "fix_coeffs", "fix_hyper")},
        "tau_mode": tau_mode,
    }
    config_hash = tdio.config_fingerprint(payload)

    result = StudyResult()
    result.manifest = {
        "config_hash": config_hash,
        "conditions": [
            {"label": c.label, "n": c.n_learners, "j": c.n_items,
             "reps": c.n_reps, "seed": c.seed}
            for c in conditions
        ],
        "tau_mode": tau_mode,
        "models": list(models),
        "truths": {},
    }
    for condition in conditions:
        truth = make_truth(condition, condition_stream(condition, 0))
        result.manifest["truths"][condition.label] = {
            "q": truth.q.tolist(), "g": truth.g.tolist(), "s": truth.s.tolist(),
            "beta0": truth.beta0.tolist(), "beta_z": truth.beta_z.tolist(),
            "gamma01": truth.gamma01.tolist(), "gamma10": truth.gamma10.tolist(),
        }
        for rep in range(condition.n_reps):
            data, rep_truth, tau_raw = simulate_replication(
                condition, truth, rep, pool=pool, tau_mode=tau_mode)
            fit_seed = replication_fit_seed(condition, rep)
            rep_dir = None
            if out_dir is not None:
                rep_dir = f"{out_dir}/{condition.label}/rep{rep:03d}"
                meta = {"config_hash": config_hash, "seed": condition.seed,
                        "condition": condition.label, "replication": rep}
                tdio.write_dataset_bundle(rep_dir, data.Y, data.Z, tau_raw,
                                          data.tau_std, rep_truth, meta)
            for model in models:
                cfg = replace(sampler_config, seed=fit_seed,
                              constraints=condition.constraints)
                mc, diag = run_mcmc(data, priors[model], cfg)
                summary = summarize(mc)
                report = score_summary(summary, rep_truth)
                row = {"condition": condition.label, "n": condition.n_learners,
                       "j": condition.n_items, "rep": rep, "model": model,
                       "max_rhat": diag.max_rhat, "min_ess": diag.min_ess}
                row.update(report.flat())
                result.rows.append(row)
                if rep_dir is not None:
                    meta = {"config_hash": config_hash, "seed": fit_seed,
                            "condition": condition.label, "replication": rep,
                            "model": model}
                    model_dir = f"{rep_dir}/{model}"
                    tdio.write_json(f"{model_dir}/summaries.json",
                                    tdio.summary_payload(mc, diag, summary, meta))
                    tdio.write_json(f"{model_dir}/diagnostics.json",
                                    tdio.diagnostics_payload(diag, meta))
                    tdio.write_metrics(f"{model_dir}/metrics.json",
                                       f"{model_dir}/metrics.csv", report, meta)
                if progress is not None:
                    progress(row)
    _aggregate(result, n_boot)
    if out_dir is not None:
        tdio.write_json(f"{out_dir}/study_manifest.json", result.manifest)
        lines = ["condition,model,metric,mean,se"]
        for (label, model), summary in sorted(result.aggregate.items()):
            for metric, (mean, se) in sorted(summary.items()):
                lines.append(",".join([
                    label, model, metric,
                    "" if mean is None else tdio.fmt_float(mean),
                    "" if se is None else tdio.fmt_float(se)]))
        tdio.atomic_write_text(f"{out_dir}/aggregate.csv", "\n".join(lines) + "\n")
    return result


def _aggregate(result: StudyResult, n_boot: int) -> None:
    keys = {}
    for row in result.rows:
        keys.setdefault((row["condition"], row["model"]), []).append(row)
    skip = {"condition", "n", "j", "rep", "model"}
    for (label, model), rows in keys.items():
        summary = {}
        for metric in rows[0]:
            if metric in skip:
                continue
            values = [r[metric] for r in rows if r.get(metric) is not None]
            if not values:
                summary[metric] = (None, None)
                continue
            mean = float(np.mean(values))
            se = bootstrap_se(values, n_boot=n_boot, seed=0) if len(values) > 1 else None
            summary[metric] = (mean, se)
        result.aggregate[(label, model)] = summary
