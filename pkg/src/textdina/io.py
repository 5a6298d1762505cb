"""File formats, schema validation, config fingerprints, atomic writes.

All on-disk formats are plain text (CSV / JSON) so desk-scale runs stay
inspectable and diffable. Floats are serialised with 17 significant digits,
which round-trips IEEE doubles exactly. Every artifact embeds the config
fingerprint (a hash of the resolved protocol, excluding seeds and paths)
and the seed it was produced under. Writes go to a temporary file in the
target directory followed by an atomic rename.
"""

import csv
import hashlib
import json
import os
import tempfile
from dataclasses import asdict, is_dataclass

import numpy as np

from .errors import DataError
from .metrics import FitSummary
from .text_signal import ItemEmbeddings

FORMAT_VERSION = "1"

# keys that never enter the config fingerprint: they vary across runs of
# the same protocol
VOLATILE_KEYS = {"seed", "out", "paths", "force"}


def fmt_float(x) -> str:
    return format(float(x), ".17g")


def _jsonable(obj):
    if is_dataclass(obj) and not isinstance(obj, type):
        return _jsonable(asdict(obj))
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def config_fingerprint(payload: dict) -> str:
    """Stable 16-hex-digit hash of a config payload, seeds/paths excluded."""
    cleaned = {k: v for k, v in _jsonable(payload).items() if k not in VOLATILE_KEYS}
    blob = json.dumps(cleaned, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def atomic_write_text(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as handle:
            handle.write(text)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: str, payload: dict) -> None:
    atomic_write_text(path, json.dumps(_jsonable(payload), indent=2) + "\n")


def read_json(path: str) -> dict:
    try:
        with open(path) as handle:
            return json.load(handle)
    except FileNotFoundError:
        raise DataError(f"missing file: {path}")
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}")


def _meta_line(kind: str, meta: dict) -> str:
    return (f"# textdina {kind} v{FORMAT_VERSION} "
            f"config_hash={meta.get('config_hash', '-')} seed={meta.get('seed', '-')}")


def _parse_meta_line(line: str, path: str) -> dict:
    if not line.startswith("# textdina "):
        raise DataError(f"{path}: line 1: missing textdina meta header")
    meta = {}
    for token in line[2:].split():
        if "=" in token:
            key, value = token.split("=", 1)
            meta[key] = value
    return meta


# ---------------------------------------------------------------------------
# responses / covariates CSV


def write_responses_csv(path, records, meta) -> None:
    """records: iterable of (student_id, time, item_id, y)."""
    lines = [_meta_line("responses", meta), "student_id,time,item_id,y"]
    for student_id, time, item_id, y in records:
        lines.append(f"{student_id},{time},{item_id},{y}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_responses_csv(path):
    """Returns (records, meta); records as (student_id, time:int, item_id, y:int)."""
    try:
        with open(path, newline="") as handle:
            first = handle.readline().rstrip("\n")
            meta = _parse_meta_line(first, path)
            reader = csv.DictReader(handle)
            records = []
            for lineno, row in enumerate(reader, start=3):
                try:
                    y = int(row["y"])
                    time = int(row["time"])
                except (TypeError, KeyError, ValueError):
                    raise DataError(f"{path}: line {lineno}: malformed row {row}")
                if y not in (0, 1):
                    raise DataError(f"{path}: line {lineno}: y must be 0 or 1, got {row['y']}")
                records.append((row["student_id"], time, row["item_id"], y))
    except FileNotFoundError:
        raise DataError(f"missing file: {path}")
    return records, meta


def pivot_responses(records):
    """(Y, student_ids, item_ids_per_time) from long records; rejects gaps/dups.

    Students and items are ordered by first appearance in the file, so a
    write/read/pivot round trip preserves the original axis order.
    """
    student_ids, item_ids = [], {}
    seen_students = set()
    times = sorted({r[1] for r in records})
    if times != list(range(1, len(times) + 1)):
        raise DataError(f"time points must be 1..T, got {times}")
    for student_id, time, item_id, _ in records:
        if student_id not in seen_students:
            seen_students.add(student_id)
            student_ids.append(student_id)
        per_time = item_ids.setdefault(time, [])
        if item_id not in per_time:
            per_time.append(item_id)
    j_items = {t: len(ids) for t, ids in item_ids.items()}
    if len(set(j_items.values())) != 1:
        raise DataError(f"unequal item counts across time points: {j_items}")
    j = next(iter(j_items.values()))
    n, t_points = len(student_ids), len(times)
    srow = {sid: i for i, sid in enumerate(student_ids)}
    jcol = {(t, iid): j_idx for t, ids in item_ids.items() for j_idx, iid in enumerate(ids)}
    Y = np.full((n, j, t_points), -1, dtype=np.int8)
    for student_id, time, item_id, y in records:
        cell = (srow[student_id], jcol[(time, item_id)], time - 1)
        if Y[cell] != -1:
            raise DataError(f"duplicate response for student {student_id}, "
                            f"time {time}, item {item_id}")
        Y[cell] = y
    missing = int(np.sum(Y == -1))
    if missing:
        raise DataError(f"incomplete response grid: {missing} missing cells "
                        f"(every student must answer every item at every time point)")
    return Y, student_ids, [item_ids[t] for t in times]


def write_covariates_csv(path, student_ids, Z, meta, colnames=None) -> None:
    Z = np.asarray(Z, dtype=float)
    colnames = colnames or [f"z{c + 1}" for c in range(Z.shape[1])]
    lines = [_meta_line("covariates", meta), ",".join(["student_id"] + list(colnames))]
    for i, student_id in enumerate(student_ids):
        lines.append(",".join([str(student_id)] + [fmt_float(v) for v in Z[i]]))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_covariates_csv(path):
    """Returns (student_ids, Z, colnames, meta); values exactly as written."""
    try:
        with open(path, newline="") as handle:
            first = handle.readline().rstrip("\n")
            meta = _parse_meta_line(first, path)
            reader = csv.reader(handle)
            header = next(reader, None)
            if not header or header[0] != "student_id":
                raise DataError(f"{path}: line 2: expected header starting with student_id")
            colnames = header[1:]
            student_ids, rows = [], []
            for lineno, row in enumerate(reader, start=3):
                if len(row) != len(header):
                    raise DataError(f"{path}: line {lineno}: expected {len(header)} fields")
                student_ids.append(row[0])
                try:
                    rows.append([float(v) for v in row[1:]])
                except ValueError as exc:
                    raise DataError(f"{path}: line {lineno}: {exc}")
    except FileNotFoundError:
        raise DataError(f"missing file: {path}")
    Z = np.array(rows, dtype=float) if rows else np.zeros((0, len(colnames)))
    return student_ids, Z, colnames, meta


def standardize_covariates(Z) -> np.ndarray:
    """Standardise continuous columns (ddof=1); 0/1 dummy columns pass through."""
    Z = np.asarray(Z, dtype=float).copy()
    for c in range(Z.shape[1]):
        col = Z[:, c]
        if np.isin(col, (0.0, 1.0)).all():
            continue
        sd = col.std(ddof=1)
        if sd == 0.0:
            raise DataError(f"covariate column {c} is constant and not a 0/1 dummy")
        Z[:, c] = (col - col.mean()) / sd
    return Z


# ---------------------------------------------------------------------------
# embeddings / tau JSON


EMBEDDINGS_SCHEMA = {
    "type": "object",
    "required": ["encoder", "items"],
    "properties": {
        "encoder": {
            "type": "object",
            "required": ["name", "dim"],
            "properties": {"name": {"type": "string"}, "dim": {"type": "integer"}},
        },
        "items": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["item_id", "time", "stem", "correct", "distractors"],
                "properties": {
                    "item_id": {"type": "string"},
                    "time": {"type": "integer", "minimum": 1},
                    "stem": {"type": "array", "items": {"type": "number"}, "minItems": 2},
                    "correct": {"type": "array", "items": {"type": "number"}, "minItems": 2},
                    "distractors": {
                        "type": "array",
                        "minItems": 1,
                        "items": {"type": "array", "items": {"type": "number"}, "minItems": 2},
                    },
                },
            },
        },
    },
}


def _require(condition, path, where, message):
    if not condition:
        raise DataError(f"{path}: {where}: {message}")


def load_embeddings(path):
    """Validated embeddings file -> (list of ItemEmbeddings, encoder dict)."""
    payload = read_json(path)
    _require(isinstance(payload, dict), path, "$", "top level must be an object")
    _require("encoder" in payload, path, "$.encoder", "missing required field")
    _require("items" in payload, path, "$.items", "missing required field")
    encoder = payload["encoder"]
    _require(isinstance(encoder, dict) and "name" in encoder and "dim" in encoder,
             path, "$.encoder", "must carry name and dim")
    items = payload["items"]
    _require(isinstance(items, list) and items, path, "$.items", "must be a non-empty array")
    out = []
    for i, item in enumerate(items):
        where = f"$.items[{i}]"
        _require(isinstance(item, dict), path, where, "must be an object")
        for key in ("item_id", "time", "stem", "correct", "distractors"):
            _require(key in item, path, f"{where}.{key}", "missing required field")
        _require(isinstance(item["distractors"], list) and item["distractors"],
                 path, f"{where}.distractors", "must be a non-empty array of vectors")
        try:
            out.append(ItemEmbeddings(
                stem=item["stem"], correct=item["correct"],
                distractors=item["distractors"],
                item_id=str(item["item_id"]), time_index=int(item["time"])))
        except Exception as exc:
            raise DataError(f"{path}: {where}: {exc}")
    return out, encoder


def write_tau_json(path, entries, encoder, meta) -> None:
    """entries: list of dicts with item_id, time, tau_raw, tau_std."""
    payload = {
        "meta": meta,
        "encoder": encoder,
        "items": [
            {"item_id": e["item_id"], "time": int(e["time"]),
             "tau_raw": float(e["tau_raw"]), "tau_std": float(e["tau_std"])}
            for e in entries
        ],
    }
    write_json(path, payload)


def read_tau_json(path):
    payload = read_json(path)
    _require("items" in payload and isinstance(payload["items"], list),
             path, "$.items", "missing or not an array")
    entries = []
    for i, item in enumerate(payload["items"]):
        for key in ("item_id", "time", "tau_raw", "tau_std"):
            _require(key in item, path, f"$.items[{i}].{key}", "missing required field")
        entries.append({"item_id": str(item["item_id"]), "time": int(item["time"]),
                        "tau_raw": float(item["tau_raw"]), "tau_std": float(item["tau_std"])})
    return entries, payload.get("encoder"), payload.get("meta", {})


def tau_matrix(entries, item_ids_per_time) -> np.ndarray:
    """(T, J) standardised signal matrix aligned with the response item order."""
    t_points = len(item_ids_per_time)
    j_items = len(item_ids_per_time[0])
    out = np.full((t_points, j_items), np.nan)
    lookup = {(e["time"], e["item_id"]): e["tau_std"] for e in entries}
    for t in range(t_points):
        for j, item_id in enumerate(item_ids_per_time[t]):
            key = (t + 1, item_id)
            if key not in lookup:
                raise DataError(f"tau file lacks item {item_id!r} at time {t + 1}")
            out[t, j] = lookup[key]
    return out


# ---------------------------------------------------------------------------
# draws / summaries / diagnostics / metrics


def _scalar_columns(shape, prefix, axes):
    """Column labels for a flattened array, e.g. g.t1.j01.

    axes: one (name, start_index) pair per trailing array axis; transition
    coefficient axes start at 0 because column c0 is the intercept.
    """
    widths = {"j": 2, "i": 4}
    labels = []
    for idx in np.ndindex(*shape):
        parts = [prefix]
        for (name, start), i in zip(axes, idx):
            parts.append(f"{name}{i + start:0{widths.get(name, 1)}d}")
        labels.append(".".join(parts))
    return labels


DRAW_SPECS = {
    # name -> ((axis label, start index), ...) after the (chain, iter) axes
    "q": (("t", 1), ("j", 1), ("k", 1)),
    "g": (("t", 1), ("j", 1)),
    "s": (("t", 1), ("j", 1)),
    "beta0": (("k", 1),),
    "beta_z": (("k", 1), ("c", 1)),
    "gamma01": (("k", 1), ("c", 0)),
    "gamma10": (("k", 1), ("c", 0)),
    "alpha": (("i", 1), ("k", 1), ("t", 1)),
}


def write_draws_csv(directory, mc, meta) -> list:
    """Per-parameter draws CSVs with a (chain, iter) index; returns paths."""
    os.makedirs(directory, exist_ok=True)
    written = []
    int_params = {"q", "alpha"}
    for name, axes in DRAW_SPECS.items():
        arr = mc.stacked(name)  # (chains, iters, ...)
        if name == "alpha" and arr.shape[2] == 0:
            continue
        cols = _scalar_columns(arr.shape[2:], name, axes)
        lines = [_meta_line(f"draws-{name}", meta), ",".join(["chain", "iter"] + cols)]
        flat = arr.reshape(arr.shape[0], arr.shape[1], -1)
        as_int = name in int_params
        for chain in range(arr.shape[0]):
            for it in range(arr.shape[1]):
                values = flat[chain, it]
                body = (",".join(str(int(v)) for v in values) if as_int
                        else ",".join(fmt_float(v) for v in values))
                lines.append(f"{chain + 1},{it + 1},{body}")
        path = os.path.join(directory, f"draws_{name}.csv")
        atomic_write_text(path, "\n".join(lines) + "\n")
        written.append(path)
    # theta and lambda share one file
    theta = mc.stacked("theta")
    lam = mc.stacked("lam")
    lines = [_meta_line("draws-hyper", meta), "chain,iter,theta,lam"]
    for chain in range(theta.shape[0]):
        for it in range(theta.shape[1]):
            lines.append(f"{chain + 1},{it + 1},{fmt_float(theta[chain, it])},"
                         f"{fmt_float(lam[chain, it])}")
    path = os.path.join(directory, "draws_hyper.csv")
    atomic_write_text(path, "\n".join(lines) + "\n")
    written.append(path)
    return written


def read_draws_csv(path):
    """One draws CSV -> (array (chains, iters, n_cols), column names, meta)."""
    try:
        with open(path, newline="") as handle:
            first = handle.readline().rstrip("\n")
            meta = _parse_meta_line(first, path)
            reader = csv.reader(handle)
            header = next(reader)
            if header[:2] != ["chain", "iter"]:
                raise DataError(f"{path}: expected chain,iter index columns")
            cols = header[2:]
            rows = {}
            for row in reader:
                chain, it = int(row[0]), int(row[1])
                rows[(chain, it)] = [float(v) for v in row[2:]]
    except FileNotFoundError:
        raise DataError(f"missing file: {path}")
    chains = sorted({c for c, _ in rows})
    iters = sorted({i for _, i in rows})
    arr = np.zeros((len(chains), len(iters), len(cols)))
    for (chain, it), values in rows.items():
        arr[chain - 1, it - 1] = values
    return arr, cols, meta


def summary_payload(mc, diag, summary: FitSummary, meta, extra=None) -> dict:
    payload = {
        "meta": meta,
        "pattern_freq": summary.pattern_freq,
        "pip": summary.pip,
        "alpha_mean": summary.alpha_mean,
        "posterior_mean": summary.means,
        "posterior_sd": summary.sds,
        "acceptance": diag.acceptance,
        "label_perms": mc.label_perms,
    }
    if extra:
        payload.update(extra)
    return payload


def load_summary(path) -> tuple:
    """summaries.json -> (FitSummary, meta, full payload)."""
    payload = read_json(path)
    for key in ("pattern_freq", "pip", "posterior_mean"):
        _require(key in payload, path, f"$.{key}", "missing required field")
    alpha_mean = payload.get("alpha_mean")
    summary = FitSummary(
        pattern_freq=np.asarray(payload["pattern_freq"], dtype=float),
        pip=np.asarray(payload["pip"], dtype=float),
        alpha_mean=None if alpha_mean is None else np.asarray(alpha_mean, dtype=float),
        means={k: np.asarray(v, dtype=float) for k, v in payload["posterior_mean"].items()},
        sds={k: np.asarray(v, dtype=float) for k, v in payload.get("posterior_sd", {}).items()},
    )
    return summary, payload.get("meta", {}), payload


def diagnostics_payload(diag, meta) -> dict:
    return {
        "meta": meta,
        "rhat": diag.rhat,
        "ess": diag.ess,
        "max_rhat": None if np.isnan(diag.max_rhat) else diag.max_rhat,
        "min_ess": None if np.isnan(diag.min_ess) else diag.min_ess,
        "acceptance": diag.acceptance,
        "skipped": diag.skipped,
    }


def write_metrics(path_json, path_csv, report, meta) -> None:
    flat = report.flat()
    write_json(path_json, {"meta": meta, "metrics": flat, "notes": report.notes})
    if path_csv:
        keys = sorted(flat)
        header = ["condition", "replication", "model"] + keys
        row = [str(meta.get("condition", "-")), str(meta.get("replication", "-")),
               str(meta.get("model", "-"))]
        row += ["" if flat[k] is None else fmt_float(flat[k]) for k in keys]
        lines = [_meta_line("metrics", meta), ",".join(header), ",".join(row)]
        atomic_write_text(path_csv, "\n".join(lines) + "\n")


def write_dataset_bundle(out_dir, Y, Z, tau_raw, tau_std, truth, meta) -> None:
    """responses.csv + covariates.csv + tau.json + truth.json for one dataset."""
    Y = np.asarray(Y)
    n, j_items, t_points = Y.shape
    student_ids = [f"s{i + 1:04d}" for i in range(n)]
    item_ids = [f"item{j + 1:02d}" for j in range(j_items)]
    records = [(student_ids[i], t + 1, item_ids[j], int(Y[i, j, t]))
               for i in range(n) for t in range(t_points) for j in range(j_items)]
    write_responses_csv(os.path.join(out_dir, "responses.csv"), records, meta)
    write_covariates_csv(os.path.join(out_dir, "covariates.csv"), student_ids, Z, meta)
    entries = [{"item_id": item_ids[j], "time": t + 1,
                "tau_raw": float(np.asarray(tau_raw)[t, j]),
                "tau_std": float(np.asarray(tau_std)[t, j])}
               for t in range(t_points) for j in range(j_items)]
    write_tau_json(os.path.join(out_dir, "tau.json"), entries, None, meta)
    truth_payload = {"meta": meta}
    truth_payload.update(_jsonable(truth))
    write_json(os.path.join(out_dir, "truth.json"), truth_payload)


def load_truth(path) -> dict:
    payload = read_json(path)
    for key in ("q", "g", "s", "beta0", "beta_z", "gamma01", "gamma10"):
        _require(key in payload, path, f"$.{key}", "missing required field")
    out = {k: np.asarray(payload[k]) for k in
           ("q", "g", "s", "beta0", "beta_z", "gamma01", "gamma10")}
    out["q"] = out["q"].astype(np.int8)
    if payload.get("alpha") is not None:
        out["alpha"] = np.asarray(payload["alpha"], dtype=np.int8)
    out["meta"] = payload.get("meta", {})
    return out
