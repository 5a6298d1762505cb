"""Recovery scoring: Q-matrix agreement, classification rates, parameter error.

Attribute labels are exchangeable, so estimates are aligned to the truth by
the column permutation that maximises Q-matrix entry agreement before any
scoring; the same permutation is applied to mastery states and to every
attribute-indexed parameter.

Scoring runs off a FitSummary (row-pattern posterior frequencies, posterior
inclusion probabilities, posterior means), which is computable either from
in-memory draws or from a persisted summaries file.
"""

from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

from . import rng as rngmod
from .errors import CapacityError, DimensionError
from .model import enumerate_candidate_rows


@dataclass
class MetricsReport:
    """Per-time recovery rates and per-family parameter errors for one fit."""

    acc: list = field(default_factory=list)
    fpr: list = field(default_factory=list)
    fnr: list = field(default_factory=list)
    pip_true_mean: list = field(default_factory=list)
    pip_false_mean: list = field(default_factory=list)
    par: list = field(default_factory=list)
    aar: list = field(default_factory=list)  # [t][k]
    rmse: dict = field(default_factory=dict)
    mae: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    def flat(self) -> dict:
        """Flatten to scalar metric name -> value (None kept for undefined rates)."""
        out = {}
        for t, value in enumerate(self.acc):
            out[f"acc.t{t + 1}"] = value
        for t, value in enumerate(self.fpr):
            out[f"fpr.t{t + 1}"] = value
        for t, value in enumerate(self.fnr):
            out[f"fnr.t{t + 1}"] = value
        for t, value in enumerate(self.pip_true_mean):
            out[f"pip_true.t{t + 1}"] = value
        for t, value in enumerate(self.pip_false_mean):
            out[f"pip_false.t{t + 1}"] = value
        for t, value in enumerate(self.par):
            out[f"par.t{t + 1}"] = value
        for t, row in enumerate(self.aar):
            for k, value in enumerate(row):
                out[f"aar.k{k + 1}.t{t + 1}"] = value
        for family, value in self.rmse.items():
            out[f"rmse.{family}"] = value
        for family, value in self.mae.items():
            out[f"mae.{family}"] = value
        return out


PARAM_FAMILIES = ("g", "s", "beta0", "beta_z", "gamma01", "gamma10")


@dataclass
class FitSummary:
    """Posterior quantities sufficient for recovery scoring.

    pattern_freq is (T, J, 2^K): posterior frequency of each row pattern,
    indexed by the binary value of the row (first attribute = most
    significant bit); pip is (T, J, K); alpha_mean is (N, K, T) or None;
    means/sds map parameter family -> posterior moment arrays.
    """

    pattern_freq: np.ndarray
    pip: np.ndarray
    alpha_mean: np.ndarray
    means: dict
    sds: dict = field(default_factory=dict)


def summarize(draws) -> FitSummary:
    """FitSummary from pooled draws (anything exposing pooled(name))."""
    q_draws = draws.pooled("q")
    freq = pattern_frequencies(q_draws)
    alpha_draws = draws.pooled("alpha")
    alpha_mean = alpha_draws.mean(axis=0) if alpha_draws.shape[1] else None
    means, sds = {}, {}
    for family in PARAM_FAMILIES:
        arr = draws.pooled(family)
        means[family] = arr.mean(axis=0)
        sds[family] = arr.std(axis=0, ddof=1) if arr.shape[0] > 1 else np.zeros(arr.shape[1:])
    return FitSummary(pattern_freq=freq, pip=q_draws.mean(axis=0),
                      alpha_mean=alpha_mean, means=means, sds=sds)


def map_q_from_freq(pattern_freq) -> np.ndarray:
    """Row-wise MAP Q from pattern frequencies.

    Per item the most frequent pattern wins; ties break toward the sparser
    pattern, then the lower binary index.
    """
    pattern_freq = np.asarray(pattern_freq)
    t_points, j_items, n_patterns = pattern_freq.shape
    k_attrs = int(np.log2(n_patterns))
    patterns = enumerate_candidate_rows(k_attrs)
    est = np.zeros((t_points, j_items, k_attrs), dtype=np.int8)
    for t in range(t_points):
        for j in range(j_items):
            freq = pattern_freq[t, j]
            order = sorted(range(n_patterns),
                           key=lambda v: (-freq[v], bin(v).count("1"), v))
            best = order[0]
            est[t, j] = patterns[best - 1] if best > 0 else 0
    return est


def pattern_frequencies(q_draws) -> np.ndarray:
    """Posterior row-pattern frequencies (T, J, 2^K) from draws (n, T, J, K)."""
    q_draws = np.asarray(q_draws)
    if q_draws.ndim != 4 or q_draws.shape[0] < 1:
        raise DimensionError("q draws must be (n_draws, T, J, K) with n_draws >= 1")
    n_draws, t_points, j_items, k_attrs = q_draws.shape
    weights = 1 << np.arange(k_attrs - 1, -1, -1)
    idx = q_draws @ weights
    freq = np.zeros((t_points, j_items, 2**k_attrs))
    for t in range(t_points):
        for j in range(j_items):
            freq[t, j] = np.bincount(idx[:, t, j], minlength=2**k_attrs) / n_draws
    return freq


def map_q(q_draws) -> np.ndarray:
    """Row-wise MAP point estimate of the Q-matrix from retained draws."""
    return map_q_from_freq(pattern_frequencies(q_draws))


def align_attributes(est_q, true_q, est_alpha=None, true_alpha=None) -> tuple:
    """Attribute permutation maximising est/true Q-matrix entry agreement.

    Exhaustive over K! permutations (K <= 6). Ties break toward higher
    mastery-state agreement when alphas are given, then the first
    permutation in lexicographic order.
    """
    est_q = np.asarray(est_q)
    true_q = np.asarray(true_q)
    if est_q.shape != true_q.shape:
        raise DimensionError("estimated and true Q stacks must share a shape")
    k_attrs = est_q.shape[-1]
    if k_attrs > 6:
        raise CapacityError("attribute alignment is exhaustive and capped at K <= 6")
    best, best_score = None, (-1.0, -1.0)
    for perm in permutations(range(k_attrs)):
        q_score = float((est_q[..., list(perm)] == true_q).sum())
        a_score = 0.0
        if est_alpha is not None and true_alpha is not None:
            a_score = float(
                (np.asarray(est_alpha)[:, list(perm), :] == np.asarray(true_alpha)).sum())
        if (q_score, a_score) > best_score:
            best, best_score = perm, (q_score, a_score)
    return best


def permute_pattern_axis(pattern_freq, perm) -> np.ndarray:
    """Reindex the pattern axis under an attribute-column permutation."""
    pattern_freq = np.asarray(pattern_freq)
    n_patterns = pattern_freq.shape[-1]
    k_attrs = int(np.log2(n_patterns))
    mapping = np.zeros(n_patterns, dtype=int)
    for value in range(n_patterns):
        bits = [(value >> (k_attrs - 1 - k)) & 1 for k in range(k_attrs)]
        permuted = [bits[perm[k]] for k in range(k_attrs)]
        new_value = 0
        for bit in permuted:
            new_value = (new_value << 1) | bit
        mapping[new_value] = value
    return pattern_freq[..., mapping]


def q_recovery(est_q, true_q):
    """Per-time (acc, fpr, fnr) of an aligned point-estimate Q against truth.

    fpr is None at a time point whose true matrix has no 0 entries (and fnr
    None with no 1 entries); callers surface the reason in their notes.
    """
    est_q = np.asarray(est_q)
    true_q = np.asarray(true_q)
    if est_q.shape != true_q.shape:
        raise DimensionError("Q shapes differ")
    acc, fpr, fnr = [], [], []
    for t in range(true_q.shape[0]):
        est, tru = est_q[t], true_q[t]
        acc.append(float((est == tru).mean()))
        zeros = tru == 0
        ones = tru == 1
        fpr.append(float((est[zeros] == 1).mean()) if zeros.any() else None)
        fnr.append(float((est[ones] == 0).mean()) if ones.any() else None)
    return acc, fpr, fnr


def pip_summary_from_pip(pip, true_q):
    """Mean posterior inclusion probability over true-1 / true-0 entries, per time."""
    pip = np.asarray(pip, dtype=float)
    true_q = np.asarray(true_q)
    pip_true, pip_false = [], []
    for t in range(true_q.shape[0]):
        ones = true_q[t] == 1
        zeros = true_q[t] == 0
        pip_true.append(float(pip[t][ones].mean()) if ones.any() else None)
        pip_false.append(float(pip[t][zeros].mean()) if zeros.any() else None)
    return pip_true, pip_false


def pip_summary(q_draws, true_q):
    """PIP summaries straight from draws (PIP = posterior mean of each entry)."""
    return pip_summary_from_pip(np.asarray(q_draws, dtype=float).mean(axis=0), true_q)


def alpha_point(alpha_draws) -> np.ndarray:
    """Per-entry posterior mode of mastery states (ties at 0.5 go to 0)."""
    return (np.asarray(alpha_draws, dtype=float).mean(axis=0) > 0.5).astype(np.int8)


def par(est_alpha, true_alpha):
    """Profile agreement rate per time: full K-vector matches."""
    est_alpha = np.asarray(est_alpha)
    true_alpha = np.asarray(true_alpha)
    if est_alpha.shape != true_alpha.shape:
        raise DimensionError("alpha shapes differ")
    return [float((est_alpha[:, :, t] == true_alpha[:, :, t]).all(axis=1).mean())
            for t in range(true_alpha.shape[2])]


def aar(est_alpha, true_alpha):
    """Attribute agreement rate per (time, attribute)."""
    est_alpha = np.asarray(est_alpha)
    true_alpha = np.asarray(true_alpha)
    if est_alpha.shape != true_alpha.shape:
        raise DimensionError("alpha shapes differ")
    return [[float((est_alpha[:, k, t] == true_alpha[:, k, t]).mean())
             for k in range(true_alpha.shape[1])]
            for t in range(true_alpha.shape[2])]


def param_error(est, true):
    """(rmse, mae) of a posterior-mean estimate against the truth."""
    diff = np.asarray(est, dtype=float).ravel() - np.asarray(true, dtype=float).ravel()
    if diff.size == 0:
        return 0.0, 0.0
    return float(np.sqrt(np.mean(diff**2))), float(np.mean(np.abs(diff)))


def bootstrap_se(values, n_boot: int = 1000, seed: int = 0) -> float:
    """Replication-level bootstrap standard error of the mean metric."""
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        raise DimensionError("bootstrap needs at least 2 replication values")
    rng = rngmod.substream(seed)
    idx = rng.integers(0, values.size, size=(n_boot, values.size))
    return float(values[idx].mean(axis=1).std(ddof=1))


def score_summary(summary: FitSummary, truth) -> MetricsReport:
    """Recovery report for one fitted model against simulation truth.

    truth carries q (T,J,K), g, s (T,J), beta0, beta_z, gamma01, gamma10,
    and optionally alpha (N,K,T).
    """
    est_q = map_q_from_freq(summary.pattern_freq)
    est_alpha = None
    if summary.alpha_mean is not None:
        est_alpha = (np.asarray(summary.alpha_mean) > 0.5).astype(np.int8)
    true_alpha = getattr(truth, "alpha", None)

    perm = align_attributes(est_q, truth.q, est_alpha, true_alpha)
    cols = list(perm)
    est_q = est_q[:, :, cols]
    pip = np.asarray(summary.pip)[:, :, cols]

    report = MetricsReport()
    report.acc, report.fpr, report.fnr = q_recovery(est_q, truth.q)
    report.pip_true_mean, report.pip_false_mean = pip_summary_from_pip(pip, truth.q)
    for t, value in enumerate(report.fpr):
        if value is None:
            report.notes[f"fpr.t{t + 1}"] = "undefined: true Q has no 0 entries"
    for t, value in enumerate(report.fnr):
        if value is None:
            report.notes[f"fnr.t{t + 1}"] = "undefined: true Q has no 1 entries"

    if est_alpha is not None and true_alpha is not None:
        est_alpha = est_alpha[:, cols, :]
        report.par = par(est_alpha, true_alpha)
        report.aar = aar(est_alpha, true_alpha)

    means = dict(summary.means)
    for family in ("beta0", "beta_z", "gamma01", "gamma10"):
        means[family] = np.asarray(means[family])[cols]
    for family in PARAM_FAMILIES:
        rmse, mae = param_error(means[family], getattr(truth, family))
        report.rmse[family] = rmse
        report.mae[family] = mae
    return report


def score_fit(draws, truth) -> MetricsReport:
    """Recovery report straight from pooled draws."""
    return score_summary(summarize(draws), truth)
