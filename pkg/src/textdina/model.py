"""Measurement model, structural model, and Q-matrix admissibility.

The measurement side is a noisy-AND (DINA) link: a learner answers item j
correctly with probability 1-s_j when they master every attribute the item
requires, and with probability g_j otherwise. The structural side puts a
logistic regression on initial mastery and first-order Markov logistic
transitions (gain / loss) on mastery between adjacent time points.

Everything here is a pure function of its arguments; arrays are never
mutated.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, DataError, DimensionError, DomainError

LOGIT_CLAMP = 35.0  # |logit| beyond this saturates the sigmoid to < 1e-15


def sigmoid(x):
    """Overflow-safe logistic function; output strictly inside (0, 1)."""
    x = np.clip(np.asarray(x, dtype=float), -LOGIT_CLAMP, LOGIT_CLAMP)
    return 1.0 / (1.0 + np.exp(-x))


def logit(p):
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise DomainError("logit requires values strictly inside (0, 1)")
    return np.log(p / (1.0 - p))


def ideal_response(alpha_row, q_row) -> int:
    """Noise-free response: 1 iff alpha covers every attribute q requires.

    An all-zero requirement row yields 1 (empty product).
    """
    alpha_row = np.asarray(alpha_row)
    q_row = np.asarray(q_row)
    if alpha_row.shape != q_row.shape:
        raise DimensionError(
            f"alpha row shape {alpha_row.shape} != q row shape {q_row.shape}"
        )
    return int(np.all(alpha_row >= q_row))


def ideal_responses(alpha, q):
    """Vectorized ideal responses: alpha (N,K) x q (J,K) -> (N,J) of {0,1}."""
    alpha = np.asarray(alpha)
    q = np.asarray(q)
    if alpha.ndim != 2 or q.ndim != 2 or alpha.shape[1] != q.shape[1]:
        raise DimensionError(
            f"incompatible shapes alpha {alpha.shape}, q {q.shape}"
        )
    return (alpha[:, None, :] >= q[None, :, :]).all(axis=2).astype(np.int8)


def response_prob(eta, g, s):
    """P(correct | ideal response eta) = (1-s)^eta * g^(1-eta)."""
    g = np.asarray(g, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(g <= 0) or np.any(g >= 1) or np.any(s <= 0) or np.any(s >= 1):
        raise DomainError("guessing and slipping must lie strictly in (0, 1)")
    return np.where(np.asarray(eta) == 1, 1.0 - s, g)


def log_likelihood(Y, q, g, s, alpha) -> float:
    """Bernoulli log-likelihood of responses Y (N,J,T).

    q is (T,J,K), g and s are (T,J), alpha is (N,K,T). Sums the per-cell
    log P(Y_ijt | eta_ijt, g_jt, s_jt) over all cells.
    """
    Y = np.asarray(Y)
    q = np.asarray(q)
    g = np.asarray(g, dtype=float)
    s = np.asarray(s, dtype=float)
    alpha = np.asarray(alpha)
    if Y.ndim != 3 or alpha.ndim != 3 or q.ndim != 3:
        raise DimensionError("Y must be (N,J,T), q (T,J,K), alpha (N,K,T)")
    n, j_items, t_points = Y.shape
    if q.shape[0] != t_points or q.shape[1] != j_items or g.shape != (t_points, j_items) \
            or s.shape != (t_points, j_items) or alpha.shape != (n, q.shape[2], t_points):
        raise DimensionError(
            f"inconsistent dimensions: Y {Y.shape}, q {q.shape}, g {g.shape}, alpha {alpha.shape}"
        )
    total = 0.0
    for t in range(t_points):
        eta = ideal_responses(alpha[:, :, t], q[t])
        p = response_prob(eta, g[t][None, :], s[t][None, :])
        y = Y[:, :, t]
        total += float(np.sum(y * np.log(p) + (1 - y) * np.log1p(-p)))
    return total


def initial_mastery_prob(beta0_k, beta_z_k, z):
    """P(mastery at t=1) = sigmoid(beta0_k + beta_z_k . z); z may be (C,) or (N,C)."""
    beta_z_k = np.atleast_1d(np.asarray(beta_z_k, dtype=float))
    z = np.asarray(z, dtype=float)
    return sigmoid(float(beta0_k) + z @ beta_z_k)


def transition_prob(direction, gamma_k, z):
    """Markov transition probability between adjacent time points.

    direction "gain": P(alpha_t = 1 | alpha_{t-1} = 0);
    direction "loss": P(alpha_t = 0 | alpha_{t-1} = 1).
    gamma_k stacks the intercept first, then one coefficient per covariate.
    """
    if direction not in ("gain", "loss"):
        raise DomainError(f"direction must be 'gain' or 'loss', got {direction!r}")
    gamma_k = np.asarray(gamma_k, dtype=float)
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if z.ndim == 1:
        x = np.concatenate(([1.0], z))
        return sigmoid(x @ gamma_k)
    ones = np.ones((z.shape[0], 1))
    return sigmoid(np.hstack([ones, z]) @ gamma_k)


def enumerate_candidate_rows(K: int):
    """All 2^K - 1 nonzero binary K-vectors in ascending binary order.

    The first entry of a row is the most significant bit, so for K=2 the
    order is (0,1), (1,0), (1,1).
    """
    if not 1 <= K <= 10:
        raise CapacityError(f"candidate-row enumeration supports 1 <= K <= 10, got {K}")
    rows = np.zeros((2**K - 1, K), dtype=np.int8)
    for value in range(1, 2**K):
        for k in range(K):
            rows[value - 1, k] = (value >> (K - 1 - k)) & 1
    return rows


def row_pattern_index(row) -> int:
    """Binary value of a row (first entry most significant); 0-based index is value-1."""
    row = np.asarray(row).astype(int)
    value = 0
    for bit in row:
        value = (value << 1) | int(bit)
    return value


# Named admissibility condition sets for the Q-matrix. "strict" is the
# full set ensuring DINA identifiability: two disjoint identity submatrices,
# column sums >= 3, distinct residual columns, no zero rows. "relaxed" keeps
# the operational core (no zero rows, one pure item per attribute, each
# attribute appearing at least twice); it exists for instances too small to
# admit any strictly identifiable matrix, e.g. validation fixtures.
STRICT = "strict"
RELAXED = "relaxed"


def check_identifiable(q, constraints: str = STRICT):
    """Check Q-matrix admissibility; returns (ok, list of violated conditions).

    q is (J,K) binary. Under the strict condition set, ok is True iff
      (a) every attribute has at least two pure rows (so the rows contain
          two disjoint identity submatrices up to permutation),
      (b) every column sums to at least 3,
      (c) removing one such pair of identity submatrices leaves a submatrix
          whose K columns are pairwise distinct,
      (d) no row is all zero.
    """
    q = np.asarray(q)
    if q.ndim != 2:
        raise DimensionError(f"Q must be a 2-d binary matrix, got shape {q.shape}")
    j_items, k_attrs = q.shape
    violations = []

    row_sums = q.sum(axis=1)
    col_sums = q.sum(axis=0)
    if np.any(row_sums == 0):
        violations.append("zero-row")
    pure_counts = np.zeros(k_attrs, dtype=int)
    for k in range(k_attrs):
        pure_counts[k] = int(np.sum((q[:, k] == 1) & (row_sums == 1)))

    if constraints == RELAXED:
        if np.any(pure_counts < 1):
            violations.append("missing-pure-item")
        if np.any(col_sums < 2):
            violations.append("column-sum-below-2")
        return (len(violations) == 0, violations)
    if constraints != STRICT:
        raise DomainError(f"unknown constraint set {constraints!r}")

    if np.any(pure_counts < 2):
        violations.append("fewer-than-two-identity-submatrices")
    else:
        # Condition (c): which two copies of each pure row are removed does
        # not matter, the remaining row multiset is the same either way.
        nonpure = q[row_sums != 1]
        if not _residual_columns_distinct(nonpure, pure_counts - 2, k_attrs):
            violations.append("residual-columns-not-distinct")
    if np.any(col_sums < 3):
        violations.append("column-sum-below-3")

    return (len(violations) == 0, violations)


def _residual_columns_distinct(nonpure, remaining_pure, k_attrs) -> bool:
    """True iff columns of (nonpure rows + leftover pure rows) are pairwise distinct."""
    for k1 in range(k_attrs):
        for k2 in range(k1 + 1, k_attrs):
            # a leftover pure row for k1 or k2 separates the pair immediately
            if remaining_pure[k1] > 0 or remaining_pure[k2] > 0:
                continue
            if nonpure.shape[0] == 0 or not np.any(nonpure[:, k1] != nonpure[:, k2]):
                return False
    return True


def _binary_array(a, name):
    a = np.asarray(a)
    if not np.isin(a, (0, 1)).all():
        raise DomainError(f"{name} entries must all be 0 or 1")
    return a.astype(np.int8)


@dataclass
class QMatrix:
    """J x K binary item-attribute incidence at one time point."""

    entries: np.ndarray
    time_index: int = 1

    def __post_init__(self):
        self.entries = _binary_array(self.entries, "Q")
        if self.entries.ndim != 2 or min(self.entries.shape) < 1:
            raise DimensionError(f"Q must be J x K with J,K >= 1, got {self.entries.shape}")


@dataclass
class AttributeState:
    """Per-learner binary mastery indicators, shape (N, K, T)."""

    alpha: np.ndarray

    def __post_init__(self):
        self.alpha = _binary_array(self.alpha, "alpha")
        if self.alpha.ndim != 3:
            raise DimensionError(f"alpha must be (N, K, T), got shape {self.alpha.shape}")


@dataclass
class ItemParams:
    """Guessing and slipping probabilities for the items at one time point."""

    g: np.ndarray
    s: np.ndarray
    time_index: int = 1

    def __post_init__(self):
        self.g = np.asarray(self.g, dtype=float)
        self.s = np.asarray(self.s, dtype=float)
        if self.g.shape != self.s.shape or self.g.ndim != 1:
            raise DimensionError("g and s must be equal-length vectors")
        if np.any(self.g <= 0) or np.any(self.g >= 1) or np.any(self.s <= 0) or np.any(self.s >= 1):
            raise DomainError("g and s must lie strictly in (0, 1)")


@dataclass
class StructuralParams:
    """Logistic coefficients: initial mastery plus gain/loss transitions.

    beta0 is (K,), beta_z is (K, C); gamma01 / gamma10 are (K, C+1) with the
    intercept in the first column. All on the log-odds scale.
    """

    beta0: np.ndarray
    beta_z: np.ndarray
    gamma01: np.ndarray
    gamma10: np.ndarray

    def __post_init__(self):
        self.beta0 = np.asarray(self.beta0, dtype=float)
        self.beta_z = np.asarray(self.beta_z, dtype=float)
        self.gamma01 = np.asarray(self.gamma01, dtype=float)
        self.gamma10 = np.asarray(self.gamma10, dtype=float)
        k = self.beta0.shape[0]
        if self.beta_z.shape[0] != k or self.gamma01.shape[0] != k or self.gamma10.shape[0] != k:
            raise DimensionError("structural parameter blocks disagree on K")
        if self.gamma01.shape != self.gamma10.shape or self.gamma01.shape[1] != self.beta_z.shape[1] + 1:
            raise DimensionError("gamma blocks must be (K, C+1) matching beta_z (K, C)")
        for arr in (self.beta0, self.beta_z, self.gamma01, self.gamma10):
            if not np.all(np.isfinite(arr)):
                raise DomainError("structural parameters must be finite")

    @property
    def n_attributes(self) -> int:
        return self.beta0.shape[0]

    @property
    def n_covariates(self) -> int:
        return self.beta_z.shape[1]


@dataclass
class Dataset:
    """Complete binary response array plus standardised covariates.

    Y is (N, J, T) with no missing cells (incomplete records are rejected at
    ingestion), Z is (N, C) with continuous columns standardised to sample
    mean 0 and variance 1; item_ids lists the J item labels per time point.
    """

    Y: np.ndarray
    Z: np.ndarray
    item_ids: list = field(default_factory=list)
    student_ids: list = field(default_factory=list)

    def __post_init__(self):
        self.Y = _binary_array(self.Y, "Y")
        if self.Y.ndim != 3:
            raise DimensionError(f"Y must be (N, J, T), got shape {self.Y.shape}")
        self.Z = np.asarray(self.Z, dtype=float)
        if self.Z.ndim != 2 or self.Z.shape[0] != self.Y.shape[0]:
            raise DimensionError("Z must be (N, C) aligned with Y")
        for c in range(self.Z.shape[1]):
            col = self.Z[:, c]
            if np.isin(col, (0.0, 1.0)).all():
                continue  # dummy column, left as is
            if abs(col.mean()) > 1e-6 or abs(col.var(ddof=1) - 1.0) > 1e-6:
                raise DataError(
                    f"continuous covariate column {c} is not standardised "
                    f"(mean {col.mean():.3g}, var {col.var(ddof=1):.3g})"
                )

    @property
    def n_learners(self) -> int:
        return self.Y.shape[0]

    @property
    def n_items(self) -> int:
        return self.Y.shape[1]

    @property
    def n_times(self) -> int:
        return self.Y.shape[2]
