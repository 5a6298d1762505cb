"""Posterior sampling for the dynamic DINA model with the text-informed Q prior.

One sweep updates, in fixed order: mastery states alpha (exact Gibbs,
vectorised over learners), Q-matrix rows (exact Gibbs over the admissible
candidate patterns), guessing/slipping (conjugate Beta), regression and
transition coefficients (random-walk Metropolis per attribute block), and
the hyperparameters (theta, lambda) (joint random-walk Metropolis on the
logit/identity scale). Step sizes adapt toward 0.35 acceptance during
burn-in only, so the kept portion of each chain is a valid Markov chain.

All randomness comes from named per-chain Philox substreams (see rng.py),
making draws a pure function of (seed, config, data).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .diagnostics import ess as ess_fn
from .diagnostics import rhat as rhat_fn
from .errors import ConfigError, ConstraintDeadlockError, DiagnosticsError, DimensionError
from .model import (
    STRICT,
    check_identifiable,
    enumerate_candidate_rows,
    logit,
    sigmoid,
)
from .priors import (
    PriorConfig,
    log_prior_q,
    log_prior_theta,
    q_inclusion_prob,
)

ACCEPT_TARGET = 0.35

COEFF_BLOCKS = ("beta", "gamma01", "gamma10")


@dataclass
class FitData:
    """Responses, covariates, and the per-time standardised text signal."""

    Y: np.ndarray  # (N, J, T) binary
    Z: np.ndarray  # (N, C); continuous columns standardised, dummies 0/1
    n_attributes: int
    tau_std: np.ndarray = None  # (T, J); None means no text signal (all zero)

    def __post_init__(self):
        self.Y = np.asarray(self.Y, dtype=np.int8)
        self.Z = np.asarray(self.Z, dtype=float)
        if self.Y.ndim != 3:
            raise DimensionError(f"Y must be (N, J, T), got {self.Y.shape}")
        if self.Z.ndim != 2 or self.Z.shape[0] != self.Y.shape[0]:
            raise DimensionError("Z must be (N, C) aligned with Y")
        n, j, t = self.Y.shape
        if self.tau_std is None:
            self.tau_std = np.zeros((t, j))
        self.tau_std = np.asarray(self.tau_std, dtype=float)
        if self.tau_std.shape != (t, j):
            raise DimensionError(
                f"tau_std must be (T, J) = {(t, j)}, got {self.tau_std.shape}"
            )
        if self.n_attributes < 1:
            raise ConfigError("n_attributes must be >= 1")

    @property
    def shape(self):
        return self.Y.shape


@dataclass
class SamplerConfig:
    """MCMC run settings; defaults follow the simulation protocol."""

    n_chains: int = 3
    n_burnin: int = 3000
    n_keep: int = 3000
    thin: int = 1
    rw_step_coeffs: float = 0.15
    rw_step_hyper: float = 0.25
    adapt_window: int = 50
    seed: int = 0
    constraints: str = STRICT
    # block toggles / fixed values, used by validation and oracle runs
    sample_alpha: bool = True
    sample_q: bool = True
    sample_item_params: bool = True
    sample_coeffs: bool = True
    sample_hyper: bool = True
    fix_item_params: tuple = None  # (g, s) arrays of shape (T, J)
    fix_coeffs: object = None  # StructuralParams
    fix_hyper: tuple = None  # (theta, lam)
    save_alpha: bool = True

    def __post_init__(self):
        if self.n_chains < 1 or self.n_burnin < 1 or self.n_keep < 1 or self.thin < 1:
            raise ConfigError("n_chains, n_burnin, n_keep, thin must all be >= 1")
        if self.rw_step_coeffs <= 0 or self.rw_step_hyper <= 0 or self.adapt_window < 1:
            raise ConfigError("proposal steps must be positive, adapt_window >= 1")
        if self.fix_item_params is not None:
            self.sample_item_params = False
        if self.fix_coeffs is not None:
            self.sample_coeffs = False
        if self.fix_hyper is not None:
            self.sample_hyper = False


@dataclass
class ChainState:
    """Full parameter state of one chain."""

    q: np.ndarray  # (T, J, K) int8
    g: np.ndarray  # (T, J)
    s: np.ndarray  # (T, J)
    beta0: np.ndarray  # (K,)
    beta_z: np.ndarray  # (K, C)
    gamma01: np.ndarray  # (K, C+1)
    gamma10: np.ndarray  # (K, C+1)
    alpha: np.ndarray  # (N, K, T) int8
    theta: float
    lam: float
    iteration: int = 0
    constraints: str = STRICT


@dataclass
class Draws:
    """Retained thinned draws of one chain (leading axis = kept iteration)."""

    q: np.ndarray
    g: np.ndarray
    s: np.ndarray
    beta0: np.ndarray
    beta_z: np.ndarray
    gamma01: np.ndarray
    gamma10: np.ndarray
    alpha: np.ndarray
    theta: np.ndarray
    lam: np.ndarray


PARAM_NAMES = ("q", "g", "s", "beta0", "beta_z", "gamma01", "gamma10", "alpha", "theta", "lam")


@dataclass
class MultiChainDraws:
    """Draws from all chains, label-aligned to the first chain."""

    chains: list
    acceptance: list  # one {block: rate} dict per chain
    label_perms: list  # column permutation applied to each chain
    seed: int

    def stacked(self, name: str) -> np.ndarray:
        return np.stack([getattr(c, name) for c in self.chains])

    def pooled(self, name: str) -> np.ndarray:
        arr = self.stacked(name)
        return arr.reshape((-1,) + arr.shape[2:])

    @property
    def n_chains(self) -> int:
        return len(self.chains)


@dataclass
class Diagnostics:
    """Split R-hat / bulk ESS per monitored scalar plus MH acceptance rates."""

    rhat: dict = field(default_factory=dict)
    ess: dict = field(default_factory=dict)
    acceptance: dict = field(default_factory=dict)
    skipped: dict = field(default_factory=dict)

    @property
    def max_rhat(self) -> float:
        return max(self.rhat.values()) if self.rhat else float("nan")

    @property
    def min_ess(self) -> float:
        return min(self.ess.values()) if self.ess else float("nan")


# ---------------------------------------------------------------------------
# block updates


def _gain_logit(state, data, k):
    return state.gamma01[k, 0] + data.Z @ state.gamma01[k, 1:]


def _loss_logit(state, data, k):
    return state.gamma10[k, 0] + data.Z @ state.gamma10[k, 1:]


def update_alpha_block(state: ChainState, data: FitData, k: int, t: int, rng) -> None:
    """Exact Gibbs draw of alpha[:, k, t] for every learner jointly.

    Learners are conditionally independent given the parameters, so the
    block update samples each learner's exact full conditional: measurement
    terms from the time-t items requiring attribute k, the initial-mastery
    or incoming-transition term, and the outgoing-transition term when a
    later time point exists.
    """
    n, _, t_points = data.Y.shape
    odds = np.zeros(n)

    need = np.flatnonzero(state.q[t, :, k] == 1)
    if need.size:
        qk = state.q[t, need]
        ge = state.alpha[:, None, :, t] >= qk[None, :, :]
        ge[:, :, k] = True
        covered = ge.all(axis=2)  # eta if alpha_k were 1; eta is 0 if alpha_k were 0
        y = data.Y[:, need, t]
        g = state.g[t, need]
        s = state.s[t, need]
        w_correct = np.log((1.0 - s) / g)
        w_incorrect = np.log(s / (1.0 - g))
        odds += (covered * np.where(y == 1, w_correct, w_incorrect)).sum(axis=1)

    if t == 0:
        odds += state.beta0[k] + data.Z @ state.beta_z[k]
    else:
        prev = state.alpha[:, k, t - 1]
        odds += np.where(prev == 1, -_loss_logit(state, data, k), _gain_logit(state, data, k))

    if t < t_points - 1:
        nxt = state.alpha[:, k, t + 1]
        p_gain = sigmoid(_gain_logit(state, data, k))
        p_loss = sigmoid(_loss_logit(state, data, k))
        stay = np.where(nxt == 1, np.log1p(-p_loss), np.log(p_loss))
        move = np.where(nxt == 1, np.log(p_gain), np.log1p(-p_gain))
        odds += stay - move

    state.alpha[:, k, t] = (rng.random(n) < sigmoid(odds)).astype(np.int8)


def _row_log_weights(state, data, prior, patterns, j, t):
    """Log prior + log likelihood of each candidate row pattern for item (j, t)."""
    k_attrs = patterns.shape[1]
    pi = q_inclusion_prob(state.theta, state.lam, data.tau_std[t, j])
    ones = patterns.sum(axis=1)
    logw = ones * math.log(pi) + (k_attrs - ones) * math.log1p(-pi)

    eta = (state.alpha[:, None, :, t] >= patterns[None, :, :]).all(axis=2)  # (N, M)
    y = data.Y[:, j, t][:, None]
    g = state.g[t, j]
    s = state.s[t, j]
    cell = np.where(
        y == 1,
        np.where(eta, math.log(1.0 - s), math.log(g)),
        np.where(eta, math.log(s), math.log1p(-g)),
    )
    return logw + cell.sum(axis=0)


def _feasible_mask_k2(q_t, j, patterns, constraints):
    """Vectorised admissibility of candidate patterns for row j when K = 2.

    With two attributes the conditions collapse to counting pure rows and
    column sums: strict needs >= 2 pure rows per attribute, column sums
    >= 3, and a leftover pure row after removing the two identity pairs
    (n1 + n2 >= 5); relaxed needs >= 1 pure row per attribute and column
    sums >= 2.
    """
    rows = q_t
    others = np.ones(rows.shape[0], dtype=bool)
    others[j] = False
    sub = rows[others]
    n1 = int(np.sum((sub[:, 0] == 1) & (sub[:, 1] == 0)))
    n2 = int(np.sum((sub[:, 0] == 0) & (sub[:, 1] == 1)))
    col = sub.sum(axis=0)
    p1 = (patterns[:, 0] == 1) & (patterns[:, 1] == 0)
    p2 = (patterns[:, 0] == 0) & (patterns[:, 1] == 1)
    c1 = col[0] + patterns[:, 0]
    c2 = col[1] + patterns[:, 1]
    m1 = n1 + p1.astype(int)
    m2 = n2 + p2.astype(int)
    if constraints == STRICT:
        return (m1 >= 2) & (m2 >= 2) & (c1 >= 3) & (c2 >= 3) & (m1 + m2 >= 5)
    return (m1 >= 1) & (m2 >= 1) & (c1 >= 2) & (c2 >= 2)


def _feasible_mask(q_t, j, patterns, constraints):
    if patterns.shape[1] == 2:
        return _feasible_mask_k2(q_t, j, patterns, constraints)
    mask = np.zeros(patterns.shape[0], dtype=bool)
    saved = q_t[j].copy()
    for m in range(patterns.shape[0]):
        q_t[j] = patterns[m]
        mask[m] = check_identifiable(q_t, constraints)[0]
    q_t[j] = saved
    return mask


def _update_q_rows_time(state: ChainState, data: FitData, prior: PriorConfig,
                        t: int, rng) -> None:
    """Gibbs update of every Q row at time t via shared sufficient statistics.

    Alpha is fixed throughout the Q phase, so the per-pattern ideal-response
    coverage and the (pattern, item) co-occurrence counts are computed once;
    each row then costs O(patterns) plus one categorical draw.
    """
    k_attrs = data.n_attributes
    patterns = enumerate_candidate_rows(k_attrs)
    n, j_items, _ = data.Y.shape
    q_t = state.q[t]

    cov = (state.alpha[:, None, :, t] >= patterns[None, :, :]).all(axis=2)  # (N, M)
    y_t = data.Y[:, :, t].astype(np.float64)
    c11 = cov.T.astype(np.float64) @ y_t  # (M, J): eta=1 and y=1
    c1tot = cov.sum(axis=0).astype(np.float64)[:, None]  # (M, 1): eta=1
    ny1 = y_t.sum(axis=0)[None, :]  # (1, J): y=1
    n10 = c1tot - c11
    n01 = ny1 - c11
    n00 = n - c1tot - ny1 + c11

    lg = np.log(state.g[t])[None, :]
    l1g = np.log1p(-state.g[t])[None, :]
    ls = np.log(state.s[t])[None, :]
    l1s = np.log1p(-state.s[t])[None, :]
    loglik = c11 * l1s + n10 * ls + n01 * lg + n00 * l1g  # (M, J)

    pi = q_inclusion_prob(state.theta, state.lam, data.tau_std[t])  # (J,)
    ones = patterns.sum(axis=1).astype(np.float64)[:, None]
    log_prior = ones * np.log(pi)[None, :] + (k_attrs - ones) * np.log1p(-pi)[None, :]
    logw_all = log_prior + loglik  # (M, J)

    for j in range(j_items):
        feasible = _feasible_mask(q_t, j, patterns, state.constraints)
        if not feasible.any():
            update_q_row(state, data, prior, j, t, rng)  # pair-redraw fallback
            continue
        logw = np.where(feasible, logw_all[:, j], -np.inf)
        q_t[j] = patterns[_sample_categorical(logw, rng)]


def _sample_categorical(log_weights, rng) -> int:
    finite = np.isfinite(log_weights)
    w = np.zeros_like(log_weights)
    w[finite] = np.exp(log_weights[finite] - log_weights[finite].max())
    csum = np.cumsum(w)
    return int(np.searchsorted(csum, rng.random() * csum[-1], side="right"))


def update_q_row(state: ChainState, data: FitData, prior: PriorConfig, j: int, t: int, rng) -> None:
    """Exact Gibbs draw of Q row (j, t) over the admissible candidate patterns.

    Patterns that would make the full time-t matrix inadmissible get zero
    weight. If every single-row candidate is inadmissible the update retries
    with a joint redraw of rows j and j+1 before raising a deadlock error.
    """
    k_attrs = data.n_attributes
    patterns = enumerate_candidate_rows(k_attrs)
    logw = _row_log_weights(state, data, prior, patterns, j, t)

    q_t = state.q[t]
    saved = q_t[j].copy()
    for m in range(patterns.shape[0]):
        q_t[j] = patterns[m]
        if not check_identifiable(q_t, state.constraints)[0]:
            logw[m] = -np.inf
    q_t[j] = saved

    if np.any(np.isfinite(logw)):
        q_t[j] = patterns[_sample_categorical(logw, rng)]
        return

    # joint redraw across two adjacent rows; rare lockstep fallback
    j2 = (j + 1) % q_t.shape[0]
    if j2 == j:
        raise ConstraintDeadlockError(f"no admissible pattern for the single row at t={t}")
    saved2 = q_t[j2].copy()
    logw1 = _row_log_weights(state, data, prior, patterns, j, t)
    logw2 = _row_log_weights(state, data, prior, patterns, j2, t)
    joint = logw1[:, None] + logw2[None, :]
    for m1 in range(patterns.shape[0]):
        q_t[j] = patterns[m1]
        for m2 in range(patterns.shape[0]):
            q_t[j2] = patterns[m2]
            if not check_identifiable(q_t, state.constraints)[0]:
                joint[m1, m2] = -np.inf
    q_t[j] = saved
    q_t[j2] = saved2
    if not np.any(np.isfinite(joint)):
        raise ConstraintDeadlockError(
            f"constraint deadlock at item {j}, time {t}: no admissible pattern "
            f"for rows ({j}, {j2}) given the rest of Q"
        )
    idx = _sample_categorical(joint.ravel(), rng)
    q_t[j] = patterns[idx // patterns.shape[0]]
    q_t[j2] = patterns[idx % patterns.shape[0]]


def _boundary_transition_loglik(state, data, k: int, t: int, alpha_t) -> float:
    """Log P(alpha[:, k, t] = alpha_t | alpha[:, k, t-1], gamma_k)."""
    prev = state.alpha[:, k, t - 1]
    p_gain = sigmoid(_gain_logit(state, data, k))
    p_loss = sigmoid(_loss_logit(state, data, k))
    p_one = np.where(prev == 1, 1.0 - p_loss, p_gain)
    return float(np.sum(np.where(alpha_t == 1, np.log(p_one), np.log1p(-p_one))))


def update_label_swap(state: ChainState, data: FitData, t_star: int, rng) -> float:
    """Metropolis exchange of two attribute labels from time t_star onward.

    Measurement terms and the Q prior are invariant to jointly permuting the
    columns of Q_t and alpha_t for all t >= t_star, so the acceptance ratio
    reduces to the transition likelihood at the t_star boundary. The move
    lets chains escape time-inconsistent labelings that per-row and
    per-entry updates cannot cross; it is never adapted.
    """
    k_attrs = data.n_attributes
    if k_attrs < 2:
        return 1.0
    pairs = [(a, b) for a in range(k_attrs) for b in range(a + 1, k_attrs)]
    k1, k2 = pairs[int(rng.integers(0, len(pairs)))]
    cur = (_boundary_transition_loglik(state, data, k1, t_star, state.alpha[:, k1, t_star])
           + _boundary_transition_loglik(state, data, k2, t_star, state.alpha[:, k2, t_star]))
    new = (_boundary_transition_loglik(state, data, k1, t_star, state.alpha[:, k2, t_star])
           + _boundary_transition_loglik(state, data, k2, t_star, state.alpha[:, k1, t_star]))
    accept_prob = min(1.0, math.exp(min(new - cur, 0.0)))
    if rng.random() < accept_prob:
        t_points = data.Y.shape[2]
        sl = slice(t_star, t_points)
        state.alpha[:, [k1, k2], sl] = state.alpha[:, [k2, k1], sl]
        state.q[sl][:, :, [k1, k2]] = state.q[sl][:, :, [k2, k1]]
    return accept_prob


def _profiled_boundary_loglik(prev, nxt) -> float:
    """Transition log-likelihood at one boundary with rates profiled out.

    Intercept-only gain/loss rates are replaced by their smoothed empirical
    maximisers, giving the best achievable fit of the transition model to
    this (prev, next) pairing regardless of the current coefficients.
    """
    ll = 0.0
    for mask, events in ((prev == 0, nxt), (prev == 1, 1 - nxt)):
        n = int(mask.sum())
        if n == 0:
            continue
        x = int(events[mask].sum())
        rate = (x + 0.5) / (n + 1.0)
        ll += x * math.log(rate) + (n - x) * math.log1p(-rate)
    return ll


def repair_label_consistency(state: ChainState, data: FitData) -> bool:
    """Burn-in-only escape from time-inconsistent attribute labelings.

    A chain can lock into a state whose attribute labels differ across a
    time boundary while the transition coefficients co-adapt to the crossed
    pairing; the Metropolis swap move then cannot leave, because under the
    co-adapted coefficients the consistent labeling scores worse. This
    deterministic repair compares the two labelings under profiled
    transition fits and, when swapping wins, swaps labels from the boundary
    onward and resets the affected transition blocks to the profiled
    intercepts (slopes zero), letting adaptation re-equilibrate. It runs
    only during burn-in, so the kept chain keeps a fixed valid kernel.
    """
    n, _, t_points = data.Y.shape
    k_attrs = data.n_attributes
    changed = False
    for t_star in range(1, t_points):
        for k1 in range(k_attrs):
            for k2 in range(k1 + 1, k_attrs):
                prev1 = state.alpha[:, k1, t_star - 1]
                prev2 = state.alpha[:, k2, t_star - 1]
                nxt1 = state.alpha[:, k1, t_star]
                nxt2 = state.alpha[:, k2, t_star]
                stay = (_profiled_boundary_loglik(prev1, nxt1)
                        + _profiled_boundary_loglik(prev2, nxt2))
                swap = (_profiled_boundary_loglik(prev1, nxt2)
                        + _profiled_boundary_loglik(prev2, nxt1))
                if swap <= stay + 1e-9:
                    continue
                sl = slice(t_star, t_points)
                state.alpha[:, [k1, k2], sl] = state.alpha[:, [k2, k1], sl]
                state.q[sl][:, :, [k1, k2]] = state.q[sl][:, :, [k2, k1]]
                for k in (k1, k2):
                    prev = state.alpha[:, k, t_star - 1]
                    nxt = state.alpha[:, k, t_star]
                    gains = prev == 0
                    losses = prev == 1
                    r01 = (int(nxt[gains].sum()) + 0.5) / (int(gains.sum()) + 1.0)
                    r10 = (int((1 - nxt)[losses].sum()) + 0.5) / (int(losses.sum()) + 1.0)
                    state.gamma01[k] = 0.0
                    state.gamma01[k, 0] = math.log(r01 / (1.0 - r01))
                    state.gamma10[k] = 0.0
                    state.gamma10[k, 0] = math.log(r10 / (1.0 - r10))
                changed = True
    return changed


def update_item_params(state: ChainState, data: FitData, prior: PriorConfig, j: int, t: int, rng) -> None:
    """Conjugate Beta draw of (g, s) for item (j, t) under the flat prior."""
    eta = (state.alpha[:, :, t] >= state.q[t, j][None, :]).all(axis=1)
    y = data.Y[:, j, t]
    a, b = prior.gs_prior
    n_g1 = int(np.sum(~eta & (y == 1)))
    n_g0 = int(np.sum(~eta & (y == 0)))
    n_s0 = int(np.sum(eta & (y == 0)))
    n_s1 = int(np.sum(eta & (y == 1)))
    # clip keeps the open-interval invariant against a degenerate beta draw
    state.g[t, j] = np.clip(rng.beta(a + n_g1, b + n_g0), 1e-12, 1.0 - 1e-12)
    state.s[t, j] = np.clip(rng.beta(a + n_s0, b + n_s1), 1e-12, 1.0 - 1e-12)


def _update_item_params_block(state: ChainState, data: FitData, prior: PriorConfig,
                              t: int, rng) -> None:
    """All items at time t in one pass; same Beta shapes as update_item_params."""
    eta = (state.alpha[:, None, :, t] >= state.q[t][None, :, :]).all(axis=2)  # (N, J)
    y = data.Y[:, :, t]
    a, b = prior.gs_prior
    n_e1 = eta.sum(axis=0)
    n_s1 = (eta & (y == 1)).sum(axis=0)
    n_s0 = n_e1 - n_s1
    n_y1 = (y == 1).sum(axis=0)
    n_g1 = n_y1 - n_s1
    n_g0 = y.shape[0] - n_e1 - n_g1
    state.g[t] = np.clip(rng.beta(a + n_g1, b + n_g0), 1e-12, 1.0 - 1e-12)
    state.s[t] = np.clip(rng.beta(a + n_s0, b + n_s1), 1e-12, 1.0 - 1e-12)


def _coeff_block(state: ChainState, data: FitData, block: str, k: int):
    """Design matrix, outcomes, current coefficients, prior means for one block."""
    n = data.Y.shape[0]
    t_points = data.Y.shape[2]
    ones = np.ones((n, 1))
    design_full = np.hstack([ones, data.Z])
    if block == "beta":
        coef = np.concatenate(([state.beta0[k]], state.beta_z[k]))
        return design_full, state.alpha[:, k, 0].astype(float), coef
    rows = []
    outcomes = []
    for t in range(1, t_points):
        prev = state.alpha[:, k, t - 1]
        sel = prev == 0 if block == "gamma01" else prev == 1
        rows.append(design_full[sel])
        nxt = state.alpha[sel, k, t]
        outcomes.append(nxt if block == "gamma01" else 1 - nxt)
    design = np.vstack(rows) if rows else design_full[:0]
    y = np.concatenate(outcomes) if outcomes else np.zeros(0)
    coef = state.gamma01[k].copy() if block == "gamma01" else state.gamma10[k].copy()
    return design, y.astype(float), coef


def _coeff_prior_mean(block: str, size: int, prior: PriorConfig):
    mean = np.zeros(size)
    if block == "gamma10" and prior.gamma10_loss_averse:
        mean[0] = prior.gamma10_intercept_mean
    return mean


def _coeff_logpost(coef, design, y, mean, sd) -> float:
    eta = design @ coef
    loglik = float(y @ eta - np.logaddexp(0.0, eta).sum())
    logprior = float(-0.5 * np.sum(((coef - mean) / sd) ** 2))
    return loglik + logprior


def update_coeff_block(state: ChainState, data: FitData, prior: PriorConfig,
                       block: str, k: int, step: float, rng) -> float:
    """Random-walk Metropolis on one coefficient block; returns acceptance prob."""
    design, y, coef = _coeff_block(state, data, block, k)
    mean = _coeff_prior_mean(block, coef.size, prior)
    proposal = coef + step * rng.standard_normal(coef.size)
    log_ratio = (_coeff_logpost(proposal, design, y, mean, prior.coeff_sd)
                 - _coeff_logpost(coef, design, y, mean, prior.coeff_sd))
    accept_prob = min(1.0, math.exp(min(log_ratio, 0.0)))
    if rng.random() < accept_prob:
        coef = proposal
    if block == "beta":
        state.beta0[k] = coef[0]
        state.beta_z[k] = coef[1:]
    elif block == "gamma01":
        state.gamma01[k] = coef
    else:
        state.gamma10[k] = coef
    return accept_prob


def update_coeffs(state: ChainState, data: FitData, prior: PriorConfig,
                  steps=None, rng=None) -> dict:
    """One Metropolis pass over every coefficient block; returns accept probs."""
    if rng is None:
        raise ValueError("update_coeffs needs an explicit generator")
    out = {}
    for block in COEFF_BLOCKS:
        for k in range(data.n_attributes):
            step = steps[f"{block}.k{k}"] if steps else 0.15
            out[f"{block}.k{k}"] = update_coeff_block(state, data, prior, block, k, step, rng)
    return out


def _hyper_logpost(theta, lam, state, data, prior) -> float:
    # includes the Jacobian of the logit reparametrisation of theta
    lp = log_prior_theta(theta, prior) + math.log(theta * (1.0 - theta))
    if prior.lambda_enabled:
        lp += -0.5 * (lam / prior.sigma_lambda) ** 2
    lp += log_prior_q(state.q, theta, lam, data.tau_std)
    return lp


def update_theta_lambda(state: ChainState, data: FitData, prior: PriorConfig,
                        step: float, rng) -> float:
    """Joint random-walk Metropolis on (logit theta, lambda); returns accept prob.

    With the text prior disabled, lambda stays pinned at 0 and the update
    reduces to a Metropolis step on theta alone.
    """
    lt = float(logit(state.theta))
    if prior.lambda_enabled:
        eps = rng.standard_normal(2)
        lt_new = lt + step * eps[0]
        lam_new = state.lam + step * eps[1]
    else:
        lt_new = lt + step * rng.standard_normal()
        lam_new = state.lam
    theta_new = float(sigmoid(lt_new))
    log_ratio = (_hyper_logpost(theta_new, lam_new, state, data, prior)
                 - _hyper_logpost(state.theta, state.lam, state, data, prior))
    accept_prob = min(1.0, math.exp(min(log_ratio, 0.0)))
    if rng.random() < accept_prob:
        state.theta = theta_new
        state.lam = lam_new
    return accept_prob


# ---------------------------------------------------------------------------
# initialisation


def _random_admissible_q(j_items, k_attrs, constraints, rng, max_tries=1000):
    """Admissible Q by construction-plus-rejection: forced pure rows, random rest."""
    copies = 2 if constraints == STRICT else 1
    if j_items < copies * k_attrs:
        raise ConstraintDeadlockError(
            f"J={j_items} cannot hold {copies} pure rows for each of {k_attrs} attributes"
        )
    patterns = enumerate_candidate_rows(k_attrs)
    forced = np.repeat(np.eye(k_attrs, dtype=np.int8), copies, axis=0)
    for _ in range(max_tries):
        rest = patterns[rng.integers(0, patterns.shape[0], size=j_items - forced.shape[0])]
        q = np.vstack([forced, rest])[rng.permutation(j_items)]
        if check_identifiable(q, constraints)[0]:
            return q
    raise ConstraintDeadlockError(
        f"could not construct an admissible {j_items}x{k_attrs} Q-matrix "
        f"under {constraints!r} constraints"
    )


def initial_state(data: FitData, prior: PriorConfig, config: SamplerConfig, rng) -> ChainState:
    """Starting state: dispersed where the posterior is explored, heuristic alpha."""
    n, j_items, t_points = data.Y.shape
    k_attrs = data.n_attributes
    c_covs = data.Z.shape[1]

    if config.fix_item_params is not None:
        g = np.array(config.fix_item_params[0], dtype=float)
        s = np.array(config.fix_item_params[1], dtype=float)
    else:
        lo, hi = prior.gs_init_range
        lo = max(lo, 1e-4)  # keep strictly inside (0, 1)
        g = rng.uniform(lo, hi, size=(t_points, j_items))
        s = rng.uniform(lo, hi, size=(t_points, j_items))

    # mastery heuristic: majority correctness at each time point, all attributes
    share = data.Y.mean(axis=1) if n else np.zeros((0, t_points))
    alpha = np.repeat((share >= 0.5)[:, None, :], k_attrs, axis=1).astype(np.int8)

    # one random admissible matrix per chain, copied across time points, so
    # the starting attribute labeling is consistent in time
    q0 = _random_admissible_q(j_items, k_attrs, config.constraints, rng)
    q = np.stack([q0.copy() for _ in range(t_points)])

    if config.fix_coeffs is not None:
        sp = config.fix_coeffs
        beta0, beta_z = sp.beta0.copy(), sp.beta_z.copy()
        gamma01, gamma10 = sp.gamma01.copy(), sp.gamma10.copy()
    else:
        sd = prior.coeff_sd
        beta0 = rng.normal(0.0, sd, size=k_attrs)
        beta_z = rng.normal(0.0, sd, size=(k_attrs, c_covs))
        gamma01 = rng.normal(0.0, sd, size=(k_attrs, c_covs + 1))
        gamma10 = rng.normal(0.0, sd, size=(k_attrs, c_covs + 1))
        if prior.gamma10_loss_averse:
            gamma10[:, 0] = rng.normal(prior.gamma10_intercept_mean, sd, size=k_attrs)

    if config.fix_hyper is not None:
        theta, lam = float(config.fix_hyper[0]), float(config.fix_hyper[1])
    else:
        theta, lam = prior.theta_mean, 0.0

    return ChainState(q=q, g=g, s=s, beta0=beta0, beta_z=beta_z,
                      gamma01=gamma01, gamma10=gamma10, alpha=alpha,
                      theta=theta, lam=lam, constraints=config.constraints)


# ---------------------------------------------------------------------------
# chain driver


def _sweep(state, data, prior, config, streams, steps, accept_probs):
    n, j_items, t_points = data.Y.shape
    k_attrs = data.n_attributes
    if config.sample_alpha:
        for t in range(t_points):
            for k in range(k_attrs):
                update_alpha_block(state, data, k, t, streams["alpha"])
    if config.sample_q:
        for t in range(t_points):
            _update_q_rows_time(state, data, prior, t, streams["qrows"])
    if config.sample_alpha and config.sample_q:
        for t_star in range(1, t_points):
            accept_probs[f"swap.t{t_star + 1}"] = update_label_swap(
                state, data, t_star, streams["swap"])
    if config.sample_item_params:
        for t in range(t_points):
            _update_item_params_block(state, data, prior, t, streams["items"])
    if config.sample_coeffs:
        accept_probs.update(update_coeffs(state, data, prior, steps, streams["coeffs"]))
    if config.sample_hyper:
        accept_probs["hyper"] = update_theta_lambda(
            state, data, prior, steps["hyper"], streams["hyper"])
    state.iteration += 1


def _allocate_draws(data, config) -> Draws:
    n, j_items, t_points = data.Y.shape
    k_attrs = data.n_attributes
    c_covs = data.Z.shape[1]
    keep = config.n_keep
    return Draws(
        q=np.zeros((keep, t_points, j_items, k_attrs), dtype=np.int8),
        g=np.zeros((keep, t_points, j_items)),
        s=np.zeros((keep, t_points, j_items)),
        beta0=np.zeros((keep, k_attrs)),
        beta_z=np.zeros((keep, k_attrs, c_covs)),
        gamma01=np.zeros((keep, k_attrs, c_covs + 1)),
        gamma10=np.zeros((keep, k_attrs, c_covs + 1)),
        alpha=np.zeros((keep, n, k_attrs, t_points), dtype=np.int8)
        if config.save_alpha else np.zeros((keep, 0, k_attrs, t_points), dtype=np.int8),
        theta=np.zeros(keep),
        lam=np.zeros(keep),
    )


def run_chain(data: FitData, prior: PriorConfig, config: SamplerConfig, chain: int):
    """Run one chain; returns (Draws, acceptance-rate dict)."""
    streams = rngmod.chain_streams(config.seed, chain)
    state = initial_state(data, prior, config, streams["init"])

    steps = {f"{b}.k{k}": config.rw_step_coeffs
             for b in COEFF_BLOCKS for k in range(data.n_attributes)}
    steps["hyper"] = config.rw_step_hyper
    window_sums = {key: 0.0 for key in steps}
    window_count = 0
    n_windows = 0
    kept_sums = {key: 0.0 for key in steps}
    kept_count = 0

    draws = _allocate_draws(data, config)
    total = config.n_burnin + config.n_keep * config.thin
    kept = 0
    accept_probs = {}
    for it in range(total):
        _sweep(state, data, prior, config, streams, steps, accept_probs)
        in_burnin = it < config.n_burnin
        if in_burnin:
            for key in steps:
                if key in accept_probs:
                    window_sums[key] += accept_probs[key]
            window_count += 1
            if window_count == config.adapt_window:
                n_windows += 1
                gain = 1.0 / math.sqrt(n_windows)
                for key in steps:
                    if key in accept_probs:
                        rate = window_sums[key] / window_count
                        steps[key] *= math.exp(gain * (rate - ACCEPT_TARGET))
                        window_sums[key] = 0.0
                window_count = 0
                if config.sample_alpha and config.sample_q and config.sample_coeffs:
                    repair_label_consistency(state, data)
        else:
            for key, prob in accept_probs.items():
                kept_sums.setdefault(key, 0.0)
                kept_sums[key] += prob
            kept_count += 1
            offset = it - config.n_burnin
            if offset % config.thin == 0:
                draws.q[kept] = state.q
                draws.g[kept] = state.g
                draws.s[kept] = state.s
                draws.beta0[kept] = state.beta0
                draws.beta_z[kept] = state.beta_z
                draws.gamma01[kept] = state.gamma01
                draws.gamma10[kept] = state.gamma10
                if config.save_alpha:
                    draws.alpha[kept] = state.alpha
                draws.theta[kept] = state.theta
                draws.lam[kept] = state.lam
                kept += 1

    rates = {key: kept_sums[key] / kept_count
             for key in accept_probs if kept_count}
    return draws, rates


def _permute_chain(draws: Draws, perm) -> Draws:
    perm = list(perm)
    return Draws(
        q=draws.q[:, :, :, perm],
        g=draws.g,
        s=draws.s,
        beta0=draws.beta0[:, perm],
        beta_z=draws.beta_z[:, perm, :],
        gamma01=draws.gamma01[:, perm, :],
        gamma10=draws.gamma10[:, perm, :],
        alpha=draws.alpha[:, :, perm, :],
        theta=draws.theta,
        lam=draws.lam,
    )


def align_chain_labels(chains: list) -> tuple:
    """Permute attribute labels of chains 2..M to best match chain 1.

    Attribute labels are exchangeable in the likelihood, so independently
    initialised chains can settle into permuted copies of the same mode.
    The closest permutation (L1 distance between per-chain posterior mean
    Q-matrices) is applied to every attribute-indexed parameter before
    chains are pooled or compared.
    """
    from itertools import permutations

    if not chains:
        return chains, []
    k_attrs = chains[0].q.shape[3]
    ref = chains[0].q.mean(axis=0)
    perms = [tuple(range(k_attrs))]
    aligned = [chains[0]]
    for chain in chains[1:]:
        pip = chain.q.mean(axis=0)
        best, best_dist = None, np.inf
        for perm in permutations(range(k_attrs)):
            dist = np.abs(pip[:, :, list(perm)] - ref).sum()
            if dist < best_dist - 1e-12:
                best, best_dist = perm, dist
        perms.append(best)
        aligned.append(_permute_chain(chain, best) if best != tuple(range(k_attrs)) else chain)
    return aligned, perms


def monitored_scalars(mc: MultiChainDraws, prior: PriorConfig) -> dict:
    """Continuous scalars monitored for convergence, as name -> (chains, iters)."""
    out = {}
    g = mc.stacked("g")
    s = mc.stacked("s")
    for t in range(g.shape[2]):
        for j in range(g.shape[3]):
            out[f"g.t{t + 1}.j{j + 1:02d}"] = g[:, :, t, j]
            out[f"s.t{t + 1}.j{j + 1:02d}"] = s[:, :, t, j]
    beta0 = mc.stacked("beta0")
    for k in range(beta0.shape[2]):
        out[f"beta0.k{k + 1}"] = beta0[:, :, k]
    beta_z = mc.stacked("beta_z")
    for k in range(beta_z.shape[2]):
        for c in range(beta_z.shape[3]):
            out[f"beta_z.k{k + 1}.c{c + 1}"] = beta_z[:, :, k, c]
    for name in ("gamma01", "gamma10"):
        arr = mc.stacked(name)
        for k in range(arr.shape[2]):
            for c in range(arr.shape[3]):
                out[f"{name}.k{k + 1}.c{c}"] = arr[:, :, k, c]
    out["theta"] = mc.stacked("theta")
    if prior.lambda_enabled:
        out["lam"] = mc.stacked("lam")
    return out


def compute_diagnostics(mc: MultiChainDraws, prior: PriorConfig,
                        config: SamplerConfig) -> Diagnostics:
    diag = Diagnostics()
    for chain_idx, rates in enumerate(mc.acceptance):
        for key, rate in rates.items():
            diag.acceptance.setdefault(key, []).append(rate)
    if mc.n_chains < 2 or config.n_keep < 4:
        diag.skipped["*"] = "need >= 2 chains and >= 4 kept draws for rhat/ess"
        return diag
    for name, arr in monitored_scalars(mc, prior).items():
        if np.ptp(arr) == 0.0:
            diag.skipped[name] = "constant across all chains"
            continue
        try:
            diag.rhat[name] = rhat_fn(arr)
            diag.ess[name] = ess_fn(arr)
        except DiagnosticsError as exc:
            diag.skipped[name] = str(exc)
    return diag


def run_mcmc(data: FitData, prior: PriorConfig, config: SamplerConfig):
    """Run all chains, align labels, compute diagnostics.

    Returns (MultiChainDraws, Diagnostics). Deterministic given
    (seed, config, data); chains are independent and label-aligned to the
    first chain before pooling.
    """
    results = [run_chain(data, prior, config, chain) for chain in range(config.n_chains)]
    chains = [r[0] for r in results]
    acceptance = [r[1] for r in results]
    aligned, perms = align_chain_labels(chains)
    mc = MultiChainDraws(chains=aligned, acceptance=acceptance,
                         label_perms=[list(p) for p in perms], seed=config.seed)
    diag = compute_diagnostics(mc, prior, config)
    return mc, diag
