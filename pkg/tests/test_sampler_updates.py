"""Distributional oracles for the individual MCMC block updates."""

import math
from itertools import product

import numpy as np
import pytest
from scipy.stats import kstest

from textdina import rng as rngmod
from textdina.model import RELAXED, StructuralParams, sigmoid
from textdina.priors import PriorConfig
from textdina.sampler import (
    ChainState,
    FitData,
    _coeff_logpost,
    update_alpha_block,
    update_coeff_block,
    update_item_params,
    update_label_swap,
    update_q_row,
    update_theta_lambda,
)

from conftest import SCAFFOLD_K2_J7


def make_state(q, g, s, alpha, theta=0.6, lam=0.0, n_cov=0, constraints="strict"):
    q = np.asarray(q, dtype=np.int8)
    if q.ndim == 2:
        q = q[None]
    t_points, _, k_attrs = q.shape
    alpha = np.asarray(alpha, dtype=np.int8)
    return ChainState(
        q=q.copy(),
        g=np.asarray(g, dtype=float).reshape(t_points, -1).copy(),
        s=np.asarray(s, dtype=float).reshape(t_points, -1).copy(),
        beta0=np.zeros(k_attrs),
        beta_z=np.zeros((k_attrs, n_cov)),
        gamma01=np.zeros((k_attrs, n_cov + 1)),
        gamma10=np.zeros((k_attrs, n_cov + 1)),
        alpha=alpha.copy(),
        theta=theta,
        lam=lam,
        constraints=constraints,
    )


def exact_row_conditional(state, data, j, t, prior):
    """Enumerate the row full conditional by brute force (independent oracle)."""
    from textdina.model import check_identifiable, enumerate_candidate_rows

    patterns = enumerate_candidate_rows(data.n_attributes)
    pi = sigmoid(math.log(state.theta / (1 - state.theta)) - state.lam * data.tau_std[t, j])
    weights = []
    for pattern in patterns:
        q_try = state.q[t].copy()
        q_try[j] = pattern
        if not check_identifiable(q_try, state.constraints)[0]:
            weights.append(0.0)
            continue
        ones = int(pattern.sum())
        lw = ones * math.log(pi) + (len(pattern) - ones) * math.log(1 - pi)
        for i in range(data.Y.shape[0]):
            eta = all(state.alpha[i, k, t] >= pattern[k] for k in range(len(pattern)))
            p = (1 - state.s[t, j]) if eta else state.g[t, j]
            lw += math.log(p) if data.Y[i, j, t] == 1 else math.log(1 - p)
        weights.append(math.exp(lw))
    weights = np.array(weights)
    return weights / weights.sum()


class TestUpdateQRow:
    def setup_data(self, n=200, g=0.01, s=0.01):
        alpha = np.zeros((n, 2, 1), dtype=np.int8)
        alpha[: n // 2, 0, 0] = 1  # split on attribute 1
        alpha[:, 1, 0] = 1 - alpha[:, 0, 0]
        q = SCAFFOLD_K2_J7.copy()[None]
        Y = np.zeros((n, 7, 1), dtype=np.int8)
        for j in range(7):
            eta = (alpha[:, :, 0] >= q[0, j][None, :]).all(axis=1)
            Y[:, j, 0] = eta  # noiseless responses under the scaffold
        state = make_state(q, np.full((1, 7), g), np.full((1, 7), s), alpha)
        data = FitData(Y=Y, Z=np.zeros((n, 0)), n_attributes=2)
        return state, data

    def test_strong_likelihood_picks_true_pattern(self):
        state, data = self.setup_data()
        prior = PriorConfig()
        # row 6's scaffold data came from (1,1); rebuild them under (1,0)
        data.Y[:, 6, 0] = state.alpha[:, 0, 0]
        oracle = exact_row_conditional(state, data, 6, 0, prior)
        assert oracle[1] > 0.999  # exact conditional already concentrates
        rng = rngmod.substream(1)
        hits = np.zeros(3)
        for _ in range(1000):
            update_q_row(state, data, prior, 6, 0, rng)
            hits[{(0, 1): 0, (1, 0): 1, (1, 1): 2}[tuple(state.q[0, 6])]] += 1
        assert hits[1] / 1000 > 0.99

    def test_infeasible_pattern_never_sampled(self):
        # scaffold with exactly two pure rows per attribute: making row 6
        # non-pure would leave no spare pure row, so (1,1) is inadmissible
        q = np.array([[1, 0], [0, 1], [1, 0], [0, 1], [1, 1], [1, 1], [1, 0]], dtype=np.int8)
        n = 50
        alpha = np.zeros((n, 2, 1), dtype=np.int8)
        alpha[: n // 2, 0, 0] = 1
        alpha[n // 4: 3 * n // 4, 1, 0] = 1
        Y = np.ones((n, 7, 1), dtype=np.int8)  # eta irrelevant: g = 1 - s below
        state = make_state(q[None], np.full((1, 7), 0.7), np.full((1, 7), 0.3), alpha)
        data = FitData(Y=Y, Z=np.zeros((n, 0)), n_attributes=2)
        prior = PriorConfig()
        oracle = exact_row_conditional(state, data, 6, 0, prior)
        assert oracle[2] == 0.0
        rng = rngmod.substream(2)
        for _ in range(500):
            update_q_row(state, data, prior, 6, 0, rng)
            assert tuple(state.q[0, 6]) != (1, 1)

    def test_flat_likelihood_matches_prior_weights(self):
        state, data = self.setup_data(g=0.7, s=0.3)  # g = 1 - s: likelihood flat
        state.theta, state.lam = 0.6, 0.5
        data.tau_std[0, 6] = 1.2
        prior = PriorConfig()
        oracle = exact_row_conditional(state, data, 6, 0, prior)
        n_draws = 10_000
        rng = rngmod.substream(3)
        hits = np.zeros(3)
        for _ in range(n_draws):
            update_q_row(state, data, prior, 6, 0, rng)
            hits[{(0, 1): 0, (1, 0): 1, (1, 1): 2}[tuple(state.q[0, 6])]] += 1
        freq = hits / n_draws
        mc_sd = np.sqrt(oracle * (1 - oracle) / n_draws)
        assert np.all(np.abs(freq - oracle) <= 3 * mc_sd + 1e-12)


class TestUpdateAlpha:
    def test_flat_conditional_without_items(self):
        # no item at this time point requires attribute 1, and beta = 0
        n = 2000
        q = np.tile(np.array([[0, 1]], dtype=np.int8), (7, 1))[None]
        alpha = np.ones((n, 2, 1), dtype=np.int8)
        Y = np.ones((n, 7, 1), dtype=np.int8)
        state = make_state(q, np.full((1, 7), 0.2), np.full((1, 7), 0.2), alpha)
        data = FitData(Y=Y, Z=np.zeros((n, 0)), n_attributes=2)
        rng = rngmod.substream(4)
        update_alpha_block(state, data, 0, 0, rng)
        share = state.alpha[:, 0, 0].mean()
        assert abs(share - 0.5) <= 3 * 0.5 / np.sqrt(n)

    def test_informative_items_force_mastery(self):
        n = 500
        q = SCAFFOLD_K2_J7.copy()[None]
        alpha = np.ones((n, 2, 1), dtype=np.int8)
        Y = np.ones((n, 7, 1), dtype=np.int8)  # all correct
        tiny = 1e-6
        state = make_state(q, np.full((1, 7), tiny), np.full((1, 7), tiny), alpha)
        data = FitData(Y=Y, Z=np.zeros((n, 0)), n_attributes=2)
        rng = rngmod.substream(5)
        counts = 0
        total = 0
        for _ in range(10):
            update_alpha_block(state, data, 0, 0, rng)
            counts += int(state.alpha[:, 0, 0].sum())
            total += n
        assert counts / total > 0.999

    def test_two_time_gibbs_matches_enumeration(self):
        # N=1, J=2, K=1, T=2: enumerate all four mastery trajectories
        q = np.ones((2, 2, 1), dtype=np.int8)
        g = np.full((2, 2), 0.25)
        s = np.full((2, 2), 0.15)
        Y = np.array([[[1, 0], [0, 1]]], dtype=np.int8)  # (1, 2, 2)
        state = make_state(q, g, s, np.zeros((1, 1, 2), dtype=np.int8))
        state.beta0[:] = 0.3
        state.gamma01[:, 0] = -0.2
        state.gamma10[:, 0] = -1.0
        data = FitData(Y=Y, Z=np.zeros((1, 0)), n_attributes=1)

        # exact joint over (alpha_1, alpha_2)
        p1 = sigmoid(0.3)
        p_gain = sigmoid(-0.2)
        p_loss = sigmoid(-1.0)
        exact = {}
        for a1, a2 in product([0, 1], repeat=2):
            lp = math.log(p1 if a1 else 1 - p1)
            if a1:
                lp += math.log(1 - p_loss if a2 else p_loss)
            else:
                lp += math.log(p_gain if a2 else 1 - p_gain)
            for t, a in ((0, a1), (1, a2)):
                for j in range(2):
                    p = (1 - s[t, j]) if a else g[t, j]
                    lp += math.log(p if Y[0, j, t] == 1 else 1 - p)
            exact[(a1, a2)] = math.exp(lp)
        total = sum(exact.values())
        exact = {k: v / total for k, v in exact.items()}

        rng = rngmod.substream(6)
        counts = {k: 0 for k in exact}
        n_sweeps = 50_000
        for _ in range(n_sweeps):
            update_alpha_block(state, data, 0, 0, rng)
            update_alpha_block(state, data, 0, 1, rng)
            counts[(int(state.alpha[0, 0, 0]), int(state.alpha[0, 0, 1]))] += 1
        for key, p_exact in exact.items():
            assert abs(counts[key] / n_sweeps - p_exact) < 0.01


class TestUpdateItemParams:
    def _state(self, alpha_value, y_ones, n=100):
        q = np.array([[[1, 0]] * 3], dtype=np.int8)
        q[0, 1] = [0, 1]
        q[0, 2] = [1, 1]
        alpha = np.full((n, 2, 1), alpha_value, dtype=np.int8)
        Y = np.zeros((n, 3, 1), dtype=np.int8)
        Y[:y_ones, 0, 0] = 1
        state = make_state(q, np.full((1, 3), 0.2), np.full((1, 3), 0.2), alpha)
        data = FitData(Y=Y, Z=np.zeros((n, 0)), n_attributes=2)
        return state, data

    def test_no_evidence_gives_prior_draws(self):
        state, data = self._state(alpha_value=1, y_ones=100)  # eta = 1 everywhere
        rng = rngmod.substream(7)
        draws = []
        for _ in range(4000):
            update_item_params(state, data, PriorConfig(), 0, 0, rng)
            draws.append(state.g[0, 0])
        stat = kstest(draws, "uniform").statistic
        assert stat < 0.05  # g sampled from its Beta(1,1) prior

    def test_guessing_posterior_mean(self):
        state, data = self._state(alpha_value=0, y_ones=50)  # eta = 0, 50/100 correct
        rng = rngmod.substream(8)
        draws = np.empty(20_000)
        for i in range(draws.size):
            update_item_params(state, data, PriorConfig(), 0, 0, rng)
            draws[i] = state.g[0, 0]
        target = 51 / 102
        sd = math.sqrt(51 * 51 / (102**2 * 103))
        assert abs(draws.mean() - target) <= 3 * sd / math.sqrt(draws.size) + 1e-4

    def test_slipping_posterior_mean(self):
        state, data = self._state(alpha_value=1, y_ones=100)  # eta = 1, all correct
        rng = rngmod.substream(9)
        draws = np.empty(20_000)
        for i in range(draws.size):
            update_item_params(state, data, PriorConfig(), 0, 0, rng)
            draws[i] = state.s[0, 0]
        target = 1 / 102
        sd = math.sqrt(1 * 101 / (102**2 * 103))
        assert abs(draws.mean() - target) <= 3 * sd / math.sqrt(draws.size) + 1e-4


class TestUpdateCoeffs:
    def test_zero_data_samples_the_prior(self):
        data = FitData(Y=np.zeros((0, 2, 1), dtype=np.int8), Z=np.zeros((0, 0)),
                       n_attributes=1)
        state = make_state(np.ones((1, 2, 1), dtype=np.int8), np.full((1, 2), 0.2),
                           np.full((1, 2), 0.2), np.zeros((0, 1, 1), dtype=np.int8))
        prior = PriorConfig()
        rng = rngmod.substream(10)
        draws = np.empty(20_000)
        for i in range(draws.size):
            update_coeff_block(state, data, prior, "beta", 0, 2.4, rng)
            draws[i] = state.beta0[0]
        stat = kstest(draws, "norm").statistic
        assert stat < 0.05

    def test_acceptance_is_exactly_the_density_ratio(self):
        n = 40
        rng_data = np.random.default_rng(0)
        Y = rng_data.integers(0, 2, (n, 2, 1)).astype(np.int8)
        alpha = rng_data.integers(0, 2, (n, 1, 1)).astype(np.int8)
        data = FitData(Y=Y, Z=np.zeros((n, 0)), n_attributes=1)
        state = make_state(np.ones((1, 2, 1), dtype=np.int8), np.full((1, 2), 0.2),
                           np.full((1, 2), 0.2), alpha)
        prior = PriorConfig()
        step = 1.7
        # replay the generator to recover the proposal the update will draw
        probe = rngmod.substream(11)
        eps = probe.standard_normal(1)
        cur = np.array([state.beta0[0]])
        prop = cur + step * eps
        design = np.ones((n, 1))
        y = state.alpha[:, 0, 0].astype(float)
        expected = min(1.0, math.exp(min(
            _coeff_logpost(prop, design, y, np.zeros(1), 1.0)
            - _coeff_logpost(cur, design, y, np.zeros(1), 1.0), 0.0)))
        live = rngmod.substream(11)
        accept_prob = update_coeff_block(state, data, prior, "beta", 0, step, live)
        assert accept_prob == pytest.approx(expected, abs=1e-12)

    def test_posterior_mean_near_logistic_mle(self):
        n = 500
        rng_data = np.random.default_rng(3)
        true_beta0 = 1.0
        y = (rng_data.random(n) < sigmoid(true_beta0)).astype(np.int8)
        alpha = y.reshape(n, 1, 1)
        data = FitData(Y=np.zeros((n, 1, 1), dtype=np.int8), Z=np.zeros((n, 0)),
                       n_attributes=1)
        state = make_state(np.ones((1, 1, 1), dtype=np.int8), np.full((1, 1), 0.2),
                           np.full((1, 1), 0.2), alpha)
        prior = PriorConfig()
        rng = rngmod.substream(12)
        draws = np.empty(5000)
        for i in range(draws.size):
            update_coeff_block(state, data, prior, "beta", 0, 0.25, rng)
            draws[i] = state.beta0[0]
        # Newton-solved intercept-only logistic MLE
        beta = 0.0
        for _ in range(50):
            p = sigmoid(beta)
            grad = y.sum() - n * p
            hess = -n * p * (1 - p)
            beta -= grad / hess
        post_mean, post_sd = draws[500:].mean(), draws[500:].std(ddof=1)
        assert abs(post_mean - beta) < 3 * post_sd


def test_update_coeffs_sweeps_every_block():
    from textdina.sampler import update_coeffs

    n = 30
    rng_data = np.random.default_rng(2)
    alpha = rng_data.integers(0, 2, (n, 2, 2)).astype(np.int8)
    data = FitData(Y=np.zeros((n, 3, 2), dtype=np.int8), Z=rng_data.normal(size=(n, 0)),
                   n_attributes=2)
    state = make_state(np.ones((2, 3, 2), dtype=np.int8), np.full((2, 3), 0.2),
                       np.full((2, 3), 0.2), alpha)
    probs = update_coeffs(state, data, PriorConfig(), None, rngmod.substream(20))
    assert set(probs) == {f"{b}.k{k}" for b in ("beta", "gamma01", "gamma10")
                          for k in range(2)}
    assert all(0.0 <= p <= 1.0 for p in probs.values())


class TestUpdateThetaLambda:
    def _fitdata(self, j_items=3, tau=None, t_points=1):
        tau_std = np.zeros((t_points, j_items)) if tau is None else tau
        return FitData(Y=np.zeros((0, j_items, t_points), dtype=np.int8),
                       Z=np.zeros((0, 0)), n_attributes=2, tau_std=tau_std)

    def test_disabled_lambda_stays_pinned(self):
        data = self._fitdata()
        state = make_state(np.ones((1, 3, 2), dtype=np.int8), np.full((1, 3), 0.2),
                           np.full((1, 3), 0.2), np.zeros((0, 2, 1), dtype=np.int8))
        prior = PriorConfig(lambda_enabled=False)
        rng = rngmod.substream(13)
        for _ in range(200):
            update_theta_lambda(state, data, prior, 0.4, rng)
            assert state.lam == 0.0
        assert state.theta != 0.6  # theta itself did move

    def test_all_ones_q_conjugate_shape(self):
        # Q all ones with tau = 0: theta conditional is Beta(a + JK, b)
        data = self._fitdata(j_items=3)
        state = make_state(np.ones((1, 3, 2), dtype=np.int8), np.full((1, 3), 0.2),
                           np.full((1, 3), 0.2), np.zeros((0, 2, 1), dtype=np.int8))
        prior = PriorConfig(theta_hyper=(6.0, 4.0), lambda_enabled=True)
        rng = rngmod.substream(14)
        n_draws = 20_000
        draws = np.empty(n_draws)
        for i in range(n_draws):
            update_theta_lambda(state, data, prior, 0.35, rng)
            draws[i] = state.theta
        a, b = 6.0 + 6, 4.0
        target_mean = a / (a + b)
        target_sd = math.sqrt(a * b / ((a + b) ** 2 * (a + b + 1)))
        # correlated chain: allow 3 sd of the mean at an effective size of n/20
        assert abs(draws[1000:].mean() - target_mean) <= 3 * target_sd / math.sqrt(n_draws / 20)

    def test_prior_only_run_matches_hyperpriors(self):
        data = self._fitdata(j_items=0)
        state = make_state(np.ones((1, 0, 2), dtype=np.int8), np.zeros((1, 0)),
                           np.zeros((1, 0)), np.zeros((0, 2, 1), dtype=np.int8))
        prior = PriorConfig(theta_hyper=(6.0, 4.0), sigma_lambda=0.5)
        rng = rngmod.substream(15)
        n_draws = 20_000
        thetas = np.empty(n_draws)
        lams = np.empty(n_draws)
        for i in range(n_draws):
            update_theta_lambda(state, data, prior, 0.8, rng)
            thetas[i] = state.theta
            lams[i] = state.lam
        assert kstest(thetas, "beta", args=(6, 4)).statistic < 0.05
        assert kstest(lams, "norm", args=(0, 0.5)).statistic < 0.05


class TestLabelSwap:
    def test_swap_restores_time_consistency(self):
        n = 400
        rng_data = np.random.default_rng(1)
        alpha1 = rng_data.integers(0, 2, (n,)).astype(np.int8)
        alpha = np.zeros((n, 2, 2), dtype=np.int8)
        alpha[:, 0, 0] = alpha1
        alpha[:, 1, 0] = 1 - alpha1
        # time-2 states equal time-1 but with labels flipped
        alpha[:, 0, 1] = alpha[:, 1, 0]
        alpha[:, 1, 1] = alpha[:, 0, 0]
        q = np.stack([SCAFFOLD_K2_J7, SCAFFOLD_K2_J7])
        state = make_state(q, np.full((2, 7), 0.2), np.full((2, 7), 0.2), alpha)
        state.gamma10[:, 0] = -3.0  # loss rare: consistent labels fit far better
        data = FitData(Y=np.zeros((n, 7, 2), dtype=np.int8), Z=np.zeros((n, 0)),
                       n_attributes=2)
        rng = rngmod.substream(16)
        accept = update_label_swap(state, data, 1, rng)
        assert accept == pytest.approx(1.0)
        assert np.array_equal(state.alpha[:, :, 1], state.alpha[:, :, 0])
