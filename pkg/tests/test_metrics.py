"""Recovery metrics: MAP Q, alignment, agreement rates, errors, bootstrap."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from textdina.errors import CapacityError, DimensionError
from textdina.metrics import (
    aar,
    align_attributes,
    alpha_point,
    bootstrap_se,
    map_q,
    par,
    param_error,
    pattern_frequencies,
    permute_pattern_axis,
    pip_summary,
    q_recovery,
)

from conftest import exhaustive_alignment


def draws_from_freq(freqs, n_draws=100):
    """Build a draw stack whose empirical pattern frequencies match freqs.

    freqs: list over time of list over items of {pattern tuple: share}.
    """
    t_points = len(freqs)
    j_items = len(freqs[0])
    k_attrs = len(next(iter(freqs[0][0])))
    out = np.zeros((n_draws, t_points, j_items, k_attrs), dtype=np.int8)
    for t in range(t_points):
        for j in range(j_items):
            pos = 0
            for pattern, share in freqs[t][j].items():
                count = int(round(share * n_draws))
                out[pos:pos + count, t, j] = pattern
                pos += count
            assert pos == n_draws
    return out


class TestMapQ:
    def test_argmax(self):
        draws = draws_from_freq([[{(1, 0): 0.6, (0, 1): 0.3, (1, 1): 0.1}]])
        assert map_q(draws)[0, 0].tolist() == [1, 0]

    def test_tie_breaks_to_sparser(self):
        draws = draws_from_freq([[{(1, 0): 0.5, (1, 1): 0.5}]])
        assert map_q(draws)[0, 0].tolist() == [1, 0]

    def test_tie_breaks_to_lower_binary_index(self):
        draws = draws_from_freq([[{(1, 0): 0.5, (0, 1): 0.5}]])
        assert map_q(draws)[0, 0].tolist() == [0, 1]

    def test_constant_draws(self):
        draws = np.tile(np.array([[1, 1]], dtype=np.int8), (40, 1, 1, 1)).reshape(40, 1, 1, 2)
        assert map_q(draws)[0, 0].tolist() == [1, 1]

    def test_needs_draws(self):
        with pytest.raises(DimensionError):
            map_q(np.zeros((0, 1, 1, 2), dtype=np.int8))


class TestAlignment:
    def test_identity_when_equal(self):
        q = np.random.default_rng(0).integers(0, 2, (2, 6, 2)).astype(np.int8)
        assert align_attributes(q, q) == (0, 1)

    def test_detects_swap(self):
        rng = np.random.default_rng(1)
        true = rng.integers(0, 2, (2, 8, 2)).astype(np.int8)
        est = true[:, :, [1, 0]]
        assert align_attributes(est, true) == (1, 0)

    def test_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(25):
            true = rng.integers(0, 2, (2, 7, 2)).astype(np.int8)
            est = rng.integers(0, 2, (2, 7, 2)).astype(np.int8)
            perm = align_attributes(est, true)
            oracle = exhaustive_alignment(est, true)
            agree = int((est[..., list(perm)] == true).sum())
            agree_oracle = int((est[..., list(oracle)] == true).sum())
            assert agree == agree_oracle

    def test_capacity_guard(self):
        q = np.zeros((1, 3, 7), dtype=np.int8)
        with pytest.raises(CapacityError):
            align_attributes(q, q)

    def test_pattern_axis_permutation_consistency(self):
        rng = np.random.default_rng(3)
        draws = rng.integers(0, 2, (60, 2, 5, 2)).astype(np.int8)
        freq = pattern_frequencies(draws)
        swapped = pattern_frequencies(draws[:, :, :, [1, 0]])
        assert np.allclose(permute_pattern_axis(freq, (1, 0)), swapped)


class TestRates:
    def test_perfect(self):
        q = np.random.default_rng(4).integers(0, 2, (2, 6, 2)).astype(np.int8)
        acc, fpr, fnr = q_recovery(q, q)
        assert acc == [1.0, 1.0] and fpr == [0.0, 0.0] and fnr == [0.0, 0.0]

    def test_undefined_fpr_with_all_ones_truth(self):
        true = np.ones((1, 4, 2), dtype=np.int8)
        est = np.ones((1, 4, 2), dtype=np.int8)
        acc, fpr, fnr = q_recovery(est, true)
        assert fpr == [None]
        assert fnr == [0.0]

    @given(st.integers(0, 2**30))
    @settings(max_examples=60, deadline=None)
    def test_acc_identity(self, seed):
        rng = np.random.default_rng(seed)
        true = rng.integers(0, 2, (1, 6, 2)).astype(np.int8)
        est = rng.integers(0, 2, (1, 6, 2)).astype(np.int8)
        acc, fpr, fnr = q_recovery(est, true)
        n0 = int((true[0] == 0).sum())
        n1 = int((true[0] == 1).sum())
        if fpr[0] is None or fnr[0] is None:
            return
        assert acc[0] == pytest.approx(1 - (fpr[0] * n0 + fnr[0] * n1) / (n0 + n1), abs=1e-12)

    def test_pip_perfect_draws(self):
        true = np.array([[[1, 0], [0, 1], [1, 1]]], dtype=np.int8)
        draws = np.tile(true, (30, 1, 1, 1))
        pip_true, pip_false = pip_summary(draws, true)
        assert pip_true == [1.0]
        assert pip_false == [0.0]

    def test_par_aar_counting(self):
        true = np.zeros((10, 2, 2), dtype=np.int8)
        est = true.copy()
        est[0, 1, 0] = 1  # one learner wrong on attribute 2 at time 1
        assert par(est, true) == [0.9, 1.0]
        assert aar(est, true) == [[1.0, 0.9], [1.0, 1.0]]

    @given(st.integers(0, 2**30))
    @settings(max_examples=60, deadline=None)
    def test_par_bounded_by_aar(self, seed):
        rng = np.random.default_rng(seed)
        true = rng.integers(0, 2, (12, 3, 2)).astype(np.int8)
        est = rng.integers(0, 2, (12, 3, 2)).astype(np.int8)
        p = par(est, true)
        a = aar(est, true)
        for t in range(2):
            assert p[t] <= min(a[t]) + 1e-12

    def test_alpha_point_mode(self):
        draws = np.zeros((10, 3, 1, 1), dtype=np.int8)
        draws[:6, 0] = 1  # 0.6 -> 1
        draws[:5, 1] = 1  # exactly 0.5 -> 0
        draws[:4, 2] = 1  # 0.4 -> 0
        assert alpha_point(draws)[:, 0, 0].tolist() == [1, 0, 0]


class TestParamError:
    def test_zero_for_equal(self):
        rmse, mae = param_error(np.array([0.1, 0.2]), np.array([0.1, 0.2]))
        assert rmse == 0.0 and mae == 0.0

    def test_constant_shift(self):
        rmse, mae = param_error(np.array([0.4, 0.5]), np.array([0.1, 0.2]))
        assert rmse == pytest.approx(0.3) and mae == pytest.approx(0.3)

    def test_three_point_hand_case(self):
        rmse, mae = param_error(np.array([0.1, -0.2, 0.2]), np.zeros(3))
        assert rmse == pytest.approx(0.17321, abs=1e-5)
        assert mae == pytest.approx(0.16667, abs=1e-5)

    @given(st.integers(0, 2**30))
    @settings(max_examples=60, deadline=None)
    def test_mae_never_exceeds_rmse(self, seed):
        rng = np.random.default_rng(seed)
        rmse, mae = param_error(rng.normal(size=8), rng.normal(size=8))
        assert mae <= rmse + 1e-12


class TestBootstrap:
    def test_constant_metric(self):
        assert bootstrap_se([0.5] * 10) == 0.0

    def test_seeded_determinism(self):
        values = np.random.default_rng(5).normal(size=20)
        assert bootstrap_se(values, seed=3) == bootstrap_se(values, seed=3)
        assert bootstrap_se(values, seed=3) != bootstrap_se(values, seed=4)

    def test_single_replication_errors(self):
        with pytest.raises(DimensionError):
            bootstrap_se([1.0])

    def test_clt_oracle(self):
        values = np.random.default_rng(6).standard_normal(100)
        se = bootstrap_se(values, n_boot=2000, seed=0)
        assert se == pytest.approx(0.1, rel=0.3)


def test_scoring_invariant_to_joint_relabeling(rng):
    """Scoring after alignment equals scoring against a relabelled truth."""
    from types import SimpleNamespace

    from textdina.metrics import score_fit

    n_draws, t_points, j_items, k_attrs, n = 50, 2, 8, 2, 30
    q_draws = rng.integers(0, 2, (n_draws, t_points, j_items, k_attrs)).astype(np.int8)
    alpha_draws = rng.integers(0, 2, (n_draws, n, k_attrs, t_points)).astype(np.int8)

    class Draws:
        def __init__(self, q, a):
            self._d = {"q": q, "alpha": a,
                       "g": rng.uniform(0.1, 0.3, (n_draws, t_points, j_items)),
                       "s": rng.uniform(0.1, 0.3, (n_draws, t_points, j_items)),
                       "beta0": rng.normal(size=(n_draws, k_attrs)),
                       "beta_z": rng.normal(size=(n_draws, k_attrs, 2)),
                       "gamma01": rng.normal(size=(n_draws, k_attrs, 3)),
                       "gamma10": rng.normal(size=(n_draws, k_attrs, 3))}

        def pooled(self, name):
            return self._d[name]

    truth = SimpleNamespace(
        q=rng.integers(0, 2, (t_points, j_items, k_attrs)).astype(np.int8),
        alpha=rng.integers(0, 2, (n, k_attrs, t_points)).astype(np.int8),
        g=rng.uniform(0.1, 0.3, (t_points, j_items)),
        s=rng.uniform(0.1, 0.3, (t_points, j_items)),
        beta0=rng.normal(size=k_attrs),
        beta_z=rng.normal(size=(k_attrs, 2)),
        gamma01=rng.normal(size=(k_attrs, 3)),
        gamma10=rng.normal(size=(k_attrs, 3)),
    )
    swapped_truth = SimpleNamespace(
        q=truth.q[:, :, [1, 0]], alpha=truth.alpha[:, [1, 0], :],
        g=truth.g, s=truth.s, beta0=truth.beta0[[1, 0]],
        beta_z=truth.beta_z[[1, 0]], gamma01=truth.gamma01[[1, 0]],
        gamma10=truth.gamma10[[1, 0]],
    )
    draws = Draws(q_draws, alpha_draws)
    a = score_fit(draws, truth)
    b = score_fit(draws, swapped_truth)
    assert a.acc == b.acc
    assert a.par == b.par
    assert a.rmse == b.rmse
