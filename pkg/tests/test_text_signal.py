"""Text-signal construction: cosines, raw/standardised tau, extensions."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from textdina.errors import DegenerateVarianceError, DimensionError, DomainError
from textdina.text_signal import (
    ItemEmbeddings,
    attribute_similarity,
    combined_signal,
    compute_tau,
    cosine_similarity,
    standardize_tau,
)

# first three embedding dimensions of a worked example item (stem, correct,
# two distractors); the cosine below is hand-checked against dot/norm
WORKED_STEM = np.array([-0.00559068, 0.00106812, 0.02144735])
WORKED_CORRECT = np.array([0.07255946, -0.02993354, 0.04118648])
WORKED_D1 = np.array([-0.0366895, -0.01831677, 0.05275081])
WORKED_D2 = np.array([-0.0213028, -0.04499649, 0.00077056])


class TestCosine:
    def test_self_similarity(self):
        v = np.array([0.3, -1.2, 0.5])
        assert cosine_similarity(v, v) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal(self):
        assert cosine_similarity([1.0, 0.0], [0.0, 1.0]) == pytest.approx(0.0)

    def test_worked_vectors(self):
        oracle = float(WORKED_STEM @ WORKED_CORRECT
                       / (np.linalg.norm(WORKED_STEM) * np.linalg.norm(WORKED_CORRECT)))
        value = cosine_similarity(WORKED_STEM, WORKED_CORRECT)
        assert value == pytest.approx(oracle, abs=1e-12)
        assert value == pytest.approx(0.2266, abs=1e-4)

    def test_zero_norm(self):
        with pytest.raises(DomainError):
            cosine_similarity([0.0, 0.0], [1.0, 0.0])

    def test_dim_mismatch(self):
        with pytest.raises(DimensionError):
            cosine_similarity([1.0, 0.0], [1.0, 0.0, 0.0])

    @given(st.floats(1e-6, 1e6), st.integers(0, 2**30))
    @settings(max_examples=80, deadline=None)
    def test_positive_scaling_invariance(self, c, seed):
        rng = np.random.default_rng(seed)
        u = rng.normal(size=5)
        v = rng.normal(size=5)
        assert abs(cosine_similarity(c * u, v) - cosine_similarity(u, v)) < 1e-12


class TestComputeTau:
    def test_definition(self):
        # constructed so stem-correct cosine is 0.5 and stem-distractor 0.3
        stem = np.array([1.0, 0.0])
        correct = np.array([0.5, np.sqrt(1 - 0.25)])
        distractor = np.array([0.3, np.sqrt(1 - 0.09)])
        sig = compute_tau(ItemEmbeddings(stem=stem, correct=correct,
                                         distractors=[distractor], item_id="a"))
        assert sig.s_plus == pytest.approx(0.5)
        assert sig.s_minus == pytest.approx(0.3)
        assert sig.tau_raw == pytest.approx(0.2)

    def test_identical_options_give_zero(self):
        stem = np.array([0.2, 0.7, -0.1])
        option = np.array([0.5, 0.1, 0.4])
        sig = compute_tau(ItemEmbeddings(stem=stem, correct=option,
                                         distractors=[option, option]))
        assert sig.tau_raw == pytest.approx(0.0, abs=1e-15)

    def test_distractor_order_invariance(self, rng):
        stem = rng.normal(size=6)
        correct = rng.normal(size=6)
        ds = [rng.normal(size=6) for _ in range(4)]
        a = compute_tau(ItemEmbeddings(stem=stem, correct=correct, distractors=ds))
        b = compute_tau(ItemEmbeddings(stem=stem, correct=correct, distractors=ds[::-1]))
        assert a.tau_raw == pytest.approx(b.tau_raw, abs=1e-15)

    def test_worked_item_range(self):
        sig = compute_tau(ItemEmbeddings(stem=WORKED_STEM, correct=WORKED_CORRECT,
                                         distractors=[WORKED_D1, WORKED_D2]))
        # full-precision value depends on the encoder; only sanity-check range
        assert -2.0 <= sig.tau_raw <= 2.0

    def test_requires_distractor(self):
        with pytest.raises(DimensionError):
            ItemEmbeddings(stem=[1.0, 0.0], correct=[0.0, 1.0], distractors=[])

    @given(st.integers(0, 2**30))
    @settings(max_examples=50, deadline=None)
    def test_tau_bounded_by_two(self, seed):
        rng = np.random.default_rng(seed)
        sig = compute_tau(ItemEmbeddings(
            stem=rng.normal(size=4), correct=rng.normal(size=4),
            distractors=[rng.normal(size=4) for _ in range(3)]))
        assert -2.0 <= sig.tau_raw <= 2.0


class TestStandardize:
    def test_two_point_pool(self):
        out = standardize_tau([1.0, -1.0])
        assert out == pytest.approx([1 / np.sqrt(2), -1 / np.sqrt(2)])
        assert out[0] == pytest.approx(0.7071, abs=1e-4)

    def test_moments(self, rng):
        pool = rng.normal(2.0, 3.0, size=37)
        out = standardize_tau(pool)
        assert abs(out.mean()) < 1e-9
        assert abs(out.var(ddof=1) - 1.0) < 1e-9

    def test_constant_pool(self):
        with pytest.raises(DegenerateVarianceError):
            standardize_tau([0.4, 0.4, 0.4])

    @given(st.floats(-10, 10), st.floats(0.01, 10), st.integers(0, 2**30))
    @settings(max_examples=80, deadline=None)
    def test_affine_invariance(self, shift, scale, seed):
        rng = np.random.default_rng(seed)
        pool = rng.normal(size=12)
        base = standardize_tau(pool)
        moved = standardize_tau(scale * pool + shift)
        assert np.allclose(base, moved, atol=1e-9)


class TestAttributeExtension:
    def test_equal_vectors(self):
        v = np.array([0.4, -0.2, 0.9])
        assert attribute_similarity(v, v) == pytest.approx(1.0)

    def test_orthogonal(self):
        assert attribute_similarity([1.0, 0.0], [0.0, 2.0]) == pytest.approx(0.0)

    def test_matches_cosine_oracle(self, rng):
        u = rng.normal(size=4)
        v = rng.normal(size=4)
        assert attribute_similarity(u, v) == cosine_similarity(u, v)

    def test_combined_signal_weights(self):
        U = np.array([[0.4, 0.1], [0.2, -0.3]])
        tau = np.array([-0.2, 0.5])
        assert np.allclose(combined_signal(U, tau, 0.0, 1.0),
                           np.array([[-0.2, -0.2], [0.5, 0.5]]))
        assert np.allclose(combined_signal(U, tau, 1.0, 0.0), U)
        assert combined_signal(np.array([[0.4]]), np.array([-0.2]), 0.5, 0.5)[0, 0] \
            == pytest.approx(0.1)

    def test_combined_signal_shape_check(self):
        with pytest.raises(DimensionError):
            combined_signal(np.zeros((2, 2)), np.zeros(3), 1.0, 1.0)

    def test_attribute_signal_container(self):
        from textdina.text_signal import AttributeSignal

        U = np.array([[0.4, 0.1], [0.2, -0.3]])
        tau = np.array([-0.2, 0.5])
        signal = AttributeSignal.combine(U, tau, a=0.5, b=0.5)
        assert np.allclose(signal.tau_star, 0.5 * U + 0.5 * tau[:, None])
        with pytest.raises(DomainError):
            AttributeSignal(U=np.array([[1.4]]), a=1.0, b=0.0)
