"""Semantic discriminability signal from item-text embeddings.

For each item the stem embedding is compared with the correct-option
embedding (similarity S+) and with each distractor embedding (mean
similarity S-); the raw signal is their difference. High values mean the
correct option stands out semantically from the distractors. Signals are
standardised over a pool before entering the Q-matrix prior.

Embeddings are consumed as data; no encoder runs here.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateVarianceError, DimensionError, DomainError


@dataclass
class ItemEmbeddings:
    """Embeddings of one item's stem, correct option, and distractors."""

    stem: np.ndarray
    correct: np.ndarray
    distractors: list
    item_id: str = ""
    time_index: int = 1

    def __post_init__(self):
        self.stem = np.asarray(self.stem, dtype=float)
        self.correct = np.asarray(self.correct, dtype=float)
        self.distractors = [np.asarray(d, dtype=float) for d in self.distractors]
        dim = self.stem.shape[0]
        if dim < 2:
            raise DimensionError("embedding dimension must be >= 2")
        if len(self.distractors) < 1:
            raise DimensionError(f"item {self.item_id!r} needs at least one distractor")
        for vec in [self.correct, *self.distractors]:
            if vec.shape != (dim,):
                raise DimensionError(f"item {self.item_id!r} mixes embedding dimensions")
        for vec in [self.stem, self.correct, *self.distractors]:
            if np.linalg.norm(vec) == 0.0:
                raise DomainError(f"item {self.item_id!r} contains a zero-norm embedding")


@dataclass
class TextSignal:
    """Raw and standardised discriminability signal for one item."""

    s_plus: float
    s_minus: float
    tau_raw: float
    tau_std: float = float("nan")
    item_id: str = ""
    time_index: int = 1


def cosine_similarity(u, v) -> float:
    """cos(u, v), clamped into [-1, 1] against floating-point rounding."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise DimensionError(f"vector shapes differ: {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise DomainError("cosine similarity undefined for zero-norm vectors")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def compute_tau(item: ItemEmbeddings) -> TextSignal:
    """Raw signal: stem-correct similarity minus mean stem-distractor similarity."""
    s_plus = cosine_similarity(item.stem, item.correct)
    s_minus = float(np.mean([cosine_similarity(item.stem, d) for d in item.distractors]))
    return TextSignal(
        s_plus=s_plus,
        s_minus=s_minus,
        tau_raw=s_plus - s_minus,
        item_id=item.item_id,
        time_index=item.time_index,
    )


def standardize_tau(pool):
    """Standardise a pool of raw signals to mean 0, variance 1 (sd with n-1)."""
    pool = np.asarray(pool, dtype=float)
    if pool.ndim != 1 or pool.size < 2:
        raise DimensionError("standardisation pool must hold at least two values")
    sd = pool.std(ddof=1)
    if sd == 0.0 or np.ptp(pool) == 0.0:
        raise DegenerateVarianceError("all pooled signal values are identical")
    return (pool - pool.mean()) / sd


@dataclass
class AttributeSignal:
    """Item-attribute extension: similarity matrix and its weighted combination.

    Available when attribute descriptions have embeddings; the fitting core
    consumes only the item-level signal, so this stays an API-level feature.
    """

    U: np.ndarray  # (J, K) stem-vs-attribute-description cosines
    a: float
    b: float
    tau_star: np.ndarray = None  # (J, K) combined signal

    def __post_init__(self):
        self.U = np.asarray(self.U, dtype=float)
        if self.U.ndim != 2:
            raise DimensionError("U must be (J, K)")
        if np.any(np.abs(self.U) > 1.0 + 1e-12):
            raise DomainError("U entries must be cosines in [-1, 1]")

    @classmethod
    def combine(cls, U, tau, a: float, b: float) -> "AttributeSignal":
        signal = cls(U=U, a=a, b=b)
        signal.tau_star = combined_signal(signal.U, tau, a, b)
        return signal


def attribute_similarity(stem, attribute_desc) -> float:
    """Item-attribute signal: cosine of stem vs attribute-description embedding."""
    return cosine_similarity(stem, attribute_desc)


def combined_signal(U, tau, a: float, b: float):
    """Weighted item-attribute signal a*U_jk + b*tau_j (tau broadcast over k)."""
    U = np.asarray(U, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if not (np.isfinite(a) and np.isfinite(b)):
        raise DomainError("weights a and b must be finite")
    if U.ndim != 2 or tau.shape != (U.shape[0],):
        raise DimensionError(f"U {U.shape} and tau {tau.shape} disagree on item count")
    return a * U + b * tau[:, None]
