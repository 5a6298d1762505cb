"""Reproducible random-number streams.

All randomness in the package flows through Philox, a counter-based 64-bit
bit generator whose output is identical across platforms and numpy releases
that ship it. Streams are split by a path of non-negative integers
(e.g. ``(chain, block)``) hashed into the Philox key through
``SeedSequence(entropy, spawn_key=path)``, so any two distinct paths yield
statistically independent, non-overlapping streams. Within a stream,
consumption is strictly sequential, which makes every run a pure function
of ``(seed, path structure)``.
"""

import numpy as np

# Block identifiers for the sampler's per-chain substreams. Fixed numbers,
# not an enum: the values are part of the reproducibility contract.
BLOCK_INIT = 0
BLOCK_ALPHA = 1
BLOCK_QROWS = 2
BLOCK_ITEMS = 3
BLOCK_COEFFS = 4
BLOCK_HYPER = 5
BLOCK_SWAP = 6


def substream(seed: int, *path: int) -> np.random.Generator:
    """Return the Philox generator for ``(seed, *path)``.

    Distinct paths give disjoint streams; the same path always reproduces
    the same stream.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))


def chain_streams(seed: int, chain: int) -> dict:
    """All named substreams used by one MCMC chain."""
    return {
        "init": substream(seed, chain, BLOCK_INIT),
        "alpha": substream(seed, chain, BLOCK_ALPHA),
        "qrows": substream(seed, chain, BLOCK_QROWS),
        "items": substream(seed, chain, BLOCK_ITEMS),
        "coeffs": substream(seed, chain, BLOCK_COEFFS),
        "hyper": substream(seed, chain, BLOCK_HYPER),
        "swap": substream(seed, chain, BLOCK_SWAP),
    }
