"""Rank-normalised split R-hat and bulk effective sample size.

Draws are split into half-chains, pooled ranks are mapped through the
normal quantile function (Blom offsets), and the classic between/within
variance ratio is computed on the transformed draws. The reported R-hat is
the larger of the bulk statistic and the folded statistic (absolute
deviations from the pooled median), so both location and scale
disagreements between chains are caught. ESS uses Geyer's initial monotone
positive sequence on the combined autocorrelations.
"""

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata

from .errors import DiagnosticsError


def _validate(draws):
    draws = np.asarray(draws, dtype=float)
    if draws.ndim != 2:
        raise DiagnosticsError(f"draws must be (chains, iterations), got {draws.shape}")
    m, n = draws.shape
    if m < 2:
        raise DiagnosticsError("diagnostics need at least 2 chains")
    if n < 4:
        raise DiagnosticsError("diagnostics need at least 4 kept draws per chain")
    if np.ptp(draws) == 0.0:
        raise DiagnosticsError("zero variance: all draws are identical")
    return draws


def _split_chains(draws):
    half = draws.shape[1] // 2
    return np.vstack([draws[:, :half], draws[:, half : 2 * half]])


def _rank_normalize(x):
    ranks = rankdata(x, method="average").reshape(x.shape)
    return ndtri((ranks - 0.375) / (x.size + 0.25))


def _basic_rhat(z):
    m, n = z.shape
    chain_means = z.mean(axis=1)
    within = z.var(axis=1, ddof=1).mean()
    between = n * chain_means.var(ddof=1)
    if within == 0.0:
        return np.inf
    var_plus = (n - 1) / n * within + between / n
    return float(np.sqrt(var_plus / within))


def rhat(draws) -> float:
    """Rank-normalised split R-hat of one scalar parameter.

    draws is (chains, iterations). Returns max(bulk, folded); values near 1
    indicate the chains agree in both location and spread.
    """
    draws = _validate(draws)
    z = _split_chains(draws)
    bulk = _basic_rhat(_rank_normalize(z))
    folded = _basic_rhat(_rank_normalize(np.abs(z - np.median(z))))
    return max(bulk, folded)


def _autocovariance(x):
    """Biased (1/n) autocovariances of one chain via FFT."""
    n = x.shape[0]
    xc = x - x.mean()
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(xc, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n].real
    return acov / n


def ess(draws) -> float:
    """Bulk effective sample size of one scalar parameter."""
    draws = _validate(draws)
    z = _rank_normalize(_split_chains(draws))
    m, n = z.shape
    acov = np.array([_autocovariance(z[c]) for c in range(m)])
    acov_t = acov.mean(axis=0)
    mean_var = (acov[:, 0] * n / (n - 1)).mean()
    var_plus = mean_var * (n - 1) / n
    if m > 1:
        var_plus += z.mean(axis=1).var(ddof=1)
    if var_plus == 0.0:
        raise DiagnosticsError("zero variance: cannot estimate ESS")

    # Geyer's initial positive sequence over paired autocorrelations
    rho = np.zeros(n + 2)
    rho[0] = 1.0
    rho_even = 1.0
    rho_odd = 1.0 - (mean_var - acov_t[1]) / var_plus
    rho[1] = rho_odd
    s = 1
    while s < n - 4 and rho_even + rho_odd > 0:
        rho_even = 1.0 - (mean_var - acov_t[s + 1]) / var_plus
        rho_odd = 1.0 - (mean_var - acov_t[s + 2]) / var_plus
        if rho_even + rho_odd >= 0:
            rho[s + 1] = rho_even
            rho[s + 2] = rho_odd
        s += 2
    max_s = s
    if rho_even > 0:
        rho[max_s + 1] = rho_even
    # convert to an initial monotone sequence
    for t in range(1, max_s - 2, 2):
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0
            rho[t + 2] = rho[t + 1]
    total = m * n
    tau = max(-1.0 + 2.0 * rho[:max_s].sum() + rho[max_s + 1], 1e-12)
    return float(min(total / tau, total * np.log10(total)))
