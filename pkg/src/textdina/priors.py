"""Prior densities, including the text-informed Q-matrix prior.

Each Q entry gets an independent Bernoulli prior whose inclusion
probability is shifted on the logit scale by the item's standardised text
signal: logit(pi_jk) = logit(theta) - lambda * tau_j. The global sparsity
theta carries a Beta hyperprior; the signal strength lambda carries a
centred Gaussian prior and may be pinned to 0, which reduces the model to
the plain Bernoulli Q-prior.
"""

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import betaln

from .errors import ConfigError, DomainError
from .model import StructuralParams, logit, sigmoid

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass
class PriorConfig:
    """Hyperparameters for every prior in the joint model.

    gamma10_loss_averse keeps most prior mass on low loss-of-mastery
    probabilities by centring the gamma10 intercept at
    gamma10_intercept_mean; switching it off reverts to plain N(0,1) on all
    transition coefficients.
    """

    theta_hyper: tuple = (6.0, 4.0)
    sigma_lambda: float = 0.5
    gs_prior: tuple = (1.0, 1.0)
    gs_init_range: tuple = (0.0, 0.3)
    coeff_sd: float = 1.0
    lambda_enabled: bool = True
    gamma10_loss_averse: bool = True
    gamma10_intercept_mean: float = -3.0

    def __post_init__(self):
        a, b = self.theta_hyper
        if a <= 0 or b <= 0 or self.sigma_lambda <= 0:
            raise ConfigError("theta hyperparameters and sigma_lambda must be positive")
        if self.coeff_sd <= 0:
            raise ConfigError("coeff_sd must be positive")

    @property
    def theta_mean(self) -> float:
        a, b = self.theta_hyper
        return a / (a + b)


PRESETS = {
    # simulation profile: moderately sparse Q expected a priori
    "sim-default": PriorConfig(theta_hyper=(6.0, 4.0), sigma_lambda=0.5),
    # empirical profile: dense Q expected a priori
    "empirical-default": PriorConfig(theta_hyper=(24.0, 6.0), sigma_lambda=0.5),
}


def preset(name: str, pin_lambda: bool = False) -> PriorConfig:
    """Named prior preset; pin_lambda=True turns off the text-signal term."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {sorted(PRESETS)}")
    cfg = PRESETS[name]
    if pin_lambda:
        cfg = replace(cfg, lambda_enabled=False)
    return cfg


def q_inclusion_prob(theta, lam, tau_std):
    """Prior inclusion probability: sigmoid(logit(theta) - lambda * tau)."""
    theta = np.asarray(theta, dtype=float)
    if np.any(theta <= 0) or np.any(theta >= 1):
        raise DomainError("theta must lie strictly in (0, 1)")
    return sigmoid(logit(theta) - np.asarray(lam, dtype=float) * np.asarray(tau_std, dtype=float))


def log_prior_q(q, theta, lam, tau_std) -> float:
    """Log-mass of Q under independent Bernoulli entries with text shift.

    q is (J,K) with tau_std (J,), or (T,J,K) with tau_std (T,J). The
    admissibility truncation is enforced by the sampler, not here.
    """
    q = np.asarray(q)
    tau_std = np.asarray(tau_std, dtype=float)
    if q.ndim == 2:
        q = q[None, :, :]
        tau_std = tau_std[None, :]
    if q.ndim != 3 or tau_std.shape != q.shape[:2]:
        raise DomainError(f"q shape {q.shape} and tau shape {tau_std.shape} disagree")
    pi = q_inclusion_prob(theta, lam, tau_std)[:, :, None]
    return float(np.sum(q * np.log(pi) + (1 - q) * np.log1p(-pi)))


def log_prior_theta(theta: float, config: PriorConfig) -> float:
    """Beta(a, b) log-density of the global sparsity parameter."""
    a, b = config.theta_hyper
    if not 0.0 < theta < 1.0:
        return -np.inf
    return (a - 1.0) * math.log(theta) + (b - 1.0) * math.log1p(-theta) - betaln(a, b)


def log_prior_lambda(lam: float, config: PriorConfig) -> float:
    """Centred Gaussian log-density of the text-signal strength."""
    sd = config.sigma_lambda
    return -0.5 * (lam / sd) ** 2 - math.log(sd) - _LOG_SQRT_2PI


def _log_normal(x, mean, sd):
    x = np.asarray(x, dtype=float)
    return np.sum(-0.5 * ((x - mean) / sd) ** 2 - math.log(sd) - _LOG_SQRT_2PI)


def log_prior_coeffs(params: StructuralParams, config: PriorConfig) -> float:
    """Gaussian log-density of all regression/transition coefficients."""
    sd = config.coeff_sd
    total = _log_normal(params.beta0, 0.0, sd)
    total += _log_normal(params.beta_z, 0.0, sd)
    total += _log_normal(params.gamma01, 0.0, sd)
    mu10 = config.gamma10_intercept_mean if config.gamma10_loss_averse else 0.0
    total += _log_normal(params.gamma10[:, 0], mu10, sd)
    total += _log_normal(params.gamma10[:, 1:], 0.0, sd)
    return float(total)


def log_prior_item_params(g, s, config: PriorConfig = PriorConfig()) -> float:
    """Log-density of guessing/slipping under their Beta prior (0 for Beta(1,1))."""
    g = np.asarray(g, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(g <= 0) or np.any(g >= 1) or np.any(s <= 0) or np.any(s >= 1):
        return -np.inf
    a, b = config.gs_prior
    if (a, b) == (1.0, 1.0):
        return 0.0
    both = np.concatenate([g.ravel(), s.ravel()])
    return float(np.sum((a - 1) * np.log(both) + (b - 1) * np.log1p(-both)) - both.size * betaln(a, b))
