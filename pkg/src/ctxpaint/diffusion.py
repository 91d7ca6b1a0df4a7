"""Gaussian diffusion arithmetic on numpy images.

All functions are pure given an explicit ``np.random.Generator``. Only
:func:`loss_eps` touches the autodiff tape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericError
from .schedule import NoiseSchedule
from .tensor import Tensor, mse


@dataclass(frozen=True)
class ReverseStepParams:
    mean: np.ndarray
    variance: float


def _same_shape(a, b, what: str) -> None:
    if np.shape(a) != np.shape(b):
        raise DimensionError(f"{what}: shapes {np.shape(a)} and {np.shape(b)} differ")


def gaussian_like(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal(np.shape(x), dtype=np.float32)


def forward_step(x_prev: np.ndarray, t: int, s: NoiseSchedule, rng: np.random.Generator) -> np.ndarray:
    """One noising step: sqrt(1 - beta_t) x_{t-1} + sqrt(beta_t) eps."""
    beta = s.beta(t)
    eps = gaussian_like(x_prev, rng)
    return (math.sqrt(1.0 - beta) * x_prev + math.sqrt(beta) * eps).astype(np.float32)


def forward_marginal(x0: np.ndarray, t: int, s: NoiseSchedule, eps: np.ndarray) -> np.ndarray:
    """Jump straight from x_0 to x_t with the given noise."""
    _same_shape(x0, eps, "forward_marginal")
    ab = s.alpha_bar(t)
    return (math.sqrt(ab) * np.asarray(x0) + math.sqrt(1.0 - ab) * np.asarray(eps)).astype(
        np.float32
    )


def posterior_params(x0: np.ndarray, xt: np.ndarray, t: int, s: NoiseSchedule) -> ReverseStepParams:
    """Mean and variance of q(x_{t-1} | x_t, x_0)."""
    _same_shape(x0, xt, "posterior_params")
    beta = s.beta(t)
    ab = s.alpha_bar(t)
    ab_prev = s.alpha_bar(t - 1)
    denom = 1.0 - ab
    if denom < 1e-12:
        raise NumericError(f"1 - alpha_bar_{t} = {denom:.3g} is too small")
    c0 = math.sqrt(ab_prev) * beta / denom
    ct = math.sqrt(1.0 - beta) * (1.0 - ab_prev) / denom
    mean = c0 * np.asarray(x0, dtype=np.float64) + ct * np.asarray(xt, dtype=np.float64)
    return ReverseStepParams(mean=mean, variance=(1.0 - ab_prev) / denom * beta)


def mean_from_eps(xt: np.ndarray, eps_hat: np.ndarray, t: int, s: NoiseSchedule) -> np.ndarray:
    """Predicted posterior mean from a noise estimate."""
    _same_shape(xt, eps_hat, "mean_from_eps")
    beta = s.beta(t)
    coef = beta / math.sqrt(1.0 - s.alpha_bar(t))
    return ((np.asarray(xt) - coef * np.asarray(eps_hat)) / math.sqrt(1.0 - beta)).astype(np.float32)


def mean_from_eps_clipped(xt: np.ndarray, eps_hat: np.ndarray, t: int, s: NoiseSchedule,
                          bound: float = 1.0) -> np.ndarray:
    """Posterior mean through the implied x0 estimate, clipped to ``[-bound, bound]``.

    Equals :func:`mean_from_eps` whenever no clipping happens. Near t = T the
    plain form divides by sqrt(alpha_T), which amplifies any noise-estimate
    error; routing through a clipped x0 keeps the chain in the data range.
    """
    _same_shape(xt, eps_hat, "mean_from_eps_clipped")
    ab = s.alpha_bar(t)
    xt64 = np.asarray(xt, dtype=np.float64)
    x0 = (xt64 - math.sqrt(1.0 - ab) * np.asarray(eps_hat, dtype=np.float64)) / math.sqrt(ab)
    x0 = np.clip(x0, -bound, bound)
    return posterior_params(x0, xt64, t, s).mean.astype(np.float32)


def reverse_step(
    xt: np.ndarray, eps_hat: np.ndarray, t: int, s: NoiseSchedule, rng: np.random.Generator
) -> np.ndarray:
    """Sample x_{t-1} from the model distribution with the fixed posterior variance.

    No noise is drawn at t = 1, so the generator is left untouched there.
    """
    mean = mean_from_eps(xt, eps_hat, t, s)
    var = s.posterior_var(t)
    if t == 1 or var == 0.0:
        return mean
    return (mean + math.sqrt(var) * gaussian_like(mean, rng)).astype(np.float32)


def loss_eps(eps, eps_hat: Tensor) -> Tensor:
    """Mean squared error between true and predicted noise."""
    if isinstance(eps, Tensor):
        eps = eps.data
    return mse(eps_hat, Tensor(np.asarray(eps, dtype=eps_hat.dtype)))
