"""Noise schedules: cosine and Laplace, plus timestep alignment between schedules.

Timesteps are 1-indexed. Arrays stored on :class:`NoiseSchedule` hold entry
``t - 1`` for step ``t``; :meth:`NoiseSchedule.alpha_bar` accepts ``t = 0``
and returns 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError

BETA_MIN = 1e-8
BETA_MAX = 0.999
SNR_CAP = 1e12
COSINE_OFFSET = 0.008


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    kind: str
    T: int
    betas: np.ndarray
    params: dict = field(default_factory=dict)
    alphas: np.ndarray = field(init=False)
    alpha_bars: np.ndarray = field(init=False)
    posterior_vars: np.ndarray = field(init=False)

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.shape != (self.T,):
            raise ContractError(f"expected {self.T} betas, got shape {betas.shape}")
        if np.any(betas <= 0) or np.any(betas >= 1):
            raise ContractError("betas must lie strictly inside (0, 1)")
        alphas = 1.0 - betas
        alpha_bars = np.cumprod(alphas)
        prev = np.concatenate([[1.0], alpha_bars[:-1]])
        posterior = (1.0 - prev) / (1.0 - alpha_bars) * betas
        for name, value in (
            ("betas", betas),
            ("alphas", alphas),
            ("alpha_bars", alpha_bars),
            ("posterior_vars", posterior),
        ):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    def _check(self, t: int, allow_zero: bool = False) -> int:
        t = int(t)
        lo = 0 if allow_zero else 1
        if not lo <= t <= self.T:
            raise ContractError(f"timestep {t} outside [{lo}, {self.T}]")
        return t

    def beta(self, t: int) -> float:
        return float(self.betas[self._check(t) - 1])

    def alpha(self, t: int) -> float:
        return float(self.alphas[self._check(t) - 1])

    def alpha_bar(self, t: int) -> float:
        t = self._check(t, allow_zero=True)
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])

    def posterior_var(self, t: int) -> float:
        return float(self.posterior_vars[self._check(t) - 1])

    def log_snr(self) -> np.ndarray:
        """log(alpha_bar / (1 - alpha_bar)) for t = 1..T."""
        ab = self.alpha_bars
        return np.log(ab) - np.log1p(-ab)

    def describe(self) -> dict:
        return {"kind": self.kind, "T": self.T, **self.params}

    def __eq__(self, other):
        if not isinstance(other, NoiseSchedule):
            return NotImplemented
        return self.describe() == other.describe() and np.array_equal(self.betas, other.betas)

    __hash__ = None


def _betas_from_alpha_bars(alpha_bars: np.ndarray) -> np.ndarray:
    prev = np.concatenate([[1.0], alpha_bars[:-1]])
    with np.errstate(divide="ignore", invalid="ignore"):
        betas = 1.0 - alpha_bars / prev
    betas = np.where(np.isfinite(betas), betas, BETA_MAX)
    return np.clip(betas, BETA_MIN, BETA_MAX)


def cosine_alpha_bar(u, s: float = COSINE_OFFSET):
    """Continuous cosine alpha-bar at normalized time ``u = t / T``."""
    f = np.cos((np.asarray(u, dtype=np.float64) + s) / (1.0 + s) * math.pi / 2) ** 2
    f0 = math.cos(s / (1.0 + s) * math.pi / 2) ** 2
    return f / f0


def cosine_schedule(T: int, s: float = COSINE_OFFSET) -> NoiseSchedule:
    if int(T) < 2:
        raise ContractError(f"cosine schedule needs T >= 2, got {T}")
    T = int(T)
    alpha_bars = cosine_alpha_bar(np.arange(1, T + 1) / T, s)
    return NoiseSchedule("cosine", T, _betas_from_alpha_bars(alpha_bars), {"s": s})


def laplace_log_snr(u, mu: float = 0.0, b: float = 0.5):
    """Laplace quantile log-SNR; infinite at ``u`` in {0, 1}."""
    u = np.asarray(u, dtype=np.float64)
    with np.errstate(divide="ignore"):
        return mu - b * np.sign(0.5 - u) * np.log(1.0 - 2.0 * np.abs(u - 0.5))


def laplace_schedule(T: int, mu: float = 0.0, b: float = 0.5) -> NoiseSchedule:
    if int(T) < 2:
        raise ContractError(f"Laplace schedule needs T >= 2, got {T}")
    if not b > 0:
        raise ContractError(f"Laplace scale b must be positive, got {b}")
    T = int(T)
    lam = laplace_log_snr(np.arange(1, T + 1) / T, mu, b)
    alpha_bars = 1.0 / (1.0 + np.exp(-lam))
    return NoiseSchedule("laplace", T, _betas_from_alpha_bars(alpha_bars), {"mu": mu, "b": b})


def make_schedule(kind: str, T: int, **params) -> NoiseSchedule:
    if kind == "cosine":
        return cosine_schedule(T, **params)
    if kind == "laplace":
        return laplace_schedule(T, **params)
    raise ContractError(f"unknown schedule kind {kind!r}")


def from_descriptor(desc: dict) -> NoiseSchedule:
    desc = dict(desc)
    return make_schedule(desc.pop("kind"), desc.pop("T"), **desc)


def snr(s: NoiseSchedule, t: int) -> float:
    ab = s.alpha_bar(s._check(t))
    if ab >= 1.0:
        return SNR_CAP
    return min(ab / (1.0 - ab), SNR_CAP)


def match_timesteps(sampling: NoiseSchedule, trained: NoiseSchedule) -> np.ndarray:
    """Map each sampling step to the trained step with the nearest log-SNR.

    Entry ``t`` (1..T of ``sampling``) is the timestep the denoiser should be
    queried with; entry 0 is unused. Identical schedules map to the identity.
    """
    if sampling == trained:
        return np.arange(sampling.T + 1)
    target = sampling.log_snr()
    ref = trained.log_snr()
    # ref is decreasing; search on the reversed (increasing) copy
    rev = ref[::-1]
    pos = np.clip(np.searchsorted(rev, target), 1, len(rev) - 1)
    left, right = rev[pos - 1], rev[pos]
    pick = np.where(np.abs(target - left) <= np.abs(right - target), pos - 1, pos)
    steps = trained.T - pick
    # both terminal steps are shaped by the beta clamp; pair them directly
    steps[-1] = trained.T
    return np.concatenate([[0], steps]).astype(np.int64)


def dump_csv(s: NoiseSchedule) -> str:
    lines = ["t,beta,alpha_bar,snr,posterior_var"]
    for t in range(1, s.T + 1):
        lines.append(
            f"{t},{s.beta(t):.10g},{s.alpha_bar(t):.10g},{snr(s, t):.10g},{s.posterior_var(t):.10g}"
        )
    return "\n".join(lines) + "\n"
