"""Mask-conditioned sampling with resampling jumps.

At every denoising transition the known pixels are re-drawn from the forward
marginal of the original image while the masked pixels come from the model's
reverse step. Re-noising transitions push the combined sample back up the
chain so the two regions can harmonize.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .denoiser import DenoiserModel, predict_eps
from .diffusion import forward_step, mean_from_eps, mean_from_eps_clipped
from .errors import ContractError, DimensionError
from .schedule import NoiseSchedule
from .tensor import no_grad


@dataclass(frozen=True)
class JumpSchedule:
    T: int
    jump_length: int
    n_jumps: int
    transitions: tuple  # -1 for a denoise step, +jump_length for a re-noise jump

    def states(self) -> list:
        """Every visited timestep, expanding each jump into unit re-noise steps."""
        out = [self.T]
        t = self.T
        for step in self.transitions:
            if step < 0:
                t -= 1
                out.append(t)
            else:
                for _ in range(step):
                    t += 1
                    out.append(t)
        return out

    @property
    def denoise_count(self) -> int:
        return sum(1 for s in self.transitions if s < 0)

    @property
    def renoise_count(self) -> int:
        return sum(s for s in self.transitions if s > 0)


def build_jump_schedule(T: int, jump_length: int = 10, n_jumps: int = 10) -> JumpSchedule:
    """Descend from T to 0, revisiting every ``jump_length``-th site ``n_jumps - 1`` times.

    Sites are the states ``1, 1 + L, 1 + 2L, ...`` strictly below ``T - L + 1``;
    on arrival at a site with cycles left, the chain jumps back up by ``L``.
    """
    if T < 1 or jump_length < 1 or n_jumps < 1:
        raise ContractError(
            f"T, jump_length and n_jumps must be >= 1 (got {T}, {jump_length}, {n_jumps})"
        )
    remaining = {s: n_jumps - 1 for s in range(1, T - jump_length + 1, jump_length)}
    transitions = []
    t = T
    while t >= 1:
        transitions.append(-1)
        t -= 1
        if remaining.get(t, 0) > 0:
            remaining[t] -= 1
            transitions.append(jump_length)
            t += jump_length
    return JumpSchedule(T, jump_length, n_jumps, tuple(transitions))


@dataclass
class InpaintTask:
    x0_known: np.ndarray  # [C, H, W] in model range [-1, 1]
    mask: np.ndarray  # [H, W] or [C, H, W]; 1 = unknown
    ctx: np.ndarray  # [C, H, W]
    schedule: NoiseSchedule
    jump_length: int = 1
    n_jumps: int = 1
    seed: int = 0
    strict_paper: bool = False
    # route the masked-region mean through an x0 estimate clipped to [-1, 1]
    clip_x0: bool = True
    # step index handed to the denoiser for each sampling step (identity if None)
    model_steps: Optional[np.ndarray] = None

    def __post_init__(self):
        self.x0_known = np.asarray(self.x0_known, dtype=np.float32)
        self.ctx = np.asarray(self.ctx, dtype=np.float32)
        mask = np.asarray(self.mask)
        if mask.ndim == 2 and mask.shape == self.x0_known.shape[1:]:
            mask = np.broadcast_to(mask, self.x0_known.shape)
        if mask.shape != self.x0_known.shape or self.ctx.shape != self.x0_known.shape:
            raise DimensionError(
                f"image {self.x0_known.shape}, mask {np.shape(self.mask)} and "
                f"context {self.ctx.shape} must share a shape"
            )
        if not np.isin(mask, (0, 1)).all():
            raise ContractError("mask values must be 0 or 1")
        self.mask = mask.astype(bool)

    def jump_schedule(self) -> JumpSchedule:
        return build_jump_schedule(self.schedule.T, self.jump_length, self.n_jumps)


@dataclass
class InpaintResult:
    images: np.ndarray
    model_evals: int
    jump_schedule: JumpSchedule
    skipped_jumps: int = 0


class _Chain:
    """Batched state shared by tasks with identical schedule settings."""

    def __init__(self, tasks: Sequence[InpaintTask], model: DenoiserModel,
                 rngs: Optional[Sequence[np.random.Generator]] = None):
        first = tasks[0]
        for task in tasks[1:]:
            if (task.schedule is not first.schedule and task.schedule != first.schedule) or (
                task.jump_length, task.n_jumps, task.strict_paper, task.clip_x0
            ) != (first.jump_length, first.n_jumps, first.strict_paper, first.clip_x0):
                raise ContractError("batched tasks must share schedule and jump settings")
        self.tasks = tasks
        self.model = model
        self.schedule = first.schedule
        self.strict = first.strict_paper
        self.clip = first.clip_x0
        self.x0 = np.stack([t.x0_known for t in tasks])
        self.mask = np.stack([t.mask for t in tasks])
        self.ctx = np.stack([t.ctx for t in tasks])
        self.rngs = list(rngs) if rngs is not None else [np.random.default_rng(t.seed) for t in tasks]
        steps = first.model_steps
        self.model_steps = np.arange(self.schedule.T + 1) if steps is None else np.asarray(steps)
        self.model_evals = 0

    def noise(self) -> np.ndarray:
        shape = self.x0.shape[1:]
        return np.stack([r.standard_normal(shape, dtype=np.float32) for r in self.rngs])

    def eps(self, xt: np.ndarray, t: int) -> np.ndarray:
        self.model_evals += 1
        with no_grad():
            return predict_eps(xt, int(self.model_steps[t]), self.ctx, self.model).data

    def known_sample(self, t: int) -> np.ndarray:
        s = self.schedule
        if self.strict:
            # literal form: mean sqrt(alpha_bar_t), variance 1 - alpha_t
            mean_coef, var = math.sqrt(s.alpha_bar(t)), 1.0 - s.alpha(t)
        else:
            mean_coef, var = math.sqrt(s.alpha_bar(t - 1)), 1.0 - s.alpha_bar(t - 1)
        return (mean_coef * self.x0 + math.sqrt(var) * self.noise()).astype(np.float32)

    def denoise(self, xt: np.ndarray, t: int) -> np.ndarray:
        s = self.schedule
        mean = mean_from_eps_clipped if self.clip else mean_from_eps
        masked = mean(xt, self.eps(xt, t), t, s)
        var = s.posterior_var(t)
        if t > 1 and var > 0.0:
            masked = (masked + math.sqrt(var) * self.noise()).astype(np.float32)
        known = self.known_sample(t)
        return np.where(self.mask, masked, known)

    def renoise(self, x: np.ndarray, t_from: int, t_to: int) -> np.ndarray:
        return np.stack([
            renoise_jump(x[i], t_from, t_to, self.schedule, rng) for i, rng in enumerate(self.rngs)
        ])


def conditioned_reverse_step(task: InpaintTask, xt: np.ndarray, t: int, model: DenoiserModel,
                             rng: np.random.Generator) -> np.ndarray:
    """One denoising transition t -> t-1 combining known and generated pixels.

    Noise is drawn in a fixed order: the reverse-step noise for the masked
    region (skipped at t = 1), then the forward noise for the known region.
    """
    if t < 1:
        raise ContractError(f"conditioned step needs t >= 1, got {t}")
    if np.shape(xt) != task.x0_known.shape:
        raise DimensionError(f"x_t shape {np.shape(xt)} != task image {task.x0_known.shape}")
    chain = _Chain([task], model, rngs=[rng])
    return chain.denoise(np.asarray(xt, dtype=np.float32)[None], t)[0]


def renoise_jump(x: np.ndarray, t_from: int, t_to: int, schedule: NoiseSchedule,
                 rng: np.random.Generator) -> np.ndarray:
    """Apply forward steps t_from+1 .. t_to."""
    if t_to <= t_from:
        raise ContractError(f"re-noise jump must go up (t_from={t_from}, t_to={t_to})")
    for t in range(t_from + 1, t_to + 1):
        x = forward_step(x, t, schedule, rng)
    return x


JumpPolicy = Callable[[int, np.ndarray], bool]


def inpaint_batch(tasks: Sequence[InpaintTask], model: DenoiserModel,
                  on_state: Optional[Callable[[int, np.ndarray], None]] = None,
                  jump_policy: Optional[JumpPolicy] = None) -> InpaintResult:
    """Run the full jump schedule for several tasks in lock-step.

    ``on_state(t, x)`` sees the batch after every transition. ``jump_policy(t, x)``
    may veto a scheduled re-noise jump at state ``t``; the denoise steps that
    would have retraced it are skipped as well.
    """
    if not tasks:
        raise ContractError("no tasks to inpaint")
    cfg = model.config
    expected = (cfg.channels, cfg.image_size, cfg.image_size)
    for task in tasks:
        if task.x0_known.shape != expected:
            raise DimensionError(f"task image {task.x0_known.shape} != model's {expected}")
    chain = _Chain(tasks, model)
    sched = tasks[0].jump_schedule()
    x = chain.noise()
    t = sched.T
    if on_state is not None:
        on_state(t, x)
    skip = 0
    skipped_jumps = 0
    for step in sched.transitions:
        if skip:
            skip -= 1
            continue
        if step < 0:
            x = chain.denoise(x, t)
            t -= 1
        else:
            if jump_policy is not None and not jump_policy(t, x):
                skip = step
                skipped_jumps += 1
                continue
            x = chain.renoise(x, t, t + step)
            t += step
        if on_state is not None:
            on_state(t, x)
    images = np.where(chain.mask, x, chain.x0)
    return InpaintResult(images, chain.model_evals, sched, skipped_jumps)


def inpaint(task: InpaintTask, model: DenoiserModel, **kwargs) -> np.ndarray:
    """Inpaint one image; the known region of the result equals ``task.x0_known``."""
    return inpaint_batch([task], model, **kwargs).images[0]


def smoothness_policy(threshold: float) -> JumpPolicy:
    """Jump only while the mean absolute neighbour difference exceeds ``threshold``."""

    def policy(t: int, x: np.ndarray) -> bool:
        dx = np.abs(np.diff(x, axis=-1)).mean()
        dy = np.abs(np.diff(x, axis=-2)).mean()
        return 0.5 * (dx + dy) > threshold

    return policy
