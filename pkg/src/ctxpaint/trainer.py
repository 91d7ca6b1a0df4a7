"""Noise-prediction training with AdamW, checkpointing and loss logging."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import shutil
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from .denoiser import DenoiserConfig, DenoiserModel, param_shapes, predict_eps
from .diffusion import loss_eps
from .errors import ConfigMismatchError, ContractError, FormatError, TrainingError
from .io import load_icdf, save_icdf, to_model_range
from .schedule import NoiseSchedule, from_descriptor, make_schedule
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "ctxpaint-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class OptimizerState:
    lr: float = 4e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    warmup: int = 0  # steps of linear learning-rate ramp
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def hyperparams(self) -> dict:
        return {k: getattr(self, k) for k in ("lr", "beta1", "beta2", "eps", "weight_decay", "warmup", "step")}

    def current_lr(self) -> float:
        """Learning rate for the step being taken (``step`` already incremented)."""
        if self.warmup and self.step < self.warmup:
            return self.lr * self.step / self.warmup
        return self.lr


def adamw_update(model: DenoiserModel, opt: OptimizerState) -> None:
    """Decoupled weight decay followed by a bias-corrected Adam step.

    Parameters without a gradient still decay.
    """
    opt.step += 1
    bc1 = 1.0 - opt.beta1**opt.step
    bc2 = 1.0 - opt.beta2**opt.step
    lr = opt.current_lr()
    for name, p in model.named_parameters():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = opt.m.get(name)
        v = opt.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = opt.beta1 * m + (1.0 - opt.beta1) * g
        v = opt.beta2 * v + (1.0 - opt.beta2) * (g * g)
        opt.m[name], opt.v[name] = m, v
        update = (m / bc1) / (np.sqrt(v / bc2) + opt.eps)
        p.data = (p.data * (1.0 - lr * opt.weight_decay) - lr * update).astype(p.dtype)


def _normalize_views(views) -> np.ndarray:
    return to_model_range(views)


def train_step(model: DenoiserModel, views_a, views_b, schedule: NoiseSchedule,
               opt: OptimizerState, rng: np.random.Generator) -> float:
    """One optimizer step on a batch of pairs (views in [0, 1], ``[B, C, H, W]``)."""
    x0 = _normalize_views(views_a)
    ctx = _normalize_views(views_b)
    if x0.ndim != 4 or len(x0) == 0:
        raise ContractError(f"train_step needs a non-empty [B, C, H, W] batch, got {x0.shape}")
    B = len(x0)
    t = rng.integers(1, schedule.T + 1, size=B)
    eps = rng.standard_normal(x0.shape, dtype=np.float32)
    ab = schedule.alpha_bars[t - 1].reshape(B, 1, 1, 1)
    xt = (np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps).astype(np.float32)

    model.zero_grad()
    loss = loss_eps(eps, predict_eps(xt, t, ctx, model, schedule))
    value = loss.item()
    if not math.isfinite(value):
        raise TrainingError(
            f"non-finite loss {value} at optimizer step {opt.step + 1}",
            diagnostics={
                "step": opt.step + 1,
                "loss": repr(value),
                "timesteps": t.tolist(),
                "param_norms": {n: float(np.linalg.norm(p.data)) for n, p in model.named_parameters()},
            },
        )
    loss.backward()
    adamw_update(model, opt)
    return value


def validation_loss(model: DenoiserModel, views_a, views_b, schedule: NoiseSchedule,
                    seed: int = 0, zero_context: bool = False, batch_size: int = 64) -> float:
    """Mean epsilon-loss with timesteps and noise fixed by ``seed``."""
    x0 = _normalize_views(views_a)
    ctx = _normalize_views(views_b)
    rng = np.random.default_rng(seed)
    t = rng.integers(1, schedule.T + 1, size=len(x0))
    eps = rng.standard_normal(x0.shape, dtype=np.float32)
    total = 0.0
    with no_grad():
        for i in range(0, len(x0), batch_size):
            sl = slice(i, i + batch_size)
            ab = schedule.alpha_bars[t[sl] - 1].reshape(-1, 1, 1, 1)
            xt = (np.sqrt(ab) * x0[sl] + np.sqrt(1.0 - ab) * eps[sl]).astype(np.float32)
            pred = predict_eps(xt, t[sl], ctx[sl], model, schedule, zero_context=zero_context)
            total += float(np.sum((pred.data.astype(np.float64) - eps[sl]) ** 2))
    return total / eps.size


# ------------------------------------------------------------------ checkpoints
@dataclass
class Checkpoint:
    model: DenoiserModel
    opt: OptimizerState
    schedule: NoiseSchedule
    epoch: int = 0
    rng_state: Optional[dict] = None


def save_checkpoint(path, model: DenoiserModel, opt: OptimizerState, schedule: NoiseSchedule,
                    epoch: int = 0, rng: Optional[np.random.Generator] = None) -> None:
    """Write ``path/manifest.json`` plus one ICDF file per tensor."""
    if os.path.isdir(path):
        shutil.rmtree(path)
    os.makedirs(os.path.join(path, "params"))
    os.makedirs(os.path.join(path, "optim"))
    names = list(model.params)
    for name in names:
        save_icdf(os.path.join(path, "params", name + ".icdf"), model[name].data)
        if name in opt.m:
            save_icdf(os.path.join(path, "optim", name + ".m.icdf"), opt.m[name])
            save_icdf(os.path.join(path, "optim", name + ".v.icdf"), opt.v[name])
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "parameters": names,
        "moments": sorted(opt.m),
        "step": opt.step,
        "epoch": epoch,
        "optimizer": opt.hyperparams(),
        "schedule": schedule.describe(),
        "rng_state": rng.bit_generator.state if rng is not None else None,
    }
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _load_tensor(path: str, name: str, shape: tuple) -> np.ndarray:
    if not os.path.exists(path):
        raise FormatError(f"checkpoint tensor {name!r} is missing ({path})")
    try:
        arr = load_icdf(path)
    except FormatError as exc:
        raise FormatError(f"checkpoint tensor {name!r}: {exc}") from None
    if arr.shape != tuple(shape):
        raise FormatError(f"checkpoint tensor {name!r} has shape {arr.shape}, expected {tuple(shape)}")
    return arr


def load_checkpoint(path, expected_config: Optional[DenoiserConfig] = None) -> Checkpoint:
    try:
        with open(os.path.join(path, "manifest.json")) as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise FormatError(f"{path}: no manifest.json") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}/manifest.json: invalid JSON at byte {exc.pos}") from None
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"{path}: not a ctxpaint checkpoint")
    try:
        config = DenoiserConfig.from_dict(manifest["config"])
        names = manifest["parameters"]
        moments = manifest["moments"]
        hyper = manifest["optimizer"]
        schedule = from_descriptor(manifest["schedule"])
    except (KeyError, TypeError, ContractError) as exc:
        raise FormatError(f"{path}/manifest.json: malformed ({exc})") from None
    if expected_config is not None and expected_config != config:
        diff = {
            k: (v, getattr(config, k))
            for k, v in expected_config.to_dict().items()
            if getattr(config, k) != v
        }
        raise ConfigMismatchError(f"checkpoint config differs from expected: {diff}")
    shapes = param_shapes(config)
    if list(names) != list(shapes):
        bad = next((n for n in names if n not in shapes), None) or next(
            n for n in shapes if n not in names
        )
        raise FormatError(f"{path}/manifest.json: parameter list disagrees with config at {bad!r}")

    params = {
        n: Tensor(_load_tensor(os.path.join(path, "params", n + ".icdf"), n, shapes[n]), requires_grad=True)
        for n in names
    }
    opt = OptimizerState(**hyper)
    for n in moments:
        if n not in shapes:
            raise FormatError(f"{path}/manifest.json: moment for unknown tensor {n!r}")
        opt.m[n] = _load_tensor(os.path.join(path, "optim", n + ".m.icdf"), n + ".m", shapes[n])
        opt.v[n] = _load_tensor(os.path.join(path, "optim", n + ".v.icdf"), n + ".v", shapes[n])
    return Checkpoint(DenoiserModel(config, params=params), opt, schedule,
                      manifest.get("epoch", 0), manifest.get("rng_state"))


def restore_rng(state: Optional[dict], seed: int = 0) -> np.random.Generator:
    rng = np.random.default_rng(seed)
    if state is not None:
        rng.bit_generator.state = state
    return rng


# ----------------------------------------------------------------------- loop
@dataclass
class TrainConfig:
    dataset: str
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-3
    weight_decay: float = 0.01
    warmup_steps: int = 200
    schedule: str = "laplace"
    T: int = 1000
    seed: int = 0
    checkpoint_stride: int = 10
    model: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.epochs < 0:
            raise ContractError("epochs must be >= 0")
        for name in ("batch_size", "lr", "T", "checkpoint_stride"):
            if not getattr(self, name) > 0:
                raise ContractError(f"{name} must be positive")
        if self.weight_decay < 0 or self.warmup_steps < 0:
            raise ContractError("weight_decay and warmup_steps must be >= 0")
        if self.schedule not in ("cosine", "laplace"):
            raise ContractError(f"unknown schedule {self.schedule!r}")

    @property
    def model_config(self) -> DenoiserConfig:
        return DenoiserConfig.from_dict(self.model)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ContractError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)


def train(config: TrainConfig, out_dir, arrays: Optional[tuple] = None,
          resume: Optional[str] = None) -> Checkpoint:
    """Run the epoch loop; writes ``loss_log.csv``, strided checkpoints and ``final/``.

    ``arrays`` may supply ``(views_a, views_b)`` directly instead of reading
    ``config.dataset`` from disk.
    """
    from .scenes import load_dataset

    if arrays is None:
        _, views_a, views_b = load_dataset(config.dataset)
    else:
        views_a, views_b = arrays
    n = len(views_a)
    os.makedirs(out_dir, exist_ok=True)
    schedule = make_schedule(config.schedule, config.T)
    if resume:
        ck = load_checkpoint(resume, config.model_config)
        model, opt, start = ck.model, ck.opt, ck.epoch
        rng = restore_rng(ck.rng_state, config.seed)
    else:
        model = DenoiserModel(config.model_config, seed=config.seed)
        opt = OptimizerState(lr=config.lr, weight_decay=config.weight_decay,
                             warmup=config.warmup_steps)
        rng = np.random.default_rng(config.seed)
        start = 0

    log_path = os.path.join(out_dir, "loss_log.csv")
    mode = "a" if resume and os.path.exists(log_path) else "w"
    with open(log_path, mode, newline="") as fh:
        writer = csv.writer(fh)
        if mode == "w":
            writer.writerow(["step", "epoch", "loss"])
        for epoch in range(start, config.epochs):
            order = rng.permutation(n)
            for i in range(0, n, config.batch_size):
                idx = order[i : i + config.batch_size]
                try:
                    loss = train_step(model, views_a[idx], views_b[idx], schedule, opt, rng)
                except TrainingError as exc:
                    with open(os.path.join(out_dir, "diagnostic.json"), "w") as dump:
                        json.dump(exc.diagnostics, dump, indent=1, sort_keys=True)
                    raise
                writer.writerow([opt.step, epoch + 1, f"{loss:.8f}"])
            fh.flush()
            log.info("epoch %d/%d done, last loss %.4f", epoch + 1, config.epochs, loss)
            if (epoch + 1) % config.checkpoint_stride == 0:
                save_checkpoint(os.path.join(out_dir, f"epoch_{epoch + 1:04d}"),
                                model, opt, schedule, epoch + 1, rng)
    final = os.path.join(out_dir, "final")
    save_checkpoint(final, model, opt, schedule, max(start, config.epochs), rng)
    return Checkpoint(model, opt, schedule, max(start, config.epochs), rng.bit_generator.state)
