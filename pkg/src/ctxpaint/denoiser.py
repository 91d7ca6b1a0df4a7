"""Two-image ViT noise predictor.

The noisy target and the clean context image are patchified and encoded by
one shared transformer encoder. A decoder of self-attention, cross-attention
(queries from the target stream, keys/values from the context stream) and MLP
blocks maps the target tokens back to per-patch noise estimates.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from .errors import ContractError, DimensionError
from .tensor import Tensor, concat, gelu, layer_norm, softmax


@dataclass(frozen=True)
class DenoiserConfig:
    image_size: int = 32
    patch_size: int = 4
    channels: int = 3
    embed_dim: int = 128
    enc_depth: int = 4
    dec_depth: int = 3
    enc_heads: int = 4
    dec_heads: int = 4
    mlp_ratio: int = 4
    time_embed_dim: int = 128
    # None keeps the decoder as wide as the encoder
    decoder_dim: Optional[int] = None

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if value is not None and (not isinstance(value, int) or value <= 0):
                raise ContractError(f"{f.name} must be a positive integer, got {value!r}")
        if self.image_size % self.patch_size:
            raise ContractError(
                f"image_size {self.image_size} not divisible by patch_size {self.patch_size}"
            )
        if self.embed_dim % self.enc_heads:
            raise ContractError(f"embed_dim {self.embed_dim} not divisible by enc_heads")
        if self.dec_width % self.dec_heads:
            raise ContractError(f"decoder width {self.dec_width} not divisible by dec_heads")
        if self.time_embed_dim % 2:
            raise ContractError("time_embed_dim must be even")

    @property
    def dec_width(self) -> int:
        return self.decoder_dim or self.embed_dim

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def patch_dim(self) -> int:
        return self.channels * self.patch_size**2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiserConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ContractError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def paper(cls) -> "DenoiserConfig":
        """256px images, 8px patches, 12/8 blocks with 12/16 heads."""
        return cls(
            image_size=256, patch_size=8, channels=3, embed_dim=768,
            enc_depth=12, dec_depth=8, enc_heads=12, dec_heads=16,
            mlp_ratio=4, time_embed_dim=256,
        )


def param_shapes(config: DenoiserConfig) -> dict:
    """Ordered ``name -> shape`` for every parameter of a model with this config."""
    D, Dd, P, N = config.embed_dim, config.dec_width, config.patch_dim, config.num_patches
    hidden_e, hidden_d = config.mlp_ratio * D, config.mlp_ratio * Dd
    shapes = {
        "patch_embed.w": (P, D),
        "patch_embed.b": (D,),
        "pos_embed.target": (N, D),
        "pos_embed.context": (N, D),
    }
    for i in range(config.enc_depth):
        p = f"enc.{i}."
        shapes.update({
            p + "norm1.g": (D,), p + "norm1.b": (D,),
            p + "attn.qkv.w": (D, 3 * D), p + "attn.qkv.b": (3 * D,),
            p + "attn.proj.w": (D, D), p + "attn.proj.b": (D,),
            p + "norm2.g": (D,), p + "norm2.b": (D,),
            p + "mlp.fc1.w": (D, hidden_e), p + "mlp.fc1.b": (hidden_e,),
            p + "mlp.fc2.w": (hidden_e, D), p + "mlp.fc2.b": (D,),
        })
    shapes.update({"enc_norm.g": (D,), "enc_norm.b": (D,)})
    if Dd != D:
        shapes.update({"dec_embed.w": (D, Dd), "dec_embed.b": (Dd,)})
    shapes.update({
        "time.fc1.w": (config.time_embed_dim, Dd), "time.fc1.b": (Dd,),
        "time.fc2.w": (Dd, Dd), "time.fc2.b": (Dd,),
    })
    for i in range(config.dec_depth):
        p = f"dec.{i}."
        shapes.update({
            p + "norm1.g": (Dd,), p + "norm1.b": (Dd,),
            p + "self.qkv.w": (Dd, 3 * Dd), p + "self.qkv.b": (3 * Dd,),
            p + "self.proj.w": (Dd, Dd), p + "self.proj.b": (Dd,),
            p + "norm2.g": (Dd,), p + "norm2.b": (Dd,),
            p + "norm_ctx.g": (Dd,), p + "norm_ctx.b": (Dd,),
            p + "cross.q.w": (Dd, Dd), p + "cross.q.b": (Dd,),
            p + "cross.kv.w": (Dd, 2 * Dd), p + "cross.kv.b": (2 * Dd,),
            p + "cross.proj.w": (Dd, Dd), p + "cross.proj.b": (Dd,),
            p + "norm3.g": (Dd,), p + "norm3.b": (Dd,),
            p + "mlp.fc1.w": (Dd, hidden_d), p + "mlp.fc1.b": (hidden_d,),
            p + "mlp.fc2.w": (hidden_d, Dd), p + "mlp.fc2.b": (Dd,),
        })
    shapes.update({
        "dec_norm.g": (Dd,), "dec_norm.b": (Dd,),
        "head.w": (Dd, P), "head.b": (P,),
    })
    return shapes


def param_count(config: DenoiserConfig) -> int:
    """Closed-form parameter count."""
    D, Dd, P, N = config.embed_dim, config.dec_width, config.patch_dim, config.num_patches
    r, E = config.mlp_ratio, config.time_embed_dim
    enc_block = 4 * D + (3 * D * D + 3 * D) + (D * D + D) + (2 * r * D * D + r * D + D)
    dec_block = (
        8 * Dd
        + (3 * Dd * Dd + 3 * Dd) + (Dd * Dd + Dd)
        + (Dd * Dd + Dd) + (2 * Dd * Dd + 2 * Dd) + (Dd * Dd + Dd)
        + (2 * r * Dd * Dd + r * Dd + Dd)
    )
    total = P * D + D + 2 * N * D + config.enc_depth * enc_block + 2 * D
    if Dd != D:
        total += D * Dd + Dd
    total += E * Dd + Dd + Dd * Dd + Dd
    total += config.dec_depth * dec_block + 2 * Dd + Dd * P + P
    return total


def _trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


def sincos_2d(grid: int, dim: int) -> np.ndarray:
    """Fixed 2-D sine-cosine table ``[grid * grid, dim]``; half the width per axis."""
    if dim % 4:
        raise ContractError(f"sin-cos table width must be divisible by 4, got {dim}")
    omega = 1.0 / 10000 ** (np.arange(dim // 4) / (dim // 4))
    rows, cols = np.meshgrid(np.arange(grid), np.arange(grid), indexing="ij")

    def axis(pos):
        angles = pos.reshape(-1, 1) * omega
        return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)

    return np.concatenate([axis(rows), axis(cols)], axis=1)


def init_params(config: DenoiserConfig, seed: int = 0, dtype=np.float32) -> dict:
    """Truncated-normal weights, zero biases and head, unit norm gains.

    Both positional tables start from the same sin-cos grid: they remain
    separate learned parameters, but a target patch and the context patch at
    the same location begin with matching codes.
    """
    rng = np.random.default_rng(seed)
    grid = config.image_size // config.patch_size
    params = {}
    for name, shape in param_shapes(config).items():
        if name.startswith("pos_embed."):
            value = sincos_2d(grid, shape[1])
        elif name.startswith("head.") or name.endswith(".b"):
            value = np.zeros(shape)
        elif name.endswith(".g"):
            value = np.ones(shape)
        else:
            value = _trunc_normal(rng, shape)
        params[name] = Tensor(value.astype(dtype), requires_grad=True)
    return params


class DenoiserModel:
    """Parameter container for the two-stream denoiser."""

    def __init__(self, config: DenoiserConfig = DenoiserConfig(), seed: int = 0,
                 dtype=np.float32, params: Optional[dict] = None):
        self.config = config
        if params is None:
            params = init_params(config, seed, dtype)
        expected = param_shapes(config)
        if list(params) != list(expected):
            raise ContractError("parameter names do not match the config")
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise DimensionError(f"{name}: shape {params[name].shape} != {shape}")
        self.params = params

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def parameters(self) -> list:
        return list(self.params.values())

    def named_parameters(self):
        return self.params.items()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    @property
    def dtype(self):
        return self.params["patch_embed.w"].dtype


# ----------------------------------------------------------------- patch layout
def patchify(img, patch_size: int) -> Tensor:
    """``[C, H, W]`` (or batched ``[B, C, H, W]``) to ``[N, C*p*p]`` tokens, row-major."""
    img = img if isinstance(img, Tensor) else Tensor(img)
    batched = img.ndim == 4
    if not batched:
        if img.ndim != 3:
            raise DimensionError(f"patchify expects [C,H,W] or [B,C,H,W], got {img.shape}")
        img = img.reshape((1,) + img.shape)
    B, C, H, W = img.shape
    p = patch_size
    if H % p or W % p:
        raise DimensionError(f"image extents {H}x{W} not divisible by patch size {p}")
    h, w = H // p, W // p
    x = img.reshape(B, C, h, p, w, p).transpose(0, 2, 4, 1, 3, 5).reshape(B, h * w, C * p * p)
    return x if batched else x.reshape(h * w, C * p * p)


def unpatchify(tokens, patch_size: int, channels: int, height: int, width: int) -> Tensor:
    tokens = tokens if isinstance(tokens, Tensor) else Tensor(tokens)
    batched = tokens.ndim == 3
    if not batched:
        tokens = tokens.reshape((1,) + tokens.shape)
    p = patch_size
    h, w = height // p, width // p
    B, N, P = tokens.shape
    if N != h * w or P != channels * p * p or height % p or width % p:
        raise DimensionError(
            f"cannot unpatchify {tokens.shape} into {channels}x{height}x{width} with p={p}"
        )
    x = tokens.reshape(B, h, w, channels, p, p).transpose(0, 3, 1, 4, 2, 5)
    x = x.reshape(B, channels, height, width)
    return x if batched else x.reshape(channels, height, width)


# ------------------------------------------------------------------ components
def _linear(x: Tensor, model: DenoiserModel, name: str) -> Tensor:
    w, b = model[name + ".w"], model[name + ".b"]
    lead = x.shape[:-1]
    y = x.reshape(-1, x.shape[-1]) @ w + b
    return y.reshape(lead + (w.shape[1],))


def _norm(x: Tensor, model: DenoiserModel, name: str) -> Tensor:
    return layer_norm(x, axis=-1, eps=1e-6) * model[name + ".g"] + model[name + ".b"]


def _split_heads(x: Tensor, heads: int) -> Tensor:
    B, N, D = x.shape
    return x.reshape(B, N, heads, D // heads).transpose(0, 2, 1, 3)


def _attend(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    B, H, N, dh = q.shape
    scores = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(dh))
    out = softmax(scores, axis=-1) @ v
    return out.transpose(0, 2, 1, 3).reshape(B, N, H * dh)


def _self_attention(x: Tensor, model: DenoiserModel, prefix: str, heads: int) -> Tensor:
    B, N, D = x.shape
    qkv = _linear(x, model, prefix + "qkv").reshape(B, N, 3, heads, D // heads)
    qkv = qkv.transpose(2, 0, 3, 1, 4)
    out = _attend(qkv[0], qkv[1], qkv[2])
    return _linear(out, model, prefix + "proj")


def _cross_attention(x: Tensor, ctx: Tensor, model: DenoiserModel, prefix: str, heads: int) -> Tensor:
    B, N, D = x.shape
    M = ctx.shape[1]
    q = _split_heads(_linear(x, model, prefix + "q"), heads)
    kv = _linear(ctx, model, prefix + "kv").reshape(B, M, 2, heads, D // heads)
    kv = kv.transpose(2, 0, 3, 1, 4)
    out = _attend(q, kv[0], kv[1])
    return _linear(out, model, prefix + "proj")


def _mlp(x: Tensor, model: DenoiserModel, prefix: str) -> Tensor:
    return _linear(gelu(_linear(x, model, prefix + "fc1")), model, prefix + "fc2")


def _encoder_blocks(x: Tensor, model: DenoiserModel) -> Tensor:
    cfg = model.config
    for i in range(cfg.enc_depth):
        p = f"enc.{i}."
        x = x + _self_attention(_norm(x, model, p + "norm1"), model, p + "attn.", cfg.enc_heads)
        x = x + _mlp(_norm(x, model, p + "norm2"), model, p + "mlp.")
    return _norm(x, model, "enc_norm")


def _embed(patches: Tensor, model: DenoiserModel, stream: str) -> Tensor:
    cfg = model.config
    if patches.shape[-2:] != (cfg.num_patches, cfg.patch_dim):
        raise DimensionError(
            f"expected [..., {cfg.num_patches}, {cfg.patch_dim}] patches, got {patches.shape}"
        )
    if stream not in ("target", "context"):
        raise ContractError(f"unknown stream {stream!r}")
    return _linear(patches, model, "patch_embed") + model["pos_embed." + stream]


def encode(img_patches, model: DenoiserModel, stream: str = "target") -> Tensor:
    """Encode ``[N, C*p*p]`` (or ``[B, N, C*p*p]``) patches to ``[.., N, embed_dim]`` tokens."""
    x = img_patches if isinstance(img_patches, Tensor) else Tensor(img_patches, dtype=model.dtype)
    batched = x.ndim == 3
    if not batched:
        x = x.reshape((1,) + x.shape)
    out = _encoder_blocks(_embed(x, model, stream), model)
    return out if batched else out.reshape(out.shape[1:])


def sinusoidal_embedding(t, dim: int, max_period: float = 10000.0) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half) / half)
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


def time_embedding(t, model: DenoiserModel) -> Tensor:
    """``[B, dec_width]`` embedding for integer timesteps ``t``."""
    base = Tensor(sinusoidal_embedding(t, model.config.time_embed_dim), dtype=model.dtype)
    return _linear(gelu(_linear(base, model, "time.fc1")), model, "time.fc2")


def decode(xt_tokens: Tensor, ctx_tokens: Tensor, t_embed: Tensor, model: DenoiserModel) -> Tensor:
    """Decoder over target tokens attending to context tokens; returns per-patch pixels."""
    cfg = model.config
    batched = xt_tokens.ndim == 3
    if not batched:
        xt_tokens = xt_tokens.reshape((1,) + xt_tokens.shape)
        ctx_tokens = ctx_tokens.reshape((1,) + ctx_tokens.shape)
        if t_embed.ndim == 1:
            t_embed = t_embed.reshape(1, -1)
    if xt_tokens.shape[-1] != cfg.embed_dim or ctx_tokens.shape[-1] != cfg.embed_dim:
        raise DimensionError(
            f"token widths {xt_tokens.shape[-1]}/{ctx_tokens.shape[-1]} != embed_dim {cfg.embed_dim}"
        )
    if xt_tokens.shape[0] != ctx_tokens.shape[0]:
        raise DimensionError("target and context batches differ")
    x, ctx = xt_tokens, ctx_tokens
    if cfg.dec_width != cfg.embed_dim:
        x = _linear(x, model, "dec_embed")
        ctx = _linear(ctx, model, "dec_embed")
    B = x.shape[0]
    x = x + t_embed.reshape(B, 1, cfg.dec_width)
    for i in range(cfg.dec_depth):
        p = f"dec.{i}."
        x = x + _self_attention(_norm(x, model, p + "norm1"), model, p + "self.", cfg.dec_heads)
        x = x + _cross_attention(
            _norm(x, model, p + "norm2"), _norm(ctx, model, p + "norm_ctx"),
            model, p + "cross.", cfg.dec_heads,
        )
        x = x + _mlp(_norm(x, model, p + "norm3"), model, p + "mlp.")
    out = _linear(_norm(x, model, "dec_norm"), model, "head")
    return out if batched else out.reshape(out.shape[1:])


def predict_eps(xt, t, ctx, model: DenoiserModel, schedule=None,
                zero_context: bool = False) -> Tensor:
    """Noise estimate for ``xt`` at step ``t`` given the clean context image.

    Accepts single images ``[C, H, W]`` or batches ``[B, C, H, W]``; ``t`` may
    be an int or one step per batch element. With ``zero_context`` the
    decoder sees all-zero context tokens instead of the encoded context.
    """
    cfg = model.config
    xt = xt if isinstance(xt, Tensor) else Tensor(xt, dtype=model.dtype)
    batched = xt.ndim == 4
    if not batched:
        xt = xt.reshape((1,) + xt.shape)
    B = xt.shape[0]
    expected = (cfg.channels, cfg.image_size, cfg.image_size)
    if xt.shape[1:] != expected:
        raise DimensionError(f"image shape {xt.shape[1:]} != model's {expected}")
    steps = np.broadcast_to(np.asarray(t, dtype=np.int64), (B,))
    if schedule is not None and (steps.min() < 1 or steps.max() > schedule.T):
        raise ContractError(f"timesteps must lie in [1, {schedule.T}]")

    p = cfg.patch_size
    xt_patches = patchify(xt, p)
    if zero_context:
        tokens = encode(xt_patches, model, "target")
        ctx_tokens = Tensor(np.zeros(tokens.shape, dtype=model.dtype))
    else:
        c = ctx if isinstance(ctx, Tensor) else Tensor(ctx, dtype=model.dtype)
        if not batched:
            c = c.reshape((1,) + c.shape)
        if c.shape != xt.shape:
            raise DimensionError(f"context shape {c.shape} != target shape {xt.shape}")
        # one encoder pass over both streams: same blocks, per-stream positions
        both = concat([_embed(xt_patches, model, "target"),
                       _embed(patchify(c, p), model, "context")], axis=0)
        enc = _encoder_blocks(both, model)
        tokens, ctx_tokens = enc[:B], enc[B:]
    out = decode(tokens, ctx_tokens, time_embedding(steps, model), model)
    img = unpatchify(out, p, cfg.channels, cfg.image_size, cfg.image_size)
    return img if batched else img.reshape(expected)
