"""Reusable neural building blocks on top of the autodiff tensor.

Blocks are plain callables over Tensors. Token inputs may be (T, C) or
batched (B, T, C); images are NCHW. Parameter registration walks attribute
order, so parameter names and iteration order are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor, conv2d, layer_norm, softmax


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, dtype=np.float64) -> np.ndarray:
    """Normal(0, std) with resampling beyond 2 std, the usual transformer init."""
    out = rng.normal(0.0, std, size=shape)
    mask = np.abs(out) > 2 * std
    while mask.any():
        out[mask] = rng.normal(0.0, std, size=int(mask.sum()))
        mask = np.abs(out) > 2 * std
    return out.astype(dtype)


@dataclass
class DimConfig:
    """Every width and size in the pipeline, tied together by fixed ratios.

    The defaults are the desk-scale configuration; the full-scale ratios are
    img 1024 -> grid 64 -> mask 256 with text width 512 halved to prompt
    width 256. All four invariants below mirror those ratios.
    """

    img_size: int = 256
    patch: int = 16
    embed_dim: int = 32        # C, image-embedding channels
    text_dim: int = 64         # H_text, text-encoder output width
    prompt_dim: int = 32       # D_p, sparse-prompt width (== embed_dim)
    llm_dim: int = 64          # H_llm, language-model embedding width
    heads: int = 4
    depth_enc: int = 2
    mask_size: int = 64
    mlp_ratio: int = 2
    vlm_img_size: int = 64     # vision-language encoder input side (img_size/4)
    vocab_size: int = 4096
    max_text_len: int = 64

    def __post_init__(self):
        if self.img_size % self.patch != 0:
            raise ConfigError(f"img_size {self.img_size} not divisible by patch {self.patch}")
        if self.text_dim != 2 * self.prompt_dim:
            raise ConfigError(f"text_dim {self.text_dim} must equal 2 * prompt_dim {self.prompt_dim}")
        if self.mask_size != 4 * self.grid:
            raise ConfigError(f"mask_size {self.mask_size} must equal 4 * grid {self.grid}")
        if self.prompt_dim != self.embed_dim:
            raise ConfigError(f"prompt_dim {self.prompt_dim} must equal embed_dim {self.embed_dim}")
        for name, width in (("embed_dim", self.embed_dim), ("text_dim", self.text_dim)):
            if width % self.heads != 0:
                raise ConfigError(f"{name} {width} not divisible by heads {self.heads}")
        if self.vlm_img_size % self.patch != 0:
            raise ConfigError(f"vlm_img_size {self.vlm_img_size} not divisible by patch {self.patch}")

    @property
    def grid(self) -> int:
        return self.img_size // self.patch

    @property
    def vlm_grid(self) -> int:
        return self.vlm_img_size // self.patch

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DimConfig":
        return cls(**d)


class Module:
    """Minimal parameter container: tracks Tensors and sub-Modules by attribute."""

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{full}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
                    elif isinstance(item, Tensor):
                        yield f"{full}.{i}", item

    def freeze(self) -> "Module":
        for p in self.parameters():
            p.requires_grad = False
            p.grad = None
        return self

    def trainability(self) -> dict:
        return {name: p.requires_grad for name, p in self.named_parameters()}

    def num_parameters(self, trainable_only: bool = False) -> int:
        return sum(p.size for p in self.parameters() if p.requires_grad or not trainable_only)

    def cast(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            if p.grad is not None:
                p.grad = p.grad.astype(dtype)
        return self


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 std: float = 0.02, dtype=np.float64, bias: bool = True):
        self.w = Tensor(trunc_normal(rng, (d_in, d_out), std, dtype), requires_grad=True)
        self.b = Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.w.shape[0]:
            raise ShapeError(f"linear expects width {self.w.shape[0]}, got {x.shape}")
        out = x @ self.w
        return out + self.b if self.b is not None else out


class MLP(Module):
    """Stack of Linear layers with GELU between (none after the last)."""

    def __init__(self, dims: list[int], rng: np.random.Generator, dtype=np.float64):
        self.layers = [Linear(dims[i], dims[i + 1], rng, dtype=dtype) for i in range(len(dims) - 1)]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = x.gelu()
        return x


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5, dtype=np.float64):
        self.gamma = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)
        self._eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, self._eps)


def _batched(t: Tensor) -> tuple[Tensor, bool]:
    if t.ndim == 2:
        return t.reshape(1, *t.shape), False
    if t.ndim == 3:
        return t, True
    raise ShapeError(f"expected (T, C) or (B, T, C) tokens, got {t.shape}")


class MultiHeadAttention(Module):
    """softmax(Q K^T / sqrt(d_head)) V per head, heads concatenated, projected."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, dtype=np.float64):
        if dim % heads != 0:
            raise ConfigError(f"width {dim} not divisible by heads {heads}")
        self.q_proj = Linear(dim, dim, rng, dtype=dtype)
        self.k_proj = Linear(dim, dim, rng, dtype=dtype)
        self.v_proj = Linear(dim, dim, rng, dtype=dtype)
        self.out_proj = Linear(dim, dim, rng, dtype=dtype)
        self._dim = dim
        self._heads = heads

    def __call__(self, q_src: Tensor, kv_src: Tensor) -> Tensor:
        q_src, batched = _batched(q_src)
        kv_src, _ = _batched(kv_src)
        if q_src.shape[-1] != self._dim or kv_src.shape[-1] != self._dim:
            raise ShapeError(f"attention width mismatch: {q_src.shape}, {kv_src.shape} vs dim {self._dim}")
        b, tq, c = q_src.shape
        tk = kv_src.shape[1]
        h = self._heads
        dh = c // h

        def split(t: Tensor, tl: int) -> Tensor:
            return t.reshape(b, tl, h, dh).transpose(0, 2, 1, 3)      # (B, h, T, dh)

        q = split(self.q_proj(q_src), tq)
        k = split(self.k_proj(kv_src), tk)
        v = split(self.v_proj(kv_src), tk)
        scores = (q @ k.transpose(0, 1, 3, 2)) * (dh ** -0.5)         # (B, h, Tq, Tk)
        attn = softmax(scores, axis=-1)
        out = (attn @ v).transpose(0, 2, 1, 3).reshape(b, tq, c)
        out = self.out_proj(out)
        return out if batched else out.reshape(tq, c)


def mha(q_src: Tensor, kv_src: Tensor, weights: MultiHeadAttention) -> Tensor:
    return weights(q_src, kv_src)


class TransformerBlock(Module):
    """Pre-norm self-attention + MLP block (the encoder building unit)."""

    def __init__(self, dim: int, heads: int, mlp_dim: int, rng: np.random.Generator, dtype=np.float64):
        self.norm1 = LayerNorm(dim, dtype=dtype)
        self.attn = MultiHeadAttention(dim, heads, rng, dtype=dtype)
        self.norm2 = LayerNorm(dim, dtype=dtype)
        self.mlp = MLP([dim, mlp_dim, dim], rng, dtype=dtype)

    def __call__(self, tokens: Tensor) -> Tensor:
        normed = self.norm1(tokens)
        tokens = tokens + self.attn(normed, normed)
        tokens = tokens + self.mlp(self.norm2(tokens))
        return tokens


class TwoWayBlock(Module):
    """One round of text/image mutual alignment.

    In order: text self-attention, text->image cross-attention, a one-layer
    MLP on the text tokens, then the reverse image->text cross-attention.
    Every stage is pre-norm residual.
    """

    def __init__(self, dim: int, heads: int, mlp_dim: int, rng: np.random.Generator, dtype=np.float64):
        self.norm_self = LayerNorm(dim, dtype=dtype)
        self.self_attn = MultiHeadAttention(dim, heads, rng, dtype=dtype)
        self.norm_t2i_q = LayerNorm(dim, dtype=dtype)
        self.norm_t2i_kv = LayerNorm(dim, dtype=dtype)
        self.cross_t2i = MultiHeadAttention(dim, heads, rng, dtype=dtype)
        self.norm_mlp = LayerNorm(dim, dtype=dtype)
        self.mlp = MLP([dim, mlp_dim, dim], rng, dtype=dtype)
        self.norm_i2t_q = LayerNorm(dim, dtype=dtype)
        self.norm_i2t_kv = LayerNorm(dim, dtype=dtype)
        self.cross_i2t = MultiHeadAttention(dim, heads, rng, dtype=dtype)

    def __call__(self, text: Tensor, image: Tensor) -> tuple[Tensor, Tensor]:
        normed = self.norm_self(text)
        text = text + self.self_attn(normed, normed)
        text = text + self.cross_t2i(self.norm_t2i_q(text), self.norm_t2i_kv(image))
        text = text + self.mlp(self.norm_mlp(text))
        image = image + self.cross_i2t(self.norm_i2t_q(image), self.norm_i2t_kv(text))
        return text, image


class PatchEmbed(Module):
    """Non-overlapping patch projection plus a learned positional table."""

    def __init__(self, in_channels: int, img_size: int, patch: int, dim: int,
                 rng: np.random.Generator, dtype=np.float64):
        if img_size % patch != 0:
            raise ConfigError(f"image side {img_size} not divisible by patch {patch}")
        self.proj = Tensor(trunc_normal(rng, (dim, in_channels, patch, patch), dtype=dtype),
                           requires_grad=True)
        self.bias = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)
        grid = img_size // patch
        self.pos = Tensor(trunc_normal(rng, (grid * grid, dim), dtype=dtype), requires_grad=True)
        self._patch = patch
        self._img_size = img_size

    def __call__(self, x: Tensor) -> Tensor:
        """(B, C_in, S, S) -> (B, (S/patch)^2, dim); also accepts unbatched 3-d."""
        x, batched = (x, True) if x.ndim == 4 else (x.reshape(1, *x.shape), False)
        if x.shape[-1] != self._img_size or x.shape[-2] != self._img_size:
            raise ConfigError(f"patch embed configured for side {self._img_size}, got {x.shape}")
        b = x.shape[0]
        dim = self.proj.shape[0]
        feat = conv2d(x, self.proj, stride=self._patch)                 # (B, dim, G, G)
        grid_sq = feat.shape[-1] * feat.shape[-2]
        tokens = feat.reshape(b, dim, grid_sq).transpose(0, 2, 1)       # (B, G^2, dim)
        tokens = tokens + self.bias + self.pos
        return tokens if batched else tokens.reshape(grid_sq, dim)
