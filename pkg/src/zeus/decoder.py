"""Trainable prediction head: dimension aligner plus the two-way mask decoder.

The decoder consumes one image-embedding grid and exactly one text-prompt
token. Two rounds of two-way attention align the streams, two transposed
convolutions (kernel 2, stride 2, channels halving each time) upsample the
image tokens 4x, and a 3-layer MLP turns the final text token into an
attention vector whose spatial point-wise product with the upsampled feature
map yields the logit mask. There is no intermediate IoU-score head.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .nn import DimConfig, MLP, Module, TwoWayBlock, trunc_normal
from .tensor import Tensor, conv_transpose2d


class DimensionAligner(Module):
    """Two dense layers mapping the text width down to the sparse-prompt width."""

    def __init__(self, cfg: DimConfig, rng: np.random.Generator, dtype=np.float64):
        self.proj = MLP([cfg.text_dim, cfg.prompt_dim, cfg.prompt_dim], rng, dtype=dtype)

    def __call__(self, e: Tensor) -> Tensor:
        if e.shape[-1] != self.proj.layers[0].w.shape[0]:
            raise ShapeError(f"aligner expects width {self.proj.layers[0].w.shape[0]}, got {e.shape}")
        return self.proj(e)


def align_prompt(aligner: DimensionAligner, e: Tensor) -> Tensor:
    return aligner(e)


def prompt_shape_contract(prompt: Tensor, cfg: DimConfig) -> None:
    """The decoder's sparse prompt must be exactly one token of the prompt width."""
    shape = prompt.shape[-2:]
    if shape != (1, cfg.prompt_dim):
        raise ShapeError(f"sparse prompt must be 1x{cfg.prompt_dim}, got {shape[0]}x{shape[1]}")


def _bilinear_matrix(src: int, dst: int, dtype=np.float64) -> np.ndarray:
    """(dst, src) interpolation weights, half-pixel-centered sampling."""
    mat = np.zeros((dst, src), dtype=dtype)
    for i in range(dst):
        pos = (i + 0.5) * src / dst - 0.5
        lo = int(np.floor(pos))
        frac = pos - lo
        lo_c = min(max(lo, 0), src - 1)
        hi_c = min(max(lo + 1, 0), src - 1)
        mat[i, lo_c] += 1.0 - frac
        mat[i, hi_c] += frac
    return mat


class MaskDecoder(Module):
    """Two-way transformer body plus the upsampling/product output stage."""

    def __init__(self, cfg: DimConfig, rng: np.random.Generator, dtype=np.float64):
        c = cfg.embed_dim
        if c % 4 != 0:
            raise ShapeError(f"embed_dim {c} must be divisible by 4 for channel halving")
        self.blocks = [TwoWayBlock(c, cfg.heads, c * cfg.mlp_ratio, rng, dtype=dtype)
                       for _ in range(2)]
        # transposed convs: kernel/stride 2, channels C -> C/2 -> C/4
        self.up1 = Tensor(trunc_normal(rng, (c, c // 2, 2, 2), dtype=dtype), requires_grad=True)
        self.up1_bias = Tensor(np.zeros(c // 2, dtype=dtype), requires_grad=True)
        self.up2 = Tensor(trunc_normal(rng, (c // 2, c // 4, 2, 2), dtype=dtype), requires_grad=True)
        self.up2_bias = Tensor(np.zeros(c // 4, dtype=dtype), requires_grad=True)
        self.head = MLP([c, c, c // 4], rng, dtype=dtype)  # 3-layer MLP, GELU between
        self.cfg = cfg

    def __call__(self, v_e: Tensor, prompt: Tensor) -> Tensor:
        return decode_mask(self, v_e, prompt)


def decode_mask(decoder: MaskDecoder, v_e: Tensor, prompt: Tensor) -> Tensor:
    """(C, G, G) image embedding + (1, D_p) prompt -> (mask, mask) logits.

    Batched inputs (B, C, G, G) + (B, 1, D_p) give (B, mask, mask).
    """
    cfg = decoder.cfg
    batched = v_e.ndim == 4
    if not batched:
        v_e = v_e.reshape(1, *v_e.shape)
        if prompt.ndim == 2:
            prompt = prompt.reshape(1, *prompt.shape)
    prompt_shape_contract(prompt, cfg)
    b, c, g, _ = v_e.shape
    if c != cfg.embed_dim:
        raise ShapeError(f"decode stage two-way: embedding channels {c} != configured {cfg.embed_dim}")
    if prompt.shape[-1] != c:
        raise ShapeError(f"decode stage two-way: prompt width {prompt.shape[-1]} != channels {c}")

    text = prompt                                                # (B, 1, C)
    image = v_e.reshape(b, c, g * g).transpose(0, 2, 1)          # (B, G^2, C)
    for block in decoder.blocks:
        text, image = block(text, image)

    feat = image.transpose(0, 2, 1).reshape(b, c, g, g)
    feat = conv_transpose2d(feat, decoder.up1, stride=2)
    feat = (feat + decoder.up1_bias.reshape(1, c // 2, 1, 1)).gelu()
    feat = conv_transpose2d(feat, decoder.up2, stride=2)
    feat = feat + decoder.up2_bias.reshape(1, c // 4, 1, 1)      # (B, C/4, 4G, 4G)

    attn_vec = decoder.head(text)                                # (B, 1, C/4)
    side = 4 * g
    flat = feat.reshape(b, c // 4, side * side)
    logits = (attn_vec @ flat).reshape(b, side, side)            # spatial point-wise product

    if cfg.mask_size != side:
        ry = Tensor(_bilinear_matrix(side, cfg.mask_size, logits.dtype))
        rx_t = Tensor(_bilinear_matrix(side, cfg.mask_size, logits.dtype).T)
        logits = (ry @ logits) @ rx_t
    return logits if batched else logits.reshape(logits.shape[-2], logits.shape[-1])
