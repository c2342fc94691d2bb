"""Union-segmentation fusion strategies and the benchmark harness.

Three ways of combining M aligned modalities: early (channel concat at the
input), hybrid (mean at the representation level, single decoder), late
(mean of per-modality probability masks, thresholded). The instruction-
driven pipeline supports hybrid and late only; a small fully-trainable
conv net exercises all three.
"""

from __future__ import annotations

import csv
import io
from enum import Enum

import numpy as np

from .errors import ConfigError, InputError, ShapeError
from .nn import Module, trunc_normal
from .tensor import Tensor, conv2d, conv_transpose2d


class FusionMode(str, Enum):
    EARLY = "early"
    HYBRID = "hybrid"
    LATE = "late"

    @classmethod
    def parse(cls, value) -> "FusionMode":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigError(f"unknown fusion mode {value!r}; expected early|hybrid|late") from None


def fuse_early(images: list[Tensor]) -> Tensor:
    """Channel-wise concatenation, in modality-list order: M x (1,S,S) -> (M,S,S)."""
    if not images:
        raise InputError("fuse_early needs at least one image")
    shapes = {tuple(img.shape) for img in images}
    if len(shapes) != 1:
        raise ShapeError(f"fuse_early size mismatch: {sorted(shapes)}")
    return Tensor(np.concatenate([img.data for img in images], axis=0))


def fuse_hybrid(embeddings: list[Tensor], prompts: list[Tensor]) -> tuple[Tensor, Tensor]:
    """Element-wise mean over modalities at the representation level."""
    if not embeddings or len(embeddings) != len(prompts):
        raise InputError("fuse_hybrid needs matching non-empty embedding/prompt lists")
    for group in (embeddings, prompts):
        if len({tuple(t.shape) for t in group}) != 1:
            raise ShapeError("fuse_hybrid shape mismatch across modalities")
    m = len(embeddings)
    emb = embeddings[0]
    pr = prompts[0]
    for e, p in zip(embeddings[1:], prompts[1:]):
        emb = emb + e
        pr = pr + p
    return emb * (1.0 / m), pr * (1.0 / m)


def fuse_late(prob_masks: list[Tensor]) -> Tensor:
    """Pixel-wise mean of probabilities; foreground iff mean strictly > 0.5."""
    if not prob_masks:
        raise InputError("fuse_late needs at least one mask")
    arrays = [p.data if isinstance(p, Tensor) else np.asarray(p) for p in prob_masks]
    if len({a.shape for a in arrays}) != 1:
        raise ShapeError("fuse_late shape mismatch across modalities")
    for a in arrays:
        if a.min() < 0.0 or a.max() > 1.0:
            raise InputError("fuse_late expects probabilities in [0, 1]")
    mean = np.mean(arrays, axis=0)
    return Tensor((mean > 0.5).astype(arrays[0].dtype))


def count_trainable_params(model) -> int:
    """Element count over the model's trainable tensors (frozen excluded)."""
    if hasattr(model, "named_parameters"):
        return sum(p.size for _, p in model.named_parameters() if p.requires_grad)
    raise InputError("model does not expose a trainability manifest")


# ---- tiny fully-trainable conv net for the benchmark ----

class BaselineSegNet(Module):
    """3-stage strided conv encoder with a mirrored transposed-conv decoder."""

    def __init__(self, in_channels: int, rng: np.random.Generator, base: int = 8,
                 dtype=np.float64, decoder_only: bool = False):
        c1, c2, c3 = base, base * 2, base * 4
        std = 0.05
        if not decoder_only:
            self.enc1 = Tensor(trunc_normal(rng, (c1, in_channels, 3, 3), std, dtype), requires_grad=True)
            self.enc1_b = Tensor(np.zeros(c1, dtype=dtype), requires_grad=True)
            self.enc2 = Tensor(trunc_normal(rng, (c2, c1, 3, 3), std, dtype), requires_grad=True)
            self.enc2_b = Tensor(np.zeros(c2, dtype=dtype), requires_grad=True)
            self.enc3 = Tensor(trunc_normal(rng, (c3, c2, 3, 3), std, dtype), requires_grad=True)
            self.enc3_b = Tensor(np.zeros(c3, dtype=dtype), requires_grad=True)
        self.dec1 = Tensor(trunc_normal(rng, (c3, c2, 2, 2), std, dtype), requires_grad=True)
        self.dec1_b = Tensor(np.zeros(c2, dtype=dtype), requires_grad=True)
        self.dec2 = Tensor(trunc_normal(rng, (c2, c1, 2, 2), std, dtype), requires_grad=True)
        self.dec2_b = Tensor(np.zeros(c1, dtype=dtype), requires_grad=True)
        self.dec3 = Tensor(trunc_normal(rng, (c1, 1, 2, 2), std, dtype), requires_grad=True)
        self.dec3_b = Tensor(np.zeros(1, dtype=dtype), requires_grad=True)

    def encode(self, x: Tensor) -> Tensor:
        """(B, C_in, S, S) -> (B, 4*base, S/8, S/8) bottleneck features."""
        h = (conv2d(x, self.enc1, stride=2, padding=1) + self.enc1_b.reshape(1, -1, 1, 1)).gelu()
        h = (conv2d(h, self.enc2, stride=2, padding=1) + self.enc2_b.reshape(1, -1, 1, 1)).gelu()
        h = (conv2d(h, self.enc3, stride=2, padding=1) + self.enc3_b.reshape(1, -1, 1, 1)).gelu()
        return h

    def decode(self, h: Tensor) -> Tensor:
        """Bottleneck -> (B, S, S) logits."""
        h = (conv_transpose2d(h, self.dec1, stride=2) + self.dec1_b.reshape(1, -1, 1, 1)).gelu()
        h = (conv_transpose2d(h, self.dec2, stride=2) + self.dec2_b.reshape(1, -1, 1, 1)).gelu()
        h = conv_transpose2d(h, self.dec3, stride=2) + self.dec3_b.reshape(1, -1, 1, 1)
        return h.reshape(h.shape[0], h.shape[2], h.shape[3])

    def __call__(self, x: Tensor) -> Tensor:
        return self.decode(self.encode(x))


class BaselineModel(Module):
    """The baseline net arranged for one fusion strategy.

    early: one net taking all modalities as channels. hybrid: per-modality
    encoders, mean-fused bottleneck, one decoder. late: one full net per
    modality, probability masks fused downstream.
    """

    def __init__(self, fusion, n_modalities: int, rng: np.random.Generator,
                 base: int = 8, dtype=np.float64):
        self.fusion = FusionMode.parse(fusion)
        self.n_modalities = n_modalities
        if self.fusion is FusionMode.EARLY:
            self.nets = [BaselineSegNet(n_modalities, rng, base, dtype)]
        elif self.fusion is FusionMode.HYBRID:
            self.encoders = [BaselineSegNet(1, rng, base, dtype) for _ in range(n_modalities)]
            self.decoder_net = BaselineSegNet(1, rng, base, dtype, decoder_only=True)
        else:
            self.nets = [BaselineSegNet(1, rng, base, dtype) for _ in range(n_modalities)]

    def logits_per_output(self, x: Tensor) -> list[Tensor]:
        """x: (B, M, S, S) input images -> one (B, S, S) logit map per output head.

        Late fusion yields M maps (one per modality); the others yield one.
        """
        if self.fusion is FusionMode.EARLY:
            return [self.nets[0](x)]
        per_mod = [_modality_channel(x, i) for i in range(self.n_modalities)]
        if self.fusion is FusionMode.HYBRID:
            feats = [enc.encode(img) for enc, img in zip(self.encoders, per_mod)]
            fused = feats[0]
            for f in feats[1:]:
                fused = fused + f
            fused = fused * (1.0 / self.n_modalities)
            return [self.decoder_net.decode(fused)]
        return [net(img) for net, img in zip(self.nets, per_mod)]


def _modality_channel(x: Tensor, i: int) -> Tensor:
    """Select modality i of (B, M, S, S) as a (B, 1, S, S) tensor (input data only)."""
    return Tensor(x.data[:, i:i + 1])


def render_benchmark_table(rows: list[dict]) -> str:
    """Plain-text table of benchmark cells."""
    header = f"{'network':<10} {'fusion':<8} {'dsc':>8} {'miou':>8} {'params':>10}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(f"{r['network']:<10} {r['fusion']:<8} {r['dsc']:>8.4f} "
                     f"{r['miou']:>8.4f} {r['params']:>10d}")
    return "\n".join(lines)


def benchmark_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["network", "fusion", "dsc", "miou", "params"])
    writer.writeheader()
    for r in rows:
        writer.writerow({k: r[k] for k in writer.fieldnames})
    return buf.getvalue()


def run_benchmark(cfg) -> list[dict]:
    """Train and evaluate every (network, fusion) cell of the benchmark.

    Cells: baseline x {early, hybrid, late} plus the instruction pipeline x
    {hybrid, late}. The instruction pipeline rejects early fusion.
    """
    from .train import train_and_eval  # local import; train depends on this module

    rows = []
    for network, fusions in (("baseline", ("early", "hybrid", "late")),
                             ("zeus", ("hybrid", "late"))):
        for fusion in fusions:
            result = train_and_eval(cfg.replace(network=network, fusion=fusion))
            rows.append({"network": network, "fusion": fusion,
                         "dsc": result["dsc"], "miou": result["miou"],
                         "params": result["params"]})
    return rows


def check_zeus_fusion(fusion) -> None:
    """The instruction-driven pipeline has no input-level stage to concatenate at."""
    if FusionMode.parse(fusion) is FusionMode.EARLY:
        raise ConfigError("not applicable for early fusion")
