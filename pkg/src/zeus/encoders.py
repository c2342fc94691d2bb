"""The three frozen encoders: image embedding, vision-language pooling, text.

Weights simulate pretrained checkpoints: drawn from a seeded truncated
normal (std 0.02), then frozen. The same (kind, seed, DimConfig) always
yields bit-identical weights, and a SHA-256 checksum over the parameters
makes the frozen contract auditable across a training run.
"""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np

from .errors import ConfigError, InputError, ResolutionError
from .nn import DimConfig, LayerNorm, Linear, Module, PatchEmbed, TransformerBlock, trunc_normal
from .tensor import Tensor, load_zt, no_grad, save_zt

ENCODER_KINDS = ("image_enc", "vlm_vision", "text_enc")


class VocabHasher:
    """Deterministic word -> token id in [0, vocab_size), via salted BLAKE2b."""

    def __init__(self, vocab_size: int = 4096, seed: int = 0):
        if vocab_size < 1:
            raise ConfigError("vocab_size must be positive")
        self.vocab_size = vocab_size
        self.seed = seed
        self._salt = seed.to_bytes(8, "little", signed=False)

    def token_id(self, word: str) -> int:
        digest = hashlib.blake2b(word.encode("utf-8"), digest_size=8, salt=self._salt).digest()
        return int.from_bytes(digest, "little") % self.vocab_size

    def tokenize(self, text: str) -> list[int]:
        words = text.split()
        if not words:
            raise InputError("cannot tokenize empty text")
        return [self.token_id(w) for w in words]


def checksum(module: Module) -> str:
    """SHA-256 over all parameters in name order (data bytes only)."""
    h = hashlib.sha256()
    for name, p in sorted(module.named_parameters()):
        h.update(name.encode("utf-8"))
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()


class FrozenEncoder(Module):
    """Base for the seeded, permanently frozen encoders."""

    kind = "frozen"

    def __init__(self, cfg: DimConfig, seed: int):
        self.cfg = cfg  # not a Module/Tensor, so excluded from parameters
        self.seed = seed
        self.frozen = True

    def _finalize(self):
        self.freeze()
        self._checksum = checksum(self)

    def weight_checksum(self) -> str:
        return checksum(self)

    def initial_checksum(self) -> str:
        return self._checksum


class ImageEncoder(FrozenEncoder):
    """Patch embedding + transformer stack; emits a (C, S/16, S/16) grid.

    The prediction head consumes this embedding directly, so its channel
    width equals the prompt width and the spatial side is the image side
    divided by the patch size (the 16x downscaling contract).
    """

    kind = "image_enc"

    def __init__(self, cfg: DimConfig, seed: int, input_size: int | None = None, width: int | None = None):
        super().__init__(cfg, seed)
        rng = np.random.default_rng(seed)
        self._input_size = input_size or cfg.img_size
        self._width = width or cfg.embed_dim
        self.patch_embed = PatchEmbed(1, self._input_size, cfg.patch, self._width, rng)
        self.blocks = [TransformerBlock(self._width, cfg.heads, self._width * cfg.mlp_ratio, rng)
                       for _ in range(cfg.depth_enc)]
        self.norm = LayerNorm(self._width)
        self._finalize()

    @property
    def grid(self) -> int:
        return self._input_size // self.cfg.patch

    def _check_resolution(self, x: Tensor):
        if x.shape[-1] != self._input_size or x.shape[-2] != self._input_size:
            raise ResolutionError(
                f"{self.kind} expects {self._input_size}x{self._input_size} input, got "
                f"{x.shape[-2]}x{x.shape[-1]}; resize first")

    def tokens(self, x: Tensor) -> Tensor:
        """(B, S, S) or (S, S) image -> (B, G^2, width) tokens."""
        if not isinstance(x, Tensor):
            x = Tensor(x)
        self._check_resolution(x)
        batched = x.ndim == 3
        if not batched:
            x = x.reshape(1, *x.shape)
        with no_grad():
            t = self.patch_embed(x.reshape(x.shape[0], 1, *x.shape[1:]))
            for block in self.blocks:
                t = block(t)
            t = self.norm(t)
        return t

    def __call__(self, x: Tensor) -> Tensor:
        """Embed to (C, G, G) (batched: (B, C, G, G)); gradients never enter."""
        batched = (x.ndim == 3) if isinstance(x, Tensor) else (np.ndim(x) == 3)
        t = self.tokens(x)                                    # (B, G^2, C)
        b = t.shape[0]
        g = self.grid
        grid_map = t.transpose(0, 2, 1).reshape(b, self._width, g, g)
        return grid_map if batched else grid_map.reshape(self._width, g, g)


def encode_image(encoder: ImageEncoder, x) -> Tensor:
    return encoder(x)


class VlmVisionEncoder(ImageEncoder):
    """Same block design as the image encoder, at the text width, mean-pooled."""

    kind = "vlm_vision"

    def __init__(self, cfg: DimConfig, seed: int):
        super().__init__(cfg, seed, input_size=cfg.vlm_img_size, width=cfg.text_dim)

    def __call__(self, x) -> Tensor:
        """(S', S') image -> pooled (1, H_text) embedding (batched: (B, 1, H_text))."""
        batched = (x.ndim == 3) if isinstance(x, Tensor) else (np.ndim(x) == 3)
        t = self.tokens(x)                                    # (B, T, H_text)
        with no_grad():
            pooled = t.mean(axis=1, keepdims=True)            # (B, 1, H_text)
        return pooled if batched else pooled.reshape(1, self._width)


def encode_vlm(encoder: VlmVisionEncoder, x) -> Tensor:
    return encoder(x)


class TextEncoder(FrozenEncoder):
    """Hashing tokenizer + frozen embedding/transformer + frozen post linear."""

    kind = "text_enc"

    def __init__(self, cfg: DimConfig, seed: int):
        super().__init__(cfg, seed)
        rng = np.random.default_rng(seed)
        self.hasher = VocabHasher(cfg.vocab_size, seed)  # plain object, no params
        self.embedding = Tensor(trunc_normal(rng, (cfg.vocab_size, cfg.text_dim)), requires_grad=True)
        self.pos = Tensor(trunc_normal(rng, (cfg.max_text_len, cfg.text_dim)), requires_grad=True)
        self.blocks = [TransformerBlock(cfg.text_dim, cfg.heads, cfg.text_dim * cfg.mlp_ratio, rng)
                       for _ in range(cfg.depth_enc)]
        self.norm = LayerNorm(cfg.text_dim)
        # the pretrained stack carried a linear layer after the text encoder;
        # it is kept and frozen like everything else here
        self.post_linear = Linear(cfg.text_dim, cfg.text_dim, rng)
        self._finalize()

    def __call__(self, instruction: str) -> Tensor:
        """Non-empty string -> (1, H_text) pooled embedding."""
        if not isinstance(instruction, str) or not instruction.strip():
            raise InputError("instruction must be a non-empty string")
        ids = self.hasher.tokenize(instruction)[: self.cfg.max_text_len]
        with no_grad():
            tok = Tensor(self.embedding.data[ids] + self.pos.data[: len(ids)])
            tok = tok.reshape(1, len(ids), self.cfg.text_dim)
            for block in self.blocks:
                tok = block(tok)
            tok = self.norm(tok)
            pooled = tok.mean(axis=1, keepdims=True)          # (1, 1, H_text)
            out = self.post_linear(pooled).reshape(1, self.cfg.text_dim)
        return out


def encode_text(encoder: TextEncoder, instruction: str) -> Tensor:
    return encoder(instruction)


def build_encoder(kind: str, cfg: DimConfig, seed: int) -> FrozenEncoder:
    if kind == "image_enc":
        return ImageEncoder(cfg, seed)
    if kind == "vlm_vision":
        return VlmVisionEncoder(cfg, seed)
    if kind == "text_enc":
        return TextEncoder(cfg, seed)
    raise ConfigError(f"unknown encoder kind {kind!r}; expected one of {ENCODER_KINDS}")


def save_encoder(encoder: FrozenEncoder, directory) -> None:
    """Write one .zt per parameter plus a manifest with the checksum."""
    os.makedirs(directory, exist_ok=True)
    names = []
    for name, p in sorted(encoder.named_parameters()):
        fname = name.replace(".", "__") + ".zt"
        save_zt(p, os.path.join(directory, fname))
        names.append(name)
    manifest = {
        "kind": encoder.kind,
        "seed": encoder.seed,
        "dims": encoder.cfg.to_dict(),
        "sha256": encoder.weight_checksum(),
        "parameters": names,
    }
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)


def load_encoder(directory) -> FrozenEncoder:
    """Rebuild from a manifest, overwrite weights from disk, verify the checksum."""
    with open(os.path.join(directory, "manifest.json")) as fh:
        manifest = json.load(fh)
    cfg = DimConfig.from_dict(manifest["dims"])
    encoder = build_encoder(manifest["kind"], cfg, manifest["seed"])
    params = dict(encoder.named_parameters())
    for name in manifest["parameters"]:
        fname = name.replace(".", "__") + ".zt"
        params[name].data = load_zt(os.path.join(directory, fname)).data
    if encoder.weight_checksum() != manifest["sha256"]:
        raise ConfigError(f"encoder checkpoint checksum mismatch in {directory}")
    encoder._checksum = manifest["sha256"]
    return encoder
