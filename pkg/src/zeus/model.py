"""The composed pipeline: frozen encoders, trainable projections, trainable
mask decoder, and the feature-preparation pass that feeds training.

Instructions are generated once per (slice, modality) and cached: the
language backend and every encoder are frozen, so with the stub backend the
cached features are exact. The only trainable path that bypasses the cache
is the direct-embedding wiring, where the prompt embedding is produced by
the vision-to-language projection at every step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import DatasetIndex, ModalityStack, resize_nearest
from .decoder import DimensionAligner, MaskDecoder, decode_mask
from .encoders import ImageEncoder, TextEncoder, VlmVisionEncoder
from .errors import ConfigError
from .instruction import StubLlmBackend, VlmToLlmProjection, generate_instruction
from .nn import DimConfig, Module
from .tensor import Tensor, no_grad

WIRINGS = ("text", "embedding")


@dataclass
class PreparedFeatures:
    """Frozen-path outputs for a list of stacks, ready for batched decoding."""

    v_e: np.ndarray                    # (N, M, C, G, G)
    e_text: np.ndarray                 # (N, M, H_text) encoded instruction embeddings
    vlm_pooled: np.ndarray             # (N, M, H_text) pooled vision-language embeddings
    labels: np.ndarray                 # (N, mask, mask) binary at mask resolution
    subject_ids: list = field(default_factory=list)
    slice_indices: list = field(default_factory=list)
    records: list = field(default_factory=list)   # per-stack list of InstructionRecord

    def __len__(self) -> int:
        return self.v_e.shape[0]


class ZeusModel(Module):
    """Frozen encoders + {f_vt, f_tt, decoder}; only the latter three train."""

    def __init__(self, cfg: DimConfig, seed: int = 0, n_modalities: int = 4,
                 backend=None, wiring: str = "text", share_weights: bool = True,
                 dtype=np.float64, instance_name: str = "lesion"):
        if wiring not in WIRINGS:
            raise ConfigError(f"wiring must be one of {WIRINGS}, got {wiring!r}")
        if wiring == "embedding" and cfg.llm_dim != cfg.text_dim:
            raise ConfigError("embedding wiring requires llm_dim == text_dim")
        self.cfg = cfg
        self.seed = seed
        self.wiring = wiring
        self.share_weights = share_weights
        self.n_modalities = n_modalities
        self.instance_name = instance_name
        self.backend = backend if backend is not None else StubLlmBackend(seed=seed)
        self.dtype = np.dtype(dtype)

        # frozen stack, simulated-pretrained from derived seeds
        self.image_encoder = ImageEncoder(cfg, seed * 7 + 1)
        self.vlm_encoder = VlmVisionEncoder(cfg, seed * 7 + 2)
        self.text_encoder = TextEncoder(cfg, seed * 7 + 3)

        rng = np.random.default_rng(seed * 7 + 5)
        copies = 1 if share_weights else n_modalities
        self.f_vt = [VlmToLlmProjection(cfg.text_dim, cfg.llm_dim, rng, dtype=self.dtype)
                     for _ in range(copies)]
        self.f_tt = [DimensionAligner(cfg, rng, dtype=self.dtype) for _ in range(copies)]
        self.decoder = [MaskDecoder(cfg, rng, dtype=self.dtype) for _ in range(copies)]

    # ---- parameter bookkeeping ----

    def trainable_parameters(self) -> dict:
        return {name: p for name, p in self.named_parameters() if p.requires_grad}

    def frozen_checksums(self) -> dict:
        return {
            "image_enc": self.image_encoder.weight_checksum(),
            "vlm_vision": self.vlm_encoder.weight_checksum(),
            "text_enc": self.text_encoder.weight_checksum(),
        }

    def _copy_index(self, modality_index: int) -> int:
        return 0 if self.share_weights else modality_index

    # ---- frozen-path feature extraction ----

    def prepare(self, index: DatasetIndex, subject_ids: list, modality_subset=None,
                chunk: int = 8, keep_records: bool = False) -> PreparedFeatures:
        """Run the frozen encoders and instruction generation over all stacks."""
        stacks_iter = index.iter_stacks(subject_ids, modality_subset)
        return self.prepare_stacks(list(stacks_iter), chunk=chunk, keep_records=keep_records)

    def prepare_stacks(self, stacks: list[ModalityStack], chunk: int = 8,
                       keep_records: bool = False) -> PreparedFeatures:
        cfg = self.cfg
        n = len(stacks)
        if n == 0:
            raise ConfigError("no stacks to prepare")
        m = len(stacks[0].images)
        v_e = np.empty((n, m, cfg.embed_dim, cfg.grid, cfg.grid), dtype=self.dtype)
        e_text = np.empty((n, m, cfg.text_dim), dtype=self.dtype)
        vlm_pooled = np.empty((n, m, cfg.text_dim), dtype=self.dtype)
        labels = np.empty((n, cfg.mask_size, cfg.mask_size), dtype=self.dtype)
        subject_ids, slice_indices, all_records = [], [], []

        for start in range(0, n, chunk):
            batch = stacks[start:start + chunk]
            imgs = np.stack([img.data[0] for st in batch for img in st.images])   # (b*M, S, S)
            if imgs.shape[-1] != cfg.img_size:
                imgs = resize_nearest(imgs, cfg.img_size)
            emb = self.image_encoder(Tensor(imgs)).data                          # (b*M, C, G, G)
            vlm_imgs = resize_nearest(imgs, cfg.vlm_img_size)
            pooled = self.vlm_encoder(Tensor(vlm_imgs)).data[:, 0, :]            # (b*M, H_text)
            for bi, st in enumerate(batch):
                row = start + bi
                v_e[row] = emb[bi * m:(bi + 1) * m]
                vlm_pooled[row] = pooled[bi * m:(bi + 1) * m]
                labels[row] = resize_nearest(st.label.data, cfg.mask_size)
                subject_ids.append(st.subject_id)
                slice_indices.append(st.slice_index)
                records = []
                for mi, name in enumerate(st.modality_names):
                    projected = None
                    if getattr(self.backend, "kind", "stub") == "remote":
                        with no_grad():
                            projected = self.f_vt[self._copy_index(mi)](
                                Tensor(vlm_pooled[row, mi][np.newaxis]))
                    rec = generate_instruction(vlm_imgs[bi * m + mi], self.instance_name,
                                               name, self.backend, projected=projected)
                    rec.embedding = self.text_encoder(rec.instruction_text)
                    e_text[row, mi] = rec.embedding.data[0]
                    records.append(rec)
                all_records.append(records if keep_records else [])
        return PreparedFeatures(v_e=v_e, e_text=e_text, vlm_pooled=vlm_pooled, labels=labels,
                                subject_ids=subject_ids, slice_indices=slice_indices,
                                records=all_records)

    # ---- decoding ----

    def prompt_for(self, e_rows: Tensor, modality_index: int) -> Tensor:
        """(B, 1, H_text) instruction embeddings -> (B, 1, D_p) aligned prompts."""
        ci = self._copy_index(modality_index)
        if self.wiring == "embedding":
            e_rows = self.f_vt[ci](e_rows)
        return self.f_tt[ci](e_rows)

    def _embedding_rows(self, feats: PreparedFeatures, rows, modality_index: int) -> np.ndarray:
        src = feats.vlm_pooled if self.wiring == "embedding" else feats.e_text
        return src[rows, modality_index][:, np.newaxis, :]       # (B, 1, H_text)

    def decode_rows(self, feats: PreparedFeatures, rows, modality_index: int) -> Tensor:
        """Decode one modality for a batch of stack rows; returns (B, mask, mask) logits."""
        ci = self._copy_index(modality_index)
        v = Tensor(feats.v_e[rows, modality_index])
        prompt = self.prompt_for(Tensor(self._embedding_rows(feats, rows, modality_index)),
                                 modality_index)
        return decode_mask(self.decoder[ci], v, prompt)

    def decode_rows_shared(self, feats: PreparedFeatures, rows) -> Tensor:
        """All modalities of a row batch in one decoder pass (shared weights only).

        Returns (B, M, mask, mask) logits.
        """
        n_rows = len(rows)
        m = feats.v_e.shape[1]
        cfg = self.cfg
        v = Tensor(feats.v_e[rows].reshape(n_rows * m, cfg.embed_dim, cfg.grid, cfg.grid))
        src = feats.vlm_pooled if self.wiring == "embedding" else feats.e_text
        e = Tensor(src[rows].reshape(n_rows * m, 1, cfg.text_dim))
        prompt = self.prompt_for(e, 0)
        logits = decode_mask(self.decoder[0], v, prompt)
        return logits.reshape(n_rows, m, cfg.mask_size, cfg.mask_size)

    def predict_probs(self, feats: PreparedFeatures, row: int) -> np.ndarray:
        """Per-modality sigmoid probability maps (M, mask, mask) for one stack."""
        m = feats.v_e.shape[1]
        with no_grad():
            if self.share_weights:
                logits = self.decode_rows_shared(feats, [row]).data[0]
            else:
                logits = np.stack([self.decode_rows(feats, [row], mi).data[0] for mi in range(m)])
        return 1.0 / (1.0 + np.exp(-logits))
