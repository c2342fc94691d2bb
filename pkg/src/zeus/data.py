"""Synthetic multimodal volumes, slicing, resizing, and the on-disk dataset.

Each volume is a latent anatomy (1-3 smooth blobs from thresholded filtered
noise) rendered through one deterministic transfer function per modality:
T1-like foreground-bright, T2-like foreground-dark, FLAIR-like rim-enhanced,
Gd-like core-enhanced, each with its own bias field and noise. All modality
channels and the label share the same latent support, so the stacks are
spatially aligned by construction.

Disk layout: data/<subject>/<modality>/<slice>.zt plus
data/<subject>/label/<slice>.zt and a manifest.json.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter, zoom

from .errors import ConfigError, InputError
from .tensor import Tensor, load_zt, save_zt

DEFAULT_MODALITIES = ["T1", "T1-Gd", "T2", "FLAIR"]


@dataclass
class SyntheticVolume:
    voxels: np.ndarray                 # (M, D, H, W) float32 in [0, 1]
    label: np.ndarray                  # (D, H, W) bool
    modality_names: list[str]
    seed: int


@dataclass
class ModalityStack:
    """One axial slice: spatially aligned per-modality images plus the label."""

    images: list[Tensor]               # M tensors of shape (1, S, S)
    label: Tensor                      # (S, S), values {0, 1}
    subject_id: str
    slice_index: int
    modality_names: list[str] = field(default_factory=list)


def _smooth_noise(rng: np.random.Generator, dims: tuple, coarse_factor: int = 8) -> np.ndarray:
    """Unit-std smooth noise: filtered coarse noise, linearly zoomed to full size."""
    d, h, w = dims
    ch, cw = max(h // coarse_factor, 4), max(w // coarse_factor, 4)
    coarse = gaussian_filter(rng.standard_normal((d, ch, cw)), sigma=(1.0, 1.5, 1.5))
    fine = zoom(coarse, (1.0, h / ch, w / cw), order=1)
    std = fine.std()
    return fine / std if std > 0 else fine


def generate_volume(seed: int, n_modalities: int = 4, dims: tuple = (16, 256, 256),
                    modality_names: list[str] | None = None) -> SyntheticVolume:
    """Seeded synthetic volume with aligned modalities and a binary blob label."""
    if not 1 <= n_modalities <= 4:
        raise ConfigError(f"n_modalities must be in [1, 4], got {n_modalities}")
    d, h, w = dims
    if d < 4 or h < 16 or w < 16:
        raise ConfigError(f"volume dims too small: {dims}")
    names = modality_names or DEFAULT_MODALITIES[:n_modalities]
    if len(names) != n_modalities:
        raise ConfigError("modality_names length must match n_modalities")

    rng = np.random.default_rng(seed)
    # latent anatomy: a few Gaussian bumps plus low-amplitude smooth noise
    n_blobs = int(rng.integers(1, 4))
    zz, yy, xx = np.meshgrid(np.linspace(0, 1, d), np.linspace(0, 1, h),
                             np.linspace(0, 1, w), indexing="ij")
    anatomy = np.zeros(dims)
    for _ in range(n_blobs):
        cz, cy, cx = rng.uniform(0.25, 0.75, size=3)
        rz = rng.uniform(0.25, 0.45)
        ry_, rx_ = rng.uniform(0.12, 0.3, size=2)
        dist = ((zz - cz) / rz) ** 2 + ((yy - cy) / ry_) ** 2 + ((xx - cx) / rx_) ** 2
        anatomy = np.maximum(anatomy, np.exp(-dist))
    anatomy += 0.08 * _smooth_noise(rng, dims)
    anatomy -= anatomy.min()
    anatomy /= anatomy.max()

    # threshold at a quantile so the foreground fraction lands where we want it
    target_frac = rng.uniform(0.05, 0.3)
    thresh = float(np.quantile(anatomy, 1.0 - target_frac))
    label = anatomy > thresh

    # interior depth in [0, 1]: 0 at/outside the boundary, 1 deep inside
    depth = np.clip((anatomy - thresh) / max(1.0 - thresh, 1e-6), 0.0, 1.0)
    rim = np.exp(-((anatomy - thresh) / 0.08) ** 2)

    transfer = {
        "T1": lambda: 0.25 + 0.6 * depth + 0.1 * anatomy,
        "T2": lambda: 0.85 - 0.6 * depth - 0.1 * anatomy,
        "FLAIR": lambda: 0.25 + 0.65 * rim + 0.15 * depth,
        "T1-Gd": lambda: 0.2 + 0.7 * depth ** 2 + 0.1 * rim,
    }
    voxels = np.empty((n_modalities,) + dims, dtype=np.float32)
    for m, name in enumerate(names):
        base = transfer.get(name, transfer["T1"])()
        bias = 0.15 * _smooth_noise(rng, dims, coarse_factor=16)
        noise = 0.04 * rng.standard_normal(dims)
        voxels[m] = np.clip(base * (1.0 + bias) + noise, 0.0, 1.0).astype(np.float32)

    return SyntheticVolume(voxels=voxels, label=label, modality_names=list(names), seed=seed)


def slice_volume(volume: SyntheticVolume, keep_empty: bool = True) -> list[ModalityStack]:
    """Split a volume into per-axial-index stacks; optionally drop empty-label slices."""
    stacks = []
    m, d = volume.voxels.shape[:2]
    subject = f"subject_{volume.seed:05d}"
    for i in range(d):
        if not keep_empty and not volume.label[i].any():
            continue
        images = [Tensor(volume.voxels[j, i][np.newaxis]) for j in range(m)]
        stacks.append(ModalityStack(
            images=images,
            label=Tensor(volume.label[i].astype(np.float32)),
            subject_id=subject,
            slice_index=i,
            modality_names=list(volume.modality_names),
        ))
    return stacks


def resize_nearest(img: np.ndarray, target: int) -> np.ndarray:
    """Nearest-neighbor square resize via the index map floor(i * S / target).

    Operates on the last two axes; identity (bit-exact) when sizes already
    match, and value-set preserving (binary masks stay binary).
    """
    arr = img.data if isinstance(img, Tensor) else np.asarray(img)
    if target < 1:
        raise InputError("resize target must be >= 1")
    src_h, src_w = arr.shape[-2], arr.shape[-1]
    if src_h == target and src_w == target:
        return arr.copy()
    rows = (np.arange(target) * src_h) // target
    cols = (np.arange(target) * src_w) // target
    return arr[..., rows[:, None], cols[None, :]]


def split_subjects(subject_ids: list[str], seed: int,
                   fractions: tuple = (0.7, 0.15, 0.15)) -> dict:
    """Disjoint train/val/test split by subject, a pure function of the seed."""
    ids = sorted(subject_ids)
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    n = len(order)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    n_train = min(n_train, n - 2) if n >= 3 else n_train
    return {
        "train": order[:n_train],
        "val": order[n_train:n_train + n_val],
        "test": order[n_train + n_val:],
    }


# ---- on-disk dataset ----

def save_dataset(volumes: list[SyntheticVolume], root, seed: int) -> dict:
    """Write per-slice .zt files in the subject/modality tree plus manifest.json."""
    os.makedirs(root, exist_ok=True)
    subjects = []
    dims = None
    for vol in volumes:
        subject = f"subject_{vol.seed:05d}"
        d = vol.voxels.shape[1]
        dims = list(vol.voxels.shape[1:])
        for m, name in enumerate(vol.modality_names):
            mdir = os.path.join(root, subject, name)
            os.makedirs(mdir, exist_ok=True)
            for i in range(d):
                save_zt(vol.voxels[m, i], os.path.join(mdir, f"{i:03d}.zt"))
        ldir = os.path.join(root, subject, "label")
        os.makedirs(ldir, exist_ok=True)
        for i in range(d):
            save_zt(vol.label[i].astype(np.uint8), os.path.join(ldir, f"{i:03d}.zt"))
        subjects.append({"id": subject, "modalities": list(vol.modality_names), "slices": d})
    manifest = {"subjects": subjects, "seed": seed, "dims": dims}
    with open(os.path.join(root, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
    return manifest


def generate_dataset(root, n_volumes: int = 60, n_modalities: int = 4,
                     dims: tuple = (16, 256, 256), seed: int = 0) -> dict:
    """Generate and persist the default synthetic dataset (one volume per subject)."""
    volumes = []
    for k in range(n_volumes):
        volumes.append(generate_volume(seed * 100003 + k, n_modalities, dims))
    return save_dataset(volumes, root, seed)


class DatasetIndex:
    """Read-only view over a dataset directory; loads stacks lazily."""

    def __init__(self, root):
        self.root = root
        path = os.path.join(root, "manifest.json")
        if not os.path.exists(path):
            raise InputError(f"no dataset manifest at {path}")
        with open(path) as fh:
            self.manifest = json.load(fh)
        self.seed = self.manifest["seed"]
        self.subjects = [s["id"] for s in self.manifest["subjects"]]
        self._by_id = {s["id"]: s for s in self.manifest["subjects"]}

    @property
    def modalities(self) -> list[str]:
        return list(self._by_id[self.subjects[0]]["modalities"])

    def splits(self) -> dict:
        return split_subjects(self.subjects, self.seed)

    def load_stack(self, subject_id: str, slice_index: int,
                   modality_subset: list[str] | None = None) -> ModalityStack:
        entry = self._by_id[subject_id]
        names = modality_subset or entry["modalities"]
        unknown = [n for n in names if n not in entry["modalities"]]
        if unknown:
            raise InputError(f"unknown modalities {unknown}; available: {entry['modalities']}")
        images = []
        for name in names:
            arr = load_zt(os.path.join(self.root, subject_id, name, f"{slice_index:03d}.zt")).data
            images.append(Tensor(arr.astype(np.float32)[np.newaxis]))
        label = load_zt(os.path.join(self.root, subject_id, "label", f"{slice_index:03d}.zt")).data
        return ModalityStack(images=images, label=Tensor(label.astype(np.float32)),
                             subject_id=subject_id, slice_index=slice_index,
                             modality_names=list(names))

    def iter_stacks(self, subject_ids: list[str], modality_subset: list[str] | None = None):
        for sid in subject_ids:
            for i in range(self._by_id[sid]["slices"]):
                yield self.load_stack(sid, i, modality_subset)

    def count_stacks(self, subject_ids: list[str]) -> int:
        return sum(self._by_id[sid]["slices"] for sid in subject_ids)


def export_pgm(mask: np.ndarray, path) -> None:
    """8-bit binary PGM (0/255) for visual inspection of masks."""
    arr = (np.asarray(mask) > 0.5).astype(np.uint8) * 255
    if arr.ndim != 2:
        raise InputError(f"PGM export needs a 2-d mask, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())
