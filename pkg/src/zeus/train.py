"""Training/evaluation harness: Adam with decoupled weight decay, the poly
learning-rate schedule, early stopping on training loss, frozen-module
auditing, checkpointing with bit-exact resume, and the modality-subset
ablation driver.

Run directory layout: runs/<name>/{config.json, metrics.csv, checkpoint.zt,
masks/*.pgm, log.txt}.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field, asdict, replace as dc_replace

import numpy as np

from .data import DatasetIndex, resize_nearest
from .errors import ConfigError, FrozenDriftError, InputError, TrainingError
from .fusion import BaselineModel, FusionMode, check_zeus_fusion, count_trainable_params
from .losses import LossConfig, combined_loss, dsc_metric, miou_metric
from .model import PreparedFeatures, ZeusModel
from .nn import DimConfig
from .tensor import Tensor, no_grad

ZEUS_TRAINABLE_PREFIXES = ("f_vt", "f_tt", "decoder")


def lr_at(epoch: int, cfg: "RunConfig") -> float:
    """Poly decay: lr0 * (1 - epoch/max_epoch)^power."""
    if not 0 <= epoch <= cfg.epochs:
        raise InputError(f"epoch {epoch} outside [0, {cfg.epochs}]")
    return cfg.lr0 * (1.0 - epoch / cfg.epochs) ** cfg.poly_power


@dataclass
class RunConfig:
    """Every knob of a run; serialized verbatim into the run directory."""

    dims: DimConfig = field(default_factory=DimConfig)
    network: str = "zeus"              # zeus | baseline
    fusion: str = "late"
    backend: dict = field(default_factory=lambda: {"kind": "stub"})
    wiring: str = "text"               # text | embedding
    share_weights: bool = True
    epochs: int = 300
    early_stop_patience: int = 75
    batch_size: int = 10
    lr0: float = 1e-3
    weight_decay: float = 5e-4
    poly_power: float = 0.9
    seed: int = 0
    modality_subset: list | None = None
    instance_name: str = "lesion"
    loss: LossConfig = field(default_factory=LossConfig)
    data_dir: str = "data"
    runs_dir: str = "runs"
    run_name: str | None = None
    dtype: str = "float32"
    val_monitor: bool = False
    eval_split: str = "test"

    def __post_init__(self):
        if isinstance(self.dims, dict):
            self.dims = DimConfig.from_dict(self.dims)
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)
        if self.network not in ("zeus", "baseline"):
            raise ConfigError(f"unknown network {self.network!r}")
        FusionMode.parse(self.fusion)
        if self.network == "zeus":
            check_zeus_fusion(self.fusion)
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")

    def replace(self, **kw) -> "RunConfig":
        return dc_replace(self, **kw)

    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def to_json(self) -> str:
        d = asdict(self)
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls(**json.loads(text))

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_json(fh.read())


class Adam:
    """Adam with decoupled L2 weight decay; steps only trainable tensors."""

    def __init__(self, params: dict, weight_decay: float = 0.0,
                 betas: tuple = (0.9, 0.999), eps: float = 1e-8):
        self.params = dict(params)
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.betas
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for k, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * (g * g)
            mhat = self.m[k] / bias1
            vhat = self.v[k] / bias2
            p.data -= lr * (mhat / (np.sqrt(vhat) + self.eps) + self.weight_decay * p.data)


# ---- checkpointing (multi-tensor .zt container) ----

_DT = {"float64": "<f8", "float32": "<f4"}


def save_checkpoint(path, params: dict, opt: Adam, epoch: int, rng_state: dict,
                    frozen_checksums: dict) -> None:
    entries = []
    buffers = []
    for role, table in (("param", params), ("adam_m", opt.m), ("adam_v", opt.v)):
        for name in sorted(table):
            arr = table[name].data if role == "param" else table[name]
            entries.append({"name": name, "role": role,
                            "dtype": arr.dtype.name, "shape": list(arr.shape)})
            buffers.append(np.ascontiguousarray(arr).astype(_DT[arr.dtype.name]).tobytes())
    header = json.dumps({
        "kind": "checkpoint", "epoch": epoch, "adam_t": opt.t,
        "rng_state": rng_state, "frozen_checksums": frozen_checksums,
        "tensors": entries,
    })
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii") + b"\n")
        for buf in buffers:
            fh.write(buf)


def load_checkpoint(path) -> dict:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("ascii"))
        tensors = {}
        for entry in header["tensors"]:
            count = int(np.prod(entry["shape"])) if entry["shape"] else 1
            raw = fh.read(count * np.dtype(_DT[entry["dtype"]]).itemsize)
            arr = np.frombuffer(raw, dtype=_DT[entry["dtype"]]).reshape(entry["shape"])
            tensors[(entry["role"], entry["name"])] = arr.astype(entry["dtype"], copy=True)
    header["data"] = tensors
    return header


def _restore_into(model, opt: Adam, ckpt: dict) -> None:
    params = opt.params
    for (role, name), arr in ckpt["data"].items():
        if role == "param":
            if name not in params:
                raise TrainingError(f"checkpoint parameter {name!r} not in model")
            if tuple(params[name].shape) != tuple(arr.shape):
                raise TrainingError(f"checkpoint shape mismatch for {name!r}")
            params[name].data = arr.copy()
        elif role == "adam_m":
            opt.m[name] = arr.copy()
        elif role == "adam_v":
            opt.v[name] = arr.copy()
    opt.t = ckpt["adam_t"]


# ---- feature preparation ----

def _zeus_features(model: ZeusModel, index: DatasetIndex, subjects: list,
                   cfg: RunConfig) -> PreparedFeatures:
    feats = model.prepare(index, subjects, cfg.modality_subset)
    dt = cfg.np_dtype()
    feats.v_e = feats.v_e.astype(dt)
    feats.e_text = feats.e_text.astype(dt)
    feats.vlm_pooled = feats.vlm_pooled.astype(dt)
    feats.labels = feats.labels.astype(dt)
    return feats


def _baseline_features(index: DatasetIndex, subjects: list, cfg: RunConfig):
    """(N, M, s, s) inputs at mask resolution plus (N, s, s) labels."""
    s = cfg.dims.mask_size
    xs, ys = [], []
    for stack in index.iter_stacks(subjects, cfg.modality_subset):
        imgs = np.stack([resize_nearest(img.data[0], s) for img in stack.images])
        xs.append(imgs)
        ys.append(resize_nearest(stack.label.data, s))
    dt = cfg.np_dtype()
    return np.stack(xs).astype(dt), np.stack(ys).astype(dt)


# ---- batched forward passes ----

def _zeus_batch_logits(model: ZeusModel, feats: PreparedFeatures, rows,
                       fusion: FusionMode) -> Tensor:
    """Late fusion: (B, M, s, s) logits; hybrid: (B, s, s) logits."""
    if fusion is FusionMode.LATE:
        if model.share_weights:
            return model.decode_rows_shared(feats, rows)
        m = feats.v_e.shape[1]
        logits = [model.decode_rows(feats, rows, mi) for mi in range(m)]
        stacked = logits[0].reshape(len(rows), 1, *logits[0].shape[1:])
        for mi in range(1, m):
            nxt = logits[mi].reshape(len(rows), 1, *logits[mi].shape[1:])
            stacked = _concat_axis1(stacked, nxt)
        return stacked
    # hybrid: mean embeddings and mean aligned prompts, single decode
    from .decoder import decode_mask
    from .fusion import fuse_hybrid
    m = feats.v_e.shape[1]
    embeddings = [Tensor(feats.v_e[rows, mi]) for mi in range(m)]
    prompts = [model.prompt_for(Tensor(model._embedding_rows(feats, rows, mi)), mi)
               for mi in range(m)]
    emb, prompt = fuse_hybrid(embeddings, prompts)
    return decode_mask(model.decoder[0], emb, prompt)


def _concat_axis1(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two tensors along axis 1, keeping both on the grad path."""
    data = np.concatenate([a.data, b.data], axis=1)
    na = a.shape[1]

    def bw(g):
        if a.requires_grad:
            a._accumulate(g[:, :na])
        if b.requires_grad:
            b._accumulate(g[:, na:])

    return Tensor._from_op(data, (a, b), bw)


def _zeus_batch_loss(model: ZeusModel, feats: PreparedFeatures, rows, cfg: RunConfig):
    labels = feats.labels[rows]
    logits = _zeus_batch_logits(model, feats, rows, FusionMode.parse(cfg.fusion))
    if logits.ndim == 4:                           # late: per-modality maps
        b, m, s, _ = logits.shape
        probs = logits.reshape(b * m, s, s).sigmoid()
        target = np.repeat(labels, m, axis=0)
        loss = combined_loss(probs, Tensor(target), cfg.loss)
        probs_np = probs.data.reshape(b, m, s, s)
    else:
        probs = logits.sigmoid()
        loss = combined_loss(probs, Tensor(labels), cfg.loss)
        probs_np = probs.data[:, np.newaxis]
    return loss, probs_np


def _baseline_batch_loss(model: BaselineModel, x: np.ndarray, labels: np.ndarray,
                         cfg: RunConfig):
    outs = model.logits_per_output(Tensor(x))
    losses = None
    probs_list = []
    for out in outs:
        probs = out.sigmoid()
        term = combined_loss(probs, Tensor(labels), cfg.loss)
        losses = term if losses is None else losses + term
        probs_list.append(probs.data)
    loss = losses * (1.0 / len(outs))
    return loss, np.stack(probs_list, axis=1)      # (B, n_out, s, s)


def _fused_binary(probs: np.ndarray, fusion: FusionMode) -> np.ndarray:
    """(B, n_maps, s, s) probabilities -> (B, s, s) binary prediction."""
    if fusion is FusionMode.LATE and probs.shape[1] > 1:
        return probs.mean(axis=1) > 0.5
    return probs[:, 0] > 0.5


# ---- results ----

@dataclass
class TrainResult:
    run_dir: str
    checkpoint_path: str
    epochs_run: int
    final_loss: float
    stopped_early: bool
    metrics_rows: list
    params: int


def _audit_zeus_optimizer(params: dict) -> None:
    groups = {name.split(".")[0] for name in params}
    if groups != set(ZEUS_TRAINABLE_PREFIXES):
        raise TrainingError(
            f"optimizer set {sorted(groups)} != expected {sorted(ZEUS_TRAINABLE_PREFIXES)}")


def build_model(cfg: RunConfig, index: DatasetIndex):
    """Construct the configured network for this run."""
    names = cfg.modality_subset or index.modalities
    m = len(names)
    if cfg.network == "zeus":
        backend_kwargs = dict(cfg.backend)
        kind = backend_kwargs.pop("kind", "stub")
        from .instruction import make_backend
        backend = make_backend(kind, seed=cfg.seed, **backend_kwargs)
        model = ZeusModel(cfg.dims, seed=cfg.seed, n_modalities=m, backend=backend,
                          wiring=cfg.wiring, share_weights=cfg.share_weights,
                          dtype=cfg.np_dtype(), instance_name=cfg.instance_name)
    else:
        rng = np.random.default_rng(cfg.seed * 7 + 11)
        model = BaselineModel(cfg.fusion, m, rng, dtype=cfg.np_dtype())
    return model


def train(cfg: RunConfig, resume_from=None) -> TrainResult:
    """Train per the configured schedule; returns the run summary.

    Optimizes exactly the trainable parameter set (audited for the
    instruction pipeline), decays the learning rate per epoch, stops early
    when the training loss has not improved for the configured patience,
    and asserts the frozen encoders' checksums afterwards.
    """
    index = DatasetIndex(cfg.data_dir)
    splits = index.splits()
    run_name = cfg.run_name or time.strftime("%Y%m%d-%H%M%S")
    run_dir = os.path.join(cfg.runs_dir, run_name)
    os.makedirs(run_dir, exist_ok=True)
    os.makedirs(os.path.join(run_dir, "masks"), exist_ok=True)
    with open(os.path.join(run_dir, "config.json"), "w") as fh:
        fh.write(cfg.to_json())
    log_path = os.path.join(run_dir, "log.txt")
    log_fh = open(log_path, "a")

    def log(msg: str):
        log_fh.write(msg + "\n")
        log_fh.flush()

    model = build_model(cfg, index)
    is_zeus = cfg.network == "zeus"
    checksums_before = model.frozen_checksums() if is_zeus else {}

    if is_zeus:
        feats = _zeus_features(model, index, splits["train"], cfg)
        n = len(feats)
        val_feats = (_zeus_features(model, index, splits["val"], cfg)
                     if cfg.val_monitor and splits["val"] else None)
    else:
        x_train, y_train = _baseline_features(index, splits["train"], cfg)
        n = x_train.shape[0]
        val_feats = None

    params = (model.trainable_parameters() if is_zeus
              else {k: p for k, p in model.named_parameters() if p.requires_grad})
    if is_zeus:
        _audit_zeus_optimizer(params)
    opt = Adam(params, weight_decay=cfg.weight_decay)

    rng = np.random.default_rng(cfg.seed)
    start_epoch = 0
    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        _restore_into(model, opt, ckpt)
        rng.bit_generator.state = ckpt["rng_state"]
        start_epoch = ckpt["epoch"] + 1
        log(f"resumed from {resume_from} at epoch {start_epoch}")

    loss_cfg = cfg.loss
    fusion = FusionMode.parse(cfg.fusion)
    metrics_rows = []
    best_loss = float("inf")
    stale = 0
    stopped_early = False
    epochs_run = start_epoch
    ckpt_path = os.path.join(run_dir, "checkpoint.zt")

    for epoch in range(start_epoch, cfg.epochs):
        lr = lr_at(epoch, cfg)
        order = rng.permutation(n)
        total_loss = 0.0
        total_batches = 0
        dsc_sum = 0.0
        miou_sum = 0.0
        n_rows = 0
        for b0 in range(0, n, cfg.batch_size):
            rows = order[b0:b0 + cfg.batch_size]
            if is_zeus:
                loss, probs_np = _zeus_batch_loss(model, feats, rows, cfg)
                labels_np = feats.labels[rows]
            else:
                loss, probs_np = _baseline_batch_loss(model, x_train[rows], y_train[rows], cfg)
                labels_np = y_train[rows]
            loss_val = loss.item()
            if not np.isfinite(loss_val):
                log_fh.close()
                raise TrainingError(
                    f"non-finite loss {loss_val} at epoch {epoch}, batch {b0 // cfg.batch_size}, lr {lr}")
            opt.zero_grad()
            loss.backward()
            opt.step(lr)
            total_loss += loss_val
            total_batches += 1
            fused = _fused_binary(probs_np, fusion)
            for i in range(fused.shape[0]):
                dsc_sum += dsc_metric(fused[i], labels_np[i] > 0.5)
                miou_sum += miou_metric(fused[i], labels_np[i] > 0.5)
            n_rows += fused.shape[0]

        epoch_loss = total_loss / max(total_batches, 1)
        metrics_rows.append({"epoch": epoch, "split": "train",
                             "dsc": dsc_sum / n_rows, "miou": miou_sum / n_rows})
        log(f"epoch {epoch} lr {lr:.6g} loss {epoch_loss:.8g} "
            f"dsc {dsc_sum / n_rows:.6f} miou {miou_sum / n_rows:.6f}")
        if val_feats is not None:
            vm = _evaluate_zeus(model, val_feats, fusion)
            metrics_rows.append({"epoch": epoch, "split": "val", **vm})

        epochs_run = epoch + 1
        monitored = epoch_loss
        if monitored < best_loss:
            best_loss = monitored
            stale = 0
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                stopped_early = True
                log(f"early stop at epoch {epoch}: no improvement for {stale} epochs")
                break

    # frozen-module audit
    if is_zeus:
        checksums_after = model.frozen_checksums()
        if checksums_after != checksums_before:
            log_fh.close()
            drifted = [k for k in checksums_before if checksums_before[k] != checksums_after[k]]
            raise FrozenDriftError(f"frozen weights drifted during training: {drifted}")

    save_checkpoint(ckpt_path, params, opt, epochs_run - 1,
                    rng.bit_generator.state, checksums_before)
    _write_metrics_csv(os.path.join(run_dir, "metrics.csv"), metrics_rows)
    log(f"finished after {epochs_run} epochs; final loss {best_loss:.8g}")
    log_fh.close()
    return TrainResult(run_dir=run_dir, checkpoint_path=ckpt_path, epochs_run=epochs_run,
                       final_loss=best_loss, stopped_early=stopped_early,
                       metrics_rows=metrics_rows, params=count_trainable_params(model))


def _write_metrics_csv(path, rows: list) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,split,dsc,miou\n")
        for r in rows:
            fh.write(f"{r['epoch']},{r['split']},{r['dsc']!r},{r['miou']!r}\n")


# ---- evaluation ----

def _evaluate_zeus(model: ZeusModel, feats: PreparedFeatures, fusion: FusionMode,
                   batch: int = 32) -> dict:
    n = len(feats)
    dscs, mious = [], []
    with no_grad():
        for b0 in range(0, n, batch):
            rows = list(range(b0, min(b0 + batch, n)))
            logits = _zeus_batch_logits(model, feats, rows, fusion)
            if logits.ndim == 4:
                probs = 1.0 / (1.0 + np.exp(-logits.data))
            else:
                probs = (1.0 / (1.0 + np.exp(-logits.data)))[:, np.newaxis]
            fused = _fused_binary(probs, fusion)
            for i, row in enumerate(rows):
                label = feats.labels[row] > 0.5
                dscs.append(dsc_metric(fused[i], label))
                mious.append(miou_metric(fused[i], label))
    return {"dsc": float(np.mean(dscs)), "miou": float(np.mean(mious))}


def _evaluate_baseline(model: BaselineModel, x: np.ndarray, y: np.ndarray,
                       fusion: FusionMode, cfg: RunConfig, batch: int = 32) -> dict:
    dscs, mious = [], []
    with no_grad():
        for b0 in range(0, x.shape[0], batch):
            xb = x[b0:b0 + batch]
            outs = model.logits_per_output(Tensor(xb))
            probs = np.stack([1.0 / (1.0 + np.exp(-o.data)) for o in outs], axis=1)
            fused = _fused_binary(probs, fusion)
            for i in range(fused.shape[0]):
                label = y[b0 + i] > 0.5
                dscs.append(dsc_metric(fused[i], label))
                mious.append(miou_metric(fused[i], label))
    return {"dsc": float(np.mean(dscs)), "miou": float(np.mean(mious))}


def evaluate(checkpoint_path, split: str, cfg: RunConfig) -> dict:
    """Load a checkpoint and compute mean DSC/mIoU over the stacks of a split."""
    index = DatasetIndex(cfg.data_dir)
    subjects = index.splits()[split]
    if not subjects:
        raise InputError(f"split {split!r} is empty")
    model = build_model(cfg, index)
    params = (model.trainable_parameters() if cfg.network == "zeus"
              else {k: p for k, p in model.named_parameters() if p.requires_grad})
    opt = Adam(params)
    ckpt = load_checkpoint(checkpoint_path)
    _restore_into(model, opt, ckpt)
    fusion = FusionMode.parse(cfg.fusion)
    if cfg.network == "zeus":
        feats = _zeus_features(model, index, subjects, cfg)
        return _evaluate_zeus(model, feats, fusion)
    x, y = _baseline_features(index, subjects, cfg)
    return _evaluate_baseline(model, x, y, fusion, cfg)


def evaluate_probs(prob_maps: list, labels: list, fusion="late") -> dict:
    """Metrics for externally supplied per-stack probability maps.

    Each entry is (n_maps, S, S) probabilities; late fusion merges the maps,
    otherwise the first map is thresholded.
    """
    mode = FusionMode.parse(fusion)
    dscs, mious = [], []
    for probs, label in zip(prob_maps, labels):
        probs = np.asarray(probs)
        if probs.ndim == 2:
            probs = probs[np.newaxis]
        fused = _fused_binary(probs[np.newaxis], mode)[0]
        lab = np.asarray(label) > 0.5
        dscs.append(dsc_metric(fused, lab))
        mious.append(miou_metric(fused, lab))
    return {"dsc": float(np.mean(dscs)), "miou": float(np.mean(mious))}


def export_masks(checkpoint_path, split: str, cfg: RunConfig, out_dir) -> list:
    """Write fused binary predictions for a split as PGM files; returns paths."""
    from .data import export_pgm
    index = DatasetIndex(cfg.data_dir)
    subjects = index.splits()[split]
    model = build_model(cfg, index)
    params = (model.trainable_parameters() if cfg.network == "zeus"
              else {k: p for k, p in model.named_parameters() if p.requires_grad})
    opt = Adam(params)
    _restore_into(model, opt, load_checkpoint(checkpoint_path))
    fusion = FusionMode.parse(cfg.fusion)
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    if cfg.network == "zeus":
        feats = _zeus_features(model, index, subjects, cfg)
        with no_grad():
            for row in range(len(feats)):
                probs = model.predict_probs(feats, row)
                fused = _fused_binary(probs[np.newaxis], fusion)[0]
                name = f"{feats.subject_ids[row]}_{feats.slice_indices[row]:03d}.pgm"
                path = os.path.join(out_dir, name)
                export_pgm(fused, path)
                paths.append(path)
    else:
        x, y = _baseline_features(index, subjects, cfg)
        stacks = list(index.iter_stacks(subjects, cfg.modality_subset))
        with no_grad():
            for i in range(x.shape[0]):
                outs = model.logits_per_output(Tensor(x[i:i + 1]))
                probs = np.stack([1.0 / (1.0 + np.exp(-o.data[0])) for o in outs])
                fused = _fused_binary(probs[np.newaxis], fusion)[0]
                name = f"{stacks[i].subject_id}_{stacks[i].slice_index:03d}.pgm"
                path = os.path.join(out_dir, name)
                export_pgm(fused, path)
                paths.append(path)
    return paths


def train_and_eval(cfg: RunConfig) -> dict:
    """Train then evaluate on the configured split; one benchmark cell."""
    result = train(cfg)
    metrics = evaluate(result.checkpoint_path, cfg.eval_split, cfg)
    return {**metrics, "params": result.params, "run_dir": result.run_dir,
            "checkpoint": result.checkpoint_path, "epochs_run": result.epochs_run}


def ablate_modalities(cfg: RunConfig, subsets: list) -> list:
    """One run per modality subset; returns Table-style rows with a check grid."""
    index = DatasetIndex(cfg.data_dir)
    available = index.modalities
    rows = []
    for subset in subsets:
        subset = list(subset)
        if not subset:
            raise InputError("modality subsets must be non-empty")
        unknown = [s for s in subset if s not in available]
        if unknown:
            raise InputError(f"unknown modalities {unknown}; available: {available}")
        sub_cfg = cfg.replace(modality_subset=subset,
                              run_name=(cfg.run_name or "ablate") + "_" + "-".join(subset))
        result = train_and_eval(sub_cfg)
        rows.append({"subset": subset,
                     "checks": {name: name in subset for name in available},
                     "dsc": result["dsc"], "miou": result["miou"]})
    return rows


def render_ablation_table(rows: list, modalities: list) -> str:
    header = " ".join(f"{m:<8}" for m in modalities) + f" {'DSC':>8} {'mIoU':>8}"
    lines = [header, "-" * len(header)]
    for r in rows:
        marks = " ".join(f"{'x' if r['checks'][m] else '.':<8}" for m in modalities)
        lines.append(f"{marks} {r['dsc']:>8.4f} {r['miou']:>8.4f}")
    return "\n".join(lines)
