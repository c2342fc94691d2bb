"""Finite-difference verification registry for every differentiable op and
for the full instruction-to-mask composition on a micro configuration.
"""

from __future__ import annotations

import numpy as np

from .decoder import decode_mask
from .losses import LossConfig, bce_loss, combined_loss, dice_loss
from .model import ZeusModel
from .nn import DimConfig, MultiHeadAttention, PatchEmbed, TwoWayBlock
from .tensor import (Tensor, conv2d, conv_transpose2d, finite_diff_check, layer_norm,
                     no_grad, softmax)


def micro_config() -> DimConfig:
    """Smallest valid configuration; used for composition-level checks."""
    return DimConfig(img_size=32, patch=16, embed_dim=8, text_dim=16, prompt_dim=8,
                     llm_dim=16, heads=2, depth_enc=1, mask_size=8, mlp_ratio=2,
                     vlm_img_size=16, vocab_size=64, max_text_len=16)


def _rand(rng, *shape) -> Tensor:
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def _op_cases():
    """name -> builder(rng) returning (f, x) with f scalar-valued in x."""

    def case_add(rng):
        other = Tensor(rng.standard_normal((3, 4)))
        return lambda x: (x + other).sum(), _rand(rng, 3, 4)

    def case_mul(rng):
        other = Tensor(rng.standard_normal((3, 4)))
        return lambda x: (x * other).sum(), _rand(rng, 3, 4)

    def case_div(rng):
        other = Tensor(rng.standard_normal((3, 4)) + 3.0)
        return lambda x: (x / other).sum(), _rand(rng, 3, 4)

    def case_pow(rng):
        return lambda x: (x ** 3).sum(), _rand(rng, 3, 3)

    def case_exp(rng):
        return lambda x: x.exp().sum(), _rand(rng, 3, 3)

    def case_log(rng):
        x = Tensor(rng.uniform(0.5, 2.0, (3, 3)), requires_grad=True)
        return lambda t: t.log().sum(), x

    def case_tanh(rng):
        return lambda x: x.tanh().sum(), _rand(rng, 3, 3)

    def case_sigmoid(rng):
        return lambda x: x.sigmoid().sum(), _rand(rng, 3, 3)

    def case_gelu(rng):
        return lambda x: x.gelu().sum(), _rand(rng, 3, 3)

    def case_relu(rng):
        # keep values away from the kink where the derivative is undefined
        x = Tensor(rng.uniform(0.2, 1.0, (3, 3)) * rng.choice([-1.0, 1.0], (3, 3)),
                   requires_grad=True)
        return lambda t: t.relu().sum(), x

    def case_clip(rng):
        x = Tensor(rng.uniform(-2.0, 2.0, (4, 4)), requires_grad=True)
        return lambda t: (t.clip(-0.95, 0.95) ** 2).sum(), x

    def case_sum_axis(rng):
        return lambda x: (x.sum(axis=1) ** 2).sum(), _rand(rng, 3, 4)

    def case_mean(rng):
        return lambda x: (x.mean(axis=-1) ** 2).sum(), _rand(rng, 3, 4)

    def case_reshape_transpose(rng):
        return lambda x: (x.reshape(2, 6).transpose(1, 0) ** 2).sum(), _rand(rng, 3, 4)

    def case_matmul(rng):
        w = Tensor(rng.standard_normal((4, 5)))
        return lambda x: (x @ w).sum(), _rand(rng, 3, 4)

    def case_matmul_batched(rng):
        w = Tensor(rng.standard_normal((2, 4, 3)))
        return lambda x: ((x @ w) ** 2).sum(), _rand(rng, 2, 3, 4)

    def case_softmax(rng):
        v = Tensor(rng.standard_normal((3, 5)))
        return lambda x: (softmax(x, axis=-1) * v).sum(), _rand(rng, 3, 5)

    def case_layer_norm(rng):
        gamma = Tensor(rng.standard_normal(6), requires_grad=True)
        beta = Tensor(rng.standard_normal(6))
        v = Tensor(rng.standard_normal((4, 6)))
        return lambda x: (layer_norm(x, gamma, beta, 1e-5) * v).sum(), _rand(rng, 4, 6)

    def case_layer_norm_gamma(rng):
        xin = Tensor(rng.standard_normal((4, 6)))
        beta = Tensor(rng.standard_normal(6))
        v = Tensor(rng.standard_normal((4, 6)))
        return lambda g: (layer_norm(xin, g, beta, 1e-5) * v).sum(), _rand(rng, 6)

    def case_conv2d(rng):
        w = Tensor(rng.standard_normal((3, 2, 3, 3)), requires_grad=False)
        return lambda x: (conv2d(x, w, stride=2, padding=1) ** 2).sum(), _rand(rng, 2, 2, 6, 6)

    def case_conv2d_weight(rng):
        xin = Tensor(rng.standard_normal((2, 2, 6, 6)))
        return lambda w: (conv2d(xin, w, stride=1, padding=1) ** 2).sum(), _rand(rng, 3, 2, 3, 3)

    def case_conv_transpose(rng):
        w = Tensor(rng.standard_normal((3, 2, 2, 2)))
        return lambda x: (conv_transpose2d(x, w, stride=2) ** 2).sum(), _rand(rng, 2, 3, 4, 4)

    def case_conv_transpose_weight(rng):
        xin = Tensor(rng.standard_normal((2, 3, 4, 4)))
        return lambda w: (conv_transpose2d(xin, w, stride=2) ** 2).sum(), _rand(rng, 3, 2, 2, 2)

    def case_dice(rng):
        target = Tensor((rng.uniform(size=(5, 5)) > 0.6).astype(np.float64))
        x = Tensor(rng.uniform(0.05, 0.95, (5, 5)), requires_grad=True)
        return lambda p: dice_loss(p, target), x

    def case_bce(rng):
        target = Tensor((rng.uniform(size=(5, 5)) > 0.6).astype(np.float64))
        x = Tensor(rng.uniform(0.05, 0.95, (5, 5)), requires_grad=True)
        return lambda p: bce_loss(p, target), x

    def case_mha(rng):
        attn = MultiHeadAttention(8, 2, rng)
        kv = Tensor(rng.standard_normal((3, 8)))
        return lambda q: (attn(q, kv) ** 2).sum(), _rand(rng, 2, 8)

    def case_two_way(rng):
        block = TwoWayBlock(8, 2, 16, rng)

        def f(text):
            t, i = block(text, img)
            return (t ** 2).sum() + (i ** 2).sum()

        img = Tensor(rng.standard_normal((4, 8)))
        return f, _rand(rng, 1, 8)

    def case_patch_embed(rng):
        pe = PatchEmbed(1, 8, 4, 6, rng)
        return lambda x: (pe(x) ** 2).sum(), _rand(rng, 1, 8, 8)

    return {
        "add": case_add, "mul": case_mul, "div": case_div, "pow": case_pow,
        "exp": case_exp, "log": case_log, "tanh": case_tanh, "sigmoid": case_sigmoid,
        "gelu": case_gelu, "relu": case_relu, "clip": case_clip,
        "sum": case_sum_axis, "mean": case_mean, "reshape_transpose": case_reshape_transpose,
        "matmul": case_matmul, "matmul_batched": case_matmul_batched,
        "softmax": case_softmax, "layer_norm": case_layer_norm,
        "layer_norm_affine": case_layer_norm_gamma,
        "conv2d": case_conv2d, "conv2d_weight": case_conv2d_weight,
        "conv_transpose2d": case_conv_transpose, "conv_transpose2d_weight": case_conv_transpose_weight,
        "dice_loss": case_dice, "bce_loss": case_bce,
        "mha": case_mha, "two_way_block": case_two_way, "patch_embed": case_patch_embed,
    }


def run_op_gradchecks(n_seeds: int = 10, h: float = 1e-5, rel_tol: float = 1e-4) -> list[dict]:
    """Check every registered op over n_seeds random instances each."""
    rows = []
    for name, builder in _op_cases().items():
        worst = 0.0
        passed = True
        for seed in range(n_seeds):
            rng = np.random.default_rng(1000 + seed)
            f, x = builder(rng)
            report = finite_diff_check(f, x, h=h, rel_tol=rel_tol)
            worst = max(worst, report.max_rel_error)
            passed = passed and report.passed
        rows.append({"op": name, "passed": passed, "max_rel_error": worst})
    return rows


def composition_loss_fn(model: ZeusModel, rng: np.random.Generator):
    """Full pipeline loss on one random stack: frozen encoders ran once, then
    the trainable path (projection -> aligner -> decoder -> Dice+BCE)."""
    cfg = model.cfg
    img = rng.uniform(0.0, 1.0, (cfg.img_size, cfg.img_size))
    with no_grad():
        v_e = model.image_encoder(Tensor(img)).data
        from .data import resize_nearest
        pooled = model.vlm_encoder(Tensor(resize_nearest(img, cfg.vlm_img_size))).data
    label = (rng.uniform(size=(cfg.mask_size, cfg.mask_size)) > 0.7).astype(np.float64)
    v_const = Tensor(v_e[np.newaxis])
    e_const = Tensor(pooled[np.newaxis])
    target = Tensor(label[np.newaxis])

    def loss_fn():
        prompt = model.f_tt[0](model.f_vt[0](e_const))
        logits = decode_mask(model.decoder[0], v_const, prompt)
        return combined_loss(logits.sigmoid(), target, LossConfig())

    return loss_fn


def run_composition_gradcheck(n_seeds: int = 10, h: float = 1e-5, rel_tol: float = 1e-4,
                              coords_per_tensor: int = 6) -> list[dict]:
    """Finite differences through the whole forward+loss against every
    trainable tensor, sampling coordinates per tensor."""
    rows = []
    for seed in range(n_seeds):
        model = ZeusModel(micro_config(), seed=seed, n_modalities=1, wiring="embedding",
                          dtype=np.float64)
        rng = np.random.default_rng(5000 + seed)
        loss_fn = composition_loss_fn(model, rng)
        worst = 0.0
        for name, p in model.trainable_parameters().items():
            report = finite_diff_check(lambda _t: loss_fn(), p, h=h, rel_tol=rel_tol,
                                       max_checks=coords_per_tensor,
                                       rng=np.random.default_rng(77 + seed))
            worst = max(worst, report.max_rel_error)
        rows.append({"op": f"zeus_composition[seed={seed}]", "passed": worst < rel_tol,
                     "max_rel_error": worst})
    return rows


def run_all(n_seeds: int = 10) -> list[dict]:
    return run_op_gradchecks(n_seeds) + run_composition_gradcheck(min(n_seeds, 10))


def render_table(rows: list[dict]) -> str:
    lines = [f"{'op':<34} {'status':<6} {'max rel err':>12}"]
    lines.append("-" * len(lines[0]))
    for r in rows:
        lines.append(f"{r['op']:<34} {'PASS' if r['passed'] else 'FAIL':<6} "
                     f"{r['max_rel_error']:>12.3e}")
    return "\n".join(lines)
