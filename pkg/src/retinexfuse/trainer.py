"""Per-scene optimization of the fusion networks."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from . import diffcore as dc
from . import losses as ls
from . import networks as nw
from .imaging import bicubic_upscale, normalize, pad_to_multiple

log = logging.getLogger(__name__)

SCALES = (1, 2, 4)
VARIANTS = ("full", "no_alpha", "no_grad", "no_locks", "dot_mode")
NOISE_HIGH = 0.1


@dataclass
class Scene:
    ir_lr: torch.Tensor
    vis_lr: torch.Tensor
    ir_hr: torch.Tensor
    vis_hr: torch.Tensor
    noise: torch.Tensor
    scale: int
    seed: int
    orig_shape: tuple[int, int]

    @property
    def lr_shape(self) -> tuple[int, int]:
        return tuple(self.ir_lr.shape[1:])

    @property
    def hr_shape(self) -> tuple[int, int]:
        return tuple(self.ir_hr.shape[1:])

    @property
    def out_shape(self) -> tuple[int, int]:
        h, w = self.orig_shape
        return h * self.scale, w * self.scale


def prepare_scene(ir, vis, scale: int = 2, seed: int = 0, multiple: int = 32) -> Scene:
    """Gray-convert, normalize and pad an IR/VIS pair; build the upscaled network inputs.

    ``ir`` and ``vis`` are numpy arrays: ``uint8``/``uint16`` of any bit depth,
    or floats already in ``[0, 1]``; colour arrays are converted with luma weights.
    """
    if scale not in SCALES:
        raise ValueError(f"scale must be one of {SCALES}, got {scale}")
    ir_g, vis_g = normalize(ir), normalize(vis)
    if ir_g.shape != vis_g.shape:
        raise ValueError(f"IR and VIS dims differ: {ir_g.shape} vs {vis_g.shape}")
    if min(ir_g.shape) < 2:
        raise ValueError(f"image too small: {ir_g.shape}")

    ir_p = pad_to_multiple(ir_g, multiple)
    vis_p = pad_to_multiple(vis_g, multiple)
    ir_hr = np.clip(bicubic_upscale(ir_p, scale), 0.0, 1.0)
    vis_hr = np.clip(bicubic_upscale(vis_p, scale), 0.0, 1.0)
    noise = np.random.default_rng(seed).uniform(0.0, NOISE_HIGH, size=(1, *ir_p.shape))

    return Scene(
        ir_lr=dc.grid(ir_p),
        vis_lr=dc.grid(vis_p),
        ir_hr=dc.grid(ir_hr),
        vis_hr=dc.grid(vis_hr),
        noise=dc.grid(noise),
        scale=scale,
        seed=seed,
        orig_shape=ir_g.shape,
    )


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    iterations: int = 10000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    log_every: int = 10
    weights: ls.LossWeights = field(default_factory=ls.LossWeights)
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")


@dataclass
class FusionResult:
    fused: np.ndarray
    lighting1: np.ndarray
    lighting2: np.ndarray
    alpha1: float
    alpha2: float
    log: list[ls.LossReport]
    final_report: ls.LossReport
    elapsed: float
    variant: str = "full"
    params: dict[str, nw.ParamStore] = field(default_factory=dict, repr=False)


class NonFiniteLossError(RuntimeError):
    def __init__(self, iteration: int, last_report: ls.LossReport | None):
        self.iteration = iteration
        self.last_report = last_report
        super().__init__(
            f"non-finite loss at iteration {iteration}; last finite report: "
            f"{last_report.row() if last_report else None}"
        )


def adam_step(params: nw.ParamStore, moments: dict, lr: float, beta1: float,
              beta2: float, eps: float, t: int) -> None:
    """Bias-corrected Adam update in place; ``moments`` persists between calls."""
    with torch.no_grad():
        for name, p in params.items():
            if p.grad is None:
                continue
            g = p.grad
            if name not in moments:
                moments[name] = (torch.zeros_like(p), torch.zeros_like(p))
            m, v = moments[name]
            m.mul_(beta1).add_(g, alpha=1 - beta1)
            v.mul_(beta2).addcmul_(g, g, value=1 - beta2)
            m_hat = m / (1 - beta1**t)
            v_hat = v / (1 - beta2**t)
            p.sub_(lr * m_hat / (torch.sqrt(v_hat) + eps))


def variant_weights(weights: ls.LossWeights, variant: str) -> ls.LossWeights:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    enabled = dict(weights.enabled)
    mode = weights.retinex_mode
    if variant == "no_alpha":
        enabled["a_lock"] = False
    elif variant == "no_grad":
        enabled["grad"] = False
    elif variant == "no_locks":
        enabled.update(l_lock=False, a_lock=False, mean_lock=False)
    elif variant == "dot_mode":
        mode = "dot"
    return replace(weights, enabled=enabled, retinex_mode=mode)


def build_networks(seed: int, variant: str = "full") -> dict[str, nw.ParamStore]:
    nets = {
        "zipper": nw.build_zippernet(nw.ZIPPER, seed),
        "lighting1": nw.build_singlepath(nw.LIGHTING, seed + 1),
        "lighting2": nw.build_singlepath(nw.LIGHTING, seed + 2),
    }
    if variant != "no_alpha":
        nets["adjusting"] = nw.build_singlepath(nw.ADJUSTING, seed + 3)
    return nets


def forward(nets: dict[str, nw.ParamStore], scene: Scene) -> dict[str, torch.Tensor]:
    R_hr = nw.zippernet_forward(nets["zipper"], scene.ir_hr, scene.vis_hr)
    out = {
        "R_hr": R_hr,
        "R_lr": dc.area_downsample(R_hr, scene.scale),
        "L1": nw.singlepath_forward(nets["lighting1"], scene.ir_lr),
        "L2": nw.singlepath_forward(nets["lighting2"], scene.vis_lr),
    }
    if "adjusting" in nets:
        out["alpha1"], out["alpha2"] = nw.extract_alpha(
            nw.singlepath_forward(nets["adjusting"], scene.noise)
        )
    else:
        one = torch.ones((), dtype=R_hr.dtype)
        out["alpha1"], out["alpha2"] = one, one
    out["learned_alpha"] = "adjusting" in nets
    return out


def loss_terms(out: dict, scene: Scene, weights: ls.LossWeights) -> dict[str, torch.Tensor]:
    """Evaluate every term at its resolution: Retinex at sensor size, gradients at output size."""
    if weights.retinex_mode == "dot":
        retinex = ls.retinex_loss_dot(out["R_lr"], out["L1"], out["L2"], scene.ir_lr, scene.vis_lr)
    else:
        retinex = ls.retinex_loss_log(
            out["R_lr"], out["L1"], out["L2"], scene.ir_lr, scene.vis_lr,
            out["alpha1"], out["alpha2"], weights.c,
        )
    terms = {
        "retinex": retinex,
        "grad": ls.joint_gradient_loss(out["R_hr"], scene.ir_hr, scene.vis_hr),
        "l_lock": ls.l_lock_loss(out["L1"], out["L2"]),
        "mean_lock": ls.mean_lock_loss(out["R_hr"], scene.ir_lr, scene.vis_lr),
    }
    if out["learned_alpha"]:
        terms["a_lock"] = ls.alpha_lock_loss(out["alpha1"], out["alpha2"])
    return terms


def scene_loss(nets, scene: Scene, weights: ls.LossWeights):
    out = forward(nets, scene)
    total, report = ls.total_loss(loss_terms(out, scene, weights), weights)
    report.alpha1 = float(out["alpha1"].detach())
    report.alpha2 = float(out["alpha2"].detach())
    return total, report, out


def _crop(t: torch.Tensor, shape: tuple[int, int]) -> np.ndarray:
    h, w = shape
    return t.detach()[0, :h, :w].cpu().numpy().astype(np.float64)


def train(scene: Scene, config: TrainConfig, variant: str = "full") -> FusionResult:
    weights = variant_weights(config.weights, variant)
    nets = build_networks(config.seed, variant)
    all_params = [p for store in nets.values() for p in store.values()]
    moments = {key: {} for key in nets}
    history: list[ls.LossReport] = []
    last_ok = None
    start = time.perf_counter()

    for it in range(1, config.iterations + 1):
        total, report, _ = scene_loss(nets, scene, weights)
        report.iteration = it
        if not math.isfinite(report.total):
            raise NonFiniteLossError(it, last_ok)
        last_ok = report
        if (it - 1) % config.log_every == 0:
            history.append(report)
            log.debug("iter %d total %.5f alpha %.4f %.4f", it, report.total,
                      report.alpha1, report.alpha2)
        dc.backward(total)
        for key, store in nets.items():
            adam_step(store, moments[key], config.learning_rate, config.beta1,
                      config.beta2, config.eps, it)
        dc.zero_grad(all_params)

    with torch.no_grad():
        total, final, out = scene_loss(nets, scene, weights)
    final.iteration = config.iterations + 1
    if not math.isfinite(final.total):
        raise NonFiniteLossError(config.iterations + 1, last_ok)

    return FusionResult(
        fused=np.clip(_crop(out["R_hr"], scene.out_shape), 0.0, 1.0),
        lighting1=_crop(out["L1"], scene.orig_shape),
        lighting2=_crop(out["L2"], scene.orig_shape),
        alpha1=final.alpha1,
        alpha2=final.alpha2,
        log=history,
        final_report=final,
        elapsed=time.perf_counter() - start,
        variant=variant,
        params=nets,
    )


def run_ablation(scene: Scene, config: TrainConfig, variant: str) -> FusionResult:
    return train(scene, config, variant)


def _cast_scene(scene: Scene, dtype: torch.dtype) -> Scene:
    return replace(
        scene,
        ir_lr=scene.ir_lr.to(dtype),
        vis_lr=scene.vis_lr.to(dtype),
        ir_hr=scene.ir_hr.to(dtype),
        vis_hr=scene.vis_hr.to(dtype),
        noise=scene.noise.to(dtype),
    )


def grad_check_scene(
    scene: Scene,
    weights: ls.LossWeights | None = None,
    seed: int = 0,
    n_per_net: int = 20,
    step: float = 1e-3,
    oracle_dtype: torch.dtype = torch.float64,
    analytic_dtype: torch.dtype = torch.float32,
) -> dict[str, float]:
    """Check the total-loss gradient of every network against central differences.

    Returns the worst relative error per network over ``n_per_net`` randomly
    drawn scalar parameters. The analytic gradient comes from a graph in
    ``analytic_dtype``; the differences are evaluated with a copy of the same
    parameters cast to ``oracle_dtype``.
    """
    weights = weights or ls.LossWeights()
    nets = build_networks(seed)
    if analytic_dtype != torch.float32:
        nets = {
            key: {n: p.detach().to(analytic_dtype).requires_grad_(True) for n, p in store.items()}
            for key, store in nets.items()
        }
    total, _, _ = scene_loss(nets, _cast_scene(scene, analytic_dtype), weights)
    dc.backward(total)

    oracle_nets = {
        key: {n: p.detach().to(oracle_dtype) for n, p in store.items()}
        for key, store in nets.items()
    }
    oracle_scene = _cast_scene(scene, oracle_dtype)
    rng = np.random.default_rng(seed)
    worst = {}
    with torch.no_grad():
        for key, store in nets.items():
            names = list(store)
            sizes = np.array([store[n].numel() for n in names])
            flat = rng.choice(int(sizes.sum()), size=n_per_net, replace=False)
            offsets = np.concatenate([[0], np.cumsum(sizes)])
            err = 0.0
            for k in flat:
                i = int(np.searchsorted(offsets, k, side="right") - 1)
                name, local = names[i], int(k - offsets[i])
                target = oracle_nets[key][name].view(-1)
                original = target[local].item()
                target[local] = original + step
                f_plus = scene_loss(oracle_nets, oracle_scene, weights)[0].item()
                target[local] = original - step
                f_minus = scene_loss(oracle_nets, oracle_scene, weights)[0].item()
                target[local] = original
                numeric = (f_plus - f_minus) / (2 * step)
                analytic = store[name].grad.view(-1)[local].item()
                rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
                err = max(err, rel)
            worst[key] = err
    return worst
