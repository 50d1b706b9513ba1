"""Differentiable operators over dense ``C x H x W`` grids.

Every op takes and returns :class:`torch.Tensor` objects of rank 3 (or rank 0
for scalars) and records onto torch's autograd tape. The conventions that the
rest of the package relies on are fixed here:

* convolution is cross-correlation with no implicit padding;
* padding is reflection that does not repeat the edge pixel;
* bilinear resizing samples at ``(i + 0.5) / factor - 0.5`` (align-corners off);
* ``maximum`` routes tied gradients to its first argument;
* ``leaky_relu`` uses ``slope`` as its subgradient at zero;
* ``abs`` has subgradient zero at zero.

Gradients accumulate across repeated ``backward`` calls until
:func:`zero_grad` is called.
"""

from __future__ import annotations

import builtins
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F

Grid = torch.Tensor

DTYPE = torch.float32
LEAKY_SLOPE = 0.2
BN_EPS = 1e-5

_LAPLACIAN = torch.tensor([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])


def grid(values, requires_grad: bool = False, dtype: torch.dtype = DTYPE) -> Grid:
    """Build a grid from array-like values, promoting 2-D input to one channel."""
    t = torch.as_tensor(np.asarray(values), dtype=dtype).clone()
    if t.ndim == 2:
        t = t[None]
    if t.ndim != 3:
        raise ValueError(f"grid must be C x H x W, got shape {tuple(t.shape)}")
    return t.requires_grad_(requires_grad)


def _check_rank3(x: Grid, name: str = "input") -> None:
    if x.ndim != 3:
        raise ValueError(f"{name} must be C x H x W, got shape {tuple(x.shape)}")


def _check_same_shape(a: Grid, b: Grid) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def conv2d(x: Grid, kernel: Grid, bias: Grid, stride: int = 1) -> Grid:
    """Unpadded cross-correlation of ``x`` with ``kernel`` (Cout x Cin x k x k)."""
    _check_rank3(x)
    if stride not in (1, 2):
        raise ValueError(f"stride must be 1 or 2, got {stride}")
    if kernel.ndim != 4:
        raise ValueError(f"kernel must be Cout x Cin x k x k, got {tuple(kernel.shape)}")
    if kernel.shape[1] != x.shape[0]:
        raise ValueError(
            f"kernel expects {kernel.shape[1]} input channels, input has {x.shape[0]}"
        )
    if bias.shape != (kernel.shape[0],):
        raise ValueError(f"bias must have shape ({kernel.shape[0]},), got {tuple(bias.shape)}")
    k = kernel.shape[-1]
    if x.shape[1] < k or x.shape[2] < k:
        raise ValueError(f"input {tuple(x.shape)} smaller than {k}x{k} kernel")
    return F.conv2d(x[None], kernel, bias, stride=stride)[0]


def reflection_pad(x: Grid, pad: int) -> Grid:
    """Mirror ``pad`` pixels onto every side, excluding the edge pixel itself."""
    _check_rank3(x)
    if pad < 1:
        raise ValueError(f"pad must be >= 1, got {pad}")
    if pad >= min(x.shape[1], x.shape[2]):
        raise ValueError(f"pad {pad} must be smaller than spatial dims {tuple(x.shape[1:])}")
    return F.pad(x[None], (pad, pad, pad, pad), mode="reflect")[0]


def batch_norm(x: Grid, scale: Grid, shift: Grid, eps: float = BN_EPS) -> Grid:
    """Per-channel normalization over the spatial extent of a single instance.

    Uses the population variance and keeps no running statistics.
    """
    _check_rank3(x)
    c = x.shape[0]
    if scale.shape != (c,) or shift.shape != (c,):
        raise ValueError(f"scale/shift must have shape ({c},)")
    mean = x.mean(dim=(1, 2), keepdim=True)
    centered = x - mean
    var = (centered * centered).mean(dim=(1, 2), keepdim=True)
    return centered / torch.sqrt(var + eps) * scale[:, None, None] + shift[:, None, None]


def leaky_relu(x: Grid, slope: float = LEAKY_SLOPE) -> Grid:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"slope must lie in (0, 1), got {slope}")
    return torch.where(x > 0, x, slope * x)


def sigmoid(x: Grid) -> Grid:
    """Logistic function held strictly inside (0, 1) at the grid's precision."""
    fi = torch.finfo(x.dtype)
    return torch.clamp(torch.sigmoid(x), min=fi.tiny, max=1.0 - fi.eps / 2)


def bilinear_resize(x: Grid, factor: float) -> Grid:
    _check_rank3(x)
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    h, w = x.shape[1] * factor, x.shape[2] * factor
    if builtins.abs(h - round(h)) > 1e-9 or builtins.abs(w - round(w)) > 1e-9:
        raise ValueError(f"factor {factor} gives non-integer output size {h} x {w}")
    if factor == 1:
        return x
    out = F.interpolate(
        x[None], size=(int(round(h)), int(round(w))), mode="bilinear", align_corners=False
    )
    return out[0]


def area_downsample(x: Grid, factor: int) -> Grid:
    """Mean over non-overlapping ``factor x factor`` blocks; factor 1 is the identity."""
    _check_rank3(x)
    if factor < 1 or int(factor) != factor:
        raise ValueError(f"factor must be a positive integer, got {factor}")
    if x.shape[1] % factor or x.shape[2] % factor:
        raise ValueError(f"dims {tuple(x.shape[1:])} not divisible by {factor}")
    if factor == 1:
        return x
    return F.avg_pool2d(x[None], kernel_size=factor, stride=factor)[0]


def laplacian(x: Grid) -> Grid:
    """Four-neighbour Laplacian after one pixel of reflection padding."""
    _check_rank3(x)
    c = x.shape[0]
    kernel = _LAPLACIAN.to(x.dtype).expand(c, 1, 3, 3)
    padded = reflection_pad(x, 1)
    return F.conv2d(padded[None], kernel, groups=c)[0]


# -- elementwise --------------------------------------------------------------


def add(a: Grid, b: Grid) -> Grid:
    _check_same_shape(a, b)
    return a + b


def sub(a: Grid, b: Grid) -> Grid:
    _check_same_shape(a, b)
    return a - b


def mul(a: Grid, b: Grid) -> Grid:
    _check_same_shape(a, b)
    return a * b


def maximum(a: Grid, b: Grid) -> Grid:
    _check_same_shape(a, b)
    return torch.where(a >= b, a, b)


def abs(x: Grid) -> Grid:  # noqa: A001
    return torch.abs(x)


def log(x: Grid) -> Grid:
    if not bool((x > 0).all()):
        raise ValueError(
            f"log of non-positive value (min {float(x.detach().min()):.3g}); "
            "apply abs and a positive bias first"
        )
    return torch.log(x)


def scalar_mul(x: Grid, s: float) -> Grid:
    return x * s


def scalar_add(x: Grid, s: float) -> Grid:
    return x + s


def reduce_mean(x: Grid) -> Grid:
    return x.mean()


def concat(grids: list[Grid]) -> Grid:
    """Channel concatenation of same-sized grids."""
    hw = {tuple(g.shape[1:]) for g in grids}
    if len(hw) != 1:
        raise ValueError(f"cannot concatenate grids with spatial dims {sorted(hw)}")
    return torch.cat(grids, dim=0)


# -- tape ---------------------------------------------------------------------


def backward(loss: Grid, retain_graph: bool = False) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.numel() != 1:
        raise ValueError(f"loss must be a scalar, got shape {tuple(loss.shape)}")
    loss.reshape(()).backward(retain_graph=retain_graph)


def zero_grad(params) -> None:
    for p in params:
        if p.grad is not None:
            p.grad.zero_()


def grad_check(
    f: Callable[[Grid], Grid],
    x: Grid,
    step: float = 1e-3,
    n_samples: int = 20,
    seed: int = 0,
    oracle_dtype: torch.dtype | None = torch.float64,
) -> float:
    """Worst relative error between backward gradients and central differences.

    The analytic gradient is taken at ``x``'s own precision. The central
    differences ``(f(x + h e) - f(x - h e)) / 2h`` are evaluated on ``x`` cast
    to ``oracle_dtype`` (``None`` keeps ``x``'s dtype), so ``f`` must accept
    either precision. ``n_samples`` coordinates are drawn with ``seed`` (all of
    them if ``x`` is smaller). Relative error uses ``max(|analytic|,
    |numeric|, 1e-8)`` as its denominator.
    """
    leaf = x.detach().clone().requires_grad_(True)
    out = f(leaf)
    backward(out)
    analytic = leaf.grad.detach().reshape(-1).clone()

    n = leaf.numel()
    rng = np.random.default_rng(seed)
    if n <= n_samples:
        idx = np.arange(n)
    else:
        idx = rng.choice(n, size=n_samples, replace=False)

    base = x.detach().clone().to(oracle_dtype or x.dtype).reshape(-1)
    worst = 0.0
    with torch.no_grad():
        for k in idx:
            probe = base.clone()
            probe[k] += step
            f_plus = float(f(probe.reshape(x.shape)))
            probe[k] = base[k] - step
            f_minus = float(f(probe.reshape(x.shape)))
            numeric = (f_plus - f_minus) / (2 * step)
            a = float(analytic[k])
            err = builtins.abs(a - numeric) / max(builtins.abs(a), builtins.abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
