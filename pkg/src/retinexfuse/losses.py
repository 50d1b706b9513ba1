"""Retinex fusion loss family and its weighted total.

All image terms are pixel means of per-pixel L1 residuals, so each term is
non-negative and vanishes exactly on its zero set.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, fields

import torch

from . import diffcore as dc
from .diffcore import Grid

TERMS = ("retinex", "grad", "l_lock", "a_lock", "mean_lock")
LOG_COLUMNS = ("iter", *TERMS, "total", "alpha1", "alpha2")


@dataclass
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 0.2
    lambda3: float = 0.25
    lambda4: float = 0.25
    lambda5: float = 1.0
    c: float = 1e-7
    enabled: dict[str, bool] = field(default_factory=lambda: dict.fromkeys(TERMS, True))
    retinex_mode: str = "log"

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3", "lambda4", "lambda5"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.c <= 0:
            raise ValueError("bias c must be positive")
        if self.retinex_mode not in ("log", "dot"):
            raise ValueError(f"retinex_mode must be 'log' or 'dot', got {self.retinex_mode!r}")
        unknown = set(self.enabled) - set(TERMS)
        if unknown:
            raise ValueError(f"unknown loss terms {sorted(unknown)}")
        self.enabled = {t: bool(self.enabled.get(t, True)) for t in TERMS}

    @property
    def lambdas(self) -> dict[str, float]:
        return dict(zip(TERMS, (self.lambda1, self.lambda2, self.lambda3, self.lambda4, self.lambda5)))

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class LossReport:
    """Unweighted term values of one iteration plus their weighted total."""

    terms: dict[str, float]
    total: float
    alpha1: float = float("nan")
    alpha2: float = float("nan")
    iteration: int = 0

    def row(self) -> dict:
        out = {"iter": self.iteration}
        out.update({t: self.terms.get(t, 0.0) for t in TERMS})
        out.update(total=self.total, alpha1=self.alpha1, alpha2=self.alpha2)
        return out


def write_log_csv(reports: list[LossReport], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        writer.writeheader()
        for r in reports:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.row().items()})


def read_log_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [
            {k: (int(v) if k == "iter" else float(v)) for k, v in row.items()}
            for row in csv.DictReader(fh)
        ]


def _check_shapes(*grids: Grid) -> None:
    shapes = {tuple(g.shape) for g in grids}
    if len(shapes) != 1:
        raise ValueError(f"shape mismatch among inputs: {sorted(shapes)}")


def _safe_log(x: Grid, c: float) -> Grid:
    return dc.log(dc.abs(dc.scalar_add(x, c)))


def retinex_loss_log(R, L1, L2, I1, I2, alpha1, alpha2, c: float = 1e-7) -> Grid:
    """Mean of ``|a_k (log|R+c| + log|L_k+c|) - log|I_k+c||`` summed over both sources."""
    _check_shapes(R, L1, L2, I1, I2)
    log_r = _safe_log(R, c)
    res1 = alpha1 * (log_r + _safe_log(L1, c)) - _safe_log(I1, c)
    res2 = alpha2 * (log_r + _safe_log(L2, c)) - _safe_log(I2, c)
    return dc.reduce_mean(dc.abs(res1) + dc.abs(res2))


def retinex_loss_dot(R, L1, L2, I1, I2) -> Grid:
    _check_shapes(R, L1, L2, I1, I2)
    return dc.reduce_mean(dc.abs(dc.mul(R, L1) - I1) + dc.abs(dc.mul(R, L2) - I2))


def signed_max_magnitude(a: Grid, b: Grid) -> Grid:
    """Pick, per pixel, whichever value has the larger magnitude (ties go to ``a``)."""
    return torch.where(a.abs() >= b.abs(), a, b)


def joint_gradient_loss(R, I1, I2) -> Grid:
    _check_shapes(R, I1, I2)
    target = signed_max_magnitude(dc.laplacian(I1), dc.laplacian(I2))
    return dc.reduce_mean(dc.abs(dc.laplacian(R) - target))


def l_lock_loss(L1, L2) -> Grid:
    _check_shapes(L1, L2)
    return dc.reduce_mean(dc.abs(L1 - 1.0) + dc.abs(L2 - 1.0))


def alpha_lock_loss(alpha1, alpha2) -> Grid:
    return torch.abs(alpha1 - 0.5) + torch.abs(alpha2 - 0.5)


def mean_lock_loss(R, I1, I2) -> Grid:
    return torch.abs(dc.reduce_mean(R) - (dc.reduce_mean(I1) + dc.reduce_mean(I2)) / 2)


def total_loss(terms: dict[str, Grid], weights: LossWeights) -> tuple[Grid, LossReport]:
    """Weighted sum over enabled terms.

    Every supplied term is reported unweighted, enabled or not; only enabled
    terms enter the total. Missing terms are reported as 0.
    """
    lambdas = weights.lambdas
    total = None
    values = {}
    for name in TERMS:
        value = terms.get(name)
        values[name] = 0.0 if value is None else float(value.detach())
        if value is None or not weights.enabled[name]:
            continue
        contrib = lambdas[name] * value
        total = contrib if total is None else total + contrib
    if total is None:
        total = torch.zeros((), dtype=dc.DTYPE)
    return total, LossReport(terms=values, total=float(total.detach()))
