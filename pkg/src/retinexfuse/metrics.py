"""Fusion-quality metrics: mean gradient, cross entropy, edge intensity, spatial frequency.

Images are gray arrays in ``[0, 1]``; every metric works on the 0-255 scale.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .imaging import bicubic_resize

BINS = 256


def _as_255(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D gray image, got shape {img.shape}")
    return img * 255.0


def mean_gradient(img) -> float:
    x = _as_255(img)
    if min(x.shape) < 2:
        raise ValueError(f"mean gradient needs at least 2x2 pixels, got {x.shape}")
    dx = x[:-1, 1:] - x[:-1, :-1]
    dy = x[1:, :-1] - x[:-1, :-1]
    return float(np.mean(np.sqrt((dx * dx + dy * dy) / 2.0)))


def histogram(img) -> np.ndarray:
    """Normalized 256-bin histogram of an image rounded to 8-bit levels."""
    levels = np.clip(np.rint(_as_255(img)), 0, BINS - 1).astype(np.int64)
    return np.bincount(levels.ravel(), minlength=BINS) / levels.size


def kl_divergence(p: np.ndarray, q: np.ndarray, floor: float) -> float:
    """``sum p log2(p / q)`` over bins with ``p > 0``; ``q`` is floored at ``floor``."""
    mask = p > 0
    return float(np.sum(p[mask] * np.log2(p[mask] / np.maximum(q[mask], floor))))


def cross_entropy_parts(src1, src2, fused) -> tuple[float, float]:
    a, b, f = (np.asarray(x) for x in (src1, src2, fused))
    if not (a.shape == b.shape == f.shape):
        raise ValueError(f"dims differ: {a.shape}, {b.shape}, {f.shape}")
    floor = 1.0 / (4 * f.size)
    hf = histogram(f)
    return kl_divergence(histogram(a), hf, floor), kl_divergence(histogram(b), hf, floor)


def cross_entropy(src1, src2, fused) -> float:
    d1, d2 = cross_entropy_parts(src1, src2, fused)
    return (d1 + d2) / 2.0


def _sobel(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Separable Sobel responses with reflection borders.

    Each response is a difference of two smoothed copies, so flat regions give exactly 0.
    """
    p = np.pad(x, 1, mode="reflect")
    rows = p[:-2, :] + 2.0 * p[1:-1, :] + p[2:, :]
    cols = p[:, :-2] + 2.0 * p[:, 1:-1] + p[:, 2:]
    return rows[:, 2:] - rows[:, :-2], cols[2:, :] - cols[:-2, :]


def edge_intensity(img) -> float:
    x = _as_255(img)
    if min(x.shape) < 3:
        raise ValueError(f"edge intensity needs at least 3x3 pixels, got {x.shape}")
    sx, sy = _sobel(x)
    return float(np.mean(np.sqrt(sx * sx + sy * sy)))


def spatial_frequency(img) -> float:
    x = _as_255(img)
    if min(x.shape) < 2:
        raise ValueError(f"spatial frequency needs at least 2x2 pixels, got {x.shape}")
    rf2 = np.mean((x[:, 1:] - x[:, :-1]) ** 2)
    cf2 = np.mean((x[1:, :] - x[:-1, :]) ** 2)
    return float(np.sqrt(rf2 + cf2))


@dataclass
class MetricReport:
    mg: float
    cen: float
    ei: float
    sf: float
    cen_src1: float = 0.0
    cen_src2: float = 0.0
    inputs: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        return cls(**json.loads(text))


def match_size(src, shape) -> np.ndarray:
    """Bicubic-resample ``src`` to ``shape`` when it differs; clip to ``[0, 1]``."""
    src = np.asarray(src, dtype=np.float64)
    if src.shape == tuple(shape):
        return src
    return np.clip(bicubic_resize(src, *shape), 0.0, 1.0)


def evaluate_all(src1, src2, fused, inputs: dict | None = None) -> MetricReport:
    fused = np.asarray(fused, dtype=np.float64)
    a = match_size(src1, fused.shape)
    b = match_size(src2, fused.shape)
    d1, d2 = cross_entropy_parts(a, b, fused)
    return MetricReport(
        mg=mean_gradient(fused),
        cen=(d1 + d2) / 2.0,
        ei=edge_intensity(fused),
        sf=spatial_frequency(fused),
        cen_src1=d1,
        cen_src2=d2,
        inputs=dict(inputs or {}),
    )
