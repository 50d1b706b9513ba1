"""Image I/O and resampling helpers (numpy, float64 in ``[0, 1]``)."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

LUMA = (0.299, 0.587, 0.114)


def to_gray(img: np.ndarray) -> np.ndarray:
    """Collapse an ``H x W x C`` colour array to luma; gray arrays pass through."""
    img = np.asarray(img)
    if img.ndim == 2:
        return img.astype(np.float64)
    if img.ndim == 3 and img.shape[2] in (3, 4):
        rgb = img[..., :3].astype(np.float64)
        return rgb @ np.asarray(LUMA)
    if img.ndim == 3 and img.shape[2] == 1:
        return img[..., 0].astype(np.float64)
    raise ValueError(f"unsupported image shape {img.shape}")


def normalize(img: np.ndarray) -> np.ndarray:
    """Map integer images to ``[0, 1]`` by their bit depth; floats are clipped."""
    img = np.asarray(img)
    if img.dtype == np.uint8:
        return to_gray(img) / 255.0
    if img.dtype == np.uint16:
        return to_gray(img) / 65535.0
    if np.issubdtype(img.dtype, np.floating):
        return np.clip(to_gray(img), 0.0, 1.0)
    raise ValueError(f"unsupported image dtype {img.dtype}")


def read_image(path) -> np.ndarray:
    """Read a PNG or PGM (8 or 16 bit, gray or colour) as gray float64 in ``[0, 1]``."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            mode = im.mode
            if mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(im, dtype=np.int64)
                return np.clip(arr, 0, 65535).astype(np.float64) / 65535.0
            if mode == "F":
                return np.clip(np.asarray(im, dtype=np.float64), 0.0, 1.0)
            if mode not in ("L", "RGB", "RGBA", "LA"):
                im = im.convert("RGB")
            elif mode == "LA":
                im = im.convert("L")
            arr = np.asarray(im)
    except (OSError, SyntaxError) as exc:
        raise ValueError(f"cannot read image {path}: {exc}") from exc
    return normalize(arr)


def write_png16(path, img: np.ndarray) -> None:
    """Write a ``[0, 1]`` gray array as a 16-bit PNG."""
    q = np.round(np.clip(img, 0.0, 1.0) * 65535.0).astype(np.uint16)
    Image.fromarray(q).save(path)


def write_png8(path, img: np.ndarray) -> None:
    q = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(q).save(path)


def quantize16(img: np.ndarray) -> np.ndarray:
    """Values as they will read back from :func:`write_png16`."""
    return np.round(np.clip(img, 0.0, 1.0) * 65535.0) / 65535.0


def _cubic(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    t = np.abs(t)
    t2, t3 = t * t, t * t * t
    near = (a + 2) * t3 - (a + 3) * t2 + 1
    far = a * t3 - 5 * a * t2 + 8 * a * t - 4 * a
    return np.where(t <= 1, near, np.where(t < 2, far, 0.0))


def _bicubic_matrix(n_in: int, n_out: int, a: float) -> np.ndarray:
    scale = n_in / n_out
    centers = (np.arange(n_out) + 0.5) * scale - 0.5
    base = np.floor(centers).astype(int)
    m = np.zeros((n_out, n_in))
    for offset in (-1, 0, 1, 2):
        idx = base + offset
        w = _cubic(centers - idx, a)
        np.add.at(m, (np.arange(n_out), np.clip(idx, 0, n_in - 1)), w)
    return m


def bicubic_resize(img: np.ndarray, out_h: int, out_w: int, a: float = -0.5) -> np.ndarray:
    """Separable Catmull-Rom resize with half-pixel centres and clamped borders.

    The result is not clipped; callers that need ``[0, 1]`` clip themselves.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {img.shape}")
    mh = _bicubic_matrix(img.shape[0], out_h, a)
    mw = _bicubic_matrix(img.shape[1], out_w, a)
    return mh @ img @ mw.T


def bicubic_upscale(img: np.ndarray, scale: int) -> np.ndarray:
    if scale == 1:
        return np.asarray(img, dtype=np.float64).copy()
    h, w = np.asarray(img).shape
    return bicubic_resize(img, h * scale, w * scale)


def pad_to_multiple(img: np.ndarray, multiple: int) -> np.ndarray:
    """Reflection-pad bottom and right edges up to the next multiple."""
    h, w = img.shape
    ph, pw = (-h) % multiple, (-w) % multiple
    if ph == 0 and pw == 0:
        return img.copy()
    return np.pad(img, ((0, ph), (0, pw)), mode="reflect")
