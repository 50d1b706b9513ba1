"""ZipperNet, LightingNet and AdjustingNet as functional encoder-decoders.

Parameters live in a :data:`ParamStore`, an insertion-ordered ``dict`` from
name to leaf tensor. Forward passes are plain functions of that store so one
optimizer can step all networks of a session together.

Encoder block at depth ``d`` (``c_in -> c``)::

    pad+conv3x3, pad+conv3x3, BN, leaky-ReLU      -> tap (full resolution)
    pad+conv3x3, pad+conv3x3 stride 2, BN, leaky  -> next depth (half resolution)

Decoder block ``k`` (``c_in -> c``)::

    bilinear x2, concat skips, BN, pad+conv3x3 x2, BN, leaky, pad+conv3x3 x2, BN, leaky

The skips concatenated into decoder block ``k`` are the taps of encoder depth
``6 - k``, which sit at the post-upsample resolution. A 1x1 convolution and a
sigmoid close every network.

In ZipperNet the two encoder paths exchange taps before each downsample: at
odd depths path A's tap is added into path B, at even depths the reverse. The
decoder starts from the concatenation of both depth-5 outputs and receives
both paths' (post-exchange) taps as skips.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import diffcore as dc
from .diffcore import Grid

ParamStore = dict[str, torch.Tensor]

ENCODER_CHANNELS = (8, 16, 32, 64, 128)
DECODER_CHANNELS = (128, 64, 32, 16, 8)


@dataclass(frozen=True)
class NetSpec:
    kind: str = "zipper"
    out_channels: int = 1
    depth: int = 5
    encoder_channels: tuple[int, ...] = ENCODER_CHANNELS
    decoder_channels: tuple[int, ...] = DECODER_CHANNELS
    in_channels: int = 1

    def __post_init__(self):
        if self.kind not in ("zipper", "single_path"):
            raise ValueError(f"unknown network kind {self.kind!r}")
        if len(self.encoder_channels) != self.depth or len(self.decoder_channels) != self.depth:
            raise ValueError("channel lists must have one entry per depth")

    @property
    def multiple(self) -> int:
        """Spatial dims must be divisible by this."""
        return 2**self.depth


ZIPPER = NetSpec("zipper", out_channels=1)
LIGHTING = NetSpec("single_path", out_channels=1)
ADJUSTING = NetSpec("single_path", out_channels=2)


class _Builder:
    def __init__(self, seed: int, dtype: torch.dtype):
        self.gen = torch.Generator().manual_seed(seed)
        self.dtype = dtype
        self.params: ParamStore = {}

    def _add(self, name: str, value: torch.Tensor) -> None:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name}")
        self.params[name] = value.to(self.dtype).requires_grad_(True)

    def conv(self, name: str, c_in: int, c_out: int, k: int = 3) -> None:
        # He-normal on fan-in
        std = math.sqrt(2.0 / (c_in * k * k))
        w = torch.randn(c_out, c_in, k, k, generator=self.gen, dtype=torch.float64) * std
        self._add(f"{name}.weight", w)
        self._add(f"{name}.bias", torch.zeros(c_out))

    def bn(self, name: str, c: int) -> None:
        self._add(f"{name}.scale", torch.ones(c))
        self._add(f"{name}.shift", torch.zeros(c))

    def encoder_block(self, prefix: str, c_in: int, c: int) -> None:
        self.conv(f"{prefix}.conv1", c_in, c)
        self.conv(f"{prefix}.conv2", c, c)
        self.bn(f"{prefix}.bn1", c)
        self.conv(f"{prefix}.conv3", c, c)
        self.conv(f"{prefix}.down", c, c)
        self.bn(f"{prefix}.bn2", c)

    def decoder_block(self, prefix: str, c_in: int, c: int) -> None:
        self.bn(f"{prefix}.bn0", c_in)
        self.conv(f"{prefix}.conv1", c_in, c)
        self.conv(f"{prefix}.conv2", c, c)
        self.bn(f"{prefix}.bn1", c)
        self.conv(f"{prefix}.conv3", c, c)
        self.conv(f"{prefix}.conv4", c, c)
        self.bn(f"{prefix}.bn2", c)


def _decoder_in_channels(spec: NetSpec, n_paths: int) -> list[int]:
    enc, dec = spec.encoder_channels, spec.decoder_channels
    widths = []
    prev = n_paths * enc[-1]
    for k in range(spec.depth):
        skip = n_paths * enc[spec.depth - 1 - k]
        widths.append(prev + skip)
        prev = dec[k]
    return widths


def _build(spec: NetSpec, seed: int, paths: tuple[str, ...], dtype) -> ParamStore:
    b = _Builder(seed, dtype)
    for path in paths:
        c_in = spec.in_channels
        for d, c in enumerate(spec.encoder_channels, start=1):
            b.encoder_block(f"{path}enc{d}", c_in, c)
            c_in = c
    for k, (c_in, c) in enumerate(
        zip(_decoder_in_channels(spec, len(paths)), spec.decoder_channels), start=1
    ):
        b.decoder_block(f"dec{k}", c_in, c)
    b.conv("head", spec.decoder_channels[-1], spec.out_channels, k=1)
    return b.params


def build_zippernet(spec: NetSpec = ZIPPER, seed: int = 0, dtype=dc.DTYPE) -> ParamStore:
    if spec.kind != "zipper":
        raise ValueError("build_zippernet needs a zipper NetSpec")
    return _build(spec, seed, ("a.", "b."), dtype)


def build_singlepath(spec: NetSpec = LIGHTING, seed: int = 0, dtype=dc.DTYPE) -> ParamStore:
    if spec.kind != "single_path":
        raise ValueError("build_singlepath needs a single_path NetSpec")
    return _build(spec, seed, ("",), dtype)


def count_parameters(params: ParamStore) -> int:
    return sum(p.numel() for p in params.values())


# -- forward ------------------------------------------------------------------


def _conv(x: Grid, p: ParamStore, name: str, stride: int = 1) -> Grid:
    return dc.conv2d(dc.reflection_pad(x, 1), p[f"{name}.weight"], p[f"{name}.bias"], stride)


def _bn(x: Grid, p: ParamStore, name: str) -> Grid:
    return dc.batch_norm(x, p[f"{name}.scale"], p[f"{name}.shift"])


def _encoder_tap(x: Grid, p: ParamStore, prefix: str) -> Grid:
    x = _conv(x, p, f"{prefix}.conv1")
    x = _conv(x, p, f"{prefix}.conv2")
    return dc.leaky_relu(_bn(x, p, f"{prefix}.bn1"))


def _encoder_down(tap: Grid, p: ParamStore, prefix: str) -> Grid:
    x = _conv(tap, p, f"{prefix}.conv3")
    x = _conv(x, p, f"{prefix}.down", stride=2)
    return dc.leaky_relu(_bn(x, p, f"{prefix}.bn2"))


def _decoder_block(x: Grid, skips: list[Grid], p: ParamStore, prefix: str) -> Grid:
    x = dc.bilinear_resize(x, 2)
    x = _bn(dc.concat([x, *skips]), p, f"{prefix}.bn0")
    x = _conv(x, p, f"{prefix}.conv1")
    x = _conv(x, p, f"{prefix}.conv2")
    x = dc.leaky_relu(_bn(x, p, f"{prefix}.bn1"))
    x = _conv(x, p, f"{prefix}.conv3")
    x = _conv(x, p, f"{prefix}.conv4")
    return dc.leaky_relu(_bn(x, p, f"{prefix}.bn2"))


def _head(x: Grid, p: ParamStore) -> Grid:
    return dc.sigmoid(dc.conv2d(x, p["head.weight"], p["head.bias"]))


def _check_input(x: Grid, depth: int) -> None:
    if x.ndim != 3:
        raise ValueError(f"input must be C x H x W, got shape {tuple(x.shape)}")
    m = 2**depth
    if x.shape[1] % m or x.shape[2] % m:
        raise ValueError(f"input dims {tuple(x.shape[1:])} must be divisible by {m}")


def _depth(params: ParamStore, prefix: str) -> int:
    return sum(1 for k in params if k.startswith(prefix) and k.endswith(".conv1.weight"))


def zippernet_forward(
    params: ParamStore, in_a: Grid, in_b: Grid, features: dict | None = None
) -> Grid:
    """Fuse two same-sized single-channel inputs into one map in (0, 1).

    If ``features`` is a dict it is filled with every intermediate activation
    keyed by ``"a.tap1"``, ``"b.down3"``, ``"dec2"`` and so on.
    """
    if in_a.shape != in_b.shape:
        raise ValueError(f"inputs must match: {tuple(in_a.shape)} vs {tuple(in_b.shape)}")
    depth = _depth(params, "a.enc")
    _check_input(in_a, depth)
    feats = features if features is not None else {}

    xa, xb = in_a, in_b
    taps_a, taps_b = [], []
    for d in range(1, depth + 1):
        ta = _encoder_tap(xa, params, f"a.enc{d}")
        tb = _encoder_tap(xb, params, f"b.enc{d}")
        if d % 2:
            tb = tb + ta
        else:
            ta = ta + tb
        taps_a.append(ta)
        taps_b.append(tb)
        xa = _encoder_down(ta, params, f"a.enc{d}")
        xb = _encoder_down(tb, params, f"b.enc{d}")
        feats.update({f"a.tap{d}": ta, f"b.tap{d}": tb, f"a.down{d}": xa, f"b.down{d}": xb})

    x = dc.concat([xa, xb])
    for k in range(1, depth + 1):
        d = depth + 1 - k
        x = _decoder_block(x, [taps_a[d - 1], taps_b[d - 1]], params, f"dec{k}")
        feats[f"dec{k}"] = x
    return _head(x, params)


def singlepath_forward(params: ParamStore, x: Grid, features: dict | None = None) -> Grid:
    depth = _depth(params, "enc")
    _check_input(x, depth)
    feats = features if features is not None else {}
    taps = []
    for d in range(1, depth + 1):
        t = _encoder_tap(x, params, f"enc{d}")
        taps.append(t)
        x = _encoder_down(t, params, f"enc{d}")
        feats.update({f"tap{d}": t, f"down{d}": x})
    for k in range(1, depth + 1):
        x = _decoder_block(x, [taps[depth - k]], params, f"dec{k}")
        feats[f"dec{k}"] = x
    return _head(x, params)


def extract_alpha(adjusting_output: Grid) -> tuple[Grid, Grid]:
    """Read the two lightness weights off the centre pixel of each channel."""
    if adjusting_output.ndim != 3 or adjusting_output.shape[0] != 2:
        raise ValueError(
            f"AdjustingNet output must have 2 channels, got shape {tuple(adjusting_output.shape)}"
        )
    h, w = adjusting_output.shape[1] // 2, adjusting_output.shape[2] // 2
    return adjusting_output[0, h, w], adjusting_output[1, h, w]


# -- checkpoints --------------------------------------------------------------


def save_params(params: ParamStore, path) -> None:
    """Write little-endian fp32 arrays to ``path`` with a ``<path>.json`` index."""
    path = Path(path)
    index = {}
    offset = 0
    with open(path, "wb") as fh:
        for name, p in params.items():
            arr = p.detach().cpu().numpy().astype("<f4")
            fh.write(arr.tobytes())
            index[name] = {"offset": offset, "shape": list(arr.shape)}
            offset += arr.nbytes
    Path(f"{path}.json").write_text(json.dumps(index, indent=2))


def load_params(path, dtype=dc.DTYPE) -> ParamStore:
    path = Path(path)
    index = json.loads(Path(f"{path}.json").read_text())
    raw = path.read_bytes()
    params: ParamStore = {}
    for name, entry in index.items():
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=entry["offset"]).reshape(shape)
        params[name] = torch.tensor(arr.copy(), dtype=dtype).requires_grad_(True)
    return params
