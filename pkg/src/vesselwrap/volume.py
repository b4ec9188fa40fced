"""Volumetric data model, canonical file format and geometric preparation.

Volumes live on disk as a JSON header plus a sibling raw payload: the header
at ``<stem>.json`` describes geometry and dtype, the voxel data sits in
``<stem>.raw`` as a little-endian dump. Header keys (the on-disk contract):

``dims``
    ``[Z, H, W]`` voxel counts.
``spacing_mm``
    ``[z, y, x]`` voxel edge lengths in millimeters, all strictly positive.
``dtype``
    ``"u8"`` for binary masks and layered label grids, ``"f32"`` for
    probabilities.
``order``
    always ``"channel-major,z,y,x"``.
``channels``
    ordered list of channel names for mask/probability volumes; omitted or
    ``null`` for a single-grid layered label volume.

Probability payloads are clamped into [0, 1] at ingest with a 0.001
tolerance; values further out are rejected as corrupt.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Sequence, Union

import numpy as np

HEADER_ORDER = "channel-major,z,y,x"
PROB_INGEST_TOL = 1e-3

# Resampling target matching the mean voxel size of the original dataset
# (z, y, x in mm); overridable wherever a Spacing is accepted.
DEFAULT_TARGET_SPACING_MM = (1.0, 0.67, 0.67)


class VolumeFormatError(ValueError):
    """Raised for malformed headers, payload mismatches or invalid voxel data."""


class MissingChannelError(ValueError):
    """Raised when an operation needs a channel the volume does not carry."""


class ChannelId(IntEnum):
    """Stable channel numbering; 6 and 7 are the derived overlap channels."""

    PANCREAS = 0
    COMMON_BILE_DUCT = 1
    PANCREATIC_DUCT = 2
    ARTERY = 3
    VEIN = 4
    TUMOR = 5
    TUMOR_ARTERY = 6
    TUMOR_VEIN = 7


CHANNEL_NAMES = {
    ChannelId.PANCREAS: "pancreas",
    ChannelId.COMMON_BILE_DUCT: "common_bile_duct",
    ChannelId.PANCREATIC_DUCT: "pancreatic_duct",
    ChannelId.ARTERY: "artery",
    ChannelId.VEIN: "vein",
    ChannelId.TUMOR: "tumor",
    ChannelId.TUMOR_ARTERY: "tumor_artery",
    ChannelId.TUMOR_VEIN: "tumor_vein",
}
NAME_TO_CHANNEL = {name: cid for cid, name in CHANNEL_NAMES.items()}

STANDARD_CHANNELS = (
    ChannelId.PANCREAS,
    ChannelId.COMMON_BILE_DUCT,
    ChannelId.PANCREATIC_DUCT,
    ChannelId.ARTERY,
    ChannelId.VEIN,
    ChannelId.TUMOR,
)

# Label value -> channels it sets when decoding a layered grid. 7/8 mark the
# tumor-artery and tumor-vein overlaps and set both member channels.
LAYERED_DECODE = {
    1: (ChannelId.PANCREAS,),
    2: (ChannelId.COMMON_BILE_DUCT,),
    3: (ChannelId.PANCREATIC_DUCT,),
    4: (ChannelId.ARTERY,),
    5: (ChannelId.VEIN,),
    6: (ChannelId.TUMOR,),
    7: (ChannelId.ARTERY, ChannelId.TUMOR),
    8: (ChannelId.VEIN, ChannelId.TUMOR),
}
MAX_LAYERED_LABEL = 8


@dataclass(frozen=True)
class Spacing:
    """Voxel edge lengths in millimeters along z, y, x."""

    z_mm: float
    y_mm: float
    x_mm: float

    def __post_init__(self):
        for name in ("z_mm", "y_mm", "x_mm"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ValueError(f"spacing {name} must be a positive finite number, got {v!r}")

    def as_tuple(self) -> tuple[float, float, float]:
        return (float(self.z_mm), float(self.y_mm), float(self.x_mm))


def default_target_spacing() -> Spacing:
    return Spacing(*DEFAULT_TARGET_SPACING_MM)


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def _check_channels(channels: Sequence[ChannelId]) -> tuple[ChannelId, ...]:
    channels = tuple(ChannelId(c) for c in channels)
    if len(set(channels)) != len(channels):
        raise ValueError(f"duplicate channels: {channels}")
    return channels


@dataclass(frozen=True)
class MaskVolume:
    """Multi-channel binary volume; channels may overlap voxel-wise.

    ``data`` has shape (C, Z, H, W), dtype uint8, values in {0, 1}.
    """

    data: np.ndarray
    channels: tuple[ChannelId, ...]
    spacing: Spacing
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        channels = _check_channels(self.channels)
        arr = np.ascontiguousarray(self.data)
        if arr.ndim != 4:
            raise ValueError(f"mask data must be 4-D (C,Z,H,W), got shape {arr.shape}")
        if arr.shape[0] != len(channels):
            raise ValueError(
                f"channel count mismatch: data has {arr.shape[0]}, channel list has {len(channels)}"
            )
        if arr.dtype != np.uint8:
            if not np.isin(arr, (0, 1)).all():
                raise VolumeFormatError("mask voxels must be 0 or 1")
            arr = arr.astype(np.uint8)
        elif arr.size and arr.max() > 1:
            raise VolumeFormatError("mask voxels must be 0 or 1")
        object.__setattr__(self, "data", _freeze(arr))
        object.__setattr__(self, "channels", channels)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.data.shape[1:])

    def channel_index(self, cid: ChannelId) -> int:
        try:
            return self.channels.index(ChannelId(cid))
        except ValueError:
            raise MissingChannelError(
                f"volume has no {CHANNEL_NAMES[ChannelId(cid)]!r} channel"
            ) from None

    def channel(self, cid: ChannelId) -> np.ndarray:
        return self.data[self.channel_index(cid)]

    def has_channel(self, cid: ChannelId) -> bool:
        return ChannelId(cid) in self.channels


@dataclass(frozen=True)
class ProbVolume:
    """Multi-channel probability volume, same geometry rules as MaskVolume.

    ``data`` has shape (C, Z, H, W), dtype float32, values in [0, 1].
    """

    data: np.ndarray
    channels: tuple[ChannelId, ...]
    spacing: Spacing
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        channels = _check_channels(self.channels)
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 4:
            raise ValueError(f"probability data must be 4-D (C,Z,H,W), got shape {arr.shape}")
        if arr.shape[0] != len(channels):
            raise ValueError(
                f"channel count mismatch: data has {arr.shape[0]}, channel list has {len(channels)}"
            )
        if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
            raise VolumeFormatError("probabilities must lie in [0, 1]")
        object.__setattr__(self, "data", _freeze(arr))
        object.__setattr__(self, "channels", channels)

    dims = MaskVolume.dims
    channel_index = MaskVolume.channel_index
    channel = MaskVolume.channel
    has_channel = MaskVolume.has_channel


@dataclass(frozen=True)
class LayeredLabelVolume:
    """Single-grid volume with layered labels 0..8 (0 = background)."""

    data: np.ndarray
    spacing: Spacing
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data)
        if arr.ndim != 3:
            raise ValueError(f"layered label data must be 3-D (Z,H,W), got shape {arr.shape}")
        if arr.size and (arr.min() < 0 or arr.max() > MAX_LAYERED_LABEL):
            raise VolumeFormatError(f"layered labels must lie in 0..{MAX_LAYERED_LABEL}")
        object.__setattr__(self, "data", _freeze(arr.astype(np.uint8)))

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)


Volume = Union[MaskVolume, ProbVolume, LayeredLabelVolume]


def _raw_path(header_path: Path) -> Path:
    return header_path.with_suffix(".raw")


def read_volume(path) -> Volume:
    """Load a volume from its JSON header; the raw payload sits next to it."""
    path = Path(path)
    try:
        header = json.loads(path.read_text())
    except FileNotFoundError:
        raise VolumeFormatError(f"header not found: {path}") from None
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise VolumeFormatError(f"garbled header {path}: {exc}") from None
    if not isinstance(header, dict):
        raise VolumeFormatError(f"header {path} is not a JSON object")

    for key in ("dims", "spacing_mm", "dtype", "order"):
        if key not in header:
            raise VolumeFormatError(f"header {path} missing key {key!r}")
    if header["order"] != HEADER_ORDER:
        raise VolumeFormatError(f"unsupported order {header['order']!r}")
    dims = header["dims"]
    if not (isinstance(dims, list) and len(dims) == 3 and all(int(d) > 0 for d in dims)):
        raise VolumeFormatError(f"bad dims {dims!r}")
    dims = tuple(int(d) for d in dims)
    spacing = Spacing(*(float(s) for s in header["spacing_mm"]))
    dtype = header["dtype"]
    if dtype not in ("u8", "f32"):
        raise VolumeFormatError(f"unknown dtype {dtype!r}")

    names = header.get("channels")
    channels: tuple[ChannelId, ...] | None
    if names is None:
        channels = None
    else:
        try:
            channels = _check_channels(NAME_TO_CHANNEL[n] for n in names)
        except KeyError as exc:
            raise VolumeFormatError(f"unknown channel name {exc.args[0]!r}") from None

    raw = _raw_path(path)
    if not raw.exists():
        raise VolumeFormatError(f"raw payload not found: {raw}")
    payload = raw.read_bytes()

    n_grids = 1 if channels is None else len(channels)
    n_voxels = n_grids * dims[0] * dims[1] * dims[2]
    itemsize = 1 if dtype == "u8" else 4
    if len(payload) != n_voxels * itemsize:
        raise VolumeFormatError(
            f"payload size mismatch: expected {n_voxels * itemsize} bytes, got {len(payload)}"
        )

    if dtype == "u8":
        arr = np.frombuffer(payload, dtype="<u1")
    else:
        arr = np.frombuffer(payload, dtype="<f4")
    arr = arr.reshape((n_grids,) + dims).copy()

    if dtype == "f32":
        if channels is None:
            raise VolumeFormatError("f32 volumes must declare channels")
        lo, hi = float(arr.min(initial=0.0)), float(arr.max(initial=0.0))
        if lo < -PROB_INGEST_TOL or hi > 1.0 + PROB_INGEST_TOL:
            raise VolumeFormatError(
                f"probability values outside tolerated range: min={lo}, max={hi}"
            )
        np.clip(arr, 0.0, 1.0, out=arr)
        return ProbVolume(arr, channels, spacing)
    if channels is None:
        return LayeredLabelVolume(arr[0], spacing)
    return MaskVolume(arr, channels, spacing)


def write_volume(v: Volume, path) -> None:
    """Write header + raw payload; read_volume inverts this bit-exactly."""
    path = Path(path)
    if isinstance(v, LayeredLabelVolume):
        dtype, names, payload = "u8", None, v.data.astype("<u1").tobytes()
    elif isinstance(v, MaskVolume):
        dtype, names = "u8", [CHANNEL_NAMES[c] for c in v.channels]
        payload = v.data.astype("<u1").tobytes()
    elif isinstance(v, ProbVolume):
        dtype, names = "f32", [CHANNEL_NAMES[c] for c in v.channels]
        payload = v.data.astype("<f4").tobytes()
    else:
        raise TypeError(f"not a volume: {type(v).__name__}")
    header = {
        "dims": list(v.dims),
        "spacing_mm": list(v.spacing.as_tuple()),
        "dtype": dtype,
        "order": HEADER_ORDER,
        "channels": names,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(header, indent=2) + "\n")
    _raw_path(path).write_bytes(payload)


def decode_layered(lv: LayeredLabelVolume) -> MaskVolume:
    """Expand layered labels into the six anatomical channels.

    Labels 1..6 set their own channel; 7 sets artery+tumor, 8 sets
    vein+tumor, reconstructing the overlaps the layering collapsed.
    """
    labels = lv.data
    if labels.size and labels.max() > MAX_LAYERED_LABEL:
        raise VolumeFormatError(f"layered labels must lie in 0..{MAX_LAYERED_LABEL}")
    out = np.zeros((len(STANDARD_CHANNELS),) + lv.dims, dtype=np.uint8)
    for label, targets in LAYERED_DECODE.items():
        where = labels == label
        if not where.any():
            continue
        for cid in targets:
            out[STANDARD_CHANNELS.index(cid)][where] = 1
    return MaskVolume(out, STANDARD_CHANNELS, lv.spacing, dict(lv.meta))


# Re-layering priority, most important last so it wins the single-label slot.
_LAYER_PRIORITY = (
    (ChannelId.PANCREAS, 1),
    (ChannelId.COMMON_BILE_DUCT, 2),
    (ChannelId.PANCREATIC_DUCT, 3),
    (ChannelId.ARTERY, 4),
    (ChannelId.VEIN, 5),
    (ChannelId.TUMOR, 6),
)


def encode_layered(mv: MaskVolume) -> LayeredLabelVolume:
    """Collapse the six channels back into layered labels.

    Inverse of decode_layered on volumes whose only overlaps are
    tumor-artery (-> 7) and tumor-vein (-> 8); other overlaps resolve by
    importance (tumor > vein > artery > ducts > pancreas).
    """
    labels = np.zeros(mv.dims, dtype=np.uint8)
    for cid, label in _LAYER_PRIORITY:
        if mv.has_channel(cid):
            labels[mv.channel(cid) > 0] = label
    if mv.has_channel(ChannelId.TUMOR):
        tumor = mv.channel(ChannelId.TUMOR) > 0
        if mv.has_channel(ChannelId.ARTERY):
            labels[tumor & (mv.channel(ChannelId.ARTERY) > 0)] = 7
        if mv.has_channel(ChannelId.VEIN):
            labels[tumor & (mv.channel(ChannelId.VEIN) > 0)] = 8
    return LayeredLabelVolume(labels, mv.spacing, dict(mv.meta))


def _resample_axes(dims, src: Spacing, dst: Spacing):
    """Output dims and fractional source coordinates per axis (voxel centers)."""
    out_dims = []
    coords = []
    for n, s, t in zip(dims, src.as_tuple(), dst.as_tuple()):
        m = max(1, int(round(n * s / t)))
        out_dims.append(m)
        j = np.arange(m, dtype=np.float64)
        coords.append((j + 0.5) * t / s - 0.5)
    return tuple(out_dims), coords


def _nearest_indices(coords, dims):
    # exact half-distance ties go to the lower index (first nearest)
    return [
        np.clip(np.ceil(x - 0.5).astype(np.intp), 0, n - 1)
        for x, n in zip(coords, dims)
    ]


def _trilinear(grid4d: np.ndarray, coords, dims) -> np.ndarray:
    out = grid4d.astype(np.float64)
    for axis, (x, n) in enumerate(zip(coords, dims), start=1):
        lo = np.floor(x).astype(np.intp)
        w = x - lo
        i0 = np.clip(lo, 0, n - 1)
        i1 = np.clip(lo + 1, 0, n - 1)
        shape = [1] * out.ndim
        shape[axis] = len(x)
        w = w.reshape(shape)
        out = np.take(out, i0, axis=axis) * (1.0 - w) + np.take(out, i1, axis=axis) * w
    return out


def resample(v: Volume, target: Spacing, mode: str) -> Volume:
    """Resample onto a new voxel grid; dims = round(dims * spacing / target).

    Masks and layered labels only admit nearest-neighbour; probabilities may
    use nearest or trilinear. Voxel centers anchor the coordinate mapping.
    """
    if mode not in ("nearest", "trilinear"):
        raise ValueError(f"unknown resample mode {mode!r}")
    if not isinstance(target, Spacing):
        target = Spacing(*target)
    if isinstance(v, (MaskVolume, LayeredLabelVolume)) and mode != "nearest":
        raise ValueError("masks and label volumes must be resampled with mode='nearest'")

    out_dims, coords = _resample_axes(v.dims, v.spacing, target)

    if isinstance(v, LayeredLabelVolume):
        zi, yi, xi = _nearest_indices(coords, v.dims)
        data = v.data[np.ix_(zi, yi, xi)]
        return LayeredLabelVolume(data, target, dict(v.meta))

    if mode == "nearest":
        zi, yi, xi = _nearest_indices(coords, v.dims)
        data = v.data[:, zi[:, None, None], yi[None, :, None], xi[None, None, :]]
    else:
        data = _trilinear(v.data, coords, v.dims)
        data = np.clip(data, 0.0, 1.0).astype(np.float32)
    cls = MaskVolume if isinstance(v, MaskVolume) else ProbVolume
    return cls(data, v.channels, target, dict(v.meta))


def crop_around(v: Volume, center: Sequence[int], size: Sequence[int] = (64, 128, 128)) -> Volume:
    """Crop a fixed-size block centered on a voxel, zero-padding overhang.

    The effective padding per face is recorded in the output meta under
    ``crop_padding`` together with the source-grid ``crop_origin``.
    """
    center = tuple(int(c) for c in center)
    size = tuple(int(s) for s in size)
    if len(center) != 3 or len(size) != 3 or any(s <= 0 for s in size):
        raise ValueError("center and size must be 3-component, size positive")
    dims = v.dims
    if any(not (0 <= c < n) for c, n in zip(center, dims)):
        raise ValueError(f"crop center {center} outside volume dims {dims}")

    start = [c - s // 2 for c, s in zip(center, size)]
    stop = [b + s for b, s in zip(start, size)]
    src_lo = [max(0, b) for b in start]
    src_hi = [min(n, e) for n, e in zip(dims, stop)]
    dst_lo = [sl - b for sl, b in zip(src_lo, start)]
    dst_hi = [d + (h - l) for d, l, h in zip(dst_lo, src_lo, src_hi)]
    padding = [[dst_lo[i], size[i] - dst_hi[i]] for i in range(3)]

    meta = dict(v.meta)
    meta["crop_origin"] = list(start)
    meta["crop_padding"] = padding

    def _block(grid: np.ndarray) -> np.ndarray:
        out = np.zeros(size, dtype=grid.dtype)
        out[dst_lo[0]:dst_hi[0], dst_lo[1]:dst_hi[1], dst_lo[2]:dst_hi[2]] = grid[
            src_lo[0]:src_hi[0], src_lo[1]:src_hi[1], src_lo[2]:src_hi[2]
        ]
        return out

    if isinstance(v, LayeredLabelVolume):
        return LayeredLabelVolume(_block(v.data), v.spacing, meta)
    data = np.stack([_block(v.data[c]) for c in range(v.data.shape[0])])
    cls = MaskVolume if isinstance(v, MaskVolume) else ProbVolume
    return cls(data, v.channels, v.spacing, meta)
