"""Synthetic wrap scenes with analytic ground truth.

A scene is a vessel tube along z (a rasterized disk per slice) plus a tumor
hugging the vessel rim over a known angular span. The span recorded in the
truth is the exact analytic sector angle, making these scenes an
independent oracle for the involvement geometry.

Construction notes, because pixels are coarse at radius 8:

* The allowed contact window on the vessel is fixed analytically: vessel
  pixels whose centroid angle lies within half a pixel (in rim arc length)
  of the requested span. Tumor pixels are drawn from the annulus just
  outside the rim and only where their 8-neighbourhood stays clear of
  vessel pixels outside the window. One-pixel contact dilation therefore
  cannot push the measured arc beyond the window: overshoot is capped at
  the half-pixel allowance per side.
* Per-slice quantization can still underreport an arc end, so the tube
  axis wobbles sub-pixel from slice to slice (seeded); the scan maximum
  over the wobbled slices concentrates near the analytic span.

Angles use the same atan2 convention as the involvement module, so oracle
and measurement share one coordinate system.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .involvement import DpcgCategory, dpcg_classify
from .volume import ChannelId, MaskVolume, ProbVolume, Spacing, STANDARD_CHANNELS

# Half-pixel angular allowance of the contact window, in tangential pixels
# at the rim. Calibrated once against the involvement module over a dense
# (radius, span, orientation) grid; see the rasterization bound test.
ANGULAR_ALLOWANCE_PX = 0.5

DEFAULT_BAND_VALUES = (0.32, 0.40, 0.48)

_S3 = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class PhantomSpec:
    """Parameters of one wrap scene."""

    dims: tuple[int, int, int] = (10, 128, 128)
    spacing: Spacing = Spacing(1.0, 1.0, 1.0)
    vessel_center: tuple[float, float] = (64.0, 64.0)  # (row, col)
    vessel_radius_px: float = 8.0
    wrap_center_deg: float = 90.0
    wrap_span_deg: float = 180.0
    wrap_thickness_px: float = 2.5
    slice_range: tuple[int, int] = (1, 9)  # z0 inclusive, z1 exclusive
    vessel_channel: ChannelId = ChannelId.VEIN
    axis_jitter_px: float = 0.5
    jitter_seed: int = 0
    pancreas_center: tuple[float, float] | None = None
    pancreas_radius_px: float = 0.0
    band_extra_deg: float = 0.0  # angular widening per side at high sigma
    band_values: tuple[float, ...] = DEFAULT_BAND_VALUES

    def __post_init__(self):
        if self.vessel_radius_px < 2.0:
            raise ValueError("vessel radius must be at least 2 px")
        if not (0.0 <= self.wrap_span_deg <= 360.0):
            raise ValueError("wrap span must lie in [0, 360]")
        z0, z1 = self.slice_range
        if not (0 <= z0 <= z1 <= self.dims[0]):
            raise ValueError("slice range outside the grid")
        reach = self.vessel_radius_px + self.wrap_thickness_px + 2.0
        r, c = self.vessel_center
        if not (reach <= r <= self.dims[1] - 1 - reach and reach <= c <= self.dims[2] - 1 - reach):
            raise ValueError("tube (plus tumor rim) must sit fully inside the grid")
        if self.vessel_channel not in (ChannelId.ARTERY, ChannelId.VEIN):
            raise ValueError("vessel channel must be artery or vein")


@dataclass(frozen=True)
class PhantomTruth:
    """Analytic involvement facts for a scene."""

    max_span_deg: float
    present: bool
    category: DpcgCategory
    span_by_slice: dict[int, float] = field(default_factory=dict)


def _polar(dims_hw: tuple[int, int], center: tuple[float, float]):
    rows = np.arange(dims_hw[0], dtype=np.float64)[:, None] - center[0]
    cols = np.arange(dims_hw[1], dtype=np.float64)[None, :] - center[1]
    radius = np.hypot(rows, cols)
    theta = np.degrees(np.arctan2(-rows, np.broadcast_to(cols, radius.shape))) % 360.0
    return radius, theta


def _wrap_distance(theta: np.ndarray, center_deg: float) -> np.ndarray:
    return np.abs((theta - center_deg + 180.0) % 360.0 - 180.0)


def allowance_deg(radius_px: float) -> float:
    """Angular allowance of the contact window per side."""
    return math.degrees(math.asin(min(1.0, ANGULAR_ALLOWANCE_PX / radius_px)))


def _sector_tumor(spec: PhantomSpec, vessel, radius, dist, span_deg: float) -> np.ndarray:
    """Annulus pixels that can only ever touch the allowed contact window."""
    if span_deg <= 0.0:
        return np.zeros_like(vessel)
    annulus = (~vessel) & (radius <= spec.vessel_radius_px + spec.wrap_thickness_px)
    if span_deg >= 360.0:
        return annulus
    half = span_deg / 2.0 + allowance_deg(spec.vessel_radius_px)
    target = vessel & (dist <= half)
    forbidden = vessel & (dist > half)
    return (
        annulus
        & ndimage.binary_dilation(target, structure=_S3)
        & ~ndimage.binary_dilation(forbidden, structure=_S3)
    )


def _slice_center(spec: PhantomSpec, rng: np.random.Generator) -> tuple[float, float]:
    if spec.axis_jitter_px <= 0.0:
        return spec.vessel_center
    j = rng.uniform(-spec.axis_jitter_px, spec.axis_jitter_px, size=2)
    return (spec.vessel_center[0] + float(j[0]), spec.vessel_center[1] + float(j[1]))


def _scene_grids(spec: PhantomSpec):
    """Per-slice boolean grids: lists of (vessel, tumor, band) plus pancreas."""
    z0, z1 = spec.slice_range
    rng = np.random.default_rng(spec.jitter_seed)
    slices = []
    for _ in range(z0, z1):
        center = _slice_center(spec, rng)
        radius, theta = _polar(spec.dims[1:], center)
        vessel = radius <= spec.vessel_radius_px
        dist = _wrap_distance(theta, spec.wrap_center_deg)
        tumor = _sector_tumor(spec, vessel, radius, dist, spec.wrap_span_deg)
        if spec.band_extra_deg > 0.0 and 0.0 < spec.wrap_span_deg < 360.0:
            extended = _sector_tumor(
                spec, vessel, radius, dist, spec.wrap_span_deg + 2.0 * spec.band_extra_deg
            )
            band = extended & ~tumor
        else:
            band = np.zeros_like(tumor)
        slices.append((vessel, tumor, band))
    pancreas = np.zeros(spec.dims[1:], dtype=bool)
    if spec.pancreas_center is not None and spec.pancreas_radius_px > 0:
        p_radius, _ = _polar(spec.dims[1:], spec.pancreas_center)
        pancreas = p_radius <= spec.pancreas_radius_px
    return slices, pancreas


def _truth(spec: PhantomSpec, span: float) -> PhantomTruth:
    z0, z1 = spec.slice_range
    present = span > 0.0 and z1 > z0
    spans = {z: (span if present else 0.0) for z in range(z0, z1)}
    max_span = max(spans.values(), default=0.0)
    if spec.vessel_channel is ChannelId.VEIN:
        category = dpcg_classify(max_span, 0.0)
    else:
        category = dpcg_classify(0.0, max_span)
    return PhantomTruth(max_span, present, category, spans)


def gen_wrap_scene(spec: PhantomSpec) -> tuple[MaskVolume, PhantomTruth]:
    """Rasterize a wrap scene; truth carries the analytic span."""
    grids, pancreas = _scene_grids(spec)
    data = np.zeros((len(STANDARD_CHANNELS),) + spec.dims, dtype=np.uint8)
    vi = STANDARD_CHANNELS.index(spec.vessel_channel)
    ti = STANDARD_CHANNELS.index(ChannelId.TUMOR)
    pi = STANDARD_CHANNELS.index(ChannelId.PANCREAS)
    z0, _ = spec.slice_range
    for offset, (vessel, tumor, _) in enumerate(grids):
        z = z0 + offset
        data[vi, z] = vessel
        data[ti, z] = tumor
        data[pi, z] = pancreas
    return MaskVolume(data, STANDARD_CHANNELS, spec.spacing), _truth(spec, spec.wrap_span_deg)


def gen_uncertainty_scene(
    spec: PhantomSpec,
    ks: tuple[float, ...] = (-1.0, 0.0, 1.0, 2.0),
    threshold: float = 0.5,
) -> tuple[list[ProbVolume], dict[float, PhantomTruth]]:
    """Fold probabilities differing only in a rim band, plus per-k truths.

    Certain voxels carry probability 1 in every fold; band voxels carry the
    per-fold band values. The expected span at each sigma step follows from
    whether clamp(mean + k*std, 0, 1) of the band values clears the
    threshold: below it the scene involves the base span, above it the band
    widens the arc by band_extra_deg per side.
    """
    grids, pancreas = _scene_grids(spec)
    vi = STANDARD_CHANNELS.index(spec.vessel_channel)
    ti = STANDARD_CHANNELS.index(ChannelId.TUMOR)
    pi = STANDARD_CHANNELS.index(ChannelId.PANCREAS)
    z0, _ = spec.slice_range

    folds = []
    for value in spec.band_values:
        data = np.zeros((len(STANDARD_CHANNELS),) + spec.dims, dtype=np.float32)
        for offset, (vessel, tumor, band) in enumerate(grids):
            z = z0 + offset
            data[vi, z] = vessel
            data[ti, z] = tumor + float(value) * band
            data[pi, z] = pancreas
        folds.append(ProbVolume(data, STANDARD_CHANNELS, spec.spacing))

    values = np.asarray(spec.band_values, dtype=np.float64)
    mean = float(values.mean())
    std = float(values.std())
    truths = {}
    for k in ks:
        band_on = spec.band_extra_deg > 0.0 and (
            min(max(mean + k * std, 0.0), 1.0) >= threshold
        )
        span = spec.wrap_span_deg + (2.0 * spec.band_extra_deg if band_on else 0.0)
        truths[float(k)] = _truth(spec, span)
    return folds, truths


@dataclass(frozen=True)
class ConfusionCase:
    """A (prediction, ground truth) scene pair with its expected cell."""

    name: str
    vessel: ChannelId
    pred: MaskVolume
    gt: MaskVolume
    expected: str  # tp | fp | tn | fn


def gen_confusion_suite(seed: int = 0, cases_per_cell: int = 5) -> list[ConfusionCase]:
    """Balanced seeded scene pairs inducing each confusion cell.

    TP pairs place the predicted contact at a different wrap angle than the
    ground truth, so presence matching must ignore location.
    """
    rng = np.random.default_rng(seed)
    base = PhantomSpec(dims=(6, 64, 64), vessel_center=(32.0, 32.0), slice_range=(1, 5))
    cases = []
    for i in range(cases_per_cell):
        vessel = ChannelId.VEIN if i % 2 == 0 else ChannelId.ARTERY
        radius = float(rng.integers(8, 13))
        span = float(rng.integers(60, 200))
        angle = float(rng.integers(0, 360))
        shifted = (angle + 90.0 + float(rng.integers(0, 90))) % 360.0
        touching = replace(
            base, vessel_channel=vessel, vessel_radius_px=radius,
            wrap_span_deg=span, wrap_center_deg=angle, jitter_seed=seed + i,
        )
        touching_elsewhere = replace(touching, wrap_center_deg=shifted)
        empty = replace(touching, wrap_span_deg=0.0)

        cases.append(
            ConfusionCase(
                f"tp_{i}", vessel,
                gen_wrap_scene(touching_elsewhere)[0], gen_wrap_scene(touching)[0], "tp",
            )
        )
        cases.append(
            ConfusionCase(
                f"fp_{i}", vessel, gen_wrap_scene(touching)[0], gen_wrap_scene(empty)[0], "fp"
            )
        )
        cases.append(
            ConfusionCase(
                f"tn_{i}", vessel, gen_wrap_scene(empty)[0], gen_wrap_scene(empty)[0], "tn"
            )
        )
        cases.append(
            ConfusionCase(
                f"fn_{i}", vessel, gen_wrap_scene(empty)[0], gen_wrap_scene(touching)[0], "fn"
            )
        )
    return cases
