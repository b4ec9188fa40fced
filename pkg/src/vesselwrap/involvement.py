"""Per-slice tumor-vessel contact, angular involvement and DPCG grading.

Geometry conventions (shared with the phantom generator so measured and
analytic angles agree):

* slices are axial (fixed z); pixel coordinates are (row, col);
* angles use the four-quadrant arctangent of (-(row - c_row), col - c_col),
  i.e. 0 deg points to +col and 90 deg points to -row ("image up"),
  normalized to [0, 360);
* adjacency is 8-connectivity in-slice, both for vessel components and for
  the tumor neighbourhood that defines contact;
* a vessel pixel is a contact pixel when it is itself a tumor voxel
  (structures may overlap) or any of its 8 neighbours is;
* the span of a contact arc is 360 minus the largest angular gap between
  contact pixel angles, which equals max-min whenever the arc does not
  cross the 0 deg branch cut. The literal max-min variant stays available
  as ``span_method="minmax"`` for comparison.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from scipy import ndimage

from .volume import ChannelId, MaskVolume

SPAN_METHODS = ("largest-gap", "minmax")

_STRUCT_4 = ndimage.generate_binary_structure(2, 1)
_STRUCT_8 = ndimage.generate_binary_structure(2, 2)
_STRUCT_26 = ndimage.generate_binary_structure(3, 3)


class DpcgCategory(IntEnum):
    """Resectability grades, ordered from best to worst."""

    RESECTABLE = 0
    BORDERLINE_RESECTABLE = 1
    IRRESECTABLE = 2

    @property
    def label(self) -> str:
        return {
            DpcgCategory.RESECTABLE: "resectable",
            DpcgCategory.BORDERLINE_RESECTABLE: "borderline_resectable",
            DpcgCategory.IRRESECTABLE: "irresectable",
        }[self]


@dataclass(frozen=True)
class Component2D:
    """One in-slice connected region of a vessel mask."""

    z: int
    pixels: np.ndarray  # (N, 2) int rows/cols, row-major sorted
    connectivity: int

    def __post_init__(self):
        if self.pixels.ndim != 2 or self.pixels.shape[1] != 2 or len(self.pixels) == 0:
            raise ValueError("component needs a non-empty (N, 2) pixel array")


@dataclass(frozen=True)
class ContactSet:
    """Contact pixels of one vessel component plus their centroid angles."""

    z: int
    component: Component2D
    contact_pixels: np.ndarray  # (M, 2) int, subset of component pixels
    centroid: tuple[float, float]  # (row, col) over ALL component pixels
    angles_deg: np.ndarray  # one angle per contact pixel at nonzero radius

    @property
    def present(self) -> bool:
        return len(self.contact_pixels) > 0


@dataclass(frozen=True)
class SliceInvolvement:
    z: int
    component_spans_deg: tuple[float, ...]
    max_span_deg: float
    present: bool


@dataclass(frozen=True)
class InvolvementReport:
    vessel: ChannelId
    slices: tuple[SliceInvolvement, ...]
    max_span_deg: float
    argmax_slice: int | None
    present: bool


def connected_components(mask2d: np.ndarray, connectivity: int = 8, z: int = -1) -> list[Component2D]:
    """Partition a binary slice into components, ordered by first pixel."""
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    mask = np.asarray(mask2d) > 0
    if mask.ndim != 2:
        raise ValueError("mask2d must be 2-D")
    struct = _STRUCT_8 if connectivity == 8 else _STRUCT_4
    labeled, n = ndimage.label(mask, structure=struct)
    if n == 0:
        return []
    coords = np.argwhere(labeled > 0)  # row-major order
    labels = labeled[coords[:, 0], coords[:, 1]]
    order = np.argsort(labels, kind="stable")  # keeps row-major order per label
    coords = coords[order]
    labels = labels[order]
    splits = np.searchsorted(labels, np.arange(2, n + 1))
    groups = np.split(coords, splits)
    groups.sort(key=lambda g: (int(g[0, 0]), int(g[0, 1])))
    return [Component2D(z=z, pixels=g, connectivity=connectivity) for g in groups]


def pixel_angle(centroid: tuple[float, float], pixel: tuple[float, float]) -> float:
    """Angle of a pixel around a centroid, degrees in [0, 360)."""
    d_row = pixel[0] - centroid[0]
    d_col = pixel[1] - centroid[1]
    if d_row == 0.0 and d_col == 0.0:
        raise ValueError("pixel coincides with centroid (zero radius)")
    return math.degrees(math.atan2(-d_row, d_col)) % 360.0


def _pixel_angles(centroid: tuple[float, float], pixels: np.ndarray) -> np.ndarray:
    d_row = pixels[:, 0] - centroid[0]
    d_col = pixels[:, 1] - centroid[1]
    nonzero = (d_row != 0.0) | (d_col != 0.0)
    return np.degrees(np.arctan2(-d_row[nonzero], d_col[nonzero])) % 360.0


def contact_pixels(tumor2d: np.ndarray, vessel: Component2D) -> ContactSet:
    """Contact pixels of one vessel component against the tumor slice.

    A vessel pixel is in contact when the tumor occupies it or any of its 8
    neighbours. The centroid is the mean of all component pixels; angles are
    computed only for contact pixels at nonzero radius.
    """
    tumor = np.asarray(tumor2d) > 0
    if tumor.ndim != 2:
        raise ValueError("tumor2d must be 2-D")
    rows, cols = vessel.pixels[:, 0], vessel.pixels[:, 1]
    if rows.max(initial=0) >= tumor.shape[0] or cols.max(initial=0) >= tumor.shape[1]:
        raise ValueError("vessel component exceeds tumor slice dims")
    near = ndimage.binary_dilation(tumor, structure=np.ones((3, 3), dtype=bool))
    hit = near[rows, cols]
    contact = vessel.pixels[hit]
    centroid = (float(vessel.pixels[:, 0].mean()), float(vessel.pixels[:, 1].mean()))
    angles = _pixel_angles(centroid, contact.astype(np.float64)) if len(contact) else np.empty(0)
    return ContactSet(vessel.z, vessel, contact, centroid, angles)


def angular_span(angles, method: str = "largest-gap") -> float:
    """Spread of a set of angles in degrees.

    largest-gap: 360 minus the widest gap between sorted angles (wrap
    included); handles arcs crossing 0 deg. minmax: literal max - min.
    Fewer than two angles span 0.
    """
    if method not in SPAN_METHODS:
        raise ValueError(f"unknown span method {method!r}")
    a = np.sort(np.asarray(angles, dtype=np.float64).ravel())
    if a.size and (a[0] < 0.0 or a[-1] >= 360.0):
        raise ValueError("angles must lie in [0, 360)")
    if a.size < 2:
        return 0.0
    if method == "minmax":
        return float(a[-1] - a[0])
    gaps = np.diff(a)
    wrap = 360.0 - a[-1] + a[0]
    return float(360.0 - max(gaps.max(), wrap))


def slice_contact_sets(
    tumor2d: np.ndarray,
    vessel2d: np.ndarray,
    connectivity: int = 8,
    z: int = -1,
) -> list[ContactSet]:
    """ContactSet for every vessel component of one slice."""
    tumor = np.asarray(tumor2d)
    vessel = np.asarray(vessel2d)
    if tumor.shape != vessel.shape:
        raise ValueError(f"slice dims mismatch: {tumor.shape} vs {vessel.shape}")
    return [contact_pixels(tumor, comp) for comp in connected_components(vessel, connectivity, z)]


def slice_involvement(
    tumor2d: np.ndarray,
    vessel2d: np.ndarray,
    connectivity: int = 8,
    span_method: str = "largest-gap",
    z: int = -1,
) -> SliceInvolvement:
    """Involvement of one axial slice: per-component spans and their max."""
    spans = []
    present = False
    for cs in slice_contact_sets(tumor2d, vessel2d, connectivity, z):
        if cs.present:
            present = True
        spans.append(angular_span(cs.angles_deg, span_method))
    max_span = max(spans, default=0.0)
    return SliceInvolvement(z, tuple(spans), max_span, present)


def scan_involvement(
    masks: MaskVolume,
    vessel: ChannelId,
    connectivity: int = 8,
    span_method: str = "largest-gap",
) -> InvolvementReport:
    """Aggregate slice involvement over a whole scan for one vessel class."""
    tumor = masks.channel(ChannelId.TUMOR)
    vessel_grid = masks.channel(vessel)
    slices = []
    for z in range(masks.dims[0]):
        slices.append(
            slice_involvement(tumor[z], vessel_grid[z], connectivity, span_method, z=z)
        )
    present = any(s.present for s in slices)
    max_span = max((s.max_span_deg for s in slices), default=0.0)
    argmax = None
    if present:
        argmax = next(
            s.z for s in slices if s.present and s.max_span_deg == max_span
        )
    return InvolvementReport(ChannelId(vessel), tuple(slices), max_span, argmax, present)


def filter_critical(
    vessel3d: np.ndarray,
    pancreas3d: np.ndarray,
    mode: str = "voxel",
) -> np.ndarray:
    """Drop vessel voxels (or whole 3D components) overlapping the pancreas.

    voxel mode removes exactly the overlapping voxels; component mode removes
    every 26-connected vessel component that touches the pancreas anywhere.
    """
    vessel = np.asarray(vessel3d)
    pancreas = np.asarray(pancreas3d)
    if vessel.shape != pancreas.shape:
        raise ValueError(f"geometry mismatch: {vessel.shape} vs {pancreas.shape}")
    if vessel.ndim != 3:
        raise ValueError("expected 3-D grids")
    if mode == "voxel":
        return ((vessel > 0) & ~(pancreas > 0)).astype(np.uint8)
    if mode == "component":
        labeled, n = ndimage.label(vessel > 0, structure=_STRUCT_26)
        if n == 0:
            return (vessel > 0).astype(np.uint8)
        touching = np.unique(labeled[(pancreas > 0) & (labeled > 0)])
        keep = (labeled > 0) & ~np.isin(labeled, touching)
        return keep.astype(np.uint8)
    raise ValueError(f"unknown filter mode {mode!r}")


def filter_critical_volume(masks: MaskVolume, mode: str = "voxel") -> MaskVolume:
    """Apply filter_critical to the artery and vein channels of a volume."""
    pancreas = masks.channel(ChannelId.PANCREAS)
    data = masks.data.copy()
    for cid in (ChannelId.ARTERY, ChannelId.VEIN):
        if masks.has_channel(cid):
            data[masks.channel_index(cid)] = filter_critical(masks.channel(cid), pancreas, mode)
    return MaskVolume(data, masks.channels, masks.spacing, dict(masks.meta))


def dpcg_classify(vein_deg: float, artery_deg: float) -> DpcgCategory:
    """Grade resectability from maximum venous and arterial contact angles.

    Venous: <=90 resectable, (90, 270] borderline, >270 irresectable.
    Arterial: 0 resectable, (0, 90] borderline, >90 irresectable.
    The final grade is the worse of the two.
    """
    for name, deg in (("vein", vein_deg), ("artery", artery_deg)):
        if not (0.0 <= deg <= 360.0):
            raise ValueError(f"{name} degrees out of range [0, 360]: {deg}")
    if vein_deg <= 90.0:
        venous = DpcgCategory.RESECTABLE
    elif vein_deg <= 270.0:
        venous = DpcgCategory.BORDERLINE_RESECTABLE
    else:
        venous = DpcgCategory.IRRESECTABLE
    if artery_deg == 0.0:
        arterial = DpcgCategory.RESECTABLE
    elif artery_deg <= 90.0:
        arterial = DpcgCategory.BORDERLINE_RESECTABLE
    else:
        arterial = DpcgCategory.IRRESECTABLE
    return max(venous, arterial)
