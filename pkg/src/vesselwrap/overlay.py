"""Raster overlays in plain binary PPM (no codec dependencies).

Two overlay styles: per-slice contact views marking tumor, vessel, contact
pixels and the vessel centroid, and uncertainty heat maps on the fixed
0-0.5 scale with standard deviations below 0.01 rendered as background.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .involvement import slice_contact_sets
from .volume import ChannelId, MaskVolume

HEAT_SCALE = 0.5
HEAT_CLIP = 0.01

COLOR_BACKGROUND = (0, 0, 0)
COLOR_PANCREAS = (70, 70, 70)
COLOR_VESSEL = (70, 120, 220)
COLOR_TUMOR = (70, 170, 70)
COLOR_OVERLAP = (120, 170, 120)
COLOR_CONTACT = (180, 60, 200)  # purple contact pixels
COLOR_CENTROID = (255, 220, 40)


def write_ppm(path, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb, dtype=np.uint8)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError("expected an (H, W, 3) uint8 image")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = f"P6\n{rgb.shape[1]} {rgb.shape[0]}\n255\n".encode("ascii")
    path.write_bytes(header + rgb.tobytes())


def contact_overlay(masks: MaskVolume, vessel: ChannelId, z: int, connectivity: int = 8) -> np.ndarray:
    """RGB view of one slice with contact pixels and centroid marked."""
    tumor = masks.channel(ChannelId.TUMOR)[z] > 0
    vessel_grid = masks.channel(vessel)[z] > 0
    rgb = np.zeros(tumor.shape + (3,), dtype=np.uint8)
    if masks.has_channel(ChannelId.PANCREAS):
        rgb[masks.channel(ChannelId.PANCREAS)[z] > 0] = COLOR_PANCREAS
    rgb[vessel_grid] = COLOR_VESSEL
    rgb[tumor] = COLOR_TUMOR
    rgb[tumor & vessel_grid] = COLOR_OVERLAP
    for cs in slice_contact_sets(tumor, vessel_grid, connectivity, z):
        if not cs.present:
            continue
        rows, cols = cs.contact_pixels[:, 0], cs.contact_pixels[:, 1]
        rgb[rows, cols] = COLOR_CONTACT
        cr, cc = int(round(cs.centroid[0])), int(round(cs.centroid[1]))
        for dr, dc in ((0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)):
            r, c = cr + dr, cc + dc
            if 0 <= r < rgb.shape[0] and 0 <= c < rgb.shape[1]:
                rgb[r, c] = COLOR_CENTROID
    return rgb


def heatmap_overlay(mean2d: np.ndarray, std2d: np.ndarray) -> np.ndarray:
    """Heat map of a std field over a grayscale mean, 0-0.5 scale.

    Values below 0.01 show the background only, keeping the map readable.
    """
    mean = np.clip(np.asarray(mean2d, dtype=np.float64), 0.0, 1.0)
    std = np.asarray(std2d, dtype=np.float64)
    if mean.shape != std.shape:
        raise ValueError("mean/std slice shape mismatch")
    gray = (mean * 255.0).astype(np.uint8)
    rgb = np.stack([gray, gray, gray], axis=-1)
    hot = std >= HEAT_CLIP
    t = np.clip(std / HEAT_SCALE, 0.0, 1.0)[hot]
    rgb[hot, 0] = (255.0 * t).astype(np.uint8)
    rgb[hot, 1] = (40.0 * (1.0 - t)).astype(np.uint8)
    rgb[hot, 2] = (255.0 * (1.0 - t)).astype(np.uint8)
    return rgb
