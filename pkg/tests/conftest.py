"""Shared fixtures and independent oracles for the test suite.

The oracles here deliberately avoid the library's code paths: contact is
checked by a per-pixel neighbourhood scan, nearest-neighbour resampling by
an exhaustive per-axis distance argmin, and connected components by a
plain breadth-first search.
"""

from __future__ import annotations

import numpy as np
import pytest

from vesselwrap.volume import MaskVolume, ProbVolume, Spacing, STANDARD_CHANNELS, ChannelId


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def make_mask(data, channels=STANDARD_CHANNELS, spacing=Spacing(1.0, 1.0, 1.0)) -> MaskVolume:
    return MaskVolume(np.asarray(data, dtype=np.uint8), channels, spacing)


def make_prob(data, channels=STANDARD_CHANNELS, spacing=Spacing(1.0, 1.0, 1.0)) -> ProbVolume:
    return ProbVolume(np.asarray(data, dtype=np.float32), channels, spacing)


def tav_volume(tumor, artery, vein, spacing=Spacing(1.0, 1.0, 1.0)) -> MaskVolume:
    """3-channel volume with just tumor/artery/vein grids."""
    data = np.stack([np.asarray(artery), np.asarray(vein), np.asarray(tumor)]).astype(np.uint8)
    return MaskVolume(data, (ChannelId.ARTERY, ChannelId.VEIN, ChannelId.TUMOR), spacing)


def brute_force_contact(tumor2d: np.ndarray, vessel2d: np.ndarray) -> set[tuple[int, int]]:
    """All-pixels scan: vessel pixel with tumor on it or in its 8-neighbourhood."""
    tumor = np.asarray(tumor2d) > 0
    vessel = np.asarray(vessel2d) > 0
    h, w = vessel.shape
    out = set()
    for r in range(h):
        for c in range(w):
            if not vessel[r, c]:
                continue
            hit = False
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < h and 0 <= cc < w and tumor[rr, cc]:
                        hit = True
            if hit:
                out.add((r, c))
    return out


def brute_force_nearest(grid: np.ndarray, src: Spacing, dst: Spacing) -> np.ndarray:
    """Exhaustive nearest-neighbour resample of one 3-D grid (voxel centers)."""
    dims = grid.shape
    out_dims = tuple(max(1, int(round(n * s / t)))
                     for n, s, t in zip(dims, src.as_tuple(), dst.as_tuple()))
    axes_idx = []
    for n_out, n_in, s, t in zip(out_dims, dims, src.as_tuple(), dst.as_tuple()):
        centers_in = (np.arange(n_in) + 0.5) * s
        idx = []
        for j in range(n_out):
            target = (j + 0.5) * t
            idx.append(int(np.argmin(np.abs(centers_in - target))))
        axes_idx.append(np.array(idx))
    zi, yi, xi = axes_idx
    return grid[np.ix_(zi, yi, xi)]


def bfs_components(mask2d: np.ndarray, connectivity: int) -> list[set[tuple[int, int]]]:
    """Plain BFS connected components, independent of scipy labeling."""
    mask = np.asarray(mask2d) > 0
    h, w = mask.shape
    if connectivity == 8:
        steps = [(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if (dr, dc) != (0, 0)]
    else:
        steps = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    seen = np.zeros_like(mask, dtype=bool)
    groups = []
    for r in range(h):
        for c in range(w):
            if not mask[r, c] or seen[r, c]:
                continue
            queue = [(r, c)]
            seen[r, c] = True
            group = set()
            while queue:
                pr, pc = queue.pop()
                group.add((pr, pc))
                for dr, dc in steps:
                    rr, cc = pr + dr, pc + dc
                    if 0 <= rr < h and 0 <= cc < w and mask[rr, cc] and not seen[rr, cc]:
                        seen[rr, cc] = True
                        queue.append((rr, cc))
            groups.append(group)
    return groups
