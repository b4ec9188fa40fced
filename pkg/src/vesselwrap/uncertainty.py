"""Ensemble and probabilistic-sample statistics plus sigma-level sweeps.

Folds are the models of an ensemble; samples are the plausible outputs a
probabilistic model draws for one scan. Standard deviations are population
(divide by N) throughout: the fold/sample counts are tiny and fixed, so the
choice only rescales, and it is pinned by the unit tests.

* epistemic uncertainty: std of the per-fold mean predictions across folds
* aleatoric uncertainty: std across one fold's samples
* mean aleatoric: fold mean of the per-fold aleatoric stds
* total: mean aleatoric + epistemic (the displayed sum for probabilistic
  ensembles)

Sigma-level masks threshold clamp(mean + k * std, 0, 1) at 0.5 by default;
std >= 0 makes the masks nested in k.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .involvement import DpcgCategory, InvolvementReport, dpcg_classify, scan_involvement
from .volume import ChannelId, MaskVolume, ProbVolume

DEFAULT_KS = (-1.0, 0.0, 1.0, 2.0)


@dataclass(frozen=True)
class SampleSet:
    """Probability volumes sampled from one probabilistic model fold."""

    samples: tuple[ProbVolume, ...]

    def __post_init__(self):
        if len(self.samples) < 1:
            raise ValueError("sample set needs at least one sample")
        _check_same_geometry(self.samples)
        object.__setattr__(self, "samples", tuple(self.samples))

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class UncertaintyField:
    """Per-voxel mean prediction and standard deviation of one kind."""

    mean: ProbVolume
    std: ProbVolume
    kind: str  # epistemic | aleatoric | mean-aleatoric | total

    def __post_init__(self):
        if self.mean.dims != self.std.dims or self.mean.channels != self.std.channels:
            raise ValueError("mean/std geometry mismatch")


def _check_same_geometry(volumes: Sequence[ProbVolume]):
    first = volumes[0]
    for v in volumes[1:]:
        if v.dims != first.dims or v.channels != first.channels:
            raise ValueError("volumes must share dims and channels")
        if v.spacing.as_tuple() != first.spacing.as_tuple():
            raise ValueError("volumes must share spacing")


def _stack(volumes: Sequence[ProbVolume]) -> np.ndarray:
    _check_same_geometry(volumes)
    return np.stack([v.data.astype(np.float64) for v in volumes])


def _as_prob(arr: np.ndarray, like: ProbVolume) -> ProbVolume:
    return ProbVolume(
        np.clip(arr, 0.0, 1.0).astype(np.float32), like.channels, like.spacing
    )


def fold_mean_std(folds: Sequence[ProbVolume]) -> UncertaintyField:
    """Mean prediction and epistemic std across deterministic model folds."""
    folds = list(folds)
    if len(folds) < 2:
        raise ValueError(f"need at least 2 folds for a std, got {len(folds)}")
    stack = _stack(folds)
    mean = stack.mean(axis=0)
    std = stack.std(axis=0)  # population
    return UncertaintyField(_as_prob(mean, folds[0]), _as_prob(std, folds[0]), "epistemic")


def aleatoric(samples: SampleSet | Sequence[ProbVolume]) -> ProbVolume:
    """Per-voxel population std across one fold's samples."""
    vols = samples.samples if isinstance(samples, SampleSet) else tuple(samples)
    if len(vols) < 2:
        raise ValueError(f"need at least 2 samples for a std, got {len(vols)}")
    stack = _stack(vols)
    return _as_prob(stack.std(axis=0), vols[0])


def fold_means(folds: Sequence[SampleSet]) -> list[ProbVolume]:
    return [_as_prob(_stack(f.samples).mean(axis=0), f.samples[0]) for f in folds]


def mean_aleatoric(folds: Sequence[SampleSet]) -> ProbVolume:
    """Fold mean of each fold's aleatoric std; K=1 degenerates to that fold."""
    folds = list(folds)
    if not folds:
        raise ValueError("need at least one fold")
    stds = [aleatoric(f).data.astype(np.float64) for f in folds]
    return _as_prob(np.mean(stds, axis=0), folds[0].samples[0])


def epistemic_from_samples(folds: Sequence[SampleSet]) -> ProbVolume:
    """Population std of the per-fold sample means."""
    means = fold_means(folds)
    if len(means) < 2:
        raise ValueError(f"need at least 2 folds for a std, got {len(means)}")
    stack = _stack(means)
    return _as_prob(stack.std(axis=0), means[0])


def sample_mean_std(folds: Sequence[SampleSet]) -> UncertaintyField:
    """Mean prediction with the summed (aleatoric + epistemic) std."""
    folds = list(folds)
    means = fold_means(folds)
    mean = _stack(means).mean(axis=0)
    total = mean_aleatoric(folds).data.astype(np.float64)
    if len(folds) >= 2:
        total = total + epistemic_from_samples(folds).data.astype(np.float64)
    return UncertaintyField(
        _as_prob(mean, folds[0].samples[0]), _as_prob(total, folds[0].samples[0]), "total"
    )


def sigma_level_mask(f: UncertaintyField, k: float, threshold: float = 0.5) -> MaskVolume:
    """Binarize mean + k * std (clamped into [0, 1]) at the threshold."""
    adjusted = np.clip(
        f.mean.data.astype(np.float64) + float(k) * f.std.data.astype(np.float64), 0.0, 1.0
    )
    mask = (adjusted >= threshold).astype(np.uint8)
    return MaskVolume(mask, f.mean.channels, f.mean.spacing)


@dataclass(frozen=True)
class SweepEntry:
    k: float
    reports: dict[ChannelId, InvolvementReport]
    category: DpcgCategory


def uncertainty_sweep(
    f: UncertaintyField,
    ks: Sequence[float] = DEFAULT_KS,
    threshold: float = 0.5,
    connectivity: int = 8,
    span_method: str = "largest-gap",
) -> list[SweepEntry]:
    """Involvement and DPCG grade at every sigma step.

    Raises MissingChannelError (via the involvement module) when the field
    lacks the tumor, artery or vein channel.
    """
    entries = []
    for k in ks:
        masks = sigma_level_mask(f, k, threshold)
        reports = {
            cid: scan_involvement(masks, cid, connectivity, span_method)
            for cid in (ChannelId.ARTERY, ChannelId.VEIN)
        }
        category = dpcg_classify(
            reports[ChannelId.VEIN].max_span_deg, reports[ChannelId.ARTERY].max_span_deg
        )
        entries.append(SweepEntry(float(k), reports, category))
    return entries
