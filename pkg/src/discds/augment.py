"""Synthetic-quota planning, Mixup, and epoch batch construction.

Training blends real and synthetic data through Mixup batches: each mixed row
is a convex combination of a real and a synthetic sample with a soft label.
`random` mode converts half of the epoch's batches into Mixup batches over
randomly drawn pairs; `all` mode builds enough Mixup batches to consume every
synthetic row exactly once per epoch, oversampling real partners when scarce.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .samples import DataError, SampleSet

MIXUP_NONE = "none"
MIXUP_RANDOM = "random"
MIXUP_ALL = "all"
MIXUP_MODES = (MIXUP_NONE, MIXUP_RANDOM, MIXUP_ALL)

ROW_REAL = "real"
ROW_MIXUP = "mixup"


def uniformize_plan(counts: np.ndarray) -> np.ndarray:
    """Per-class synthetic quotas that top every class up to the largest."""
    counts = np.asarray(counts)
    if counts.size == 0:
        raise ValueError("counts must be non-empty")
    if np.any(counts < 0):
        raise ValueError("counts must be >= 0")
    return counts.max() - counts


def mixup(x_r: np.ndarray, y_r: np.ndarray, x_s: np.ndarray, y_s: np.ndarray,
          lam) -> tuple[np.ndarray, np.ndarray]:
    """Convex combination of a real/synthetic pair and of their labels."""
    x_r, x_s = np.asarray(x_r, dtype=float), np.asarray(x_s, dtype=float)
    y_r, y_s = np.asarray(y_r, dtype=float), np.asarray(y_s, dtype=float)
    if x_r.shape != x_s.shape or y_r.shape != y_s.shape:
        raise ValueError("mixup pairs must share shapes")
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0) or np.any(lam > 1):
        raise ValueError("lambda must lie in [0, 1]")
    lx = lam[..., None] if lam.ndim else lam
    return lx * x_r + (1.0 - lx) * x_s, lx * y_r + (1.0 - lx) * y_s


@dataclass
class Batch:
    x: np.ndarray            # (b, dim)
    y: np.ndarray            # (b, classes) soft labels
    rows: list[str] = field(default_factory=list)  # ROW_REAL / ROW_MIXUP per row
    synth_rows: np.ndarray | None = None  # synthetic indices consumed (mixup only)


def one_hot_labels(labels: np.ndarray, num_classes: int) -> np.ndarray:
    eye = np.eye(num_classes)
    return eye[np.asarray(labels, dtype=int)]


def build_epoch_batches(real: SampleSet, synth: SampleSet | None,
                        mixup_mode: str, batch_size: int, num_classes: int,
                        rng: np.random.Generator,
                        mixup_beta_a: float = 1.0) -> list[Batch]:
    """One epoch's ordered batch list.

    none: shuffled real-only batches.  random: half the epoch's batches
    (rounded down) become Mixup batches over random synthetic/real pairs.
    all: Mixup batches cover every synthetic row exactly once, each paired
    with a real row (real rows resampled with replacement when scarce), on
    top of the plain real batches.
    """
    if len(real) == 0:
        raise DataError("training needs a non-empty real split")
    if mixup_mode not in MIXUP_MODES:
        raise ValueError(f"unknown mixup mode '{mixup_mode}'")
    if mixup_mode != MIXUP_NONE and (synth is None or len(synth) == 0):
        raise DataError(f"mixup mode '{mixup_mode}' needs synthetic samples")

    y_real = one_hot_labels(real.labels, num_classes)
    perm = rng.permutation(len(real))
    real_batches = [
        Batch(x=real.x[idx], y=y_real[idx], rows=[ROW_REAL] * len(idx))
        for idx in _chop(perm, batch_size)
    ]

    if mixup_mode == MIXUP_NONE:
        return real_batches

    y_synth = one_hot_labels(synth.labels, num_classes)

    def make_mixup(s_idx: np.ndarray, r_idx: np.ndarray) -> Batch:
        lam = rng.beta(mixup_beta_a, mixup_beta_a, size=len(s_idx))
        x, y = mixup(real.x[r_idx], y_real[r_idx], synth.x[s_idx],
                     y_synth[s_idx], lam)
        return Batch(x=x, y=y, rows=[ROW_MIXUP] * len(s_idx),
                     synth_rows=np.asarray(s_idx))

    if mixup_mode == MIXUP_RANDOM:
        n_batches = len(real_batches)
        n_mix = n_batches // 2
        batches = real_batches[:n_batches - n_mix]
        for _ in range(n_mix):
            s_idx = rng.integers(0, len(synth), size=batch_size)
            r_idx = rng.integers(0, len(real), size=batch_size)
            batches.append(make_mixup(s_idx, r_idx))
    else:  # MIXUP_ALL: consume each synthetic row exactly once
        s_perm = rng.permutation(len(synth))
        partners = rng.permutation(len(real))
        if len(synth) > len(real):
            extra = rng.integers(0, len(real), size=len(synth) - len(real))
            partners = np.concatenate([partners, extra])
        partners = partners[: len(synth)]
        batches = list(real_batches)
        for k, s_idx in enumerate(_chop(s_perm, batch_size)):
            r_idx = partners[k * batch_size: k * batch_size + len(s_idx)]
            batches.append(make_mixup(s_idx, r_idx))

    order = rng.permutation(len(batches))
    return [batches[i] for i in order]


def _chop(idx: np.ndarray, batch_size: int) -> list[np.ndarray]:
    return [idx[i: i + batch_size] for i in range(0, len(idx), batch_size)]
