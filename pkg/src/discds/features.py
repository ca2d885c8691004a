"""Confusing-class selection: reference-set generation, feature similarity,
and the per-class negative-prompt map.

Stage 1 of the pipeline generates a diverse reference set per class with the
condition-annealed sampler, embeds it with a small pluggable feature
extractor, and picks each class's most cosine-similar other class as the
negative target for stage-2 synthesis.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .guidance import DegenerateInputError, GuidancePolicy, KIND_CADS
from .samples import ORIGIN_REFERENCE, DataError, SampleSet
from .sampler import INIT_FROM_REAL, SamplerConfig, sample
from .schedule import NoiseSchedule
from .world import GaussianMixtureWorld, _seed_key

EXTRACTOR_IDENTITY = "identity"
EXTRACTOR_RANDOM_PROJECTION = "random_projection"


@dataclass(frozen=True)
class FeatureExtractor:
    """Deterministic map from data vectors to feature vectors."""

    kind: str = EXTRACTOR_IDENTITY
    out_dim: int = 8
    seed: int = 0
    _proj: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in (EXTRACTOR_IDENTITY, EXTRACTOR_RANDOM_PROJECTION):
            raise ValueError(f"unknown feature extractor '{self.kind}'")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.kind == EXTRACTOR_IDENTITY:
            return x
        proj = self._proj.get(x.shape[1])
        if proj is None:
            rng = np.random.default_rng((self.seed, x.shape[1]))
            proj = rng.standard_normal((x.shape[1], self.out_dim)) / np.sqrt(self.out_dim)
            self._proj[x.shape[1]] = proj
        return x @ proj


def mean_feature(x: np.ndarray, extractor: FeatureExtractor) -> np.ndarray:
    """Arithmetic mean of the extracted features of a class's samples."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[0] == 0:
        raise DataError("cannot take the mean feature of an empty class")
    return extractor(x).mean(axis=0)


def cosine_similarity(v: np.ndarray, v_prime: np.ndarray) -> float:
    """(v . v') / (|v| |v'|); zero-norm inputs are rejected."""
    v = np.asarray(v, dtype=float)
    v_prime = np.asarray(v_prime, dtype=float)
    nv, nvp = np.linalg.norm(v), np.linalg.norm(v_prime)
    if nv == 0.0 or nvp == 0.0:
        raise DegenerateInputError("cosine similarity of a zero-norm vector")
    return float(v @ v_prime / (nv * nvp))


@dataclass
class NegativePromptMap:
    """Chosen negative class per class, plus the full similarity matrix."""

    negatives: dict[int, int]
    similarity: np.ndarray          # (C, C), unit diagonal
    ties: list[int] = field(default_factory=list)  # classes whose argmax tied

    @property
    def num_classes(self) -> int:
        return self.similarity.shape[0]

    def save_json(self, path: str | Path, meta: dict | None = None) -> None:
        payload = {
            "meta": meta or {},
            "negatives": {str(c): int(n) for c, n in sorted(self.negatives.items())},
            "ties": sorted(self.ties),
            "similarity": [[repr(float(v)) for v in row] for row in self.similarity],
        }
        Path(path).write_text(json.dumps(payload, indent=2) + "\n")

    @staticmethod
    def load_json(path: str | Path) -> tuple["NegativePromptMap", dict]:
        try:
            payload = json.loads(Path(path).read_text())
            neg = {int(c): int(n) for c, n in payload["negatives"].items()}
            sim = np.array([[float(v) for v in row] for row in payload["similarity"]])
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise DataError(f"{path}: malformed negative map ({exc})") from exc
        return (NegativePromptMap(negatives=neg, similarity=sim,
                                  ties=list(payload.get("ties", []))),
                payload.get("meta", {}))


def select_negatives(reference: SampleSet, extractor: FeatureExtractor,
                     num_classes: int | None = None) -> NegativePromptMap:
    """Pick each class's most similar other class from reference features.

    Ties break to the smallest class id and are flagged.
    """
    if num_classes is None:
        num_classes = int(reference.labels.max()) + 1 if len(reference) else 0
    if num_classes < 2:
        raise DataError("negative selection needs at least two classes")
    means = []
    for c in range(num_classes):
        rows = reference.x[reference.labels == c]
        if rows.shape[0] == 0:
            raise DataError(f"reference set has no samples for class {c}")
        means.append(mean_feature(rows, extractor))
    sim = np.eye(num_classes)
    for c in range(num_classes):
        for cp in range(c + 1, num_classes):
            sim[c, cp] = sim[cp, c] = cosine_similarity(means[c], means[cp])
    negatives: dict[int, int] = {}
    ties: list[int] = []
    for c in range(num_classes):
        row = sim[c].copy()
        row[c] = -np.inf
        best = float(row.max())
        winners = np.flatnonzero(row == best)
        if len(winners) > 1:
            ties.append(c)
        negatives[c] = int(winners[0])
    return NegativePromptMap(negatives=negatives, similarity=sim, ties=ties)


def generate_reference_set(world: GaussianMixtureWorld, policy: GuidancePolicy,
                           per_class_n: int, sampler_cfg: SamplerConfig,
                           schedule: NoiseSchedule, *,
                           real: SampleSet | None = None, seed=None,
                           threads: int = 1) -> SampleSet:
    """Diverse per-class reference samples under condition-annealed guidance.

    With from_real initialization, starting points come from the real split
    (rows of the class cycled when scarce); pure noise otherwise.
    """
    if policy.kind != KIND_CADS:
        raise ValueError("reference generation uses the condition-annealed policy")
    if per_class_n < 1:
        raise ValueError("per_class_n must be >= 1")
    key = _seed_key(seed if seed is not None else sampler_cfg.master_seed)
    denoiser = world.denoiser()
    parts = []
    for c in range(world.num_classes):
        x0 = None
        cfg = sampler_cfg
        if sampler_cfg.init == INIT_FROM_REAL:
            x0 = _oversampled_rows(real, c, per_class_n, world.dim)
            if x0 is None:
                cfg = SamplerConfig(num_steps=sampler_cfg.num_steps,
                                    stepper=sampler_cfg.stepper,
                                    master_seed=sampler_cfg.master_seed)
        parts.append(sample(denoiser, policy, c, world.num_classes, cfg, schedule,
                            per_class_n, x0=x0, dim=world.dim, seed=key + (c,),
                            origin=ORIGIN_REFERENCE, threads=threads))
    return SampleSet.concat(parts)


def _oversampled_rows(real: SampleSet | None, c: int, n: int,
                      dim: int) -> np.ndarray | None:
    """Cycle a class's real rows to length n; None when the class is absent."""
    if real is None:
        return None
    rows = real.x[real.labels == c]
    if rows.shape[0] == 0:
        return None
    reps = int(np.ceil(n / rows.shape[0]))
    return np.tile(rows, (reps, 1))[:n]
