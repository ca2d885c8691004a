"""Labeled sample sets and their columnar on-disk format.

A sample set is the unit of data flowing between pipeline stages: points with
class labels, provenance (where each row came from and under which policy and
seed) and optional soft labels.  Files are tab-separated text with '#'
metadata lines; floats are written with repr so a save/load round trip is
bit-exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ORIGIN_REAL = "real"
ORIGIN_REFERENCE = "reference"
ORIGIN_SYNTHETIC = "synthetic"

NO_NEGATIVE = -1
NO_POLICY = "-"


class DataError(Exception):
    """Malformed or inconsistent data file / sample set."""


@dataclass
class SampleSet:
    """Rows of (point, label, provenance, seed) with optional soft labels."""

    x: np.ndarray                       # (n, dim) float64
    labels: np.ndarray                  # (n,) int64
    origin: list[str] = field(default_factory=list)
    policy: list[str] = field(default_factory=list)
    neg_class: np.ndarray | None = None  # (n,) int64, NO_NEGATIVE when absent
    seed: np.ndarray | None = None       # (n,) int64, generating master seed
    soft_labels: np.ndarray | None = None  # (n, classes), rows sum to 1

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = self.x.shape[0]
        if self.labels.shape != (n,):
            raise DataError("labels must align with rows")
        if not self.origin:
            self.origin = [ORIGIN_REAL] * n
        if not self.policy:
            self.policy = [NO_POLICY] * n
        if self.neg_class is None:
            self.neg_class = np.full(n, NO_NEGATIVE, dtype=np.int64)
        else:
            self.neg_class = np.asarray(self.neg_class, dtype=np.int64)
        if self.seed is None:
            self.seed = np.zeros(n, dtype=np.int64)
        else:
            self.seed = np.asarray(self.seed, dtype=np.int64)
        if len(self.origin) != n or len(self.policy) != n:
            raise DataError("provenance columns must align with rows")
        if self.soft_labels is not None:
            self.soft_labels = np.asarray(self.soft_labels, dtype=np.float64)
            if self.soft_labels.shape[0] != n:
                raise DataError("soft labels must align with rows")
            if not np.allclose(self.soft_labels.sum(axis=1), 1.0, atol=1e-9):
                raise DataError("soft labels must sum to 1")

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def of_class(self, c: int) -> "SampleSet":
        return self.take(np.flatnonzero(self.labels == c))

    def take(self, idx: np.ndarray) -> "SampleSet":
        idx = np.asarray(idx)
        return SampleSet(
            x=self.x[idx],
            labels=self.labels[idx],
            origin=[self.origin[i] for i in idx],
            policy=[self.policy[i] for i in idx],
            neg_class=self.neg_class[idx],
            seed=self.seed[idx],
            soft_labels=None if self.soft_labels is None else self.soft_labels[idx],
        )

    def class_counts(self, num_classes: int) -> np.ndarray:
        return np.bincount(self.labels, minlength=num_classes)

    @staticmethod
    def empty(dim: int) -> "SampleSet":
        return SampleSet(x=np.zeros((0, dim)), labels=np.zeros(0, dtype=np.int64))

    @staticmethod
    def concat(parts: list["SampleSet"]) -> "SampleSet":
        parts = [p for p in parts if len(p) > 0]
        if not parts:
            raise DataError("cannot concatenate zero non-empty sample sets")
        soft = None
        if all(p.soft_labels is not None for p in parts):
            soft = np.concatenate([p.soft_labels for p in parts])
        return SampleSet(
            x=np.concatenate([p.x for p in parts]),
            labels=np.concatenate([p.labels for p in parts]),
            origin=sum((p.origin for p in parts), []),
            policy=sum((p.policy for p in parts), []),
            neg_class=np.concatenate([p.neg_class for p in parts]),
            seed=np.concatenate([p.seed for p in parts]),
            soft_labels=soft,
        )

    # ---- columnar text format ------------------------------------------

    def save_tsv(self, path: str | Path, meta: dict | None = None) -> None:
        """Write one row per sample; floats use repr for exact round trips."""
        path = Path(path)
        dim = self.dim
        cols = [f"x{d}" for d in range(dim)]
        cols += ["label", "origin", "policy", "neg_class", "seed", "soft_label"]
        lines = []
        for key, value in (meta or {}).items():
            lines.append(f"# {key}={value}")
        lines.append("\t".join(cols))
        for i in range(len(self)):
            row = [repr(float(v)) for v in self.x[i]]
            row.append(str(int(self.labels[i])))
            row.append(self.origin[i])
            row.append(self.policy[i])
            row.append(str(int(self.neg_class[i])))
            row.append(str(int(self.seed[i])))
            if self.soft_labels is None:
                row.append(NO_POLICY)
            else:
                row.append(",".join(repr(float(v)) for v in self.soft_labels[i]))
            lines.append("\t".join(row))
        path.write_text("\n".join(lines) + "\n")

    @staticmethod
    def load_tsv(path: str | Path) -> tuple["SampleSet", dict]:
        """Read a sample file back; returns (samples, metadata)."""
        path = Path(path)
        meta: dict[str, str] = {}
        header: list[str] | None = None
        xs, labels, origin, policy, negs, seeds, softs = [], [], [], [], [], [], []
        for lineno, line in enumerate(path.read_text().splitlines(), start=1):
            if not line.strip():
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    k, v = body.split("=", 1)
                    meta[k.strip()] = v.strip()
                continue
            fields = line.split("\t")
            if header is None:
                header = fields
                if "label" not in header:
                    raise DataError(f"{path}:{lineno}: missing header row")
                continue
            if len(fields) != len(header):
                raise DataError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(fields)}")
            try:
                dim = header.index("label")
                xs.append([float(v) for v in fields[:dim]])
                labels.append(int(fields[dim]))
                origin.append(fields[dim + 1])
                policy.append(fields[dim + 2])
                negs.append(int(fields[dim + 3]))
                seeds.append(int(fields[dim + 4]))
                soft = fields[dim + 5]
                softs.append(None if soft == NO_POLICY
                             else [float(v) for v in soft.split(",")])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
        if header is None:
            raise DataError(f"{path}: empty sample file")
        soft_arr = None
        if softs and all(s is not None for s in softs):
            soft_arr = np.asarray(softs, dtype=np.float64)
        dim = header.index("label")
        ss = SampleSet(
            x=np.asarray(xs, dtype=np.float64).reshape(len(labels), dim),
            labels=np.asarray(labels, dtype=np.int64),
            origin=origin,
            policy=policy,
            neg_class=np.asarray(negs, dtype=np.int64),
            seed=np.asarray(seeds, dtype=np.int64),
            soft_labels=soft_arr,
        )
        return ss, meta
