"""Ground-truth class-conditional Gaussian-mixture worlds.

A world supplies three things a real pre-trained diffusion stack would:
exact data sampling per class, a closed-form denoiser (noise prediction for
any condition at any diffusion time), and an exact Bayes posterior over
classes for metrics.

A condition is a vector of per-class logits.  The denoiser interprets a
condition as mixture weights softmax(kappa * values) over the per-class
densities, so corrupted/annealed conditions blend classes smoothly; the null
condition falls back to the class priors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .samples import ORIGIN_REAL, SampleSet
from .schedule import NoiseSchedule

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class Condition:
    """Class-condition logits, or the unconditional (null) token."""

    values: np.ndarray | None  # (classes,) logits; None marks the null token

    @property
    def is_null(self) -> bool:
        return self.values is None

    @staticmethod
    def null() -> "Condition":
        return Condition(values=None)

    @staticmethod
    def one_hot(c: int, num_classes: int) -> "Condition":
        v = np.zeros(num_classes)
        v[c] = 1.0
        return Condition(values=v)


@dataclass(frozen=True)
class MixtureComponent:
    weight: float
    mean: np.ndarray        # (dim,)
    sigma: float            # isotropic std


class GaussianMixtureWorld:
    """Per-class isotropic Gaussian mixtures with known priors."""

    def __init__(self, classes: list[list[MixtureComponent]],
                 priors: np.ndarray | None = None, kappa: float = 8.0,
                 name: str = "", overlap_pair: tuple[int, int] | None = None):
        if not classes:
            raise ValueError("world needs at least one class")
        self.classes = classes
        self.num_classes = len(classes)
        self.dim = len(classes[0][0].mean)
        if priors is None:
            priors = np.full(self.num_classes, 1.0 / self.num_classes)
        self.priors = np.asarray(priors, dtype=float)
        self.kappa = float(kappa)
        self.name = name
        self.overlap_pair = overlap_pair
        self._validate()
        # flattened component tables used by every density/score evaluation
        comps = [(ci, comp) for ci, cls in enumerate(classes) for comp in cls]
        self._comp_class = np.array([ci for ci, _ in comps])
        self._comp_mean = np.stack([c.mean for _, c in comps])       # (J, dim)
        self._comp_sigma = np.array([c.sigma for _, c in comps])     # (J,)
        self._comp_weight = np.array([c.weight for _, c in comps])   # (J,)

    def _validate(self):
        if abs(self.priors.sum() - 1.0) > 1e-9:
            raise ValueError("class priors must sum to 1")
        if np.any(self.priors <= 0):
            raise ValueError("class priors must be positive")
        for ci, cls in enumerate(self.classes):
            if not cls:
                raise ValueError(f"class {ci} has no mixture components")
            w = sum(c.weight for c in cls)
            if abs(w - 1.0) > 1e-9:
                raise ValueError(f"class {ci} component weights sum to {w}, not 1")
            for comp in cls:
                if comp.sigma <= 0:
                    raise ValueError(f"class {ci} has non-positive sigma")
                if len(comp.mean) != self.dim:
                    raise ValueError("all component means must share one dimension")

    # ---- condition semantics -------------------------------------------

    def condition_weights(self, cond: Condition | np.ndarray | None) -> np.ndarray:
        """Class-blend weights for a condition; rows on the simplex.

        Accepts a Condition, raw logit rows (n, C), or None for the null
        token.  Logits map through softmax(kappa * values).
        """
        if cond is None or (isinstance(cond, Condition) and cond.is_null):
            return self.priors.copy()
        values = cond.values if isinstance(cond, Condition) else np.asarray(cond, dtype=float)
        z = self.kappa * values
        z = z - z.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)

    # ---- closed-form densities and scores ------------------------------

    def _component_log_pdfs(self, x: np.ndarray, alpha_bar: float) -> np.ndarray:
        """log N(x; sqrt(ab)*mu_j, (ab*sigma_j^2 + 1-ab) I) for all components.

        x: (n, dim) -> (n, J).
        """
        mu = np.sqrt(alpha_bar) * self._comp_mean                    # (J, dim)
        var = alpha_bar * self._comp_sigma ** 2 + (1.0 - alpha_bar)  # (J,)
        diff = x[:, None, :] - mu[None, :, :]                        # (n, J, dim)
        sq = (diff * diff).sum(axis=2)                               # (n, J)
        return -0.5 * (sq / var + self.dim * (np.log(var) + _LOG_2PI))

    def _mixture_log_weights(self, weights: np.ndarray) -> np.ndarray:
        """Per-component total weights from per-class blend weights."""
        w = np.asarray(weights, dtype=float)
        comp_w = w[..., self._comp_class] * self._comp_weight
        with np.errstate(divide="ignore"):
            return np.log(comp_w)

    def log_density_t(self, cond: Condition | np.ndarray | None, x: np.ndarray,
                      t: int, schedule: NoiseSchedule) -> np.ndarray:
        """log p_t(x | condition) under the diffused mixture at timestep t."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.dim:
            raise ValueError(f"x has dim {x.shape[1]}, world has dim {self.dim}")
        ab = float(schedule.alpha_bar[t])
        logw = self._mixture_log_weights(self.condition_weights(cond))
        logp = self._component_log_pdfs(x, ab) + np.atleast_2d(logw)
        m = logp.max(axis=1, keepdims=True)
        out = m[:, 0] + np.log(np.exp(logp - m).sum(axis=1))
        return out if out.shape[0] > 1 else out[0]

    def analytic_eps(self, cond: Condition | np.ndarray | None, x: np.ndarray,
                     t: int, schedule: NoiseSchedule) -> np.ndarray:
        """Exact noise prediction -sqrt(1-ab) * grad_x log p_t(x | cond).

        Responsibilities over the diffused components give the mixture score
        in closed form; supports one condition for all rows or one condition
        row per sample.
        """
        x2 = np.atleast_2d(np.asarray(x, dtype=float))
        n = x2.shape[0]
        ab = float(schedule.alpha_bar[t])
        weights = self.condition_weights(cond)
        logw = self._mixture_log_weights(weights)
        logw = np.broadcast_to(np.atleast_2d(logw), (n, len(self._comp_sigma)))
        logp = self._component_log_pdfs(x2, ab) + logw               # (n, J)
        logp = logp - logp.max(axis=1, keepdims=True)
        r = np.exp(logp)
        r /= r.sum(axis=1, keepdims=True)                            # responsibilities
        mu = np.sqrt(ab) * self._comp_mean                           # (J, dim)
        var = ab * self._comp_sigma ** 2 + (1.0 - ab)                # (J,)
        pull = (x2[:, None, :] - mu[None, :, :]) / var[None, :, None]
        eps = np.sqrt(1.0 - ab) * (r[:, :, None] * pull).sum(axis=1)
        return eps if np.asarray(x).ndim == 2 else eps[0]

    def denoiser(self):
        """Noise-prediction callable with the sampler's interface.

        f(x, t, schedule, cond) where cond is None (null token) or per-sample
        logit rows (n, C).
        """
        def eps_fn(x, t, schedule, cond=None):
            return self.analytic_eps(cond, x, t, schedule)
        return eps_fn

    def oracle_posterior(self, x: np.ndarray) -> np.ndarray:
        """Exact Bayes posterior p(c | x) at t=0 under the class priors."""
        x2 = np.atleast_2d(np.asarray(x, dtype=float))
        diff = x2[:, None, :] - self._comp_mean[None, :, :]
        var = self._comp_sigma ** 2
        logp = (-0.5 * ((diff * diff).sum(axis=2) / var
                        + self.dim * (np.log(var) + _LOG_2PI))
                + np.log(self._comp_weight)
                + np.log(self.priors[self._comp_class]))
        # reduce per class with logsumexp, then normalize
        out = np.full((x2.shape[0], self.num_classes), -np.inf)
        for c in range(self.num_classes):
            cols = logp[:, self._comp_class == c]
            m = cols.max(axis=1)
            out[:, c] = m + np.log(np.exp(cols - m[:, None]).sum(axis=1))
        out -= out.max(axis=1, keepdims=True)
        p = np.exp(out)
        p /= p.sum(axis=1, keepdims=True)
        return p if np.asarray(x).ndim == 2 else p[0]

    # ---- data sampling --------------------------------------------------

    def sample_class_data(self, c: int, n: int, seed) -> SampleSet:
        """n i.i.d. clean draws from class c, labeled and marked as real."""
        if not (0 <= c < self.num_classes):
            raise ValueError(f"unknown class {c}")
        if n < 0:
            raise ValueError("sample count must be >= 0")
        rng = np.random.default_rng(_seed_key(seed))
        comps = self.classes[c]
        w = np.array([comp.weight for comp in comps])
        which = rng.choice(len(comps), size=n, p=w)
        x = np.empty((n, self.dim))
        for j, comp in enumerate(comps):
            rows = which == j
            x[rows] = comp.mean + comp.sigma * rng.standard_normal((rows.sum(), self.dim))
        seed0 = _seed_key(seed)[0] if n else 0
        return SampleSet(x=x, labels=np.full(n, c, dtype=np.int64),
                         origin=[ORIGIN_REAL] * n,
                         seed=np.full(n, seed0, dtype=np.int64))

    def sample_balanced(self, per_class: int, seed) -> SampleSet:
        """per_class clean draws from every class (balanced test split)."""
        parts = [self.sample_class_data(c, per_class, _seed_key(seed) + (c,))
                 for c in range(self.num_classes)]
        return SampleSet.concat(parts)

    def class_moments(self, c: int) -> tuple[np.ndarray, np.ndarray]:
        """Closed-form mean and covariance of one class mixture."""
        comps = self.classes[c]
        w = np.array([comp.weight for comp in comps])
        mus = np.stack([comp.mean for comp in comps])
        mean = w @ mus
        cov = np.zeros((self.dim, self.dim))
        for wi, comp in zip(w, comps):
            d = comp.mean - mean
            cov += wi * (comp.sigma ** 2 * np.eye(self.dim) + np.outer(d, d))
        return mean, cov

    # ---- (de)serialization ----------------------------------------------

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kappa": self.kappa,
            "priors": self.priors.tolist(),
            "overlap_pair": list(self.overlap_pair) if self.overlap_pair else None,
            "classes": [[{"weight": c.weight, "mean": list(map(float, c.mean)),
                          "sigma": c.sigma} for c in cls]
                        for cls in self.classes],
        }

    @staticmethod
    def from_dict(spec: dict) -> "GaussianMixtureWorld":
        classes = [[MixtureComponent(weight=float(c["weight"]),
                                     mean=np.asarray(c["mean"], dtype=float),
                                     sigma=float(c["sigma"]))
                    for c in cls] for cls in spec["classes"]]
        pair = spec.get("overlap_pair")
        return GaussianMixtureWorld(
            classes,
            priors=np.asarray(spec["priors"], dtype=float) if spec.get("priors") else None,
            kappa=float(spec.get("kappa", 8.0)),
            name=spec.get("name", ""),
            overlap_pair=tuple(pair) if pair else None,
        )


def _seed_key(seed) -> tuple[int, ...]:
    """Normalize a seed (int or tuple of ints) to a tuple for SeedSequence."""
    if isinstance(seed, (tuple, list)):
        return tuple(int(s) for s in seed)
    return (int(seed),)


def load_preset(name: str) -> GaussianMixtureWorld:
    """Load a named world shipped with the package, or from a JSON path."""
    path = Path(name)
    if path.suffix == ".json" and path.exists():
        return GaussianMixtureWorld.from_dict(json.loads(path.read_text()))
    ref = resources.files("discds.presets").joinpath(f"{name}.json")
    if not ref.is_file():
        raise ValueError(f"unknown world preset '{name}'")
    return GaussianMixtureWorld.from_dict(json.loads(ref.read_text()))


def preset_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("discds.presets").iterdir()
                  if p.name.endswith(".json"))


def build_longtail(num_classes: int, n_max: int, imbalance_factor: float) -> np.ndarray:
    """Exponential long-tail profile: n_c = round(n_max * IF^(-c/(C-1))).

    Counts are clamped to at least 1; class 0 keeps n_max and the last class
    lands at max(1, round(n_max / IF)).
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    if imbalance_factor < 1:
        raise ValueError("imbalance factor must be >= 1")
    if num_classes < 2 and imbalance_factor > 1:
        raise ValueError("an imbalanced profile needs at least 2 classes")
    c = np.arange(num_classes)
    denom = max(num_classes - 1, 1)
    counts = np.round(n_max * imbalance_factor ** (-c / denom)).astype(int)
    return np.maximum(counts, 1)
