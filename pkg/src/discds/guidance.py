"""Guidance formulas: condition annealing, CFG, contrastive CFG, and their
per-step combination.

All operations are pure array math and accept either single vectors or
batches (leading sample axis).  Interpolation endpoints short-circuit so that
alpha in {0, 1} and w in {0, 1} reproduce the corresponding branch bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KIND_CFG = "cfg"
KIND_CADS = "cads"
KIND_CCFG = "ccfg"
KIND_DISC_DS = "disc_ds"
POLICY_KINDS = (KIND_CFG, KIND_CADS, KIND_CCFG, KIND_DISC_DS)

TAU_FIXED = "fixed"
TAU_DYNAMIC = "dynamic"

DIST_CONDITIONAL = "conditional"   # distances from the raw annealed-conditional eps
DIST_CFG_OUTPUT = "cfg_output"     # positive distance from the CFG-combined eps


class DegenerateInputError(ValueError):
    """Inputs outside an operation's domain (zero variance, zero norm, ...)."""


@dataclass(frozen=True)
class AnnealConfig:
    """Condition-annealing knobs: ramp thresholds, noise scale, mix factor."""

    tau1: float = 0.5
    tau2: float = 0.9
    s: float = 0.1
    psi: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.tau1 < self.tau2 <= 1.0):
            raise ValueError(f"need 0 <= tau1 < tau2 <= 1, got ({self.tau1}, {self.tau2})")
        if self.s < 0:
            raise ValueError("noise scale s must be >= 0")
        if not (0.0 <= self.psi <= 1.0):
            raise ValueError("psi must lie in [0, 1]")


@dataclass(frozen=True)
class GuidancePolicy:
    """One of the four sampling strategies and its parameters.

    cfg uses only w.  cads adds an anneal config.  ccfg adds the contrastive
    sharpness tau (annealing optional).  disc_ds uses everything plus the
    interpolation weight alpha.
    """

    kind: str
    w: float = 2.0
    anneal: AnnealConfig | None = None
    tau: float = 0.8
    tau_mode: str = TAU_FIXED
    alpha: float = 0.8
    distance_mode: str = DIST_CONDITIONAL

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind '{self.kind}'")
        if self.w <= 0:
            raise ValueError("guidance scale w must be > 0")
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        if self.tau_mode not in (TAU_FIXED, TAU_DYNAMIC):
            raise ValueError(f"unknown tau_mode '{self.tau_mode}'")
        if self.distance_mode not in (DIST_CONDITIONAL, DIST_CFG_OUTPUT):
            raise ValueError(f"unknown distance_mode '{self.distance_mode}'")
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError("alpha must lie in [0, 1]")
        if self.kind in (KIND_CADS, KIND_DISC_DS) and self.anneal is None:
            raise ValueError(f"policy '{self.kind}' requires an anneal config")
        if self.kind == KIND_CFG and self.anneal is not None:
            raise ValueError("cfg does not accept an anneal config")
        if self.tau_mode == TAU_DYNAMIC and self.anneal is None:
            raise ValueError("dynamic tau needs the annealing schedule")

    @property
    def uses_negative(self) -> bool:
        return self.kind in (KIND_CCFG, KIND_DISC_DS)

    @property
    def anneals(self) -> bool:
        return self.anneal is not None


def gamma(t_norm: float, cfg: AnnealConfig) -> float:
    """Annealing ramp: 1 below tau1, 0 above tau2, linear in between."""
    if t_norm <= cfg.tau1:
        return 1.0
    if t_norm >= cfg.tau2:
        return 0.0
    return (cfg.tau2 - t_norm) / (cfg.tau2 - cfg.tau1)


def anneal_condition(y, t_norm: float, cfg: AnnealConfig,
                     rng: np.random.Generator) -> np.ndarray:
    """Corrupt a condition with scheduled Gaussian noise.

    yhat = sqrt(gamma(t)) * y + s * sqrt(1 - gamma(t)) * n,  n ~ N(0, I).
    The null token is never annealed.
    """
    values = getattr(y, "values", y)
    if values is None:
        raise DegenerateInputError("the null condition is never annealed")
    values = np.asarray(values, dtype=float)
    noise = rng.standard_normal(values.shape)
    return anneal_with_noise(values, gamma(t_norm, cfg), cfg.s, noise)


def anneal_with_noise(y: np.ndarray, gamma_t: float, s: float,
                      noise: np.ndarray) -> np.ndarray:
    """Annealing core with the noise draw supplied by the caller."""
    return np.sqrt(gamma_t) * y + s * np.sqrt(1.0 - gamma_t) * noise


def rescale_condition(yhat: np.ndarray, mu_in: float, sigma_in: float,
                      psi: float) -> np.ndarray:
    """Restore the clean condition's mean/std, mixed back with factor psi.

    Statistics are taken over the entries of each condition vector.  A
    zero-variance input cannot be rescaled; with psi > 0 that is an error
    (it indicates a degenerate, single-class world).
    """
    yhat = np.asarray(yhat, dtype=float)
    if psi == 0.0:
        return yhat.copy()
    mean = yhat.mean(axis=-1, keepdims=True)
    std = yhat.std(axis=-1, keepdims=True)
    if np.any(std == 0.0):
        raise DegenerateInputError("cannot rescale a zero-variance condition")
    rescaled = (yhat - mean) / std * sigma_in + mu_in
    return psi * rescaled + (1.0 - psi) * yhat


def cfg_combine(eps_null: np.ndarray, eps_cond: np.ndarray, w: float) -> np.ndarray:
    """Classifier-free guidance: eps_null + w * (eps_cond - eps_null)."""
    if eps_null.shape != eps_cond.shape:
        raise ValueError("noise predictions must share a shape")
    if w == 1.0:
        return eps_cond.copy()
    if w == 0.0:
        return eps_null.copy()
    return eps_null + w * (eps_cond - eps_null)


def ccfg_weights(eps_null: np.ndarray, eps_pos: np.ndarray, eps_neg: np.ndarray,
                 w: float, tau_eff: float) -> tuple[np.ndarray, np.ndarray]:
    """Contrastive guidance scales from prediction distances.

    With d = ||eps_null - eps_cond||_2^2 over the full prediction:
        w_plus  =  2w / (1 + exp(-tau * d_pos))
        w_minus = -2w * exp(-tau * d_neg) / (1 + exp(-tau * d_neg))
    so w <= w_plus < 2w and -w <= w_minus <= 0.  Batched inputs give one
    weight pair per row.
    """
    d_pos = np.square(eps_null - eps_pos).sum(axis=-1)
    d_neg = np.square(eps_null - eps_neg).sum(axis=-1)
    e_pos = np.exp(-tau_eff * d_pos)
    e_neg = np.exp(-tau_eff * d_neg)
    w_plus = 2.0 * w / (1.0 + e_pos)
    w_minus = -2.0 * w * e_neg / (1.0 + e_neg)
    return w_plus, w_minus


def ccfg_combine(eps_null: np.ndarray, eps_pos: np.ndarray, eps_neg: np.ndarray,
                 w_plus: np.ndarray, w_minus: np.ndarray) -> np.ndarray:
    """Two-sided guidance: pull toward the positive, push off the negative."""
    if not (eps_null.shape == eps_pos.shape == eps_neg.shape):
        raise ValueError("noise predictions must share a shape")
    wp = np.expand_dims(np.asarray(w_plus), -1) if np.ndim(w_plus) else w_plus
    wm = np.expand_dims(np.asarray(w_minus), -1) if np.ndim(w_minus) else w_minus
    return eps_null + wp * (eps_pos - eps_null) + wm * (eps_neg - eps_null)


def dynamic_tau(tau: float, gamma_t: float) -> float:
    """Sharpness synchronized with annealing: tau * sqrt(gamma(t))."""
    return tau * np.sqrt(gamma_t)


def disc_ds_noise(eps_cads: np.ndarray, eps_ccfg: np.ndarray, alpha: float) -> np.ndarray:
    """Interpolate the diversity (CFG-on-annealed) and separation (contrastive)
    branches: alpha * eps_cads + (1 - alpha) * eps_ccfg."""
    if eps_cads.shape != eps_ccfg.shape:
        raise ValueError("noise predictions must share a shape")
    if alpha == 1.0:
        return eps_cads.copy()
    if alpha == 0.0:
        return eps_ccfg.copy()
    return alpha * eps_cads + (1.0 - alpha) * eps_ccfg
