"""Reverse diffusion loop with pluggable guidance.

Each step prepares (possibly annealed) positive/negative conditions, queries
the denoiser for the null / positive / negative noise predictions, combines
them per the active policy, and advances with a reverse stepper.

Determinism contract: every sample i draws from its own RNG substreams keyed
as (seed..., i, role) with role 0 for trajectory noise (init draw and
ancestral step noise), 1 for positive-condition annealing noise and 2 for
negative-condition annealing noise.  Results are therefore identical for a
given seed no matter how samples are chunked across workers.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import guidance as gd
from .samples import NO_NEGATIVE, ORIGIN_SYNTHETIC, SampleSet
from .schedule import NoiseSchedule, forward_diffuse, inference_timesteps
from .world import _seed_key

STEP_ANCESTRAL = "ancestral"
STEP_DDIM = "ddim"
STEP_MULTISTEP2 = "multistep2"
STEPPERS = (STEP_ANCESTRAL, STEP_DDIM, STEP_MULTISTEP2)

INIT_PURE_NOISE = "pure_noise"
INIT_FROM_REAL = "from_real"

_ROLE_TRAJ, _ROLE_POS, _ROLE_NEG = 0, 1, 2


@dataclass(frozen=True)
class SamplerConfig:
    num_steps: int = 50
    stepper: str = STEP_DDIM
    init: str = INIT_PURE_NOISE
    strength: float = 0.8        # only used with from_real
    master_seed: int = 0

    def __post_init__(self):
        if self.num_steps < 1:
            raise ValueError("num_steps must be >= 1")
        if self.stepper not in STEPPERS:
            raise ValueError(f"unknown stepper '{self.stepper}'")
        if self.init not in (INIT_PURE_NOISE, INIT_FROM_REAL):
            raise ValueError(f"unknown init mode '{self.init}'")
        if not (0.0 < self.strength <= 1.0):
            raise ValueError("strength must lie in (0, 1]")


def start_step_for_strength(schedule: NoiseSchedule, num_steps: int,
                            strength: float) -> int:
    """First inference step whose normalized time is <= strength."""
    if not (0.0 < strength <= 1.0):
        raise ValueError("strength must lie in (0, 1]")
    ts = inference_timesteps(schedule, num_steps)
    t_norm = ts / schedule.num_train_steps
    return int(np.argmax(t_norm <= strength))


def init_from_real(x0: np.ndarray, strength: float, schedule: NoiseSchedule,
                   num_steps: int, rng: np.random.Generator):
    """Noise real data up to the step matching `strength`.

    Returns (x_start, start_step); sampling should run steps
    start_step..num_steps-1 only.
    """
    x0 = np.asarray(x0, dtype=float)
    start = start_step_for_strength(schedule, num_steps, strength)
    t = inference_timesteps(schedule, num_steps)[start]
    eps = rng.standard_normal(x0.shape)
    return forward_diffuse(x0, int(t), eps, schedule), start


def _lambda(ab: float) -> float:
    return 0.5 * (np.log(ab) - np.log1p(-ab))


def reverse_step(x_t: np.ndarray, eps_hat: np.ndarray, step: int,
                 schedule: NoiseSchedule, num_steps: int,
                 stepper: str = STEP_DDIM, *, noise: np.ndarray | None = None,
                 rng: np.random.Generator | None = None,
                 prev_eps: np.ndarray | None = None) -> np.ndarray:
    """Advance one inference step; the final step targets the clean signal.

    ancestral: posterior mean with eps_hat plugged in plus sigma*z, z=0 at the
    final step.  ddim: deterministic x0-prediction update.  multistep2: ddim
    with the noise prediction extrapolated from the previous step's output
    (falls back to plain ddim on the first and final steps).
    """
    if x_t.shape != eps_hat.shape:
        raise ValueError("x and noise prediction must share a shape")
    ts = inference_timesteps(schedule, num_steps)
    last = step == num_steps - 1
    ab_t = float(schedule.alpha_bar[ts[step]])
    ab_prev = 1.0 if last else float(schedule.alpha_bar[ts[step + 1]])

    if stepper == STEP_MULTISTEP2 and prev_eps is not None and not last:
        lam_pp = _lambda(float(schedule.alpha_bar[ts[step - 1]]))
        lam_t, lam_n = _lambda(ab_t), _lambda(ab_prev)
        r = (lam_t - lam_pp) / (lam_n - lam_t)
        eps_use = (1.0 + 0.5 / r) * eps_hat - (0.5 / r) * prev_eps
    else:
        eps_use = eps_hat

    x0_hat = (x_t - np.sqrt(1.0 - ab_t) * eps_use) / np.sqrt(ab_t)

    if stepper in (STEP_DDIM, STEP_MULTISTEP2):
        return np.sqrt(ab_prev) * x0_hat + np.sqrt(1.0 - ab_prev) * eps_use

    if stepper == STEP_ANCESTRAL:
        a_eff = ab_t / ab_prev
        b_eff = 1.0 - a_eff
        mean = (np.sqrt(ab_prev) * b_eff * x0_hat
                + np.sqrt(a_eff) * (1.0 - ab_prev) * x_t) / (1.0 - ab_t)
        if last:
            return mean
        if noise is None:
            if rng is None:
                raise ValueError("ancestral stepping needs noise or an rng")
            noise = rng.standard_normal(x_t.shape)
        return mean + np.sqrt(b_eff) * noise

    raise ValueError(f"unknown stepper '{stepper}'")


def sample(denoiser, policy: gd.GuidancePolicy, pos_class: int, num_classes: int,
           cfg: SamplerConfig, schedule: NoiseSchedule, n: int, *,
           neg_class: int | None = None, x0: np.ndarray | None = None,
           dim: int | None = None, seed=None, origin: str = ORIGIN_SYNTHETIC,
           policy_name: str | None = None, threads: int = 1) -> SampleSet:
    """Generate n samples of pos_class under the given guidance policy.

    denoiser(x, t, schedule, cond) must be pure; cond is None for the null
    token or an array of condition logits (one row per sample).  With
    init=from_real, x0 supplies one clean starting point per sample.
    """
    if policy.uses_negative:
        if neg_class is None:
            raise ValueError(f"policy '{policy.kind}' needs a negative class")
        if neg_class == pos_class:
            raise ValueError("negative class must differ from the target class")
    elif neg_class is not None:
        raise ValueError(f"policy '{policy.kind}' does not take a negative class")
    if cfg.init == INIT_FROM_REAL:
        if x0 is None:
            raise ValueError("from_real initialization needs x0 rows")
        x0 = np.atleast_2d(np.asarray(x0, dtype=float))
        if x0.shape[0] != n:
            raise ValueError("need one x0 row per requested sample")
        dim = x0.shape[1]
    if dim is None:
        raise ValueError("dim is required with pure-noise initialization")

    key = _seed_key(seed if seed is not None else cfg.master_seed)
    if n == 0:
        out = SampleSet.empty(dim)
        out.labels = out.labels.astype(np.int64)
        return out

    chunks = _split_chunks(n, threads)
    run = lambda c: _sample_chunk(denoiser, policy, pos_class, neg_class,
                                  num_classes, cfg, schedule, c, key, x0, dim)
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    x = np.concatenate(parts)

    neg = NO_NEGATIVE if neg_class is None else int(neg_class)
    return SampleSet(
        x=x,
        labels=np.full(n, pos_class, dtype=np.int64),
        origin=[origin] * n,
        policy=[policy_name or policy.kind] * n,
        neg_class=np.full(n, neg, dtype=np.int64),
        seed=np.full(n, key[0], dtype=np.int64),
    )


def _split_chunks(n: int, threads: int) -> list[range]:
    k = max(1, min(threads, n))
    bounds = np.linspace(0, n, k + 1).astype(int)
    return [range(bounds[i], bounds[i + 1]) for i in range(k)
            if bounds[i] < bounds[i + 1]]


def _sample_chunk(denoiser, policy, pos_class, neg_class, num_classes, cfg,
                  schedule, indices, key, x0, dim) -> np.ndarray:
    gens_traj = [np.random.default_rng(key + (i, _ROLE_TRAJ)) for i in indices]
    gens_pos = gens_neg = None
    if policy.anneals:
        gens_pos = [np.random.default_rng(key + (i, _ROLE_POS)) for i in indices]
        if policy.uses_negative:
            gens_neg = [np.random.default_rng(key + (i, _ROLE_NEG)) for i in indices]

    ts = inference_timesteps(schedule, cfg.num_steps)
    if cfg.init == INIT_FROM_REAL:
        start = start_step_for_strength(schedule, cfg.num_steps, cfg.strength)
        eps0 = np.stack([g.standard_normal(dim) for g in gens_traj])
        x = forward_diffuse(x0[list(indices)], int(ts[start]), eps0, schedule)
    else:
        start = 0
        x = np.stack([g.standard_normal(dim) for g in gens_traj])

    y_pos = np.zeros(num_classes)
    y_pos[pos_class] = 1.0
    y_neg = None
    if policy.uses_negative:
        y_neg = np.zeros(num_classes)
        y_neg[neg_class] = 1.0
    mu_in = float(y_pos.mean())
    sigma_in = float(y_pos.std())

    anneal = policy.anneal
    prev_eps = None
    for step in range(start, cfg.num_steps):
        t = int(ts[step])
        t_norm = ts[step] / schedule.num_train_steps
        eps_null = denoiser(x, t, schedule, None)

        if policy.anneals:
            g = gd.gamma(t_norm, anneal)
            noise_p = np.stack([gp.standard_normal(num_classes) for gp in gens_pos])
            yp = gd.anneal_with_noise(y_pos, g, anneal.s, noise_p)
            yp = gd.rescale_condition(yp, mu_in, sigma_in, anneal.psi)
        else:
            g = 1.0
            yp = y_pos
        eps_pos = denoiser(x, t, schedule, yp)

        if not policy.uses_negative:
            eps_hat = gd.cfg_combine(eps_null, eps_pos, policy.w)
        else:
            if policy.anneals:
                noise_n = np.stack([gn.standard_normal(num_classes) for gn in gens_neg])
                yn = gd.anneal_with_noise(y_neg, g, anneal.s, noise_n)
                yn = gd.rescale_condition(yn, mu_in, sigma_in, anneal.psi)
            else:
                yn = y_neg
            eps_neg = denoiser(x, t, schedule, yn)
            tau_eff = (gd.dynamic_tau(policy.tau, g)
                       if policy.tau_mode == gd.TAU_DYNAMIC else policy.tau)
            if policy.distance_mode == gd.DIST_CFG_OUTPUT:
                pos_for_dist = gd.cfg_combine(eps_null, eps_pos, policy.w)
            else:
                pos_for_dist = eps_pos
            w_plus, w_minus = gd.ccfg_weights(eps_null, pos_for_dist, eps_neg,
                                              policy.w, tau_eff)
            eps_ccfg = gd.ccfg_combine(eps_null, eps_pos, eps_neg, w_plus, w_minus)
            if policy.kind == gd.KIND_DISC_DS:
                eps_cads = gd.cfg_combine(eps_null, eps_pos, policy.w)
                eps_hat = gd.disc_ds_noise(eps_cads, eps_ccfg, policy.alpha)
            else:
                eps_hat = eps_ccfg

        z = None
        if cfg.stepper == STEP_ANCESTRAL and step < cfg.num_steps - 1:
            z = np.stack([gt.standard_normal(dim) for gt in gens_traj])
        x = reverse_step(x, eps_hat, step, schedule, cfg.num_steps, cfg.stepper,
                         noise=z, prev_eps=prev_eps)
        prev_eps = eps_hat
    return x
