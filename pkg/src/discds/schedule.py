"""Forward diffusion schedule and the inference-step time grid.

The forward process adds Gaussian noise over T discrete train timesteps with
per-step variances beta[t]; alpha_bar[t] = prod_{i<=t}(1 - beta[i]) is the
cumulative signal fraction.  Inference runs on a coarser grid of N steps laid
uniformly over the train timesteps, from t = T-1 (pure noise) down to t = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear-beta DDPM forward schedule.

    alpha_bar is strictly decreasing and stays in (0, 1].
    """

    num_train_steps: int
    beta: np.ndarray
    alpha_bar: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.beta.shape != (self.num_train_steps,):
            raise ValueError("beta must have one entry per train step")
        if np.any(np.diff(self.alpha_bar) >= 0):
            raise ValueError("alpha_bar must be strictly decreasing")


def make_schedule(num_train_steps: int, beta_min: float = 1e-4,
                  beta_max: float = 0.02) -> NoiseSchedule:
    """Build a linear-beta schedule with T steps and betas in [beta_min, beta_max]."""
    if num_train_steps < 2:
        raise ValueError(f"num_train_steps must be >= 2, got {num_train_steps}")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ValueError(
            f"betas must satisfy 0 < beta_min <= beta_max < 1, "
            f"got beta_min={beta_min}, beta_max={beta_max}")
    beta = np.linspace(beta_min, beta_max, num_train_steps)
    alpha_bar = np.cumprod(1.0 - beta)
    return NoiseSchedule(num_train_steps, beta, alpha_bar)


def inference_timesteps(schedule: NoiseSchedule, num_steps: int) -> np.ndarray:
    """Train timesteps visited by an N-step inference run, noisiest first.

    N points spread uniformly over {T-1 ... 0}, including both endpoints.
    """
    if num_steps < 1:
        raise ValueError("num_steps must be >= 1")
    if num_steps > schedule.num_train_steps:
        raise ValueError("num_steps may not exceed the train-step count")
    grid = np.linspace(schedule.num_train_steps - 1, 0, num_steps)
    return np.round(grid).astype(int)


def normalized_time(schedule: NoiseSchedule, step: int, num_steps: int) -> float:
    """Fraction of the forward process remaining at an inference step.

    Returns train_timestep / T, so ~1 at the first (noisiest) step and 0 at
    the last.  Using the train-timestep fraction keeps annealing thresholds
    meaningful at any inference step count.
    """
    ts = inference_timesteps(schedule, num_steps)
    if not (0 <= step < num_steps):
        raise ValueError(f"step {step} out of range for a {num_steps}-step grid")
    return float(ts[step]) / schedule.num_train_steps


def forward_diffuse(x0: np.ndarray, t: int, eps: np.ndarray,
                    schedule: NoiseSchedule) -> np.ndarray:
    """Noise clean data to train timestep t: sqrt(ab)*x0 + sqrt(1-ab)*eps."""
    x0 = np.asarray(x0, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if x0.shape != eps.shape:
        raise ValueError(f"shape mismatch: x0 {x0.shape} vs eps {eps.shape}")
    if not (0 <= t < schedule.num_train_steps):
        raise ValueError(f"timestep {t} outside [0, {schedule.num_train_steps})")
    ab = schedule.alpha_bar[t]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
