import numpy as np
import pytest

from discds.guidance import AnnealConfig, GuidancePolicy
from discds.sampler import (SamplerConfig, init_from_real, reverse_step, sample,
                            start_step_for_strength)
from discds.schedule import inference_timesteps, make_schedule
from discds.world import Condition

AN = AnnealConfig()


# ---- image-to-image initialization ------------------------------------------

def test_start_step_frozen_grid_arithmetic(sched):
    # grid linspace(999, 0, 50)/1000: t_norm[9] = 0.816 > 0.8 >= t_norm[10]
    assert start_step_for_strength(sched, 50, 0.8) == 10
    assert start_step_for_strength(sched, 50, 1.0) == 0
    assert start_step_for_strength(sched, 50, 1e-9) == 49


def test_init_from_real_limits(sched):
    rng = np.random.default_rng(0)
    x0 = np.array([[1.0, 2.0]])
    x_full, s_full = init_from_real(x0, 1.0, sched, 50, rng)
    assert s_full == 0
    # strength 1 starts from (almost) pure noise
    assert np.abs(x_full).max() < 8.0 and np.linalg.norm(x_full - x0) > 0.5
    x_id, s_id = init_from_real(x0, 1e-6, sched, 50, np.random.default_rng(1))
    assert s_id == 49
    assert np.allclose(x_id, x0, atol=0.05)


def test_init_from_real_rejects_bad_strength(sched):
    with pytest.raises(ValueError):
        init_from_real(np.zeros((1, 2)), 0.0, sched, 50, np.random.default_rng(0))
    with pytest.raises(ValueError):
        init_from_real(np.zeros((1, 2)), 1.1, sched, 50, np.random.default_rng(0))


# ---- reverse steppers ---------------------------------------------------------

def test_ddim_step_matches_formula(sched):
    rng = np.random.default_rng(4)
    x = rng.normal(size=(3, 2))
    eps = rng.normal(size=(3, 2))
    step = 17
    ts = inference_timesteps(sched, 50)
    ab_t, ab_p = sched.alpha_bar[ts[step]], sched.alpha_bar[ts[step + 1]]
    x0h = (x - np.sqrt(1 - ab_t) * eps) / np.sqrt(ab_t)
    expected = np.sqrt(ab_p) * x0h + np.sqrt(1 - ab_p) * eps
    out = reverse_step(x, eps, step, sched, 50, "ddim")
    assert np.allclose(out, expected, atol=1e-14)


def test_ddim_fixed_point_identity(sched):
    # stepping from t to the same alpha_bar reproduces x exactly
    rng = np.random.default_rng(5)
    x, eps = rng.normal(size=(2, 4))
    ab = 0.37
    x0h = (x - np.sqrt(1 - ab) * eps) / np.sqrt(ab)
    again = np.sqrt(ab) * x0h + np.sqrt(1 - ab) * eps
    assert np.allclose(again, x, atol=1e-12)


def test_final_step_targets_clean_signal(sched):
    rng = np.random.default_rng(6)
    x, eps = rng.normal(size=(2, 3))
    ab_t = sched.alpha_bar[0]
    x0h = (x - np.sqrt(1 - ab_t) * eps) / np.sqrt(ab_t)
    assert np.allclose(reverse_step(x, eps, 49, sched, 50, "ddim"), x0h, atol=1e-14)
    # ancestral adds no noise at the final step and needs no rng
    out = reverse_step(x, eps, 49, sched, 50, "ancestral")
    assert np.allclose(out, x0h, atol=1e-14)


def test_ancestral_needs_noise_before_final(sched):
    x = np.zeros((1, 2))
    with pytest.raises(ValueError):
        reverse_step(x, x, 5, sched, 50, "ancestral")
    a = reverse_step(x, x, 5, sched, 50, "ancestral", rng=np.random.default_rng(3))
    b = reverse_step(x, x, 5, sched, 50, "ancestral",
                     noise=np.random.default_rng(3).standard_normal((1, 2)))
    assert np.array_equal(a, b)


def test_multistep_first_step_is_ddim(sched):
    rng = np.random.default_rng(7)
    x, eps = rng.normal(size=(2, 5))
    assert np.array_equal(reverse_step(x, eps, 0, sched, 50, "multistep2"),
                          reverse_step(x, eps, 0, sched, 50, "ddim"))


def test_x0_prediction_invariant_unit_world(unit_world, sched):
    # with the exact unit-Gaussian denoiser, x0_hat == sqrt(ab) * x at every step
    den = unit_world.denoiser()
    cfg = SamplerConfig(num_steps=50, master_seed=12)
    ts = inference_timesteps(sched, 50)
    rng = np.random.default_rng(0)
    x = rng.standard_normal((16, 2))
    for step in range(50):
        t = int(ts[step])
        ab = sched.alpha_bar[t]
        eps = den(x, t, sched, Condition.one_hot(0, 1).values[None, :])
        x0h = (x - np.sqrt(1 - ab) * eps) / np.sqrt(ab)
        assert np.allclose(x0h, np.sqrt(ab) * x, atol=1e-10)
        x = reverse_step(x, eps, step, sched, 50, "ddim")


# ---- the sampling loop ---------------------------------------------------------

def test_sample_deterministic_and_chunk_invariant(pair2, sched):
    den = pair2.denoiser()
    pol = GuidancePolicy(kind="cads", anneal=AN)
    cfg = SamplerConfig(num_steps=25, master_seed=77)
    a = sample(den, pol, 0, 2, cfg, sched, 30, dim=2)
    b = sample(den, pol, 0, 2, cfg, sched, 30, dim=2)
    c = sample(den, pol, 0, 2, cfg, sched, 30, dim=2, threads=3)
    assert np.array_equal(a.x, b.x)
    assert np.array_equal(a.x, c.x)


def test_sample_prefix_stability(pair2, sched):
    # per-sample substreams: the first k samples do not depend on n
    den = pair2.denoiser()
    pol = GuidancePolicy(kind="cfg", w=1.5)
    cfg = SamplerConfig(num_steps=20, stepper="ancestral", master_seed=5)
    a = sample(den, pol, 1, 2, cfg, sched, 10, dim=2)
    b = sample(den, pol, 1, 2, cfg, sched, 4, dim=2)
    assert np.array_equal(a.x[:4], b.x)


def test_sample_validation(pair2, sched):
    den = pair2.denoiser()
    cfg = SamplerConfig(num_steps=10)
    disc = GuidancePolicy(kind="disc_ds", anneal=AN)
    with pytest.raises(ValueError):
        sample(den, disc, 0, 2, cfg, sched, 4, dim=2)            # no negative
    with pytest.raises(ValueError):
        sample(den, disc, 0, 2, cfg, sched, 4, dim=2, neg_class=0)
    with pytest.raises(ValueError):
        sample(den, GuidancePolicy(kind="cfg"), 0, 2, cfg, sched, 4,
               dim=2, neg_class=1)
    with pytest.raises(ValueError):
        sample(den, GuidancePolicy(kind="cfg"), 0, 2, cfg, sched, 4)  # no dim
    cfg_real = SamplerConfig(num_steps=10, init="from_real")
    with pytest.raises(ValueError):
        sample(den, GuidancePolicy(kind="cfg"), 0, 2, cfg_real, sched, 4, dim=2)


def test_sample_empty_request(pair2, sched):
    out = sample(pair2.denoiser(), GuidancePolicy(kind="cfg"), 0, 2,
                 SamplerConfig(num_steps=5), sched, 0, dim=2)
    assert len(out) == 0 and out.dim == 2


def test_sample_provenance_columns(pair2, sched):
    pol = GuidancePolicy(kind="disc_ds", anneal=AN)
    out = sample(pair2.denoiser(), pol, 0, 2, SamplerConfig(num_steps=5), sched,
                 3, dim=2, neg_class=1, seed=123, policy_name="mypolicy")
    assert out.policy == ["mypolicy"] * 3
    assert np.all(out.neg_class == 1)
    assert np.all(out.seed == 123)
    assert np.all(out.labels == 0)


def test_sample_from_real_uses_rows(pair2, sched):
    den = pair2.denoiser()
    x0 = np.tile(np.array([[5.0, 5.0]]), (6, 1))
    cfg = SamplerConfig(num_steps=25, init="from_real", strength=0.2, master_seed=3)
    out = sample(den, GuidancePolicy(kind="cfg", w=1.0), 0, 2, cfg, sched, 6, x0=x0)
    # low strength keeps the output anchored near the (atypical) start rows
    assert np.linalg.norm(out.x.mean(0) - [5.0, 5.0]) < 2.5


def test_sample_moments_light(pair2, sched):
    # unguided sampling of a single-Gaussian class lands on its moments
    den = pair2.denoiser()
    cfg = SamplerConfig(num_steps=50, master_seed=9)
    out = sample(den, GuidancePolicy(kind="cfg", w=1.0), 0, 2, cfg, sched,
                 2000, dim=2)
    mean, cov = pair2.class_moments(0)
    assert np.linalg.norm(out.x.mean(0) - mean) < 0.1
    assert np.all(np.abs(np.sqrt(np.diag(np.cov(out.x.T))) - 1.0) < 0.08)


# ---- policy reduction identities (light versions; acceptance runs 3 worlds) ----

def _traj(world, policy, seed, sched, neg=None, stepper="ddim", n=8):
    cfg = SamplerConfig(num_steps=30, stepper=stepper, master_seed=seed)
    return sample(world.denoiser(), policy, 0, world.num_classes, cfg, sched, n,
                  dim=world.dim, neg_class=neg).x


def test_disc_alpha_one_equals_cads(ring3, sched):
    cads = GuidancePolicy(kind="cads", anneal=AN)
    disc = GuidancePolicy(kind="disc_ds", anneal=AN, alpha=1.0, tau_mode="dynamic")
    assert np.array_equal(_traj(ring3, cads, 21, sched),
                          _traj(ring3, disc, 21, sched, neg=1))


def test_disc_alpha_zero_equals_annealed_ccfg(ring3, sched):
    ccfg = GuidancePolicy(kind="ccfg", anneal=AN, tau=0.8, tau_mode="dynamic")
    disc = GuidancePolicy(kind="disc_ds", anneal=AN, alpha=0.0, tau=0.8,
                          tau_mode="dynamic")
    assert np.array_equal(_traj(ring3, ccfg, 22, sched, neg=1),
                          _traj(ring3, disc, 22, sched, neg=1))


def test_cfg_w1_equals_plain_conditional(pair2, sched):
    # independent conditional-only loop reimplementing the documented RNG keying
    n, steps, seed = 8, 30, 23
    out = _traj(pair2, GuidancePolicy(kind="cfg", w=1.0), seed, sched,
                stepper="ancestral", n=n)
    ts = inference_timesteps(sched, steps)
    gens = [np.random.default_rng((seed, i, 0)) for i in range(n)]
    x = np.stack([g.standard_normal(2) for g in gens])
    den = pair2.denoiser()
    y = np.zeros(2)
    y[0] = 1.0
    for step in range(steps):
        eps = den(x, int(ts[step]), sched, y)
        z = None
        if step < steps - 1:
            z = np.stack([g.standard_normal(2) for g in gens])
        x = reverse_step(x, eps, step, sched, steps, "ancestral", noise=z)
    assert np.array_equal(out, x)


def test_steppers_agree_on_means_light(unit_world, sched):
    den = unit_world.denoiser()
    outs = {}
    for stepper in ("ddim", "ancestral", "multistep2"):
        cfg = SamplerConfig(num_steps=50, stepper=stepper, master_seed=31)
        outs[stepper] = sample(den, GuidancePolicy(kind="cfg", w=1.0), 0, 1,
                               cfg, sched, 3000, dim=2).x
    se = 1.0 / np.sqrt(3000)
    for a in ("ancestral", "multistep2"):
        assert np.all(np.abs(outs["ddim"].mean(0) - outs[a].mean(0)) < 4 * se)
