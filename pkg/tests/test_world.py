import numpy as np
import pytest
from scipy.stats import multivariate_normal

from discds.world import (Condition, GaussianMixtureWorld, MixtureComponent,
                          build_longtail, load_preset, preset_names)
from conftest import make_two_class

D_LOG2PI = 2 * 0.5 * np.log(2 * np.pi)


# ---- data sampling ---------------------------------------------------------

def test_sample_class_data_lln(unit_world):
    ss = unit_world.sample_class_data(0, 100_000, seed=3)
    assert np.all(np.abs(ss.x.mean(0)) < 0.02)
    assert np.all(ss.labels == 0)
    assert set(ss.origin) == {"real"}


def test_sample_class_data_empty(unit_world):
    assert len(unit_world.sample_class_data(0, 0, seed=1)) == 0


def test_sample_mixture_mean_cancels():
    w = GaussianMixtureWorld([[
        MixtureComponent(0.5, np.array([2.0, 0.0]), 0.1),
        MixtureComponent(0.5, np.array([-2.0, 0.0]), 0.1),
    ]])
    ss = w.sample_class_data(0, 10_000, seed=5)
    assert np.all(np.abs(ss.x.mean(0)) < 0.05)


def test_sample_class_data_validates(unit_world):
    with pytest.raises(ValueError):
        unit_world.sample_class_data(1, 5, seed=0)
    with pytest.raises(ValueError):
        unit_world.sample_class_data(0, -1, seed=0)


def test_sampling_deterministic(pair2):
    a = pair2.sample_class_data(1, 64, seed=(9, 2))
    b = pair2.sample_class_data(1, 64, seed=(9, 2))
    assert np.array_equal(a.x, b.x)


# ---- densities and the analytic denoiser ----------------------------------

def test_log_density_unit_gaussian_all_times(unit_world, sched):
    # variance ab*1 + (1-ab) = 1 at every t, so logp(0) = -(D/2) log(2 pi)
    for t in (0, 137, 500, 999):
        lp = unit_world.log_density_t(Condition.one_hot(0, 1), np.zeros(2), t, sched)
        assert lp == pytest.approx(-D_LOG2PI, abs=1e-12)


def test_log_density_pure_noise_limit(sched, overlap5):
    # at t = T-1 the signal fraction is ~4e-5, so the density is within
    # O(sqrt(ab)*|mu|*|x|) of a standard normal for any class
    x = np.array([0.4, -1.3])
    lp = overlap5.log_density_t(Condition.one_hot(3, 5), x, 999, sched)
    std_normal = -0.5 * (x @ x) - D_LOG2PI
    assert lp == pytest.approx(std_normal, abs=0.05)


def test_condition_softmax_saturates():
    w = make_two_class([-3.0, 0.0], [3.0, 0.0], kappa=200.0)
    from discds.schedule import make_schedule
    s = make_schedule(1000)
    x = np.array([0.5, 0.2])
    lp = w.log_density_t(Condition.one_hot(0, 2), x, 100, s)
    only0 = GaussianMixtureWorld([w.classes[0]])
    lp0 = only0.log_density_t(Condition.one_hot(0, 1), x, 100, s)
    assert lp == pytest.approx(lp0, abs=1e-9)


def test_condition_weights_shapes(overlap5):
    assert np.allclose(overlap5.condition_weights(None), overlap5.priors)
    assert np.allclose(overlap5.condition_weights(Condition.null()), overlap5.priors)
    rows = overlap5.condition_weights(np.random.default_rng(0).standard_normal((7, 5)))
    assert rows.shape == (7, 5)
    assert np.allclose(rows.sum(axis=1), 1.0)


def test_analytic_eps_unit_gaussian(unit_world, sched):
    x = np.array([0.7, -1.1])
    for t in (3, 400, 998):
        eps = unit_world.analytic_eps(Condition.one_hot(0, 1), x, t, sched)
        assert np.allclose(eps, np.sqrt(1 - sched.alpha_bar[t]) * x, atol=1e-12)


def test_analytic_eps_shifted_gaussian(sched):
    mu = np.array([1.4, -0.6])
    w = GaussianMixtureWorld([[MixtureComponent(1.0, mu, 1.0)]])
    x = np.array([0.2, 0.9])
    t = 250
    ab = sched.alpha_bar[t]
    eps = w.analytic_eps(Condition.one_hot(0, 1), x, t, sched)
    assert np.allclose(eps, np.sqrt(1 - ab) * (x - np.sqrt(ab) * mu), atol=1e-12)


def _fd_eps(world, cond, x, t, sched, h=1e-4):
    """Independent oracle: -sqrt(1-ab) * central-difference grad of log p_t."""
    g = np.zeros_like(x)
    for d in range(len(x)):
        e = np.zeros_like(x)
        e[d] = h
        g[d] = (world.log_density_t(cond, x + e, t, sched)
                - world.log_density_t(cond, x - e, t, sched)) / (2 * h)
    return -np.sqrt(1.0 - sched.alpha_bar[t]) * g


def test_analytic_eps_matches_finite_differences(sched):
    w = GaussianMixtureWorld([[
        MixtureComponent(0.6, np.array([1.0, -0.5]), 0.7),
        MixtureComponent(0.4, np.array([-1.2, 0.8]), 1.3),
    ]])
    rng = np.random.default_rng(11)
    for _ in range(20):
        x = rng.normal(scale=1.5, size=2)
        t = int(rng.integers(0, 1000))
        cond = Condition.one_hot(0, 1)
        a = w.analytic_eps(cond, x, t, sched)
        b = _fd_eps(w, cond, x, t, sched)
        assert np.linalg.norm(a - b) <= 1e-5 * np.linalg.norm(b)


# ---- oracle posterior ------------------------------------------------------

def test_oracle_posterior_dominance(overlap5):
    p = overlap5.oracle_posterior(np.array([-2.6, 1.2]))
    assert p[0] > 0.999


def test_oracle_posterior_symmetric_bisector():
    w = make_two_class([-0.9, 0.3], [0.9, -0.3])
    p = w.oracle_posterior(np.zeros(2))
    assert np.allclose(p, [0.5, 0.5], atol=1e-12)


def test_oracle_posterior_bayes_oracle():
    # independent Bayes evaluation through scipy on an overlapping point
    w = GaussianMixtureWorld(
        [[MixtureComponent(1.0, np.array([0.0, 0.0]), 1.0)],
         [MixtureComponent(0.5, np.array([1.0, 0.5]), 0.8),
          MixtureComponent(0.5, np.array([-0.5, 1.0]), 1.2)]],
        priors=np.array([0.3, 0.7]))
    x = np.array([0.4, 0.6])
    p0 = 0.3 * multivariate_normal.pdf(x, mean=[0, 0], cov=1.0)
    p1 = 0.7 * (0.5 * multivariate_normal.pdf(x, mean=[1.0, 0.5], cov=0.64)
                + 0.5 * multivariate_normal.pdf(x, mean=[-0.5, 1.0], cov=1.44))
    expected = np.array([p0, p1]) / (p0 + p1)
    assert np.allclose(w.oracle_posterior(x), expected, atol=1e-12)


def test_oracle_posterior_rows_normalized(overlap5):
    x = np.random.default_rng(2).normal(scale=3, size=(500, 2))
    p = overlap5.oracle_posterior(x)
    assert np.all(p >= 0)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-9)


# ---- long-tail profile ------------------------------------------------------

def test_build_longtail_balanced():
    assert np.array_equal(build_longtail(4, 50, 1.0), [50, 50, 50, 50])


def test_build_longtail_endpoints():
    assert np.array_equal(build_longtail(2, 100, 100.0), [100, 1])


def test_build_longtail_frozen_profile():
    # independent one-line evaluation: round(200 * 100 ** (-c/4))
    assert np.array_equal(build_longtail(5, 200, 100.0), [200, 63, 20, 6, 2])


def test_build_longtail_validates():
    with pytest.raises(ValueError):
        build_longtail(1, 10, 2.0)
    with pytest.raises(ValueError):
        build_longtail(5, 10, 0.5)
    with pytest.raises(ValueError):
        build_longtail(5, 0, 2.0)


# ---- presets and serialization ----------------------------------------------

def test_presets_available():
    names = preset_names()
    assert {"overlap5", "pair2", "ring3"} <= set(names)


def test_overlap5_preset_structure(overlap5):
    assert overlap5.num_classes == 5 and overlap5.dim == 2
    assert overlap5.overlap_pair == (3, 4)
    assert abs(overlap5.priors.sum() - 1) < 1e-9


def test_unknown_preset_rejected():
    with pytest.raises(ValueError):
        load_preset("nope_not_here")


def test_world_dict_roundtrip(overlap5):
    w2 = GaussianMixtureWorld.from_dict(overlap5.to_dict())
    assert w2.num_classes == overlap5.num_classes
    assert np.allclose(w2.priors, overlap5.priors)
    for a, b in zip(w2.classes, overlap5.classes):
        for ca, cb in zip(a, b):
            assert ca.weight == cb.weight and ca.sigma == cb.sigma
            assert np.array_equal(ca.mean, cb.mean)


def test_world_validation_rejects_bad_specs():
    with pytest.raises(ValueError):
        GaussianMixtureWorld([[MixtureComponent(0.7, np.zeros(2), 1.0)]])
    with pytest.raises(ValueError):
        GaussianMixtureWorld([[MixtureComponent(1.0, np.zeros(2), -1.0)]])
    with pytest.raises(ValueError):
        GaussianMixtureWorld(
            [[MixtureComponent(1.0, np.zeros(2), 1.0)]], priors=np.array([0.7]))


def test_class_moments_match_sampling(overlap5):
    mean, cov = overlap5.class_moments(3)
    ss = overlap5.sample_class_data(3, 50_000, seed=77)
    assert np.all(np.abs(ss.x.mean(0) - mean) < 0.02)
    assert np.all(np.abs(np.cov(ss.x.T) - cov) < 0.03)
