import numpy as np
import pytest

from discds.schedule import (forward_diffuse, inference_timesteps,
                             make_schedule, normalized_time)

# independent cumulative-product script, run before the build
ALPHA_BAR_999 = 4.035829765375676e-05


def test_default_schedule_endpoints(sched):
    assert sched.alpha_bar[0] == pytest.approx(0.9999, abs=1e-12)
    assert sched.alpha_bar[999] == pytest.approx(ALPHA_BAR_999, rel=1e-12)


def test_constant_beta_cumulative_product():
    s = make_schedule(2, 0.5, 0.5)
    assert np.allclose(s.alpha_bar, [0.5, 0.25])


def test_alpha_bar_matches_cumprod_and_decreases():
    rng = np.random.default_rng(0)
    for _ in range(25):
        t = int(rng.integers(2, 400))
        bmin = float(rng.uniform(1e-5, 0.05))
        bmax = float(rng.uniform(bmin, 0.2))
        s = make_schedule(t, bmin, bmax)
        ref = np.cumprod(1.0 - s.beta)
        assert np.all(np.abs(s.alpha_bar / ref - 1.0) < 1e-12)
        assert np.all(np.diff(s.alpha_bar) < 0)
        assert s.alpha_bar[-1] > 0


@pytest.mark.parametrize("kwargs", [
    dict(num_train_steps=1),
    dict(num_train_steps=100, beta_min=0.0),
    dict(num_train_steps=100, beta_min=0.3, beta_max=0.2),
    dict(num_train_steps=100, beta_min=1e-4, beta_max=1.0),
])
def test_make_schedule_rejects_bad_params(kwargs):
    with pytest.raises(ValueError):
        make_schedule(**kwargs)


def test_normalized_time_grid_endpoints(sched):
    assert normalized_time(sched, 0, 50) == pytest.approx(0.999)
    assert normalized_time(sched, 49, 50) == 0.0
    # two-point grid lands on the extreme train timesteps
    assert normalized_time(sched, 0, 2) == pytest.approx(999 / 1000)
    assert normalized_time(sched, 1, 2) == 0.0


def test_normalized_time_rejects_out_of_range(sched):
    with pytest.raises(ValueError):
        normalized_time(sched, 50, 50)
    with pytest.raises(ValueError):
        normalized_time(sched, -1, 50)


def test_inference_grid_spans_train_steps(sched):
    ts = inference_timesteps(sched, 50)
    assert ts[0] == 999 and ts[-1] == 0
    assert np.all(np.diff(ts) < 0)
    full = inference_timesteps(sched, 1000)
    assert np.array_equal(full, np.arange(999, -1, -1))
    with pytest.raises(ValueError):
        inference_timesteps(sched, 1001)


def test_forward_diffuse_exact_value():
    s = make_schedule(2, 0.5, 0.5)          # alpha_bar[1] = 0.25
    xt = forward_diffuse(np.array([1.0, 0.0]), 1, np.array([0.0, 1.0]), s)
    assert np.allclose(xt, [0.5, np.sqrt(0.75)], atol=1e-15)


def test_forward_diffuse_limits(sched):
    x0 = np.array([2.0, -1.0])
    eps = np.array([0.3, 0.7])
    # near-clean start: recovers x0 up to the tiny first-step noise
    assert np.allclose(forward_diffuse(x0, 0, eps, sched), x0, atol=0.05)
    # near-pure-noise end
    assert np.allclose(forward_diffuse(x0, 999, eps, sched), eps, atol=0.05)


def test_forward_diffuse_validates(sched):
    with pytest.raises(ValueError):
        forward_diffuse(np.zeros(2), 0, np.zeros(3), sched)
    with pytest.raises(ValueError):
        forward_diffuse(np.zeros(2), 1000, np.zeros(2), sched)


def test_forward_marginal_moments(sched):
    rng = np.random.default_rng(7)
    x0 = np.array([1.5, -0.5])
    t = 600
    n = 100_000
    eps = rng.standard_normal((n, 2))
    xt = forward_diffuse(np.tile(x0, (n, 1)), t, eps, sched)
    ab = sched.alpha_bar[t]
    sd = np.sqrt(1.0 - ab)
    assert np.all(np.abs(xt.mean(0) - np.sqrt(ab) * x0) < 3.0 * sd / np.sqrt(n))
    assert np.all(np.abs(xt.var(0) / (1.0 - ab) - 1.0) < 0.05)
