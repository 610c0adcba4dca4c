"""Schedule construction and the deterministic steppers."""
import math

import numpy as np
import pytest

from hybridpar.errors import (NumericError, ParameterError, ShapeError,
                              StepUnderflowError)
from hybridpar.schedules import (GuidanceParams, LatentState, NoiseSchedule,
                                 build_schedule, cfg_combine, ddim_step,
                                 ddpm_posterior_mean, fm_euler_step)

# independently recomputed in a scratch script as a plain cumulative product
SCALED_LINEAR_AB50 = 0.763763285673763


def test_build_linear_constant_betas():
    sched = build_schedule("linear", 2, 0.5, 0.5)
    assert np.allclose(sched.alpha_bars, [0.5, 0.25])
    assert sched.alpha_bar(0) == 1.0
    assert sched.sigma(0) == 0.0


def test_build_linear_monotone_endpoints():
    sched = build_schedule("linear", 50, 1e-4, 2e-2)
    assert sched.alpha_bar(50) < sched.alpha_bar(1) < 1.0


def test_build_scaled_linear_product_oracle():
    sched = build_schedule("scaled-linear", 50, 0.00085, 0.012)
    assert math.isclose(sched.alpha_bar(50), SCALED_LINEAR_AB50, rel_tol=1e-12)


def test_schedule_monotonicity_random_params():
    # betas kept small enough that alpha_bar never underflows and sigma
    # never saturates at 1.0, so both orderings stay strict
    rng = np.random.default_rng(0)
    for _ in range(50):
        b0 = float(rng.uniform(1e-5, 0.05))
        b1 = float(rng.uniform(b0, 0.1))
        T = int(rng.integers(2, 100))
        kind = "linear" if rng.integers(2) else "scaled-linear"
        sched = build_schedule(kind, T, b0, b1)
        assert np.all(np.diff(sched.alpha_bars) < 0)
        assert np.all(np.diff(sched.sigmas) > 0)
        assert np.all((sched.betas > 0) & (sched.betas < 1))


@pytest.mark.parametrize("kind,T,b0,b1", [
    ("cosine", 10, 0.1, 0.2),      # unknown kind
    ("linear", 0, 0.1, 0.2),       # T below 1
    ("linear", 10, 0.0, 0.2),      # beta_start at 0
    ("linear", 10, 0.1, 1.0),      # beta_end at 1
    ("linear", 10, 0.3, 0.2),      # start above end
])
def test_build_schedule_rejects(kind, T, b0, b1):
    with pytest.raises(ParameterError):
        build_schedule(kind, T, b0, b1)


def test_schedule_arrays_are_frozen():
    sched = build_schedule("linear", 5, 0.1, 0.2)
    with pytest.raises(ValueError):
        sched.betas[0] = 0.5


def test_guidance_params_range():
    assert GuidanceParams(0.0).w == 0.0
    with pytest.raises(ParameterError):
        GuidanceParams(-1.0)
    with pytest.raises(ParameterError):
        GuidanceParams(float("nan"))


def test_latent_state_rejects_negative_t():
    with pytest.raises(ParameterError):
        LatentState(np.zeros(3), -1)


# cfg_combine ---------------------------------------------------------------

def test_cfg_combine_zero_guidance():
    eps_c, eps_u = np.array([1.0, 2.0]), np.array([3.0, 4.0])
    assert np.array_equal(cfg_combine(eps_c, eps_u, GuidanceParams(0.0)), eps_c)


def test_cfg_combine_identical_branches():
    eps = np.array([1.0, -2.0, 0.5])
    assert np.array_equal(cfg_combine(eps, eps, GuidanceParams(7.5)), eps)


def test_cfg_combine_hand_value():
    out = cfg_combine(np.array([2.0]), np.array([1.0]), GuidanceParams(3.0))
    assert np.array_equal(out, [5.0])


def test_cfg_combine_is_affine():
    rng = np.random.default_rng(1)
    for _ in range(25):
        eps_c = rng.standard_normal(6)
        eps_u = rng.standard_normal(6)
        a = float(rng.uniform(0.1, 5.0))
        g = GuidanceParams(float(rng.uniform(0, 10)))
        lhs = cfg_combine(a * eps_c, a * eps_u, g)
        rhs = a * cfg_combine(eps_c, eps_u, g)
        assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


def test_cfg_combine_shape_mismatch():
    with pytest.raises(ShapeError):
        cfg_combine(np.zeros(3), np.zeros(4), GuidanceParams(1.0))


# ddpm_posterior_mean -------------------------------------------------------

def test_ddpm_mean_zero_noise():
    sched = build_schedule("linear", 3, 0.1, 0.3)
    x = np.array([2.0, -1.0])
    out = ddpm_posterior_mean(x, 2, np.zeros(2), sched)
    assert np.allclose(out, x / np.sqrt(sched.alpha(2)))


def test_ddpm_mean_hand_value():
    # betas chosen so t=2 carries beta=0.1 with alpha_bar exactly 0.5;
    # mu = (1 - 0.1/sqrt(0.5)) / sqrt(0.9), substituted by hand
    betas = np.array([4.0 / 9.0, 0.1])
    alphas = 1.0 - betas
    ab = np.cumprod(alphas)
    sched = NoiseSchedule("linear", 2, float(betas[0]), float(betas[1]),
                          betas, alphas, ab, np.sqrt(1.0 - ab))
    out = ddpm_posterior_mean(np.array([1.0]), 2, np.array([1.0]), sched)
    assert math.isclose(out[0], 0.9050213548894739, rel_tol=1e-12)


def test_ddpm_mean_underflow():
    sched = build_schedule("linear", 3, 0.1, 0.3)
    with pytest.raises(StepUnderflowError):
        ddpm_posterior_mean(np.zeros(2), 0, np.zeros(2), sched)


# ddim_step ------------------------------------------------------------------

def test_ddim_round_trip_identity():
    """Noising x0 to t and stepping with the exact noise lands on the t-1
    interpolant of the same (x0, eps) pair."""
    sched = build_schedule("linear", 20, 0.01, 0.2)
    rng = np.random.default_rng(2)
    x0 = rng.standard_normal((3, 5))
    eps = rng.standard_normal((3, 5))
    for t in (1, 7, 20):
        x_t = np.sqrt(sched.alpha_bar(t)) * x0 + sched.sigma(t) * eps
        out = ddim_step(LatentState(x_t, t), eps, sched)
        expect = np.sqrt(sched.alpha_bar(t - 1)) * x0 + sched.sigma(t - 1) * eps
        assert out.t == t - 1
        assert np.allclose(out.x, expect, rtol=1e-10, atol=1e-12)


def test_ddim_final_step_returns_x0_hat():
    sched = build_schedule("linear", 4, 0.05, 0.1)
    rng = np.random.default_rng(3)
    x0 = rng.standard_normal(6)
    eps = rng.standard_normal(6)
    x1 = np.sqrt(sched.alpha_bar(1)) * x0 + sched.sigma(1) * eps
    out = ddim_step(LatentState(x1, 1), eps, sched)
    assert np.allclose(out.x, x0, rtol=1e-10, atol=1e-12)


def test_ddim_deterministic():
    sched = build_schedule("linear", 10, 0.02, 0.1)
    x = np.linspace(-1, 1, 8)
    eps = np.cos(x)
    a = ddim_step(LatentState(x, 5), eps, sched)
    b = ddim_step(LatentState(x, 5), eps, sched)
    assert np.array_equal(a.x, b.x)


def test_ddim_rejects_nonfinite():
    sched = build_schedule("linear", 10, 0.02, 0.1)
    bad = np.array([1.0, float("inf")])
    with pytest.raises(NumericError):
        ddim_step(LatentState(bad, 5), np.zeros(2), sched)


def test_ddim_underflow():
    sched = build_schedule("linear", 10, 0.02, 0.1)
    with pytest.raises(StepUnderflowError):
        ddim_step(LatentState(np.zeros(2), 0), np.zeros(2), sched)


# fm_euler_step ---------------------------------------------------------------

def test_fm_euler_zero_velocity():
    x = np.array([1.0, 2.0])
    assert np.array_equal(fm_euler_step(x, 0.5, np.zeros(2), 0.25), x)


def test_fm_euler_hand_value():
    out = fm_euler_step(np.array([1.0]), 1.0, np.array([2.0]), 0.5)
    assert np.array_equal(out, [0.0])


def test_fm_euler_rejects_bad_steps():
    x = np.zeros(2)
    with pytest.raises(ParameterError):
        fm_euler_step(x, 1.5, x, 0.1)
    with pytest.raises(ParameterError):
        fm_euler_step(x, 0.5, x, 0.0)
    with pytest.raises(StepUnderflowError):
        fm_euler_step(x, 0.1, x, 0.2)
