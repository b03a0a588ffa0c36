import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from compact_maxwell.analytic import EigenmodeSolution, exact_tm_fields
from compact_maxwell.grid import DIRICHLET, build_tm_grid
from compact_maxwell.operators import lap_with_closure
from compact_maxwell.schemes import (
    CFL_DEFAULT,
    NC_PARAMS,
    ONE_SIDED,
    BlowupError,
    C4Stepper,
    ConfigurationError,
    EMStateTM,
    RunConfig,
    StencilParams,
    StepError,
    fourth_order_laplacian,
    init_half_step_H,
    initial_state,
    make_stepper,
    march,
    step_c4,
    step_explicit_stencil,
    step_yee2,
    stencil_diff,
    zero_state,
)

MODE = EigenmodeSolution(2, 2)


def eigen_state(N, r=CFL_DEFAULT, mode=MODE):
    g = build_tm_grid(N)
    return g, initial_state(g, r * g.h, mode)


def random_state(N, h_tau, seed=0, batch=()):
    g = build_tm_grid(N)
    rng = np.random.default_rng(seed)
    f = [rng.standard_normal(batch + g.shape(c)) for c in ("Ez", "Hx", "Hy")]
    f[0][..., 0, :] = f[0][..., -1, :] = f[0][..., :, 0] = f[0][..., :, -1] = 0
    f[1][..., 0, :] = f[1][..., -1, :] = 0
    f[2][..., :, 0] = f[2][..., :, -1] = 0
    lap = np.zeros(g.shape("Ez"))
    lap[1:-1, 1:-1] = lap_with_closure(f[0], g.h, (DIRICHLET, DIRICHLET)) if not batch else 0
    return g, EMStateTM(0, h_tau, *f, lap)


# --- stencil parameters -----------------------------------------------------

def test_nc_coefficients():
    p = NC_PARAMS
    assert (p.a, p.b) == (0.0, 0.0)
    assert math.isclose(p.c, 9 / 8) and math.isclose(p.d, -1 / 24)
    assert p.is_fourth_order()
    assert StencilParams().c == 1.0 and not StencilParams().is_fourth_order()


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1))
def test_second_order_row_by_construction(a, b, d):
    p = StencilParams(a, b, d)
    assert abs(p.consistency_residual) <= 1e-12


@given(st.floats(-0.5, 0.5))
def test_k4_family_is_fourth_order(a):
    assert StencilParams.k4(a).is_fourth_order(1e-12)


def test_one_sided_weights_exact_on_quartics():
    offs = np.array([-0.5, 0.5, 1.5, 2.5, 3.5])
    for k in range(5):
        exact = 1.0 if k == 1 else 0.0
        assert abs(ONE_SIDED @ offs**k - exact) < 1e-12


def test_nc_boundary_row_is_one_sided_difference():
    u = np.random.default_rng(3).normal(size=(12, 7))
    out = stencil_diff(u, NC_PARAMS, -2, 1.0)
    assert np.allclose(out[0], ONE_SIDED @ u[:5, 1:-1], atol=1e-13)
    assert np.allclose(out[-1], -ONE_SIDED @ u[::-1][:5, 1:-1], atol=1e-13)


@settings(max_examples=20, deadline=None)
@given(st.floats(-0.05, 0.05), st.floats(-0.05, 0.05), st.floats(-0.05, 0.05))
def test_stencil_linear_in_params(a, b, d):
    # no switch at b = d = 0: the derivative is affine in (a, b, d)
    u = np.random.default_rng(4).normal(size=(10, 9))
    p, q = StencilParams(a, b, d), StencilParams(2 * a, 2 * b, 2 * d)
    base = stencil_diff(u, StencilParams(), -2, 1.0)
    lhs = stencil_diff(u, q, -2, 1.0) - base
    rhs = 2 * (stencil_diff(u, p, -2, 1.0) - base)
    assert np.allclose(lhs, rhs, atol=1e-12)


@settings(max_examples=10, deadline=None)
@given(st.floats(-0.3, 0.3))
def test_stencil_fourth_order_on_smooth_field(a):
    p = StencilParams.k4(a)
    errs = []
    for N in (32, 64):
        g = build_tm_grid(N)
        X, Y = g.mesh("Ez")
        u = np.sin(2 * X) * np.cos(Y) + X**5
        out = stencil_diff(u, p, -2, g.h)
        xm = (np.arange(N) + 0.5) / N
        ym = np.arange(1, N) / N
        XM, YM = np.meshgrid(xm, ym, indexing="ij")
        exact = 2 * np.cos(2 * XM) * np.cos(YM) + 5 * XM**4
        errs.append(np.abs(out - exact).max())
    assert 13 < errs[0] / errs[1] < 19


def test_stencil_axis_symmetry():
    rng = np.random.default_rng(0)
    u = rng.standard_normal((9, 11))
    p = StencilParams(0.1, -0.02, -0.03)
    np.testing.assert_allclose(stencil_diff(u, p, -1, 0.1), stencil_diff(u.T, p, -2, 0.1).T)
    with pytest.raises(ValueError):
        stencil_diff(np.zeros((2, 5, 5)), p, 0, 0.1)


def test_wide_stencil_needs_room():
    g, s = random_state(4, 0.1)
    with pytest.raises(ConfigurationError):
        step_explicit_stencil(s, NC_PARAMS, g.h)
    step_yee2(s, g.h)


# --- half-step initialization -------------------------------------------------

def test_half_step_trivial_cases():
    g = build_tm_grid(8)
    derivs = MODE.h_time_derivatives(g)
    hx, hy = init_half_step_H(derivs, 0.0)
    np.testing.assert_array_equal(hx, derivs[0][0])
    zeros = [(np.zeros(g.shape("Hx")), np.zeros(g.shape("Hy")))] * 5
    hx, hy = init_half_step_H(zeros, 0.1)
    assert not hx.any() and not hy.any()
    with pytest.raises(ConfigurationError):
        init_half_step_H(derivs[:4], 0.1)
    with pytest.raises(ConfigurationError):
        init_half_step_H(None, 0.1)


def half_step_error(h_tau, N=32):
    g = build_tm_grid(N)
    hx, hy = init_half_step_H(MODE.h_time_derivatives(g), h_tau)
    _, ex, ey = exact_tm_fields(MODE, h_tau / 2, g)
    return max(np.abs(hx - ex).max(), np.abs(hy - ey).max())


def test_half_step_fifth_order():
    ratios = [half_step_error(ht) / half_step_error(ht / 2) for ht in (0.04, 0.02)]
    for q in ratios:
        assert abs(q - 32) <= 8


# --- C4 --------------------------------------------------------------------------

def test_c4_zero_state():
    g = build_tm_grid(16)
    s = zero_state(g, 0.5 * g.h)
    out = C4Stepper(g, s.h_tau).step(s)
    for f in out.fields + (out.lapEz,):
        assert not f.any()


def test_c4_boundary_zeros_every_step():
    g, s = eigen_state(32)
    stepper = C4Stepper(g, s.h_tau)

    def check(state):
        ez = state.Ez
        assert not ez[0].any() and not ez[-1].any() and not ez[:, 0].any() and not ez[:, -1].any()
        assert not state.lapEz[0].any() and not state.lapEz[:, -1].any()

    march(s, stepper, 40, check)


def c4_local_error(N, r=CFL_DEFAULT):
    g = build_tm_grid(N)
    ht = r * g.h
    ez, hx, hy = exact_tm_fields(MODE, 0.0, g, ht)
    s = EMStateTM(0, ht, ez, hx, hy, MODE.initial_laplacian_ez(g))
    s1 = C4Stepper(g, ht).step(s)
    exact = exact_tm_fields(MODE, ht, g, ht)
    return max(np.abs(a - b).max() for a, b in zip(s1.fields, exact))


def test_c4_local_error_fifth_order():
    e = [c4_local_error(N) for N in (32, 64, 128)]
    assert abs(e[1] / e[2] - 32) <= 8
    assert e[0] / e[1] > 20


def test_c4_carried_laplacian_consistency():
    for N in (32, 64):
        g, s0 = eigen_state(N)
        s = march(s0, C4Stepper(g, s0.h_tau), 30)
        drift = np.abs(s.lapEz[1:-1, 1:-1] - lap_with_closure(s.Ez, g.h, (DIRICHLET, DIRICHLET))).max()
        assert drift <= 400 * g.h**2 * np.abs(s0.Ez).max()


def test_c4_needs_carried_laplacian():
    g, s = eigen_state(16)
    s.lapEz = None
    with pytest.raises(ConfigurationError):
        C4Stepper(g, s.h_tau).step(s)


def test_c4_cg_failure_carries_step():
    g, s = eigen_state(32)
    stepper = C4Stepper(g, s.h_tau, tol=1e-16, max_iter=1)
    with pytest.raises(StepError) as info:
        march(s, stepper, 3)
    assert info.value.step == 0 and info.value.residual > 0


def test_step_c4_function_matches_stepper():
    cfg = RunConfig(N=16, scheme="c4")
    g, s = eigen_state(16, cfg.r)
    a = step_c4(s, cfg)
    b = C4Stepper(g, cfg.h_tau).step(s)
    for x, y in zip(a.fields, b.fields):
        np.testing.assert_allclose(x, y, rtol=0, atol=1e-14)


def test_c4_iteration_stats():
    g, s = eigen_state(32)
    stepper = C4Stepper(g, s.h_tau)
    assert stepper.mean_iterations() == 0.0
    march(s, stepper, 5)
    assert len(stepper.iterations) == 5 and all(len(t) == 3 for t in stepper.iterations)
    assert 0 < stepper.mean_iterations() <= 6


# --- linearity / zero data for every scheme -----------------------------------

SCHEMES = {
    "c4": lambda g, ht: C4Stepper(g, ht, tol=1e-13),
    "yee": lambda g, ht: (lambda s: step_yee2(s, g.h)),
    "nc": lambda g, ht: (lambda s: step_explicit_stencil(s, NC_PARAMS, g.h)),
    "k2": lambda g, ht: (lambda s: step_explicit_stencil(s, StencilParams(0.05, -0.01, -0.02), g.h)),
}


@pytest.mark.parametrize("name", list(SCHEMES))
def test_zero_data_stays_zero(name):
    g = build_tm_grid(12)
    s = zero_state(g, 0.5 * g.h)
    out = march(s, SCHEMES[name](g, s.h_tau), 10)
    assert all(not f.any() for f in out.fields)


@pytest.mark.parametrize("name", list(SCHEMES))
@settings(max_examples=5, deadline=None)
@given(alpha=st.floats(-100, 100).filter(lambda a: abs(a) > 1e-3))
def test_linearity(name, alpha):
    g, s = random_state(12, 0.04)
    step = SCHEMES[name](g, s.h_tau)
    a = step(s.scaled(alpha))
    step = SCHEMES[name](g, s.h_tau)
    b = step(s)
    for x, y in zip(a.fields, b.fields):
        np.testing.assert_allclose(x, alpha * y, rtol=1e-10, atol=1e-12 * abs(alpha) * np.abs(y).max())


# --- explicit schemes ----------------------------------------------------------

def test_k2_zero_params_bitwise_yee():
    g, s = eigen_state(32)
    a = b = s
    for _ in range(100):
        a = step_yee2(a, g.h)
        b = step_explicit_stencil(b, StencilParams(0.0, 0.0, 0.0), g.h)
    for x, y in zip(a.fields, b.fields):
        np.testing.assert_array_equal(x, y)


def test_steppers_accept_run_config():
    cfg = RunConfig(N=16, scheme="yee")
    g, s = eigen_state(16, cfg.r)
    for x, y in zip(step_yee2(s, cfg).fields, step_yee2(s, g.h).fields):
        np.testing.assert_array_equal(x, y)
    for x, y in zip(step_explicit_stencil(s, NC_PARAMS, cfg).fields,
                    step_explicit_stencil(s, NC_PARAMS, g.h).fields):
        np.testing.assert_array_equal(x, y)


def test_batched_stencil_step():
    g, s = random_state(10, 0.05, batch=(3,))
    out = step_explicit_stencil(s, NC_PARAMS, g.h)
    for k in range(3):
        single = EMStateTM(0, s.h_tau, s.Ez[k], s.Hx[k], s.Hy[k])
        ref = step_explicit_stencil(single, NC_PARAMS, g.h)
        for x, y in zip(out.fields, ref.fields):
            np.testing.assert_allclose(x[k], y, rtol=0, atol=1e-14 * np.abs(y).max())


def test_yee_bounded_1000_steps():
    g, s = eigen_state(32, r=0.65)
    peak = []
    march(s, lambda st: step_yee2(st, g.h), 1000, lambda st: peak.append(st.max_abs()))
    assert max(peak) <= 1.5 * peak[0]


def test_yee_reversible():
    g, s0 = eigen_state(24)
    s1 = step_yee2(s0, g.h)
    back = step_yee2(EMStateTM(0, s0.h_tau, s1.Ez, -s0.Hx, -s0.Hy), g.h)
    np.testing.assert_allclose(back.Ez, s0.Ez, atol=1e-14)


def _run_error(scheme, N, r=CFL_DEFAULT, T=1 / math.sqrt(2)):
    from compact_maxwell.harness import run_case
    return run_case(RunConfig(N=N, r=r, T=T, scheme=scheme)).error


def test_yee_second_order():
    q = math.log2(_run_error("yee", 32) / _run_error("yee", 64))
    assert abs(q - 2) <= 0.3


def test_c4_stability_dichotomy_small():
    g, s = eigen_state(32)
    end = march(s, C4Stepper(g, s.h_tau), 200)
    assert end.max_abs() <= 2 * s.max_abs()
    g, s = eigen_state(32, r=1 / math.sqrt(2))
    with pytest.raises(BlowupError):
        march(s, C4Stepper(g, s.h_tau), 2000)


# --- configuration ----------------------------------------------------------------

def test_run_config():
    cfg = RunConfig(N=64, r=CFL_DEFAULT, T=4 / math.sqrt(2))
    assert math.isclose(cfg.h_tau, CFL_DEFAULT / 64)
    assert cfg.n_steps == round(cfg.T / cfg.h_tau)
    with pytest.raises(ConfigurationError):
        RunConfig(r=0)
    with pytest.raises(ConfigurationError):
        RunConfig(scheme="rk4")
    with pytest.raises(ConfigurationError):
        RunConfig(scheme="ai").stencil()
    with pytest.raises(ConfigurationError):
        RunConfig(scheme="c4").stencil()
    assert isinstance(make_stepper(RunConfig(N=8, scheme="c4")), C4Stepper)


def test_fourth_order_laplacian_seed():
    errs = []
    for N in (16, 32, 64):
        g = build_tm_grid(N)
        X, Y = g.mesh("Ez")
        ez = MODE.ez(0.0, X, Y)
        errs.append(np.abs(fourth_order_laplacian(ez, g.h) - MODE.initial_laplacian_ez(g)).max())
    assert 13 < errs[0] / errs[1] < 19 and 13 < errs[1] / errs[2] < 19


def test_initial_state_from_raw_data():
    g = build_tm_grid(16)
    X, Y = g.mesh("Ez")
    ht = 0.5 * g.h
    s = initial_state(g, ht, Ez0=MODE.ez(0.0, X, Y), h_derivatives=MODE.h_time_derivatives(g))
    ref = initial_state(g, ht, MODE)
    np.testing.assert_allclose(s.Hx, ref.Hx)
    assert np.abs(s.lapEz - ref.lapEz).max() < 1e-2 * np.abs(ref.lapEz).max()
    with pytest.raises(ConfigurationError):
        initial_state(g, ht)


def test_march_blowup_detection():
    g, s = eigen_state(8)
    with pytest.raises(BlowupError) as info:
        march(s, lambda st: EMStateTM(st.n + 1, st.h_tau, *(10.0 * f for f in st.fields)), 20,
              blowup_factor=1e3)
    assert info.value.step == 4
    with pytest.raises(BlowupError):
        march(s, lambda st: st.scaled(float("nan")), 1)
