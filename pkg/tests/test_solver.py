from types import SimpleNamespace

import numpy as np
import pytest

from gpseg.nonlinearity import Nonlinearity
from gpseg.radial_core import GridFunction, check_jacobian, uniform_grid
from gpseg.solver import (
    NEWTON_TOL,
    LinearizedOperator,
    PositivityError,
    RateFitError,
    discrete_system,
    fit_rate,
    interface_position,
    linear_probe,
    linearized_apply,
    linearized_solve,
    newton_full,
    nonlinear_residual_N,
    pack,
    picard_solve,
    picard_step,
    probe_generator,
    random_bumps,
    refine_tail,
    second_order_increment,
)

from conftest import LADDER


def smooth_pair(ap, seed=0):
    rng = np.random.default_rng(seed)
    t = ap.inner.t(ap.grid.nodes)
    r = ap.grid.nodes
    a, b = rng.standard_normal(2)
    phi = a * np.exp(-t**2) + np.sin(np.pi * r) * (1 - r)
    psi = b * np.exp(-((t - 0.5) ** 2)) + np.cos(np.pi * r / 2) * (1 - r)
    phi[-1] = psi[-1] = 0.0
    return phi, psi


def test_apply_solve_round_trip(ladder):
    ap = ladder[1e6]
    phi, psi = smooth_pair(ap)
    F, H = linearized_apply(ap, (phi, psi))
    p2, q2 = linearized_solve(ap, F, H)
    scale = max(np.max(np.abs(phi)), np.max(np.abs(psi)))
    assert np.max(np.abs(p2.values - phi)) <= 1e-10 * scale
    assert np.max(np.abs(q2.values - psi)) <= 1e-10 * scale


def test_zero_data_gives_zero(ladder):
    ap = ladder[1e6]
    z = np.zeros(ap.grid.size)
    phi, psi = linearized_solve(ap, z, z)
    assert np.all(phi.values == 0.0) and np.all(psi.values == 0.0)


def test_apply_matches_jacobian(ladder):
    ap = ladder[1e5]
    sysm = discrete_system(ap)
    phi, psi = smooth_pair(ap, 3)
    F, H = linearized_apply(ap, (phi, psi))
    J = sysm.jacobian(pack(ap.u_ap.values, ap.v_ap.values))
    # compare against the size of the terms that cancel in each row
    scale = abs(J) @ np.abs(pack(phi, psi))
    assert np.all(np.abs(pack(F.values, H.values) - J @ pack(phi, psi)) <= 1e-13 * scale)


@pytest.mark.parametrize("g", LADDER)
def test_jacobian_matches_differences(ladder, g):
    ap = ladder[g]
    sysm = discrete_system(ap)
    x = pack(ap.u_ap.values, ap.v_ap.values)
    assert check_jacobian(sysm.residual, sysm.jacobian, x, directions=10) <= 1e-6


def test_second_order_increment_matches_direct():
    rng = np.random.default_rng(1)
    u, e = rng.standard_normal(50), 0.1 * rng.standard_normal(50)
    for nl in (Nonlinearity.power(0.5, 1.0), Nonlinearity.power(-1.0, 2.0), Nonlinearity.cubic(2.0, -3.0)):
        direct = nl.f(u + e) - nl.f(u) - nl.df(u) * e
        assert np.allclose(second_order_increment(nl, u, e), direct, rtol=1e-9, atol=1e-13)


def test_quadratic_part_vanishes_at_zero(ladder):
    ap = ladder[1e6]
    z = np.zeros(ap.grid.size)
    n1, n2 = nonlinear_residual_N(ap, (z, z))
    assert np.all(n1 == 0.0) and np.all(n2 == 0.0)


def test_quadratic_part_with_linear_f_and_no_v():
    grid = uniform_grid(0.0, 1.0, 50)
    rng = np.random.default_rng(2)
    u = rng.random(grid.size)
    g = 1e4
    fake = SimpleNamespace(
        u_ap=GridFunction(grid, u),
        v_ap=GridFunction(grid, np.zeros(grid.size)),
        g=g,
        f=Nonlinearity.cubic(0.0, 2.0),
        h=Nonlinearity.cubic(0.0, 2.0),
    )
    phi, psi = rng.standard_normal((2, grid.size))
    n1, _ = nonlinear_residual_N(fake, (phi, psi))
    assert np.allclose(n1, g * u * psi**2 + g * psi**2 * phi, rtol=1e-14)


def test_quadratic_smallness(ladder):
    ap = ladder[1e6]
    phi, psi = smooth_pair(ap, 5)
    ratios = []
    for eps in (1e-2, 1e-3, 1e-4):
        n1, n2 = nonlinear_residual_N(ap, (eps * phi, eps * psi))
        ratios.append(max(np.max(np.abs(n1)), np.max(np.abs(n2))) / eps**2)
    assert max(ratios) / min(ratios) <= 1.1


def test_newton_converges_fast_at_1e6(solutions):
    sol = solutions[1e6]
    assert sol.report.iterations <= 6
    assert sol.relative_residual <= NEWTON_TOL
    assert sol.report.converged


def test_picard_fixed_point_and_agreement(solutions):
    sol = solutions[1e6]
    ap = sol.approximation
    op = LinearizedOperator(ap)
    phi, psi = picard_step(ap, (sol.phi, sol.psi), op)
    peak = max(np.max(sol.u.values), np.max(sol.v.values))
    tol = NEWTON_TOL * peak
    assert np.max(np.abs(phi - sol.phi)) <= 10 * tol
    assert np.max(np.abs(psi - sol.psi)) <= 10 * tol
    pphi, ppsi, history = picard_solve(ap)
    assert history[-1] < history[0]
    assert np.max(np.abs(ap.u_ap.values + pphi - sol.u.values)) <= 10 * tol
    assert np.max(np.abs(ap.v_ap.values + ppsi - sol.v.values)) <= 10 * tol


def test_positive_on_ladder(solutions):
    for g, sol in solutions.items():
        d = sol.diagnostics
        assert d["positive"], g
        assert np.all(sol.u.values[:-1] >= 0.0) and np.all(sol.v.values[:-1] >= 0.0)
        assert np.isfinite(d["min_log10_u"]) and np.isfinite(d["min_log10_v"])


def test_tail_logs_match_newton_values(solutions):
    sol = solutions[1e4]
    for tail in sol.tails:
        y = (sol.u if tail.component == "u" else sol.v).values
        ok = y[tail.nodes] > 1e-250
        assert ok.sum() > 10
        assert np.allclose(tail.log_values[ok], np.log(y[tail.nodes][ok]), rtol=0.0, atol=1e-9)
        # the tail decays away from its anchor
        assert np.all(np.diff(tail.log_values) > 0.0)


def test_tail_refinement_rejects_negative_anchor(solutions):
    sol = solutions[1e6]
    sysm = discrete_system(sol.approximation)
    u = sol.u.values.copy()
    i = int(np.flatnonzero(u >= 1e-8 * u.max())[0])
    u[i] = -u[i]
    with pytest.raises(PositivityError):
        refine_tail(sysm, u, sol.v.values, "u")


def test_newton_from_neighbour_seed(solutions, ladder):
    prev = solutions[1e6]
    sol = newton_full(ladder[1e7], seed=(prev.u.values, prev.v.values))
    assert np.max(np.abs(sol.u.values - solutions[1e7].u.values)) <= 1e-7


def test_interface_tracks_matching_shift(solutions):
    offs = [solutions[g].diagnostics["interface_offset"] for g in LADDER]
    fit = fit_rate("interface", LADDER, offs, -0.5, 0.1)
    assert fit.fitted_slope <= -0.4
    sol = solutions[1e6]
    r = interface_position(sol)
    assert abs(r - sol.approximation.r0) < sol.approximation.cutoff.inner_edge


def test_fit_rate_guards():
    with pytest.raises(RateFitError):
        fit_rate("x", [1e4, 1e5, 1e6], [1.0, 0.5, 0.25], -0.25, 0.05)
    with pytest.raises(RateFitError):
        fit_rate("x", [1e4, 1e4, 1e5, 1e6], [1.0, 0.9, 0.5, 0.25], -0.25, 0.05)
    with pytest.raises(RateFitError, match="extend"):
        fit_rate("x", [1e4, 1e5, 1e6, 1e7], [1.0, 1e-3, 1.0, 1e-3], -0.25, 0.05)
    rep = fit_rate("x", [1e4, 1e5, 1e6, 1e7], [1e-1, 10**-1.25, 10**-1.5, 10**-1.75], -0.25, 0.05)
    assert rep.passed and rep.fitted_slope == pytest.approx(-0.25, abs=1e-12)


def test_probe_is_deterministic(ladder):
    a = linear_probe(ladder[1e5], samples=4, seed=7)
    b = linear_probe(ladder[1e5], samples=4, seed=7)
    assert np.array_equal(a, b)
    assert np.all(a > 0.0)


def _philox_block(counter, key):
    # reference Philox4x64-10, written out from the published round function
    mask = (1 << 64) - 1
    x, k = [counter, 0, 0, 0], [key, 0]
    for r in range(10):
        if r:
            k = [(k[0] + 0x9E3779B97F4A7C15) & mask, (k[1] + 0xBB67AE8584CAA73B) & mask]
        p0, p1 = 0xD2E7470EE14C6C93 * x[0], 0xCA5A826395121157 * x[2]
        x = [(p1 >> 64) ^ x[1] ^ k[0], p1 & mask, (p0 >> 64) ^ x[3] ^ k[1], p0 & mask]
    return x


def test_probe_generator_matches_reference_stream():
    assert _philox_block(0, 0) == [0x16554D9ECA36314C, 0xDB20FE9D672D0FDC, 0xD7E772CEE186176B, 0x7E68B68AEC7BA23B]
    seed = 12345
    words = [w for c in (1, 2, 3) for w in _philox_block(c, seed)]
    doubles = [(w >> 11) * 2.0**-53 for w in words]
    rng = probe_generator(seed)
    assert rng.random(12).tolist() == doubles
    t = np.linspace(-3, 3, 7)
    bumps = random_bumps(probe_generator(seed), t, count=3)
    c = [-1 + 2 * u for u in doubles[0:3]]
    w = [0.3 + 0.2 * u for u in doubles[3:6]]
    a = [np.sqrt(-2 * np.log(1 - doubles[6 + 2 * i])) * np.cos(2 * np.pi * doubles[7 + 2 * i]) for i in range(3)]
    expect = sum(a[i] * np.exp(-(((t - c[i]) / w[i]) ** 2)) for i in range(3))
    assert np.allclose(bumps, expect, rtol=1e-14, atol=1e-300)
