import dataclasses

import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from gpseg.nonlinearity import Nonlinearity
from gpseg.outer import (
    DegenerateInputError,
    compute_corrections,
    family_remainder,
    check_nondegeneracy,
    nondegeneracy_operators,
    smallest_singular_value,
    solve_limit_problem,
    solve_outer_family,
)
from gpseg.radial_core import interp_and_derivatives, uniform_grid

CUBIC = Nonlinearity.power(0.0, 1.0)
DELTAS = np.array([1e-1, 3e-2, 1e-2, 3e-3, 1e-3])


def _oracle(dim=3):
    """Independent shooting: LSODA from a series start, root search on w(0)."""

    def end_value(c, dense=False):
        r1 = 1e-5
        y0 = [c - c**3 * r1**2 / (2 * dim), -(c**3) * r1 / dim]
        rhs = lambda r, y: [y[1], -y[0] ** 3 - (dim - 1) / r * y[1]]
        return solve_ivp(rhs, (r1, 1.0), y0, method="LSODA", rtol=1e-12, atol=1e-13, dense_output=dense)

    cs = -np.linspace(1.0, 80.0, 400)
    ends = [end_value(c).y[0, -1] for c in cs]
    r = np.linspace(1e-5, 0.999, 4001)
    for c0, c1, e0, e1 in zip(cs[:-1], cs[1:], ends[:-1], ends[1:]):
        if np.sign(e0) == np.sign(e1):
            continue
        c = brentq(lambda c: end_value(c).y[0, -1], c0, c1, xtol=1e-13)
        sol = end_value(c, True)
        w = sol.sol(r)[0]
        crossings = np.nonzero(np.diff(np.sign(w)))[0]
        if crossings.size == 1:
            break
    i = int(crossings[0])
    r0 = brentq(lambda x: sol.sol(x)[0], r[i], r[i + 1], xtol=1e-15)
    return c, r0, sol.sol(r0)[1]


def test_limit_matches_shooting_oracle(limit):
    c, r0, psi0 = _oracle()
    assert limit.r0 == pytest.approx(r0, rel=1e-6)
    assert limit.center_value == pytest.approx(c, rel=1e-6)
    assert limit.psi0 == pytest.approx(psi0, rel=1e-6)


def test_sign_convention(limit):
    x, w = limit.grid.nodes, limit.w.values
    h = np.gradient(x)
    far = np.abs(x - limit.r0) > 2 * h
    far[-1] = False
    assert np.all((x[far] - limit.r0) * w[far] > 0)
    assert w[-1] == 0.0
    assert limit.slope_gap < 1e-6


def test_reduced_form_identical(limit):
    red = solve_limit_problem(CUBIC, CUBIC, 3, grid=limit.grid, reduced=True)
    assert np.max(np.abs(red.w.values - limit.w.values)) < 1e-9 * np.max(np.abs(limit.w.values))


def test_reflection_law(limit, expansion):
    bd = expansion.boundary_data
    assert bd["u0p"] == pytest.approx(limit.psi0, rel=1e-6)
    assert -bd["v0p"] == pytest.approx(limit.psi0, rel=1e-6)
    assert expansion.u[0].values[0] == 0.0 and expansion.v[0].values[-1] == 0.0


def test_nondegeneracy(limit, expansion):
    rep = check_nondegeneracy(limit, expansion)
    assert rep.sigma_min_w > 0 and rep.sigma_min_u0 > 0 and rep.sigma_min_v0 > 0
    assert rep.slope_gap == pytest.approx(expansion.boundary_data["u1p"] - expansion.boundary_data["v1p"])


def test_symmetrized_slope_gap_flagged(limit, expansion):
    bd = dict(expansion.boundary_data)
    bd["v1p"] = bd["u1p"]
    fake = dataclasses.replace(expansion, boundary_data=bd)
    with pytest.raises(DegenerateInputError) as exc:
        check_nondegeneracy(limit, fake)
    assert exc.value.condition == "slope_gap"


def test_sigma_min_against_dense_svd():
    grid = uniform_grid(0.0, 1.0, 200, dim=3)
    coarse = solve_limit_problem(CUBIC, CUBIC, 3, grid=grid, slope_tol=1e-1)
    exp = compute_corrections(coarse)
    for name, (mat, _) in nondegeneracy_operators(coarse, exp).items():
        dense = np.linalg.svd(mat.toarray(), compute_uv=False).min()
        assert smallest_singular_value(mat) == pytest.approx(dense, rel=1e-8), name


def test_corrections_boundary_values(expansion):
    u, v = expansion.u, expansion.v
    assert u[1].values[0] == 1.0 and u[1].values[-1] == 0.0
    assert v[1].values[-1] == 1.0
    for j in (2, 3):
        assert u[j].values[0] == 0.0 and u[j].values[-1] == 0.0
        assert v[j].values[-1] == 0.0
    assert expansion.slope_gap != 0.0


def test_curvature_identity(limit, expansion):
    bd = expansion.boundary_data
    m = limit.dim - 1
    ident = -m / limit.r0 * bd["u0p"]
    assert bd["u0pp"] == pytest.approx(ident, rel=1e-14)
    # a coarser grid keeps the one-sided second difference clear of rounding
    coarse = solve_limit_problem(CUBIC, CUBIC, 3, base_count=5000)
    ce = compute_corrections(coarse)
    cb = ce.boundary_data
    r0 = coarse.r0
    assert interp_and_derivatives(ce.u[0], r0, 2) == pytest.approx(cb["u0pp"], rel=1e-3)
    assert interp_and_derivatives(ce.v[0], r0, 2) == pytest.approx(cb["v0pp"], rel=1e-3)
    assert interp_and_derivatives(ce.u[1], r0, 2) == pytest.approx(cb["u1pp"], rel=1e-2)
    assert cb["u0pp"] == pytest.approx(bd["u0pp"], rel=1e-5)


def test_family_base_case(limit, expansion):
    fam = solve_outer_family(limit, 0.0, 0.0, expansion)
    assert np.max(np.abs(fam.u.values - expansion.u[0].values)) < 1e-9
    assert np.max(np.abs(fam.v.values - expansion.v[0].values)) < 1e-9


def _slope(errs):
    return np.polyfit(np.log(DELTAS), np.log(errs), 1)[0]


def test_family_expansion_orders(limit, expansion):
    for order in (1, 2, 3):
        eu, ev = [], []
        for d in DELTAS:
            ru, rv = family_remainder(limit, expansion, d, d, order)
            eu.append(np.max(np.abs(ru.values)))
            ev.append(np.max(np.abs(rv.values)))
        assert _slope(eu) >= order + 0.7
        assert _slope(ev) >= order + 0.7
    assert _slope(eu) >= 3.7


@pytest.mark.parametrize("d", [1e-1, 3e-2])
def test_remainder_agrees_with_direct_family(limit, expansion, d):
    fam = solve_outer_family(limit, d, d, expansion)
    assert fam.u.values[0] == d and fam.v.values[-1] == d
    assert fam.u_positive and fam.v_positive
    for order in (1, 3):
        ru, rv = family_remainder(limit, expansion, d, d, order)
        tu = sum(d**i * expansion.u[i].values for i in range(order + 1))
        tv = sum(d**i * expansion.v[i].values for i in range(order + 1))
        # direct subtraction is accurate only down to about 1e-10
        assert np.max(np.abs(fam.u.values - tu - ru.values)) < 1e-9 + 1e-3 * np.max(np.abs(ru.values))
        assert np.max(np.abs(fam.v.values - tv - rv.values)) < 1e-9 + 1e-3 * np.max(np.abs(rv.values))


def test_family_rejects_large_delta(limit, expansion):
    with pytest.raises(ValueError):
        solve_outer_family(limit, 0.2 * limit.psi0, 0.0, expansion)


def test_annulus_pipeline():
    sol = solve_limit_problem(CUBIC, CUBIC, 3, inner_radius=0.3, base_count=4000)
    assert 0.3 < sol.r0 < 1.0
    assert sol.w.values[0] == 0.0 and sol.w.values[-1] == 0.0
    exp = compute_corrections(sol)
    check_nondegeneracy(sol, exp)
    assert exp.v[1].values[0] == 0.0


def test_bracket_without_sign_change_rejected():
    with pytest.raises(ValueError):
        solve_limit_problem(CUBIC, CUBIC, 3, bracket=(-1e-3, -2e-3))
    # a positive-definite f has no nodal solution to shoot for
    with pytest.raises(ValueError):
        solve_limit_problem(Nonlinearity.cubic(1.0, 1.0), Nonlinearity.cubic(1.0, 1.0), 3)
