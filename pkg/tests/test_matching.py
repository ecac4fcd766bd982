import dataclasses

import numpy as np
import pytest

from gpseg.blowup import phi1_blocks
from gpseg.matching import (
    MatchingError,
    MatchingInputs,
    determinant_order2,
    determinant_order2_expansion,
    inputs_from,
    order1_closed_form,
    order1_system,
    solve_all,
    solve_order1,
    solve_order2,
    solve_order3,
    verify_s2_s3,
)

LADDER = np.array([1e4, 1e5, 1e6, 1e7, 1e8])


def _random_inputs(rng, g=1e6):
    psi0 = rng.uniform(1, 60)
    dim = int(rng.integers(2, 5))
    r0 = rng.uniform(0.1, 0.9)
    m, m2 = (dim - 1) / r0, (dim - 1) / r0**2
    fp, hp = rng.normal(size=2)
    u1p = rng.uniform(-10, 10)
    v1p = u1p - rng.choice([-1, 1]) * rng.uniform(1, 10)
    return MatchingInputs(
        psi0=psi0, k=rng.uniform(0.1, 5), b0=rng.uniform(-20, 20),
        u1p=u1p, u2p=rng.normal(), u3p=rng.normal(),
        v1p=v1p, v2p=rng.normal(), v3p=rng.normal(),
        u0pp=-m * psi0, v0pp=m * psi0,
        u0ppp=(m2 + m * m + fp) * psi0, v0ppp=-(m2 + m * m + hp) * psi0,
        f_prime0=fp, h_prime0=hp, r0=r0, dim=dim, g=g,
        a1=rng.normal(), b1=rng.normal(),
    )


@pytest.mark.parametrize("seed", range(10))
def test_order1_closed_forms(seed):
    inp = _random_inputs(np.random.default_rng(seed), g=10 ** np.random.default_rng(seed).uniform(4, 8))
    par = solve_order1(inp)
    cf = order1_closed_form(inp)
    for name, value in cf.items():
        assert getattr(par, name) == pytest.approx(value, rel=1e-12, abs=1e-300), name
    mat, rhs = order1_system(inp)
    x = [par.delta1, par.delta_tilde1, par.mu1, par.xi]
    np.testing.assert_allclose(mat @ x, rhs, atol=1e-14 * np.abs(rhs).max())


def test_homogeneous_inner_data_gives_zero():
    inp = dataclasses.replace(_random_inputs(np.random.default_rng(3)), k=0.0, b0=0.0, a1=0.0, b1=0.0)
    par = solve_all(inp)
    for name in ("xi", "mu1", "delta1", "delta_tilde1", "delta2", "delta_tilde2", "A0", "B0",
                 "delta3", "delta_tilde3", "A1", "B1"):
        assert getattr(par, name) == 0.0 or abs(getattr(par, name)) < 1e-300, name


def _slope(values):
    return np.polyfit(np.log(LADDER), np.log(np.abs(values)), 1)[0]


@pytest.mark.parametrize("seed", range(3))
def test_magnitude_laws_synthetic(seed):
    base = _random_inputs(np.random.default_rng(seed + 100))
    pars = [solve_all(base.at(g)) for g in LADDER]
    for names, expect in ((("xi", "mu1", "delta1", "delta_tilde1"), -0.25),
                          (("delta2", "delta_tilde2"), -0.5),
                          (("delta3", "delta_tilde3"), -0.75),
                          (("B0", "B1"), -0.25)):
        for name in names:
            assert _slope([getattr(p, name) for p in pars]) == pytest.approx(expect, abs=0.05), name
    # O(1) gauges: no trend over the top two decades
    for name in ("A0", "A1"):
        vals = np.abs([getattr(p, name) for p in pars[2:]])
        assert vals.max() / vals.min() <= 2.0, name


def test_determinant_matches_expansion_for_fixed_inner_slope():
    # with b1 independent of B0 the two-term expansion is the exact determinant
    inp = _random_inputs(np.random.default_rng(7))
    for g in LADDER:
        i = inp.at(g)
        det = determinant_order2(i, solve_order1(i))
        assert det == pytest.approx(determinant_order2_expansion(i), rel=1e-12)


def test_determinant_gap_decreases_default_problem(real_inputs):
    gaps = []
    for g in LADDER:
        i = real_inputs.at(g)
        ref = determinant_order2_expansion(i)
        gaps.append(abs(determinant_order2(i, solve_order1(i)) - ref) / abs(ref))
    assert np.all(np.diff(gaps) < 0)
    assert _slope(gaps) == pytest.approx(-0.25, abs=0.05)


def test_degenerate_gap_rejected_and_conditioning_monotone():
    inp = _random_inputs(np.random.default_rng(5))
    conds = []
    for shrink in (1.0, 1e-2, 1e-4):
        i = dataclasses.replace(inp, v1p=inp.u1p - shrink * (inp.u1p - inp.v1p))
        conds.append(solve_order1(i).cond[0])
    assert conds[0] < conds[1] < conds[2]
    with pytest.raises(MatchingError):
        solve_order1(dataclasses.replace(inp, v1p=inp.u1p))
    with pytest.raises(MatchingError):
        solve_order1(dataclasses.replace(inp, v1p=inp.u1p - 1e-11))


def test_inputs_validated():
    inp = _random_inputs(np.random.default_rng(1))
    with pytest.raises(ValueError):
        dataclasses.replace(inp, psi0=0.0)
    with pytest.raises(ValueError):
        dataclasses.replace(inp, g=1.0)


@pytest.fixture(scope="module")
def real_inputs(limit, expansion, inner_profile, phi0):
    blocks = phi1_blocks(inner_profile, phi0, limit.r0, limit.dim, limit.f.slope_at_zero, limit.h.slope_at_zero)
    return inputs_from(limit, expansion, inner_profile, phi0, 1e4, blocks=blocks)


def test_magnitude_laws_default_problem(real_inputs):
    pars = [solve_all(real_inputs.at(g)) for g in LADDER]
    assert _slope([p.xi for p in pars]) == pytest.approx(-0.25, abs=0.05)
    assert _slope([p.delta1 for p in pars]) == pytest.approx(-0.25, abs=0.05)
    assert _slope([p.delta2 for p in pars]) == pytest.approx(-0.5, abs=0.05)
    assert _slope([p.delta3 for p in pars]) == pytest.approx(-0.75, abs=0.05)
    assert _slope([p.delta_tilde3 for p in pars]) == pytest.approx(-0.75, abs=0.05)
    A1 = np.abs([p.A1 for p in pars])
    assert A1.max() / A1.min() <= 2.0
    assert max(max(p.cond) for p in pars) < 1e10


def test_s2_s3_gaps(real_inputs):
    s2, s3 = [], []
    for g in LADDER:
        inp = real_inputs.at(g)
        rep = verify_s2_s3(inp, solve_all(inp))
        s2.append(rep.s2_gap)
        s3.append(rep.s3_gap)
    assert _slope(s2) == pytest.approx(-0.5, abs=0.1)
    assert _slope(s3) == pytest.approx(-0.25, abs=0.1)


def test_third_derivative_identity(limit, expansion):
    # a least-squares polynomial over a short one-sided window stays clear of rounding
    grid = expansion.u[0].grid
    r, u, r0 = grid.nodes, expansion.u[0].values, limit.r0
    window = (r >= r0) & (r <= r0 + 0.02)
    poly = np.polynomial.Polynomial.fit(r[window] - r0, u[window], 6)
    assert poly.deriv(3)(0.0) == pytest.approx(expansion.boundary_data["u0ppp"], rel=1e-4)
    assert poly.deriv(2)(0.0) == pytest.approx(expansion.boundary_data["u0pp"], rel=1e-4)


def test_order_chain_consistent(real_inputs):
    o1 = solve_order1(real_inputs)
    o2 = solve_order2(real_inputs, o1)
    o3 = solve_order3(real_inputs, o2)
    assert o3.xi == o1.xi and o3.B0 == o2.B0
    assert o3.delta == pytest.approx(o3.delta1 + o3.delta2 + o3.delta3)
    assert o3.mu == 1.0 + o3.mu1
