from dataclasses import replace

import numpy as np
import pytest

from gpseg.assembly import (
    WeightedNormEvaluator,
    assemble,
    build_cutoff,
    compute_remainder,
    overlap_estimates,
    remainder_arrays,
    weighted_norm,
)
from gpseg.radial_core import GridFunction, loglog_slope, uniform_grid

from conftest import LADDER

R0 = 0.19178


def test_cutoff_edges_and_symmetry():
    c = build_cutoff(1e6, R0)
    assert c(R0) == 0.0
    assert c(1.0) == 1.0
    assert c(R0 + c.inner_edge) == 0.0 and c(R0 + c.outer_edge) == 1.0
    s = np.linspace(0.0, 1.2 * c.outer_edge, 301)
    assert np.allclose(c(R0 + s), c(R0 - s), rtol=0.0, atol=1e-9)
    z = c(np.linspace(0.0, 1.0, 20001))
    assert z.min() >= 0.0 and z.max() <= 1.0


def test_cutoff_derivatives_match_differences():
    c = build_cutoff(1e6, R0)
    r = R0 + np.linspace(-1.9, 1.9, 41) * c.inner_edge
    h = 1e-7
    z, dz, d2z = c.evaluate(r)
    fd1 = (c(r + h) - c(r - h)) / (2 * h)
    fd2 = (c(r + h) - 2 * z + c(r - h)) / h**2
    assert np.max(np.abs(fd1 - dz)) <= 1e-5 * np.max(np.abs(dz))
    assert np.max(np.abs(fd2 - d2z)) <= 1e-3 * np.max(np.abs(d2z))


def test_cutoff_constants_uniform_in_g():
    specs = [build_cutoff(g, R0) for g in (1e4, 1e6, 1e8)]
    for attr in ("C1", "C2"):
        vals = [getattr(s, attr) for s in specs]
        assert max(vals) / min(vals) <= 1.01


def test_cutoff_rejects_bad_input():
    with pytest.raises(ValueError, match="larger g"):
        build_cutoff(1e2, R0)
    with pytest.raises(ValueError, match="e\\^2"):
        build_cutoff(5.0, R0)


def test_gluing_identities(ladder):
    ap = ladder[1e6]
    p = ap.pieces
    inner = ap.zeta == 0.0
    outer = ap.zeta == 1.0
    assert inner.sum() > 100 and outer.sum() > 100
    assert np.array_equal(ap.u_ap.values[inner], p["u_in"][inner])
    assert np.array_equal(ap.v_ap.values[inner], p["v_in"][inner])
    assert np.array_equal(ap.u_ap.values[outer], p["u_out_nodal"][outer])
    assert np.array_equal(ap.v_ap.values[outer], p["v_out_nodal"][outer])
    # outer pieces vanish on the far side of the interface
    s = ap.grid.nodes - ap.r0
    assert np.all(ap.u_ap.values[outer & (s < 0)] == 0.0)
    assert np.all(ap.v_ap.values[outer & (s > 0)] == 0.0)


def test_glued_pair_is_continuous(ladder):
    ap = ladder[1e6]
    p = ap.pieces
    for a in ("u", "v"):
        y = getattr(ap, f"{a}_ap").values
        dy = p[f"d{a}_in"] + p["dzeta"] * (p[f"{a}_out"] - p[f"{a}_in"]) + ap.zeta * (
            p[f"d{a}_out"] - p[f"d{a}_in"]
        )
        h = np.diff(ap.grid.nodes)
        jump = np.abs(np.diff(y))
        bound = np.maximum(np.abs(dy[1:]), np.abs(dy[:-1])) * h
        assert np.all(jump <= 1.05 * bound + 1e-12)


def test_inner_piece_matches_ansatz(ladder, construction):
    ap = ladder[1e6]
    inn = ap.inner
    e = 1e6**-0.25
    r = ap.r0 + np.linspace(-0.5, 0.5, 11) * ap.cutoff.inner_edge
    t = inn.mu * (r - ap.r0 - inn.xi) / e
    c = inn.corrections
    expect = inn.mu * e * construction.profile.U(t) + e**2 * c.phi0(t) + e**3 * c.phi1(t)
    (u, du, _), _ = inn.evaluate(r)
    assert np.allclose(u, expect, rtol=1e-13, atol=1e-15)
    h = 1e-6
    fd = (inn.evaluate(r + h)[0][0] - inn.evaluate(r - h)[0][0]) / (2 * h)
    assert np.allclose(du, fd, rtol=1e-6)


def test_short_profile_span_is_rejected(ladder):
    ap = ladder[1e8]
    wide = replace(ap.cutoff, inner_edge=0.05, outer_edge=0.1)
    with pytest.raises(ValueError, match="T must be at least"):
        assemble(ap.outer, ap.inner, wide, ap.grid)


def test_overlap_gap_rate(ladder):
    gaps = [overlap_estimates(ladder[g]) for g in LADDER]
    slope = loglog_slope(LADDER, [o.u_gap for o in gaps], log_power=4)
    assert abs(slope + 1.0) <= 0.15
    assert all(o.u_gap <= 1e3 * abs(np.log(o.g)) ** 4 / o.g for o in gaps)


def test_remainder_vanishes_outside(ladder):
    for g in LADDER:
        rep = compute_remainder(ladder[g])
        fam = ladder[g].outer.family
        assert rep.zero_outside <= 10 * fam.absolute_tolerance


def test_remainder_inner_zone_within_polylog_bound(ladder):
    sups = np.array([compute_remainder(ladder[g]).sup_inner for g in LADDER])
    # R1 ~ g^(-1/2) |ln g|^p with 0 <= p <= 4
    L = np.log(LADDER)
    p = np.polyfit(np.log(L), np.log(sups * np.sqrt(LADDER)), 1)[0]
    assert 0.0 <= p <= 4.0


def test_remainder_second_component_exponential_tail(ladder):
    tails = [compute_remainder(ladder[g]).exp_tail_check for g in LADDER]
    assert max(tails) / min(tails) <= 2.0


def test_remainder_matches_difference_quotients(ladder):
    ap = ladder[1e6]
    R1, _ = remainder_arrays(ap)
    r = ap.grid.nodes
    idx = np.flatnonzero(ap.zeta == 0.0)[::200]
    h = 1e-5
    u = lambda x: ap.inner.evaluate(x)[0][0]
    v = lambda x: ap.inner.evaluate(x)[1][0]
    x = r[idx]
    d2 = (u(x + h) - 2 * u(x) + u(x - h)) / h**2
    d1 = (u(x + h) - u(x - h)) / (2 * h)
    ref = -d2 - 2.0 / x * d1 + ap.f.f(u(x)) + ap.g * v(x) ** 2 * u(x)
    scale = ap.g**0.25 * np.max(np.abs(u(x)))
    assert np.max(np.abs(ref - R1[idx])) <= 1e-3 * scale


def test_weighted_norm_constant_pair():
    g, r0 = 1e4, 0.3
    grid = uniform_grid(0.0, 1.0, 1000)
    one = GridFunction(grid, np.ones(grid.size))
    ev = WeightedNormEvaluator(g, r0)
    k = g**0.25
    # the first component carries e^{k|s|} on s < 0, the mirrored second on s > 0
    expect = np.exp(k * r0) + np.exp(k * (1.0 - r0))
    assert weighted_norm((one, one), 1, ev) == pytest.approx(expect, rel=1e-12)
    zero = GridFunction(grid, np.zeros(grid.size))
    for i in (0, 1, 2):
        assert weighted_norm((zero, zero), i, ev) == 0.0
    assert weighted_norm((one, zero), 0, ev) == pytest.approx(1 + (k * (1 - r0)) ** 1.5, rel=1e-12)
    # mirrored w2: polynomial for r < r0, exponential beyond
    assert weighted_norm((zero, one), 2, ev) == pytest.approx(np.exp(k * (1.0 - r0)), rel=1e-12)
    half = GridFunction(grid, np.where(grid.nodes <= r0, 1.0, 0.0))
    assert weighted_norm((zero, half), 2, ev) == pytest.approx(1 + (k * r0) ** 1.5, rel=1e-12)


def test_weighted_norm_guards():
    with pytest.raises(ValueError):
        WeightedNormEvaluator(1e4, 0.3, gamma=1.5)
    grid = uniform_grid(0.0, 1.0, 100)
    one = GridFunction(grid, np.ones(grid.size))
    with pytest.raises(OverflowError):
        weighted_norm((one, one), 1, WeightedNormEvaluator(1e16, 0.5))
