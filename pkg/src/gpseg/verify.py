"""Measurements behind the twelve acceptance checks.

Each ``check_*`` function computes the measured quantities from the named
operations and compares them with the stated thresholds. The CLI ``verify``
subcommand and the acceptance suite both call these.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assembly import ApproximateSolution, ConstructionData, compute_remainder, overlap_estimates
from .blowup import BlowupProfile, rescale_profile, solve_linearized_growth, solve_profile
from .matching import MatchingInputs, inputs_from, order1_closed_form, solve_all, solve_order1
from .outer import NodalSolution, OuterExpansion, family_remainder
from .radial_core import loglog_slope
from .solver import NEWTON_TOL, GPSolution, interior_mask, linear_probe, verify_rates

DELTAS = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3)


@dataclass(frozen=True)
class CriterionResult:
    number: int
    name: str
    passed: bool
    summary: str
    source: str
    values: dict = field(default_factory=dict)

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} [{self.number:2d}] {self.name}: {self.summary}"

    def to_dict(self) -> dict:
        return {
            "number": self.number,
            "name": self.name,
            "passed": self.passed,
            "summary": self.summary,
            "source": self.source,
            "values": self.values,
        }


def _slope(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(np.abs(y)), 1)[0])


# ---------------------------------------------------------------------------
# g-independent pieces


def check_profile(T: float = 8.0, n_nodes: int = 4001) -> CriterionResult:
    """Symmetry defect, sign of ``k`` and its stability under (2T, halved spacing)."""
    base = solve_profile(1.0, T, n_nodes)
    fine = solve_profile(1.0, 2 * T, 4 * (n_nodes - 1) + 1)
    drift = abs(fine.k - base.k) / abs(base.k)
    defect = max(base.symmetry_defect, fine.symmetry_defect)
    ok = defect <= 1e-8 and base.k > 0 and drift <= 1e-7
    return CriterionResult(
        1, "profile symmetry and phase", ok,
        f"defect {defect:.2e}, k {base.k:.12f}, relative drift {drift:.2e}",
        "blowup.solve_profile",
        {"symmetry_defect": defect, "k": base.k, "k_refined": fine.k, "k_drift": drift},
    )


def check_scaling(psi0: float = 2.0) -> CriterionResult:
    """``profile(psi0)`` against ``mu U1(mu t)`` with ``mu = sqrt(psi0)``."""
    base = solve_profile(1.0, 16.0, 16001)
    p = solve_profile(psi0, 8.0, 8001)
    u, v = rescale_profile(base, p.t, np.sqrt(psi0))
    gap = float(max(np.max(np.abs(p.U.y - u)), np.max(np.abs(p.V.y - v))))
    return CriterionResult(
        2, "scaling covariance", gap <= 1e-6, f"sup gap {gap:.2e} at psi0 = {psi0:g}",
        "blowup.rescale_profile", {"psi0": psi0, "sup_gap": gap},
    )


def decaying_pair(rng: np.random.Generator, t: np.ndarray, bumps: int = 3) -> tuple[np.ndarray, np.ndarray]:
    H = np.zeros_like(t)
    Ht = np.zeros_like(t)
    for _ in range(bumps):
        c, w = rng.uniform(-1, 1, 2), rng.uniform(3.0, 6.0, 2)
        amp = rng.standard_normal(2)
        H += amp[0] * np.exp(-w[0] * (t - c[0]) ** 2)
        Ht += amp[1] * np.exp(-w[1] * (t - c[1]) ** 2)
    return H, Ht


def check_growth(profile: BlowupProfile | None = None, samples: int = 5, seed: int = 0) -> CriterionResult:
    """Fitted ``b`` and ``a+ + a-`` against their integral formulas."""
    p = profile if profile is not None else solve_profile(1.0, 8.0, 4001)
    rng = np.random.Generator(np.random.Philox(seed))
    gap_b, gap_a = [], []
    for _ in range(samples):
        sol = solve_linearized_growth(p, *decaying_pair(rng, p.t))
        gap_b.append(abs(sol.b - sol.b_integral))
        gap_a.append(abs(sol.a_plus + sol.a_minus - sol.sum_integral))
    worst_b, worst_a = float(max(gap_b)), float(max(gap_a))
    return CriterionResult(
        3, "growth-coefficient formulas", worst_b <= 1e-6 and worst_a <= 1e-6,
        f"max |b gap| {worst_b:.2e}, max |a+ + a- gap| {worst_a:.2e} over {samples} pairs",
        "blowup.solve_linearized_growth", {"b_gaps": gap_b, "sum_gaps": gap_a},
    )


def check_outer_order(limit: NodalSolution, expansion: OuterExpansion, deltas=DELTAS) -> CriterionResult:
    """Slope of the third-order remainder of the outer family in ``delta``."""
    eu, ev = [], []
    for d in deltas:
        ru, rv = family_remainder(limit, expansion, d, d, 3)
        eu.append(float(np.max(np.abs(ru.values))))
        ev.append(float(np.max(np.abs(rv.values))))
    su, sv = _slope(deltas, eu), _slope(deltas, ev)
    return CriterionResult(
        4, "outer expansion order", min(su, sv) >= 3.7, f"slopes {su:.3f} (u), {sv:.3f} (v)",
        "outer.family_remainder",
        {"deltas": list(deltas), "u_errors": eu, "v_errors": ev, "u_slope": su, "v_slope": sv},
    )


def random_matching_inputs(rng: np.random.Generator) -> MatchingInputs:
    """Admissible synthetic inputs: consistent curvature data and a slope gap of at least 1."""
    psi0 = rng.uniform(1, 60)
    dim = int(rng.integers(2, 5))
    r0 = rng.uniform(0.1, 0.9)
    m, m2 = (dim - 1) / r0, (dim - 1) / r0**2
    fp, hp = rng.standard_normal(2)
    u1p = rng.uniform(-10, 10)
    v1p = u1p - rng.choice([-1, 1]) * rng.uniform(1, 10)
    return MatchingInputs(
        psi0=psi0, k=rng.uniform(0.1, 5), b0=rng.uniform(-20, 20),
        u1p=u1p, u2p=rng.standard_normal(), u3p=rng.standard_normal(),
        v1p=v1p, v2p=rng.standard_normal(), v3p=rng.standard_normal(),
        u0pp=-m * psi0, v0pp=m * psi0,
        u0ppp=(m2 + m * m + fp) * psi0, v0ppp=-(m2 + m * m + hp) * psi0,
        f_prime0=fp, h_prime0=hp, r0=r0, dim=dim, g=10 ** rng.uniform(4, 8),
        a1=rng.standard_normal(), b1=rng.standard_normal(),
    )


def check_closed_forms(samples: int = 10, seed: int = 0) -> CriterionResult:
    rng = np.random.Generator(np.random.Philox(seed))
    worst = 0.0
    for _ in range(samples):
        inp = random_matching_inputs(rng)
        par = solve_order1(inp)
        for name, value in order1_closed_form(inp).items():
            got = getattr(par, name)
            worst = max(worst, abs(got - value) / max(abs(value), 1e-300))
    return CriterionResult(
        5, "order-1 matching closed forms", worst <= 1e-12,
        f"max relative gap {worst:.2e} over {samples} inputs",
        "matching.solve_order1", {"max_relative_gap": worst},
    )


MAGNITUDE_TARGETS = {"delta1": -0.25, "delta2": -0.5, "delta3": -0.75}


def check_magnitude_laws(data: ConstructionData, g_list) -> CriterionResult:
    lim = data.limit
    base = inputs_from(lim, data.expansion, data.profile, data.phi0, float(g_list[0]), blocks=data.blocks)
    pars = [solve_all(base.at(float(g))) for g in g_list]
    slopes = {name: _slope(g_list, [getattr(p, name) for p in pars]) for name in MAGNITUDE_TARGETS}
    ok = all(abs(slopes[n] - t) <= 0.05 for n, t in MAGNITUDE_TARGETS.items())
    text = ", ".join(f"{n} {s:.3f}" for n, s in slopes.items())
    return CriterionResult(
        6, "matching magnitude laws", ok, text, "matching.solve_all",
        {"slopes": slopes, "targets": dict(MAGNITUDE_TARGETS)},
    )


# ---------------------------------------------------------------------------
# ladder checks


def check_overlap(approx: dict[float, ApproximateSolution]) -> CriterionResult:
    gs = sorted(approx)
    gaps = [overlap_estimates(approx[g]).u_gap for g in gs]
    slope = loglog_slope(gs, gaps, log_power=4)
    return CriterionResult(
        7, "overlap estimate", abs(slope + 1.0) <= 0.15,
        f"slope {slope:.3f} after dividing by |ln g|^4", "assembly.overlap_estimates",
        {"g": gs, "u_gap": gaps, "slope": slope},
    )


def check_remainder(approx: dict[float, ApproximateSolution]) -> CriterionResult:
    gs = sorted(approx)
    reps = [compute_remainder(approx[g]) for g in gs]
    sups = [r.sup_inner for r in reps]
    slope = loglog_slope(gs, sups, log_power=4)
    outside = [r.zero_outside / r.outer_tolerance for r in reps]
    ok = abs(slope + 0.5) <= 0.1 and max(outside) <= 10.0
    return CriterionResult(
        8, "remainder scaling", ok,
        f"slope {slope:.3f} after dividing by |ln g|^4, outside ratio {max(outside):.2f}",
        "assembly.compute_remainder",
        {"g": gs, "sup_inner": sups, "slope": slope, "outside_over_tolerance": outside},
    )


def check_newton(solutions: dict[float, GPSolution]) -> CriterionResult:
    iters, resid, positive = [], [], []
    for g in sorted(solutions):
        sol = solutions[g]
        ap = sol.approximation
        inner = interior_mask(ap.grid, ap.grid.a == 0.0)
        iters.append(sol.report.iterations)
        resid.append(sol.relative_residual)
        positive.append(bool(sol.diagnostics["positive"]) and bool(
            np.all(sol.u.values[inner] >= 0.0) and np.all(sol.v.values[inner] >= 0.0)
        ))
    ok = max(iters) <= 6 and max(resid) <= NEWTON_TOL and all(positive)
    return CriterionResult(
        9, "Newton convergence", ok,
        f"max iterations {max(iters)}, max relative residual {max(resid):.2e}, positive {all(positive)}",
        "solver.newton_full",
        {"iterations": iters, "relative_residual": resid, "positive": positive},
    )


def check_rates(solutions: dict[float, GPSolution]) -> tuple[CriterionResult, CriterionResult, dict]:
    rates = verify_rates(solutions)
    keys = ("u_vs_w_plus", "v_vs_w_minus", "inner_profile")
    c10 = CriterionResult(
        10, "solution rates", all(rates[k].passed for k in keys),
        ", ".join(f"{k} {rates[k].fitted_slope:.3f}" for k in keys), "solver.verify_rates",
        {k: rates[k].to_dict() for k in keys},
    )
    r = rates["correction_norm1"]
    c11 = CriterionResult(
        11, "final correction norm", r.passed, f"slope {r.fitted_slope:.3f}", "solver.verify_rates",
        {"correction_norm1": r.to_dict()},
    )
    return c10, c11, rates


def check_probe(
    approx: dict[float, ApproximateSolution], samples: int = 20, seed: int = 0, gamma: float = 0.5
) -> CriterionResult:
    gs = sorted(approx)
    worst = [float(np.max(linear_probe(approx[g], samples, seed, gamma))) for g in gs]
    growth = worst[-1] / worst[0]
    return CriterionResult(
        12, "linear a-priori probe", growth <= 2.0,
        f"max ratio {worst[0]:.3f} -> {worst[-1]:.3f} ({growth:.2f}x)", "solver.linear_probe",
        {"g": gs, "max_ratio": worst, "growth": growth, "samples": samples, "seed": seed},
    )
