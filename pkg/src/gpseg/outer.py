"""Nodal limit profile, its non-degeneracy, and the outer family with its Taylor corrections."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .nonlinearity import Nonlinearity
from .radial_core import (
    GridFunction,
    NewtonReport,
    RadialGrid,
    RefinementZone,
    build_grid,
    insert_node,
    interp_and_derivatives,
    interpolate,
    laplacian_matrix,
    newton_solve,
    solve_banded,
    stencil_scale,
    subgrid,
)

log = logging.getLogger(__name__)


class DegenerateInputError(ValueError):
    """A non-degeneracy gate failed; ``condition`` names which one."""

    def __init__(self, condition: str, message: str):
        super().__init__(f"{condition}: {message}")
        self.condition = condition


# ---------------------------------------------------------------------------
# limit problem


def _limit_rhs(f: Nonlinearity, h: Nonlinearity, reduced: bool):
    """``F`` and ``F'`` in ``Delta w = F(w)``."""
    if reduced:
        return f.f, f.df

    def F(w):
        w = np.asarray(w, dtype=float)
        return np.where(w > 0.0, f.f(np.maximum(w, 0.0)), -h.f(np.maximum(-w, 0.0)))

    def dF(w):
        w = np.asarray(w, dtype=float)
        return np.where(w > 0.0, f.df(np.maximum(w, 0.0)), h.df(np.maximum(-w, 0.0)))

    return F, dF


@dataclass(frozen=True, eq=False)
class NodalSolution:
    w: GridFunction
    r0: float
    psi0: float
    f: Nonlinearity
    h: Nonlinearity
    dim: int
    inner_radius: float = 0.0
    slope_left: float = float("nan")
    slope_right: float = float("nan")
    shooting_parameter: float = float("nan")
    report: NewtonReport | None = None

    @property
    def grid(self) -> RadialGrid:
        return self.w.grid

    @property
    def slope_gap(self) -> float:
        return abs(self.slope_left - self.slope_right) / self.psi0

    @property
    def center_value(self) -> float:
        return float(self.w.values[0])


def _shoot(F, dim: int, a: float, c: float, dense: bool = False):
    """Integrate the radial ODE from the left end.

    For a ball ``c`` is ``w(0)``; for an annulus it is ``w'(a)`` with ``w(a) = 0``.
    """
    def rhs(r, y):
        return [y[1], float(F(y[0])) - (dim - 1) / r * y[1]]

    if a == 0.0:
        r_start = 1e-6
        fc = float(F(c))
        y0 = [c + fc * r_start**2 / (2 * dim), fc * r_start / dim]
    else:
        r_start = a
        y0 = [0.0, c]
    scale = max(abs(c), 1.0)
    return solve_ivp(
        rhs, (r_start, 1.0), y0, method="DOP853", rtol=1e-12, atol=1e-14 * scale,
        dense_output=dense,
    )


def _interior_sign_changes(sol) -> int:
    r = np.linspace(sol.t[0], 1.0, 4001)[1:-1]
    w = sol.sol(r)[0] if sol.sol is not None else np.interp(r, sol.t, sol.y[0])
    s = np.sign(w)
    s = s[s != 0]
    return int(np.count_nonzero(s[1:] != s[:-1]))


def shooting_bracket(F, dim: int, a: float, search=(1e-2, 1e3), samples: int = 240):
    """Bracket of the shooting parameter yielding exactly one interior sign change."""
    mags = np.geomspace(search[0], search[1], samples)
    prev = None
    for m in mags:
        sol = _shoot(F, dim, a, -m, dense=True)
        if sol.status != 0:
            continue
        end = sol.y[0, -1]
        changes = _interior_sign_changes(sol)
        if prev is not None:
            pm, pend, pchanges = prev
            if pchanges == 1 and np.sign(pend) != np.sign(end) and pend != 0.0:
                return -pm, -m
        if changes > 2:
            break
        prev = (m, end, changes)
    raise ValueError("no sign change found: shooting scan did not bracket a one-node solution")


def _limit_residual(grid: RadialGrid, F, dF):
    lap = laplacian_matrix(grid)
    ball = grid.a == 0.0

    def residual(w):
        out = lap @ w - F(w)
        if not ball:
            out[0] = w[0]
        out[-1] = w[-1]
        return out

    def jacobian(w):
        jac = (lap - sp.diags(dF(w))).tolil()
        if not ball:
            jac[0, :] = 0.0
            jac[0, 0] = 1.0
        jac[-1, :] = 0.0
        jac[-1, -1] = 1.0
        return jac.tocsr()

    return residual, jacobian


def _quartic(nodes: np.ndarray, values: np.ndarray) -> np.polynomial.Polynomial:
    return np.polynomial.Polynomial.fit(nodes, values, 4)


def locate_interface(w: GridFunction) -> tuple[float, float, float]:
    """Interface radius and the two one-sided slopes of ``w`` there."""
    x, v = w.grid.nodes, w.values
    s = np.sign(v[1:-1])
    idx = np.nonzero((s[:-1] < 0) & (s[1:] > 0))[0]
    if idx.size == 0:
        raise ValueError("no sign change found in the limit solution")
    i = int(idx[0]) + 1
    lo = max(i - 2, 0)
    p = _quartic(x[lo:lo + 5], v[lo:lo + 5])
    r0 = brentq(p, x[i], x[i + 1], xtol=1e-16, rtol=1e-15)
    left = slice(max(i - 4, 0), i + 1)
    right = slice(i + 1, i + 6)
    pl = _quartic(x[left], v[left]).deriv()
    pr = _quartic(x[right], v[right]).deriv()
    return float(r0), float(pl(r0)), float(pr(r0))


def solve_limit_problem(
    f: Nonlinearity,
    h: Nonlinearity,
    dim: int = 3,
    inner_radius: float = 0.0,
    grid: RadialGrid | None = None,
    base_count: int = 20000,
    bracket: tuple[float, float] | None = None,
    reduced: bool = False,
    tol: float = 1e-10,
    slope_tol: float = 1e-6,
    layer_halfwidth: float = 0.05,
    layer_refinement: int = 8,
) -> NodalSolution:
    """Nodal solution of ``Delta w = f(w+) - h(-w-)`` with one sign change.

    Shooting locates the branch; Newton on the finite-difference problem
    polishes it on ``grid`` (by default a grid refined around the interface).
    """
    if abs(float(f.f(0.0))) > 0.0 or abs(float(h.f(0.0))) > 0.0:
        raise ValueError("nonlinearities must vanish at zero")
    a = float(inner_radius)
    if not 0.0 <= a < 1.0:
        raise ValueError("inner radius must lie in [0, 1)")
    F, dF = _limit_rhs(f, h, reduced)
    if bracket is None:
        bracket = shooting_bracket(F, dim, a)
    c = brentq(lambda c: _shoot(F, dim, a, c).y[0, -1], *bracket, xtol=1e-14, rtol=1e-14)
    shot = _shoot(F, dim, a, c, dense=True)
    if _interior_sign_changes(shot) != 1:
        raise ValueError("more than one sign change in the shooting solution")

    if grid is None:
        r_est = brentq(lambda r: shot.sol(r)[0], *_sign_change_interval(shot))
        h_base = (1.0 - a) / base_count
        hw = min(layer_halfwidth, 0.5 * (r_est - a), 0.5 * (1.0 - r_est))
        zones = [RefinementZone(r_est, hw, h_base / layer_refinement)]
        grid = build_grid(a, 1.0, base_count, zones, dim)
    if grid.a != a or grid.b != 1.0 or grid.dim != dim:
        raise ValueError("grid does not match the domain")

    x = grid.nodes
    seed = shot.sol(np.maximum(x, shot.t[0]))[0]
    seed[-1] = 0.0
    if a > 0.0:
        seed[0] = 0.0
    residual, jacobian = _limit_residual(grid, F, dF)
    scale = stencil_scale(laplacian_matrix(grid), seed, F(seed))
    w, report = newton_solve(residual, jacobian, seed, tol=tol, scale=scale, polish=2)
    w[-1] = 0.0
    if a > 0.0:
        w[0] = 0.0
    wf = GridFunction(grid, w)
    s = np.sign(w[1:-1])
    s = s[s != 0]
    if np.count_nonzero(s[1:] != s[:-1]) != 1:
        raise ValueError("more than one sign change in the discrete limit solution")
    r0, sl, sr = locate_interface(wf)
    psi0 = 0.5 * (sl + sr)
    if psi0 < 1e-8:
        raise ValueError(f"degenerate interface: slope {psi0:.3e} below 1e-8")
    if abs(sl - sr) > slope_tol * psi0:
        raise ValueError(
            f"one-sided interface slopes disagree: {sl:.12g} vs {sr:.12g}; refine the grid"
        )
    return NodalSolution(
        w=wf, r0=r0, psi0=psi0, f=f, h=h, dim=dim, inner_radius=a,
        slope_left=sl, slope_right=sr, shooting_parameter=c, report=report,
    )


def _sign_change_interval(shot) -> tuple[float, float]:
    r = np.linspace(shot.t[0], 1.0, 4001)
    w = shot.sol(r)[0]
    i = int(np.nonzero(np.sign(w[:-1]) != np.sign(w[1:]))[0][0])
    return float(r[i]), float(r[i + 1])


# ---------------------------------------------------------------------------
# outer family and corrections


def split_at_interface(grid: RadialGrid, r0: float) -> tuple[RadialGrid, RadialGrid]:
    """Grids on ``[r0, 1]`` and ``[a, r0]`` sharing the node ``r0``."""
    full = insert_node(grid, r0)
    return subgrid(full, r0, full.b), subgrid(full, full.a, r0)


def _operator(grid: RadialGrid, diag: np.ndarray) -> sp.csr_matrix:
    """``Delta - diag`` with identity rows at Dirichlet ends (regularity kept at 0)."""
    mat = (laplacian_matrix(grid) - sp.diags(diag)).tolil()
    if grid.a != 0.0:
        mat[0, :] = 0.0
        mat[0, 0] = 1.0
    mat[-1, :] = 0.0
    mat[-1, -1] = 1.0
    return mat.tocsr()


def _solve_branch(
    grid: RadialGrid,
    nl: Nonlinearity,
    seed: np.ndarray,
    edge_value: float,
    edge: str,
    tol: float,
    polish: int,
) -> tuple[np.ndarray, NewtonReport]:
    """Newton for ``Delta u = nl(u)`` with ``u = edge_value`` at the interface end.

    ``edge`` is ``"left"`` for the ``u`` branch on ``[r0, 1]`` and ``"right"``
    for the ``v`` branch on ``[a, r0]``.
    """
    lap = laplacian_matrix(grid)
    ball = grid.a == 0.0

    def residual(u):
        out = lap @ u - nl.f(u)
        if edge == "left":
            out[0] = u[0] - edge_value
            out[-1] = u[-1]
        else:
            if not ball:
                out[0] = u[0]
            out[-1] = u[-1] - edge_value
        return out

    def jacobian(u):
        return _operator(grid, nl.df(u))

    scale = stencil_scale(lap, seed, nl.f(seed))
    u, report = newton_solve(residual, jacobian, seed, tol=tol, scale=scale, polish=polish)
    # Dirichlet rows are identities; pin them against pivoting roundoff
    if edge == "left":
        u[0], u[-1] = edge_value, 0.0
    else:
        u[-1] = edge_value
        if not ball:
            u[0] = 0.0
    return u, report


@dataclass(frozen=True, eq=False)
class OuterExpansion:
    u: tuple[GridFunction, ...]
    v: tuple[GridFunction, ...]
    boundary_data: dict
    r0: float
    psi0: float

    @property
    def u_grid(self) -> RadialGrid:
        return self.u[0].grid

    @property
    def v_grid(self) -> RadialGrid:
        return self.v[0].grid

    @property
    def slope_gap(self) -> float:
        return self.boundary_data["u1p"] - self.boundary_data["v1p"]


def compute_corrections(
    sol: NodalSolution, grid: RadialGrid | None = None, tol: float = 1e-10
) -> OuterExpansion:
    """Base branches ``u0, v0`` and the Taylor corrections of the outer family.

    All pieces are exact Taylor coefficients of the discrete family on the
    given grid, so the discrete expansion error is genuinely fourth order.
    """
    grid = sol.grid if grid is None else grid
    ug, vg = split_at_interface(grid, sol.r0)
    w = sol.w
    seed_u = np.maximum(interpolate(w.grid.nodes, w.values, ug.nodes), 0.0)
    seed_v = np.maximum(-interpolate(w.grid.nodes, w.values, vg.nodes), 0.0)
    seed_u[0] = seed_u[-1] = 0.0
    seed_v[-1] = 0.0
    if vg.a != 0.0:
        seed_v[0] = 0.0
    u0, _ = _solve_branch(ug, sol.f, seed_u, 0.0, "left", tol, 2)
    v0, _ = _solve_branch(vg, sol.h, seed_v, 0.0, "right", tol, 2)

    us = _linear_corrections(ug, sol.f, u0, "left")
    vs = _linear_corrections(vg, sol.h, v0, "right")
    u_fun = tuple(GridFunction(ug, c) for c in us)
    v_fun = tuple(GridFunction(vg, c) for c in vs)
    r0 = sol.r0
    bd = {}
    for name, funs in (("u", u_fun), ("v", v_fun)):
        for j in range(4):
            bd[f"{name}{j}p"] = interp_and_derivatives(funs[j], r0, 1)
    # higher derivatives at the interface follow from the radial ODE, which
    # is far more accurate than differentiating a quartic fit twice or thrice
    m = sol.dim - 1
    for name, nl in (("u", sol.f), ("v", sol.h)):
        d0, d1 = bd[f"{name}0p"], bd[f"{name}1p"]
        d0pp = float(nl.f(0.0)) - m / r0 * d0
        bd[f"{name}0pp"] = d0pp
        bd[f"{name}0ppp"] = nl.slope_at_zero * d0 + m / r0**2 * d0 - m / r0 * d0pp
        bd[f"{name}1pp"] = nl.slope_at_zero - m / r0 * d1
    return OuterExpansion(u=u_fun, v=v_fun, boundary_data=bd, r0=r0, psi0=sol.psi0)


def _linear_corrections(grid: RadialGrid, nl: Nonlinearity, base: np.ndarray, edge: str):
    op = _operator(grid, nl.df(base))
    i_edge = 0 if edge == "left" else -1
    n = grid.size

    def solve(rhs_interior: np.ndarray, edge_value: float) -> np.ndarray:
        rhs = np.array(rhs_interior, dtype=float)
        rhs[0] = 0.0 if grid.a != 0.0 or edge == "left" else rhs[0]
        rhs[-1] = 0.0
        rhs[i_edge] = edge_value
        out = solve_banded(op, rhs)
        out[-1] = 0.0
        if grid.a != 0.0 or edge == "left":
            out[0] = 0.0
        out[i_edge] = edge_value
        return out

    c1 = solve(np.zeros(n), 1.0)
    c2 = solve(0.5 * nl.d2f(base) * c1**2, 0.0)
    c3 = solve(nl.d2f(base) * c1 * c2 + nl.d3f(base) * c1**3 / 6.0, 0.0)
    return base, c1, c2, c3


@dataclass(frozen=True, eq=False)
class OuterFamily:
    u: GridFunction
    v: GridFunction
    delta: float
    delta_tilde: float
    u_report: NewtonReport
    v_report: NewtonReport
    u_positive: bool
    v_positive: bool

    @property
    def absolute_tolerance(self) -> float:
        return max(self.u_report.final_residual, self.v_report.final_residual)


def solve_outer_family(
    sol: NodalSolution,
    delta: float,
    delta_tilde: float,
    expansion: OuterExpansion | None = None,
    tol: float = 1e-10,
    polish: int = 3,
) -> OuterFamily:
    """``u_delta`` on ``[r0, 1]`` and ``v_delta_tilde`` on ``[a, r0]``.

    Newton is seeded from the first-order expansion on the expansion's grids.
    """
    if abs(delta) > 0.1 * sol.psi0 or abs(delta_tilde) > 0.1 * sol.psi0:
        raise ValueError("boundary data outside the perturbative regime |delta| <= 0.1 psi0")
    exp = compute_corrections(sol) if expansion is None else expansion
    seed_u = exp.u[0].values + delta * exp.u[1].values
    seed_v = exp.v[0].values + delta_tilde * exp.v[1].values
    u, ru = _solve_branch(exp.u_grid, sol.f, seed_u, delta, "left", tol, polish)
    v, rv = _solve_branch(exp.v_grid, sol.h, seed_v, delta_tilde, "right", tol, polish)
    u_pos = bool(np.all(u[1:-1] > 0.0))
    v_pos = bool(np.all(v[:-1] > 0.0))
    if delta >= 0.0 and not u_pos:
        log.warning("u branch lost positivity for delta=%g", delta)
    if delta_tilde >= 0.0 and not v_pos:
        log.warning("v branch lost positivity for delta_tilde=%g", delta_tilde)
    return OuterFamily(
        u=GridFunction(exp.u_grid, u), v=GridFunction(exp.v_grid, v),
        delta=delta, delta_tilde=delta_tilde, u_report=ru, v_report=rv,
        u_positive=u_pos, v_positive=v_pos,
    )


def _taylor_tail(nl: Nonlinearity, coeffs: Sequence[np.ndarray], delta: float) -> np.ndarray | None:
    """``f(sum delta^i c_i)`` minus its Taylor polynomial of matching degree.

    Composition is done coefficient-wise in ``delta``, so the tail is formed
    from its own terms rather than as a difference of O(1) quantities.
    """
    poly = nl.polynomial()
    if poly is None:
        return None
    k = len(coeffs) - 1
    base = np.array(coeffs)
    power = np.zeros((1, base.shape[1]))
    power[0] = 1.0
    total = np.zeros((k * (poly.size - 1) + 1, base.shape[1]))
    for deg, c in enumerate(poly):
        if deg > 0:
            nxt = np.zeros((power.shape[0] + k, base.shape[1]))
            for i in range(power.shape[0]):
                nxt[i:i + k + 1] += power[i] * base
            power = nxt
        if c != 0.0:
            total[: power.shape[0]] += c * power
    tail = np.zeros(base.shape[1])
    for j in range(total.shape[0] - 1, k, -1):
        tail = tail + total[j] * delta**j
    return tail


def _branch_remainder(grid, nl, coeffs, delta, edge, tol):
    lap = laplacian_matrix(grid)
    ball = grid.a == 0.0
    trunc = sum(delta**i * c for i, c in enumerate(coeffs))
    tail = _taylor_tail(nl, coeffs, delta)
    if tail is None:
        tail = nl.f(trunc) - lap @ trunc
    fixed = [0, -1] if (edge == "left" or not ball) else [-1]

    def residual(e):
        out = lap @ e - nl.increment(trunc, e) - tail
        out[fixed] = e[fixed]
        return out

    def jacobian(e):
        return _operator(grid, nl.df(trunc + e))

    # the first iterate fixes the size of e, which sets the rounding level
    e0 = np.zeros(grid.size)
    e0 = e0 - solve_banded(jacobian(e0), residual(e0))
    scale = stencil_scale(lap, e0, tail)
    e, _ = newton_solve(residual, jacobian, e0, tol=tol, scale=scale, polish=2)
    e[fixed] = 0.0
    return GridFunction(grid, e)


def family_remainder(
    sol: NodalSolution,
    exp: OuterExpansion,
    delta: float,
    delta_tilde: float,
    order: int = 3,
    tol: float = 1e-10,
) -> tuple[GridFunction, GridFunction]:
    """``u_delta - sum_{i<=order} delta^i u_i`` and its ``v`` analogue.

    The difference is solved for directly: substituting the truncated series
    into the branch equation leaves only the Taylor tail of ``f`` as forcing,
    so the result keeps full relative accuracy even when it sits far below
    the rounding level of ``u_delta`` itself.
    """
    if not 1 <= order <= 3:
        raise ValueError("order must be 1, 2 or 3")
    if abs(delta) > 0.1 * sol.psi0 or abs(delta_tilde) > 0.1 * sol.psi0:
        raise ValueError("boundary data outside the perturbative regime |delta| <= 0.1 psi0")
    uc = [c.values for c in exp.u[: order + 1]]
    vc = [c.values for c in exp.v[: order + 1]]
    eu = _branch_remainder(exp.u_grid, sol.f, uc, delta, "left", tol)
    ev = _branch_remainder(exp.v_grid, sol.h, vc, delta_tilde, "right", tol)
    return eu, ev


# ---------------------------------------------------------------------------
# non-degeneracy


@dataclass(frozen=True)
class NondegeneracyReport:
    sigma_min_w: float
    sigma_min_u0: float
    sigma_min_v0: float
    slope_gap: float
    norms: dict = field(default_factory=dict)


def _reduced_operator(grid: RadialGrid, potential: np.ndarray) -> sp.csc_matrix:
    """``-Delta + potential`` on the unknowns left after removing Dirichlet ends."""
    mat = (-laplacian_matrix(grid) + sp.diags(potential)).tocsr()
    lo = 0 if grid.a == 0.0 else 1
    return mat[lo:-1, lo:-1].tocsc()


def smallest_singular_value(mat: sp.spmatrix, tol: float = 1e-14, max_iter: int = 2000) -> float:
    """Smallest singular value by inverse iteration on ``A^T A``."""
    lu = spla.splu(sp.csc_matrix(mat))
    x = np.random.default_rng(12345).standard_normal(mat.shape[0])
    x /= np.linalg.norm(x)
    sigma = 0.0
    for _ in range(max_iter):
        y = lu.solve(lu.solve(x, trans="T"))
        ny = np.linalg.norm(y)
        new = 1.0 / np.sqrt(ny)
        x = y / ny
        if abs(new - sigma) <= tol * new:
            return float(new)
        sigma = new
    return float(sigma)


def nondegeneracy_operators(sol: NodalSolution, exp: OuterExpansion) -> dict:
    """Reduced operators and their potentials, keyed ``w``, ``u0``, ``v0``."""
    _, dF = _limit_rhs(sol.f, sol.h, False)
    pots = {
        "w": (sol.grid, dF(sol.w.values)),
        "u0": (exp.u_grid, sol.f.df(exp.u[0].values)),
        "v0": (exp.v_grid, sol.h.df(exp.v[0].values)),
    }
    return {k: (_reduced_operator(g, p), p) for k, (g, p) in pots.items()}


def check_nondegeneracy(sol: NodalSolution, exp: OuterExpansion, rel_floor: float = 1e-8) -> NondegeneracyReport:
    """Gate on the three radial non-degeneracy conditions and the slope gap.

    A smallest singular value below ``rel_floor`` times the operator scale is
    treated as singular. The scale is ``1 + max|potential|``, which does not
    grow under mesh refinement the way the discrete Laplacian's norm does.
    """
    ops = nondegeneracy_operators(sol, exp)
    sig, norms = {}, {}
    for name, (mat, potential) in ops.items():
        sig[name] = smallest_singular_value(mat)
        norms[name] = 1.0 + float(np.max(np.abs(potential)))
        if sig[name] < rel_floor * norms[name]:
            raise DegenerateInputError(
                f"sigma_min_{name}",
                f"linearization about {name} is numerically singular "
                f"(sigma_min={sig[name]:.3e}, scale={norms[name]:.3e})",
            )
    gap = exp.slope_gap
    scale = max(abs(exp.boundary_data["u1p"]), abs(exp.boundary_data["v1p"]), 1.0)
    if abs(gap) < 1e-10 * scale:
        raise DegenerateInputError("slope_gap", "u1'(r0) equals v1'(r0)")
    return NondegeneracyReport(sig["w"], sig["u0"], sig["v0"], gap, norms)
