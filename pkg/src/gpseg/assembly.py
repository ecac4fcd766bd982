"""Cutoff, gluing of inner and outer pieces, remainder and weighted norms."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .blowup import (
    BlowupProfile,
    Curve,
    InnerCorrections,
    Phi1Blocks,
    compute_phi0,
    compute_phi1,
    phi1_blocks,
    solve_profile,
)
from .matching import MatchingParameters, inputs_from, solve_all
from .nonlinearity import Nonlinearity
from .outer import (
    NodalSolution,
    OuterExpansion,
    OuterFamily,
    check_nondegeneracy,
    compute_corrections,
    solve_limit_problem,
    solve_outer_family,
)
from .radial_core import GridFunction, RadialGrid, interpolate, laplacian_matrix

log = logging.getLogger(__name__)

# Both cutoff edges are scaled by this factor so that the blend zone fits
# between 0 and r0 for r0 ~ 0.2 from g = 1e4 on.
CUTOFF_SCALE = 0.08


# ---------------------------------------------------------------------------
# cutoff


@dataclass(frozen=True)
class CutoffSpec:
    """``zeta = 0`` for ``|r - r0| <= inner_edge``, ``1`` beyond ``outer_edge``, quintic in between.

    ``C1`` and ``C2`` are the measured constants in ``|zeta'| <= C1 |ln g|^-1 g^(1/4)``
    and ``|zeta''| <= C2 |ln g|^-2 g^(1/2)``.
    """

    g: float
    r0: float
    inner_edge: float
    outer_edge: float
    scale: float
    C1: float = float("nan")
    C2: float = float("nan")

    @property
    def width(self) -> float:
        return self.outer_edge - self.inner_edge

    def evaluate(self, r) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``zeta``, ``zeta'`` and ``zeta''`` at ``r``."""
        r = np.asarray(r, dtype=float)
        s = r - self.r0
        x = np.clip((np.abs(s) - self.inner_edge) / self.width, 0.0, 1.0)
        inside = (x > 0.0) & (x < 1.0)
        sign = np.sign(s)
        w = self.width
        z = x**3 * (10.0 - 15.0 * x + 6.0 * x**2)
        dz = np.where(inside, 30.0 * x**2 * (1.0 - x) ** 2, 0.0) * sign / w
        d2z = np.where(inside, 60.0 * x * (1.0 - x) * (1.0 - 2.0 * x), 0.0) / w**2
        return z, dz, d2z

    def __call__(self, r) -> np.ndarray:
        return self.evaluate(r)[0]


def build_cutoff(
    g: float,
    r0: float,
    domain: tuple[float, float] = (0.0, 1.0),
    scale: float = CUTOFF_SCALE,
    probe: int = 20001,
) -> CutoffSpec:
    """Cutoff for coupling ``g`` around ``r0``; derivative constants are measured on a probe grid."""
    if not g >= np.e**2:
        raise ValueError(f"g must be at least e^2 so that ln g > 2, got {g}")
    if not scale > 0.0:
        raise ValueError("cutoff scale must be positive")
    L = abs(np.log(g))
    e = g**-0.25
    inner, outer = scale * L * e, 2.0 * scale * L * e
    a, b = domain
    if r0 - outer <= a or r0 + outer >= b:
        raise ValueError(
            f"blend zone [{r0 - outer:.4g}, {r0 + outer:.4g}] leaves the domain "
            f"[{a}, {b}] at g={g:.3g}; use a larger g or a smaller cutoff scale"
        )
    cut = CutoffSpec(g=float(g), r0=float(r0), inner_edge=inner, outer_edge=outer, scale=scale)
    r = np.linspace(r0 - 1.1 * outer, r0 + 1.1 * outer, probe)
    z, dz, d2z = cut.evaluate(r)
    if np.any(z < 0.0) or np.any(z > 1.0):
        raise AssertionError("cutoff left [0, 1]")
    C1 = float(np.max(np.abs(dz))) * L / g**0.25
    C2 = float(np.max(np.abs(d2z))) * L**2 / g**0.5
    return CutoffSpec(
        g=float(g), r0=float(r0), inner_edge=inner, outer_edge=outer, scale=scale, C1=C1, C2=C2
    )


# ---------------------------------------------------------------------------
# pieces


@dataclass(frozen=True, eq=False)
class InnerApproximation:
    """``mu g^(-1/4) (U, V) + g^(-1/2) phi0 + g^(-3/4) phi1`` in the variable ``t = mu g^(1/4) (r - r0 - xi)``."""

    profile: BlowupProfile
    corrections: InnerCorrections
    g: float
    mu: float
    xi: float
    r0: float
    u: Curve = field(init=False, repr=False)
    v: Curve = field(init=False, repr=False)

    def __post_init__(self) -> None:
        c = self.corrections
        if not c.has_phi1:
            raise ValueError("the inner approximation needs the second correction")
        e = self.g**-0.25
        p = self.profile
        u = p.U.scaled(self.mu * e) + c.phi0.scaled(e**2) + c.phi1.scaled(e**3)
        v = p.V.scaled(self.mu * e) + c.phi0_tilde.scaled(e**2) + c.phi1_tilde.scaled(e**3)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def stretch(self) -> float:
        return self.mu * self.g**0.25

    def t(self, r) -> np.ndarray:
        return self.stretch * (np.asarray(r, dtype=float) - self.r0 - self.xi)

    def reach(self) -> float:
        """Largest ``|r - r0|`` covered by the profile span."""
        return self.profile.T / self.stretch - abs(self.xi)

    def evaluate(self, r) -> tuple[tuple[np.ndarray, ...], tuple[np.ndarray, ...]]:
        """Values and first two ``r``-derivatives of both components."""
        t = self.t(r)
        k = self.stretch
        out = []
        for c in (self.u, self.v):
            out.append((c(t), k * c(t, 1), k * k * c(t, 2)))
        return out[0], out[1]


@dataclass(frozen=True, eq=False)
class OuterApproximation:
    """``(u_delta, 0)`` for ``r >= r0`` and ``(0, v_delta~)`` for ``r <= r0``."""

    family: OuterFamily
    f: Nonlinearity
    h: Nonlinearity
    r0: float
    dim: int

    def _branch(self, fun: GridFunction, nl: Nonlinearity, r: np.ndarray):
        y = interpolate(fun.nodes, fun.values, r)
        dy = interpolate(fun.nodes, fun.values, r, 1)
        # the outer branches solve Delta y = nl(y) exactly; at r = 0 this reads dim y'' = nl(y)
        safe = np.where(r > 0.0, r, 1.0)
        d2y = np.where(r > 0.0, nl.f(y) - (self.dim - 1) / safe * dy, nl.f(y) / self.dim)
        return y, dy, d2y

    def evaluate(self, r) -> tuple[tuple[np.ndarray, ...], tuple[np.ndarray, ...]]:
        r = np.asarray(r, dtype=float)
        zeros = np.zeros_like(r)
        right, left = r >= self.r0, r <= self.r0
        u = [zeros.copy() for _ in range(3)]
        v = [zeros.copy() for _ in range(3)]
        if np.any(right):
            for arr, val in zip(u, self._branch(self.family.u, self.f, r[right])):
                arr[right] = val
        if np.any(left):
            for arr, val in zip(v, self._branch(self.family.v, self.h, r[left])):
                arr[left] = val
        return tuple(u), tuple(v)


# ---------------------------------------------------------------------------
# construction data shared across g


@dataclass(frozen=True, eq=False)
class ConstructionData:
    """Everything that does not depend on ``g``: limit problem, outer expansion, profile, inner blocks."""

    limit: NodalSolution
    expansion: OuterExpansion
    profile: BlowupProfile
    phi0: InnerCorrections
    blocks: Phi1Blocks

    @property
    def grid(self) -> RadialGrid:
        """The limit grid with ``r0`` inserted: union of the two outer grids."""
        u, v = self.expansion.u_grid, self.expansion.v_grid
        return RadialGrid(np.concatenate([v.nodes, u.nodes[1:]]), self.limit.dim)


def prepare(
    f: Nonlinearity,
    h: Nonlinearity,
    dim: int = 3,
    inner_radius: float = 0.0,
    base_count: int = 20000,
    T: float = 6.0,
    n_nodes: int = 8001,
    layer_halfwidth: float = 0.05,
    layer_refinement: int = 8,
) -> ConstructionData:
    """Solve all g-independent problems and run the non-degeneracy gates."""
    limit = solve_limit_problem(
        f, h, dim, inner_radius=inner_radius, base_count=base_count,
        layer_halfwidth=layer_halfwidth, layer_refinement=layer_refinement,
    )
    expansion = compute_corrections(limit)
    check_nondegeneracy(limit, expansion)
    profile = solve_profile(limit.psi0, T, n_nodes)
    phi0 = compute_phi0(profile, limit.r0, dim)
    blocks = phi1_blocks(profile, phi0, limit.r0, dim, f.slope_at_zero, h.slope_at_zero)
    return ConstructionData(limit, expansion, profile, phi0, blocks)


# ---------------------------------------------------------------------------
# gluing


@dataclass(frozen=True, eq=False)
class ApproximateSolution:
    grid: RadialGrid
    u_ap: GridFunction
    v_ap: GridFunction
    g: float
    params: MatchingParameters | None
    cutoff: CutoffSpec
    inner: InnerApproximation
    outer: OuterApproximation
    zeta: np.ndarray
    # values and r-derivatives of the pieces on the grid, zero where unused
    pieces: dict = field(repr=False, default_factory=dict)
    expansion: OuterExpansion | None = field(default=None, repr=False)

    @property
    def r0(self) -> float:
        return self.cutoff.r0

    @property
    def f(self) -> Nonlinearity:
        return self.outer.f

    @property
    def h(self) -> Nonlinearity:
        return self.outer.h

    @property
    def dim(self) -> int:
        return self.grid.dim

    def limit_pair(self) -> tuple[np.ndarray, np.ndarray]:
        """``w+`` and ``-w-`` at the nodes of the global grid."""
        if self.expansion is None:
            raise ValueError("no outer expansion attached to this approximate solution")
        r = self.grid.nodes
        wp = np.zeros(r.size)
        wm = np.zeros(r.size)
        u0, v0 = self.expansion.u[0], self.expansion.v[0]
        wp[np.searchsorted(r, u0.nodes)] = u0.values
        wm[np.searchsorted(r, v0.nodes)] = v0.values
        return wp, wm


def _glue(zeta: np.ndarray, inner: np.ndarray, outer: np.ndarray) -> np.ndarray:
    # exact copies where the cutoff is flat, so the identities hold bitwise
    mixed = inner + zeta * (outer - inner)
    return np.where(zeta == 0.0, inner, np.where(zeta == 1.0, outer, mixed))


def assemble(
    outer: OuterApproximation,
    inner: InnerApproximation,
    cutoff: CutoffSpec,
    grid: RadialGrid,
    params: MatchingParameters | None = None,
) -> ApproximateSolution:
    """Glue ``u_in + zeta (u_out - u_in)`` and the analogue for ``v`` on ``grid``."""
    if abs(inner.r0 - cutoff.r0) > 0.0 or abs(outer.r0 - cutoff.r0) > 0.0:
        raise ValueError("inner, outer and cutoff pieces must share r0")
    need = cutoff.outer_edge
    if inner.reach() < need:
        raise ValueError(
            f"profile span T={inner.profile.T} covers |r - r0| <= {inner.reach():.4g} but the blend "
            f"zone needs {need:.4g}; T must be at least "
            f"{inner.mu * (2 * cutoff.scale * abs(np.log(cutoff.g)) + abs(inner.xi) * inner.g**0.25):.3g}"
        )
    r = grid.nodes
    zeta, dzeta, d2zeta = cutoff.evaluate(r)
    near = zeta < 1.0
    rn = r[near]
    (ui, dui, d2ui), (vi, dvi, d2vi) = inner.evaluate(rn)
    blend = (zeta > 0.0) & (zeta < 1.0)
    far = zeta > 0.0
    (uo, duo, d2uo), (vo, dvo, d2vo) = outer.evaluate(r[far])

    def full(mask, vals):
        out = np.zeros(r.size)
        out[mask] = vals
        return out

    pieces = {
        "u_in": full(near, ui), "du_in": full(near, dui), "d2u_in": full(near, d2ui),
        "v_in": full(near, vi), "dv_in": full(near, dvi), "d2v_in": full(near, d2vi),
        "u_out": full(far, uo), "du_out": full(far, duo), "d2u_out": full(far, d2uo),
        "v_out": full(far, vo), "dv_out": full(far, dvo), "d2v_out": full(far, d2vo),
        "dzeta": dzeta, "d2zeta": d2zeta, "near": near, "blend": blend,
    }
    # the outer pieces live on sub-grids of the global grid: copy them exactly
    fam = outer.family
    u_out = np.zeros(r.size)
    v_out = np.zeros(r.size)
    iu = np.searchsorted(r, fam.u.nodes)
    iv = np.searchsorted(r, fam.v.nodes)
    if not (np.array_equal(r[iu], fam.u.nodes) and np.array_equal(r[iv], fam.v.nodes)):
        raise ValueError("the global grid must contain the outer grids")
    u_out[iu] = fam.u.values
    v_out[iv] = fam.v.values
    pieces["u_out_nodal"], pieces["v_out_nodal"] = u_out, v_out
    u = _glue(zeta, pieces["u_in"], np.where(zeta == 1.0, u_out, pieces["u_out"]))
    v = _glue(zeta, pieces["v_in"], np.where(zeta == 1.0, v_out, pieces["v_out"]))
    return ApproximateSolution(
        grid=grid,
        u_ap=GridFunction(grid, u),
        v_ap=GridFunction(grid, v),
        g=inner.g,
        params=params,
        cutoff=cutoff,
        inner=inner,
        outer=outer,
        zeta=zeta,
        pieces=pieces,
    )


class MeshError(ValueError):
    """The global grid is too coarse for the inner layer at this ``g``."""


def check_mesh(grid: RadialGrid, g: float, r0: float) -> None:
    """Spacing at most ``g^(-1/4)/20`` near ``r0`` and ``g^(-1/4)/10`` near the outer boundary."""
    e = g**-0.25
    L = abs(np.log(g))
    x = grid.nodes
    mid = 0.5 * (x[1:] + x[:-1])
    h = np.diff(x)
    for mask, cap, where in (
        (np.abs(mid - r0) <= 3 * L * e, e / 20, "near the interface"),
        (mid >= grid.b - 2 * L * e, e / 10, "near the outer boundary"),
    ):
        if np.any(mask) and np.max(h[mask]) > cap:
            raise MeshError(
                f"mesh spacing {np.max(h[mask]):.3g} {where} exceeds {cap:.3g} at g={g:.3g}; "
                "increase base_count"
            )


def construct(
    data: ConstructionData,
    g: float,
    cutoff_scale: float = CUTOFF_SCALE,
    outer_tol: float = 1e-10,
) -> ApproximateSolution:
    """Matching, outer family, second inner correction and gluing at one value of ``g``."""
    lim, ex = data.limit, data.expansion
    inp = inputs_from(lim, ex, data.profile, data.phi0, g, blocks=data.blocks)
    par = solve_all(inp)
    cutoff = build_cutoff(g, lim.r0, (lim.inner_radius, 1.0), cutoff_scale)
    grid = data.grid
    check_mesh(grid, g, lim.r0)
    fam = solve_outer_family(lim, par.delta, par.delta_tilde, ex, tol=outer_tol)
    corr = compute_phi1(
        data.profile, data.phi0, lim.r0, lim.dim, lim.f.slope_at_zero, lim.h.slope_at_zero,
        g, par.mu, par.xi, B0=par.B0, A0=par.A0, gauge=(par.A1, par.B1), blocks=data.blocks,
    )
    inner = InnerApproximation(data.profile, corr, g, par.mu, par.xi, lim.r0)
    outer = OuterApproximation(fam, lim.f, lim.h, lim.r0, lim.dim)
    log.info("g=%.3g: mu=%.12g xi=%.6g delta=%.6g delta~=%.6g", g, par.mu, par.xi, par.delta, par.delta_tilde)
    return replace(assemble(outer, inner, cutoff, grid, par), expansion=ex)


# ---------------------------------------------------------------------------
# overlap and remainder


@dataclass(frozen=True)
class OverlapReport:
    g: float
    u_gap: float
    v_gap: float
    du_gap: float
    dv_gap: float
    d2u_gap: float
    d2v_gap: float


def overlap_estimates(ap: ApproximateSolution) -> OverlapReport:
    """Sup of ``|out - in|`` and of its first two derivatives over the blend zone, per side."""
    p = ap.pieces
    s = ap.grid.nodes - ap.r0
    right = p["blend"] & (s > 0)
    left = p["blend"] & (s < 0)
    gaps = {}
    for name, side in (("u", right), ("v", left)):
        for pre in ("", "d", "d2"):
            d = p[f"{pre}{name}_out"][side] - p[f"{pre}{name}_in"][side]
            gaps[f"{pre}{name}_gap"] = float(np.max(np.abs(d))) if d.size else float("nan")
    return OverlapReport(g=ap.g, **gaps)


@dataclass(frozen=True, eq=False)
class RemainderReport:
    R1: GridFunction
    R2: GridFunction
    sup_inner: float
    sup_inner_weighted: float
    exp_tail_check: float
    zero_outside: float
    # achieved absolute residual of the outer branch solves and their stencil magnitude
    outer_tolerance: float
    outer_scale: float


def _outer_residual(fun: GridFunction, nl: Nonlinearity) -> np.ndarray:
    """``-(Delta_h y - nl(y))`` on the outer grid with zero boundary rows."""
    res = -(laplacian_matrix(fun.grid) @ fun.values - nl.f(fun.values))
    res[-1] = 0.0
    return res


def remainder_arrays(ap: ApproximateSolution) -> tuple[np.ndarray, np.ndarray]:
    """Both components of the remainder at the nodes of ``ap.grid``."""
    p = ap.pieces
    r = ap.grid.nodes
    f, h = ap.f, ap.h
    g, m = ap.g, ap.dim - 1
    zeta, dz, d2z = ap.zeta, p["dzeta"], p["d2zeta"]
    R = []
    for a, b, nl in (("u", "v", f), ("v", "u", h)):
        y_in, dy_in, d2y_in = p[f"{a}_in"], p[f"d{a}_in"], p[f"d2{a}_in"]
        D = p[f"{a}_out"] - y_in
        dD = p[f"d{a}_out"] - dy_in
        d2D = p[f"d2{a}_out"] - d2y_in
        y = y_in + zeta * D
        dy = dy_in + dz * D + zeta * dD
        d2y = d2y_in + d2z * D + 2.0 * dz * dD + zeta * d2D
        z_in = p[f"{b}_in"]
        other = z_in + zeta * (p[f"{b}_out"] - z_in)
        with np.errstate(divide="ignore", invalid="ignore"):
            radial = np.where(r > 0.0, m / r * dy, 0.0)
        R.append(-d2y - radial + nl.f(y) + g * other**2 * y)
    R1, R2 = R
    # where the cutoff is flat at one the outer pieces are exact discrete solutions
    flat = zeta == 1.0
    fam = ap.outer.family
    res_u = np.zeros(r.size)
    res_v = np.zeros(r.size)
    res_u[np.searchsorted(r, fam.u.nodes)] = _outer_residual(fam.u, f)
    res_v[np.searchsorted(r, fam.v.nodes)] = _outer_residual(fam.v, h)
    s = r - ap.r0
    R1 = np.where(flat, np.where(s > 0, res_u, 0.0), R1)
    R2 = np.where(flat, np.where(s < 0, res_v, 0.0), R2)
    return R1, R2


def compute_remainder(ap: ApproximateSolution) -> RemainderReport:
    R1, R2 = remainder_arrays(ap)
    r = ap.grid.nodes
    s = r - ap.r0
    g = ap.g
    L = abs(np.log(g))
    zone = ap.zeta < 1.0
    sup_inner = float(np.max(np.abs(R1[zone])))
    right = zone & (s > 0)
    # |R2| e^(2 g^(1/4) s) g^(1/2), in log space
    with np.errstate(divide="ignore"):
        logw = np.log(np.abs(R2[right])) + 2.0 * g**0.25 * s[right] + 0.5 * np.log(g)
    tail = float(np.exp(np.max(logw))) if logw.size else 0.0
    fam = ap.outer.family
    rep = RemainderReport(
        R1=GridFunction(ap.grid, R1),
        R2=GridFunction(ap.grid, R2),
        sup_inner=sup_inner,
        sup_inner_weighted=sup_inner / (g**-0.5 * L**4),
        exp_tail_check=tail,
        zero_outside=float(max(np.max(np.abs(R1[~zone])), np.max(np.abs(R2[~zone])))),
        outer_tolerance=fam.absolute_tolerance,
        outer_scale=max(fam.u_report.scale, fam.v_report.scale),
    )
    return rep


# ---------------------------------------------------------------------------
# weighted norms


@dataclass(frozen=True)
class WeightedNormEvaluator:
    g: float
    r0: float
    gamma: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")

    def log_weight(self, s, i: int) -> np.ndarray:
        """``log w_i(s)``; exponential branches never leave log space."""
        s = np.asarray(s, dtype=float)
        q = self.g**0.25 * s
        poly = np.log1p(np.abs(q) ** (1.0 + self.gamma))
        if i == 0:
            return np.where(s >= 0.0, poly, 0.0)
        if i == 1:
            return np.where(s >= 0.0, 0.0, np.abs(q))
        if i == 2:
            return np.where(s >= 0.0, poly, np.abs(q))
        raise ValueError(f"weight index must be 0, 1 or 2, got {i}")

    def weight(self, s, i: int) -> np.ndarray:
        return np.exp(self.log_weight(s, i))


def weighted_norm(pair, i: int, ev: WeightedNormEvaluator) -> float:
    """``sup w_i(r - r0)|Phi| + sup w_i(r0 - r)|Psi|`` over the nodes."""
    first, second = pair
    r = first.nodes
    s = r - ev.r0
    total = 0.0
    for fun, sgn in ((first, 1.0), (second, -1.0)):
        vals = np.abs(fun.values)
        hit = vals > 0.0
        if not np.any(hit):
            continue
        lw = ev.log_weight(sgn * s[hit], i) + np.log(vals[hit])
        top = float(np.max(lw))
        if top > 709.0:
            raise OverflowError(f"weighted norm overflows (log value {top:.1f})")
        total += float(np.exp(top))
    if not np.isfinite(total):
        raise OverflowError("weighted norm is not finite")
    return total
