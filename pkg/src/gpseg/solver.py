"""Full nonlinear solve at finite ``g`` about the glued approximation, and rate checks."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .assembly import (
    CUTOFF_SCALE,
    ApproximateSolution,
    ConstructionData,
    WeightedNormEvaluator,
    construct,
    weighted_norm,
)
from .nonlinearity import Nonlinearity
from .radial_core import (
    BandedLU,
    GridFunction,
    NewtonError,
    NewtonReport,
    laplacian_matrix,
    loglog_slope,
    newton_solve,
    stencil_scale,
)

log = logging.getLogger(__name__)

NEWTON_TOL = 1e-9
# a tail is the run of nodes, counted from the far boundary, below this fraction of the peak
TAIL_FRACTION = 1e-8


class PositivityError(RuntimeError):
    def __init__(self, message: str, component: str, node: int, value: float):
        super().__init__(message)
        self.component = component
        self.node = node
        self.value = value


class RateFitError(ValueError):
    pass


# ---------------------------------------------------------------------------
# discrete system


def pack(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    x = np.empty(2 * u.size)
    x[0::2] = u
    x[1::2] = v
    return x


def unpack(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return x[0::2], x[1::2]


@dataclass(frozen=True, eq=False)
class DiscreteSystem:
    """``-Delta u + f(u) + g v^2 u = 0`` and its mirror, with ``u = v = 0`` at ``r = 1``.

    On a ball the first row is the regularity row; on an annulus both ends are Dirichlet.
    """

    lap: sp.csr_matrix
    f: Nonlinearity
    h: Nonlinearity
    g: float
    ball: bool

    @property
    def n(self) -> int:
        return self.lap.shape[0]

    def dirichlet_rows(self) -> list[int]:
        return [self.n - 1] if self.ball else [0, self.n - 1]

    def residual_pair(self, u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        g = self.g
        ru = -(self.lap @ u) + self.f.f(u) + g * v * v * u
        rv = -(self.lap @ v) + self.h.f(v) + g * u * u * v
        for i in self.dirichlet_rows():
            ru[i], rv[i] = u[i], v[i]
        return ru, rv

    def residual(self, x: np.ndarray) -> np.ndarray:
        return pack(*self.residual_pair(*unpack(x)))

    def jacobian(self, x: np.ndarray) -> sp.csr_matrix:
        u, v = unpack(x)
        return self.operator(u, v)

    def coefficients(self, u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Diagonal terms of both equations and the coupling ``2 g u v`` of the linearization."""
        g = self.g
        return self.f.df(u) + g * v * v, self.h.df(v) + g * u * u, 2.0 * g * u * v

    def operator(self, u: np.ndarray, v: np.ndarray) -> sp.csr_matrix:
        """Interleaved Jacobian at ``(u, v)``: pentadiagonal blocks plus the coupling band."""
        du, dv, c = self.coefficients(u, v)
        off = np.zeros(2 * self.n - 1)
        off[0::2] = c
        lap2 = sp.kron(self.lap, sp.identity(2), format="csr")
        mat = (-lap2 + sp.diags([pack(du, dv), off, off], [0, 1, -1])).tolil()
        for i in self.dirichlet_rows():
            for k in (2 * i, 2 * i + 1):
                mat.rows[k] = [k]
                mat.data[k] = [1.0]
        return mat.tocsr()

    def apply(self, u, v, phi, psi) -> tuple[np.ndarray, np.ndarray]:
        """Matrix-free linearization in extended precision, with the coefficients of ``operator``.

        The interface rows of the Laplacian are ~1e10 and cancel to O(1)
        on smooth input, so double precision would lose eight digits here.
        """
        du, dv, c = self.coefficients(u, v)
        ld = np.longdouble
        phi = np.asarray(phi, dtype=ld)
        psi = np.asarray(psi, dtype=ld)
        lap = self.lap.astype(ld)
        a = -(lap @ phi) + du.astype(ld) * phi + c.astype(ld) * psi
        b = -(lap @ psi) + dv.astype(ld) * psi + c.astype(ld) * phi
        for i in self.dirichlet_rows():
            a[i], b[i] = phi[i], psi[i]
        return a, b

    def scale(self, u: np.ndarray, v: np.ndarray) -> float:
        g = self.g
        return max(
            stencil_scale(self.lap, u, self.f.f(u), g * v * v * u),
            stencil_scale(self.lap, v, self.h.f(v), g * u * u * v),
        )


def discrete_system(ap: ApproximateSolution) -> DiscreteSystem:
    return DiscreteSystem(laplacian_matrix(ap.grid), ap.f, ap.h, ap.g, ap.grid.a == 0.0)


def _values(x) -> np.ndarray:
    return np.asarray(x.values if isinstance(x, GridFunction) else x, dtype=float)


# ---------------------------------------------------------------------------
# linearized operator and quadratic part


def linearized_apply(ap: ApproximateSolution, pair) -> tuple[GridFunction, GridFunction]:
    """``L(phi, psi)`` about ``(u_ap, v_ap)``, boundary rows returning the boundary values."""
    sysm = discrete_system(ap)
    a, b = sysm.apply(ap.u_ap.values, ap.v_ap.values, *(_values(p) for p in pair))
    return GridFunction(ap.grid, a.astype(float)), GridFunction(ap.grid, b.astype(float))


class LinearizedOperator:
    """Factored ``L`` about ``(u_ap, v_ap)`` for repeated solves.

    Each solve takes ``refine`` steps of iterative refinement with the
    residual formed in extended precision.
    """

    def __init__(self, ap: ApproximateSolution, refine: int = 2):
        self.ap = ap
        self.refine = refine
        self.system = discrete_system(ap)
        self._lu = BandedLU(self.system.operator(ap.u_ap.values, ap.v_ap.values))
        self.min_pivot = self._lu.min_pivot

    def solve(self, F, H, bc: tuple[float, float] = (0.0, 0.0)) -> tuple[np.ndarray, np.ndarray]:
        F = np.array(_values(F), dtype=float)
        H = np.array(_values(H), dtype=float)
        for i in self.system.dirichlet_rows():
            F[i], H[i] = bc
        x = self._lu.solve(pack(F, H))
        u, v = self.ap.u_ap.values, self.ap.v_ap.values
        for _ in range(self.refine):
            a, b = self.system.apply(u, v, *unpack(x))
            res = pack(F.astype(np.longdouble) - a, H.astype(np.longdouble) - b)
            x = x + self._lu.solve(res.astype(float))
        return unpack(x)


def linearized_solve(
    ap: ApproximateSolution, F, H, bc: tuple[float, float] = (0.0, 0.0)
) -> tuple[GridFunction, GridFunction]:
    """Solve ``L(phi, psi) = (F, H)`` with ``phi = bc[0]``, ``psi = bc[1]`` on the Dirichlet rows."""
    phi, psi = LinearizedOperator(ap).solve(F, H, bc)
    return GridFunction(ap.grid, phi), GridFunction(ap.grid, psi)


def second_order_increment(nl: Nonlinearity, u, e) -> np.ndarray:
    """``f(u + e) - f(u) - f'(u) e``, free of cancellation for polynomial ``f``."""
    u = np.asarray(u, dtype=float)
    e = np.asarray(e, dtype=float)
    coef = nl.polynomial()
    if coef is None:
        return nl.increment(u, e) - nl.df(u) * e
    out = np.zeros(np.broadcast(u, e).shape)
    for k in range(2, coef.size):
        if coef[k] == 0.0:
            continue
        # (u+e)^k - u^k - k u^(k-1) e = e^2 sum_{j>=2} C(k,j) u^(k-j) e^(j-2)
        acc = np.zeros_like(out)
        binom = 1.0
        for j in range(1, k + 1):
            binom = binom * (k - j + 1) / j
            if j >= 2:
                acc = acc + binom * u ** (k - j) * e ** (j - 2)
        out = out + coef[k] * acc
    return out * e * e


def nonlinear_residual_N(
    ap, pair, f: Nonlinearity | None = None, h: Nonlinearity | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Quadratic and cubic part of the full system about ``(u_ap, v_ap)``."""
    f = ap.f if f is None else f
    h = ap.h if h is None else h
    u, v = _values(ap.u_ap), _values(ap.v_ap)
    phi, psi = (_values(p) for p in pair)
    g = ap.g
    n1 = second_order_increment(f, u, phi) + g * (u * psi**2 + 2.0 * v * phi * psi + phi * psi**2)
    n2 = second_order_increment(h, v, psi) + g * (v * phi**2 + 2.0 * u * phi * psi + psi * phi**2)
    return n1, n2


def discrete_remainder(ap: ApproximateSolution) -> tuple[np.ndarray, np.ndarray]:
    """Residual of the discrete system at ``(u_ap, v_ap)``."""
    return discrete_system(ap).residual_pair(ap.u_ap.values, ap.v_ap.values)


def picard_step(ap: ApproximateSolution, pair, op: LinearizedOperator | None = None):
    """One application of ``(phi, psi) -> L^-1(-R - N(phi, psi))``."""
    op = LinearizedOperator(ap) if op is None else op
    R1, R2 = discrete_remainder(ap)
    n1, n2 = nonlinear_residual_N(ap, pair)
    phi, psi = op.solve(-R1 - n1, -R2 - n2)
    return phi, psi


def picard_solve(
    ap: ApproximateSolution, tol: float = 1e-13, max_iter: int = 60
) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Iterate the Picard map from zero until successive corrections agree to ``tol`` relative."""
    op = LinearizedOperator(ap)
    phi = np.zeros(ap.grid.size)
    psi = np.zeros(ap.grid.size)
    peak = max(np.max(np.abs(ap.u_ap.values)), np.max(np.abs(ap.v_ap.values)))
    history = []
    for _ in range(max_iter):
        nphi, npsi = picard_step(ap, (phi, psi), op)
        change = max(np.max(np.abs(nphi - phi)), np.max(np.abs(npsi - psi)))
        history.append(float(change))
        phi, psi = nphi, npsi
        if not np.isfinite(change):
            break
        if change <= tol * peak:
            return phi, psi, history
    raise NewtonError(f"Picard iteration did not contract (last change {history[-1]:.3e})", NewtonReport())


# ---------------------------------------------------------------------------
# positive tails


@dataclass(frozen=True)
class TailSolve:
    """Exponentially small part of one component, solved in log space.

    ``nodes`` are the tail indices, ``log_values`` their natural logarithms.
    Every ratio lies in ``(0, 1)``, which certifies positivity even where
    ``exp(log_values)`` underflows.
    """

    component: str
    nodes: np.ndarray
    log_values: np.ndarray
    anchor: int

    @property
    def size(self) -> int:
        return self.nodes.size


def refine_tail(sysm: DiscreteSystem, u: np.ndarray, v: np.ndarray, component: str) -> TailSolve:
    """Re-solve the tail of ``component`` as a linear M-matrix problem by log-space elimination.

    ``u`` lives on ``[r0, 1]`` with its tail towards ``r = a``; ``v`` mirrors
    it. Inside the tail the other component is large, so the diagonal of
    ``-Delta + f(x)/x + g y^2`` dominates and the elimination only ever
    multiplies and divides positive numbers.
    """
    x, other, nl = (u, v, sysm.f) if component == "u" else (v, u, sysm.h)
    n = x.size
    lap = sysm.lap
    lower = np.r_[0.0, lap.diagonal(-1)]
    upper = np.r_[lap.diagonal(1), 0.0]
    diag = lap.diagonal()
    bulk = np.flatnonzero(np.abs(x) >= TAIL_FRACTION * np.max(np.abs(x)))
    if component == "u":
        anchor = int(bulk[0])
        # far-to-anchor order; on an annulus node 0 is a Dirichlet row
        order = np.arange(0 if sysm.ball else 1, anchor)
        alpha, gamma = lower[order], upper[order]
    else:
        anchor = int(bulk[-1])
        order = np.arange(n - 2, anchor, -1)
        alpha, gamma = upper[order], lower[order]
    if order.size == 0:
        return TailSolve(component, order, np.zeros(0), anchor)
    if x[anchor] <= 0.0:
        raise PositivityError(
            f"{component} is not positive at the tail anchor r-index {anchor}", component, anchor, float(x[anchor])
        )
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(x != 0.0, nl.f(x) / x, nl.slope_at_zero) + sysm.g * other**2
    beta = -diag[order] + q[order]
    # near r = 0 with N = 3 the lower coefficient cancels to zero up to rounding
    alpha = np.where(np.abs(alpha) <= 1e-12 * np.abs(diag[order]), 0.0, alpha)
    if np.any(alpha < 0.0) or np.any(gamma <= 0.0):
        raise PositivityError(f"{component} tail operator is not an M-matrix", component, int(order[0]), 0.0)
    log_rho = np.empty(order.size)
    rho = 0.0
    for k in range(order.size):
        piv = beta[k] - alpha[k] * rho
        if not piv > gamma[k]:
            raise PositivityError(
                f"{component} tail loses diagonal dominance at r-index {order[k]}", component, int(order[k]), 0.0
            )
        rho = gamma[k] / piv
        log_rho[k] = np.log(rho)
    # x_k = rho_k x_{k+1}, ending at the anchor
    logs = np.log(x[anchor]) + np.cumsum(log_rho[::-1])[::-1]
    return TailSolve(component, order, logs, anchor)


# ---------------------------------------------------------------------------
# full solve


@dataclass(frozen=True, eq=False)
class GPSolution:
    g: float
    u: GridFunction
    v: GridFunction
    report: NewtonReport
    approximation: ApproximateSolution = field(repr=False)
    tails: tuple[TailSolve, ...] = ()
    relative_residual: float = float("nan")
    diagnostics: dict = field(default_factory=dict)

    @property
    def phi(self) -> np.ndarray:
        return self.u.values - self.approximation.u_ap.values

    @property
    def psi(self) -> np.ndarray:
        return self.v.values - self.approximation.v_ap.values

    def log_values(self, component: str) -> np.ndarray:
        """Natural logarithm of a component, exact inside the log-space tail."""
        y = (self.u if component == "u" else self.v).values
        with np.errstate(divide="ignore"):
            out = np.log(np.where(y > 0.0, y, 0.0))
        for t in self.tails:
            if t.component == component:
                out[t.nodes] = t.log_values
        return out


def interior_mask(grid, ball: bool) -> np.ndarray:
    mask = np.ones(grid.size, dtype=bool)
    mask[-1] = False
    if not ball:
        mask[0] = False
    return mask


def interface_position(sol: GPSolution) -> float:
    """Crossing point of ``u`` and ``v`` nearest ``r0``, linearly interpolated."""
    r = sol.u.nodes
    d = sol.u.values - sol.v.values
    cross = np.flatnonzero((d[:-1] < 0.0) & (d[1:] >= 0.0))
    if cross.size == 0:
        raise ValueError("u - v does not change sign")
    r0 = sol.approximation.r0
    i = cross[np.argmin(np.abs(r[cross] - r0))]
    return float(r[i] - d[i] * (r[i + 1] - r[i]) / (d[i + 1] - d[i]))


def solution_diagnostics(sol: GPSolution, gamma: float = 0.5) -> dict:
    ap = sol.approximation
    r = ap.grid.nodes
    g = ap.g
    e = g**-0.25
    wp, wm = ap.limit_pair()
    u, v = sol.u.values, sol.v.values
    mask = interior_mask(ap.grid, ap.grid.a == 0.0)
    log_u, log_v = sol.log_values("u"), sol.log_values("v")
    xi = ap.params.xi if ap.params is not None else 0.0
    # inner profile aligned by the matching shift
    s = r - ap.r0
    win = np.abs(s) <= e
    U = ap.inner.profile.U
    t = (s[win] - xi) / e
    inner_err = float(np.max(np.abs(u[win] - e * U(t))))
    ev = WeightedNormEvaluator(g, ap.r0, gamma)
    phi = GridFunction(ap.grid, sol.phi)
    psi = GridFunction(ap.grid, sol.psi)
    out = {
        "sup_error_u": float(np.max(np.abs(u - wp))),
        "sup_error_v": float(np.max(np.abs(v - wm))),
        "inner_error": inner_err,
        "min_u": float(np.min(u[mask])),
        "min_v": float(np.min(v[mask])),
        "min_log10_u": float(np.min(log_u[mask]) / np.log(10.0)),
        "min_log10_v": float(np.min(log_v[mask]) / np.log(10.0)),
        "positive": bool(np.all(np.isfinite(log_u[mask])) and np.all(np.isfinite(log_v[mask]))),
        "correction_norm1": weighted_norm((phi, psi), 1, ev),
        "correction_sup": float(max(np.max(np.abs(sol.phi)), np.max(np.abs(sol.psi)))),
        "interface": interface_position(sol),
        "interface_offset": abs(interface_position(sol) - ap.r0 - xi),
        "newton_iterations": sol.report.iterations,
        "relative_residual": sol.relative_residual,
    }
    return out


def newton_full(
    ap: ApproximateSolution,
    tol: float = NEWTON_TOL,
    iterate_to: float = 1e-13,
    max_iter: int = 20,
    polish: int = 3,
    seed: tuple[np.ndarray, np.ndarray] | None = None,
    require_positive: bool = True,
    gamma: float = 0.5,
) -> GPSolution:
    """Newton on the full discrete system, seeded at ``(u_ap, v_ap)`` unless ``seed`` is given.

    Convergence means ``sup|residual| <= tol * S`` with ``S`` the stencil
    magnitude at the seed; the iteration itself runs on to ``iterate_to * S``
    so the solution is settled well below the acceptance level. The
    exponentially small tails are then re-solved in log space so that
    positivity is decided exactly.
    """
    sysm = discrete_system(ap)
    u0, v0 = (ap.u_ap.values, ap.v_ap.values) if seed is None else seed
    x0 = pack(u0, v0)
    scale = sysm.scale(u0, v0)
    x, report = newton_solve(
        sysm.residual, sysm.jacobian, x0, tol=min(tol, iterate_to), max_iter=max_iter, scale=scale, polish=polish
    )
    u, v = (np.array(c) for c in unpack(x))
    tails = []
    for comp in ("u", "v"):
        t = refine_tail(sysm, u, v, comp)
        if t.size:
            target = u if comp == "u" else v
            target[t.nodes] = np.exp(t.log_values)
        tails.append(t)
    final = float(np.max(np.abs(sysm.residual(pack(u, v)))))
    rel = final / scale
    if not rel <= tol:
        raise NewtonError(f"tail refinement left relative residual {rel:.3e}", report)
    sol = GPSolution(
        g=ap.g,
        u=GridFunction(ap.grid, u),
        v=GridFunction(ap.grid, v),
        report=report,
        approximation=ap,
        tails=tuple(tails),
        relative_residual=rel,
    )
    diag = solution_diagnostics(sol, gamma)
    sol.diagnostics.update(diag)
    if require_positive and not diag["positive"]:
        for comp, y in (("u", u), ("v", v)):
            mask = interior_mask(ap.grid, sysm.ball)
            logs = sol.log_values(comp)
            bad = np.flatnonzero(mask & ~np.isfinite(logs))
            if bad.size:
                i = int(bad[np.argmin(y[bad])])
                raise PositivityError(
                    f"{comp} is not positive at r = {ap.grid.nodes[i]:.6g} (value {y[i]:.3e})", comp, i, float(y[i])
                )
    log.info("g=%.3g: newton %d iterations, relative residual %.2e", ap.g, report.iterations, rel)
    return sol


def _solve_point(args) -> GPSolution:
    data, g, build, kwargs = args
    return newton_full(construct(data, g, **build), **kwargs)


def solve_ladder(
    data: ConstructionData,
    g_list,
    workers: int = 1,
    cutoff_scale: float = CUTOFF_SCALE,
    outer_tol: float = 1e-10,
    **kwargs,
) -> dict[float, GPSolution]:
    """Solve every ladder point; failures at a point retry seeded by the solution just below it.

    Keyword arguments beyond the construction options go to ``newton_full``.
    """
    build = {"cutoff_scale": cutoff_scale, "outer_tol": outer_tol}
    gs = sorted(float(g) for g in g_list)
    out: dict[float, GPSolution] = {}
    failed = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {g: pool.submit(_solve_point, (data, g, build, kwargs)) for g in gs}
            for g, fut in futures.items():
                try:
                    out[g] = fut.result()
                except NewtonError:
                    failed.append(g)
    else:
        for g in gs:
            try:
                out[g] = _solve_point((data, g, build, kwargs))
            except NewtonError:
                failed.append(g)
    # continuation: the global grid does not depend on g, so a neighbouring solution is a valid seed
    for g in failed:
        below = [h for h in out if h < g]
        if not below:
            raise NewtonError(f"Newton failed at g={g:.3g} with no lower ladder point to continue from", NewtonReport())
        prev = out[max(below)]
        log.warning("g=%.3g: cold start failed, continuing from g=%.3g", g, prev.g)
        out[g] = newton_full(construct(data, g, **build), seed=(prev.u.values, prev.v.values), **kwargs)
    return dict(sorted(out.items()))


# ---------------------------------------------------------------------------
# rates


@dataclass(frozen=True)
class RateReport:
    name: str
    g_list: tuple[float, ...]
    errors: tuple[float, ...]
    fitted_slope: float
    confidence: float
    target: float
    tolerance: float
    log_power: float = 0.0

    @property
    def passed(self) -> bool:
        return abs(self.fitted_slope - self.target) <= self.tolerance

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "g": list(self.g_list),
            "errors": list(self.errors),
            "slope": self.fitted_slope,
            "fit_residual": self.confidence,
            "target": self.target,
            "tolerance": self.tolerance,
            "log_power": self.log_power,
            "passed": self.passed,
        }


def fit_rate(
    name: str,
    g_list,
    errors,
    target: float,
    tolerance: float,
    log_power: float = 0.0,
    max_residual: float = 0.5,
) -> RateReport:
    g = np.asarray(g_list, dtype=float)
    y = np.asarray(errors, dtype=float)
    if g.size < 4 or np.any(np.diff(g) <= 0.0) or np.log10(g[-1] / g[0]) < 2.0:
        raise RateFitError("rate fits need at least 4 increasing g values spanning 2 decades")
    slope = loglog_slope(g, y, log_power)
    ly = np.log(y) - (log_power * np.log(np.log(g)) if log_power else 0.0)
    fit = np.polyval(np.polyfit(np.log(g), ly, 1), np.log(g))
    resid = float(np.sqrt(np.mean((ly - fit) ** 2)))
    if resid > max_residual:
        raise RateFitError(
            f"{name}: log-log fit residual {resid:.3f} is too large; the ladder is pre-asymptotic, extend it to larger g"
        )
    return RateReport(name, tuple(g.tolist()), tuple(y.tolist()), slope, resid, target, tolerance, log_power)


def verify_rates(solutions: dict[float, GPSolution]) -> dict[str, RateReport]:
    gs = sorted(solutions)
    d = [solutions[g].diagnostics for g in gs]
    return {
        "u_vs_w_plus": fit_rate("u_vs_w_plus", gs, [x["sup_error_u"] for x in d], -0.25, 0.05),
        "v_vs_w_minus": fit_rate("v_vs_w_minus", gs, [x["sup_error_v"] for x in d], -0.25, 0.05),
        "inner_profile": fit_rate("inner_profile", gs, [x["inner_error"] for x in d], -0.5, 0.1),
        "correction_norm1": fit_rate("correction_norm1", gs, [x["correction_norm1"] for x in d], -0.75, 0.15),
        "interface_offset": fit_rate("interface_offset", gs, [x["interface_offset"] for x in d], -0.5, 0.1),
    }


# ---------------------------------------------------------------------------
# linear a-priori probe


# every bump stays within |t| <= 2 (centre plus two widths), which lies inside
# the domain for all ladder points: the origin sits at t = -1.9 when g = 1e4
BUMP_CENTRES = (-1.0, 1.0)
BUMP_WIDTHS = (0.3, 0.5)


def probe_generator(seed: int) -> np.random.Generator:
    """Philox4x64-10 keyed directly by ``seed``: word ``j`` is word ``j % 4`` of the block at counter ``j // 4 + 1``."""
    return np.random.Generator(np.random.Philox(key=seed))


def random_bumps(rng: np.random.Generator, t: np.ndarray, count: int = 5) -> np.ndarray:
    """``count`` Gaussian bumps: centres, then widths, then Box-Muller amplitudes, all from uniform doubles."""
    centres = rng.uniform(*BUMP_CENTRES, count)
    widths = rng.uniform(*BUMP_WIDTHS, count)
    u = rng.random(2 * count)
    amps = np.sqrt(-2.0 * np.log1p(-u[0::2])) * np.cos(2.0 * np.pi * u[1::2])
    return np.sum(amps[:, None] * np.exp(-(((t[None, :] - centres[:, None]) / widths[:, None]) ** 2)), axis=0)


def linear_probe(ap: ApproximateSolution, samples: int = 20, seed: int = 0, gamma: float = 0.5) -> np.ndarray:
    """Ratios ``||L^-1(F, H)||_1 / (g^-1/4 ||(F, H)||_2)`` for seeded random bumps in the inner variable.

    The same seed gives the same shapes in ``t`` at every ``g``.
    """
    op = LinearizedOperator(ap)
    rng = probe_generator(seed)
    t = ap.inner.t(ap.grid.nodes)
    ev = WeightedNormEvaluator(ap.g, ap.r0, gamma)
    ratios = np.empty(samples)
    for k in range(samples):
        F = random_bumps(rng, t)
        H = random_bumps(rng, t)
        for i in op.system.dirichlet_rows():
            F[i] = H[i] = 0.0
        phi, psi = op.solve(F, H)
        grid = ap.grid
        num = weighted_norm((GridFunction(grid, phi), GridFunction(grid, psi)), 1, ev)
        den = weighted_norm((GridFunction(grid, F), GridFunction(grid, H)), 2, ev)
        ratios[k] = num / (ap.g**-0.25 * den)
    return ratios
