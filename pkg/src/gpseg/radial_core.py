"""Radial grids, finite-difference operators, banded LU and a damped Newton driver."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.linalg import lapack

log = logging.getLogger(__name__)

# Adjacent cells may differ by at most this factor; the marching slope below
# keeps the realized ratio under it even when entering a refinement zone.
MAX_CELL_RATIO = 1.2
_SPACING_SLOPE = 0.08


@dataclass(frozen=True)
class RefinementZone:
    """Interval ``[center - half_width, center + half_width]`` meshed at ``spacing``."""

    center: float
    half_width: float
    spacing: float


@dataclass(frozen=True, eq=False)
class RadialGrid:
    nodes: np.ndarray
    dim: int
    zones: tuple[RefinementZone, ...] = ()

    def __post_init__(self) -> None:
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("a grid needs at least two nodes")
        if not np.all(np.isfinite(nodes)):
            raise ValueError("grid nodes must be finite")
        if np.any(np.diff(nodes) <= 0.0):
            raise ValueError("grid nodes must be strictly increasing")
        if nodes[0] < 0.0:
            raise ValueError("radial grids start at a >= 0")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @property
    def a(self) -> float:
        return float(self.nodes[0])

    @property
    def b(self) -> float:
        return float(self.nodes[-1])

    @property
    def size(self) -> int:
        return self.nodes.size

    @property
    def spacing(self) -> np.ndarray:
        return np.diff(self.nodes)

    def __len__(self) -> int:
        return self.nodes.size


@dataclass(frozen=True, eq=False)
class GridFunction:
    grid: RadialGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)
        if values.shape != (self.grid.size,):
            raise ValueError(
                f"expected {self.grid.size} values, got shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("grid function values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def nodes(self) -> np.ndarray:
        return self.grid.nodes


@dataclass
class NewtonReport:
    iterations: int = 0
    residual_history: list[float] = field(default_factory=list)
    converged: bool = False
    final_residual: float = float("inf")
    scale: float = 1.0
    backtracks: list[int] = field(default_factory=list)

    @property
    def relative_history(self) -> list[float]:
        return [r / self.scale for r in self.residual_history]


class NewtonError(RuntimeError):
    def __init__(self, message: str, report: NewtonReport):
        super().__init__(message)
        self.report = report


class SingularMatrixError(np.linalg.LinAlgError):
    """Raised when banded LU meets an exactly zero pivot."""

    def __init__(self, pivot: int, message: str | None = None):
        super().__init__(message or f"singular matrix: zero pivot at row {pivot}")
        self.pivot = pivot


@dataclass(frozen=True)
class Damping:
    factor: float = 0.5
    max_backtracks: int = 20


# ---------------------------------------------------------------------------
# grids


def _spacing_at(r: float, h_base: float, zones: Sequence[RefinementZone], pad: float) -> float:
    h = h_base
    for z in zones:
        d = abs(r - z.center) - z.half_width - pad
        local = z.spacing if d <= 0.0 else z.spacing + _SPACING_SLOPE * d
        h = min(h, local)
    return h


def build_grid(
    a: float,
    b: float,
    base_count: int,
    zones: Sequence[RefinementZone] = (),
    dim: int = 3,
) -> RadialGrid:
    """Graded grid on ``[a, b]``.

    Outside the zones the spacing is ``(b - a) / base_count``; inside each zone
    it is at most the zone spacing, with geometric transitions in between.
    """
    if not (0.0 <= a < b):
        raise ValueError(f"need 0 <= a < b, got a={a}, b={b}")
    if base_count < 16:
        raise ValueError("base_count must be >= 16")
    if dim < 1:
        raise ValueError("dim must be >= 1")
    zones = tuple(zones)
    for z in zones:
        if z.spacing <= 0.0 or z.half_width < 0.0:
            raise ValueError(f"zone {z} needs positive spacing and non-negative width")
        if z.center - z.half_width < a - 1e-12 or z.center + z.half_width > b + 1e-12:
            raise ValueError(f"zone {z} lies outside [{a}, {b}]")
    h_base = (b - a) / base_count
    if not zones:
        return RadialGrid(np.linspace(a, b, base_count + 1), dim)

    # a small pad absorbs the final rescaling so zone interiors stay covered
    pad = min(h_base, max(z.spacing for z in zones) * 4.0)
    nodes = [a]
    r = a
    stop = b - 1e-13 * (b - a)
    while r < stop:
        h = _spacing_at(r, h_base, zones, pad)
        h = min(h, _spacing_at(min(r + h, b), h_base, zones, pad))
        r = r + h
        nodes.append(r)
    x = np.asarray(nodes)
    x = a + (x - a) * ((b - a) / (x[-1] - a))
    x[-1] = b
    return RadialGrid(x, dim, zones)


def uniform_grid(a: float, b: float, cells: int, dim: int = 3) -> RadialGrid:
    return RadialGrid(np.linspace(a, b, cells + 1), dim)


def insert_node(grid: RadialGrid, r: float, min_fraction: float = 0.25) -> RadialGrid:
    """Return a grid containing ``r`` as a node.

    Nodes closer to ``r`` than ``min_fraction`` of the local spacing are dropped
    so that no degenerate cell appears.
    """
    x = grid.nodes
    if not (x[0] <= r <= x[-1]):
        raise ValueError(f"r={r} outside grid span [{x[0]}, {x[-1]}]")
    j = int(np.searchsorted(x, r))
    if j < x.size and x[j] == r:
        return grid
    h = x[min(j, x.size - 1)] - x[max(j - 1, 0)]
    keep = np.abs(x - r) >= min_fraction * h
    keep[0] = keep[-1] = True
    y = np.sort(np.concatenate([x[keep], [r]]))
    return RadialGrid(np.unique(y), grid.dim, grid.zones)


def subgrid(grid: RadialGrid, lo: float, hi: float) -> RadialGrid:
    """Nodes of ``grid`` in ``[lo, hi]``; both endpoints must already be nodes."""
    x = grid.nodes
    mask = (x >= lo) & (x <= hi)
    y = x[mask]
    if y[0] != lo or y[-1] != hi:
        raise ValueError("subgrid endpoints must be nodes of the parent grid")
    return RadialGrid(y, grid.dim)


# ---------------------------------------------------------------------------
# operators


def laplacian_matrix(grid: RadialGrid) -> sp.csr_matrix:
    """Sparse matrix of the discrete radial Laplacian ``u'' + (N-1)/r u'``.

    Interior rows use the three-point non-uniform stencil, exact on
    quadratics. When the grid starts at ``r = 0`` the first row is the
    regularity row ``N u''(0)`` with a symmetric ghost node. Any other
    boundary row is left empty for the caller to fill.
    """
    x = grid.nodes
    n = x.size
    if n < 3:
        raise ValueError("the Laplacian needs at least three nodes")
    hm = x[1:-1] - x[:-2]
    hp = x[2:] - x[1:-1]
    r = x[1:-1]
    c2m = 2.0 / (hm * (hm + hp))
    c20 = -2.0 / (hm * hp)
    c2p = 2.0 / (hp * (hm + hp))
    c1m = -hp / (hm * (hm + hp))
    c10 = (hp - hm) / (hm * hp)
    c1p = hm / (hp * (hm + hp))
    k = (grid.dim - 1) / r
    lower = c2m + k * c1m
    diag = c20 + k * c10
    upper = c2p + k * c1p
    rows = np.concatenate([np.arange(1, n - 1)] * 3)
    cols = np.concatenate([np.arange(0, n - 2), np.arange(1, n - 1), np.arange(2, n)])
    vals = np.concatenate([lower, diag, upper])
    if x[0] == 0.0:
        h0 = x[1]
        c = 2.0 * grid.dim / h0**2
        rows = np.concatenate([rows, [0, 0]])
        cols = np.concatenate([cols, [0, 1]])
        vals = np.concatenate([vals, [-c, c]])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


@dataclass(frozen=True)
class BoundaryCondition:
    """Boundary condition at one end: ``dirichlet``, ``neumann`` or ``regularity``."""

    kind: str
    value: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("dirichlet", "neumann", "regularity"):
            raise ValueError(f"unknown boundary condition kind {self.kind!r}")


def one_sided_first_derivative(x: np.ndarray, end: str) -> tuple[np.ndarray, np.ndarray]:
    """Indices and weights of a second-order one-sided first derivative."""
    if end == "left":
        idx = np.array([0, 1, 2])
    else:
        idx = np.array([x.size - 1, x.size - 2, x.size - 3])
    return idx, _fd_weights(x[idx], x[idx[0]], 1)


def radial_laplacian(
    u: GridFunction,
    bc: tuple[BoundaryCondition, BoundaryCondition],
) -> GridFunction:
    """Discrete ``Delta u`` on interior nodes; boundary entries hold the bc defect.

    A ``regularity`` end (only valid at ``r = 0``) returns ``N u''(0)``; a
    ``dirichlet`` end returns ``u - value``; a ``neumann`` end returns
    ``u' - value`` with a second-order one-sided derivative.
    """
    left, right = bc
    for side in (left, right):
        if not isinstance(side, BoundaryCondition):
            raise ValueError(f"unknown boundary condition {side!r}")
    grid = u.grid
    if right.kind == "regularity":
        raise ValueError("regularity condition only applies at r = 0 (left end)")
    if left.kind == "regularity" and grid.a != 0.0:
        raise ValueError("regularity condition requires a grid starting at r = 0")
    out = laplacian_matrix(grid) @ u.values
    x, v = grid.nodes, u.values
    for end, cond, i in (("left", left, 0), ("right", right, -1)):
        if cond.kind == "dirichlet":
            out[i] = v[i] - cond.value
        elif cond.kind == "neumann":
            idx, w = one_sided_first_derivative(x, end)
            out[i] = w @ v[idx] - cond.value
    return GridFunction(grid, out)


# ---------------------------------------------------------------------------
# banded linear algebra


def _fd_weights(nodes: np.ndarray, at: float, order: int) -> np.ndarray:
    """Weights ``w`` with ``w @ f(nodes) ~ f^(order)(at)`` (polynomial exactness)."""
    m = nodes.size
    scale = max(np.max(np.abs(nodes - at)), 1e-300)
    z = (nodes - at) / scale
    vander = np.vander(z, m, increasing=True).T
    rhs = np.zeros(m)
    rhs[order] = float(np.prod(np.arange(1, order + 1)))
    return np.linalg.solve(vander, rhs) / scale**order


class BandedLU:
    """LU factorization of a banded matrix via LAPACK ``dgbtrf``."""

    def __init__(self, matrix: sp.spmatrix):
        a = sp.coo_matrix(matrix)
        n = a.shape[0]
        if a.shape != (n, n):
            raise ValueError("banded LU needs a square matrix")
        keep = a.data != 0.0
        rows, cols, data = a.row[keep], a.col[keep], a.data[keep]
        offs = cols - rows
        self.kl = int(max(0, -offs.min())) if offs.size else 0
        self.ku = int(max(0, offs.max())) if offs.size else 0
        self.n = n
        ab = np.zeros((2 * self.kl + self.ku + 1, n))
        np.add.at(ab, (self.kl + self.ku + rows - cols, cols), data)
        lu, piv, info = lapack.dgbtrf(ab, self.kl, self.ku)
        if info > 0:
            raise SingularMatrixError(int(info) - 1)
        if info < 0:
            raise ValueError(f"dgbtrf rejected argument {-info}")
        self._lu, self._piv = lu, piv
        self.min_pivot = float(np.min(np.abs(lu[self.kl + self.ku, :])))

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        x, info = lapack.dgbtrs(self._lu, self.kl, self.ku, np.asarray(rhs, dtype=float), self._piv)
        if info != 0:
            raise ValueError(f"dgbtrs failed with info={info}")
        return x


def solve_banded(matrix: sp.spmatrix, rhs: np.ndarray) -> np.ndarray:
    return BandedLU(matrix).solve(rhs)


# ---------------------------------------------------------------------------
# Newton


def check_jacobian(
    residual: Callable[[np.ndarray], np.ndarray],
    jacobian: Callable[[np.ndarray], sp.spmatrix],
    x: np.ndarray,
    directions: int = 4,
    seed: int = 0,
) -> float:
    """Largest relative gap between ``J d`` and a central difference of the residual."""
    rng = np.random.default_rng(seed)
    jac = jacobian(x)
    worst = 0.0
    xs = max(1.0, float(np.max(np.abs(x))))
    for _ in range(directions):
        d = rng.standard_normal(x.size)
        eps = 1e-6 * xs / np.max(np.abs(d))
        fd = (residual(x + eps * d) - residual(x - eps * d)) / (2.0 * eps)
        jd = jac @ d
        denom = max(float(np.max(np.abs(fd))), float(np.max(np.abs(jd))), 1e-300)
        worst = max(worst, float(np.max(np.abs(fd - jd))) / denom)
    return worst


def stencil_scale(lap: sp.spmatrix, x: np.ndarray, *terms: np.ndarray) -> float:
    """Magnitude of the terms entering a residual ``lap @ x + sum(terms)``.

    Used as the reference for relative Newton tolerances: it bounds the
    rounding error of the residual evaluation itself.
    """
    total = abs(lap) @ np.abs(x)
    for t in terms:
        total = total + np.abs(t)
    return max(float(np.max(total)), 1e-300)


def newton_solve(
    residual: Callable[[np.ndarray], np.ndarray],
    jacobian: Callable[[np.ndarray], sp.spmatrix],
    x0: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 50,
    damping: Damping = Damping(),
    scale: float | None = None,
    polish: int = 0,
    probe: float | None = None,
) -> tuple[np.ndarray, NewtonReport]:
    """Damped Newton iteration on ``residual(x) = 0``.

    Convergence means ``sup|residual| <= tol * scale``. When ``scale`` is not
    given it is the sup-norm of the residual at the zero vector, or 1 if that
    vanishes. ``polish`` extra full steps are taken after convergence while
    the step size keeps shrinking. With ``probe`` set, the Jacobian is checked
    against finite differences at ``x0`` and a relative gap above ``probe``
    raises ``ValueError``.
    """
    x = np.array(x0, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("initial guess must be finite")
    if probe is not None:
        gap = check_jacobian(residual, jacobian, x)
        if gap > probe:
            raise ValueError(f"Jacobian inconsistent with residual (relative gap {gap:.3e})")
    if scale is None:
        s0 = float(np.max(np.abs(residual(np.zeros_like(x)))))
        scale = s0 if s0 > 0.0 else 1.0
    report = NewtonReport(scale=scale)
    fx = residual(x)
    norm = float(np.max(np.abs(fx)))
    report.residual_history.append(norm)
    target = tol * scale
    while norm > target:
        if report.iterations >= max_iter:
            report.final_residual = norm
            raise NewtonError(
                f"Newton did not converge in {max_iter} iterations "
                f"(residual {norm:.3e}, target {target:.3e})",
                report,
            )
        try:
            step = BandedLU(jacobian(x)).solve(-fx)
        except SingularMatrixError as exc:
            report.final_residual = norm
            raise NewtonError(f"singular Jacobian: zero pivot at row {exc.pivot}", report) from exc
        lam = 1.0
        for nb in range(damping.max_backtracks + 1):
            trial = x + lam * step
            ft = residual(trial)
            nt = float(np.max(np.abs(ft)))
            if np.isfinite(nt) and nt < norm:
                break
            lam *= damping.factor
        else:
            report.final_residual = norm
            raise NewtonError(
                f"line search failed after {damping.max_backtracks} backtracks "
                f"(residual {norm:.3e})",
                report,
            )
        x, fx, norm = trial, ft, nt
        report.iterations += 1
        report.backtracks.append(nb)
        report.residual_history.append(norm)
        log.debug("newton iter %d residual %.3e (lambda=%g)", report.iterations, norm, lam)

    prev_step = np.inf
    for _ in range(polish):
        step = BandedLU(jacobian(x)).solve(-fx)
        size = float(np.max(np.abs(step)))
        if not size < prev_step:
            break
        prev_step = size
        x = x + step
        fx = residual(x)
        norm = float(np.max(np.abs(fx)))
        report.iterations += 1
        report.backtracks.append(0)
        report.residual_history.append(norm)
        if size == 0.0:
            break
    report.final_residual = norm
    report.converged = norm <= target
    if not report.converged:
        raise NewtonError(f"polishing left residual {norm:.3e} above {target:.3e}", report)
    return x, report


# ---------------------------------------------------------------------------
# interpolation


def interpolation_weights(nodes: np.ndarray, r: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices ``(m, 5)`` and weights ``(m, 5)`` of local quartic interpolation.

    The five nodes nearest each point are used (shifted inward at the ends).
    """
    x = np.asarray(nodes, dtype=float)
    r = np.atleast_1d(np.asarray(r, dtype=float))
    if x.size < 5:
        raise ValueError("quartic interpolation needs at least five nodes")
    if not 0 <= order <= 3:
        raise ValueError("order must be in 0..3")
    j = np.searchsorted(x, r)
    start = np.clip(j - 2, 0, x.size - 5)
    # recentre on the nearest five nodes
    left = start > 0
    move = left & (np.abs(r - x[np.maximum(start - 1, 0)]) < np.abs(x[np.minimum(start + 4, x.size - 1)] - r))
    start = np.where(move, start - 1, start)
    idx = start[:, None] + np.arange(5)[None, :]
    pts = x[idx]
    scale = np.maximum(np.max(np.abs(pts - r[:, None]), axis=1), 1e-300)
    z = (pts - r[:, None]) / scale[:, None]
    vander = z[:, None, :] ** np.arange(5)[None, :, None]
    rhs = np.zeros((r.size, 5))
    rhs[:, order] = float(np.prod(np.arange(1, order + 1)))
    w = np.linalg.solve(vander, rhs[:, :, None])[:, :, 0] / scale[:, None] ** order
    return idx, w


def interpolate(nodes: np.ndarray, values: np.ndarray, r, order: int = 0) -> np.ndarray:
    """Vectorized local-quartic interpolation (or derivative) of sampled data."""
    x = np.asarray(nodes, dtype=float)
    r_arr = np.atleast_1d(np.asarray(r, dtype=float))
    lo, hi = x[0], x[-1]
    tol = 1e-12 * max(1.0, abs(lo), abs(hi))
    if np.any(r_arr < lo - tol) or np.any(r_arr > hi + tol):
        raise ValueError(f"evaluation point outside grid span [{lo}, {hi}]")
    idx, w = interpolation_weights(x, r_arr, order)
    out = np.sum(w * np.asarray(values)[idx], axis=1)
    if order == 0:
        hit = np.searchsorted(x, r_arr)
        hit = np.clip(hit, 0, x.size - 1)
        exact = x[hit] == r_arr
        out[exact] = np.asarray(values)[hit[exact]]
    return out


def interp_and_derivatives(u: GridFunction, r: float, order: int = 0) -> float:
    """Value (``order = 0``) or derivative of ``u`` at ``r`` from a local quartic."""
    return float(interpolate(u.grid.nodes, u.values, float(r), order)[0])


def loglog_slope(x, y, log_power: float = 0.0) -> float:
    """Least-squares slope of ``log(y / |ln x|^log_power)`` against ``log x``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2 or x.shape != y.shape:
        raise ValueError("need at least two matching samples")
    if np.any(x <= 0.0) or np.any(y <= 0.0):
        raise ValueError("log-log fits need positive samples")
    lx = np.log(x)
    ly = np.log(y)
    if log_power:
        ly = ly - log_power * np.log(np.abs(lx))
    return float(np.polyfit(lx, ly, 1)[0])
