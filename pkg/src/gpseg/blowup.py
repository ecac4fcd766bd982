"""Blow-up profile ``U'' = U V^2, V'' = V U^2`` and the linearized inner corrections.

All profiles live on a uniform symmetric grid ``t_i = -T + i h`` with an odd
node count, so ``t = 0`` is a node. Second-order systems are discretized by
Numerov's scheme; boundary derivatives use the matching one-sided formula
``y'_N = (y_N - y_{N-1})/h + h/6 (2 y''_N + y''_{N-1})``, third-order accurate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.integrate import simpson
from scipy.interpolate import BPoly
from scipy.special import expit

from .radial_core import BandedLU, NewtonError, newton_solve

log = logging.getLogger(__name__)

_W = (1.0, 10.0, 1.0)
SYM_TOL = 1e-8


class ProfileError(RuntimeError):
    """Raised when a profile or correction fails one of its quality gates."""

    def __init__(self, gate: str, message: str):
        super().__init__(f"{gate}: {message}")
        self.gate = gate


# ---------------------------------------------------------------------------
# grid and evaluation


@dataclass(frozen=True, eq=False)
class LineGrid:
    """Uniform grid on ``[-T, T]`` with an odd number of nodes."""

    T: float
    n: int

    def __post_init__(self) -> None:
        if self.T <= 0.0:
            raise ValueError("T must be positive")
        if self.n < 5 or self.n % 2 == 0:
            raise ValueError("the line grid needs an odd node count >= 5")

    @cached_property
    def t(self) -> np.ndarray:
        t = np.linspace(-self.T, self.T, self.n)
        t[self.n // 2] = 0.0
        t.setflags(write=False)
        return t

    @property
    def h(self) -> float:
        return 2.0 * self.T / (self.n - 1)

    @property
    def center(self) -> int:
        return self.n // 2


def numerov_derivative(y: np.ndarray, ypp: np.ndarray, h: float) -> np.ndarray:
    """First derivative consistent with Numerov data: fourth order inside, third at the ends."""
    d = np.empty_like(y)
    d[1:-1] = (y[2:] - y[:-2]) / (2.0 * h) - h / 12.0 * (ypp[2:] - ypp[:-2])
    d[0] = (y[1] - y[0]) / h - h / 6.0 * (2.0 * ypp[0] + ypp[1])
    d[-1] = (y[-1] - y[-2]) / h + h / 6.0 * (2.0 * ypp[-1] + ypp[-2])
    return d


@dataclass(frozen=True, eq=False)
class Curve:
    """Nodal values with first and second derivatives; quintic Hermite in between."""

    t: np.ndarray
    y: np.ndarray
    dy: np.ndarray
    d2y: np.ndarray

    @cached_property
    def _poly(self) -> BPoly:
        return BPoly.from_derivatives(self.t, np.stack([self.y, self.dy, self.d2y], axis=1))

    def __call__(self, x, deriv: int = 0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        lo, hi = self.t[0], self.t[-1]
        slack = 1e-12 * (hi - lo)
        if np.any(x < lo - slack) or np.any(x > hi + slack):
            raise ValueError(f"evaluation outside the profile span [{lo}, {hi}]")
        return self._poly(np.clip(x, lo, hi), deriv)

    def __add__(self, other: "Curve") -> "Curve":
        return Curve(self.t, self.y + other.y, self.dy + other.dy, self.d2y + other.d2y)

    def scaled(self, c: float) -> "Curve":
        return Curve(self.t, c * self.y, c * self.dy, c * self.d2y)


def _curve(grid: LineGrid, y: np.ndarray, ypp: np.ndarray) -> Curve:
    return Curve(grid.t, y, numerov_derivative(y, ypp, grid.h), ypp)


def smoothstep(x):
    """C-infinity step: 0 for ``x <= 0``, 1 for ``x >= 1``, ``expit(1/(1-x) - 1/x)`` between."""
    return _step(np.asarray(x, dtype=float))[0]


def _step(x: np.ndarray):
    # the blend is flat to all orders at both ends, so Numerov keeps its fourth order
    inside = (x > 2e-3) & (x < 1.0 - 2e-3)
    xc = np.where(inside, x, 0.5)
    s = 1.0 / (1.0 - xc) - 1.0 / xc
    sig = expit(s)
    w = sig * (1.0 - sig)
    s1 = 1.0 / (1.0 - xc) ** 2 + 1.0 / xc**2
    s2 = 2.0 / (1.0 - xc) ** 3 - 2.0 / xc**3
    c = np.where(inside, sig, np.where(x >= 0.5, 1.0, 0.0))
    d1 = np.where(inside, w * s1, 0.0)
    d2 = np.where(inside, w * (1.0 - 2.0 * sig) * s1**2 + w * s2, 0.0)
    return c, d1, d2


def _blend(t: np.ndarray, side: int):
    """``chi(side*t)`` with ``chi = smoothstep((t+1)/2)`` and its first two t-derivatives."""
    c, d1, d2 = _step((side * t + 1.0) / 2.0)
    return c, d1 * 0.5 * side, d2 * 0.25


@dataclass(frozen=True)
class PolynomialPeel:
    """Cubic growth ``-(c1 t^3/6 + c0 t^2/2)`` blended onto one half-line.

    The pair is ``(P, 0)`` switched on for ``t >= 1`` when ``side = +1`` and
    ``(0, P~)`` switched on for ``t <= -1`` when ``side = -1``; ``-P''`` then
    equals ``c1 t + c0`` wherever the blend is saturated.
    """

    c1_plus: float = 0.0
    c0_plus: float = 0.0
    c1_minus: float = 0.0
    c0_minus: float = 0.0

    def _side(self, t, c1, c0, side):
        chi, d1, d2 = _blend(t, side)
        q = -(c1 * t**3 / 6.0 + c0 * t**2 / 2.0)
        q1 = -(c1 * t**2 / 2.0 + c0 * t)
        q2 = -(c1 * t + c0)
        return q * chi, q1 * chi + q * d1, q2 * chi + 2.0 * q1 * d1 + q * d2

    def evaluate(self, t):
        """``(P, P', P'', P~, P~', P~'')`` at ``t``."""
        t = np.asarray(t, dtype=float)
        return self._side(t, self.c1_plus, self.c0_plus, 1) + self._side(
            t, self.c1_minus, self.c0_minus, -1
        )

    def curves(self, grid: LineGrid) -> tuple[Curve, Curve]:
        p, p1, p2, q, q1, q2 = self.evaluate(grid.t)
        return Curve(grid.t, p, p1, p2), Curve(grid.t, q, q1, q2)


# ---------------------------------------------------------------------------
# sparse Numerov assembly


def _numerov_block(n: int, h: float, m00, m01, m10, m11):
    """Triplets for the interior Numerov rows of ``z'' = M z`` (logical numbering).

    Unknowns are interleaved, ``z_c(i) -> 2 i + c``. Row ``(c, i)`` for
    ``i = 1..n-2`` is ``z_c(i+1) - 2 z_c(i) + z_c(i-1) - h^2/12 sum w_j (M z)_c(i+j)``.
    """
    mats = ((m00, m01), (m10, m11))
    i = np.arange(1, n - 1)
    rows, cols, vals = [], [], []
    k = h * h / 12.0
    for c in (0, 1):
        for j, w in zip((-1, 0, 1), _W):
            second = -2.0 if j == 0 else 1.0
            for d in (0, 1):
                coef = -k * w * mats[c][d][i + j]
                if d == c:
                    coef = coef + second
                rows.append(np.stack([np.full(i.size, c), i], axis=1))
                cols.append(2 * (i + j) + d)
                vals.append(coef)
    rc = np.concatenate(rows)
    return rc[:, 0], rc[:, 1], np.concatenate(cols), np.concatenate(vals)


def _edge_derivative(n: int, h: float, c: int, end: str, mats):
    """Columns and weights of the Numerov one-sided derivative of component ``c``."""
    if end == "right":
        i0, i1, sgn = n - 1, n - 2, 1.0
    else:
        i0, i1, sgn = 0, 1, -1.0
    cols = [2 * i0 + c, 2 * i1 + c]
    vals = [sgn / h, -sgn / h]
    for node, w in ((i0, 2.0), (i1, 1.0)):
        for d in (0, 1):
            cols.append(2 * node + d)
            vals.append(sgn * h / 6.0 * w * mats[c][d][node])
    return np.array(cols), np.array(vals)


# ---------------------------------------------------------------------------
# the profile


@dataclass(frozen=True, eq=False)
class BlowupProfile:
    grid: LineGrid
    U: Curve
    V: Curve
    psi0: float
    k: float
    k_check: float
    residual: float
    symmetry_defect: float
    decay_rate: float
    report: object = None

    @property
    def T(self) -> float:
        return self.grid.T

    @property
    def t(self) -> np.ndarray:
        return self.grid.t

    def kernel(self) -> tuple[tuple[Curve, Curve], tuple[Curve, Curve]]:
        """``(U', V')`` and ``(tU' + U, tV' + V)`` as curves."""
        t, U, V = self.t, self.U, self.V
        k1 = (
            Curve(t, U.dy, U.d2y, _third(U, V)),
            Curve(t, V.dy, V.d2y, _third(V, U)),
        )
        k2 = (
            Curve(t, t * U.dy + U.y, t * U.d2y + 2 * U.dy, t * _third(U, V) + 3 * U.d2y),
            Curve(t, t * V.dy + V.y, t * V.d2y + 2 * V.dy, t * _third(V, U) + 3 * V.d2y),
        )
        return k1, k2


def _third(A: Curve, B: Curve) -> np.ndarray:
    # (A B^2)' = A' B^2 + 2 A B B'
    return A.dy * B.y**2 + 2.0 * A.y * B.y * B.dy


def _profile_guess(grid: LineGrid, psi0: float) -> np.ndarray:
    lam = np.sqrt(psi0)
    x = lam * grid.t
    u = lam * 0.5 * (x + np.sqrt(x * x + 2.0))
    z = np.empty(2 * grid.n)
    z[0::2] = u
    z[1::2] = u[::-1]
    return z


def _profile_rows(n: int) -> dict:
    """Row permutation keeping the symmetry constraint inside the band."""
    m = n // 2
    i = np.arange(1, n - 1)
    u_rows = np.where(i <= m, 2 * (i - 1), 2 * i)
    return {
        "u": u_rows,
        "v": 2 * i + 1,
        "u_left": 1,
        "sym": 2 * m,
        "u_right": 2 * (n - 1),
        "v_right": 2 * n - 1,
    }


def solve_profile(
    psi0: float,
    T: float = 8.0,
    n_nodes: int = 4001,
    tol: float = 1e-13,
    check_window: float = 1.0,
) -> BlowupProfile:
    """Entire-line solution with ``U'(+inf) = psi0`` and ``U(-t) = V(t)``."""
    if psi0 <= 0.0:
        raise ValueError("psi0 must be positive")
    if T < 6.0:
        raise ValueError("T must be at least 6")
    if n_nodes < 2000:
        raise ValueError("n_nodes must be at least 2000")
    if n_nodes % 2 == 0:
        n_nodes += 1
    grid = LineGrid(float(T), int(n_nodes))
    n, h = grid.n, grid.h
    rows = _profile_rows(n)
    h2 = h * h

    def split(z):
        return z[0::2], z[1::2]

    def residual(z):
        u, v = split(z)
        fu, fv = u * v * v, v * u * u
        out = np.empty(2 * n)
        out[rows["u"]] = (u[2:] - 2 * u[1:-1] + u[:-2]) / h2 - (fu[2:] + 10 * fu[1:-1] + fu[:-2]) / 12
        out[rows["v"]] = (v[2:] - 2 * v[1:-1] + v[:-2]) / h2 - (fv[2:] + 10 * fv[1:-1] + fv[:-2]) / 12
        out[rows["u_left"]] = (u[1] - u[0]) / h - h / 6 * (2 * fu[0] + fu[1]) - v[0] * u[0]
        out[rows["sym"]] = u[grid.center] - v[grid.center]
        out[rows["u_right"]] = (u[-1] - u[-2]) / h + h / 6 * (2 * fu[-1] + fu[-2]) - psi0
        vp = (v[-1] - v[-2]) / h + h / 6 * (2 * fv[-1] + fv[-2])
        out[rows["v_right"]] = vp + u[-1] * v[-1]
        return out

    def jacobian(z):
        u, v = split(z)
        mats = ((v * v, 2 * u * v), (2 * u * v, u * u))
        comp, node, cols, vals = _numerov_block(n, h, mats[0][0], mats[0][1], mats[1][0], mats[1][1])
        r = np.where(comp == 0, rows["u"][node - 1], rows["v"][node - 1])
        # Numerov rows are divided by h^2 so every row is O(1)
        R, C, X = [r], [cols], [vals / h2]
        for key, c, end in (("u_left", 0, "left"), ("u_right", 0, "right"), ("v_right", 1, "right")):
            cc, vv = _edge_derivative(n, h, c, end, mats)
            if key == "v_right":
                cc = np.concatenate([cc, [2 * (n - 1), 2 * (n - 1) + 1]])
                vv = np.concatenate([vv, [v[-1], u[-1]]])
            elif key == "u_left":
                cc = np.concatenate([cc, [0, 1]])
                vv = np.concatenate([vv, [-v[0], -u[0]]])
            R.append(np.full(cc.size, rows[key]))
            C.append(cc)
            X.append(vv)
        R.append(np.array([rows["sym"], rows["sym"]]))
        C.append(np.array([2 * grid.center, 2 * grid.center + 1]))
        X.append(np.array([1.0, -1.0]))
        return sp.csr_matrix((np.concatenate(X), (np.concatenate(R), np.concatenate(C))), shape=(2 * n, 2 * n))

    z0 = _profile_guess(grid, psi0)
    # rounding floor of the scaled Numerov rows is about eps * max|z| / h^2; polish sweeps down to it
    scale = float(np.max(np.abs(z0))) / h2
    z, report = newton_solve(residual, jacobian, z0, tol=tol, scale=scale, max_iter=60, polish=3)
    u, v = split(z)
    fu, fv = u * v * v, v * u * u
    U, V = _curve(grid, u, fu), _curve(grid, v, fv)
    # the far tails underflow to rounding noise; only negative values above that noise count
    floor = -1e-14 * float(np.max(u))
    if np.min(u) < floor or np.min(v) < floor:
        raise ProfileError("positivity", "profile lost positivity; raise n_nodes")
    sym = float(np.max(np.abs(u[::-1] - v)))
    k = float(u[-1] - psi0 * grid.t[-1])
    j = int(np.argmin(np.abs(grid.t - (T - check_window))))
    k_check = float(u[j] - psi0 * grid.t[j])
    if sym > SYM_TOL:
        raise ProfileError("symmetry", f"max|U(-t) - V(t)| = {sym:.3e} exceeds 1e-8")
    if abs(k - k_check) > 1e-8 * max(1.0, abs(k)):
        raise ProfileError(
            "truncation",
            f"phase k differs by {abs(k - k_check):.3e} between T and T-{check_window}; raise T",
        )
    return BlowupProfile(
        grid=grid, U=U, V=V, psi0=float(psi0), k=k, k_check=k_check,
        residual=report.final_residual, symmetry_defect=sym,
        decay_rate=_fit_decay(grid.t, u * v), report=report,
    )


def _fit_decay(t: np.ndarray, uv: np.ndarray) -> float:
    """Super-Gaussian rate ``c`` in ``U V ~ exp(-c t^2)`` from the far field."""
    mask = (np.abs(t) > 1.0) & (uv > 1e-250)
    if np.count_nonzero(mask) < 10:
        return float("nan")
    tt = t[mask]
    # log(UV) is even in t up to symmetry; fit against t^2 with a linear log-correction
    A = np.stack([tt**2, np.log(np.abs(tt)), np.ones_like(tt)], axis=1)
    coef, *_ = np.linalg.lstsq(A, np.log(uv[mask]), rcond=None)
    return float(-coef[0])


def rescale_profile(profile: BlowupProfile, t: np.ndarray, mu: float) -> tuple[np.ndarray, np.ndarray]:
    """``(mu U(mu t), mu V(mu t))``; a profile with slope ``mu^2 psi0``."""
    return mu * profile.U(mu * np.asarray(t)), mu * profile.V(mu * np.asarray(t))


# ---------------------------------------------------------------------------
# the linearized operator


@dataclass(frozen=True, eq=False)
class GrowthSolution:
    Phi: Curve
    PhiTilde: Curve
    a_plus: float
    a_minus: float
    b: float
    A: float
    B: float
    b_integral: float
    sum_integral: float
    fit_residual: float
    tail: float
    window: float
    H: np.ndarray = field(repr=False, default=None)
    H_tilde: np.ndarray = field(repr=False, default=None)

    @property
    def slope_plus(self) -> float:
        return self.b + 2.0 * self.B * self._psi0

    @property
    def slope_minus(self) -> float:
        return self.b - 2.0 * self.B * self._psi0

    _psi0: float = 0.0


def apply_L(profile: BlowupProfile, phi: Curve, phit: Curve) -> tuple[np.ndarray, np.ndarray]:
    """``L(Phi, Phi~)`` at the nodes from the stored second derivatives."""
    u, v = profile.U.y, profile.V.y
    return (
        -phi.d2y + v * v * phi.y + 2 * u * v * phit.y,
        -phit.d2y + u * u * phit.y + 2 * u * v * phi.y,
    )


def _check_decay(profile: BlowupProfile, H, Ht, gate: str, floor: float = 1e-10, ref: float = 0.0) -> float:
    """Tail of ``|H| + |H~|`` on ``|t| >= T/2``, relative to ``ref`` or the sup of the input."""
    t = profile.t
    far = np.abs(t) >= profile.T / 2.0
    tail = float(np.max(np.abs(H[far]) + np.abs(Ht[far])))
    ref = max(1.0, ref, float(np.max(np.abs(H) + np.abs(Ht))))
    if tail > floor * ref:
        raise ProfileError(gate, f"right-hand side does not decay: tail {tail:.3e} at |t| >= T/2")
    return tail


def _affine_fit(t: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    b, a = np.polyfit(t, y, 1)
    res = float(np.max(np.abs(y - (a + b * t))))
    return float(a), float(b), res


def solve_linearized_growth(
    profile: BlowupProfile,
    H: np.ndarray,
    H_tilde: np.ndarray,
    gauge: tuple[float, float] = (0.0, 0.0),
    window: float = 2.0,
    check: bool = True,
) -> GrowthSolution:
    """Affine-growth solution of ``L(Phi, Phi~) = (H, H~)`` plus a gauge multiple of the kernel.

    The base solution has equal slopes ``b`` at both ends and ``a_+ = a_-``;
    the gauge ``(A, B)`` adds ``A (U', V') + B (tU' + U, tV' + V)``.
    """
    grid = profile.grid
    n, h, t = grid.n, grid.h, grid.t
    H = np.asarray(H, dtype=float)
    Ht = np.asarray(H_tilde, dtype=float)
    if H.shape != t.shape or Ht.shape != t.shape:
        raise ValueError("right-hand sides must live on the profile grid")
    tail = _check_decay(profile, H, Ht, "decay") if check else 0.0
    u, v = profile.U.y, profile.V.y
    mats = ((v * v, 2 * u * v), (2 * u * v, u * u))
    comp, node, cols, vals = _numerov_block(n, h, *mats[0], *mats[1])
    R, C, X = [2 * node + comp], [cols], [vals]
    rhs = np.zeros(2 * n)
    k12 = h * h / 12.0
    i = np.arange(1, n - 1)
    rhs[2 * i] = -k12 * (H[i + 1] + 10 * H[i] + H[i - 1])
    rhs[2 * i + 1] = -k12 * (Ht[i + 1] + 10 * Ht[i] + Ht[i - 1])
    Hs = (H, Ht)

    def edge_row(row, c, end, extra_cols=(), extra_vals=()):
        cc, vv = _edge_derivative(n, h, c, end, mats)
        R.append(np.full(cc.size + len(extra_cols), row))
        C.append(np.concatenate([cc, extra_cols]))
        X.append(np.concatenate([vv, extra_vals]))
        i0, i1, sgn = (n - 1, n - 2, 1.0) if end == "right" else (0, 1, -1.0)
        # the one-sided formula carries -H through Phi'' = M z - H
        return sgn * h / 6.0 * (2.0 * Hs[c][i0] + Hs[c][i1])

    # Phi Robin at -T:  Phi' - V Phi = 0
    rhs[0] = edge_row(0, 0, "left", [0], [-v[0]])
    # Phi~(-T) = 0 fixes the (tU'+U) direction together with Phi'(T) = 0
    R.append(np.array([1]))
    C.append(np.array([1]))
    X.append(np.array([1.0]))
    # Phi'(T) = 0
    rhs[2 * n - 2] = edge_row(2 * n - 2, 0, "right")
    # Phi~ Robin at +T: Phi~' + U Phi~ = 0
    rhs[2 * n - 1] = edge_row(2 * n - 1, 1, "right", [2 * n - 1], [u[-1]])
    mat = sp.csr_matrix((np.concatenate(X), (np.concatenate(R), np.concatenate(C))), shape=(2 * n, 2 * n))
    z = BandedLU(mat).solve(rhs)
    phi, phit = z[0::2], z[1::2]

    plus = t >= t[-1] - window
    minus = t <= t[0] + window
    ap, bp, rp = _affine_fit(t[plus], phi[plus])
    am, bm, rm = _affine_fit(t[minus], phit[minus])
    psi0, k = profile.psi0, profile.k
    (k1u, k1v), (k2u, k2v) = profile.kernel()
    # equal slopes, then equal intercepts
    Bc = (bm - bp) / (4.0 * psi0)
    ap, am = ap + Bc * k, am + Bc * k
    Ac = (am - ap) / (2.0 * psi0)
    b = 0.5 * (bp + bm)
    a_base = 0.5 * (ap + am)
    A, B = gauge
    cA, cB = Ac + A, Bc + B
    phi = phi + cA * k1u.y + cB * k2u.y
    phit = phit + cA * k1v.y + cB * k2v.y
    fpp = v * v * phi + 2 * u * v * phit - H
    gpp = u * u * phit + 2 * u * v * phi - Ht
    Phi, PhiT = _curve(grid, phi, fpp), _curve(grid, phit, gpp)

    b_int = -1.0 / (2.0 * psi0) * simpson(profile.U.dy * H + profile.V.dy * Ht, x=t)
    # pairing with (tU' + U, tV' + V) and integrating by parts leaves 2 psi0 (a_+ + a_-)
    s_int = 1.0 / (2.0 * psi0) * simpson(k2u.y * H + k2v.y * Ht, x=t)
    sol = GrowthSolution(
        Phi=Phi, PhiTilde=PhiT,
        a_plus=a_base + A * psi0 + B * k,
        a_minus=a_base - A * psi0 + B * k,
        b=b, A=A, B=B, b_integral=float(b_int), sum_integral=float(s_int),
        fit_residual=max(rp, rm), tail=tail, window=window, H=H, H_tilde=Ht,
        _psi0=psi0,
    )
    if check:
        scale = max(1.0, abs(b), abs(b_int))
        if abs(b - b_int) > 1e-6 * scale:
            raise ProfileError(
                "slope_integral",
                f"fitted slope {b:.12g} disagrees with the integral formula {b_int:.12g}",
            )
    return sol


def _kernel_curves(profile: BlowupProfile, A: float, B: float) -> tuple[Curve, Curve]:
    (k1u, k1v), (k2u, k2v) = profile.kernel()
    return k1u.scaled(A) + k2u.scaled(B), k1v.scaled(A) + k2v.scaled(B)


def _solve_peeled(
    profile: BlowupProfile,
    H: np.ndarray,
    Ht: np.ndarray,
    peel: PolynomialPeel,
    gate: str,
) -> tuple[Curve, Curve, GrowthSolution]:
    """Solve ``L(Phi) = (H, H~)`` where the growth of ``(H, H~)`` is carried by ``-peel''``."""
    P, Pt = peel.curves(profile.grid)
    LP, LPt = apply_L(profile, P, Pt)
    R, Rt = H - LP, Ht - LPt
    # differentiated grid data carry rounding noise proportional to the unpeeled size
    try:
        _check_decay(profile, R, Rt, gate, ref=float(np.max(np.abs(H) + np.abs(Ht))))
    except ProfileError as exc:
        raise ProfileError(gate, f"{exc}; the polynomial peel does not match the growth") from None
    sol = solve_linearized_growth(profile, R, Rt, check=False)
    return sol.Phi + P, sol.PhiTilde + Pt, sol


@dataclass(frozen=True, eq=False)
class Phi1Blocks:
    """The g-independent pieces of the second inner correction.

    With ``A0, B0`` the gauge of the first correction, the scaled correction is
    ``g^(1/4) xi Phi_xi + (Phi_b0 + A0 Phi_A + B0 Phi_B + A0^2 Phi_AA + A0 B0 Phi_AB
    + B0^2 Phi_BB) / mu``. The last three carry the part of the coupling that is
    quadratic in the gauge. Each block has its own affine constants ``(a, b)``
    from the base normalization.
    """

    blocks: dict
    constants: dict

    def affine(
        self, g: float, mu: float, xi: float, gauge: tuple[float, float] = (0.0, 0.0)
    ) -> tuple[np.ndarray, np.ndarray]:
        """``(a1, b1)`` as affine functions of ``(A0, B0)``: coefficient vectors ``[const, A0, B0]``.

        The terms quadratic in the gauge are evaluated at ``gauge`` and folded
        into the constant, so the vectors are exact when ``gauge = (A0, B0)``.
        """
        A, B = gauge
        c = self.constants
        out = []
        for j in (0, 1):
            quad = A * A * c["A0A0"][j] + A * B * c["A0B0"][j] + B * B * c["B0B0"][j]
            out.append(
                np.array([
                    g**0.25 * xi * c["xi"][j] + (c["b0"][j] + quad) / mu,
                    c["A0"][j] / mu,
                    c["B0"][j] / mu,
                ])
            )
        return out[0], out[1]

    def weights(self, g: float, mu: float, xi: float, A0: float, B0: float) -> dict:
        return {
            "xi": g**0.25 * xi,
            "b0": 1.0 / mu,
            "A0": A0 / mu,
            "B0": B0 / mu,
            "A0A0": A0 * A0 / mu,
            "A0B0": A0 * B0 / mu,
            "B0B0": B0 * B0 / mu,
        }

    def combine(self, g: float, mu: float, xi: float, A0: float, B0: float):
        phi = phit = None
        a = b = 0.0
        for name, c in self.weights(g, mu, xi, A0, B0).items():
            p, pt = self.blocks[name]
            phi = p.scaled(c) if phi is None else phi + p.scaled(c)
            phit = pt.scaled(c) if phit is None else phit + pt.scaled(c)
            a += c * self.constants[name][0]
            b += c * self.constants[name][1]
        return phi, phit, a, b


@dataclass(frozen=True, eq=False)
class InnerCorrections:
    """First and second inner corrections in scaled form.

    ``phi0`` multiplies ``g^(-1/2)`` and ``phi1`` multiplies ``g^(-3/4)`` when the
    inner solution is assembled; both include their polynomial growth and gauge.
    """

    phi0: Curve
    phi0_tilde: Curve
    b0: float
    A0: float
    B0: float
    Z: Curve
    Z_tilde: Curve
    base0: tuple
    b0_integral: float
    phi1: Curve | None = None
    phi1_tilde: Curve | None = None
    a1: float | None = None
    b1: float | None = None
    A1: float = 0.0
    B1: float = 0.0
    blocks: Phi1Blocks | None = None

    @property
    def has_phi1(self) -> bool:
        return self.phi1 is not None


def _radial_rhs0(profile: BlowupProfile, r0: float, dim: int):
    m = (dim - 1) / r0
    return m * profile.U.dy, m * profile.V.dy


def compute_phi0(
    profile: BlowupProfile,
    r0: float,
    dim: int,
    gauge: tuple[float, float] = (0.0, 0.0),
    antisym_tol: float = 1e-8,
) -> InnerCorrections:
    """First inner correction: ``L(phi0) = (n-1)/r0 (U', V')`` with quadratic growth peeled by ``Z``."""
    if r0 <= 0.0:
        raise ValueError("r0 must be positive")
    psi0 = profile.psi0
    m = (dim - 1) / r0
    peel = PolynomialPeel(c0_plus=m * psi0, c0_minus=-m * psi0)
    Z, Zt = peel.curves(profile.grid)
    H, Ht = _radial_rhs0(profile, r0, dim)
    LZ, LZt = apply_L(profile, Z, Zt)
    F0, F0t = H - LZ, Ht - LZt
    c = profile.grid.center
    anti = float(np.max(np.abs(F0t[::-1] + F0)))
    if anti > antisym_tol * max(1.0, float(np.max(np.abs(F0)))):
        raise ProfileError("antisymmetry", f"max|F0~(-t) + F0(t)| = {anti:.3e}")
    _check_decay(profile, F0, F0t, "decay")
    sol = solve_linearized_growth(profile, F0, F0t)
    base = (sol.Phi + Z, sol.PhiTilde + Zt)
    A0, B0 = gauge
    ku, kv = _kernel_curves(profile, A0, B0)
    log.debug("phi0: b0 = %.12g, centre value %.3e", sol.b, base[0].y[c])
    return InnerCorrections(
        phi0=base[0] + ku,
        phi0_tilde=base[1] + kv,
        b0=sol.b,
        A0=float(A0),
        B0=float(B0),
        Z=Z,
        Z_tilde=Zt,
        base0=base,
        b0_integral=sol.b_integral,
    )


def phi1_blocks(
    profile: BlowupProfile,
    corr: InnerCorrections,
    r0: float,
    dim: int,
    f_prime0: float,
    h_prime0: float,
) -> Phi1Blocks:
    """Solve the four linear blocks of the second inner correction once."""
    t, psi0, k = profile.t, profile.psi0, profile.k
    U, V = profile.U, profile.V
    m = (dim - 1) / r0
    m2 = (dim - 1) / r0**2
    (k1u, k1v), (k2u, k2v) = profile.kernel()
    b0 = corr.b0
    p0, p0t = corr.base0
    k1, k2 = (k1u, k1v), (k2u, k2v)
    base = (p0, p0t)

    def quad(x, y):
        # coupling terms of g u v^2 and g v u^2 bilinear in the first correction
        (xu, xv), (yu, yv) = x, y
        return (
            U.y * xv.y * yv.y + V.y * (xu.y * yv.y + xv.y * yu.y),
            V.y * xu.y * yu.y + U.y * (xu.y * yv.y + xv.y * yu.y),
        )

    def minus(c, pair):
        return -c * pair[0], -c * pair[1]

    qbb, qb1, qb2 = quad(base, base), minus(2.0, quad(base, k1)), minus(2.0, quad(base, k2))
    rhs = {
        "xi": (-m2 * U.dy, -m2 * V.dy),
        "b0": (
            -m2 * t * U.dy + m * p0.dy - f_prime0 * U.y - qbb[0],
            -m2 * t * V.dy + m * p0t.dy - h_prime0 * V.y - qbb[1],
        ),
        "A0": (m * k1u.dy + qb1[0], m * k1v.dy + qb1[1]),
        "B0": (m * k2u.dy + qb2[0], m * k2v.dy + qb2[1]),
        "A0A0": minus(1.0, quad(k1, k1)),
        "A0B0": minus(2.0, quad(k1, k2)),
        "B0B0": minus(1.0, quad(k2, k2)),
    }
    peels = {
        "xi": PolynomialPeel(c0_plus=-m2 * psi0, c0_minus=m2 * psi0),
        "b0": PolynomialPeel(
            c1_plus=-(m2 + m * m + f_prime0) * psi0,
            c0_plus=m * b0 - f_prime0 * k,
            c1_minus=(m2 + m * m + h_prime0) * psi0,
            c0_minus=m * b0 - h_prime0 * k,
        ),
        "A0": PolynomialPeel(),
        "B0": PolynomialPeel(c0_plus=2 * m * psi0, c0_minus=-2 * m * psi0),
        "A0A0": PolynomialPeel(),
        "A0B0": PolynomialPeel(),
        "B0B0": PolynomialPeel(),
    }
    blocks, consts = {}, {}
    for name in rhs:
        p, pt, sol = _solve_peeled(profile, *rhs[name], peels[name], f"decay_{name}")
        blocks[name] = (p, pt)
        consts[name] = (0.5 * (sol.a_plus + sol.a_minus), sol.b)
    return Phi1Blocks(blocks, consts)


def compute_phi1(
    profile: BlowupProfile,
    corr: InnerCorrections,
    r0: float,
    dim: int,
    f_prime0: float,
    h_prime0: float,
    g: float,
    mu: float,
    xi: float,
    B0: float | None = None,
    A0: float | None = None,
    gauge: tuple[float, float] = (0.0, 0.0),
    blocks: Phi1Blocks | None = None,
) -> InnerCorrections:
    """Second inner correction for given matching parameters.

    ``B0`` and ``A0`` default to the gauge already stored with the first
    correction; when given they replace it, so ``phi0`` is regauged too.
    """
    if g <= 0.0 or mu <= 0.0:
        raise ValueError("g and mu must be positive")
    A0 = corr.A0 if A0 is None else float(A0)
    B0 = corr.B0 if B0 is None else float(B0)
    if blocks is None:
        blocks = phi1_blocks(profile, corr, r0, dim, f_prime0, h_prime0)
    phi, phit, a1, b1 = blocks.combine(g, mu, xi, A0, B0)
    A1, B1 = gauge
    ku, kv = _kernel_curves(profile, A1, B1)
    k0u, k0v = _kernel_curves(profile, A0, B0)
    return InnerCorrections(
        phi0=corr.base0[0] + k0u,
        phi0_tilde=corr.base0[1] + k0v,
        b0=corr.b0, A0=A0, B0=B0, Z=corr.Z, Z_tilde=corr.Z_tilde,
        base0=corr.base0, b0_integral=corr.b0_integral,
        phi1=phi + ku, phi1_tilde=phit + kv, a1=a1, b1=b1,
        A1=float(A1), B1=float(B1), blocks=blocks,
    )
