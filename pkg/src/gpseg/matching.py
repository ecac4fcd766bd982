"""Matching of the outer family with the inner expansion.

Three 4x4 linear systems fix, order by order in ``g^(-1/4)``, the outer
boundary values ``delta_i, delta~_i``, the dilation ``mu = 1 + mu1``, the shift
``xi`` and the kernel gauges ``(A0, B0)``, ``(A1, B1)`` of the inner
corrections. Every system equates the ``s^0`` and ``s^1`` coefficients of the
outer and inner expansions about ``r0`` on each side.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

log = logging.getLogger(__name__)

COND_LIMIT = 1e10


class MatchingError(ValueError):
    """Raised for degenerate or ill-conditioned matching systems."""


@dataclass(frozen=True)
class MatchingInputs:
    psi0: float
    k: float
    b0: float
    u1p: float
    u2p: float
    u3p: float
    v1p: float
    v2p: float
    v3p: float
    u0pp: float
    v0pp: float
    u0ppp: float
    v0ppp: float
    f_prime0: float
    h_prime0: float
    r0: float
    dim: int
    g: float
    a1: float = 0.0
    b1: float = 0.0
    # a1 and b1 as affine maps of (A0, B0) once xi and mu are known; see with_blocks
    blocks: object = field(default=None, compare=False, repr=False)
    u1pp: float | None = None
    v1pp: float | None = None

    def __post_init__(self) -> None:
        if not self.psi0 > 0.0:
            raise ValueError("psi0 must be positive")
        if not self.g > 1.0:
            raise ValueError("g must exceed 1")
        if self.r0 <= 0.0:
            raise ValueError("r0 must be positive")

    @property
    def m(self) -> float:
        return (self.dim - 1) / self.r0

    @property
    def m2(self) -> float:
        return (self.dim - 1) / self.r0**2

    @property
    def eps(self) -> float:
        return self.g**-0.25

    @property
    def gap(self) -> float:
        return self.u1p - self.v1p

    def inner_affine(
        self, mu: float, xi: float, gauge: tuple[float, float] = (0.0, 0.0)
    ) -> tuple[np.ndarray, np.ndarray]:
        """``(a1, b1)`` as coefficient vectors over ``[1, A0, B0]``.

        Terms quadratic in ``(A0, B0)`` are frozen at ``gauge``.
        """
        if self.blocks is None:
            return np.array([self.a1, 0.0, 0.0]), np.array([self.b1, 0.0, 0.0])
        return self.blocks.affine(self.g, mu, xi, gauge)

    def at(self, g: float) -> "MatchingInputs":
        return replace(self, g=float(g))


def inputs_from(limit, expansion, profile, corrections, g: float, blocks=None) -> MatchingInputs:
    """Collect the scalars of the outer and inner pieces for one value of ``g``."""
    bd = expansion.boundary_data
    return MatchingInputs(
        psi0=profile.psi0,
        k=profile.k,
        b0=corrections.b0,
        u1p=bd["u1p"], u2p=bd["u2p"], u3p=bd["u3p"],
        v1p=bd["v1p"], v2p=bd["v2p"], v3p=bd["v3p"],
        u0pp=bd["u0pp"], v0pp=bd["v0pp"], u0ppp=bd["u0ppp"], v0ppp=bd["v0ppp"],
        u1pp=bd.get("u1pp"), v1pp=bd.get("v1pp"),
        f_prime0=limit.f.slope_at_zero,
        h_prime0=limit.h.slope_at_zero,
        r0=limit.r0,
        dim=limit.dim,
        g=float(g),
        blocks=blocks,
    )


@dataclass(frozen=True)
class MatchingParameters:
    xi: float
    mu1: float
    delta1: float
    delta_tilde1: float
    delta2: float = 0.0
    delta_tilde2: float = 0.0
    A0: float = 0.0
    B0: float = 0.0
    delta3: float = 0.0
    delta_tilde3: float = 0.0
    A1: float = 0.0
    B1: float = 0.0
    a1: float = 0.0
    b1: float = 0.0
    cond: tuple = ()
    det2: float = float("nan")

    @property
    def mu(self) -> float:
        return 1.0 + self.mu1

    @property
    def delta(self) -> float:
        return self.delta1 + self.delta2 + self.delta3

    @property
    def delta_tilde(self) -> float:
        return self.delta_tilde1 + self.delta_tilde2 + self.delta_tilde3


def _solve(mat: np.ndarray, rhs: np.ndarray, label: str) -> tuple[np.ndarray, float]:
    # columns are equilibrated first so the gate measures conditioning, not unit choice
    scale = np.max(np.abs(mat), axis=0)
    scale[scale == 0.0] = 1.0
    scaled = mat / scale
    cond = float(np.linalg.cond(scaled))
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise MatchingError(f"{label}: condition number {cond:.3e} exceeds {COND_LIMIT:.0e}")
    return np.linalg.solve(scaled, rhs) / scale, cond


def _check_gap(inp: MatchingInputs) -> None:
    if abs(inp.gap) < 1e-10:
        raise MatchingError(
            f"degenerate matching: u1'(r0) - v1'(r0) = {inp.gap:.3e}; the limit solution is degenerate"
        )


# ---------------------------------------------------------------------------
# order 1


def order1_system(inp: MatchingInputs) -> tuple[np.ndarray, np.ndarray]:
    """Rows (u s^0, u s^1, v s^0, v s^1) over unknowns (delta1, delta~1, mu1, xi)."""
    p, m, e = inp.psi0, inp.m, inp.eps
    mat = np.array([
        [1.0, 0.0, 0.0, p],
        [inp.u1p, 0.0, -2 * p, -m * p],
        [0.0, 1.0, 0.0, -p],
        [0.0, inp.v1p, 2 * p, m * p],
    ])
    rhs = np.array([e * inp.k, inp.b0 * e, e * inp.k, inp.b0 * e])
    return mat, rhs


def order1_closed_form(inp: MatchingInputs) -> dict:
    u, v, p, m, e, k, b0 = inp.u1p, inp.v1p, inp.psi0, inp.m, inp.eps, inp.k, inp.b0
    d = u - v
    xi = (u + v) / d / p * e * k - 2 / p * b0 * e / d
    mu1 = (
        -m / 2 * (u + v) / d / p * e * k
        - u * v / d / p * e * k
        + m / p / d * e * b0
        + (u + v) / (2 * d) / p * e * b0
    )
    delta1 = -2 * e * k * v / d + 2 / d * e * b0
    delta_tilde1 = 2 * e * k * u / d - 2 / d * e * b0
    return {"xi": xi, "mu1": mu1, "delta1": delta1, "delta_tilde1": delta_tilde1}


def solve_order1(inp: MatchingInputs) -> MatchingParameters:
    _check_gap(inp)
    mat, rhs = order1_system(inp)
    x, cond = _solve(mat, rhs, "order 1")
    d1, dt1, mu1, xi = (float(v) for v in x)
    return MatchingParameters(xi=xi, mu1=mu1, delta1=d1, delta_tilde1=dt1, cond=(cond,))


# ---------------------------------------------------------------------------
# order 2


def order2_system(
    inp: MatchingInputs, o1: MatchingParameters, gauge: tuple[float, float] = (0.0, 0.0)
) -> tuple[np.ndarray, np.ndarray]:
    """Rows (u s^0, u s^1, v s^0, v s^1) over unknowns (delta2, delta~2, A0, B0).

    Terms are listed as in the displayed equations; those carrying an unknown
    are moved to the left. ``b1`` enters through its affine dependence on
    ``(A0, B0)`` at the order-1 values of ``mu`` and ``xi``, with its small
    quadratic part frozen at ``gauge``.
    """
    p, m, m2, e, k, b0 = inp.psi0, inp.m, inp.m2, inp.eps, inp.k, inp.b0
    fp, hp = inp.f_prime0, inp.h_prime0
    mu1, xi, d1, dt1 = o1.mu1, o1.xi, o1.delta1, o1.delta_tilde1
    _, bvec = inp.inner_affine(1.0 + mu1, xi, gauge)
    e2 = e * e
    curv = (m2 + m * m) * p * xi**2 / 2

    mat = np.zeros((4, 4))
    rhs = np.zeros(4)

    # u, s^0:  delta2 = mu1 e k - 2 p mu1 xi - m/2 p xi^2 + e^2 (A0 p + B0 k) - 2 B0 p e xi - b0 e xi
    mat[0] = [1.0, 0.0, -e2 * p, -(e2 * k - 2 * p * e * xi)]
    rhs[0] = mu1 * e * k - 2 * p * mu1 * xi - m / 2 * p * xi**2 - b0 * e * xi

    # u, s^1
    b_A0, b_B0 = e2 * bvec[1], e2 * bvec[2]
    mat[1] = [
        inp.u1p,
        0.0,
        -b_A0,
        -(2 * e * p * mu1 + 2 * e * p + m * xi * e * 2 * p) - b_B0,
    ]
    rhs[1] = (
        -(d1**2) * inp.u2p
        + p * mu1**2
        + 2 * mu1 * m * p * xi
        + b0 * mu1 * e
        - m2 * xi**2 * p
        + curv
        + m * xi * e * b0
        + e * fp * (-k * xi + p * xi**2 / (2 * e))
        + e2 * bvec[0]
    )

    # v, s^0:  delta~2 = mu1 e k + 2 p mu1 xi + m/2 p xi^2 + e^2 (-A0 p + B0 k) + 2 B0 p e xi - b0 e xi
    mat[2] = [0.0, 1.0, e2 * p, -(e2 * k + 2 * p * e * xi)]
    rhs[2] = mu1 * e * k + 2 * p * mu1 * xi + m / 2 * p * xi**2 - b0 * e * xi

    # v, s^1
    mat[3] = [
        0.0,
        inp.v1p,
        -b_A0,
        (2 * e * p * mu1 + 2 * e * p + m * xi * e * 2 * p) - b_B0,
    ]
    rhs[3] = (
        -(dt1**2) * inp.v2p
        - p * mu1**2
        - 2 * mu1 * m * p * xi
        + b0 * mu1 * e
        + m2 * xi**2 * p
        - curv
        + m * xi * e * b0
        + e * hp * (-k * xi - p * xi**2 / (2 * e))
        + e2 * bvec[0]
    )
    return mat, rhs


def determinant_order2(inp: MatchingInputs, o1: MatchingParameters) -> float:
    """Determinant of the order-2 system with ``g^(-1/2) A0`` as unknown, normalized by ``-psi0``."""
    mat, _ = order2_system(inp, o1)
    mat = mat.copy()
    mat[:, 2] /= inp.eps**2
    return float(np.linalg.det(mat)) / -inp.psi0


def determinant_order2_expansion(inp: MatchingInputs) -> float:
    """Two-term expansion of the order-2 determinant in powers of ``g^(-1/4)``."""
    u, v, p, m, e, k, b0 = inp.u1p, inp.v1p, inp.psi0, inp.m, inp.eps, inp.k, inp.b0
    return 2 * p * (u - v) * e + 2 * (m / 2 * (u + v) * k + ((u + v) / 2 - m) * b0) * e * e


def solve_order2(inp: MatchingInputs, o1: MatchingParameters, max_sweeps: int = 20) -> MatchingParameters:
    """Order-2 parameters.

    The quadratic gauge terms of ``b1`` are resolved by re-solving with the
    previous ``(A0, B0)`` until the gauge stops moving; they enter at relative
    size ``g^(-1/2) |A0|`` so a few sweeps suffice.
    """
    _check_gap(inp)
    det = determinant_order2(inp, o1)
    if abs(det) < 1e-12:
        raise MatchingError(f"order 2: determinant {det:.3e} below 1e-12")
    gauge = (0.0, 0.0)
    for _ in range(max_sweeps):
        mat, rhs = order2_system(inp, o1, gauge)
        x, cond = _solve(mat, rhs, "order 2")
        d2, dt2, A0, B0 = (float(v) for v in x)
        moved = max(abs(A0 - gauge[0]), abs(B0 - gauge[1]))
        gauge = (A0, B0)
        if inp.blocks is None or moved <= 1e-14 * max(1.0, abs(A0), abs(B0)):
            break
    else:
        raise MatchingError(f"order 2: gauge iteration did not settle (last change {moved:.3e})")
    return replace(o1, delta2=d2, delta_tilde2=dt2, A0=A0, B0=B0, cond=o1.cond + (cond,), det2=det)


# ---------------------------------------------------------------------------
# order 3


def order3_system(inp: MatchingInputs, o2: MatchingParameters) -> tuple[np.ndarray, np.ndarray, float, float]:
    """Rows (u s^0, u s^1, v s^0, v s^1) over unknowns (delta3, delta~3, A1, B1)."""
    p, m, m2, e, k, b0 = inp.psi0, inp.m, inp.m2, inp.eps, inp.k, inp.b0
    fp, hp = inp.f_prime0, inp.h_prime0
    mu1, xi = o2.mu1, o2.xi
    d1, dt1, d2, dt2 = o2.delta1, o2.delta_tilde1, o2.delta2, o2.delta_tilde2
    B0 = o2.B0
    avec, bvec = inp.inner_affine(1.0 + mu1, xi, (o2.A0, o2.B0))
    coef = np.array([1.0, o2.A0, B0])
    a1, b1 = float(avec @ coef), float(bvec @ coef)
    e2, e3 = e * e, e**3
    c = m2 + m * m

    mat = np.zeros((4, 4))
    rhs = np.zeros(4)

    # u, s^0
    mat[0] = [1.0, 0.0, -e3 * p, -(e3 * k - 2 * e2 * p * xi)]
    rhs[0] = (
        -m * p * mu1 * xi**2
        + m2 / 2 * xi**3 * p
        - c * p * xi**3 / 6
        - m / 2 * xi**2 * e * (b0 + 2 * B0 * p)
        + e * fp * (k * xi**2 / 2 - p * xi**3 / (6 * e))
        - e2 * b1 * xi
        + e3 * a1
        - e * mu1 * xi * (b0 + 2 * B0 * p)
        - p * mu1**2 * xi
    )

    # u, s^1
    mat[1] = [inp.u1p, 0.0, 0.0, -(2 * e2 * mu1 * p + 2 * p * e2)]
    rhs[1] = (
        -2 * d1 * d2 * inp.u2p
        - d1**3 * inp.u3p
        + m * p * mu1**2 * xi
        - 2 * m2 * xi**2 * p * mu1
        + c * mu1 * p * xi**2
        + m * mu1 * xi * e * (b0 + 2 * B0 * p)
        + mu1 * e * fp * (-k * xi + p * xi**2 / e)
        + e2 * mu1 * b1
    )

    # v, s^0
    mat[2] = [0.0, 1.0, e3 * p, -(e3 * k + 2 * e2 * p * xi)]
    rhs[2] = (
        m * p * mu1 * xi**2
        - m2 / 2 * xi**3 * p
        + c * p * xi**3 / 6
        - m / 2 * xi**2 * e * (b0 - 2 * B0 * p)
        + e * hp * (k * xi**2 / 2 + p * xi**3 / (6 * e))
        - e2 * b1 * xi
        + e3 * a1
        - e * mu1 * xi * (b0 - 2 * B0 * p)
        + p * mu1**2 * xi
    )

    # v, s^1
    mat[3] = [0.0, inp.v1p, 0.0, 2 * e2 * mu1 * p + 2 * p * e2]
    rhs[3] = (
        -2 * dt1 * dt2 * inp.v2p
        - dt1**3 * inp.v3p
        - m * p * mu1**2 * xi
        + 2 * m2 * xi**2 * p * mu1
        - c * mu1 * p * xi**2
        + m * mu1 * xi * e * (b0 - 2 * B0 * p)
        + mu1 * e * hp * (-k * xi - p * xi**2 / e)
        + e2 * mu1 * b1
    )
    return mat, rhs, a1, b1


def solve_order3(inp: MatchingInputs, o2: MatchingParameters) -> MatchingParameters:
    _check_gap(inp)
    mat, rhs, a1, b1 = order3_system(inp, o2)
    x, cond = _solve(mat, rhs, "order 3")
    d3, dt3, A1, B1 = (float(v) for v in x)
    return replace(
        o2, delta3=d3, delta_tilde3=dt3, A1=A1, B1=B1, a1=a1, b1=b1, cond=o2.cond + (cond,)
    )


def solve_all(inp: MatchingInputs) -> MatchingParameters:
    o1 = solve_order1(inp)
    o2 = solve_order2(inp, o1)
    return solve_order3(inp, o2)


# ---------------------------------------------------------------------------
# s^2 and s^3 coefficients


@dataclass(frozen=True)
class S2S3Report:
    outer_s2: tuple
    inner_s2: tuple
    outer_s3: tuple
    inner_s3: tuple

    @property
    def s2_gap(self) -> float:
        return max(abs(a - b) for a, b in zip(self.outer_s2, self.inner_s2))

    @property
    def s3_gap(self) -> float:
        return max(abs(a - b) for a, b in zip(self.outer_s3, self.inner_s3))


def verify_s2_s3(inp: MatchingInputs, par: MatchingParameters) -> S2S3Report:
    """Compare the quadratic and cubic Taylor coefficients about ``r0`` on both sides."""
    p, m, m2, e, k, b0 = inp.psi0, inp.m, inp.m2, inp.eps, inp.k, inp.b0
    fp, hp = inp.f_prime0, inp.h_prime0
    mu, xi, B0 = par.mu, par.xi, par.B0
    u1pp = inp.u1pp if inp.u1pp is not None else fp - m * inp.u1p
    v1pp = inp.v1pp if inp.v1pp is not None else hp - m * inp.v1p
    outer_s2 = (
        (inp.u0pp + par.delta * u1pp) / 2,
        (inp.v0pp + par.delta_tilde * v1pp) / 2,
    )
    inner_u = (
        -m / 2 * p * mu**2
        + m2 / 2 * xi * p * mu**2
        - (m2 + m * m) * mu**2 * p * xi / 2
        - m * mu * e * (b0 / 2 + B0 * p)
        + mu * e * fp * (k / 2 - mu * p * xi / (2 * e))
    )
    # the v side mirrors the u side under psi0 -> -psi0
    inner_v = (
        m / 2 * p * mu**2
        - m2 / 2 * xi * p * mu**2
        + (m2 + m * m) * mu**2 * p * xi / 2
        - m * mu * e * (b0 / 2 - B0 * p)
        + mu * e * hp * (k / 2 + mu * p * xi / (2 * e))
    )
    outer_s3 = (inp.u0ppp / 6, inp.v0ppp / 6)
    inner_s3 = (
        (m2 + m * m + fp) * mu**2 * p / 6,
        -(m2 + m * m + hp) * mu**2 * p / 6,
    )
    return S2S3Report(outer_s2, (inner_u, inner_v), outer_s3, inner_s3)
