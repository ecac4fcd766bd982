"""Reaction terms ``f`` with derivatives up to third order."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Nonlinearity:
    """``cubic(a, b)``: ``a u^3 + b u``; ``power(lam, p)``: ``lam u - u |u|^(2p)``."""

    kind: str
    params: tuple[float, float]

    def __post_init__(self) -> None:
        if self.kind not in ("cubic", "power"):
            raise ValueError(f"unknown nonlinearity kind {self.kind!r}")
        if len(self.params) != 2 or not all(np.isfinite(self.params)):
            raise ValueError("nonlinearity needs two finite parameters")
        if self.kind == "power" and self.params[1] < 1.0:
            # |u|^(2p-2) must stay bounded for the third derivative to exist
            raise ValueError("power nonlinearity requires p >= 1")

    @classmethod
    def cubic(cls, a: float, b: float) -> "Nonlinearity":
        return cls("cubic", (float(a), float(b)))

    @classmethod
    def power(cls, lam: float, p: float) -> "Nonlinearity":
        return cls("power", (float(lam), float(p)))

    @classmethod
    def from_dict(cls, entry: dict) -> "Nonlinearity":
        kind = entry.get("kind")
        if kind == "cubic":
            return cls.cubic(entry["a"], entry["b"])
        if kind == "power":
            return cls.power(entry["lam"], entry["p"])
        raise ValueError(f"unknown nonlinearity kind {kind!r}")

    def to_dict(self) -> dict:
        if self.kind == "cubic":
            return {"kind": "cubic", "a": self.params[0], "b": self.params[1]}
        return {"kind": "power", "lam": self.params[0], "p": self.params[1]}

    def __call__(self, u):
        return self.f(u)

    def f(self, u):
        u = np.asarray(u, dtype=float)
        c1, c2 = self.params
        if self.kind == "cubic":
            return c1 * u**3 + c2 * u
        return c1 * u - u * np.abs(u) ** (2.0 * c2)

    def df(self, u):
        u = np.asarray(u, dtype=float)
        c1, c2 = self.params
        if self.kind == "cubic":
            return 3.0 * c1 * u**2 + c2
        return c1 - (2.0 * c2 + 1.0) * np.abs(u) ** (2.0 * c2)

    def d2f(self, u):
        u = np.asarray(u, dtype=float)
        c1, c2 = self.params
        if self.kind == "cubic":
            return 6.0 * c1 * u
        return -(2.0 * c2 + 1.0) * (2.0 * c2) * u * np.abs(u) ** (2.0 * c2 - 2.0)

    def d3f(self, u):
        u = np.asarray(u, dtype=float)
        c1, c2 = self.params
        if self.kind == "cubic":
            return np.full_like(u, 6.0 * c1)
        return -(2.0 * c2 + 1.0) * (2.0 * c2) * (2.0 * c2 - 1.0) * np.abs(u) ** (2.0 * c2 - 2.0)

    @property
    def slope_at_zero(self) -> float:
        return float(self.df(0.0))

    def polynomial(self) -> np.ndarray | None:
        """Monomial coefficients when ``f`` is a polynomial, else ``None``."""
        c1, c2 = self.params
        if self.kind == "cubic":
            return np.array([0.0, c2, 0.0, c1])
        if float(c2).is_integer():
            deg = 2 * int(c2) + 1
            coef = np.zeros(deg + 1)
            coef[1] += c1
            coef[deg] -= 1.0
            return coef
        return None

    def increment(self, u, e):
        """``f(u + e) - f(u)`` without cancellation when ``f`` is a polynomial."""
        u = np.asarray(u, dtype=float)
        e = np.asarray(e, dtype=float)
        coef = self.polynomial()
        if coef is None:
            return self.f(u + e) - self.f(u)
        # (u+e)^k - u^k = e * sum_j u^j (u+e)^(k-1-j)
        out = np.zeros(np.broadcast(u, e).shape)
        s = u + e
        for k in range(1, coef.size):
            if coef[k] == 0.0:
                continue
            acc = np.zeros_like(out)
            for j in range(k):
                acc = acc + u**j * s ** (k - 1 - j)
            out = out + coef[k] * acc
        return out * e
