"""Experiment configuration: JSON in, validated dataclass out."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .nonlinearity import Nonlinearity


class ConfigError(ValueError):
    """A config field is missing, of the wrong type or out of range."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


DEFAULT_LADDER = (1e4, 1e5, 1e6, 1e7, 1e8)


@dataclass(frozen=True)
class GridConfig:
    base_count: int = 20000
    layer_halfwidth: float = 0.05
    layer_refinement: int = 8
    cutoff_scale: float = 0.08


@dataclass(frozen=True)
class BlowupConfig:
    T: float = 6.0
    n_nodes: int = 8001


@dataclass(frozen=True)
class Tolerances:
    newton: float = 1e-9
    outer: float = 1e-10


@dataclass(frozen=True)
class ExperimentConfig:
    dim: int = 3
    inner_radius: float = 0.0
    f: dict = field(default_factory=lambda: {"kind": "power", "lam": 0.0, "p": 1.0})
    h: dict = field(default_factory=lambda: {"kind": "power", "lam": 0.0, "p": 1.0})
    g_list: tuple[float, ...] = DEFAULT_LADDER
    grid: GridConfig = GridConfig()
    blowup: BlowupConfig = BlowupConfig()
    tolerances: Tolerances = Tolerances()
    gamma: float = 0.5
    output: str = "out"
    seed: int = 0
    probe_samples: int = 20

    @property
    def f_nl(self) -> Nonlinearity:
        return Nonlinearity.from_dict(self.f)

    @property
    def h_nl(self) -> Nonlinearity:
        return Nonlinearity.from_dict(self.h)

    @property
    def domain(self) -> dict:
        if self.inner_radius == 0.0:
            return {"kind": "ball"}
        return {"kind": "annulus", "inner_radius": self.inner_radius}

    def to_dict(self) -> dict:
        d = asdict(self)
        del d["inner_radius"]
        d["domain"] = self.domain
        d["g_list"] = list(self.g_list)
        return d

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form; the output directory is not part of the experiment."""
        d = self.to_dict()
        del d["output"]
        text = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def _number(d: dict, key: str, path: str, default, kind=float):
    if key not in d:
        return default
    x = d[key]
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ConfigError(path, f"expected a number, got {x!r}")
    if kind is int:
        if isinstance(x, float) and not x.is_integer():
            raise ConfigError(path, f"expected an integer, got {x!r}")
        return int(x)
    if not math.isfinite(x):
        raise ConfigError(path, "must be finite")
    return float(x)


def _section(d: dict, key: str) -> dict:
    sec = d.get(key, {})
    if not isinstance(sec, dict):
        raise ConfigError(key, "expected an object")
    return sec


def _check_keys(d: dict, allowed, prefix: str = "") -> None:
    for k in d:
        if k not in allowed:
            raise ConfigError(prefix + k, "unknown field")


def _nonlinearity(d: dict, key: str) -> dict:
    entry = d.get(key, {"kind": "power", "lam": 0.0, "p": 1.0})
    if not isinstance(entry, dict):
        raise ConfigError(key, "expected an object such as {\"kind\": \"power\", \"lam\": 0, \"p\": 1}")
    kind = entry.get("kind")
    names = {"cubic": ("a", "b"), "power": ("lam", "p")}.get(kind)
    if names is None:
        raise ConfigError(f"{key}.kind", f"must be 'cubic' or 'power', got {kind!r}")
    _check_keys(entry, ("kind",) + names, f"{key}.")
    out = {"kind": kind}
    for n in names:
        if n not in entry:
            raise ConfigError(f"{key}.{n}", "missing")
        out[n] = _number(entry, n, f"{key}.{n}", None)
    try:
        Nonlinearity.from_dict(out)
    except ValueError as exc:
        raise ConfigError(key, str(exc)) from None
    return out


def config_from_dict(d: dict) -> ExperimentConfig:
    if not isinstance(d, dict):
        raise ConfigError("<root>", "expected a JSON object")
    _check_keys(d, ("dim", "domain", "f", "h", "g_list", "grid", "blowup", "tolerances",
                    "gamma", "output", "seed", "probe_samples"))
    dim = _number(d, "dim", "dim", 3, int)
    if dim < 2:
        raise ConfigError("dim", "must be at least 2")

    dom = _section(d, "domain")
    _check_keys(dom, ("kind", "inner_radius"), "domain.")
    kind = dom.get("kind", "ball")
    if kind == "ball":
        if "inner_radius" in dom:
            raise ConfigError("domain.inner_radius", "a ball has no inner radius")
        a = 0.0
    elif kind == "annulus":
        if "inner_radius" not in dom:
            raise ConfigError("domain.inner_radius", "missing")
        a = _number(dom, "inner_radius", "domain.inner_radius", None)
        if not 0.0 < a < 1.0:
            raise ConfigError("domain.inner_radius", "must lie in (0, 1)")
    else:
        raise ConfigError("domain.kind", f"must be 'ball' or 'annulus', got {kind!r}")

    gl = d.get("g_list", list(DEFAULT_LADDER))
    if not isinstance(gl, list) or not gl:
        raise ConfigError("g_list", "expected a non-empty list of numbers")
    g_list = tuple(_number({"g": x}, "g", f"g_list[{i}]", None) for i, x in enumerate(gl))
    for i, g in enumerate(g_list):
        if g < 1e3:
            raise ConfigError(f"g_list[{i}]", f"must be at least 1e3, got {g:g}")
    if any(b <= a_ for a_, b in zip(g_list, g_list[1:])):
        raise ConfigError("g_list", "must be strictly increasing")

    gs = _section(d, "grid")
    _check_keys(gs, ("base_count", "layer_halfwidth", "layer_refinement", "cutoff_scale"), "grid.")
    grid = GridConfig(
        base_count=_number(gs, "base_count", "grid.base_count", 20000, int),
        layer_halfwidth=_number(gs, "layer_halfwidth", "grid.layer_halfwidth", 0.05),
        layer_refinement=_number(gs, "layer_refinement", "grid.layer_refinement", 8, int),
        cutoff_scale=_number(gs, "cutoff_scale", "grid.cutoff_scale", 0.08),
    )
    if grid.base_count < 100:
        raise ConfigError("grid.base_count", "must be at least 100")
    if not 0.0 < grid.layer_halfwidth < 0.5:
        raise ConfigError("grid.layer_halfwidth", "must lie in (0, 0.5)")
    if grid.layer_refinement < 1:
        raise ConfigError("grid.layer_refinement", "must be a positive integer")
    if not 0.0 < grid.cutoff_scale <= 1.0:
        raise ConfigError("grid.cutoff_scale", "must lie in (0, 1]")

    bs = _section(d, "blowup")
    _check_keys(bs, ("T", "n_nodes"), "blowup.")
    blowup = BlowupConfig(
        T=_number(bs, "T", "blowup.T", 6.0),
        n_nodes=_number(bs, "n_nodes", "blowup.n_nodes", 8001, int),
    )
    if blowup.T < 6.0:
        raise ConfigError("blowup.T", "must be at least 6")
    if blowup.n_nodes < 2001 or blowup.n_nodes % 2 == 0:
        raise ConfigError("blowup.n_nodes", "must be odd and at least 2001")

    ts = _section(d, "tolerances")
    _check_keys(ts, ("newton", "outer"), "tolerances.")
    tol = Tolerances(
        newton=_number(ts, "newton", "tolerances.newton", 1e-9),
        outer=_number(ts, "outer", "tolerances.outer", 1e-10),
    )
    for name in ("newton", "outer"):
        if not 0.0 < getattr(tol, name) < 1.0:
            raise ConfigError(f"tolerances.{name}", "must lie in (0, 1)")

    gamma = _number(d, "gamma", "gamma", 0.5)
    if not 0.0 < gamma < 1.0:
        raise ConfigError("gamma", f"must lie in (0, 1), got {gamma:g}")
    output = d.get("output", "out")
    if not isinstance(output, str) or not output:
        raise ConfigError("output", "expected a non-empty path string")
    seed = _number(d, "seed", "seed", 0, int)
    if not 0 <= seed < 2**64:
        raise ConfigError("seed", "must be an unsigned 64-bit integer")
    samples = _number(d, "probe_samples", "probe_samples", 20, int)
    if samples < 1:
        raise ConfigError("probe_samples", "must be positive")

    return ExperimentConfig(
        dim=dim, inner_radius=a, f=_nonlinearity(d, "f"), h=_nonlinearity(d, "h"),
        g_list=g_list, grid=grid, blowup=blowup, tolerances=tol, gamma=gamma,
        output=output, seed=seed, probe_samples=samples,
    )


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from None
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return config_from_dict(d)
