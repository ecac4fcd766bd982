"""Command-line driver: ``gpseg <subcommand> --config <path>``.

Exit status: 0 on success, 1 when ``verify`` finds a failing check, 2 for a
bad config or bad flags, 3 when a preflight gate fails.
"""

from __future__ import annotations

import argparse
import contextlib
import datetime as dt
import hashlib
import json
import logging
import math
import pickle
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .assembly import (
    ConstructionData,
    MeshError,
    compute_remainder,
    construct,
    overlap_estimates,
    remainder_arrays,
)
from .blowup import ProfileError, compute_phi0, phi1_blocks, solve_profile
from .config import ConfigError, ExperimentConfig, load_config
from .matching import MatchingError
from .outer import DegenerateInputError, check_nondegeneracy, compute_corrections, solve_limit_problem
from .radial_core import NewtonError
from .solver import PositivityError, RateFitError, solve_ladder, verify_rates
from . import verify as checks

log = logging.getLogger("gpseg")

EXIT_OK, EXIT_FAILED_CHECK, EXIT_CONFIG, EXIT_GATE = 0, 1, 2, 3
EXIT_INTERNAL = 70
SCHEMA = "gpseg-report/1"
SUBCOMMANDS = ("profile", "outer", "construct", "solve", "sweep", "verify")


class GateFailure(RuntimeError):
    def __init__(self, gate: str, message: str):
        super().__init__(f"gate '{gate}' failed: {message}")
        self.gate = gate


@contextlib.contextmanager
def gate(stage: str):
    """Translate solver errors raised inside ``stage`` into a named gate failure."""
    try:
        yield
    except DegenerateInputError as exc:
        raise GateFailure("nondegeneracy", str(exc)) from exc
    except MatchingError as exc:
        raise GateFailure("matching-conditioning", str(exc)) from exc
    except ProfileError as exc:
        raise GateFailure(exc.gate, str(exc)) from exc
    except MeshError as exc:
        raise GateFailure("mesh", str(exc)) from exc
    except PositivityError as exc:
        raise GateFailure("positivity", str(exc)) from exc
    except NewtonError as exc:
        raise GateFailure("newton-convergence", str(exc)) from exc
    except RateFitError as exc:
        raise GateFailure("rate-fit", str(exc)) from exc
    except ValueError as exc:
        raise GateFailure(stage, str(exc)) from exc


def g_tag(g: float) -> str:
    return f"{g:.3e}".replace("+", "")


def clean(x):
    """JSON-ready copy: numpy scalars to Python, tuples to lists, non-finite floats to None."""
    if isinstance(x, dict):
        return {str(k): clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [clean(v) for v in x]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def validate_report(report: dict) -> None:
    """Every number sits in a section that, or whose ancestor, names the producing operation."""

    def walk(node, path, covered):
        if isinstance(node, dict):
            covered = covered or "source" in node
            has_numbers = any(isinstance(v, (int, float)) and not isinstance(v, bool) for v in node.values())
            if has_numbers and not covered:
                raise ValueError(f"report section {path} has numbers but no 'source'")
            for k, v in node.items():
                walk(v, f"{path}.{k}", covered)

    for key in ("schema", "config_hash", "subcommand", "config", "stages"):
        if key not in report:
            raise ValueError(f"report is missing '{key}'")
    walk(report["stages"], "stages", False)


class ArtifactWriter:
    """The one place files are written; it keeps the manifest's file list complete."""

    def __init__(self, root: Path):
        self.root = root
        self.files: list[dict] = []
        root.mkdir(parents=True, exist_ok=True)

    def _record(self, path: Path) -> None:
        data = path.read_bytes()
        rel = path.relative_to(self.root).as_posix()
        self.files = [f for f in self.files if f["path"] != rel]
        self.files.append({"path": rel, "bytes": len(data), "sha256": hashlib.sha256(data).hexdigest()})

    def csv(self, name: str, columns: dict) -> Path:
        path = self.root / name
        table = np.column_stack([np.asarray(c, dtype=float) for c in columns.values()])
        np.savetxt(path, table, fmt="%.17g", delimiter=",", header=",".join(columns), comments="")
        self._record(path)
        return path

    def json(self, name: str, obj) -> Path:
        path = self.root / name
        path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")
        self._record(path)
        return path

    def pickle(self, name: str, obj) -> Path:
        path = self.root / name
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as fh:
            pickle.dump(obj, fh, protocol=pickle.HIGHEST_PROTOCOL)
        self._record(path)
        return path


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


class Run:
    def __init__(self, cfg: ExperimentConfig, subcommand: str, out: Path, threads: int, config_path: str):
        self.cfg = cfg
        self.subcommand = subcommand
        self.writer = ArtifactWriter(out)
        self.threads = threads
        self.config_path = config_path
        self.started = _now()
        self.stage_status: dict[str, str] = {}
        self.stages: dict = {}

    # -- caching -----------------------------------------------------------

    def _cache(self, kind: str, key: dict, build):
        digest = hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()[:20]
        path = self.writer.root / "cache" / f"{kind}-{digest}.pkl"
        if path.exists():
            try:
                with open(path, "rb") as fh:
                    obj = pickle.load(fh)
                log.info("%s: loaded from %s", kind, path)
                return obj, True
            except (OSError, pickle.UnpicklingError, EOFError, AttributeError):
                log.warning("%s: unreadable cache %s, recomputing", kind, path)
        obj = build()
        self.writer.pickle(path.relative_to(self.writer.root).as_posix(), obj)
        return obj, False

    # -- stages ------------------------------------------------------------

    def outer(self):
        cfg = self.cfg
        key = {
            "dim": cfg.dim, "domain": cfg.domain, "f": cfg.f, "h": cfg.h,
            "base_count": cfg.grid.base_count, "layer_halfwidth": cfg.grid.layer_halfwidth,
            "layer_refinement": cfg.grid.layer_refinement,
        }

        def build():
            limit = solve_limit_problem(
                cfg.f_nl, cfg.h_nl, cfg.dim, inner_radius=cfg.inner_radius, base_count=cfg.grid.base_count,
                layer_halfwidth=cfg.grid.layer_halfwidth, layer_refinement=cfg.grid.layer_refinement,
            )
            expansion = compute_corrections(limit)
            return limit, expansion

        with gate("limit-problem"):
            (limit, expansion), cached = self._cache("outer", key, build)
            nd = check_nondegeneracy(limit, expansion)
        self.stage_status["outer"] = "pass (cached)" if cached else "pass"
        w = limit.w
        self.writer.csv("limit.csv", {"r": w.nodes, "w": w.values})
        for name, fams in (("u", expansion.u), ("v", expansion.v)):
            cols = {"r": fams[0].nodes}
            cols.update({f"{name}{i}": fun.values for i, fun in enumerate(fams)})
            self.writer.csv(f"outer_{name}.csv", cols)
        self.stages["outer"] = {
            "source": "outer.solve_limit_problem",
            "r0": limit.r0,
            "psi0": limit.psi0,
            "center_value": limit.center_value,
            "slope_left": limit.slope_left,
            "slope_right": limit.slope_right,
            "shooting_parameter": limit.shooting_parameter,
            "grid_nodes": limit.grid.size,
            "newton_iterations": limit.report.iterations if limit.report else None,
            "boundary_data": {"source": "outer.compute_corrections", **expansion.boundary_data},
            "nondegeneracy": {
                "source": "outer.check_nondegeneracy",
                "sigma_min_w": nd.sigma_min_w,
                "sigma_min_u0": nd.sigma_min_u0,
                "sigma_min_v0": nd.sigma_min_v0,
                "slope_gap": nd.slope_gap,
            },
        }
        return limit, expansion

    def profile(self, limit):
        b = self.cfg.blowup
        key = {"psi0": repr(limit.psi0), "T": b.T, "n_nodes": b.n_nodes}
        with gate("profile"):
            prof, cached = self._cache("profile", key, lambda: solve_profile(limit.psi0, b.T, b.n_nodes))
        self.stage_status["profile"] = "pass (cached)" if cached else "pass"
        self.writer.csv(
            "profile.csv", {"t": prof.t, "U": prof.U.y, "V": prof.V.y, "dU": prof.U.dy, "dV": prof.V.dy}
        )
        self.stages["profile"] = {
            "source": "blowup.solve_profile",
            "psi0": prof.psi0,
            "k": prof.k,
            "k_check": prof.k_check,
            "symmetry_defect": prof.symmetry_defect,
            "residual": prof.residual,
            "decay_rate": prof.decay_rate,
            "T": prof.T,
            "n_nodes": int(prof.t.size),
        }
        return prof

    def construction(self) -> ConstructionData:
        limit, expansion = self.outer()
        prof = self.profile(limit)
        with gate("inner-corrections"):
            phi0 = compute_phi0(prof, limit.r0, limit.dim)
            blocks = phi1_blocks(prof, phi0, limit.r0, limit.dim, limit.f.slope_at_zero, limit.h.slope_at_zero)
        self.stage_status["inner"] = "pass"
        self.stages["inner"] = {"source": "blowup.compute_phi0", "b0": phi0.b0, "b0_integral": phi0.b0_integral}
        return ConstructionData(limit, expansion, prof, phi0, blocks)

    def record_construct(self, ap) -> None:
        tag = g_tag(ap.g)
        rem = compute_remainder(ap)
        ov = overlap_estimates(ap)
        R1, R2 = remainder_arrays(ap)
        self.writer.csv(
            f"construct_g{tag}.csv",
            {"r": ap.grid.nodes, "u": ap.u_ap.values, "v": ap.v_ap.values, "zeta": ap.zeta, "R1": R1, "R2": R2},
        )
        par = asdict(ap.params)
        par.update(mu=ap.params.mu, delta=ap.params.delta, delta_tilde=ap.params.delta_tilde)
        c = ap.cutoff
        self.stages.setdefault("construct", {})[tag] = {
            "source": "assembly.construct",
            "g": ap.g,
            "matching": {"source": "matching.solve_all", **par},
            "cutoff": {
                "source": "assembly.build_cutoff",
                "inner_edge": c.inner_edge, "outer_edge": c.outer_edge, "scale": c.scale, "C1": c.C1, "C2": c.C2,
            },
            "overlap": {"source": "assembly.overlap_estimates", **{k: v for k, v in asdict(ov).items() if k != "g"}},
            "remainder": {
                "source": "assembly.compute_remainder",
                "sup_inner": rem.sup_inner,
                "sup_inner_weighted": rem.sup_inner_weighted,
                "exp_tail_check": rem.exp_tail_check,
                "zero_outside": rem.zero_outside,
                "outer_tolerance": rem.outer_tolerance,
                "outer_scale": rem.outer_scale,
            },
        }
        self.stage_status[f"construct/{tag}"] = "pass"

    def record_solve(self, sol) -> None:
        tag = g_tag(sol.g)
        ap = sol.approximation
        self.writer.csv(
            f"solve_g{tag}.csv",
            {
                "r": ap.grid.nodes, "u": sol.u.values, "v": sol.v.values, "phi": sol.phi, "psi": sol.psi,
                "log_u": sol.log_values("u"), "log_v": sol.log_values("v"),
            },
        )
        entry = {"source": "solver.newton_full", "g": sol.g, **sol.diagnostics}
        entry["residual_history"] = list(sol.report.relative_history)
        entry["converged"] = sol.report.converged
        self.stages.setdefault("solve", {})[tag] = entry
        self.stage_status[f"solve/{tag}"] = "pass"

    def g_values(self, override) -> list[float]:
        return [float(override)] if override is not None else list(self.cfg.g_list)

    def construct_all(self, data, gs) -> dict:
        out = {}
        for g in gs:
            with gate("construct"):
                ap = construct(data, g, self.cfg.grid.cutoff_scale, self.cfg.tolerances.outer)
            self.record_construct(ap)
            out[g] = ap
        return out

    def solve_all(self, data, gs) -> dict:
        cfg = self.cfg
        with gate("solve"):
            sols = solve_ladder(
                data, gs, workers=self.threads, cutoff_scale=cfg.grid.cutoff_scale,
                outer_tol=cfg.tolerances.outer, tol=cfg.tolerances.newton, gamma=cfg.gamma,
            )
        for sol in sols.values():
            self.record_construct(sol.approximation)
            self.record_solve(sol)
        return sols

    # -- output ------------------------------------------------------------

    def report(self) -> dict:
        cfg = self.cfg.to_dict()
        del cfg["output"]
        rep = clean({
            "schema": SCHEMA,
            "version": __version__,
            "subcommand": self.subcommand,
            "config_hash": self.cfg.digest(),
            "config": cfg,
            "stages": self.stages,
        })
        validate_report(rep)
        return rep

    def manifest(self, status: int, error: str | None = None) -> dict:
        return {
            "schema": "gpseg-manifest/1",
            "version": __version__,
            "subcommand": self.subcommand,
            "config_file": self.config_path,
            "config_hash": self.cfg.digest(),
            "started": self.started,
            "finished": _now(),
            "exit_status": status,
            "error": error,
            "stages": self.stage_status,
            "files": sorted(self.writer.files, key=lambda f: f["path"]),
        }


def _verify(run: Run, data: ConstructionData, sols: dict) -> bool:
    cfg = run.cfg
    approx = {g: s.approximation for g, s in sols.items()}
    limit = data.limit
    results = [
        checks.check_profile(),
        checks.check_scaling(),
        checks.check_growth(seed=cfg.seed),
        checks.check_outer_order(limit, data.expansion),
        checks.check_closed_forms(seed=cfg.seed),
        checks.check_magnitude_laws(data, sorted(sols)),
        checks.check_overlap(approx),
        checks.check_remainder(approx),
        checks.check_newton(sols),
    ]
    with gate("rate-fit"):
        c10, c11, rates = checks.check_rates(sols)
    results += [c10, c11, checks.check_probe(approx, cfg.probe_samples, cfg.seed, cfg.gamma)]
    for res in results:
        print(res.line(), flush=True)
        run.stage_status[f"check/{res.number}"] = "pass" if res.passed else "fail"
    run.stages["rates"] = {name: {"source": "solver.fit_rate", **r.to_dict()} for name, r in rates.items()}
    run.stages["acceptance"] = {str(r.number): r.to_dict() for r in results}
    passed = all(r.passed for r in results)
    print(f"{sum(r.passed for r in results)}/{len(results)} checks passed", flush=True)
    return passed


def execute(run: Run, g_override) -> int:
    sub = run.subcommand
    if sub == "outer":
        run.outer()
        return EXIT_OK
    if sub == "profile":
        limit, _ = run.outer()
        run.profile(limit)
        return EXIT_OK
    data = run.construction()
    gs = run.g_values(g_override)
    if sub == "construct":
        run.construct_all(data, gs)
        return EXIT_OK
    sols = run.solve_all(data, gs)
    if sub in ("solve", "sweep"):
        if sub == "sweep" and len(gs) >= 4:
            with gate("rate-fit"):
                rates = verify_rates(sols)
            run.stages["rates"] = {name: {"source": "solver.fit_rate", **r.to_dict()} for name, r in rates.items()}
        return EXIT_OK
    return EXIT_OK if _verify(run, data, sols) else EXIT_FAILED_CHECK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gpseg", description="Segregated radial solutions of a coupled GP system.")
    p.add_argument("--version", action="version", version=f"gpseg {__version__}")
    sub = p.add_subparsers(dest="subcommand", required=True)
    helps = {
        "profile": "solve the blow-up profile (cached)",
        "outer": "limit problem, outer expansion and non-degeneracy report",
        "construct": "matching, gluing and remainder report per g",
        "solve": "Newton solve per g",
        "sweep": "construct and solve the full ladder",
        "verify": "sweep plus rate fits and the acceptance checks",
    }
    for name in SUBCOMMANDS:
        s = sub.add_parser(name, help=helps[name])
        s.add_argument("--config", required=True, help="experiment config (JSON)")
        s.add_argument("--g", type=float, help="run a single coupling value instead of the ladder")
        s.add_argument("--out", help="output directory (overrides the config)")
        s.add_argument("--threads", type=int, default=1, help="worker processes for ladder solves")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = load_config(args.config)
        if args.threads < 1:
            raise ConfigError("--threads", "must be at least 1")
        if args.g is not None:
            if args.subcommand in ("profile", "outer", "verify"):
                raise ConfigError("--g", f"not accepted by '{args.subcommand}'")
            if not math.isfinite(args.g) or args.g < 1e3:
                raise ConfigError("--g", "must be at least 1e3")
        if args.subcommand == "verify":
            gs = cfg.g_list
            if len(gs) < 4 or math.log10(gs[-1] / gs[0]) < 2.0:
                raise ConfigError("g_list", "verify needs at least 4 values spanning 2 decades")
    except ConfigError as exc:
        print(f"gpseg: config error in {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = Path(args.out if args.out else cfg.output)
    run = Run(cfg, args.subcommand, out, args.threads, str(args.config))
    status, error = EXIT_INTERNAL, "interrupted by an unexpected error"
    try:
        status = execute(run, args.g)
        run.writer.json("report.json", run.report())
        error = None
    except GateFailure as exc:
        status, error = EXIT_GATE, str(exc)
        print(f"gpseg: {exc}", file=sys.stderr)
    finally:
        run.writer.json("manifest.json", run.manifest(status, error))
    return status


if __name__ == "__main__":
    sys.exit(main())
