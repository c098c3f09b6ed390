"""Batch front end: configuration, scenario dispatch and run artifacts.

A run directory receives ``config.yaml`` (effective configuration echo),
``version.txt``, ``history.csv``, ``steps.log``, ``points.csv`` for monitored
points and optional legacy-VTK snapshots under ``snapshots/``.
"""

from __future__ import annotations

import argparse
import csv
import logging
import platform
import subprocess
import sys
from pathlib import Path
from typing import Any, Literal

import numpy as np
import scipy
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from . import __version__
from .assembly import AssemblyError
from .bench import SCENARIOS, SWEEP_COLUMNS, Problem, ScenarioSpec, build_problem, builtin_sweeps, point_value, run_sweep, simulate
from .diagnostics import HistoryWriter
from .material import MaterialError
from .solver import ConvergenceError, SolverError

__all__ = ["ConfigError", "RunConfig", "parse_config", "run", "run_sweep_cli", "write_vtk", "main"]

log = logging.getLogger("emelasto")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_MESH = 4


class ConfigError(ValueError):
    pass


class SolverOverrides(BaseModel):
    model_config = ConfigDict(extra="forbid")
    gamma: float | None = Field(None, ge=0)
    formula: Literal["gonzalez", "scaled", "coaxial", "midpoint"] | None = None
    tol_b: float | None = Field(None, ge=0)
    elasticity: Literal["corrected", "conventional"] | None = None
    dt: float | None = Field(None, gt=0)
    steps: int | None = Field(None, ge=0)
    tol_r: float | None = Field(None, gt=0)
    tol_a: float | None = Field(None, gt=0)
    l_max: int | None = Field(None, ge=1)
    on_failure: Literal["abort", "halve", "accept"] | None = None


class OutputOptions(BaseModel):
    model_config = ConfigDict(extra="forbid")
    dir: str = "run"
    snapshot_every: int = Field(0, ge=0)
    snapshot_samples: int = Field(2, ge=1)


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")
    scenario: str = "twisting_column"
    custom: dict[str, Any] = {}
    solver: SolverOverrides = SolverOverrides()
    output: OutputOptions = OutputOptions()

    def scenario_spec(self) -> ScenarioSpec:
        if self.scenario == "custom":
            base: dict = {}
        elif self.scenario in SCENARIOS:
            base = SCENARIOS[self.scenario]().model_dump()
        else:
            raise ConfigError(f"scenario: unknown scenario {self.scenario!r}; choose from {sorted(SCENARIOS)} or 'custom'")
        merged = {**base, **self.custom}
        merged.update({k: v for k, v in self.solver.model_dump().items() if v is not None})
        return ScenarioSpec(**merged)


def _line_index(text: str) -> dict:
    """Map key paths to 1-based source lines using the YAML node marks."""
    out: dict = {}
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return out

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                p = path + (k.value,)
                out[p] = k.start_mark.line + 1
                walk(v, p)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                out[path + (i,)] = v.start_mark.line + 1
                walk(v, path + (i,))

    if root is not None:
        walk(root, ())
    return out


def _format_errors(exc: ValidationError, lines: dict, prefix=()) -> str:
    msgs = []
    for err in exc.errors():
        loc = prefix + tuple(err["loc"])
        key = ".".join(str(x) for x in loc) or "<root>"
        line = None
        for n in range(len(loc), 0, -1):
            if loc[:n] in lines:
                line = lines[loc[:n]]
                break
        where = f"line {line}: " if line else ""
        msgs.append(f"{where}{key}: {err['msg']}")
    return "; ".join(msgs)


def parse_config(text: str) -> tuple[RunConfig, ScenarioSpec]:
    """Validate a YAML run configuration and resolve the effective scenario."""
    try:
        data = yaml.safe_load(text) if text.strip() else {}
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}: " if mark else ""
        raise ConfigError(f"{where}malformed YAML: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("top level of the configuration must be a mapping")
    lines = _line_index(text)
    try:
        cfg = RunConfig(**data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc, lines)) from exc
    try:
        spec = cfg.scenario_spec()
    except ValidationError as exc:
        # custom keys and solver overrides both land on the scenario spec
        fixed = []
        for err in exc.errors():
            k = err["loc"][0] if err["loc"] else None
            sect = "solver" if k in SolverOverrides.model_fields and k not in cfg.custom else "custom"
            fixed.append((sect, err))
        msgs = []
        for sect, err in fixed:
            loc = (sect,) + tuple(err["loc"])
            line = next((lines[loc[:n]] for n in range(len(loc), 0, -1) if loc[:n] in lines), None)
            where = f"line {line}: " if line else ""
            msgs.append(f"{where}{'.'.join(map(str, loc))}: {err['msg']}")
        raise ConfigError("; ".join(msgs)) from exc
    return cfg, spec


# ---------------------------------------------------------------------------
# outputs
# ---------------------------------------------------------------------------

def _commit() -> str:
    try:
        r = subprocess.run(
            ["git", "rev-parse", "HEAD"], cwd=Path(__file__).parent, capture_output=True, text=True, timeout=5
        )
        return r.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def write_stamp(path: Path):
    path.write_text(
        f"emelasto {__version__}\ncommit {_commit()}\npython {platform.python_version()}\n"
        f"numpy {np.__version__}\nscipy {scipy.__version__}\n"
    )


def _lattice(prob: Problem, samples: int):
    """Parametric sample lattice: ``samples`` subdivisions per element."""
    axes = []
    for kv in prob.disc.spaces.velocity.kvs:
        br = kv.breaks
        pts = [br[0]]
        for a, b in zip(br[:-1], br[1:]):
            pts.extend(a + (b - a) * np.arange(1, samples + 1) / samples)
        axes.append(np.array(pts))
    return axes


def write_vtk(path: Path, prob: Problem, state, samples: int = 2):
    """Legacy ASCII unstructured grid of hexahedra with U, V, P point data."""
    axes = _lattice(prob, samples)
    n1, n2, n3 = (len(a) for a in axes)
    vel = prob.disc.spaces.velocity
    pres = prob.disc.spaces.pressure
    geom = prob.disc.geometry
    cp = geom.control_points.reshape(-1, 3, order="F")
    pts, u, v, p = [], [], [], []
    for k in range(n3):
        for j in range(n2):
            for i in range(n1):
                xi = (axes[0][i], axes[1][j], axes[2][k])
                gi, gv, _ = geom.space.eval_point(xi)
                idx, val, _ = vel.eval_point(xi)
                pidx, pval, _ = pres.eval_point(xi)
                pts.append(gv @ cp[gi])
                u.append(val @ state.U[idx])
                v.append(val @ state.V[idx])
                p.append(pval @ state.P[pidx])
    pts = np.array(pts)

    def nid(i, j, k):
        return i + n1 * (j + n2 * k)

    cells = []
    for k in range(n3 - 1):
        for j in range(n2 - 1):
            for i in range(n1 - 1):
                cells.append(
                    [nid(i, j, k), nid(i + 1, j, k), nid(i + 1, j + 1, k), nid(i, j + 1, k),
                     nid(i, j, k + 1), nid(i + 1, j, k + 1), nid(i + 1, j + 1, k + 1), nid(i, j + 1, k + 1)]
                )
    out = [
        "# vtk DataFile Version 3.0",
        f"emelasto t={state.t!r}",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {len(pts)} double",
    ]
    out += [" ".join(repr(float(c)) for c in x) for x in pts]
    out.append(f"CELLS {len(cells)} {9 * len(cells)}")
    out += ["8 " + " ".join(map(str, c)) for c in cells]
    out.append(f"CELL_TYPES {len(cells)}")
    out += ["12"] * len(cells)
    out.append(f"POINT_DATA {len(pts)}")
    for name, arr in (("displacement", u), ("velocity", v)):
        out.append(f"VECTORS {name} double")
        out += [" ".join(repr(float(c)) for c in x) for x in arr]
    out += ["SCALARS pressure double 1", "LOOKUP_TABLE default"]
    out += [repr(float(x)) for x in p]
    path.write_text("\n".join(out) + "\n")


def run(cfg: RunConfig, spec: ScenarioSpec, out: Path | None = None) -> int:
    """Execute a scenario and write all artifacts; returns the exit status."""
    out = Path(cfg.output.dir if out is None else out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(
        yaml.safe_dump({"run": cfg.model_dump(mode="json"), "effective_scenario": spec.model_dump(mode="json")}, sort_keys=False)
    )
    write_stamp(out / "version.txt")
    try:
        prob = build_problem(spec)
    except (AssemblyError, ValueError) as exc:
        log.error("mesh/setup error: %s", exc)
        return EXIT_MESH

    snap_dir = out / "snapshots"
    every = cfg.output.snapshot_every
    logf = open(out / "steps.log", "w")
    hist = HistoryWriter(out / "history.csv")
    pfh = open(out / "points.csv", "w", newline="")
    pw = csv.writer(pfh)
    pw.writerow(["t", "point", "ux", "uy", "uz", "vx", "vy", "vz"])

    def on_step(n, s, rec, rep):
        hist.write(rec)
        for name, x in spec.points.items():
            pw.writerow([repr(s.t), name, *map(repr, map(float, point_value(prob, s.U, x))), *map(repr, map(float, point_value(prob, s.V, x)))])
        if rep is not None:
            logf.write(
                f"step {n} t={s.t!r} iters={rep.iterations} converged={rep.converged} "
                f"criterion={rep.criterion} residuals={' '.join(f'{r:.3e}' for r in rep.residuals)}\n"
            )
            logf.flush()
        if every and n % every == 0:
            snap_dir.mkdir(exist_ok=True)
            write_vtk(snap_dir / f"step_{n:06d}.vtk", prob, s, cfg.output.snapshot_samples)

    status = EXIT_OK
    try:
        simulate(prob, on_step=on_step)
    except ConvergenceError as exc:
        log.error("%s", exc)
        logf.write(f"FAILED: {exc}\n")
        status = EXIT_SOLVER
    except (AssemblyError, MaterialError, SolverError) as exc:
        log.error("%s", exc)
        logf.write(f"FAILED: {exc}\n")
        status = EXIT_MESH if isinstance(exc, (AssemblyError, MaterialError)) else EXIT_SOLVER
    finally:
        hist.close()
        logf.close()
        pfh.close()
    return status


def run_sweep_cli(names, out: Path, n: int | None = None) -> list:
    out.mkdir(parents=True, exist_ok=True)
    specs = builtin_sweeps()
    written = []
    for name in names:
        spec = specs[name]
        if n is not None:
            from dataclasses import replace

            spec = replace(spec, n=n)
        rows = run_sweep(spec)
        path = out / f"sweep_{name}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(SWEEP_COLUMNS)
            for r in rows:
                w.writerow([repr(r.xi), repr(r.dC_norm), repr(r.S_enh_norm), repr(r.denominator), repr(r.defect)])
        written.append(path)
    return written


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="emelasto", description="Energy-momentum consistent incompressible elastodynamics")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="run a scenario")
    r.add_argument("--config", type=Path)
    r.add_argument("--scenario", help="scenario name (overrides the config file)")
    r.add_argument("--out", type=Path)
    r.add_argument("--gamma", type=float)
    r.add_argument("--formula", choices=["gonzalez", "scaled", "coaxial", "midpoint"])
    r.add_argument("--elasticity", choices=["corrected", "conventional"])
    r.add_argument("--dt", type=float)
    r.add_argument("--steps", type=int)
    r.add_argument("--snapshot-every", type=int)

    s = sub.add_parser("sweep", help="material-point robustness sweeps")
    s.add_argument("--case", action="append", choices=sorted(builtin_sweeps()), help="repeatable; default all")
    s.add_argument("--out", type=Path, default=Path("sweeps"))
    s.add_argument("-n", type=int, help="number of xi samples")

    sub.add_parser("scenarios", help="list built-in scenarios")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.cmd == "scenarios":
        for name, fn in SCENARIOS.items():
            sp = fn()
            print(f"{name}: elements={sp.elements} p={sp.p} dt={sp.dt} steps={sp.steps} faces={list(sp.tractions) + list(sp.dirichlet_faces)}")
        for name in builtin_sweeps():
            print(f"sweep:{name}")
        return EXIT_OK
    if args.cmd == "sweep":
        names = args.case or list(builtin_sweeps())
        for p in run_sweep_cli(names, args.out, args.n):
            print(p)
        return EXIT_OK

    text = args.config.read_text() if args.config else ""
    try:
        cfg, _ = parse_config(text)
        data = cfg.model_dump(exclude_unset=True)
        if args.scenario:
            data["scenario"] = args.scenario
        solver = dict(data.get("solver") or {})
        for key in ("gamma", "formula", "elasticity", "dt", "steps"):
            val = getattr(args, key)
            if val is not None:
                solver[key] = val
        output = dict(data.get("output") or {})
        if args.out is not None:
            output["dir"] = str(args.out)
        if args.snapshot_every is not None:
            output["snapshot_every"] = args.snapshot_every
        data["solver"], data["output"] = solver, output
        # flags are validated again on top of the file contents
        cfg, spec = parse_config(yaml.safe_dump(data, sort_keys=False))
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    status = run(cfg, spec)
    print(f"{'ok' if status == 0 else 'failed'}: {cfg.output.dir}")
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
