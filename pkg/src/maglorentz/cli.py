"""Command-line front end: config parsing, subcommands, file outputs.

Configuration is a flat key = value file ('#' comments) with command-line
--set overrides; every output file carries the full configuration in '#'
header lines and prints floats with 17 significant digits so the files
round-trip bit for bit.

Exit codes: 0 success, 1 usage or config error, 2 runtime failure,
3 selfcheck failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass, field, replace

from . import boltzmann, coupling, density, lorentz, stats
from .field import FieldConfig, ScattererField, default_cell_side
from .geometry import (
    Diagnostics,
    MagneticConfig,
    ParticleState,
    advance_free,
    reflect,
    rotate,
    scatter,
    unit,
)
from .rng import Stream, derive_seed


class ConfigError(ValueError):
    pass


def _fmt(x: float) -> str:
    return format(x, ".17g")


# key -> (parser, short description); None default means derived later
_SCHEMA: dict[str, tuple] = {}


def _key(name, parse, default, doc):
    _SCHEMA[name] = (parse, default, doc)


def _parse_bool(s: str) -> bool:
    s = s.strip().lower()
    if s in ("true", "1", "yes", "on"):
        return True
    if s in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_floats(s: str) -> tuple[float, ...]:
    return tuple(float(p) for p in s.split(",") if p.strip())


def _parse_vec2(s: str) -> tuple[float, float]:
    parts = _parse_floats(s)
    if len(parts) != 2:
        raise ValueError(f"need two comma-separated numbers, got {s!r}")
    return parts


_key("B", float, 4.0, "magnetic field magnitude")
_key("eps", _parse_floats, (0.01,), "disk radius, or comma list for sweeps")
_key("horizon", float, None, "time horizon (default 3 periods)")
_key("n", int, 1000, "ensemble size")
_key("n_density", int, None, "samples per density grid (default n)")
_key("n_paths", int, 100, "coupling corpus size")
_key("seed", int, 1, "global seed")
_key("start", _parse_vec2, (0.0, 0.0), "start position")
_key("v0", _parse_vec2, (1.0, 0.0), "start velocity (normalized)")
_key("f0", str, "point", "initial datum: point or gaussian")
_key("f0_sigma", float, None, "gaussian width (default Larmor radius)")
_key("grid_nx", int, 64, "position bins in x")
_key("grid_ny", int, 64, "position bins in y")
_key("grid_na", int, 32, "velocity angle bins")
_key("grid_half_width", float, None, "box half width (default 4 radii)")
_key("cell_side", float, None, "field cell side (default max(4 eps, R/2))")
_key("workers", int, 1, "worker processes")
_key("out_dir", str, "out", "output directory")
_key("time", float, None, "evaluation time for density (default horizon)")
_key("include_circling_after_T", _parse_bool, False, "keep circling mass past one period")
_key("strict_paper_circling", _parse_bool, False, "freeze circling phase after one period")
_key("include_arcs", _parse_bool, False, "emit arc polylines in JSONL")
_key("arc_samples", int, 16, "polyline points per arc")
_key("pathology_tol", float, None, "pathology tolerance (default coupling eps)")


@dataclass(frozen=True)
class RunConfig:
    values: dict = field(default_factory=dict)
    warnings: tuple[str, ...] = ()

    def __getattr__(self, name):
        try:
            return self.values[name]
        except KeyError:
            raise AttributeError(name)

    # Derived quantities -------------------------------------------------
    @property
    def cfg(self) -> MagneticConfig:
        return MagneticConfig(self.values["B"])

    @property
    def horizon_or_default(self) -> float:
        h = self.values["horizon"]
        return 3.0 * self.cfg.period if h is None else h

    @property
    def start_state(self) -> ParticleState:
        return ParticleState(self.values["start"], unit(self.values["v0"]))

    @property
    def grid_spec(self) -> density.GridSpec:
        hw = self.values["grid_half_width"]
        if hw is None:
            hw = 4.0 * self.cfg.radius
        return density.GridSpec(
            self.values["start"], hw,
            self.values["grid_nx"], self.values["grid_ny"], self.values["grid_na"],
        )

    def initial_datum(self):
        if self.values["f0"] == "point":
            return density.PointMass(self.values["start"], unit(self.values["v0"]))
        if self.values["f0"] == "gaussian":
            sigma = self.values["f0_sigma"] or self.cfg.radius
            return density.GaussianIsotropic(self.values["start"], sigma)
        raise ConfigError(f"unknown f0 kind: {self.values['f0']!r}")

    def cell_side_for(self, eps: float) -> float:
        return self.values["cell_side"] or default_cell_side(eps, self.cfg.radius)

    def header_lines(self) -> list[str]:
        lines = []
        for key in sorted(self.values):
            if key in ("workers", "out_dir"):
                continue  # execution details; outputs stay byte-stable across them
            v = self.values[key]
            if isinstance(v, tuple):
                text = ", ".join(_fmt(p) if isinstance(p, float) else str(p) for p in v)
            elif isinstance(v, float):
                text = _fmt(v)
            else:
                text = str(v)
            lines.append(f"# {key} = {text}")
        return lines


def parse_config(path: str | None, overrides: list[str] | None = None) -> RunConfig:
    """Read a key = value file, apply --set overrides, validate."""
    values = {k: default for k, (_, default, _) in _SCHEMA.items()}

    def apply(key: str, text: str, where: str):
        key = key.strip()
        if key not in _SCHEMA:
            raise ConfigError(f"unknown key {key!r} in {where}")
        parse = _SCHEMA[key][0]
        try:
            values[key] = parse(text.strip())
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r} in {where}: {exc}") from exc

    if path is not None:
        try:
            lines = open(path).read().splitlines()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
        for lineno, line in enumerate(lines, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, text = line.split("=", 1)
            apply(key, text, f"{path}:{lineno}")
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set needs key=value, got {item!r}")
        key, text = item.split("=", 1)
        apply(key, text, "--set")

    warnings = []
    if not values["B"] > 0.0:
        raise ConfigError("B must be positive")
    radius = 1.0 / values["B"]
    for eps in values["eps"]:
        if not eps > 0.0:
            raise ConfigError("eps must be positive")
        if eps >= radius / 4.0:
            warnings.append(
                f"eps = {_fmt(eps)} is not small against the Larmor radius "
                f"{_fmt(radius)}; return-loop geometry degenerates as eps -> R"
            )
    if values["horizon"] is not None and not values["horizon"] > 0.0:
        raise ConfigError("horizon must be positive")
    if values["n"] < 1:
        raise ConfigError("n must be at least 1")
    return RunConfig(values=values, warnings=tuple(warnings))


# --------------------------------------------------------------------------
# Output helpers


def _open_out(config: RunConfig, name: str):
    os.makedirs(config.out_dir, exist_ok=True)
    return open(os.path.join(config.out_dir, name), "w")


def _write_csv(config: RunConfig, name: str, columns: list[str], rows) -> str:
    path = os.path.join(config.out_dir, name)
    with _open_out(config, name) as f:
        for line in config.header_lines():
            f.write(line + "\n")
        f.write(",".join(columns) + "\n")
        for row in rows:
            f.write(",".join(_cell(v) for v in row) + "\n")
    return path


def _cell(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return _fmt(v)
    return str(v)


def _state_json(st: ParticleState) -> dict:
    return {"x": [st.x[0], st.x[1]], "v": [st.v[0], st.v[1]]}


def _record_json(record: lorentz.TrajectoryRecord, include_arcs: bool, arc_samples: int) -> dict:
    out = {
        "initial": _state_json(record.initial),
        "horizon": record.horizon,
        "circling": record.circling,
        "events": [
            {
                "t": ev.time,
                "id": ev.obstacle_id,
                "nx": ev.n[0],
                "ny": ev.n[1],
                "kind": ev.kind,
                "theta": ev.theta,
            }
            for ev in record.events
        ],
    }
    if include_arcs:
        cfg = record.cfg
        pts = []
        for arc in record.arcs:
            for j in range(arc_samples + 1):
                st = advance_free(arc.state, arc.duration * j / arc_samples, cfg)
                pts.append([st.x[0], st.x[1]])
        out["arcs"] = pts
    return out


def _flow_json(path_obj: boltzmann.BoltzmannPath, flow, cfg, include_arcs, arc_samples) -> dict:
    out = {
        "circling": path_obj.circling,
        "events": [{"t": t, "nx": n[0], "ny": n[1]} for t, n in path_obj.events],
        "k": list(path_obj.k(cfg)),
    }
    if include_arcs:
        pts = []
        for seg in flow.segments:
            for j in range(arc_samples + 1):
                st = advance_free(seg.state, seg.duration * j / arc_samples, cfg)
                pts.append([st.x[0], st.x[1]])
        out["arcs"] = pts
    return out


# --------------------------------------------------------------------------
# Subcommands


def _cmd_selfcheck(config: RunConfig) -> int:
    cfg = config.cfg
    failures = []
    xs = boltzmann._total_cross_section(4096)
    if abs(xs - boltzmann.COLLISION_RATE) > 1e-6:
        failures.append(f"cross-section quadrature {xs!r} != 2")
    rng = Stream(derive_seed(config.seed, "selfcheck"))
    for k in (1, 2, 3):
        st = ParticleState((0.3, -0.2), unit((0.6, 0.8)))
        moved = advance_free(st, k * cfg.period, cfg)
        err = math.hypot(moved.x[0] - st.x[0], moved.x[1] - st.x[1])
        if err > 1e-10:
            failures.append(f"free flow not {k}-periodic: drift {err!r}")
    for _ in range(100):
        ang = rng.uniform_in(0.0, math.tau)
        n = (math.cos(ang), math.sin(ang))
        ang_v = rng.uniform_in(ang + math.pi / 2, ang + 3 * math.pi / 2)
        v = (math.cos(ang_v), math.sin(ang_v))
        back = scatter(n, scatter(n, v))
        err = math.hypot(back[0] - v[0], back[1] - v[1])
        if err > 1e-13:
            failures.append(f"reflection not an involution: error {err!r}")
            break
    eps = config.eps[0]
    c = (0.0, 0.0)
    st = ParticleState((eps, 0.0), (-1.0, 0.0))
    refl = reflect(st, c, eps)
    if math.hypot(refl.v[0] - 1.0, refl.v[1]) > 1e-13:
        failures.append("head-on reflection did not reverse the velocity")
    for line in failures:
        print(f"selfcheck: FAIL: {line}", file=sys.stderr)
    if failures:
        return 3
    print("selfcheck: ok")
    return 0


def _cmd_simulate_lorentz(config: RunConfig) -> int:
    eps = config.eps[0]
    horizon = config.horizon_or_default
    opts = lorentz.EnsembleOptions(
        B=config.B,
        eps=eps,
        start_x=config.start,
        start_v=unit(config.v0),
        horizon=horizon,
        n=config.n,
        seed=config.seed,
        cell_side=config.cell_side_for(eps),
    )
    summary_rows = []
    with _open_out(config, "trajectories.jsonl") as jf:
        for index in range(config.n):
            record = lorentz.run_indexed_trajectory(opts, index)
            jf.write(json.dumps(_record_json(record, config.include_arcs, config.arc_samples)) + "\n")
            s = lorentz.summarize_record(record, opts, index)
            summary_rows.append(
                (
                    index,
                    s.n_impacts,
                    s.n_self,
                    s.n_other,
                    s.circling,
                    s.first_impact_time if s.first_impact_time is not None else float("nan"),
                )
            )
    path = _write_csv(
        config,
        "summary.csv",
        [
            "trajectory_index",
            "n_impacts",
            "n_self_recollisions",
            "n_other_recollisions",
            "circling",
            "first_impact_time",
        ],
        summary_rows,
    )
    print(path)
    return 0


def _cmd_simulate_boltzmann(config: RunConfig) -> int:
    cfg = config.cfg
    horizon = config.horizon_or_default
    start = config.start_state
    with _open_out(config, "paths.jsonl") as jf:
        for index in range(config.n):
            rng = Stream(derive_seed(config.seed, "boltzmann", index))
            path_obj = boltzmann.sample_path(horizon, cfg, start, rng)
            flow = boltzmann.build_flow(path_obj, cfg, start)
            jf.write(
                json.dumps(
                    _flow_json(path_obj, flow, cfg, config.include_arcs, config.arc_samples)
                )
                + "\n"
            )
    print(os.path.join(config.out_dir, "paths.jsonl"))
    return 0


def _cmd_density(config: RunConfig, process: str) -> int:
    cfg = config.cfg
    t = config.time if config.time is not None else config.horizon_or_default
    spec = config.grid_spec
    if process == "boltzmann":
        grid = density.estimate_density(
            t,
            config.initial_datum(),
            config.n_density or config.n,
            config.include_circling_after_T,
            spec,
            cfg,
            config.seed,
            config.workers,
        )
    else:
        eps = config.eps[0]
        grid = density.lorentz_density(
            t,
            eps,
            config.n_density or config.n,
            config.include_circling_after_T,
            spec,
            cfg,
            config.start_state,
            config.seed,
            config.workers,
            config.cell_side_for(eps),
        )
    rows = []
    nx, ny, na = spec.nx, spec.ny, spec.na
    for ix in range(nx):
        for iy in range(ny):
            for ia in range(na):
                m = grid.masses[ix, iy, ia]
                if m != 0.0:
                    rows.append((ix, iy, ia, m))
    rows.append((-1, -1, -1, grid.outside_mass))
    path = _write_csv(config, f"density_{process}.csv", ["ix", "iy", "ia", "mass"], rows)
    print(path)
    print(f"total_mass = {_fmt(grid.total_mass)}")
    return 0


def _cmd_couple(config: RunConfig) -> int:
    cfg = config.cfg
    start = config.start_state
    horizon = config.horizon_or_default
    eps_list = sorted(config.eps, reverse=True)
    corpus = coupling.build_coupling_corpus(
        config.n_paths, horizon, cfg, start, config.seed, eps_list[0],
        pathology_tol=config.pathology_tol,
    )
    rows = []
    for path_id, path_obj in corpus:
        flow = boltzmann.build_flow(path_obj, cfg, start)
        for eps in eps_list:
            tol = config.pathology_tol or eps
            flags = coupling.detect_pathologies(path_obj, flow, tol)
            try:
                pair = coupling.couple(path_obj, eps, cfg, start)
                sup_dev, max_vel = coupling.deviation(pair)
                admissible = True
            except coupling.InadmissiblePathError:
                sup_dev, max_vel, admissible = float("nan"), float("nan"), False
            rows.append(
                (
                    path_id,
                    eps,
                    path_obj.m,
                    sum(path_obj.k(cfg)),
                    sup_dev,
                    max_vel,
                    admissible,
                    flags.returned_to_old_point,
                    flags.interfered_with_past,
                )
            )
    path = _write_csv(
        config,
        "coupling.csv",
        ["path_id", "eps", "m", "sum_k", "sup_dev", "max_vel_dev", "admissible", "flag_R", "flag_I"],
        rows,
    )
    print(path)
    return 0


def _cmd_converge(config: RunConfig) -> int:
    report = stats.convergence_table(
        config.eps,
        config.cfg,
        config.start_state,
        config.horizon_or_default,
        config.n,
        config.seed,
        config.grid_spec,
        config.n_density,
        config.workers,
    )
    rows = [
        (
            r.eps,
            r.n,
            r.circling_fraction,
            r.circling_lo,
            r.circling_hi,
            r.ks_first_impact,
            r.tv_collision_count,
            r.l1_density_without_circling,
            r.l1_density_with_circling,
            r.other_recollision_fraction,
        )
        for r in report.rows
    ]
    path = _write_csv(
        config,
        "convergence.csv",
        [
            "eps",
            "n",
            "circling_fraction",
            "circling_lo",
            "circling_hi",
            "ks_first_impact",
            "tv_collision_count",
            "l1_density_without_circling",
            "l1_density_with_circling",
            "other_recollision_fraction",
        ],
        rows,
    )
    for r in report.rows:
        print(f"eps={_fmt(r.eps)}: runtime {r.runtime_seconds:.1f}s", file=sys.stderr)
    print(path)
    return 0


def _cmd_dump_field(config: RunConfig, rect: list[float]) -> int:
    eps = config.eps[0]
    field_obj = ScattererField(
        FieldConfig(
            eps=eps,
            seed=derive_seed(config.seed, "field", 0),
            excluded_point=config.start,
            cell_side=config.cell_side_for(eps),
        )
    )
    x_lo, x_hi, y_lo, y_hi = rect
    rows = [(s.id, s.c[0], s.c[1]) for s in field_obj.scatterers_in_rect(x_lo, x_hi, y_lo, y_hi)]
    path = _write_csv(config, "field.csv", ["id", "cx", "cy"], rows)
    print(path)
    return 0


# --------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maglorentz",
        description="Magnetic Lorentz gas simulator and its low-density limit process",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (
        "selfcheck",
        "simulate-lorentz",
        "simulate-boltzmann",
        "density",
        "couple",
        "converge",
        "dump-field",
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="key = value config file")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a config key (repeatable)",
        )
        p.add_argument("--out", default=None, help="output directory")
        if name == "density":
            p.add_argument("--process", choices=("lorentz", "boltzmann"), default="boltzmann")
        if name == "dump-field":
            p.add_argument("--rect", nargs=4, type=float, required=True,
                           metavar=("XMIN", "XMAX", "YMIN", "YMAX"))
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        config = parse_config(args.config, args.overrides)
        if args.out is not None:
            config = RunConfig(values={**config.values, "out_dir": args.out},
                               warnings=config.warnings)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    for w in config.warnings:
        print(f"warning: {w}", file=sys.stderr)
    try:
        if args.command == "selfcheck":
            return _cmd_selfcheck(config)
        if args.command == "simulate-lorentz":
            return _cmd_simulate_lorentz(config)
        if args.command == "simulate-boltzmann":
            return _cmd_simulate_boltzmann(config)
        if args.command == "density":
            return _cmd_density(config, args.process)
        if args.command == "couple":
            return _cmd_couple(config)
        if args.command == "converge":
            return _cmd_converge(config)
        if args.command == "dump-field":
            return _cmd_dump_field(config, args.rect)
        raise AssertionError(f"unhandled command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure: one-line reason, exit 2
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
