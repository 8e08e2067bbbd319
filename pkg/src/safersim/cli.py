"""Command-line interface.

Subcommands: ``design``, ``power-curve``, ``simulate`` and ``scenarios``.
A JSON config file (``--config``) supplies any setting; flags given on the
command line override it.  Unknown keys anywhere in the config are errors.

Exit codes: 0 success, 1 configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .allocation import AllocationPolicy
from .datagen import ASSOCIATION_LEVELS, AssociationModel, SafetyModel, ScenarioSpec
from .engine import EngineError
from .gsdesign import BoundaryError, TrialDesign, plan, power_table
from .harness import (
    SimulationSummary,
    builtin_scenarios,
    parse_selector,
    select_cells,
    simulate_replicates,
    summarize,
    trajectory_from_traces,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERIC = 2

FORMATS = ("csv", "json")
DEFAULT_PIS = (0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8)
DEFAULT_IFS = (0.2, 0.3, 0.4, 0.5)

SUMMARY_COLUMNS = (
    "scenario", "cell", "null", "n_replicates",
    "power", "power_se", "power1", "power1_se", "type1_error",
    "alloc_e", "alloc_e_se", "alloc_e_planned", "alloc_e_planned_se",
    "ae_rate", "ae_rate_se", "ae_rate_planned", "ae_rate_planned_se",
    "ae_rate_control", "ae_rate_experimental", "mean_n", "mean_events", "error",
)
POWER_COLUMNS = ("pi", "info_fraction", "events", "power1", "power")
TRAJECTORY_COLUMNS = ("scenario", "cell", "update_time", "median_pi", "q25", "q75")


class ConfigError(ValueError):
    """Invalid or unknown configuration."""


@dataclass(frozen=True)
class RunConfig:
    """Fully validated settings for one CLI invocation."""

    command: str
    design: TrialDesign = field(default_factory=TrialDesign)
    scenario: Optional[ScenarioSpec] = None
    scenario_id: Optional[str] = None
    cells: Optional[str] = None
    seed: int = 20240101
    replicates: int = 1000
    parallelism: int = 1
    out: Optional[str] = None
    format: str = "csv"
    trajectory: bool = False
    pis: tuple = DEFAULT_PIS
    info_fractions: tuple = DEFAULT_IFS

    def to_dict(self) -> dict:
        """Result-determining settings.  ``parallelism`` and ``out`` are
        left out so output files do not depend on how a run was executed."""
        return {
            "command": self.command,
            "design": dataclasses.asdict(self.design),
            "scenario": None if self.scenario is None else spec_to_dict(self.scenario),
            "scenario_id": self.scenario_id,
            "cells": self.cells,
            "seed": self.seed,
            "replicates": self.replicates,
            "format": self.format,
            "trajectory": self.trajectory,
            "pis": list(self.pis),
            "info_fractions": list(self.info_fractions),
        }


_CONFIG_KEYS = {f.name for f in dataclasses.fields(RunConfig)}


def _strict(data: dict, allowed, where: str) -> None:
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be an object")
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def design_from_dict(data: dict) -> TrialDesign:
    _strict(data, {f.name for f in dataclasses.fields(TrialDesign)}, "design")
    try:
        return TrialDesign(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"design: {exc}") from exc


def spec_to_dict(spec: ScenarioSpec) -> dict:
    return {
        "safety": dataclasses.asdict(spec.safety),
        "association": None if spec.association is None else dataclasses.asdict(spec.association),
        "efficacy_null": spec.efficacy_null,
        "allocation": spec.allocation.label,
        "dropout_rate": spec.dropout_rate,
        "underreport_rate": spec.underreport_rate,
        "intercurrent": spec.intercurrent,
        "control_median_pfs": spec.control_median_pfs,
        "null_hr": spec.null_hr,
    }


def spec_from_dict(data: dict) -> ScenarioSpec:
    """Build a :class:`ScenarioSpec`.  ``association`` may be ``null``, a
    label such as ``"very_strong"`` or an object of model fields;
    ``allocation`` is a policy label such as ``"safer(5)"``."""
    _strict(data, {f.name for f in dataclasses.fields(ScenarioSpec)}, "scenario")
    kw = dict(data)
    try:
        if "safety" in kw:
            _strict(kw["safety"], {f.name for f in dataclasses.fields(SafetyModel)}, "scenario.safety")
            kw["safety"] = SafetyModel(**kw["safety"])
        assoc = kw.get("association")
        if isinstance(assoc, str):
            if assoc not in ASSOCIATION_LEVELS:
                raise ConfigError(f"unknown association label {assoc!r}")
            kw["association"] = AssociationModel(expected_gamma1=ASSOCIATION_LEVELS[assoc])
        elif assoc is not None:
            _strict(assoc, {f.name for f in dataclasses.fields(AssociationModel)}, "scenario.association")
            kw["association"] = AssociationModel(**assoc)
        if "allocation" in kw:
            kw["allocation"] = AllocationPolicy.parse(str(kw["allocation"]))
        return ScenarioSpec(**kw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"scenario: {exc}") from exc


def config_from_dict(data: dict) -> RunConfig:
    """Validate a config mapping (as written by :meth:`RunConfig.to_dict`)."""
    _strict(data, _CONFIG_KEYS, "config")
    kw = dict(data)
    if "command" not in kw:
        raise ConfigError("config needs a command")
    kw["design"] = design_from_dict(kw.get("design") or {})
    if kw.get("scenario") is not None:
        kw["scenario"] = spec_from_dict(kw["scenario"])
    for key in ("pis", "info_fractions"):
        if key in kw:
            kw[key] = tuple(float(x) for x in kw[key])
    cfg = RunConfig(**kw)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    if cfg.command not in ("design", "power-curve", "simulate", "scenarios"):
        raise ConfigError(f"unknown command {cfg.command!r}")
    if cfg.format not in FORMATS:
        raise ConfigError(f"format must be one of {FORMATS}")
    if not isinstance(cfg.seed, int) or not 0 <= cfg.seed < 2**64:
        raise ConfigError("seed must be an integer in [0, 2**64)")
    if not isinstance(cfg.replicates, int) or cfg.replicates < 1:
        raise ConfigError("replicates must be a positive integer")
    if not isinstance(cfg.parallelism, int) or cfg.parallelism < 1:
        raise ConfigError("parallelism must be a positive integer")
    if any(not 0 < p < 1 for p in cfg.pis):
        raise ConfigError("pis must lie in (0, 1)")
    if any(not 0 < t < 1 for t in cfg.info_fractions):
        raise ConfigError("info_fractions must lie in (0, 1)")
    if cfg.command == "simulate":
        if (cfg.scenario is None) == (cfg.scenario_id is None):
            raise ConfigError("simulate needs exactly one of --scenario ID or a config 'scenario' object")
        if cfg.scenario_id is not None and cfg.scenario_id not in builtin_scenarios():
            raise ConfigError(f"unknown scenario {cfg.scenario_id!r}")
        if cfg.trajectory and cfg.replicates < 100:
            raise ConfigError("trajectories need at least 100 replicates")
        if cfg.cells:
            try:
                parse_selector(cfg.cells)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="safersim", description="SAFER trial design and simulation")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--replicates", type=int)
    common.add_argument("--parallelism", type=int)
    common.add_argument("--out", help="output directory (default: stdout)")
    common.add_argument("--format", choices=FORMATS)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("design", parents=[common], help="event and sample-size calculation")
    sub.add_parser("power-curve", parents=[common], help="theoretical power by allocation and IF")
    sim = sub.add_parser("simulate", parents=[common], help="run a scenario grid")
    sim.add_argument("--scenario", dest="scenario_id", help="built-in scenario id (see 'scenarios')")
    sim.add_argument("--cells", help="cell filter, e.g. pi=0.8,assoc=very_strong")
    sim.add_argument("--trajectory", action="store_true", default=None,
                     help="also write per-update allocation quantiles")
    sub.add_parser("scenarios", parents=[common], help="list the built-in scenario catalog")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    data: dict = {}
    if args.config is not None:
        try:
            data = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        data.pop("command", None)
    for key in ("seed", "replicates", "parallelism", "out", "format", "scenario_id", "cells", "trajectory"):
        value = getattr(args, key, None)
        if value is not None:
            data[key] = value
    if data.get("scenario_id") is not None:
        data["scenario"] = None
    data["command"] = args.command
    return config_from_dict(data)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return "nan" if math.isnan(value) else repr(value)
    return str(value)


def _csv_text(columns, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row.get(c)) for c in columns])
    return buf.getvalue()


def summary_row(s: SimulationSummary, error: str = "") -> dict:
    return {
        "scenario": s.scenario,
        "cell": s.cell,
        "null": s.null,
        "n_replicates": s.n_replicates,
        "power": s.power,
        "power_se": s.mc_se.get("power"),
        "power1": s.power1,
        "power1_se": s.mc_se.get("power1"),
        "type1_error": s.type1_error,
        "alloc_e": s.alloc_e,
        "alloc_e_se": s.mc_se.get("alloc_e"),
        "alloc_e_planned": s.alloc_e_planned,
        "alloc_e_planned_se": s.mc_se.get("alloc_e_planned"),
        "ae_rate": s.ae_rate,
        "ae_rate_se": s.mc_se.get("ae_rate"),
        "ae_rate_planned": s.ae_rate_planned,
        "ae_rate_planned_se": s.mc_se.get("ae_rate_planned"),
        "ae_rate_control": s.ae_rate_control,
        "ae_rate_experimental": s.ae_rate_experimental,
        "mean_n": s.mean_n,
        "mean_events": s.mean_events,
        "error": error,
    }


def _json_float(x):
    return None if isinstance(x, float) and not math.isfinite(x) else x


def summary_to_dict(s: SimulationSummary) -> dict:
    d = dataclasses.asdict(s)
    return {k: ({kk: _json_float(vv) for kk, vv in v.items()} if isinstance(v, dict) else _json_float(v))
            for k, v in d.items()}


def summary_from_dict(d: dict) -> SimulationSummary:
    _strict(d, {f.name for f in dataclasses.fields(SimulationSummary)}, "result")
    kw = {k: (math.nan if v is None and k not in ("type1_error",) else v) for k, v in d.items()}
    kw["mc_se"] = {k: (math.nan if v is None else v) for k, v in d.get("mc_se", {}).items()}
    return SimulationSummary(**kw)


def load_results(path) -> tuple[RunConfig, list[SimulationSummary]]:
    """Re-read a JSON file written by ``simulate --format json``."""
    doc = json.loads(Path(path).read_text())
    _strict(doc, {"config", "results", "errors"}, "results file")
    return config_from_dict(doc["config"]), [summary_from_dict(r) for r in doc["results"]]


def _emit(cfg: RunConfig, name: str, text: str, stdout) -> None:
    if cfg.out is None:
        stdout.write(text)
        return
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)


def cmd_design(cfg: RunConfig, stdout=sys.stdout, stderr=sys.stderr) -> int:
    p = plan(cfg.design)
    b = p.boundaries
    report = {
        "events_fixed": p.events_fixed,
        "events_gs": p.events_gs,
        "n_fixed": p.n_fixed,
        "n_gs": p.n_gs,
        "interim_events": p.interim_events,
        "c1": b.c1,
        "c2": b.c2,
        "alpha_spent_interim": b.alpha1,
        "info_fraction": b.info_fraction,
        "event_rate": cfg.design.event_rate,
    }
    text = json.dumps(report, indent=2) + "\n"
    if cfg.format == "json":
        _emit(cfg, "design.json", text, stdout)
        return EXIT_OK
    lines = [
        f"events (fixed design):      {p.events_fixed}",
        f"events (group sequential):  {p.events_gs}",
        f"N (fixed design):           {p.n_fixed}",
        f"N (group sequential):       {p.n_gs}",
        f"interim at events:          {p.interim_events}",
        f"c1 (interim):               {b.c1:.6f}",
        f"c2 (final):                 {b.c2:.6f}",
        f"alpha spent at interim:     {b.alpha1:.6g}",
    ]
    stdout.write("\n".join(lines) + "\n")
    if cfg.out is not None:
        _emit(cfg, "design.json", text, stdout)
    return EXIT_OK


def cmd_power_curve(cfg: RunConfig, stdout=sys.stdout, stderr=sys.stderr) -> int:
    rows = power_table(cfg.pis, cfg.info_fractions, cfg.design)
    if cfg.format == "json":
        _emit(cfg, "power_curve.json", json.dumps(rows, indent=2) + "\n", stdout)
    else:
        _emit(cfg, "power_curve.csv", _csv_text(POWER_COLUMNS, rows), stdout)
    return EXIT_OK


def cmd_scenarios(cfg: RunConfig, stdout=sys.stdout, stderr=sys.stderr) -> int:
    cat = builtin_scenarios(cfg.design)
    rows = []
    for sid, cells in cat.items():
        keys = list(cells[0].labels) if cells else []
        rows.append({"scenario": sid, "cells": len(cells), "labels": ";".join(keys)})
    if cfg.format == "json":
        _emit(cfg, "scenarios.json", json.dumps(rows, indent=2) + "\n", stdout)
    else:
        _emit(cfg, "scenarios.csv", _csv_text(("scenario", "cells", "labels"), rows), stdout)
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, stdout=sys.stdout, stderr=sys.stderr) -> int:
    if cfg.scenario_id is not None:
        cells = [(c.scenario, c.name, c.spec, c.design) for c in
                 select_cells(builtin_scenarios(cfg.design)[cfg.scenario_id], cfg.cells)]
    else:
        cells = [("custom", "", cfg.scenario, cfg.design)]
    if not cells:
        stderr.write("warning: no cells match the selection; nothing to do\n")
        return EXIT_OK

    rows, summaries, traj_rows, errors = [], [], [], []
    for sid, name, spec, design in cells:
        try:
            reps, traces = simulate_replicates(spec, design, cfg.replicates, cfg.seed, cfg.parallelism)
        except (EngineError, BoundaryError, ArithmeticError, ValueError) as exc:
            msg = f"{type(exc).__name__}: {exc}"
            stderr.write(f"error in scenario {sid} cell {name}: {msg}\n")
            errors.append({"scenario": sid, "cell": name, "error": msg})
            rows.append({"scenario": sid, "cell": name, "null": spec.efficacy_null, "error": msg})
            continue
        s = summarize(reps, sid, name, null=spec.efficacy_null)
        summaries.append(s)
        rows.append(summary_row(s))
        if cfg.trajectory:
            for p in trajectory_from_traces(traces, design):
                traj_rows.append({"scenario": sid, "cell": name, "update_time": p.update_time,
                                  "median_pi": p.median_pi, "q25": p.q25, "q75": p.q75})

    if cfg.format == "json":
        doc = {"config": cfg.to_dict(), "results": [summary_to_dict(s) for s in summaries], "errors": errors}
        _emit(cfg, "summary.json", json.dumps(doc, indent=2, allow_nan=False) + "\n", stdout)
    else:
        _emit(cfg, "summary.csv", _csv_text(SUMMARY_COLUMNS, rows), stdout)
    if cfg.trajectory:
        _emit(cfg, "trajectory.csv", _csv_text(TRAJECTORY_COLUMNS, traj_rows), stdout)
    return EXIT_NUMERIC if errors else EXIT_OK


COMMANDS = {
    "design": cmd_design,
    "power-curve": cmd_power_curve,
    "simulate": cmd_simulate,
    "scenarios": cmd_scenarios,
}


def main(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        stderr.write(f"config error: {exc}\n")
        return EXIT_CONFIG
    try:
        return COMMANDS[cfg.command](cfg, stdout=stdout, stderr=stderr)
    except (EngineError, BoundaryError, ArithmeticError) as exc:
        stderr.write(f"numerical failure: {exc}\n")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
