"""Monte Carlo replication, the built-in scenario catalog and summaries.

Replicate ``i`` of a run always uses ``RngStream(master_seed, i)``.  Work is
split into fixed-size chunks of consecutive replicates whatever the
parallelism, and chunk results are concatenated in index order before any
reduction, so summaries are bit-identical across parallelism levels.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .allocation import AllocationPolicy, update_schedule
from .datagen import ASSOCIATION_LEVELS, AssociationModel, Intercurrent, SafetyModel, ScenarioSpec
from .engine import run_trial
from .gsdesign import TrialDesign
from .statkernel import RngStream

CHUNK_SIZE = 100

#: Experimental safety median (months) giving each Neyman target when the
#: control median is 1.5.
SAFETY_MEDIANS = {0.5: 1.5, 0.6: 2.25, 0.7: 3.5, 0.8: 6.0}
PI_GRID = tuple(SAFETY_MEDIANS)
INFO_FRACTIONS = (0.2, 0.3, 0.4, 0.5)
RATE_GRID = {"very_low": 0.05, "low": 0.10, "moderate": 0.15, "high": 0.20, "very_high": 0.25}
S4_MEDIAN_PFS = (3.0, 9.0, 18.0, 24.0)
REDFLAG_HR = 2.0

# Per-replicate columns collected from each TrialResult.
_FIELDS = (
    "reject_any",
    "reject_interim",
    "alloc",
    "alloc_planned",
    "ae_rate",
    "ae_rate_planned",
    "ae_rate_control",
    "ae_rate_experimental",
    "n_total",
    "final_events",
)


@dataclass(frozen=True)
class ScenarioCell:
    """One configuration of a built-in scenario grid.

    ``labels`` are the string coordinates used for ``--cells`` filtering.
    """

    scenario: str
    labels: dict
    spec: ScenarioSpec
    design: TrialDesign

    @property
    def name(self) -> str:
        return ",".join(f"{k}={v}" for k, v in self.labels.items())

    def matches(self, selector: dict) -> bool:
        return all(k in self.labels and _norm(self.labels[k]) == _norm(v) for k, v in selector.items())


def _norm(value) -> str:
    text = str(value).strip().lower()
    try:
        return repr(float(text))
    except ValueError:
        return text


def parse_selector(text: str) -> dict:
    """``"pi=0.8,assoc=very_strong"`` to ``{"pi": "0.8", "assoc": "very_strong"}``."""
    out = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        key, sep, value = part.partition("=")
        if not sep or not key.strip() or not value.strip():
            raise ValueError(f"bad cell selector {part!r}; expected key=value")
        out[key.strip()] = value.strip()
    return out


@dataclass(frozen=True)
class SimulationSummary:
    """Operating characteristics of one scenario cell.

    ``power`` is the overall rejection fraction; for a null cell it is the
    type-I error and ``type1_error`` repeats it.  Allocation and AE metrics
    come in two accountings: enrolled-to-date (enrolment stops at an interim
    rejection) and ``*_planned`` (the full planned cohort followed to the end
    of the trial).  ``mc_se`` holds the Monte Carlo standard error of each
    metric: ``sqrt(p(1-p)/n)`` for proportions, ``sd/sqrt(n)`` for means.
    """

    scenario: str
    cell: str
    null: bool
    n_replicates: int
    power: float
    power1: float
    type1_error: Optional[float]
    alloc_e: float
    alloc_e_planned: float
    ae_rate: float
    ae_rate_planned: float
    ae_rate_control: float
    ae_rate_experimental: float
    mean_n: float
    mean_events: float
    mc_se: dict = field(default_factory=dict)


def _replicate_row(result) -> tuple:
    py = result.person_years_planned
    ae = result.ae_events_planned
    return (
        float(result.reject_any),
        float(result.reject_interim),
        result.alloc_fraction,
        result.alloc_fraction_planned,
        result.ae_rate,
        result.ae_rate_planned,
        ae[0] / py[0] if py[0] > 0 else math.nan,
        ae[1] / py[1] if py[1] > 0 else math.nan,
        float(result.n_total),
        float(result.final_events),
    )


def _run_chunk(args) -> tuple[np.ndarray, np.ndarray]:
    spec, design, master_seed, lo, hi = args
    rows, traces = [], []
    for i in range(lo, hi):
        res = run_trial(spec, design, RngStream(master_seed, i))
        rows.append(_replicate_row(res))
        traces.append(res.allocation_trace)
    return np.array(rows, dtype=float).reshape(-1, len(_FIELDS)), np.array(traces, dtype=float)


def _chunks(n: int) -> list[tuple[int, int]]:
    return [(lo, min(lo + CHUNK_SIZE, n)) for lo in range(0, n, CHUNK_SIZE)]


def simulate_replicates(spec: ScenarioSpec, design: TrialDesign, n_replicates: int, master_seed: int,
                        parallelism: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Per-replicate metric rows (columns in ``_FIELDS`` order) and
    allocation traces (one row per replicate, one column per update)."""
    if n_replicates < 1:
        raise ValueError("n_replicates must be at least 1")
    if parallelism < 1:
        raise ValueError("parallelism must be at least 1")
    jobs = [(spec, design, master_seed, lo, hi) for lo, hi in _chunks(n_replicates)]
    if parallelism == 1 or len(jobs) == 1:
        parts = [_run_chunk(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(parallelism, len(jobs))) as pool:
            parts = list(pool.map(_run_chunk, jobs))
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def _proportion_se(p: float, n: int) -> float:
    return math.sqrt(max(p * (1.0 - p), 0.0) / n)


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    x = x[np.isfinite(x)]
    if x.size == 0:
        return math.nan, math.nan
    se = float(np.std(x, ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
    return float(np.mean(x)), se


def summarize(rows: np.ndarray, scenario: str = "", cell: str = "", null: bool = False) -> SimulationSummary:
    """Fold per-replicate rows into a :class:`SimulationSummary`."""
    n = rows.shape[0]
    col = {name: rows[:, j] for j, name in enumerate(_FIELDS)}
    power = float(np.mean(col["reject_any"]))
    power1 = float(np.mean(col["reject_interim"]))
    means, ses = {}, {}
    for name in _FIELDS[2:]:
        means[name], ses[name] = _mean_se(col[name])
    mc_se = {"power": _proportion_se(power, n), "power1": _proportion_se(power1, n)}
    mc_se.update({"alloc_e": ses["alloc"], "alloc_e_planned": ses["alloc_planned"],
                  "ae_rate": ses["ae_rate"], "ae_rate_planned": ses["ae_rate_planned"]})
    return SimulationSummary(
        scenario=scenario,
        cell=cell,
        null=null,
        n_replicates=n,
        power=power,
        power1=power1,
        type1_error=power if null else None,
        alloc_e=means["alloc"],
        alloc_e_planned=means["alloc_planned"],
        ae_rate=means["ae_rate"],
        ae_rate_planned=means["ae_rate_planned"],
        ae_rate_control=means["ae_rate_control"],
        ae_rate_experimental=means["ae_rate_experimental"],
        mean_n=means["n_total"],
        mean_events=means["final_events"],
        mc_se=mc_se,
    )


def run_scenario(spec: ScenarioSpec, design: TrialDesign, n_replicates: int, master_seed: int,
                 parallelism: int = 1, scenario: str = "", cell: str = "") -> SimulationSummary:
    """Run ``n_replicates`` trials and summarise them."""
    rows, _ = simulate_replicates(spec, design, n_replicates, master_seed, parallelism)
    return summarize(rows, scenario, cell, null=spec.efficacy_null)


@dataclass(frozen=True)
class TrajectoryPoint:
    update_time: float
    median_pi: float
    q25: float
    q75: float


def allocation_trajectory(spec: ScenarioSpec, design: TrialDesign, n_replicates: int, seed: int,
                          parallelism: int = 1) -> list[TrajectoryPoint]:
    """Median and interquartile range of the allocation probability set at
    each update time, across replicates."""
    if n_replicates < 100:
        raise ValueError("allocation_trajectory needs at least 100 replicates")
    _, traces = simulate_replicates(spec, design, n_replicates, seed, parallelism)
    return trajectory_from_traces(traces, design)


def trajectory_from_traces(traces: np.ndarray, design: TrialDesign) -> list[TrajectoryPoint]:
    """Per-update quantiles of replicate allocation traces."""
    times = update_schedule(design)
    if traces.ndim != 2 or traces.shape[1] != len(times):
        raise ValueError("traces must have one column per update time")
    q = np.quantile(traces, [0.5, 0.25, 0.75], axis=0)
    return [TrajectoryPoint(t, float(q[0, j]), float(q[1, j]), float(q[2, j])) for j, t in enumerate(times)]


def _safety(pi: float) -> SafetyModel:
    return SafetyModel(median_control=1.5, median_experimental=SAFETY_MEDIANS[pi])


def _assoc(label: str, median_pfs: Optional[float] = None) -> AssociationModel:
    g = ASSOCIATION_LEVELS[label]
    if median_pfs is None:
        return AssociationModel(expected_gamma1=g)
    return AssociationModel.for_median_pfs(median_pfs, expected_gamma1=g)


_TABLE2_POLICIES = {
    "1": AllocationPolicy.complete(),
    "2": AllocationPolicy.safety_rar(),
    "3a": AllocationPolicy.safer(1),
    "3b": AllocationPolicy.safer(5),
}


def builtin_scenarios(design: Optional[TrialDesign] = None) -> dict[str, list[ScenarioCell]]:
    """Catalog of the built-in scenario grids keyed by scenario id.

    ``0`` safety-driven RAR under independence over safety medians, IFs and
    both hypotheses; ``1``/``2``/``3a``/``3b`` the association x target grid
    for complete randomisation, safety-RAR and SAFER with eta 1 and 5;
    ``4`` the median-PFS grid; ``5`` drop-out with the composite strategy;
    ``6`` under-reporting; ``redflag`` the inferior-efficacy composite case.
    """
    base = design or TrialDesign()
    half = replace(base, info_fraction=0.5)
    cat: dict[str, list[ScenarioCell]] = {}

    cells = []
    for pi in PI_GRID:
        for t in INFO_FRACTIONS:
            for hyp in ("H0", "H1"):
                spec = ScenarioSpec(safety=_safety(pi), allocation=AllocationPolicy.safety_rar(),
                                    efficacy_null=hyp == "H0")
                labels = {"pi": pi, "median": SAFETY_MEDIANS[pi], "if": t, "hyp": hyp}
                cells.append(ScenarioCell("0", labels, spec, replace(base, info_fraction=t)))
    cat["0"] = cells

    for sid, policy in _TABLE2_POLICIES.items():
        cat[sid] = [
            ScenarioCell(sid, {"pi": pi, "assoc": a, "policy": policy.label},
                         ScenarioSpec(safety=_safety(pi), association=_assoc(a), allocation=policy), half)
            for pi in PI_GRID
            for a in ASSOCIATION_LEVELS
        ]

    safer5 = AllocationPolicy.safer(5)
    cat["4"] = [
        ScenarioCell("4", {"pi": 0.8, "assoc": a, "median_pfs": m},
                     ScenarioSpec(safety=_safety(0.8), association=_assoc(a, m), allocation=safer5,
                                  control_median_pfs=m), half)
        for a in ("very_strong", "weak")
        for m in S4_MEDIAN_PFS
    ]
    cat["5"] = [
        ScenarioCell("5", {"pi": pi, "dropout": label},
                     ScenarioSpec(safety=_safety(pi), association=_assoc("very_strong"), allocation=safer5,
                                  dropout_rate=rate, intercurrent=Intercurrent.COMPOSITE), half)
        for pi in PI_GRID
        for label, rate in RATE_GRID.items()
    ]
    cat["6"] = [
        ScenarioCell("6", {"pi": pi, "underreport": label},
                     ScenarioSpec(safety=_safety(pi), association=_assoc("very_strong"), allocation=safer5,
                                  underreport_rate=rate), half)
        for pi in PI_GRID
        for label, rate in RATE_GRID.items()
    ]
    cat["redflag"] = [
        ScenarioCell("redflag", {"pi": 0.8, "hr": REDFLAG_HR, "dropout": rate},
                     ScenarioSpec(safety=_safety(0.8), allocation=safer5, efficacy_null=True, null_hr=REDFLAG_HR,
                                  dropout_rate=rate, intercurrent=Intercurrent.COMPOSITE), half)
        for rate in (0.25, 1.0)
    ]
    return cat


def select_cells(cells: list[ScenarioCell], selector: Optional[str]) -> list[ScenarioCell]:
    if not selector:
        return list(cells)
    sel = parse_selector(selector)
    return [c for c in cells if c.matches(sel)]
