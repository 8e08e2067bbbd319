"""Simulation of one complete trial.

Patients enter uniformly over the accrual period.  Between update times the
allocation probability is fixed; at each update it is re-estimated from
everything observable at that calendar time.  The interim analysis happens
when the observed PFS event count reaches ``ceil(IF * P_gs)``; the final
analysis is at the end of the trial.  Only efficacy stopping is implemented.

Every patient's arm is settled before any look at efficacy data, and data
after an update time never feed into that update, so the whole cohort can be
generated first and the interim located afterwards.  If the trial stops at
the interim, patients who would have entered later are dropped from the
enrolled-to-date counts but kept in the ``*_planned`` ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .allocation import AllocationState, UpdateRecord, apply_update, assign, update_schedule
from .datagen import ScenarioSpec, draw_variates, observe_arrays, realize
from .gsdesign import TrialDesign, plan
from .inference import cox_fit, wald_noninferiority
from .statkernel import RngStream

REJECT_INTERIM = "interim"
REJECT_FINAL = "final"
REJECT_NEVER = "never"

# Analyses include events that land exactly on the analysis time.
_TIME_EPS = 1e-9


class EngineError(RuntimeError):
    """The scenario/design combination cannot be simulated."""


@dataclass(frozen=True)
class TrialResult:
    rejected: str
    n_total: int
    n_experimental: int
    n_planned: int
    n_experimental_planned: int
    ae_events: tuple[int, int]
    person_years: tuple[float, float]
    ae_events_planned: tuple[int, int]
    person_years_planned: tuple[float, float]
    allocation_trace: tuple[float, ...]
    events_at_interim: int
    interim_time: Optional[float]
    stop_time: float
    w_interim: float
    w_final: float
    final_events: int
    history: tuple[UpdateRecord, ...] = ()

    @property
    def reject_any(self) -> bool:
        return self.rejected != REJECT_NEVER

    @property
    def reject_interim(self) -> bool:
        return self.rejected == REJECT_INTERIM

    @property
    def alloc_fraction(self) -> float:
        return self.n_experimental / self.n_total

    @property
    def alloc_fraction_planned(self) -> float:
        return self.n_experimental_planned / self.n_planned

    @property
    def ae_rate(self) -> float:
        """Pooled AEs per patient-year over the enrolled-to-date cohort."""
        return sum(self.ae_events) / sum(self.person_years)

    @property
    def ae_rate_planned(self) -> float:
        """Pooled AEs per patient-year over the full cohort followed to the end."""
        return sum(self.ae_events_planned) / sum(self.person_years_planned)

    def ae_rate_arm(self, arm: int) -> float:
        py = self.person_years[arm]
        return self.ae_events[arm] / py if py > 0 else math.nan


def _arm_means(safety_time, safety_event, arm):
    """Per-arm censored exponential means (``exp_mean_mle``), ``None`` for an
    arm without events."""
    totals = np.bincount(arm, weights=safety_time, minlength=2)
    events = np.bincount(arm, weights=safety_event, minlength=2)
    return tuple(float(totals[j] / events[j]) if events[j] > 0 else None for j in (1, 0))


def _ae_totals(arm, safety_event, efficacy_time, design):
    """Safety events and person-years per arm (control, experimental)."""
    ae = np.bincount(arm, weights=safety_event, minlength=2)
    if design.person_time == "observed":
        py = np.bincount(arm, weights=efficacy_time, minlength=2) / 12.0
    else:
        py = np.bincount(arm, minlength=2) * design.followup / 12.0
    return (int(ae[0]), int(ae[1])), (float(py[0]), float(py[1]))


def _fit_and_test(time, event, arm, margin):
    if not event.any() or arm.min() == arm.max():
        return math.nan
    return wald_noninferiority(cox_fit(time, event, arm), margin).w


def interim_time(event_times, target: int) -> Optional[float]:
    """Calendar time at which the ``target``-th event is observed, or
    ``None`` when fewer events ever occur."""
    if target < 1:
        raise ValueError("target must be at least 1")
    event_times = np.asarray(event_times, dtype=float)
    if event_times.size < target:
        return None
    return float(np.partition(event_times, target - 1)[target - 1])


def run_trial(spec: ScenarioSpec, design: TrialDesign, rng: RngStream, keep_history: bool = False) -> TrialResult:
    """Simulate one trial and return its outcome."""
    p = plan(design)
    n = p.n_gs
    if n <= 0:
        raise EngineError("the design enrols no patients")
    if p.interim_events < 1:
        raise EngineError("interim event target is below one event")

    v = draw_variates(n, spec, design.accrual, rng)
    entry = v.entry
    arm = np.zeros(n, dtype=np.int8)
    safety = np.empty(n)
    pfs = np.empty(n)
    obs_kw = dict(strategy=spec.intercurrent, trial_end=design.trial_end, max_followup=design.max_followup)
    is_safer = spec.allocation.kind == "safer"

    def enrol(lo: int, hi: int, pi: float) -> None:
        if hi > lo:
            arm[lo:hi] = assign(pi, v.assign_u[lo:hi])
            safety[lo:hi], pfs[lo:hi] = realize(v.safety_exp[lo:hi], v.pfs_exp[lo:hi], v.gamma1[lo:hi], arm[lo:hi], spec)

    schedule = update_schedule(design)
    cuts = np.searchsorted(entry, schedule, side="left")
    state = AllocationState(spec.allocation)
    start = 0
    for u, stop in zip(schedule, cuts):
        enrol(start, stop, state.current_pi)
        start = stop
        theta_e = theta_c = fit = None
        if spec.allocation.kind != "complete" and stop > 0:
            st, se, et, ee = observe_arrays(entry[:stop], safety[:stop], pfs[:stop], v.dropout[:stop],
                                            v.underreport[:stop], u, **obs_kw)
            a = arm[:stop]
            theta_e, theta_c = _arm_means(st, se, a)
            if is_safer and ee.sum() >= max(design.phi_min_events, 1) and a.min() != a.max():
                fit = cox_fit(et, ee, a)
        state = apply_update(state, u, theta_e, theta_c, fit, design)
    enrol(start, n, state.current_pi)

    # Final-time observation fixes every event's calendar time.
    full = observe_arrays(entry, safety, pfs, v.dropout, v.underreport, design.trial_end, **obs_kw)
    st, se, et, ee = full
    b = p.boundaries
    t_int = interim_time(entry[ee] + et[ee], p.interim_events)
    w1 = math.nan
    events_int = 0
    rejected = REJECT_NEVER
    stop_time = design.trial_end
    k = n
    if t_int is not None:
        k = int(np.searchsorted(entry, t_int, side="right"))
        ist, ise, iet, iee = observe_arrays(entry[:k], safety[:k], pfs[:k], v.dropout[:k], v.underreport[:k],
                                            t_int + _TIME_EPS, **obs_kw)
        events_int = int(iee.sum())
        w1 = _fit_and_test(iet, iee, arm[:k], design.hr_margin)
        if w1 < -b.c1:
            rejected = REJECT_INTERIM
            stop_time = t_int
            st, se, et, ee = ist, ise, iet, iee
        else:
            k = n
    w2 = math.nan
    if rejected == REJECT_NEVER:
        w2 = _fit_and_test(et, ee, arm, design.hr_margin)
        if w2 < -b.c2:
            rejected = REJECT_FINAL

    ae, py = _ae_totals(arm[:k], se, et, design)
    ae_full, py_full = _ae_totals(arm, full[1], full[2], design)
    n_exp = int(arm[:k].sum())
    return TrialResult(
        rejected=rejected,
        n_total=k,
        n_experimental=n_exp,
        n_planned=n,
        n_experimental_planned=int(arm.sum()),
        ae_events=ae,
        person_years=py,
        ae_events_planned=ae_full,
        person_years_planned=py_full,
        allocation_trace=state.trace,
        events_at_interim=events_int,
        interim_time=t_int,
        stop_time=stop_time,
        w_interim=w1,
        w_final=w2,
        final_events=int(ee.sum()),
        history=state.history if keep_history else (),
    )
