"""Patient-level generation of safety and efficacy endpoints.

Times are in months unless a name says otherwise.  The association model
works in days internally (the control mean PFS is given in days) and converts
back with ``days_per_month``.

Generation is split into two steps so that arm assignment can happen in
between: :func:`draw_variates` takes every random number a cohort needs up
front (standard exponentials, gamma draws, flags), and :func:`realize` turns
them into latent times once the arms are known.  Drawing an Exp(1) and
dividing by the arm's rate is the same inverse-CDF draw as sampling after
assignment; it just fixes the draw order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional

import numpy as np

from .allocation import AllocationPolicy
from .statkernel import RngStream, exponential_from_uniform, sample_gamma

LN2 = math.log(2.0)

#: ``exp(gamma0)`` of the default calibration, control mean PFS in days.
CONTROL_MEAN_PFS_DAYS = 434.78

#: Expected gamma1 for each association label.
ASSOCIATION_LEVELS = {
    "very_weak": 0.001,
    "weak": 0.005,
    "moderate": 0.01,
    "strong": 0.03,
    "very_strong": 0.05,
}


class Arm(IntEnum):
    CONTROL = 0
    EXPERIMENTAL = 1


class Intercurrent:
    NONE = "none"
    COMPOSITE = "composite"
    ALL = (NONE, COMPOSITE)


def rate_from_median(median: float) -> float:
    """Exponential rate per month with the given median."""
    if not median > 0:
        raise ValueError(f"median must be positive, got {median}")
    return LN2 / median


@dataclass(frozen=True)
class SafetyModel:
    """Exponential time to dose reduction/discontinuation in each arm."""

    median_control: float = 1.5
    median_experimental: float = 1.5

    def __post_init__(self):
        if not (self.median_control > 0 and self.median_experimental > 0):
            raise ValueError("safety medians must be positive")

    def rate(self, arm) -> float:
        median = self.median_experimental if arm == Arm.EXPERIMENTAL else self.median_control
        return rate_from_median(median)

    def mean(self, arm) -> float:
        return 1.0 / self.rate(arm)

    @property
    def neyman_target(self) -> float:
        """True Neyman proportion for the experimental arm."""
        theta_e = self.mean(Arm.EXPERIMENTAL)
        theta_c = self.mean(Arm.CONTROL)
        return theta_e / (theta_e + theta_c)


@dataclass(frozen=True)
class AssociationModel:
    """Safety-to-efficacy link: each completed cycle beyond the baseline
    multiplies the patient's mean PFS by ``exp(gamma1)``."""

    expected_gamma1: float = 0.05
    gamma0: float = math.log(CONTROL_MEAN_PFS_DAYS)
    gamma_shape: float = 50.0
    cycle_length: float = 21.0
    baseline_cycles: int = 3
    days_per_month: float = 30.0
    max_log_effect: float = 10.0

    def __post_init__(self):
        if self.expected_gamma1 < 0:
            raise ValueError("expected_gamma1 must be non-negative")
        if not (self.gamma_shape > 0 and self.cycle_length > 0 and self.days_per_month > 0):
            raise ValueError("gamma_shape, cycle_length and days_per_month must be positive")
        if self.baseline_cycles < 0:
            raise ValueError("baseline_cycles must be non-negative")

    @property
    def gamma_scale(self) -> float:
        return self.expected_gamma1 / self.gamma_shape

    @classmethod
    def for_median_pfs(cls, median_months: float, **kwargs) -> "AssociationModel":
        """Rescale ``gamma0`` so the control arm (no extra cycles) has the
        given median PFS."""
        mean_days = median_months / LN2 * kwargs.get("days_per_month", 30.0)
        return cls(gamma0=math.log(mean_days), **kwargs)


@dataclass(frozen=True)
class ScenarioSpec:
    """Generative truth for one simulated trial configuration.

    ``association=None`` means efficacy is independent of safety.  With
    ``efficacy_null=True`` the experimental PFS hazard is ``null_hr`` times the
    control hazard and the association link is switched off.
    """

    safety: SafetyModel = field(default_factory=SafetyModel)
    association: Optional[AssociationModel] = None
    efficacy_null: bool = False
    allocation: AllocationPolicy = field(default_factory=AllocationPolicy.complete)
    dropout_rate: float = 0.0
    underreport_rate: float = 0.0
    intercurrent: str = Intercurrent.NONE
    control_median_pfs: float = 10.0
    null_hr: float = 1.25

    def __post_init__(self):
        for name in ("dropout_rate", "underreport_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        if self.intercurrent not in Intercurrent.ALL:
            raise ValueError(f"unknown intercurrent strategy {self.intercurrent!r}")
        if not (self.control_median_pfs > 0 and self.null_hr > 0):
            raise ValueError("control_median_pfs and null_hr must be positive")

    @property
    def uses_association(self) -> bool:
        return self.association is not None and not self.efficacy_null

    @property
    def efficacy_hr(self) -> float:
        """Experimental/control PFS hazard ratio when efficacy is independent."""
        return self.null_hr if self.efficacy_null else 1.0


@dataclass(frozen=True)
class PatientRecord:
    id: int
    entry_time: float
    arm: Arm
    latent_safety_time: float
    latent_pfs_time: float
    gamma1_draw: float
    dropout_flag: bool
    underreport_flag: bool


@dataclass(frozen=True)
class Observation:
    """What is known about one patient at an analysis time."""

    safety_time: float
    safety_event: bool
    efficacy_time: float
    efficacy_event: bool


def extra_cycles(safety_time, assoc: AssociationModel):
    """Completed cycles beyond the baseline before the safety event."""
    t = np.asarray(safety_time, dtype=float)
    if np.any(t < 0):
        raise ValueError("safety_time must be non-negative")
    completed = np.floor(t * assoc.days_per_month / assoc.cycle_length)
    out = np.maximum(0.0, completed - assoc.baseline_cycles)
    return float(out) if out.ndim == 0 else out


def efficacy_mean(extra, gamma0: float, gamma1, max_log_effect: float = 10.0):
    """Patient mean PFS in days, ``exp(gamma0 + gamma1 * extra)``.

    The log-effect ``gamma1 * extra`` is capped at ``max_log_effect``.
    """
    extra = np.asarray(extra, dtype=float)
    if np.any(extra < 0):
        raise ValueError("extra cycles must be non-negative")
    effect = np.minimum(np.asarray(gamma1, dtype=float) * extra, max_log_effect)
    out = np.exp(gamma0 + effect)
    return float(out) if out.ndim == 0 else out


@dataclass
class CohortVariates:
    """Random inputs for ``n`` patients, drawn before any arm is known."""

    entry: np.ndarray
    assign_u: np.ndarray
    safety_exp: np.ndarray
    pfs_exp: np.ndarray
    gamma1: np.ndarray
    dropout: np.ndarray
    underreport: np.ndarray

    def __len__(self) -> int:
        return len(self.entry)


def draw_variates(n: int, spec: ScenarioSpec, accrual: float, rng: RngStream) -> CohortVariates:
    """Draw every random number for an ``n``-patient cohort.

    Entry times are i.i.d. uniform on ``[0, accrual)`` and returned sorted.
    The draw order is fixed, so a given stream always yields the same cohort.
    """
    g = rng.generator
    entry = np.sort(accrual * g.random(n))
    assign_u = g.random(n)
    safety_exp = exponential_from_uniform(1.0 - g.random(n), 1.0)
    pfs_exp = exponential_from_uniform(1.0 - g.random(n), 1.0)
    if spec.uses_association and spec.association.expected_gamma1 > 0:
        assoc = spec.association
        gamma1 = sample_gamma(assoc.gamma_shape, assoc.gamma_scale, rng, n)
    else:
        gamma1 = np.zeros(n)
    dropout = g.random(n) < spec.dropout_rate
    underreport = g.random(n) < spec.underreport_rate
    return CohortVariates(entry, assign_u, safety_exp, pfs_exp, gamma1, dropout, underreport)


def realize(safety_exp, pfs_exp, gamma1, arm, spec: ScenarioSpec):
    """Latent (safety, PFS) times in months for patients on ``arm``.

    ``arm`` is an array of 0/1 codes aligned with the standard exponentials.
    """
    arm = np.asarray(arm)
    is_exp = arm == Arm.EXPERIMENTAL
    safety_rate = np.where(is_exp, spec.safety.rate(Arm.EXPERIMENTAL), spec.safety.rate(Arm.CONTROL))
    safety = safety_exp / safety_rate
    if spec.uses_association:
        assoc = spec.association
        mean_days = efficacy_mean(extra_cycles(safety, assoc), assoc.gamma0, gamma1, assoc.max_log_effect)
        pfs = pfs_exp * np.asarray(mean_days) / assoc.days_per_month
    else:
        control_rate = rate_from_median(spec.control_median_pfs)
        pfs_rate = np.where(is_exp, control_rate * spec.efficacy_hr, control_rate)
        pfs = pfs_exp / pfs_rate
    return safety, pfs


def generate_safety_time(arm, model: SafetyModel, rng: RngStream, size=None):
    """Exponential safety time(s) for ``arm``."""
    return exponential_from_uniform(1.0 - rng.uniform(size), model.rate(arm))


def generate_patient(entry: float, arm, spec: ScenarioSpec, rng: RngStream, id: int = 0) -> PatientRecord:
    """Draw one patient's latent record."""
    arm = Arm(int(arm))
    v = draw_variates(1, spec, 0.0, rng)
    safety, pfs = realize(v.safety_exp, v.pfs_exp, v.gamma1, np.array([int(arm)]), spec)
    return PatientRecord(
        id=id,
        entry_time=float(entry),
        arm=arm,
        latent_safety_time=float(safety[0]),
        latent_pfs_time=float(pfs[0]),
        gamma1_draw=float(v.gamma1[0]),
        dropout_flag=bool(v.dropout[0]),
        underreport_flag=bool(v.underreport[0]),
    )


def observe_arrays(entry, safety, pfs, dropout, underreport, analysis_time: float,
                   strategy: str = Intercurrent.NONE, trial_end: float = 60.0,
                   max_followup: Optional[float] = 12.0):
    """Vectorised observation rule; see :func:`observe`.

    Returns ``(safety_time, safety_event, efficacy_time, efficacy_event)``.
    Patients who entered after ``analysis_time`` get zero follow-up; callers
    are expected to exclude them.
    """
    if strategy not in Intercurrent.ALL:
        raise ValueError(f"unknown intercurrent strategy {strategy!r}")
    tau = np.maximum(min(analysis_time, trial_end) - entry, 0.0)
    if max_followup is not None:
        tau = np.minimum(tau, max_followup)
    eff_event = pfs <= tau
    eff_time = np.minimum(pfs, tau)
    safety_end = eff_time
    safety_event = safety <= safety_end
    safety_time = np.where(safety_event, safety, safety_end)

    dropped = dropout & safety_event
    if np.any(dropped):
        eff_time = np.where(dropped, safety, eff_time)
        eff_event = np.where(dropped, strategy == Intercurrent.COMPOSITE, eff_event)

    erased = underreport & safety_event
    if np.any(erased):
        safety_event = safety_event & ~erased
        safety_time = np.where(erased, safety_end, safety_time)
    return safety_time, safety_event, eff_time, eff_event


def observe(record: PatientRecord, analysis_time: float, strategy: str = Intercurrent.NONE,
            trial_end: float = 60.0, max_followup: Optional[float] = 12.0) -> Observation:
    """Observed safety and efficacy data for one patient at ``analysis_time``.

    Follow-up runs to ``min(analysis_time, trial_end)``, and per patient at
    most ``max_followup`` months after entry (``None`` removes the cap).
    Safety follow-up stops at progression.  A drop-out leaves at the safety
    event; under the composite strategy that time is a PFS event, otherwise
    PFS is censored there.  An under-reported safety event is never recorded
    and safety is censored where follow-up ends.
    """
    if analysis_time < record.entry_time:
        raise ValueError("analysis_time precedes the patient's entry")
    st, se, et, ee = observe_arrays(
        np.array([record.entry_time]),
        np.array([record.latent_safety_time]),
        np.array([record.latent_pfs_time]),
        np.array([record.dropout_flag]),
        np.array([record.underreport_flag]),
        analysis_time,
        strategy,
        trial_end,
        max_followup,
    )
    return Observation(float(st[0]), bool(se[0]), float(et[0]), bool(ee[0]))
