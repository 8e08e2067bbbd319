"""Two-look group-sequential design for a hazard-ratio non-inferiority test.

Orientation: internally ``Z = -W`` so that large values reject H0, which is
the usual convention for spending-function boundaries.  A trial rejects at
look k when ``W_k < -c_k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Optional

from scipy.optimize import brentq

from .statkernel import bivariate_normal_cdf, normal_cdf, normal_quantile

LN2 = math.log(2.0)
SPENDING_FUNCTIONS = ("obf",)


class BoundaryError(RuntimeError):
    """Critical-value root finding failed."""


@dataclass(frozen=True)
class TrialDesign:
    """Design constants of the redesigned trial.

    ``lambda_bar`` defaults to the allocation-weighted PFS rate under the
    design alternative.  ``max_followup`` is the per-patient follow-up cap
    in months (``None`` follows everyone to ``trial_end``).  ``person_time``
    selects the AE-rate denominator: ``"observed"`` sums each patient's
    observed PFS follow-up, ``"nominal"`` uses patients x ``followup``.
    """

    alpha: float = 0.05
    power_target: float = 0.80
    hr_margin: float = 1.25
    hr_alt: float = 1.0
    pi_design: float = 0.5
    info_fraction: float = 0.5
    accrual: float = 48.0
    followup: float = 12.0
    trial_end: float = 60.0
    control_median_pfs: float = 10.0
    lambda_bar: Optional[float] = None
    spending: str = "obf"
    futility: Optional[str] = None
    burn_in: float = 3.0
    update_interval: float = 3.0
    last_update: float = 45.0
    phi_threshold: float = 0.5
    alloc_lower: float = 0.5
    alloc_upper: float = 1.0
    phi_min_events: int = 10
    phi_mode: str = "effect"
    max_followup: Optional[float] = 12.0
    person_time: str = "observed"

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if not 0 < self.power_target < 1:
            raise ValueError("power_target must lie in (0, 1)")
        if not 0 < self.info_fraction < 1:
            raise ValueError("info_fraction must lie in (0, 1)")
        if not 0 < self.pi_design < 1:
            raise ValueError("pi_design must lie in (0, 1)")
        if not (self.hr_margin > 0 and self.hr_alt > 0):
            raise ValueError("hazard ratios must be positive")
        if not (self.accrual > 0 and self.followup > 0):
            raise ValueError("accrual and followup must be positive")
        if not math.isclose(self.accrual + self.followup, self.trial_end):
            raise ValueError("accrual + followup must equal trial_end")
        if self.spending not in SPENDING_FUNCTIONS:
            raise ValueError(f"spending must be one of {SPENDING_FUNCTIONS}")
        if self.futility is not None:
            raise ValueError("futility stopping is not implemented")
        if not 0 < self.burn_in <= self.last_update < self.accrual:
            raise ValueError("need 0 < burn_in <= last_update < accrual")
        if not self.update_interval > 0:
            raise ValueError("update_interval must be positive")
        if not 0 <= self.phi_threshold < 1:
            raise ValueError("phi_threshold must lie in [0, 1)")
        if not 0 <= self.alloc_lower <= self.alloc_upper <= 1:
            raise ValueError("allocation bounds must satisfy 0 <= lower <= upper <= 1")
        if self.phi_mode not in ("effect", "margin"):
            raise ValueError("phi_mode must be 'effect' or 'margin'")
        if self.person_time not in ("observed", "nominal"):
            raise ValueError("person_time must be 'observed' or 'nominal'")
        if self.max_followup is not None and not self.max_followup > 0:
            raise ValueError("max_followup must be positive")
        if self.phi_min_events < 0:
            raise ValueError("phi_min_events must be non-negative")

    @property
    def beta(self) -> float:
        return 1.0 - self.power_target

    @property
    def event_rate(self) -> float:
        """Weighted average monthly PFS rate used for sizing."""
        if self.lambda_bar is not None:
            return self.lambda_bar
        lam_c = LN2 / self.control_median_pfs
        return self.pi_design * lam_c * self.hr_alt + (1.0 - self.pi_design) * lam_c


@dataclass(frozen=True)
class Boundaries:
    c1: float
    c2: float
    alpha1: float
    info_fraction: float

    @property
    def rho(self) -> float:
        return math.sqrt(self.info_fraction)


def obf_spent_alpha(t: float, alpha: float) -> float:
    """Lan-DeMets O'Brien-Fleming cumulative alpha spent at information ``t``."""
    if not 0 < t <= 1:
        raise ValueError(f"information fraction must lie in (0, 1], got {t}")
    if t == 1:
        return alpha
    return 2.0 * (1.0 - normal_cdf(normal_quantile(1.0 - alpha / 2.0) / math.sqrt(t)))


def null_rejection(c1: float, c2: float, info_fraction: float) -> float:
    """P(Z1 > c1) + P(Z1 <= c1, Z2 > c2) under H0."""
    rho = math.sqrt(info_fraction)
    return (1.0 - normal_cdf(c1)) + (normal_cdf(c1) - bivariate_normal_cdf(c1, c2, rho))


@lru_cache(maxsize=256)
def boundaries(info_fraction: float, alpha: float) -> Boundaries:
    """Interim and final critical values for one interim look."""
    if not 0 < info_fraction < 1:
        raise ValueError("info_fraction must lie in (0, 1)")
    alpha1 = obf_spent_alpha(info_fraction, alpha)
    c1 = normal_quantile(1.0 - alpha1)
    rho = math.sqrt(info_fraction)
    target = alpha - alpha1
    p_cont = normal_cdf(c1)

    def excess(c2: float) -> float:
        return p_cont - bivariate_normal_cdf(c1, c2, rho) - target

    lo, hi = -10.0, 10.0
    if excess(lo) * excess(hi) > 0:
        raise BoundaryError(f"no final critical value in [{lo}, {hi}] for IF={info_fraction}")
    c2 = brentq(excess, lo, hi, xtol=1e-13, rtol=1e-14, maxiter=200)
    return Boundaries(c1=c1, c2=c2, alpha1=alpha1, info_fraction=info_fraction)


def fixed_events(alpha: float, beta: float, hr_margin: float, hr_alt: float, pi: float) -> int:
    """Events for a single-look test: smallest P with
    ``sqrt(P * d^2 * pi * (1 - pi)) - z_{1-alpha} >= z_{1-beta}``,
    ``d = ln hr_alt - ln hr_margin``."""
    if not hr_alt < hr_margin:
        raise ValueError("the alternative hazard ratio must lie inside the margin")
    if not 0 < pi < 1:
        raise ValueError("pi must lie in (0, 1)")
    d2 = (math.log(hr_alt) - math.log(hr_margin)) ** 2
    z = normal_quantile(1.0 - alpha) + normal_quantile(1.0 - beta)
    return math.ceil(z * z / (d2 * pi * (1.0 - pi)) - 1e-9)


def gs_power(P: float, b: Boundaries, hr_margin: float, hr_true: float, pi: float) -> tuple[float, float]:
    """(interim power, overall power) of the two-look test with ``P`` events."""
    effect = math.log(hr_margin) - math.log(hr_true)
    scale = math.sqrt(P * pi * (1.0 - pi))
    mu1 = scale * math.sqrt(b.info_fraction) * effect
    mu2 = scale * effect
    power1 = 1.0 - normal_cdf(b.c1 - mu1)
    power2 = normal_cdf(b.c1 - mu1) - bivariate_normal_cdf(b.c1 - mu1, b.c2 - mu2, b.rho)
    return power1, power1 + power2


def required_events_gs(design: TrialDesign) -> int:
    """Smallest event count whose two-look power reaches ``power_target``."""
    P = fixed_events(design.alpha, design.beta, design.hr_margin, design.hr_alt, design.pi_design)
    b = boundaries(design.info_fraction, design.alpha)
    while gs_power(P, b, design.hr_margin, design.hr_alt, design.pi_design)[1] < design.power_target:
        P += 1
    return P


def sample_size(P: int, lambda_bar: float, t: float) -> int:
    """Patients needed to observe ``P`` events when each is followed ``t`` months."""
    if not (lambda_bar > 0 and t > 0):
        raise ValueError("lambda_bar and t must be positive")
    if P == 0:
        return 0
    return math.ceil(P / (1.0 - math.exp(-lambda_bar * t)) - 1e-9)


@dataclass(frozen=True)
class DesignPlan:
    """Derived sizing numbers for a design."""

    events_fixed: int
    events_gs: int
    n_fixed: int
    n_gs: int
    boundaries: Boundaries
    interim_events: int


@lru_cache(maxsize=64)
def plan(design: TrialDesign) -> DesignPlan:
    events_fixed = fixed_events(design.alpha, design.beta, design.hr_margin, design.hr_alt, design.pi_design)
    events_gs = required_events_gs(design)
    lam = design.event_rate
    return DesignPlan(
        events_fixed=events_fixed,
        events_gs=events_gs,
        n_fixed=sample_size(events_fixed, lam, design.followup),
        n_gs=sample_size(events_gs, lam, design.followup),
        boundaries=boundaries(design.info_fraction, design.alpha),
        interim_events=math.ceil(design.info_fraction * events_gs - 1e-9),
    )


def power_table(pis, info_fractions, design: TrialDesign | None = None) -> list[dict]:
    """Theoretical overall power for fixed allocations, one row per (pi, IF).

    Each IF uses its own group-sequential event count.
    """
    base = design or TrialDesign()
    rows = []
    for pi in pis:
        for t in info_fractions:
            d = replace(base, info_fraction=t)
            p = plan(d)
            p1, p_total = gs_power(p.events_gs, p.boundaries, d.hr_margin, d.hr_alt, pi)
            rows.append({"pi": pi, "info_fraction": t, "events": p.events_gs, "power1": p1, "power": p_total})
    return rows

