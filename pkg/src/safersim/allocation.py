"""Neyman targets, the SAFER elastic down-weighting rule and the allocation
state that evolves at scheduled update times."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Optional

import numpy as np

from .inference import CoxFit, phi_weight

if TYPE_CHECKING:
    from .gsdesign import TrialDesign


POLICIES = ("complete", "safety_rar", "safer")


@dataclass(frozen=True)
class AllocationPolicy:
    """How the experimental-arm probability evolves.

    ``complete`` keeps 1:1 throughout, ``safety_rar`` uses the estimated
    Neyman proportion directly, ``safer`` passes it through
    :func:`safer_pi` with curvature ``eta``.
    """

    kind: str = "complete"
    eta: Optional[float] = None

    def __post_init__(self):
        if self.kind not in POLICIES:
            raise ValueError(f"unknown allocation policy {self.kind!r}")
        if self.kind == "safer":
            if self.eta is None or not self.eta > 0:
                raise ValueError("safer policy needs a positive eta")
        elif self.eta is not None:
            raise ValueError(f"{self.kind} policy takes no eta")

    @classmethod
    def complete(cls) -> "AllocationPolicy":
        return cls("complete")

    @classmethod
    def safety_rar(cls) -> "AllocationPolicy":
        return cls("safety_rar")

    @classmethod
    def safer(cls, eta: float) -> "AllocationPolicy":
        return cls("safer", float(eta))

    @property
    def label(self) -> str:
        return f"safer({self.eta:g})" if self.kind == "safer" else self.kind

    @classmethod
    def parse(cls, text: str) -> "AllocationPolicy":
        """Inverse of :attr:`label`: ``complete``, ``safety_rar``, ``safer(5)``."""
        text = text.strip()
        if text.startswith("safer(") and text.endswith(")"):
            return cls.safer(float(text[6:-1]))
        return cls(text)


def neyman_pi(theta_e: float, theta_c: float) -> float:
    """Neyman proportion for the experimental arm from per-arm mean times."""
    if not (theta_e > 0 and theta_c > 0):
        raise ValueError("mean times must be positive")
    return theta_e / (theta_e + theta_c)


def safer_pi(neyman: float, phi: float, eta: float, bounds=(0.5, 1.0), threshold: float = 0.5) -> float:
    """SAFER allocation: shrink the Neyman target toward 1:1 unless the
    efficacy weight ``phi`` supports the experimental arm.

    ``phi <= threshold`` gives 0.5, ``phi == 1`` gives ``neyman``, and in
    between the target is approached along ``1 - (1 - s)**eta`` with
    ``s = (phi - threshold) / (1 - threshold)``.  The result is clamped to
    ``bounds``.
    """
    if phi <= threshold:
        out = 0.5
    elif phi >= 1.0:
        out = neyman
    else:
        s = (phi - threshold) / (1.0 - threshold)
        out = 0.5 + (neyman - 0.5) * (1.0 - (1.0 - s) ** eta)
    lo, hi = bounds
    return min(max(out, lo), hi)


def update_schedule(design: "TrialDesign") -> tuple[float, ...]:
    """Calendar months of the allocation updates (3, 6, ..., 45 by default)."""
    n = int(math.floor((design.last_update - design.burn_in) / design.update_interval + 1e-9)) + 1
    return tuple(float(design.burn_in + i * design.update_interval) for i in range(n))


@dataclass(frozen=True)
class UpdateRecord:
    time: float
    theta_e: Optional[float]
    theta_c: Optional[float]
    neyman: Optional[float]
    phi: Optional[float]
    pi: float


@dataclass(frozen=True)
class AllocationState:
    """Probability of assigning the next patient to the experimental arm."""

    policy: AllocationPolicy
    current_pi: float = 0.5
    history: tuple[UpdateRecord, ...] = field(default_factory=tuple)

    @property
    def trace(self) -> tuple[float, ...]:
        return tuple(r.pi for r in self.history)


def policy_bounds(policy: AllocationPolicy, design: "TrialDesign") -> tuple[float, float]:
    if policy.kind == "safer":
        return design.alloc_lower, design.alloc_upper
    return 0.0, 1.0


def apply_update(state: AllocationState, time: float, theta_e: Optional[float], theta_c: Optional[float],
                 fit: Optional[CoxFit], design: "TrialDesign") -> AllocationState:
    """New state after an update at calendar ``time``.

    ``theta_e``/``theta_c`` are the estimated mean safety times (``None``
    when an arm has no safety events yet, in which case the current
    probability is kept).  ``fit`` is the interim Cox fit on PFS, or
    ``None`` when there is not enough data for one; the efficacy weight then
    falls back to 0.5.
    """
    policy = state.policy
    neyman = phi = None
    pi = state.current_pi
    if policy.kind != "complete" and theta_e is not None and theta_c is not None:
        neyman = neyman_pi(theta_e, theta_c)
        if policy.kind == "safety_rar":
            pi = neyman
        else:
            if fit is None:
                phi = 0.5
            else:
                margin = design.hr_margin if design.phi_mode == "margin" else None
                phi = phi_weight(fit, margin=margin, min_events=design.phi_min_events)
            pi = safer_pi(neyman, phi, policy.eta, policy_bounds(policy, design), design.phi_threshold)
    record = UpdateRecord(time, theta_e, theta_c, neyman, phi, pi)
    return replace(state, current_pi=pi, history=state.history + (record,))


def next_assignment(state: AllocationState, rng) -> int:
    """Bernoulli(current_pi) draw; 1 = experimental."""
    return int(rng.uniform() < state.current_pi)


def assign(pi: float, u: np.ndarray) -> np.ndarray:
    """Vectorised :func:`next_assignment` given pre-drawn uniforms."""
    return (u < pi).astype(np.int8)
