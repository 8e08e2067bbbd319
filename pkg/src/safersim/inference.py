"""Two-arm Cox regression, Wald non-inferiority statistic, exponential means
and the efficacy weight used by the SAFER allocation rule."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .statkernel import normal_cdf

SCORE_TOL = 1e-8
MAX_ITER = 50


class InsufficientEventsError(ValueError):
    """Raised when an estimator needs at least one event and has none."""


@dataclass(frozen=True)
class CoxFit:
    """Maximum partial-likelihood fit of the experimental-arm log hazard ratio."""

    beta_hat: float
    se: float
    n_events: int
    converged: bool
    iterations: int
    score: float


@dataclass(frozen=True)
class WaldResult:
    w: float
    hr_hat: float
    margin: float

    @property
    def determinate(self) -> bool:
        return math.isfinite(self.w)


def _event_risk_sets(time, event, x):
    """Covariate and at-risk counts (n0, n1) for each event.

    Breslow convention: the risk set of an event at ``t`` is everyone with
    observed time >= t, so tied events share a risk set.
    """
    order = np.argsort(time, kind="stable")
    t = time[order]
    xs = x[order]
    first = np.searchsorted(t, t, side="left")
    suffix1 = np.concatenate([np.cumsum(xs[::-1])[::-1], [0.0]])
    at_risk = len(t) - first
    n1 = suffix1[first]
    n0 = at_risk - n1
    ev = event[order]
    return xs[ev], n0[ev], n1[ev]


def _loglik(beta, xe, log_n0, log_n1):
    return float(np.sum(xe * beta - np.logaddexp(log_n0, log_n1 + beta)))


def _score_info(beta, xe, log_n0, log_n1):
    p = expit(beta + log_n1 - log_n0)
    return float(np.sum(xe - p)), float(np.sum(p * (1.0 - p)))


def cox_fit(time, event, arm) -> CoxFit:
    """Newton-Raphson fit of a single binary covariate Cox model.

    Args:
        time: observed times.
        event: event indicators (truthy = event).
        arm: 1 for experimental, 0 for control.

    Starts at beta = 0 and halves any step that lowers the partial
    likelihood.  Convergence is declared when |score| <= 1e-8; a fit that
    has not converged after 50 iterations (e.g. monotone likelihood when all
    events fall in one arm) comes back with ``converged=False``.
    """
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=bool)
    x = np.asarray(arm, dtype=float)
    if time.size == 0:
        raise ValueError("cox_fit needs at least one observation")
    if not (time.shape == event.shape == x.shape):
        raise ValueError("time, event and arm must have the same shape")
    if not event.any():
        raise InsufficientEventsError("cox_fit needs at least one event")
    if x.min() == x.max():
        raise ValueError("both arms must be represented")

    xe, n0, n1 = _event_risk_sets(time, event, x)
    # Monotone likelihood: every event is the largest (or smallest) covariate
    # in its risk set, so the maximiser sits at +/-inf.
    rising = np.all((xe == 1.0) | (n1 == 0))
    falling = np.all((xe == 0.0) | (n0 == 0))
    if rising or falling:
        return CoxFit(
            beta_hat=math.inf if rising else -math.inf,
            se=math.inf,
            n_events=int(event.sum()),
            converged=False,
            iterations=0,
            score=math.nan,
        )

    with np.errstate(divide="ignore"):
        log_n0 = np.log(n0)
        log_n1 = np.log(n1)

    beta = 0.0
    ll = _loglik(beta, xe, log_n0, log_n1)
    score, info = _score_info(beta, xe, log_n0, log_n1)
    converged = abs(score) <= SCORE_TOL
    it = 0
    while not converged and it < MAX_ITER:
        it += 1
        if not info > 0.0:
            break
        step = score / info
        for _ in range(60):
            cand = beta + step
            ll_cand = _loglik(cand, xe, log_n0, log_n1)
            if ll_cand >= ll - 1e-12 * abs(ll):
                break
            step *= 0.5
        beta, ll = cand, ll_cand
        score, info = _score_info(beta, xe, log_n0, log_n1)
        converged = abs(score) <= SCORE_TOL

    se = 1.0 / math.sqrt(info) if info > 0.0 else math.inf
    return CoxFit(
        beta_hat=beta,
        se=se,
        n_events=int(event.sum()),
        converged=converged,
        iterations=it,
        score=score,
    )


def wald_noninferiority(fit: CoxFit, hr0: float) -> WaldResult:
    """``W = (beta_hat - ln hr0) / se``; NaN when the fit did not converge.

    Small (negative) W is evidence of non-inferiority.
    """
    if not hr0 > 0:
        raise ValueError("hr0 must be positive")
    if not fit.converged:
        return WaldResult(w=math.nan, hr_hat=math.exp(min(fit.beta_hat, 700.0)), margin=hr0)
    return WaldResult(
        w=(fit.beta_hat - math.log(hr0)) / fit.se,
        hr_hat=math.exp(fit.beta_hat),
        margin=hr0,
    )


def exp_mean_mle(time, event) -> float:
    """Censoring-aware exponential mean: total follow-up over event count."""
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=bool)
    if time.size == 0:
        raise ValueError("exp_mean_mle needs at least one observation")
    d = int(event.sum())
    if d == 0:
        raise InsufficientEventsError("no events: exponential mean is undefined")
    return float(time.sum()) / d


def phi_weight(fit: CoxFit, margin: float | None = None, min_events: int = 0) -> float:
    """Efficacy weight ``Phi(-beta_hat / se)``.

    The Cox sign is flipped so values above 0.5 favour the experimental arm.
    With ``margin`` the non-inferiority-shifted statistic is used instead.
    Returns 0.5 (no evidence) for non-converged fits and for fits with fewer
    than ``min_events`` events.
    """
    if not fit.converged or fit.n_events < min_events:
        return 0.5
    shift = 0.0 if margin is None else math.log(margin)
    return normal_cdf(-(fit.beta_hat - shift) / fit.se)
