"""Drift functionals and stability verdicts for simulation traces.

The theory certifies stability through negative one-step drift of norm-like
functions of the backlog, and transience through bounded geometric
functionals.  This module evaluates those functions on simulated states,
estimates their empirical drift with standard errors, and classifies
traces as stable or unstable from the growth of the message count.
Verdicts are statistical summaries, not proofs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np
from scipy import stats

from .model import (
    Schedule,
    SystemParams,
    ceil_to_quantum,
    quantum_extrema,
    quantum_multiple,
    schedule_quantum,
    service_requirement,
)
from .regions import RateVector, ScheduleMeasure, quantum_count_weights
from .sim import RunResult, Trace


# ---------------------------------------------------------------------------
# state norms


def quantum_count_norm(state, params: SystemParams, extrema=None) -> int:
    """One plus the total worst-case service slots the backlog still needs:
    each message contributes the smallest n with residual <= n * min-quantum
    of its power class."""
    ext = extrema or quantum_extrema(params)
    total = 1
    for m in state.messages():
        total += quantum_multiple(m.residual, ext.min_per_class[m.j])
    return total


def workload_norm(state, params: SystemParams, extrema=None) -> float:
    """One plus the residual work in the backlog, padded per message by the
    best-case quantum of its power class.  Meaningful for K >= 2."""
    if params.k_max < 2:
        raise ValueError("workload norm needs k_max >= 2")
    ext = extrema or quantum_extrema(params)
    total = 1.0
    for m in state.messages():
        total += m.residual + ext.max_per_class[m.j]
    return total


def subclass_quantum_norms(
    state, params: SystemParams
) -> dict[tuple[int, tuple[int, ...]], float]:
    """Residual work per subclass (class, assigned schedule), with each
    residual rounded up to whole quanta of that schedule."""
    out: dict[tuple[int, tuple[int, ...]], float] = {}
    cache: dict[tuple[tuple[int, ...], int], float] = {}
    for m in state.messages():
        if m.z is None:
            raise ValueError("subclass norms need states from a state-independent run")
        key = (m.z, m.j)
        q = cache.get(key)
        if q is None:
            q = schedule_quantum(params, Schedule(m.z), m.j)
            cache[key] = q
        sub = (m.flat, m.z)
        out[sub] = out.get(sub, 0.0) + ceil_to_quantum(m.residual, q)
    return out


def subset_residual(state, params: SystemParams, subset: Iterable[int]) -> float:
    """Total residual service of messages whose power class lies in the subset."""
    chosen = frozenset(subset)
    if not chosen:
        raise ValueError("subset must be non-empty")
    for j in chosen:
        params.check_class(0, j)
    return sum(m.residual for m in state.messages() if m.j in chosen)


def quantized_residual(state, params: SystemParams, extrema=None) -> float:
    """Total residual service rounded up to whole worst-case quanta;
    defined for the single power class case."""
    if params.num_power != 1:
        raise ValueError("quantized residual norm needs J = 1")
    ext = extrema or quantum_extrema(params)
    q = ext.min_per_class[0]
    return sum(ceil_to_quantum(m.residual, q) for m in state.messages())


# ---------------------------------------------------------------------------
# Lyapunov functions


def lyapunov_quantum_count(state, params: SystemParams, rate: RateVector) -> float:
    """Squared quantum-count norm over twice the count-condition margin."""
    weights = quantum_count_weights(params)
    margin = params.k_max - sum(a * w for a, w in zip(rate.ea, weights))
    if margin <= 0.0:
        raise ValueError(
            "count condition violated: sum EA*ceil(S/min-quantum) "
            f"= {params.k_max - margin} >= K = {params.k_max}"
        )
    c = quantum_count_norm(state, params)
    return c * c / (2.0 * margin)


def lyapunov_workload(state, params: SystemParams, rate: RateVector) -> float:
    """Squared workload norm over twice the work-condition margin (K >= 2)."""
    ext = quantum_extrema(params)
    lhs = 0.0
    for l in range(params.num_service):
        s_l = service_requirement(params, l)
        for j in range(params.num_power):
            lhs += rate.ea[params.flat_index(l, j)] * (s_l + ext.max_per_class[j])
    margin = ext.min_total - lhs
    if margin <= 0.0:
        raise ValueError(
            f"work condition violated: sum EA*(S+max-quantum) = {lhs} "
            f">= min full-schedule quantum = {ext.min_total}"
        )
    c = workload_norm(state, params, ext)
    return c * c / (2.0 * margin)


def lyapunov_subclass(
    state,
    params: SystemParams,
    measure: ScheduleMeasure,
    subclass_rates: dict[tuple[int, tuple[int, ...]], float],
) -> float:
    """Sum over subclasses of squared subclass norm over twice the subclass
    service margin p(s) * s_c * quantum / quantized-requirement - EA."""
    measure.validate_for(params)
    norms = subclass_quantum_norms(state, params)
    reqs = params.service_requirements()
    total = 0.0
    for s, p in measure.support:
        for c, cnt in enumerate(s.counts):
            if cnt == 0:
                continue
            sub = (c, s.counts)
            ea = subclass_rates.get(sub, 0.0)
            c_norm = norms.get(sub, 0.0)
            if ea == 0.0 and c_norm == 0.0:
                continue
            l, j = divmod(c, params.num_power)
            q = schedule_quantum(params, s, j)
            capacity = p * cnt * q / ceil_to_quantum(reqs[l], q)
            margin = capacity - ea
            if margin <= 0.0:
                raise ValueError(
                    f"subclass condition violated for class {c}, schedule {s.counts}: "
                    f"EA = {ea} >= capacity = {capacity}"
                )
            total += c_norm * c_norm / (2.0 * margin)
    return total


def lyapunov_geometric(
    state,
    params: SystemParams,
    theta: float,
    r_kind: str = "count",
    subset: Iterable[int] | None = None,
) -> float:
    """Bounded transience functional 1 - theta**r(state), 0 < theta < 1.

    r_kind 'count' uses the quantum-count norm, 'subset' the residual work
    of a power-class subset, 'quantized' the quantized residual (J = 1).
    """
    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta must be in (0,1), got {theta}")
    if r_kind == "count":
        r = quantum_count_norm(state, params)
    elif r_kind == "subset":
        if subset is None:
            raise ValueError("r_kind 'subset' needs a power-class subset")
        r = subset_residual(state, params, subset)
    elif r_kind == "quantized":
        r = quantized_residual(state, params)
    else:
        raise ValueError(f"unknown r_kind {r_kind!r}")
    return 1.0 - theta**r


def lyapunov_value(
    state,
    params: SystemParams,
    which: str,
    rate: RateVector | None = None,
    measure: ScheduleMeasure | None = None,
    subclass_rates: dict | None = None,
    theta: float | None = None,
    r_kind: str = "count",
    subset: Iterable[int] | None = None,
) -> float:
    """Dispatch to one of the Lyapunov functionals by name."""
    if which == "quantum_count":
        if rate is None:
            raise ValueError("quantum_count needs the arrival rate vector")
        return lyapunov_quantum_count(state, params, rate)
    if which == "workload":
        if rate is None:
            raise ValueError("workload needs the arrival rate vector")
        return lyapunov_workload(state, params, rate)
    if which == "subclass_quantum":
        if measure is None or subclass_rates is None:
            raise ValueError("subclass_quantum needs the measure and subclass rates")
        return lyapunov_subclass(state, params, measure, subclass_rates)
    if which == "geometric":
        if theta is None:
            raise ValueError("geometric needs theta")
        return lyapunov_geometric(state, params, theta, r_kind, subset)
    raise ValueError(f"unknown Lyapunov functional {which!r}")


# ---------------------------------------------------------------------------
# empirical drift


@dataclass(frozen=True)
class DriftReport:
    """Empirical mean one-step drift of a functional along a trace."""

    functional: str
    mean_drift: float | None
    std_error: float | None
    sample_count: int
    condition: str

    @property
    def inconclusive(self) -> bool:
        return self.sample_count == 0

    def to_json(self) -> dict:
        return {
            "functional": self.functional,
            "mean_drift": self.mean_drift,
            "std_error": self.std_error,
            "sample_count": self.sample_count,
            "condition": self.condition,
        }


def empirical_drift(
    trace: Trace,
    functional: str | Callable,
    condition: Callable[[int], bool] | None = None,
    params: SystemParams | None = None,
) -> DriftReport:
    """Mean of f(next state) - f(state) over the transitions of a trace.

    `functional` is either the name of a series tracked during the run or a
    callable f(state, params) evaluated on recorded states (the run must
    have kept them).  `condition` filters transitions by the message count
    before the step, e.g. lambda n: n >= 5 to look outside a bounded set.
    """
    if isinstance(functional, str):
        if functional not in trace.functionals:
            raise KeyError(
                f"functional {functional!r} was not tracked; available: "
                f"{sorted(trace.functionals)}"
            )
        series = trace.functionals[functional]
        name = functional
    else:
        if trace.states is None:
            raise ValueError("callable functionals need a trace recorded with keep_states")
        if params is None:
            raise ValueError("callable functionals need params")
        series = np.array([functional(s, params) for s in trace.states])
        name = getattr(functional, "__name__", "functional")
    if len(series) < 2:
        raise ValueError("drift needs a trace of at least one transition")

    diffs = np.diff(series)
    if condition is None:
        mask = np.ones(len(diffs), dtype=bool)
        cond_desc = "all slots"
    else:
        n_before = trace.n_total[:-1]
        mask = np.fromiter(
            (bool(condition(int(n))) for n in n_before), bool, count=len(diffs)
        )
        cond_desc = getattr(condition, "__doc__", None) or "filtered on pre-slot count"
    chosen = diffs[mask]
    k = int(chosen.size)
    if k == 0:
        return DriftReport(name, None, None, 0, cond_desc)
    mean = float(chosen.mean())
    se = float(chosen.std(ddof=1) / math.sqrt(k)) if k >= 2 else 0.0
    return DriftReport(name, mean, se, k, cond_desc)


# ---------------------------------------------------------------------------
# slope fitting and verdicts


@dataclass(frozen=True)
class SlopeFit:
    """Least-squares slope of batch means against time, in units per slot."""

    slope: float
    std_error: float
    dof: int
    n_batches: int
    batch_size: int

    def ci(self, level: float) -> tuple[float, float]:
        if self.dof <= 0:
            return (self.slope, self.slope)
        tq = float(stats.t.ppf(0.5 + level / 2.0, self.dof))
        return (self.slope - tq * self.std_error, self.slope + tq * self.std_error)


def fit_slope(series: np.ndarray, n_batches: int = 20) -> SlopeFit:
    """Fit a linear trend to a series via batch means.

    The series is cut into contiguous batches (earliest remainder dropped)
    and an ordinary least-squares line is fit to the batch means versus the
    batch center times.  Batching tames the autocorrelation of queue
    sample paths so the residual-based standard error is usable.
    """
    series = np.asarray(series, dtype=float)
    n = len(series)
    if n < 6:
        raise ValueError(f"need at least 6 points to fit a slope, got {n}")
    b = max(3, min(n_batches, n // 2))
    size = n // b
    start = n - b * size
    y = series[start:].reshape(b, size).mean(axis=1)
    x = start + size * np.arange(b) + (size - 1) / 2.0
    xc = x - x.mean()
    sxx = float((xc**2).sum())
    slope = float((xc * y).sum() / sxx)
    resid = y - y.mean() - slope * xc
    dof = b - 2
    sigma2 = float((resid**2).sum() / dof)
    se = math.sqrt(sigma2 / sxx)
    return SlopeFit(slope, se, dof, b, size)


@dataclass(frozen=True)
class StabilityVerdict:
    """Classification of a trace from the growth of the backlog.

    unstable: the fitted slope exceeds eps times the total arrival rate and
    its confidence interval excludes zero from above.  stable: the wider
    stable-side interval contains zero and the final window's backlog stays
    under the bound.  Anything else is inconclusive.
    """

    verdict: str
    slope: float
    std_error: float
    ci_lo: float
    ci_hi: float
    stable_ci_lo: float
    stable_ci_hi: float
    threshold: float
    max_backlog: int
    window: str

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict,
            "slope_msgs_per_slot": self.slope,
            "std_error": self.std_error,
            "ci": [self.ci_lo, self.ci_hi],
            "stable_ci": [self.stable_ci_lo, self.stable_ci_hi],
            "threshold_msgs_per_slot": self.threshold,
            "max_backlog": self.max_backlog,
            "window": self.window,
        }


def stability_verdict(
    trace: Trace | np.ndarray,
    arrival_mean: float,
    *,
    eps: float = 0.05,
    ci_level: float = 0.95,
    stable_ci_level: float = 0.99,
    window_fraction: float = 0.5,
    backlog_bound: float = 10_000.0,
    min_slots: int = 200_000,
    n_batches: int = 20,
) -> StabilityVerdict:
    """Classify a trace as stable, unstable, or inconclusive.

    arrival_mean is the total mean arrivals per slot; the instability
    threshold on the fitted slope is eps * arrival_mean.  Traces shorter
    than min_slots are rejected (pass a smaller min_slots deliberately for
    short experiments).
    """
    series = trace.n_total[1:] if isinstance(trace, Trace) else np.asarray(trace, float)
    if len(series) < min_slots:
        raise ValueError(
            f"trace has {len(series)} slots, below the configured minimum {min_slots}"
        )
    w0 = int(len(series) * (1.0 - window_fraction))
    window = series[w0:]
    fit = fit_slope(window, n_batches=n_batches)
    ci_lo, ci_hi = fit.ci(ci_level)
    s_lo, s_hi = fit.ci(stable_ci_level)
    threshold = eps * arrival_mean
    max_backlog = int(np.max(window))
    if fit.slope > threshold and ci_lo > 0.0:
        verdict = "unstable"
    elif s_lo <= 0.0 <= s_hi and max_backlog < backlog_bound:
        verdict = "stable"
    else:
        verdict = "inconclusive"
    desc = (
        f"last {len(window)} of {len(series)} slots, "
        f"{fit.n_batches} batches of {fit.batch_size}"
    )
    return StabilityVerdict(
        verdict,
        fit.slope,
        fit.std_error,
        ci_lo,
        ci_hi,
        s_lo,
        s_hi,
        threshold,
        max_backlog,
        desc,
    )


def summarize_run(result: RunResult, **verdict_options) -> dict:
    """Summary statistics of one run as a JSON-ready dict."""
    trace = result.trace
    arrival_mean = sum(result.config.arrivals.means())
    try:
        slope = fit_slope(trace.n_total[1:]).slope
    except ValueError:
        slope = None
    min_slots = verdict_options.get("min_slots", 200_000)
    if trace.horizon >= min_slots:
        verdict = stability_verdict(trace, arrival_mean, **verdict_options).to_json()
    else:
        verdict = None
    return {
        "time_avg_n": result.time_avg_n(),
        "per_class_mean_n": result.per_class_mean_n(),
        "departures": result.total_departures(),
        "slope_estimate": slope,
        "mean_sojourn_per_class": result.mean_sojourn_per_class(),
        "verdict": verdict,
    }
