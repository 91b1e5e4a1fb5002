"""Stability and transience conditions for the scheduled multiaccess channel.

Two families of results are computed here.  For non-idling policies (always
transmit as many waiting messages as allowed, up to K) there is an inner
region of arrival-rate vectors certified stable and an outer region
certified transient, both in closed form given the quantum extrema.  For
state-independent policies (a fixed probability measure over schedules,
drawn independently of the backlog) and for general stationary policies,
per-class rate bounds are induced by a schedule measure; membership of a
target rate in the union over measures is decided by a small linear
program.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from . import simplex
from .model import (
    DEFAULT_SCHEDULE_CAP,
    CapacityError,
    Schedule,
    SystemParams,
    ceil_to_quantum,
    ceil_to_quantum_array,
    compositions,
    enumerate_schedules,
    quantum_extrema,
    quantum_multiple,
    schedule_count,
    schedule_quantum,
    service_quantum,
    service_requirement,
)

MAX_POWER_CLASSES_FOR_SUBSETS = 20
BOUNDARY_TOL = 1e-6


@dataclass(frozen=True)
class RateVector:
    """Mean batch-arrival vector, messages per slot per class (row-major).

    ea[c] is the mean number of class-c arrivals per slot; ea2 optionally
    carries the per-class second moments.
    """

    ea: tuple[float, ...]
    ea2: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "ea", tuple(float(x) for x in self.ea))
        if any((not math.isfinite(x)) or x < 0.0 for x in self.ea):
            raise ValueError(f"arrival means must be finite and >= 0, got {self.ea}")
        if self.ea2 is not None:
            object.__setattr__(self, "ea2", tuple(float(x) for x in self.ea2))
            if len(self.ea2) != len(self.ea):
                raise ValueError("ea2 must match ea in length")
            if any((not math.isfinite(x)) or x < 0.0 for x in self.ea2):
                raise ValueError("second moments must be finite and >= 0")

    @property
    def total(self) -> float:
        return sum(self.ea)

    def scaled(self, factor: float) -> "RateVector":
        return RateVector(tuple(factor * x for x in self.ea))

    def per_second(self, bandwidth_w: float) -> tuple[float, ...]:
        """Arrival rates in messages per second: lambda = W * EA."""
        return tuple(bandwidth_w * x for x in self.ea)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.ea, dtype=float)


@dataclass(frozen=True)
class ScheduleMeasure:
    """A probability measure over schedules with total <= K."""

    support: tuple[tuple[Schedule, float], ...]

    def __post_init__(self):
        object.__setattr__(
            self,
            "support",
            tuple((s, float(p)) for s, p in self.support),
        )
        if not self.support:
            raise ValueError("measure needs at least one supported schedule")
        seen = set()
        total = 0.0
        for s, p in self.support:
            if p < 0.0:
                raise ValueError(f"probability {p} is negative")
            if s.counts in seen:
                raise ValueError(f"schedule {s.counts} appears twice in the support")
            seen.add(s.counts)
            total += p
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {total}, not 1 within 1e-9")

    def validate_for(self, params: SystemParams) -> None:
        for s, _ in self.support:
            if len(s.counts) != params.num_classes:
                raise ValueError(
                    f"schedule {s.counts} has {len(s.counts)} entries, expected {params.num_classes}"
                )
            if s.total > params.k_max:
                raise ValueError(f"schedule {s.counts} exceeds k_max={params.k_max}")

    def probability(self, schedule: Schedule) -> float:
        for s, p in self.support:
            if s.counts == schedule.counts:
                return p
        return 0.0


class InnerCheck(NamedTuple):
    """Outcome of the non-idling stability test.

    `count` condition: total quantum demand (slots of service per message,
    at worst-case quanta) stays below K per slot.  `work` condition: raw
    workload plus per-arrival overhead stays below the worst-case total
    quantum of a full schedule (needs K >= 2).
    """

    certified: bool
    via: str | None
    count_lhs: float
    count_rhs: float
    work_lhs: float | None
    work_rhs: float | None


class OuterCheck(NamedTuple):
    """Outcome of the non-idling transience test.

    For K >= 2 the test searches power-class subsets B: arrival workload
    bound for B at least the best full-schedule quantum deliverable to B.
    For K = 1 it is the strict converse of the count condition.
    """

    certified: bool
    witness_subset: tuple[int, ...] | None
    lhs: float | None
    rhs: float | None
    margin: float | None


@dataclass(frozen=True)
class RegionVerdict:
    classification: str  # inner_stable | outer_transient | indeterminate
    inner: InnerCheck
    outer: OuterCheck

    def witness(self):
        if self.classification == "inner_stable":
            return {"condition": self.inner.via}
        if self.classification == "outer_transient":
            if self.outer.witness_subset is not None:
                return {"subset": [j + 1 for j in self.outer.witness_subset]}
            return {"condition": "count"}
        return None


def _check_rate(params: SystemParams, rate: RateVector) -> None:
    if len(rate.ea) != params.num_classes:
        raise ValueError(
            f"rate has {len(rate.ea)} entries, expected {params.num_classes}"
        )


def quantum_count_weights(params: SystemParams) -> tuple[int, ...]:
    """Worst-case slots of service per class-(l, j) message: the smallest n
    with S_l <= n * min-quantum_j, flattened row-major."""
    ext = quantum_extrema(params)
    weights = []
    for l in range(params.num_service):
        s_l = service_requirement(params, l)
        for j in range(params.num_power):
            weights.append(quantum_multiple(s_l, ext.min_per_class[j]))
    return tuple(weights)


def check_nonidling_inner(params: SystemParams, rate: RateVector) -> InnerCheck:
    """Certify a rate vector stable under every non-idling policy.

    Both sufficient conditions are evaluated: the quantum-count condition
    sum EA_lj * ceil(S_l / min-quantum_j) < K for any K >= 1, and for
    K >= 2 also the workload condition sum EA_lj * (S_l + max-quantum_j)
    < worst-case full-schedule total quantum.
    """
    _check_rate(params, rate)
    ext = quantum_extrema(params)
    weights = quantum_count_weights(params)
    count_lhs = sum(a * w for a, w in zip(rate.ea, weights))
    count_rhs = float(params.k_max)
    via = "count" if count_lhs < count_rhs else None

    work_lhs = work_rhs = None
    if params.k_max >= 2:
        work_lhs = 0.0
        for l in range(params.num_service):
            s_l = service_requirement(params, l)
            for j in range(params.num_power):
                c = params.flat_index(l, j)
                work_lhs += rate.ea[c] * (s_l + ext.max_per_class[j])
        work_rhs = ext.min_total
        if via is None and work_lhs < work_rhs:
            via = "work"
    return InnerCheck(via is not None, via, count_lhs, count_rhs, work_lhs, work_rhs)


def _subset_quantum_max(
    params: SystemParams, cap: int
) -> tuple[list[tuple[int, ...]], dict[tuple[int, ...], float]]:
    """Best deliverable quantum per power-class subset over full schedules.

    The objective depends on a schedule only through its power-column
    occupancies, so the search runs over compositions of K into J parts.
    """
    J = params.num_power
    if J > MAX_POWER_CLASSES_FOR_SUBSETS:
        raise CapacityError(2**J - 1, 2**MAX_POWER_CLASSES_FOR_SUBSETS, what="power subsets")
    K = params.k_max
    n_points = math.comb(K + J - 1, J - 1)
    if n_points > cap:
        raise CapacityError(n_points, cap, what="power-column occupancies")
    subsets = []
    for mask in range(1, 2**J):
        subsets.append(tuple(j for j in range(J) if mask >> j & 1))
    best = {b: -math.inf for b in subsets}
    n0w = params.noise_power
    for m in compositions(K, J):
        tot_p = sum(mj * pj for mj, pj in zip(m, params.powers))
        vals = [
            mj * service_quantum(params.rho, pj, n0w + tot_p - pj) if mj else 0.0
            for mj, pj in zip(m, params.powers)
        ]
        for b in subsets:
            v = sum(vals[j] for j in b)
            if v > best[b]:
                best[b] = v
    return subsets, best


def check_nonidling_transient(
    params: SystemParams, rate: RateVector, cap: int = DEFAULT_SCHEDULE_CAP
) -> OuterCheck:
    """Certify a rate vector transient under every non-idling policy.

    K = 1: transient when the quantum-count demand strictly exceeds 1.
    K >= 2: transient when some non-empty power subset B receives workload
    at rate >= the best full-schedule quantum deliverable to B (ties count
    as transient).  The subset with the largest margin is the witness.
    """
    _check_rate(params, rate)
    if params.k_max == 1:
        weights = quantum_count_weights(params)
        lhs = sum(a * w for a, w in zip(rate.ea, weights))
        certified = lhs > 1.0
        return OuterCheck(certified, None, lhs, 1.0, lhs - 1.0)

    reqs = params.service_requirements()
    subsets, best = _subset_quantum_max(params, cap)
    top_margin = -math.inf
    top = None
    for b in subsets:
        lhs = 0.0
        for l in range(params.num_service):
            for j in b:
                lhs += reqs[l] * rate.ea[params.flat_index(l, j)]
        rhs = best[b]
        margin = lhs - rhs
        if margin > top_margin:
            top_margin = margin
            top = (b, lhs, rhs)
    b, lhs, rhs = top
    return OuterCheck(top_margin >= 0.0, b, lhs, rhs, top_margin)


def region_verdict(
    params: SystemParams, rate: RateVector, cap: int = DEFAULT_SCHEDULE_CAP
) -> RegionVerdict:
    """Combine both non-idling tests into a single classification."""
    inner = check_nonidling_inner(params, rate)
    outer = check_nonidling_transient(params, rate, cap=cap)
    if inner.certified and outer.certified:
        raise RuntimeError(
            "rate certified both stable and transient; bounds are inconsistent"
        )
    if inner.certified:
        cls = "inner_stable"
    elif outer.certified:
        cls = "outer_transient"
    else:
        cls = "indeterminate"
    return RegionVerdict(cls, inner, outer)


def large_k_threshold(params: SystemParams) -> float:
    """Workload threshold sum EA_lj * S_l < rho / (1 + rho) as K grows
    without bound; independent of the power levels."""
    return params.rho / (1.0 + params.rho)


class EqualPowerThreshold(NamedTuple):
    """Exact stability boundary when all messages share one power level.

    Stable iff sum_l EA_l * weights[l] < k_quantum, where weights[l] is the
    service requirement rounded up to a whole number of worst-case quanta.
    `scalar` is the single-class arrival-rate threshold (messages/slot)
    when there is exactly one service class.
    """

    k_quantum: float
    min_quantum: float
    weights: tuple[float, ...]
    scalar: float | None


def equal_power_threshold(params: SystemParams) -> EqualPowerThreshold:
    if params.num_power != 1:
        raise ValueError(f"equal-power threshold needs J=1, got J={params.num_power}")
    ext = quantum_extrema(params)
    q = ext.min_per_class[0]
    weights = tuple(
        ceil_to_quantum(service_requirement(params, l), q)
        for l in range(params.num_service)
    )
    k_quantum = params.k_max * q
    scalar = k_quantum / weights[0] if params.num_service == 1 else None
    return EqualPowerThreshold(k_quantum, q, weights, scalar)


class CapacityCurve(NamedTuple):
    """Stable nat arrival rate versus alphabet size for one class, one power.

    points: (alphabet_size, nats_per_slot, nats_per_second) triples.
    limit_*: the large-alphabet limit of the threshold.
    rho0_supremum_nats_per_second: supremum of that limit as rho shrinks to
    zero, K times the Gaussian-channel capacity at the interference-limited
    SNR; reported for reference only, the model itself requires rho > 0.
    """

    points: tuple[tuple[int, float, float], ...]
    limit_nats_per_slot: float
    limit_nats_per_second: float
    rho0_supremum_nats_per_second: float


def alphabet_capacity_curve(
    params: SystemParams, alphabet_sizes: Iterable[int]
) -> CapacityCurve:
    """Threshold on nat arrival rate as a function of the alphabet size.

    Uses the equal-power boundary with the service requirement recomputed
    for each alphabet size (error probability fixed from the single service
    class).  Requires L = J = 1.
    """
    if params.num_power != 1 or params.num_service != 1:
        raise ValueError("capacity curve needs L = J = 1")
    ext = quantum_extrema(params)
    q = ext.min_per_class[0]
    pe = params.service_classes[0].error_prob
    k = params.k_max
    w = params.bandwidth_w
    pts = []
    for m in alphabet_sizes:
        if not (isinstance(m, int) and m >= 2):
            raise ValueError(f"alphabet sizes must be integers >= 2, got {m}")
        s_m = -math.log(pe) + params.rho * math.log(m)
        per_slot = k * q * math.log(m) / ceil_to_quantum(s_m, q)
        pts.append((m, per_slot, per_slot * w))
    limit_slot = k * q / params.rho
    gamma = params.snr(0)
    rho0_sup = k * w * math.log1p(gamma / ((k - 1) * gamma + 1.0))
    return CapacityCurve(tuple(pts), limit_slot, limit_slot * w, rho0_sup)


def inner_rate_bound(params: SystemParams, measure: ScheduleMeasure) -> np.ndarray:
    """Per-class stable arrival rates induced by a schedule measure.

    Component (l, j) sums, over supported schedules containing the class,
    the schedule probability times the served count times the per-service
    fraction of a message completed per served slot (quantum over the
    requirement rounded up to whole quanta of that schedule).
    """
    measure.validate_for(params)
    out = np.zeros(params.num_classes)
    reqs = params.service_requirements()
    for s, p in measure.support:
        if p == 0.0:
            continue
        for l in range(params.num_service):
            for j in range(params.num_power):
                c = params.flat_index(l, j)
                if s.counts[c] == 0:
                    continue
                q = schedule_quantum(params, s, j)
                out[c] += p * s.counts[c] * q / ceil_to_quantum(reqs[l], q)
    return out


def outer_rate_bound(params: SystemParams, measure: ScheduleMeasure) -> np.ndarray:
    """Per-class rate bound for any stationary policy consistent with the
    measure; like inner_rate_bound but against the raw requirement, so it
    dominates the inner bound componentwise."""
    measure.validate_for(params)
    out = np.zeros(params.num_classes)
    reqs = params.service_requirements()
    for s, p in measure.support:
        if p == 0.0:
            continue
        for l in range(params.num_service):
            for j in range(params.num_power):
                c = params.flat_index(l, j)
                if s.counts[c] == 0:
                    continue
                out[c] += p * s.counts[c] * schedule_quantum(params, s, j) / reqs[l]
    return out


def measure_coefficient_matrix(
    params: SystemParams, schedules: Sequence[Schedule], mode: str
) -> np.ndarray:
    """Per-class rate earned from each schedule: rows are classes, columns
    schedules.  mode 'inner_policy' divides by the quantized requirement,
    'outer_measure' by the raw one."""
    if mode not in ("inner_policy", "outer_measure"):
        raise ValueError(f"unknown membership mode {mode!r}")
    L, J = params.num_service, params.num_power
    counts = np.array([s.counts for s in schedules], dtype=float)  # (N, LJ)
    n = counts.shape[0]
    powers = np.asarray(params.powers)
    flat_powers = np.tile(powers, L)
    tot_power = counts @ flat_powers  # (N,)
    col = counts.reshape(n, L, J).sum(axis=1)  # (N, J)
    phi = np.zeros((n, J))
    for j in range(J):
        occupied = col[:, j] > 0
        sig = params.noise_power + tot_power[occupied] - powers[j]
        phi[occupied, j] = params.rho * np.log1p(
            powers[j] / ((1.0 + params.rho) * sig)
        )
    reqs = params.service_requirements()
    out = np.zeros((L * J, n))
    for l in range(L):
        for j in range(J):
            c = l * J + j
            mask = counts[:, c] > 0
            if not mask.any():
                continue
            if mode == "inner_policy":
                denom = ceil_to_quantum_array(
                    np.full(mask.sum(), reqs[l]), phi[mask, j]
                )
            else:
                denom = reqs[l]
            out[c, mask] = counts[mask, c] * phi[mask, j] / denom
    return out


class MembershipResult(NamedTuple):
    """Largest factor by which the target rate fits in the region.

    t_star > 1 means the target is strictly interior, t_star within
    BOUNDARY_TOL of 1 sits on the boundary, t_star < 1 is outside.  The
    witness measure attains componentwise rates >= t_star * target.
    """

    t_star: float
    measure: ScheduleMeasure
    mode: str

    @property
    def inside(self) -> bool:
        return self.t_star > 1.0 + BOUNDARY_TOL

    @property
    def on_boundary(self) -> bool:
        return abs(self.t_star - 1.0) <= BOUNDARY_TOL


def region_membership(
    params: SystemParams,
    target: RateVector,
    mode: str = "inner_policy",
    cap: int = DEFAULT_SCHEDULE_CAP,
) -> MembershipResult:
    """Decide membership of a target rate in the union over schedule
    measures of the induced rate regions.

    Maximizes t subject to: some measure p over all schedules with total
    <= K earns rate >= t * target componentwise.  Solved with the dense
    simplex; the optimal measure is returned as a witness.
    """
    _check_rate(params, target)
    n_sched = schedule_count(params, "at_most")
    if n_sched > cap:
        raise CapacityError(n_sched, cap)
    beta = target.as_array()
    if not beta.any():
        raise ValueError("target rate must be non-zero")
    schedules = list(enumerate_schedules(params, "at_most"))
    cvals = measure_coefficient_matrix(params, schedules, mode)
    active = beta > 0.0
    try:
        t_star, p = simplex.solve_scaling(cvals[active], beta[active])
    except simplex.SimplexError as exc:
        raise RuntimeError(f"membership program failed to converge: {exc}") from exc
    support = tuple(
        (schedules[i], float(p[i])) for i in range(len(schedules)) if p[i] > 1e-12
    )
    if not support:
        support = ((schedules[0], 1.0),)
    total = sum(pr for _, pr in support)
    support = tuple((s, pr / total) for s, pr in support)
    return MembershipResult(t_star, ScheduleMeasure(support), mode)


def to_nat_rates(
    params: SystemParams, vector: Sequence[float], per_second: bool = False
) -> tuple[float, ...]:
    """Scale per-class message rates to nat rates: entry (l, j) times
    ln(M_l), and times W when reporting per second."""
    if len(vector) != params.num_classes:
        raise ValueError(
            f"vector has {len(vector)} entries, expected {params.num_classes}"
        )
    factor_w = params.bandwidth_w if per_second else 1.0
    out = []
    for c, v in enumerate(vector):
        l = c // params.num_power
        out.append(v * math.log(params.service_classes[l].alphabet_size) * factor_w)
    return tuple(out)


COMPLETION_TOL = 1e-12


def signal_duration(
    params: SystemParams, l: int, quanta: Iterable[float]
) -> int | None:
    """Slots needed to accumulate the class-l service requirement from a
    per-slot quantum sequence.  None when the sequence ends first."""
    target = service_requirement(params, l)
    acc = 0.0
    for d, q in enumerate(quanta, start=1):
        if q <= 0.0:
            raise ValueError(f"slot quanta must be > 0, got {q}")
        acc += q
        if target - acc <= COMPLETION_TOL:
            return d
    return None


def inner_scaling(params: SystemParams, rate: RateVector) -> float:
    """Largest multiplier m with m * rate still inner-certified for
    non-idling policies (infinite when the rate is zero)."""
    _check_rate(params, rate)
    check = check_nonidling_inner(params, rate)
    t_count = math.inf if check.count_lhs == 0.0 else check.count_rhs / check.count_lhs
    t_work = -math.inf
    if check.work_lhs is not None:
        t_work = math.inf if check.work_lhs == 0.0 else check.work_rhs / check.work_lhs
    return max(t_count, t_work)


def transient_scaling(
    params: SystemParams, rate: RateVector, cap: int = DEFAULT_SCHEDULE_CAP
) -> float:
    """Smallest multiplier m with m * rate outer-certified transient."""
    _check_rate(params, rate)
    if rate.total == 0.0:
        return math.inf
    if params.k_max == 1:
        weights = quantum_count_weights(params)
        lhs = sum(a * w for a, w in zip(rate.ea, weights))
        return math.inf if lhs == 0.0 else 1.0 / lhs
    reqs = params.service_requirements()
    subsets, best = _subset_quantum_max(params, cap)
    t = math.inf
    for b in subsets:
        lhs = 0.0
        for l_idx in range(params.num_service):
            for j in b:
                lhs += reqs[l_idx] * rate.ea[params.flat_index(l_idx, j)]
        if lhs > 0.0:
            t = min(t, best[b] / lhs)
    return t
