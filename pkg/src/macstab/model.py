"""Physical and coding model for a scheduled multiaccess channel.

A slotted Gaussian multiaccess channel serves messages that arrive in
batches.  Each message belongs to a class (l, j): l indexes the service
requirement (target error probability and alphabet size), j the received
power level.  When a set of messages transmits simultaneously, every
scheduled message accrues a per-slot service quantum that shrinks with the
interference power of the other scheduled transmissions.  A message departs
once its accumulated quantum reaches its service requirement.

All service quantities are in nats; a slot lasts 1/W seconds.  Class
indices are 0-based throughout the Python API (file formats use 1-based
labels).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np

# Relative tolerance used when deciding whether x already sits on a quantum
# boundary; guards against one-ulp overshoot in x/q.
QUANTUM_REL_TOL = 1e-12

# Refuse region computations whose schedule enumeration would exceed this.
DEFAULT_SCHEDULE_CAP = 10_000_000


class CapacityError(RuntimeError):
    """Raised when a computation would enumerate more schedules than the cap."""

    def __init__(self, count: int, cap: int, what: str = "schedules"):
        super().__init__(
            f"operation needs {count} {what}, exceeding the cap of {cap}; "
            "reduce k_max or the number of classes, or raise the cap"
        )
        self.count = count
        self.cap = cap


class ClassIndex(NamedTuple):
    """Message class: service-requirement index l, power index j (0-based)."""

    l: int
    j: int


@dataclass(frozen=True)
class ServiceClass:
    """Reliability target of one service class.

    error_prob: tolerable decoding error probability, in (0, 1).
    alphabet_size: message alphabet size, integer >= 2.  Kept as an int so
    that log() stays exact for astronomically large alphabets.
    """

    error_prob: float
    alphabet_size: int

    def __post_init__(self):
        if not (0.0 < self.error_prob < 1.0):
            raise ValueError(f"error_prob must be in (0,1), got {self.error_prob}")
        if not (isinstance(self.alphabet_size, int) and self.alphabet_size >= 2):
            raise ValueError(f"alphabet_size must be an integer >= 2, got {self.alphabet_size}")


@dataclass(frozen=True)
class SystemParams:
    """Channel, coding, and class parameters of the system.

    rho: random-coding exponent parameter, in (0, 1].
    bandwidth_w: channel bandwidth W in Hz (slot duration is 1/W).
    noise_n0: noise two-sided power spectral density N0 in W/Hz.
    k_max: maximum number of simultaneous transmissions K.
    powers: received power P_j in W for each power class j.
    service_classes: one ServiceClass per service-requirement class l.
    """

    rho: float
    bandwidth_w: float
    noise_n0: float
    k_max: int
    powers: tuple[float, ...]
    service_classes: tuple[ServiceClass, ...]

    def __post_init__(self):
        object.__setattr__(self, "powers", tuple(float(p) for p in self.powers))
        object.__setattr__(self, "service_classes", tuple(self.service_classes))
        if not (0.0 < self.rho <= 1.0):
            raise ValueError(f"rho must be in (0,1], got {self.rho}")
        if not self.bandwidth_w > 0.0:
            raise ValueError(f"bandwidth_w must be > 0, got {self.bandwidth_w}")
        if not self.noise_n0 > 0.0:
            raise ValueError(f"noise_n0 must be > 0, got {self.noise_n0}")
        if not (isinstance(self.k_max, int) and self.k_max >= 1):
            raise ValueError(f"k_max must be an integer >= 1, got {self.k_max}")
        if not self.powers or any(p <= 0.0 for p in self.powers):
            raise ValueError("powers must be a non-empty list of values > 0")
        if not self.service_classes:
            raise ValueError("at least one service class is required")

    @classmethod
    def with_unit_noise(cls, rho, k_max, gammas, service_classes, bandwidth_w=1.0):
        """Build params with N0*W = 1 so that P_j equals the SNR gamma_j."""
        return cls(
            rho=rho,
            bandwidth_w=bandwidth_w,
            noise_n0=1.0 / bandwidth_w,
            k_max=k_max,
            powers=tuple(gammas),
            service_classes=tuple(service_classes),
        )

    @property
    def num_service(self) -> int:
        return len(self.service_classes)

    @property
    def num_power(self) -> int:
        return len(self.powers)

    @property
    def num_classes(self) -> int:
        return self.num_service * self.num_power

    @property
    def noise_power(self) -> float:
        """Thermal noise power N0*W in W."""
        return self.noise_n0 * self.bandwidth_w

    def snr(self, j: int) -> float:
        """Received SNR gamma_j = P_j / (N0 W) of power class j."""
        return self.powers[j] / self.noise_power

    def flat_index(self, l: int, j: int) -> int:
        """Row-major flattening of the class grid: c = l * J + j."""
        self.check_class(l, j)
        return l * self.num_power + j

    def class_of(self, c: int) -> ClassIndex:
        return ClassIndex(c // self.num_power, c % self.num_power)

    def check_class(self, l: int, j: int) -> None:
        if not (0 <= l < self.num_service):
            raise ValueError(f"service class index {l} out of range [0,{self.num_service})")
        if not (0 <= j < self.num_power):
            raise ValueError(f"power class index {j} out of range [0,{self.num_power})")

    def service_requirements(self) -> tuple[float, ...]:
        return tuple(service_requirement(self, l) for l in range(self.num_service))


@dataclass(frozen=True)
class Schedule:
    """A vector of simultaneous per-class transmission counts.

    counts[c] is the number of class-c messages transmitting together,
    with c the row-major flat index over (l, j).
    """

    counts: tuple[int, ...]
    total: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "counts", tuple(int(x) for x in self.counts))
        if any(x < 0 for x in self.counts):
            raise ValueError(f"schedule counts must be >= 0, got {self.counts}")
        object.__setattr__(self, "total", sum(self.counts))

    def count(self, params: SystemParams, l: int, j: int) -> int:
        return self.counts[params.flat_index(l, j)]

    def column_total(self, params: SystemParams, j: int) -> int:
        """Number of scheduled messages of power class j, any service class."""
        J = params.num_power
        return sum(self.counts[c] for c in range(j, len(self.counts), J))

    def total_power(self, params: SystemParams) -> float:
        J = params.num_power
        return sum(n * params.powers[c % J] for c, n in enumerate(self.counts) if n)


def service_requirement(params: SystemParams, l: int) -> float:
    """Total service (nats) a class-l message needs: -ln(Pe_l) + rho*ln(M_l)."""
    params.check_class(l, 0)
    sc = params.service_classes[l]
    return -math.log(sc.error_prob) + params.rho * math.log(sc.alphabet_size)


def service_quantum(rho: float, signal_power: float, noise_var: float) -> float:
    """Per-slot service quantum (nats) of a transmission.

    rho * ln(1 + signal_power / ((1 + rho) * noise_var)).  Strictly
    increasing in signal_power, strictly decreasing in noise_var.
    """
    if noise_var <= 0.0:
        raise ValueError(f"noise variance must be > 0, got {noise_var}")
    if signal_power < 0.0:
        raise ValueError(f"signal power must be >= 0, got {signal_power}")
    return rho * math.log1p(signal_power / ((1.0 + rho) * noise_var))


def effective_noise(params: SystemParams, schedule: Schedule, j: int) -> float:
    """Noise-plus-interference variance seen by a scheduled class-(., j) message.

    N0*W plus the received power of every other scheduled transmission.
    Requires that the schedule actually contains a class-(., j) message.
    """
    params.check_class(0, j)
    if schedule.column_total(params, j) <= 0:
        raise ValueError(f"schedule {schedule.counts} has no message of power class j={j}")
    return params.noise_power + schedule.total_power(params) - params.powers[j]


def schedule_quantum(params: SystemParams, schedule: Schedule, j: int) -> float:
    """Per-message quantum of a power-class-j message under a full schedule.

    Zero when the schedule contains no class-(., j) message.  Defined for
    every schedule with total <= K, not just the full ones.
    """
    params.check_class(0, j)
    if schedule.column_total(params, j) <= 0:
        return 0.0
    noise = params.noise_power + schedule.total_power(params) - params.powers[j]
    return service_quantum(params.rho, params.powers[j], noise)


def quantum_between(params: SystemParams, j: int, total_transmit_power: float) -> float:
    """Quantum of a class-(., j) message given the total concurrently
    transmitting power (own power included).  Shared by the simulator so
    per-slot quanta agree bit-for-bit with schedule_quantum."""
    noise = params.noise_power + total_transmit_power - params.powers[j]
    return service_quantum(params.rho, params.powers[j], noise)


def ceil_to_quantum(x: float, q: float) -> float:
    """Round x > 0 up to the smallest positive multiple of q.

    Exact multiples map to themselves; a relative tolerance absorbs
    floating-point overshoot of x/q at representational boundaries.
    """
    if x <= 0.0:
        raise ValueError(f"x must be > 0, got {x}")
    if q <= 0.0:
        raise ValueError(f"q must be > 0, got {q}")
    n = math.floor(x / q)
    if n < 1 or x > n * q * (1.0 + QUANTUM_REL_TOL):
        n += 1
    return n * q


def quantum_multiple(x: float, q: float) -> int:
    """The integer n >= 1 with ceil_to_quantum(x, q) == n*q."""
    if x <= 0.0:
        raise ValueError(f"x must be > 0, got {x}")
    if q <= 0.0:
        raise ValueError(f"q must be > 0, got {q}")
    n = math.floor(x / q)
    if n < 1 or x > n * q * (1.0 + QUANTUM_REL_TOL):
        n += 1
    return n


def ceil_to_quantum_array(x: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Vectorized ceil_to_quantum with identical boundary semantics."""
    x = np.asarray(x, dtype=float)
    q = np.asarray(q, dtype=float)
    if np.any(x <= 0.0) or np.any(q <= 0.0):
        raise ValueError("x and q must be > 0")
    n = np.floor(x / q)
    bump = (n < 1) | (x > n * q * (1.0 + QUANTUM_REL_TOL))
    n = n + bump
    return n * q


def compositions(total: int, parts: int) -> Iterator[tuple[int, ...]]:
    """All vectors of `parts` non-negative integers summing to `total`."""
    if parts == 1:
        yield (total,)
        return
    for head in range(total + 1):
        for rest in compositions(total - head, parts - 1):
            yield (head,) + rest


def schedule_count(params: SystemParams, mode: str, j: int | None = None) -> int:
    """Closed-form size of a schedule set without enumerating it.

    exact: C(K+LJ-1, LJ-1); at_most: C(K+LJ, LJ); exact_with_class_j:
    exact-count schedules minus those leaving power column j empty.
    """
    n = params.num_classes
    K = params.k_max
    if mode == "exact":
        return math.comb(K + n - 1, n - 1)
    if mode == "at_most":
        return math.comb(K + n, n)
    if mode == "exact_with_class_j":
        if j is None:
            raise ValueError("mode exact_with_class_j needs a power class j")
        params.check_class(0, j)
        others = params.num_service * (params.num_power - 1)
        if others == 0:
            empty_col = 1 if K == 0 else 0
        else:
            empty_col = math.comb(K + others - 1, others - 1)
        return math.comb(K + n - 1, n - 1) - empty_col
    raise ValueError(f"unknown enumeration mode {mode!r}")


def enumerate_schedules(
    params: SystemParams, mode: str = "at_most", j: int | None = None
) -> Iterator[Schedule]:
    """Stream the schedule set selected by `mode`, each schedule once.

    at_most: every schedule with 0 <= total <= K (includes the empty one).
    exact: total == K.  exact_with_class_j: total == K and at least one
    class-(., j) message.  The exact set has C(K+LJ-1, LJ-1) elements, so
    callers should consult schedule_count() before materializing.
    """
    n = params.num_classes
    K = params.k_max
    if mode == "at_most":
        for total in range(K + 1):
            for c in compositions(total, n):
                yield Schedule(c)
    elif mode == "exact":
        for c in compositions(K, n):
            yield Schedule(c)
    elif mode == "exact_with_class_j":
        if j is None:
            raise ValueError("mode exact_with_class_j needs a power class j")
        params.check_class(0, j)
        for c in compositions(K, n):
            s = Schedule(c)
            if s.column_total(params, j) > 0:
                yield s
    else:
        raise ValueError(f"unknown enumeration mode {mode!r}")


class QuantumExtrema(NamedTuple):
    """Extreme per-class quanta over full (total == K) schedules.

    min_per_class[j]: smallest quantum a class-(., j) message can get.
    max_per_class[j]: largest such quantum.
    min_total: smallest total quantum sum(s_lj * quantum_j(s)) over full
    schedules; this is the worst-case aggregate service rate per slot.
    """

    min_per_class: tuple[float, ...]
    max_per_class: tuple[float, ...]
    min_total: float


def quantum_extrema(params: SystemParams, cap: int = DEFAULT_SCHEDULE_CAP) -> QuantumExtrema:
    """Compute per-class quantum extrema and the worst-case total quantum.

    The per-class extremes follow from monotonicity in interference power:
    the minimum pairs the message with K-1 strongest-power interferers, the
    maximum with K-1 weakest.  The total minimum is searched over power
    column occupancies (the quantum depends on a schedule only through the
    per-power-class counts), which keeps the search at C(K+J-1, J-1) points.
    """
    K = params.k_max
    J = params.num_power
    n0w = params.noise_power
    p_max = max(params.powers)
    p_min = min(params.powers)
    lo = tuple(
        service_quantum(params.rho, pj, n0w + (K - 1) * p_max) for pj in params.powers
    )
    hi = tuple(
        service_quantum(params.rho, pj, n0w + (K - 1) * p_min) for pj in params.powers
    )

    n_points = math.comb(K + J - 1, J - 1)
    if n_points > cap:
        raise CapacityError(n_points, cap, what="power-column occupancies")
    best = math.inf
    for m in compositions(K, J):
        tot_p = sum(mj * pj for mj, pj in zip(m, params.powers))
        val = 0.0
        for mj, pj in zip(m, params.powers):
            if mj:
                val += mj * service_quantum(params.rho, pj, n0w + tot_p - pj)
        best = min(best, val)
    return QuantumExtrema(lo, hi, best)
