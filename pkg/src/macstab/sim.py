"""Slot-by-slot simulation of the scheduled multiaccess queueing chain.

The chain state is the multiset of in-system messages with their residual
service.  Each slot: a schedule is chosen (by backlog for non-idling
policies, by an independent draw for state-independent ones), every
scheduled message accrues its quantum, finished messages depart, and the
slot's batch arrivals join the backlog.  Arrivals at the slot-n boundary
become schedulable in slot n+1.

Runs are deterministic given (config, seed).  Replications draw their
generators from spawned seed sequences, so any replication can be
reproduced in isolation.
"""

from __future__ import annotations

import dataclasses
from collections import deque
from dataclasses import dataclass
from itertools import islice
from typing import Callable, Iterator, NamedTuple

import numpy as np

from .model import Schedule, SystemParams, quantum_between, schedule_quantum
from .regions import RateVector, ScheduleMeasure

# A message departs once its residual drops to this level; absorbs
# float accumulation error across many quantum subtractions.
COMPLETION_TOL = 1e-12

# Arrival counts and schedule draws are pre-generated in blocks this long.
_CHUNK = 16384


# ---------------------------------------------------------------------------
# arrival models


@dataclass(frozen=True)
class Bernoulli:
    """At most one arrival per slot, with probability p."""

    p: float

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"bernoulli p must be in [0,1], got {self.p}")

    @property
    def mean(self) -> float:
        return self.p

    @property
    def second_moment(self) -> float:
        return self.p

    def sample_block(self, rng, n: int, start_slot: int) -> np.ndarray:
        return (rng.random(n) < self.p).astype(np.int64)


@dataclass(frozen=True)
class Poisson:
    """Poisson-distributed batch size each slot."""

    rate: float

    def __post_init__(self):
        if self.rate < 0.0:
            raise ValueError(f"poisson rate must be >= 0, got {self.rate}")

    @property
    def mean(self) -> float:
        return self.rate

    @property
    def second_moment(self) -> float:
        return self.rate + self.rate**2

    def sample_block(self, rng, n: int, start_slot: int) -> np.ndarray:
        return rng.poisson(self.rate, n).astype(np.int64)


@dataclass(frozen=True)
class DeterministicBatch:
    """A batch of fixed size every `period` slots (at slots 0, period, ...)."""

    batch: int
    period: int

    def __post_init__(self):
        if not (isinstance(self.batch, int) and self.batch >= 0):
            raise ValueError(f"batch must be an integer >= 0, got {self.batch}")
        if not (isinstance(self.period, int) and self.period >= 1):
            raise ValueError(f"period must be an integer >= 1, got {self.period}")

    @property
    def mean(self) -> float:
        return self.batch / self.period

    @property
    def second_moment(self) -> float:
        return self.batch**2 / self.period

    def sample_block(self, rng, n: int, start_slot: int) -> np.ndarray:
        counts = np.zeros(n, dtype=np.int64)
        counts[(start_slot + np.arange(n)) % self.period == 0] = self.batch
        return counts


@dataclass(frozen=True)
class Empirical:
    """Batch size drawn from an explicit pmf over non-negative counts."""

    pmf: tuple[tuple[int, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "pmf", tuple((int(k), float(p)) for k, p in self.pmf))
        if not self.pmf:
            raise ValueError("empirical pmf needs at least one entry")
        if any(k < 0 or p < 0.0 for k, p in self.pmf):
            raise ValueError("empirical pmf entries must have count >= 0 and prob >= 0")
        total = sum(p for _, p in self.pmf)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"empirical pmf sums to {total}, not 1 within 1e-9")

    @property
    def mean(self) -> float:
        return sum(k * p for k, p in self.pmf)

    @property
    def second_moment(self) -> float:
        return sum(k * k * p for k, p in self.pmf)

    def sample_block(self, rng, n: int, start_slot: int) -> np.ndarray:
        values = np.array([k for k, _ in self.pmf], dtype=np.int64)
        cum = np.cumsum([p for _, p in self.pmf])
        idx = np.searchsorted(cum, rng.random(n), side="right")
        return values[np.minimum(idx, len(values) - 1)]


ArrivalSpec = Bernoulli | Poisson | DeterministicBatch | Empirical


@dataclass(frozen=True)
class ArrivalModel:
    """Independent per-class batch arrivals, one spec per flat class index."""

    specs: tuple[ArrivalSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "specs", tuple(self.specs))
        if not self.specs:
            raise ValueError("arrival model needs at least one class")

    def means(self) -> tuple[float, ...]:
        return tuple(s.mean for s in self.specs)

    def second_moments(self) -> tuple[float, ...]:
        return tuple(s.second_moment for s in self.specs)

    def rate_vector(self) -> RateVector:
        return RateVector(self.means(), self.second_moments())


def sample_arrivals(model: ArrivalModel, rng, slot: int = 0) -> np.ndarray:
    """Draw one slot of batch arrivals, a count per flat class index."""
    return np.array(
        [int(spec.sample_block(rng, 1, slot)[0]) for spec in model.specs],
        dtype=np.int64,
    )


# ---------------------------------------------------------------------------
# policies


@dataclass(frozen=True)
class NonIdling:
    """Schedule min(backlog, K) messages every slot.

    selection picks which waiting messages transmit when the backlog
    exceeds K: 'fcfs' takes the oldest, 'random_uniform' a uniform subset.
    """

    selection: str = "fcfs"

    def __post_init__(self):
        if self.selection not in ("fcfs", "random_uniform"):
            raise ValueError(f"unknown selection {self.selection!r}")


@dataclass(frozen=True)
class StateIndependent:
    """Draw a schedule from a fixed measure each slot, ignoring the state.

    Arriving class-c messages are pre-assigned to one supported schedule
    (their subclass); they transmit only in slots where that schedule is
    drawn, up to its class-c count.  assignment maps flat class index to an
    explicit table of (schedule, probability); classes without a table use
    the measure restricted to schedules containing them.
    """

    measure: ScheduleMeasure
    assignment: tuple[tuple[int, tuple[tuple[Schedule, float], ...]], ...] | None = None


def derive_assignment(
    params: SystemParams, policy: StateIndependent
) -> dict[int, tuple[tuple[tuple[int, ...], float], ...]]:
    """Per-class subclass assignment tables, normalized, keyed by flat index."""
    explicit = {}
    if policy.assignment is not None:
        for c, table in policy.assignment:
            if not 0 <= c < params.num_classes:
                raise ValueError(f"assignment class index {c} out of range")
            total = 0.0
            rows = []
            for s, p in table:
                if p < 0.0:
                    raise ValueError("assignment probabilities must be >= 0")
                if s.counts[c] == 0:
                    raise ValueError(
                        f"assignment for class {c} uses schedule {s.counts} without that class"
                    )
                if policy.measure.probability(s) == 0.0:
                    raise ValueError(
                        f"assignment for class {c} uses schedule {s.counts} outside the measure support"
                    )
                rows.append((s.counts, float(p)))
                total += p
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"assignment for class {c} sums to {total}, not 1")
            explicit[c] = tuple((counts, p / total) for counts, p in rows)

    tables = {}
    for c in range(params.num_classes):
        if c in explicit:
            tables[c] = explicit[c]
            continue
        rows = [(s.counts, p) for s, p in policy.measure.support if s.counts[c] > 0]
        norm = sum(p for _, p in rows)
        if norm > 0.0:
            tables[c] = tuple((counts, p / norm) for counts, p in rows)
    return tables


# ---------------------------------------------------------------------------
# state


@dataclass(slots=True)
class Message:
    id: int
    l: int
    j: int
    flat: int
    residual: float
    arrival_slot: int
    z: tuple[int, ...] | None = None


class MsgView(NamedTuple):
    """Immutable snapshot of a message for recorded states."""

    id: int
    l: int
    j: int
    flat: int
    residual: float
    arrival_slot: int
    z: tuple[int, ...] | None


class FrozenState(NamedTuple):
    """Recorded copy of the chain state at a slot boundary."""

    slot: int
    msgs: tuple[MsgView, ...]

    @property
    def n(self) -> int:
        return len(self.msgs)

    def messages(self) -> Iterator[MsgView]:
        return iter(self.msgs)


class NonIdlingState:
    """Backlog of a non-idling run: one FCFS queue over all classes."""

    def __init__(self, params: SystemParams):
        self.params = params
        self.slot = 0
        self.queue: deque[Message] = deque()
        self.class_counts = [0] * params.num_classes
        self.n = 0

    def messages(self) -> Iterator[Message]:
        return iter(self.queue)

    def snapshot(self) -> FrozenState:
        return FrozenState(
            self.slot,
            tuple(
                MsgView(m.id, m.l, m.j, m.flat, m.residual, m.arrival_slot, m.z)
                for m in self.queue
            ),
        )

    def add(self, msg: Message) -> None:
        self.queue.append(msg)
        self.class_counts[msg.flat] += 1
        self.n += 1

    def select_fcfs(self, k: int) -> list[Message]:
        return list(islice(self.queue, k))

    def select_random(self, k: int, rng) -> list[Message]:
        if k >= self.n:
            return list(self.queue)
        chosen = set(rng.choice(self.n, size=k, replace=False).tolist())
        return [m for i, m in enumerate(self.queue) if i in chosen]

    def retire(self, served: list[Message], completed: list[Message]) -> None:
        if not completed:
            return
        head = [self.queue.popleft() for _ in range(min(len(served), self.n))]
        gone = {m.id for m in completed}
        survivors = [m for m in head if m.id not in gone]
        found = len(head) - len(survivors)
        self.queue.extendleft(reversed(survivors))
        if found < len(completed):
            # random selection can complete messages deeper in the queue
            self.queue = deque(m for m in self.queue if m.id not in gone)
        for m in completed:
            self.class_counts[m.flat] -= 1
        self.n -= len(completed)


class SubclassState:
    """Backlog of a state-independent run: FCFS queues per (class, schedule)."""

    def __init__(self, params: SystemParams):
        self.params = params
        self.slot = 0
        self.queues: dict[tuple[int, tuple[int, ...]], deque[Message]] = {}
        self.class_counts = [0] * params.num_classes
        self.n = 0

    def messages(self) -> Iterator[Message]:
        for q in self.queues.values():
            yield from q

    def snapshot(self) -> FrozenState:
        return FrozenState(
            self.slot,
            tuple(
                MsgView(m.id, m.l, m.j, m.flat, m.residual, m.arrival_slot, m.z)
                for m in self.messages()
            ),
        )

    def add(self, msg: Message) -> None:
        if msg.z is None:
            raise ValueError("state-independent messages need an assigned schedule")
        self.queues.setdefault((msg.flat, msg.z), deque()).append(msg)
        self.class_counts[msg.flat] += 1
        self.n += 1

    def select_drawn(self, drawn_counts: tuple[int, ...]) -> list[Message]:
        served = []
        for c, want in enumerate(drawn_counts):
            if want:
                q = self.queues.get((c, drawn_counts))
                if q:
                    served.extend(islice(q, min(want, len(q))))
        return served

    def retire(self, served: list[Message], completed: list[Message]) -> None:
        if not completed:
            return
        gone = {m.id for m in completed}
        by_key: dict[tuple[int, tuple[int, ...]], int] = {}
        for m in served:
            key = (m.flat, m.z)
            by_key[key] = by_key.get(key, 0) + 1
        for key, k in by_key.items():
            q = self.queues[key]
            head = [q.popleft() for _ in range(min(k, len(q)))]
            q.extendleft(reversed([m for m in head if m.id not in gone]))
        for m in completed:
            self.class_counts[m.flat] -= 1
        self.n -= len(completed)


# ---------------------------------------------------------------------------
# slot mechanics


def select_nonidling(state: NonIdlingState, params: SystemParams, selection: str, rng=None):
    """Pick the min(backlog, K) messages a non-idling policy transmits."""
    k = min(state.n, params.k_max)
    if k == 0:
        return []
    if selection == "fcfs":
        return state.select_fcfs(k)
    if selection == "random_uniform":
        return state.select_random(k, rng)
    raise ValueError(f"unknown selection {selection!r}")


def select_state_independent(
    state: SubclassState,
    params: SystemParams,
    measure: ScheduleMeasure,
    rng=None,
    u: float | None = None,
):
    """Draw a schedule from the measure and pick the served messages.

    Each subclass (class, assigned schedule) contributes at most its count
    in the drawn schedule, oldest first; subclasses assigned to other
    schedules wait.  Returns (drawn schedule, served messages).
    """
    if u is None:
        u = rng.random()
    acc = 0.0
    drawn = measure.support[-1][0]
    for s, p in measure.support:
        acc += p
        if u <= acc:
            drawn = s
            break
    return drawn, state.select_drawn(drawn.counts)


def apply_slot(
    state,
    served: list[Message],
    arrivals: list[Message],
    params: SystemParams,
    quantum_mode: str = "actual",
    drawn: Schedule | None = None,
    nominal_quanta: dict[tuple[int, ...], tuple[float, ...]] | None = None,
) -> list[Message]:
    """Advance the chain one slot: serve, depart, then append arrivals.

    'actual' quanta come from the transmitting multiset itself, so a
    partially implemented schedule yields larger quanta than planned.
    'nominal' quanta are those of the drawn schedule at full implementation
    regardless of how many messages are present.  Returns the departures.
    """
    completed: list[Message] = []
    if served:
        if len(served) > params.k_max:
            raise ValueError(f"served {len(served)} messages with k_max={params.k_max}")
        J = params.num_power
        quanta: dict[int, float] = {}
        if quantum_mode == "actual":
            counts = [0] * params.num_classes
            for m in served:
                counts[m.flat] += 1
            tot_power = sum(
                n * params.powers[c % J] for c, n in enumerate(counts) if n
            )
            for m in served:
                if m.j not in quanta:
                    quanta[m.j] = quantum_between(params, m.j, tot_power)
        elif quantum_mode == "nominal":
            if drawn is None:
                raise ValueError("nominal quanta need the drawn schedule")
            if nominal_quanta is not None and drawn.counts in nominal_quanta:
                row = nominal_quanta[drawn.counts]
                for m in served:
                    quanta[m.j] = row[m.j]
            else:
                for m in served:
                    if m.j not in quanta:
                        quanta[m.j] = schedule_quantum(params, drawn, m.j)
        else:
            raise ValueError(f"unknown quantum mode {quantum_mode!r}")
        for m in served:
            m.residual -= quanta[m.j]
            if m.residual <= COMPLETION_TOL:
                completed.append(m)
        state.retire(served, completed)
    for msg in arrivals:
        state.add(msg)
    state.slot += 1
    return completed


# ---------------------------------------------------------------------------
# full runs


@dataclass(frozen=True)
class RunConfig:
    """Everything one simulation run depends on."""

    params: SystemParams
    arrivals: ArrivalModel
    policy: NonIdling | StateIndependent
    horizon: int
    seed: int | np.random.SeedSequence = 0
    quantum_mode: str = "actual"
    track: tuple[tuple[str, Callable], ...] = ()
    keep_states: bool = False

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if len(self.arrivals.specs) != self.params.num_classes:
            raise ValueError(
                f"arrival model has {len(self.arrivals.specs)} classes, "
                f"expected {self.params.num_classes}"
            )
        if self.quantum_mode not in ("actual", "nominal"):
            raise ValueError(f"unknown quantum mode {self.quantum_mode!r}")
        if self.quantum_mode == "nominal" and not isinstance(self.policy, StateIndependent):
            raise ValueError("nominal quanta apply to state-independent policies only")
        if isinstance(self.policy, StateIndependent):
            self.policy.measure.validate_for(self.params)
            tables = derive_assignment(self.params, self.policy)
            for c, mean in enumerate(self.arrivals.means()):
                if mean > 0.0 and c not in tables:
                    raise ValueError(
                        f"class {c} has arrivals but no supported schedule serves it"
                    )


@dataclass
class Trace:
    """Per-slot record of one run.

    Row i of the state arrays is the state after slot i-1 completed (row 0
    is the initial state); served/departed/arrived count slot i events.
    """

    num_service: int
    num_power: int
    n_total: np.ndarray
    class_counts: np.ndarray
    served: np.ndarray
    departed: np.ndarray
    arrived: np.ndarray
    functionals: dict[str, np.ndarray]
    states: list[FrozenState] | None
    sojourn_sum: np.ndarray
    sojourn_count: np.ndarray

    @property
    def horizon(self) -> int:
        return len(self.served)

    def class_label(self, c: int) -> str:
        l, j = divmod(c, self.num_power)
        return f"{l + 1}{j + 1}"

    def to_csv(self, fh) -> None:
        """Write the trace with 1-based class labels in the header."""
        n_cols = [f"n_{self.class_label(c)}" for c in range(self.class_counts.shape[1])]
        fh.write("slot,n_total," + ",".join(n_cols) + ",served,departed\n")
        for t in range(self.horizon):
            row = [str(t), str(int(self.n_total[t + 1]))]
            row += [str(int(x)) for x in self.class_counts[t + 1]]
            row += [str(int(self.served[t])), str(int(self.departed[t]))]
            fh.write(",".join(row) + "\n")


@dataclass
class RunResult:
    config: RunConfig
    trace: Trace

    def time_avg_n(self) -> float:
        return float(self.trace.n_total[1:].mean())

    def per_class_mean_n(self) -> list[float]:
        return [float(x) for x in self.trace.class_counts[1:].mean(axis=0)]

    def total_departures(self) -> int:
        return int(self.trace.departed.sum())

    def mean_sojourn_per_class(self) -> list[float | None]:
        out = []
        for c in range(len(self.trace.sojourn_count)):
            k = int(self.trace.sojourn_count[c])
            out.append(float(self.trace.sojourn_sum[c]) / k if k else None)
        return out


def run(config: RunConfig) -> RunResult:
    """Simulate one seeded trajectory of the chain."""
    params = config.params
    T = config.horizon
    LJ = params.num_classes
    J = params.num_power
    reqs = params.service_requirements()
    seed = config.seed
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    rng = np.random.default_rng(ss)

    policy = config.policy
    state_independent = isinstance(policy, StateIndependent)
    if state_independent:
        support = policy.measure.support
        cum = []
        acc = 0.0
        for _, p in support:
            acc += p
            cum.append(acc)
        cum[-1] = 1.0
        assignment = derive_assignment(params, policy)
        assign_cum = {
            c: ([row[0] for row in table], list(np.cumsum([row[1] for row in table])))
            for c, table in assignment.items()
        }
        nominal_quanta = {
            s.counts: tuple(
                schedule_quantum(params, s, j) if s.column_total(params, j) else 0.0
                for j in range(J)
            )
            for s, _ in support
        }
        state = SubclassState(params)
    else:
        nominal_quanta = None
        state = NonIdlingState(params)

    n_total = np.zeros(T + 1, dtype=np.int64)
    class_counts = np.zeros((T + 1, LJ), dtype=np.int64)
    served_arr = np.zeros(T, dtype=np.int32)
    departed_arr = np.zeros(T, dtype=np.int32)
    arrived_arr = np.zeros(T, dtype=np.int32)
    track = list(config.track)
    functionals = {name: np.zeros(T + 1) for name, _ in track}
    for name, f in track:
        functionals[name][0] = f(state, params)
    states = [state.snapshot()] if config.keep_states else None
    sojourn_sum = np.zeros(LJ)
    sojourn_count = np.zeros(LJ, dtype=np.int64)

    next_id = 0
    buf_base = -1
    arr_bufs: list[np.ndarray] = []
    u_buf: np.ndarray | None = None
    for t in range(T):
        if buf_base < 0 or t - buf_base >= _CHUNK:
            buf_base = t
            nblk = min(_CHUNK, T - t)
            arr_bufs = [spec.sample_block(rng, nblk, t) for spec in config.arrivals.specs]
            if state_independent:
                u_buf = rng.random(nblk)
        off = t - buf_base

        if state_independent:
            u = u_buf[off]
            drawn = support[-1][0]
            for i, cp in enumerate(cum):
                if u <= cp:
                    drawn = support[i][0]
                    break
            served = state.select_drawn(drawn.counts)
        else:
            drawn = None
            served = select_nonidling(state, params, policy.selection, rng)

        arrivals = []
        for c in range(LJ):
            cnt = int(arr_bufs[c][off])
            if cnt:
                l, j = divmod(c, J)
                for _ in range(cnt):
                    z = None
                    if state_independent:
                        counts_list, cuml = assign_cum[c]
                        uz = rng.random()
                        z = counts_list[-1]
                        for i, cp in enumerate(cuml):
                            if uz <= cp:
                                z = counts_list[i]
                                break
                    arrivals.append(Message(next_id, l, j, c, reqs[l], t, z))
                    next_id += 1

        departed = apply_slot(
            state,
            served,
            arrivals,
            params,
            quantum_mode=config.quantum_mode,
            drawn=drawn,
            nominal_quanta=nominal_quanta,
        )
        for m in departed:
            sojourn_sum[m.flat] += t - m.arrival_slot
            sojourn_count[m.flat] += 1

        n_total[t + 1] = state.n
        class_counts[t + 1] = state.class_counts
        served_arr[t] = len(served)
        departed_arr[t] = len(departed)
        arrived_arr[t] = len(arrivals)
        if track:
            for name, f in track:
                functionals[name][t + 1] = f(state, params)
        if states is not None:
            states.append(state.snapshot())

    trace = Trace(
        params.num_service,
        params.num_power,
        n_total,
        class_counts,
        served_arr,
        departed_arr,
        arrived_arr,
        functionals,
        states,
        sojourn_sum,
        sojourn_count,
    )
    return RunResult(config, trace)


def run_replications(config: RunConfig, replications: int) -> list[RunResult]:
    """Run independent replications on spawned seed substreams."""
    if replications < 1:
        raise ValueError(f"replications must be >= 1, got {replications}")
    base = config.seed
    ss = base if isinstance(base, np.random.SeedSequence) else np.random.SeedSequence(base)
    children = ss.spawn(replications)
    return [run(dataclasses.replace(config, seed=child)) for child in children]


def subclass_arrival_means(
    params: SystemParams, policy: StateIndependent, rate: RateVector
) -> dict[tuple[int, tuple[int, ...]], float]:
    """Mean arrivals per slot of each subclass (class, assigned schedule)
    implied by splitting the per-class rates across assignment tables."""
    tables = derive_assignment(params, policy)
    out: dict[tuple[int, tuple[int, ...]], float] = {}
    for c, mean in enumerate(rate.ea):
        if mean == 0.0:
            continue
        if c not in tables:
            raise ValueError(f"class {c} has arrivals but no assignment support")
        for counts, q in tables[c]:
            out[(c, counts)] = out.get((c, counts), 0.0) + mean * q
    return out
