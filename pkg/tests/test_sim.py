import io
import math

import numpy as np
import pytest

from macstab import (
    ArrivalModel,
    Bernoulli,
    DeterministicBatch,
    Empirical,
    Message,
    NonIdling,
    NonIdlingState,
    Poisson,
    RunConfig,
    Schedule,
    ScheduleMeasure,
    ServiceClass,
    StateIndependent,
    SubclassState,
    apply_slot,
    run,
    run_replications,
    sample_arrivals,
    schedule_quantum,
    select_nonidling,
    select_state_independent,
    subclass_arrival_means,
)
from macstab.regions import RateVector

from conftest import REF_REQUIREMENT, make_params


def msg(i, l=0, j=0, residual=1.0, slot=0, z=None, J=1):
    return Message(i, l, j, l * J + j, residual, slot, z)


class TestArrivalSpecs:
    def test_bernoulli_edges(self):
        rng = np.random.default_rng(0)
        assert not Bernoulli(0.0).sample_block(rng, 100, 0).any()
        assert Bernoulli(1.0).sample_block(rng, 100, 0).all()
        with pytest.raises(ValueError):
            Bernoulli(1.5)

    def test_deterministic_every_slot(self):
        rng = np.random.default_rng(0)
        assert (DeterministicBatch(2, 1).sample_block(rng, 50, 0) == 2).all()

    def test_deterministic_phase(self):
        rng = np.random.default_rng(0)
        counts = DeterministicBatch(1, 19).sample_block(rng, 40, 0)
        assert list(np.nonzero(counts)[0]) == [0, 19, 38]
        # block boundaries respect the global slot index
        counts2 = DeterministicBatch(1, 19).sample_block(rng, 40, 40)
        assert list(np.nonzero(counts2)[0] + 40) == [57, 76]

    def test_poisson_law_of_large_numbers(self):
        rng = np.random.default_rng(42)
        draws = Poisson(0.05).sample_block(rng, 1_000_000, 0)
        se = math.sqrt(0.05 / 1_000_000)
        assert abs(draws.mean() - 0.05) < 3 * se

    def test_empirical_moments_and_sampling(self):
        spec = Empirical(((0, 0.5), (2, 0.25), (5, 0.25)))
        assert spec.mean == pytest.approx(1.75)
        assert spec.second_moment == pytest.approx(0.25 * 4 + 0.25 * 25)
        rng = np.random.default_rng(7)
        draws = spec.sample_block(rng, 200_000, 0)
        assert set(np.unique(draws)) <= {0, 2, 5}
        se = math.sqrt((spec.second_moment - spec.mean**2) / 200_000)
        assert abs(draws.mean() - spec.mean) < 4 * se
        with pytest.raises(ValueError):
            Empirical(((0, 0.5), (1, 0.6)))

    def test_sample_arrivals_shape(self):
        model = ArrivalModel((Bernoulli(1.0), DeterministicBatch(3, 1)))
        counts = sample_arrivals(model, np.random.default_rng(1))
        assert counts.tolist() == [1, 3]

    def test_rate_vector_roundtrip(self):
        model = ArrivalModel((Bernoulli(0.25), Poisson(0.5)))
        rv = model.rate_vector()
        assert rv.ea == (0.25, 0.5)
        assert rv.ea2 == (0.25, 0.75)


class TestSelectNonIdling:
    def test_empty(self, bench_k1):
        state = NonIdlingState(bench_k1)
        assert select_nonidling(state, bench_k1, "fcfs") == []

    def test_fcfs_takes_oldest(self):
        p = make_params(k=3)
        state = NonIdlingState(p)
        for i in range(5):
            state.add(msg(i, slot=i))
        chosen = select_nonidling(state, p, "fcfs")
        assert [m.id for m in chosen] == [0, 1, 2]

    def test_all_served_when_below_limit(self):
        p = make_params(k=3)
        state = NonIdlingState(p)
        state.add(msg(0))
        state.add(msg(1))
        assert len(select_nonidling(state, p, "fcfs")) == 2

    def test_random_uniform_is_uniform(self):
        p = make_params(k=1)
        rng = np.random.default_rng(13)
        hits = np.zeros(4)
        state = NonIdlingState(p)
        for i in range(4):
            state.add(msg(i))
        trials = 4000
        for _ in range(trials):
            (chosen,) = select_nonidling(state, p, "random_uniform", rng)
            hits[chosen.id] += 1
        # each of 4 messages expected trials/4 times, ~4 sigma band
        expected = trials / 4
        sigma = math.sqrt(trials * 0.25 * 0.75)
        assert np.all(np.abs(hits - expected) < 4 * sigma)


class TestSelectStateIndependent:
    def setup_method(self):
        self.p = make_params(k=2)
        self.s1, self.s2 = Schedule((1,)), Schedule((2,))
        self.measure = ScheduleMeasure(((self.s1, 0.5), (self.s2, 0.5)))

    def test_empty_draw_serves_nobody(self):
        p3 = make_params(k=2)
        measure = ScheduleMeasure(((Schedule((0,)), 0.5), (self.s2, 0.5)))
        state = SubclassState(p3)
        state.add(msg(0, z=(2,)))
        drawn, served = select_state_independent(state, p3, measure, u=0.2)
        assert drawn.counts == (0,)
        assert served == []

    def test_partial_implementation(self):
        state = SubclassState(self.p)
        state.add(msg(0, z=(2,)))
        drawn, served = select_state_independent(state, self.p, self.measure, u=0.9)
        assert drawn is self.s2
        assert [m.id for m in served] == [0]

    def test_exact_counts_when_backlogged(self):
        state = SubclassState(self.p)
        for i in range(5):
            state.add(msg(i, z=(2,)))
        _, served = select_state_independent(state, self.p, self.measure, u=0.9)
        assert [m.id for m in served] == [0, 1]

    def test_other_subclass_never_served(self):
        state = SubclassState(self.p)
        state.add(msg(0, z=(1,)))
        drawn, served = select_state_independent(state, self.p, self.measure, u=0.9)
        assert drawn is self.s2 and served == []


class TestApplySlot:
    def test_arrivals_only(self, bench_k1):
        state = NonIdlingState(bench_k1)
        newcomer = msg(0, residual=REF_REQUIREMENT)
        departed = apply_slot(state, [], [newcomer], bench_k1)
        assert departed == [] and state.n == 1 and state.slot == 1

    def test_exact_residual_departs(self, bench_k1):
        state = NonIdlingState(bench_k1)
        m = msg(0, residual=math.log(1.5))
        state.add(m)
        departed = apply_slot(state, [m], [], bench_k1)
        assert departed == [m] and state.n == 0
        assert m.residual <= 1e-12

    def test_two_equal_power_quanta(self, bench_k2):
        state = NonIdlingState(bench_k2)
        a, b = msg(0, residual=1.0), msg(1, residual=1.0)
        state.add(a)
        state.add(b)
        apply_slot(state, [a, b], [], bench_k2)
        assert a.residual == pytest.approx(1.0 - math.log(1.25), rel=1e-15)
        assert b.residual == a.residual

    def test_actual_quanta_match_schedule_values_exactly(self):
        rng = np.random.default_rng(19)
        for _ in range(20):
            L, J = int(rng.integers(1, 3)), int(rng.integers(1, 3))
            k = int(rng.integers(1, 5))
            p = make_params(
                k=k,
                gammas=tuple(float(g) for g in rng.uniform(0.2, 10.0, size=J)),
                classes=tuple(ServiceClass(1e-2, 4) for _ in range(L)),
            )
            counts = rng.multinomial(k, np.ones(L * J) / (L * J))
            if counts.sum() == 0:
                continue
            s = Schedule(tuple(int(x) for x in counts))
            state = NonIdlingState(p)
            served = []
            mid = 0
            for c, cnt in enumerate(s.counts):
                l, j = divmod(c, J)
                for _ in range(cnt):
                    m = Message(mid, l, j, c, 5.0, 0)
                    state.add(m)
                    served.append(m)
                    mid += 1
            apply_slot(state, served, [], p)
            for m in served:
                assert m.residual == 5.0 - schedule_quantum(p, s, m.j)

    def test_nominal_vs_actual_partial(self):
        p = make_params(k=2)
        measure_sched = Schedule((2,))
        for mode, expect in (("actual", math.log(1.5)), ("nominal", math.log(1.25))):
            state = SubclassState(p)
            m = msg(0, residual=1.0, z=(2,))
            state.add(m)
            apply_slot(state, [m], [], p, quantum_mode=mode, drawn=measure_sched)
            assert m.residual == pytest.approx(1.0 - expect, rel=1e-15)

    def test_nominal_needs_drawn_schedule(self, bench_k2):
        state = NonIdlingState(bench_k2)
        m = msg(0)
        state.add(m)
        with pytest.raises(ValueError):
            apply_slot(state, [m], [], bench_k2, quantum_mode="nominal")

    def test_serving_more_than_k_rejected(self, bench_k1):
        state = NonIdlingState(bench_k1)
        a, b = msg(0), msg(1)
        state.add(a)
        state.add(b)
        with pytest.raises(ValueError):
            apply_slot(state, [a, b], [], bench_k1)


class TestDeterministicRuns:
    def test_dd_stable_cycle(self, bench_k1):
        arr = ArrivalModel((DeterministicBatch(1, 19),))
        res = run(RunConfig(bench_k1, arr, NonIdling(), horizon=10_000, seed=0))
        assert res.trace.n_total.max() == 1
        # every admitted message spends exactly 19 slots in system
        assert res.mean_sojourn_per_class() == [19.0]

    def test_dd_overload_grows_linearly(self, bench_k1):
        arr = ArrivalModel((DeterministicBatch(1, 18),))
        res = run(RunConfig(bench_k1, arr, NonIdling(), horizon=10_000, seed=0))
        # arrivals ceil(10000/18) = 556, completions floor(10000/19) = 526
        assert res.trace.n_total[-1] == 30
        assert res.total_departures() == 526

    def test_zero_arrivals(self, bench_k1):
        arr = ArrivalModel((Bernoulli(0.0),))
        res = run(RunConfig(bench_k1, arr, NonIdling(), horizon=1_000, seed=0))
        assert not res.trace.n_total.any()
        assert res.time_avg_n() == 0.0


class TestRunInvariants:
    @pytest.fixture
    def random_run(self, bench_k2):
        arr = ArrivalModel((Bernoulli(0.08),))
        return run(RunConfig(bench_k2, arr, NonIdling(), horizon=20_000, seed=5))

    def test_conservation(self, random_run):
        tr = random_run.trace
        assert np.array_equal(tr.n_total[1:], tr.n_total[:-1] + tr.arrived - tr.departed)

    def test_capacity_and_nonidling(self, random_run, bench_k2):
        tr = random_run.trace
        assert tr.served.max() <= bench_k2.k_max
        assert np.array_equal(tr.served, np.minimum(tr.n_total[:-1], bench_k2.k_max))

    def test_residuals_positive_in_system(self, bench_k2):
        arr = ArrivalModel((Bernoulli(0.08),))
        res = run(RunConfig(bench_k2, arr, NonIdling(), horizon=500, seed=5, keep_states=True))
        previous = {}
        for snap in res.trace.states:
            for m in snap.messages():
                assert m.residual > 1e-12
                if m.id in previous:
                    assert m.residual <= previous[m.id]
                previous[m.id] = m.residual

    def test_reproducible_and_seed_sensitive(self, bench_k2):
        arr = ArrivalModel((Bernoulli(0.08),))
        cfg = RunConfig(bench_k2, arr, NonIdling(), horizon=5_000, seed=9)
        a, b = run(cfg), run(cfg)
        assert np.array_equal(a.trace.n_total, b.trace.n_total)
        assert np.array_equal(a.trace.departed, b.trace.departed)
        c = run(RunConfig(bench_k2, arr, NonIdling(), horizon=5_000, seed=10))
        assert not np.array_equal(a.trace.n_total, c.trace.n_total)

    def test_csv_bytes_identical(self, bench_k2):
        arr = ArrivalModel((Bernoulli(0.08),))
        cfg = RunConfig(bench_k2, arr, NonIdling(), horizon=2_000, seed=9)
        bufs = []
        for _ in range(2):
            buf = io.StringIO()
            run(cfg).trace.to_csv(buf)
            bufs.append(buf.getvalue())
        assert bufs[0] == bufs[1]
        header = bufs[0].splitlines()[0]
        assert header == "slot,n_total,n_11,served,departed"

    def test_random_selection_policy_runs(self, bench_k2):
        arr = ArrivalModel((Bernoulli(0.08),))
        res = run(RunConfig(bench_k2, arr, NonIdling("random_uniform"), horizon=5_000, seed=3))
        tr = res.trace
        assert np.array_equal(tr.n_total[1:], tr.n_total[:-1] + tr.arrived - tr.departed)
        assert np.array_equal(tr.served, np.minimum(tr.n_total[:-1], bench_k2.k_max))


class TestStateIndependentRuns:
    def setup_method(self):
        self.p = make_params(k=2)
        self.measure = ScheduleMeasure(((Schedule((1,)), 0.5), (Schedule((2,)), 0.5)))
        self.policy = StateIndependent(self.measure)

    def test_runs_and_conserves(self):
        arr = ArrivalModel((Bernoulli(0.04),))
        res = run(RunConfig(self.p, arr, self.policy, horizon=20_000, seed=2))
        tr = res.trace
        assert np.array_equal(tr.n_total[1:], tr.n_total[:-1] + tr.arrived - tr.departed)
        assert tr.served.max() <= 2
        assert res.total_departures() > 0

    def test_nominal_dominated_by_actual(self):
        # same seed: actual quanta are never smaller, so departures come
        # no later and the backlog is never larger
        arr = ArrivalModel((Bernoulli(0.05),))
        res_a = run(RunConfig(self.p, arr, self.policy, horizon=30_000, seed=4))
        res_n = run(
            RunConfig(self.p, arr, self.policy, horizon=30_000, seed=4, quantum_mode="nominal")
        )
        assert np.all(res_a.trace.n_total <= res_n.trace.n_total)

    def test_assignment_split(self):
        sub = subclass_arrival_means(
            self.p, self.policy, RateVector((0.1,))
        )
        assert sub[(0, (1,))] == pytest.approx(0.05)
        assert sub[(0, (2,))] == pytest.approx(0.05)
        explicit = StateIndependent(
            self.measure, ((0, ((Schedule((1,)), 0.25), (Schedule((2,)), 0.75))),)
        )
        sub2 = subclass_arrival_means(self.p, explicit, RateVector((0.1,)))
        assert sub2[(0, (1,))] == pytest.approx(0.025)
        assert sub2[(0, (2,))] == pytest.approx(0.075)

    def test_unservable_class_rejected(self):
        p = make_params(k=1, classes=(ServiceClass(1e-3, 2), ServiceClass(1e-2, 4)))
        measure = ScheduleMeasure(((Schedule((1, 0)), 1.0),))
        arr = ArrivalModel((Bernoulli(0.0), Bernoulli(0.1)))
        with pytest.raises(ValueError):
            RunConfig(p, arr, StateIndependent(measure), horizon=10, seed=0)

    def test_nominal_rejected_for_nonidling(self, bench_k1):
        arr = ArrivalModel((Bernoulli(0.01),))
        with pytest.raises(ValueError):
            RunConfig(bench_k1, arr, NonIdling(), horizon=10, seed=0, quantum_mode="nominal")


class TestReplications:
    def test_spawned_streams_differ_but_reproduce(self, bench_k1):
        arr = ArrivalModel((Bernoulli(0.04),))
        cfg = RunConfig(bench_k1, arr, NonIdling(), horizon=3_000, seed=31)
        first = run_replications(cfg, 3)
        second = run_replications(cfg, 3)
        for a, b in zip(first, second):
            assert np.array_equal(a.trace.n_total, b.trace.n_total)
        assert not np.array_equal(first[0].trace.n_total, first[1].trace.n_total)

    def test_track_functional(self, bench_k1):
        arr = ArrivalModel((Bernoulli(0.04),))
        cfg = RunConfig(
            bench_k1,
            arr,
            NonIdling(),
            horizon=1_000,
            seed=31,
            track=(("count", lambda state, params: float(state.n)),),
        )
        res = run(cfg)
        assert np.array_equal(res.trace.functionals["count"], res.trace.n_total.astype(float))
