import math

import numpy as np
import pytest

from macstab import (
    CapacityError,
    Schedule,
    ServiceClass,
    SystemParams,
    ceil_to_quantum,
    effective_noise,
    enumerate_schedules,
    quantum_extrema,
    quantum_multiple,
    schedule_count,
    schedule_quantum,
    service_quantum,
    service_requirement,
)
from macstab.model import ceil_to_quantum_array

from conftest import REF_REQUIREMENT, make_params


class TestServiceRequirement:
    def test_reference_value(self, bench_k1):
        # independent hand evaluation: ln(1000) + ln(2)
        assert service_requirement(bench_k1, 0) == pytest.approx(
            math.log(1000.0) + math.log(2.0), rel=1e-15
        )
        assert service_requirement(bench_k1, 0) == pytest.approx(REF_REQUIREMENT, rel=1e-12)

    def test_unit_error_exponent(self):
        p = make_params(classes=(ServiceClass(math.exp(-1.0), 2),))
        assert service_requirement(p, 0) == pytest.approx(1.0 + math.log(2.0), rel=1e-15)

    def test_rejects_boundary_error_prob(self):
        with pytest.raises(ValueError):
            ServiceClass(1.0, 2)
        with pytest.raises(ValueError):
            ServiceClass(0.0, 2)
        with pytest.raises(ValueError):
            ServiceClass(0.5, 1)


class TestParamsValidation:
    @pytest.mark.parametrize("rho", [0.0, -0.5, 1.5])
    def test_bad_rho(self, rho):
        with pytest.raises(ValueError):
            make_params(rho=rho)

    def test_bad_powers(self):
        with pytest.raises(ValueError):
            make_params(gammas=(0.0,))
        with pytest.raises(ValueError):
            make_params(gammas=())

    def test_bad_k(self):
        with pytest.raises(ValueError):
            make_params(k=0)

    def test_snr(self):
        p = SystemParams(
            rho=1.0,
            bandwidth_w=2.0,
            noise_n0=0.5,
            k_max=1,
            powers=(4.0,),
            service_classes=(ServiceClass(1e-3, 2),),
        )
        assert p.noise_power == 1.0
        assert p.snr(0) == 4.0


class TestServiceQuantum:
    def test_known_values(self):
        assert service_quantum(1.0, 1.0, 1.0) == math.log(1.5)
        assert service_quantum(0.5, 2.0, 0.5) == pytest.approx(
            0.5 * math.log(1.0 + 2.0 / (1.5 * 0.5)), rel=1e-15
        )

    def test_vanishes_with_power(self):
        assert service_quantum(1.0, 0.0, 1.0) == 0.0

    def test_monotone(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            rho = rng.uniform(0.05, 1.0)
            power = rng.uniform(0.1, 10.0)
            noise = rng.uniform(0.1, 10.0)
            assert service_quantum(rho, power * 1.5, noise) > service_quantum(rho, power, noise)
            assert service_quantum(rho, power, noise * 1.5) < service_quantum(rho, power, noise)

    def test_bad_noise(self):
        with pytest.raises(ValueError):
            service_quantum(1.0, 1.0, 0.0)
        with pytest.raises(ValueError):
            service_quantum(1.0, 1.0, -1.0)


class TestEffectiveNoise:
    def test_alone_sees_thermal_noise_only(self, bench_k1):
        assert effective_noise(bench_k1, Schedule((1,)), 0) == bench_k1.noise_power

    def test_one_equal_power_interferer(self, bench_k2):
        assert effective_noise(bench_k2, Schedule((2,)), 0) == bench_k2.noise_power + 1.0

    def test_mixed_powers(self):
        p = make_params(k=2, gammas=(1.0, 4.0))
        s = Schedule((1, 1))
        assert effective_noise(p, s, 0) == pytest.approx(5.0 * p.noise_power, rel=1e-15)
        assert effective_noise(p, s, 1) == pytest.approx(2.0 * p.noise_power, rel=1e-15)

    def test_rejects_unscheduled_class(self, bench_k1):
        with pytest.raises(ValueError):
            effective_noise(bench_k1, Schedule((0,)), 0)


class TestScheduleQuantum:
    def test_empty_schedule_gives_zero(self, bench_k2):
        assert schedule_quantum(bench_k2, Schedule((0,)), 0) == 0.0

    def test_alone(self, bench_k1):
        assert schedule_quantum(bench_k1, Schedule((1,)), 0) == math.log(1.5)

    def test_two_equal_power(self, bench_k2):
        assert schedule_quantum(bench_k2, Schedule((2,)), 0) == pytest.approx(
            math.log(1.25), rel=1e-15
        )

    def test_defined_on_partial_schedules(self, bench_k2):
        # schedules below the simultaneity limit still have quanta
        assert schedule_quantum(bench_k2, Schedule((1,)), 0) == math.log(1.5)

    def test_monotone_in_congestion(self):
        rng = np.random.default_rng(11)
        for _ in range(30):
            L, J = rng.integers(1, 3), rng.integers(1, 3)
            k = int(rng.integers(2, 5))
            gammas = rng.uniform(0.2, 20.0, size=J)
            classes = tuple(ServiceClass(0.01, 2) for _ in range(L))
            p = make_params(k=k, gammas=gammas, classes=classes)
            counts = rng.integers(0, 2, size=L * J)
            while counts.sum() == 0 or counts.sum() >= k:
                counts = rng.integers(0, 2, size=L * J)
            s = Schedule(tuple(int(x) for x in counts))
            extra = int(rng.integers(0, L * J))
            bigger = list(s.counts)
            bigger[extra] += 1
            s2 = Schedule(tuple(bigger))
            for j in range(J):
                if s.column_total(p, j) > 0:
                    assert schedule_quantum(p, s2, j) < schedule_quantum(p, s, j)

    def test_alone_is_best(self):
        rng = np.random.default_rng(12)
        for _ in range(30):
            J = int(rng.integers(1, 3))
            k = int(rng.integers(1, 5))
            gammas = rng.uniform(0.2, 20.0, size=J)
            p = make_params(k=k, gammas=gammas, classes=(ServiceClass(0.01, 2),))
            for s in enumerate_schedules(p, "exact"):
                for j in range(J):
                    if s.column_total(p, j) > 0:
                        lone = [0] * p.num_classes
                        lone[j] = 1
                        assert (
                            schedule_quantum(p, Schedule(tuple(lone)), j)
                            >= schedule_quantum(p, s, j)
                        )


class TestCeilToQuantum:
    def test_basic(self):
        assert ceil_to_quantum(2.5, 1.0) == 3.0
        assert ceil_to_quantum(2.0, 1.0) == 2.0
        assert ceil_to_quantum(0.3, 0.2) == pytest.approx(0.4, rel=1e-15)

    def test_exact_multiples_fixed(self):
        for q in (0.1, 0.25, math.log(1.5), 3.7):
            for n in range(1, 11):
                assert ceil_to_quantum(n * q, q) == n * q

    def test_domain(self):
        for bad in ((0.0, 1.0), (-1.0, 1.0), (1.0, 0.0), (1.0, -2.0)):
            with pytest.raises(ValueError):
                ceil_to_quantum(*bad)

    def test_properties_random(self):
        rng = np.random.default_rng(4)
        for _ in range(500):
            x = float(rng.uniform(1e-6, 100.0))
            q = float(rng.uniform(1e-6, 10.0))
            r = ceil_to_quantum(x, q)
            n = r / q
            assert abs(n - round(n)) < 1e-6
            assert round(n) >= 1
            assert r >= x * (1.0 - 1e-12)
            assert r - q < x + 1e-9 * x

    def test_multiple_matches_ratio_ceiling(self):
        assert quantum_multiple(REF_REQUIREMENT, math.log(1.5)) == 19
        assert quantum_multiple(0.1, 1.0) == 1

    def test_array_agrees_with_scalar(self):
        rng = np.random.default_rng(5)
        x = rng.uniform(1e-3, 50.0, size=200)
        q = rng.uniform(1e-3, 5.0, size=200)
        vec = ceil_to_quantum_array(x, q)
        for i in range(200):
            assert vec[i] == ceil_to_quantum(float(x[i]), float(q[i]))


class TestEnumeration:
    def test_tiny_sets(self):
        p = make_params(k=2)
        assert sorted(s.counts for s in enumerate_schedules(p, "at_most")) == [(0,), (1,), (2,)]
        p2 = make_params(k=1, gammas=(1.0, 2.0))
        assert sorted(s.counts for s in enumerate_schedules(p2, "exact")) == [(0, 1), (1, 0)]
        p3 = make_params(k=3, gammas=(1.0, 2.0))
        assert len(list(enumerate_schedules(p3, "exact"))) == 4

    @pytest.mark.parametrize("shape", [(1, 1), (1, 2), (2, 1), (2, 2), (1, 4), (4, 1)])
    @pytest.mark.parametrize("k", [1, 2, 3, 4, 5, 6])
    def test_counts_match_closed_forms(self, shape, k):
        L, J = shape
        p = make_params(
            k=k, gammas=tuple(1.0 + j for j in range(J)),
            classes=tuple(ServiceClass(0.01, 2) for _ in range(L)),
        )
        n = L * J
        exact = list(enumerate_schedules(p, "exact"))
        at_most = list(enumerate_schedules(p, "at_most"))
        assert len(exact) == math.comb(k + n - 1, n - 1) == schedule_count(p, "exact")
        assert len(at_most) == math.comb(k + n, n) == schedule_count(p, "at_most")
        assert len(set(s.counts for s in exact)) == len(exact)
        assert len(set(s.counts for s in at_most)) == len(at_most)
        assert all(s.total == k for s in exact)
        assert all(0 <= s.total <= k for s in at_most)
        assert Schedule((0,) * n).counts in [s.counts for s in at_most]
        for j in range(J):
            with_j = list(enumerate_schedules(p, "exact_with_class_j", j=j))
            assert all(s.column_total(p, j) > 0 for s in with_j)
            assert len(with_j) == schedule_count(p, "exact_with_class_j", j=j)

    def test_bad_mode(self, bench_k1):
        with pytest.raises(ValueError):
            list(enumerate_schedules(bench_k1, "everything"))


class TestQuantumExtrema:
    def test_single_schedule_case(self, bench_k2):
        ext = quantum_extrema(bench_k2)
        assert ext.min_per_class[0] == ext.max_per_class[0] == pytest.approx(
            math.log(1.25), rel=1e-15
        )
        assert ext.min_total == pytest.approx(2.0 * math.log(1.25), rel=1e-15)

    def test_min_pairs_with_strongest_interferer(self):
        p = make_params(k=2, gammas=(1.0, 10.0))
        ext = quantum_extrema(p)
        # worst case for the weak class: share the channel with the strong one
        assert ext.min_per_class[0] == pytest.approx(
            service_quantum(1.0, 1.0, 1.0 + 10.0), rel=1e-15
        )
        assert ext.max_per_class[0] == pytest.approx(
            service_quantum(1.0, 1.0, 1.0 + 1.0), rel=1e-15
        )
        # brute force over all full schedules containing the class
        brute = min(
            schedule_quantum(p, s, 0)
            for s in enumerate_schedules(p, "exact_with_class_j", j=0)
        )
        assert ext.min_per_class[0] == pytest.approx(brute, rel=1e-15)

    def test_matches_bruteforce_random(self):
        rng = np.random.default_rng(21)
        for _ in range(20):
            L, J = int(rng.integers(1, 3)), int(rng.integers(1, 3))
            k = int(rng.integers(1, 6))
            gammas = tuple(float(g) for g in rng.uniform(0.1, 30.0, size=J))
            p = make_params(
                k=k, gammas=gammas, classes=tuple(ServiceClass(0.01, 4) for _ in range(L))
            )
            ext = quantum_extrema(p)
            for j in range(J):
                vals = [
                    schedule_quantum(p, s, j)
                    for s in enumerate_schedules(p, "exact_with_class_j", j=j)
                ]
                assert ext.min_per_class[j] == pytest.approx(min(vals), rel=1e-12)
                assert ext.max_per_class[j] == pytest.approx(max(vals), rel=1e-12)
            totals = [
                sum(
                    s.counts[c] * schedule_quantum(p, s, c % J)
                    for c in range(L * J)
                )
                for s in enumerate_schedules(p, "exact")
            ]
            assert ext.min_total == pytest.approx(min(totals), rel=1e-12)

    def test_large_k_limit(self):
        p = make_params(k=10_000)
        ext = quantum_extrema(p)
        limit = 0.5  # rho/(1+rho) at rho=1
        assert abs(p.k_max * ext.min_per_class[0] - limit) / limit < 0.01

    def test_capacity_cap(self):
        p = make_params(k=100, gammas=(1.0, 2.0))
        with pytest.raises(CapacityError):
            quantum_extrema(p, cap=50)
