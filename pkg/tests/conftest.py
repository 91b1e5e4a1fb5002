import pytest

from macstab import ServiceClass, SystemParams

# Reference class used across the suite: Pe = 1e-3, M = 2, so the service
# requirement is ln(1000) + ln(2) = 7.600902459542082 nats at rho = 1.
REF_CLASS = ServiceClass(1e-3, 2)
REF_REQUIREMENT = 7.600902459542082


def make_params(rho=1.0, k=1, gammas=(1.0,), classes=(REF_CLASS,)):
    return SystemParams.with_unit_noise(rho, k, tuple(gammas), tuple(classes))


@pytest.fixture
def bench_k1():
    """Single class, single power, K = 1, SNR 1: service takes 19 slots."""
    return make_params(k=1)


@pytest.fixture
def bench_k2():
    return make_params(k=2)
