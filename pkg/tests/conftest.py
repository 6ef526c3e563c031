import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ionkink import collective, dynamics, statics
from ionkink.kinkdetect import ExtendedCentre
from ionkink.model import IonSystem

settings.register_profile(
    "default", max_examples=40, deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("default")

NU_Z = 24.6e3

_ACCEPTANCE = []


def record_acceptance(criterion, ok, detail):
    """Store one acceptance line; printed in the terminal summary."""
    _ACCEPTANCE.append((criterion, ok, detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, ok, detail in sorted(_ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def acceptance():
    return record_acceptance


@pytest.fixture(scope="session")
def sys140():
    return IonSystem.uniform(30, NU_Z, 140e3)


@pytest.fixture(scope="session")
def zz140(sys140):
    return statics.zigzag(sys140)


@pytest.fixture(scope="session")
def kink140(sys140, zz140):
    return statics.seed_kink(sys140, zz140)


@pytest.fixture(scope="session")
def curve140(sys140, zz140, kink140):
    return statics.trace_adiabatic(sys140, kink140, "extended", zz140)


@pytest.fixture(scope="session")
def traj140(curve140):
    return collective.KinkTrajectory(curve140)


@pytest.fixture(scope="session")
def sys220():
    return IonSystem.uniform(30, NU_Z, 220e3)


@pytest.fixture(scope="session")
def zz220(sys220):
    return statics.zigzag(sys220)


@pytest.fixture(scope="session")
def curve220(sys220, zz220):
    return statics.trace_adiabatic(sys220, statics.seed_kink(sys220, zz220), "odd", zz220)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture(scope="session")
def released140(sys140, zz140, kink140):
    """Extended kink held at X = 25 um on its adiabatic trajectory, at rest."""
    x0 = 25e-6 / sys140.units.length
    q, _ = statics.constrained_minimize(sys140, kink140, ExtendedCentre(zz140.z), x0)
    return dynamics.DynamicsState.at_rest(q)
