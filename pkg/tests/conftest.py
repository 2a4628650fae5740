"""Shared fixtures: the planar cubic loop, its certificate and one full build."""

from __future__ import annotations

import os
import time
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from etc_traffic import (
    BuildReport,
    DeltaCertificate,
    EtcSystem,
    MuFunction,
    build_abstraction,
    build_ball_segments,
    build_cones,
    build_extended_field,
    load_config,
)

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ROOT = Path(__file__).resolve().parents[1]
CONFIG = ROOT / "configs" / "planar_cubic.toml"
CERTIFICATE = ROOT / "configs" / "planar_cubic_delta_certificate.json"

PLANT = ["-x1^3 + x1*x2^2", "x1*x2^2 - x1^2*x2 + u1"]
PLANT_AS_PRINTED = ["x1^3 + x1*x2^2", "x1*x2^2 - x1^2*x2 + u1"]
CONTROLLER = ["-x2^3 - x1*x2^2"]
SIGMA_SQ = 1.45161e-5
TIMES = (4e-4, 8e-4, 20e-4)


@pytest.fixture(scope="session")
def system():
    return EtcSystem.from_text(PLANT, CONTROLLER, SIGMA_SQ, 2)


@pytest.fixture(scope="session")
def printed_system():
    return EtcSystem.from_text(PLANT_AS_PRINTED, CONTROLLER, SIGMA_SQ, 2)


@pytest.fixture(scope="session")
def ext(system):
    return build_extended_field(system)


@pytest.fixture(scope="session")
def cert():
    return DeltaCertificate.from_json(CERTIFICATE.read_text())


@pytest.fixture(scope="session")
def mu(cert):
    return MuFunction(cert, 1.0, 2)


@pytest.fixture(scope="session")
def cones():
    return build_cones(16)


@pytest.fixture(scope="session")
def segments(mu, cones):
    return build_ball_segments(mu, cones, TIMES)


@pytest.fixture(scope="session")
def config():
    return load_config(CONFIG)


@pytest.fixture(scope="session")
def built(config):
    """``(abstraction, report, seconds)`` for the shipped configuration."""
    report = BuildReport()
    t0 = time.perf_counter()
    a = build_abstraction(config, report=report)
    return a, report, time.perf_counter() - t0


@pytest.fixture(scope="session")
def abstraction(built):
    return built[0]


@pytest.fixture(scope="session")
def rng_seed():
    return 20240601


def unit(angle):
    return np.array([np.cos(angle), np.sin(angle)])


# -------------------------------------------------------------------------
# acceptance report: one line per criterion, echoed in the terminal summary

ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    return request.config.stash.setdefault(ACCEPTANCE_KEY, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
