from __future__ import annotations

import numpy as np
import pytest

from dynkinlab import BarrierSpec, GeneratorSpec, Mode, NodeFunction, build_lattice

CRITERIA: dict[int, tuple[str, list[str]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    number, title = marker.args
    outcome = "FAIL" if call.excinfo is not None else "PASS"
    CRITERIA.setdefault(number, (title, []))[1].append(outcome)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        title, outcomes = CRITERIA[number]
        status = "PASS" if all(o == "PASS" for o in outcomes) else "FAIL"
        terminalreporter.write_line(f"{status} criterion {number}: {title} ({len(outcomes)} checks)")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def slanted_barriers(a0=1.0, width=1.0) -> BarrierSpec:
    """L = max(0, a0 + w - t), U = max(width, a0 + width + w - t)."""
    lower = NodeFunction("clipped", a0=a0, a1=1.0, a2=-1.0, floor=0.0)
    upper = NodeFunction("clipped", a0=a0 + width, a1=1.0, a2=-1.0, floor=width)
    return BarrierSpec(lower, upper)


def random_reflected_instance(rng, mode=Mode.RECOMBINING, N=None, T=None):
    """Random parallel clipped barriers, a random generator and a terminal inside the band."""
    N = N or int(rng.integers(3, 30))
    if mode is Mode.FULL_TREE:
        N = min(N, 8)
    lat = build_lattice(T or float(rng.uniform(0.2, 2.0)), N, mode)
    a1, a2 = rng.normal(size=2)
    width = float(rng.uniform(0.0, 1.0))
    lower = NodeFunction("clipped", a0=float(rng.normal()), a1=float(a1), a2=float(a2), floor=float(rng.normal()))
    upper = NodeFunction("clipped", a0=lower.a0 + width, a1=float(a1), a2=float(a2), floor=lower.floor + width)
    bar = BarrierSpec(lower, upper)
    L, U = bar.processes(lat)
    xi = L.terminal + rng.random(lat.level_size(N)) * (U.terminal - L.terminal)
    gens = [GeneratorSpec.zero(), GeneratorSpec.kappa_abs(0.5), GeneratorSpec.linear_z(-0.7),
            GeneratorSpec.linear_yz(0.4, 0.6)]
    return lat, gens[int(rng.integers(len(gens)))], bar, xi
