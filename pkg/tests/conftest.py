import numpy as np
import pytest

from activevol.featurize import build_matrix
from activevol.synth import SynthConfig, generate_world


def small_config(**kw):
    base = dict(n_links=300, n_zones=40, n_lgas=3, n_stations=3, n_sites=60, n_days=28, seed=7)
    base.update(kw)
    return SynthConfig(**base)


@pytest.fixture(scope="session")
def small_world():
    return generate_world(small_config())


@pytest.fixture(scope="session")
def small_matrix(small_world):
    w = small_world
    m, _ = build_matrix(w.links, w.zones, w.lgas, w.station_obs, w.third_party, w.config.mode,
                        counts=w.counts, stations=w.stations)
    return m


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list = []


@pytest.fixture
def criterion(request, capsys):
    """Yields a recorder; the verdict line is printed and repeated in the terminal summary."""
    notes = {}

    def note(**kw):
        notes.update(kw)

    yield note
    failed = getattr(request.node, "rep_call", None) is not None and request.node.rep_call.failed
    detail = ", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in notes.items())
    line = f"{request.node.name}: {'FAIL' if failed else 'PASS'}" + (f" ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    with capsys.disabled():
        print("\n" + line)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
