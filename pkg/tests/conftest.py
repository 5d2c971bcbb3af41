import numpy as np
import pytest

from spacetime_relax import (HeatSpectralSpec, TranscriptionConfig, build_double_well,
                             build_heat_spectral, build_relaxed, build_updown, solve,
                             solve_fully_relaxed)


@pytest.fixture(scope="session")
def updown_rp():
    return build_relaxed(build_updown())


@pytest.fixture(scope="session")
def heat1_rp():
    return build_relaxed(build_heat_spectral(HeatSpectralSpec(mode_count=1)))


@pytest.fixture(scope="session")
def double_well_rp():
    return build_relaxed(build_double_well())


@pytest.fixture(scope="session")
def updown_solution(updown_rp):
    """N = 400 solve with snapshots every 10 iterations."""
    return solve(updown_rp, TranscriptionConfig(N_cells=400, snapshot_every=10))


@pytest.fixture(scope="session")
def heat1_solution(heat1_rp):
    return solve(heat1_rp, TranscriptionConfig(N_cells=200))


@pytest.fixture(scope="session")
def double_well_single(double_well_rp):
    with pytest.warns(UserWarning):
        return solve(double_well_rp, TranscriptionConfig(N_cells=200))


@pytest.fixture(scope="session")
def double_well_young(double_well_rp):
    return solve_fully_relaxed(double_well_rp, TranscriptionConfig(N_cells=200), M=2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """``record(label, ok, detail)``: store a criterion result and assert it."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(label, ok, detail):
        lines.append(f"{label:<26s} {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=_criterion_order):
            terminalreporter.write_line(line)


def _criterion_order(line):
    head = line.split()[1] if line.startswith("criterion") else "99"
    return (int(head) if head.isdigit() else 99, line)
