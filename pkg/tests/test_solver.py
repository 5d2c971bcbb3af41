import csv
import itertools

import numpy as np
import pytest

from spacetime_relax import (BoundViolation, ControlPath, InfeasibleTimeBudget,
                             MaxItersExceeded, NotNormalized, RelaxedSolution, SamplerConfig,
                             TranscriptionConfig, check_uniform_bounds, default_horizon, finalize_path, integrate,
                             is_normalized, relaxed_energy, solve, updown_reference_path,
                             validate_problem, write_trace_csv)
from spacetime_relax.solver import TRACE_COLUMNS

SMALL = TranscriptionConfig(N_cells=32, max_iters=300)


@pytest.fixture(scope="module")
def small_solution(updown_rp):
    return solve(updown_rp, SMALL)


def test_updown_solution_is_normalized_and_feasible(updown_rp, updown_solution):
    sol = updown_solution
    assert is_normalized(sol.path)
    assert sol.constraint_residual <= 1e-6
    assert sol.curve.final_time == pytest.approx(2.0, abs=1e-6)
    assert 0.75 - 1e-6 <= sol.energy <= 0.765
    assert sol.converged and not sol.local_only
    # the reported energy is recomputed from the normalized curve
    assert sol.energy == relaxed_energy(updown_rp, sol.curve)


def test_updown_solution_has_a_vertical_excursion_at_one(updown_solution):
    curve = updown_solution.curve
    tau = curve.time_speed()
    vertical = tau < 1e-10
    assert vertical.any()
    t_vert = curve.t_nodes[:-1][vertical]
    assert np.all(np.abs(t_vert - 1.0) < 0.05)


def test_trace_is_monotone_within_each_penalty_block(updown_solution):
    trace = updown_solution.trace
    assert all(len(row) == len(TRACE_COLUMNS) for row in trace)
    for _, rows in itertools.groupby(trace, key=lambda r: (r[0], r[1])):
        L = np.array([r[4] for r in rows])
        assert np.all(np.diff(L) <= 1e-12 * (1 + np.abs(L[:-1])))


def test_trace_csv(tmp_path, small_solution):
    path = tmp_path / "trace.csv"
    write_trace_csv(small_solution, path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == TRACE_COLUMNS
    assert len(rows) == len(small_solution.trace) + 1
    assert float(rows[-1][3]) == small_solution.trace[-1][3]


def test_solve_is_deterministic(updown_rp, small_solution):
    again = solve(updown_rp, SMALL)
    assert again.path == small_solution.path
    assert again.energy == small_solution.energy


def test_infeasible_time_budget(updown_rp):
    with pytest.raises(InfeasibleTimeBudget):
        solve(updown_rp, TranscriptionConfig(N_cells=16, S_total=1.5))


def test_budget_equal_to_horizon_warns(updown_rp):
    with pytest.warns(UserWarning, match="no vertical parts"):
        sol = solve(updown_rp, TranscriptionConfig(N_cells=16, S_total=2.0, max_iters=50))
    np.testing.assert_allclose(sol.raw_path.v, 1.0)


def test_strict_mode_raises_on_iteration_limit(updown_rp):
    with pytest.raises(MaxItersExceeded):
        solve(updown_rp, TranscriptionConfig(N_cells=16, max_iters=3, strict=True))
    sol = solve(updown_rp, TranscriptionConfig(N_cells=16, max_iters=3))
    assert not sol.converged and sol.iterations == 3


def test_config_validation():
    with pytest.raises(ValueError):
        TranscriptionConfig(N_cells=4)
    with pytest.raises(ValueError):
        TranscriptionConfig(gradient_mode="newton")


def test_default_horizon(updown_rp):
    c = validate_problem(updown_rp.base).coercivity_c
    assert default_horizon(updown_rp) == pytest.approx(4.0 + 1.0 / c)
    assert default_horizon(updown_rp, E0=2.0, coercivity_c=0.5) == 8.0


def test_finalize_restores_budget_and_snaps_near_vertical_cells(updown_rp):
    ref = updown_reference_path()
    grid = np.linspace(0.0, 2.5, 41)
    mid = 0.5 * (grid[1:] + grid[:-1])
    idx = np.searchsorted(ref.s_grid, mid) - 1
    v = ref.v[idx] + np.where(ref.v[idx] == 0, 1e-7, 0.0)
    u = ref.u[idx, 0]
    raw, path, curve, energy, residual = finalize_path(updown_rp, grid, v, u)
    assert residual <= 1e-12
    assert np.count_nonzero(raw.v == 0) == np.count_nonzero(ref.v[idx] == 0)
    assert energy == pytest.approx(0.75, abs=1e-3)


def test_finalize_keeps_snap_only_when_energy_does_not_rise(updown_rp):
    # a slow but genuinely time-advancing cell is not made vertical
    grid = np.linspace(0.0, 2.5, 6)
    v = np.array([1.0, 1.0, 1e-5, 0.0, 0.0])
    u = np.array([0.0, 0.0, 1.0, 0.0, 0.0])
    raw, *_ = finalize_path(updown_rp, grid, v, u)
    assert raw.time_budget() == pytest.approx(2.0, abs=1e-12)


def test_bounds_on_reference_path(updown_rp):
    consts = validate_problem(updown_rp.base)
    cp = updown_reference_path()
    curve = integrate(updown_rp, cp)
    sol = RelaxedSolution(cp, curve, relaxed_energy(updown_rp, curve), 0.0, 0, True)
    rep = check_uniform_bounds(sol, consts, T=2.0)
    assert rep.passed and rep.failures() == []
    assert rep.values["v_l1"] == 2.0
    assert rep.values["u_l1"] == pytest.approx(0.5)


def test_bounds_need_normalized_paths(updown_rp):
    consts = validate_problem(updown_rp.base)
    cp = ControlPath.uniform(4.0, np.full(4, 0.5), np.zeros(4))
    sol = RelaxedSolution(cp, integrate(updown_rp, cp), 1.0, 0.0, 0, True)
    with pytest.raises(NotNormalized):
        check_uniform_bounds(sol, consts)


def test_bound_violation_names_the_bound(updown_rp):
    # a long path far beyond the energy level E0 = 1 breaks the S bound
    consts = validate_problem(updown_rp.base, SamplerConfig(seed=1))
    cp = ControlPath.uniform(20.0, np.full(10, 0.1), np.ones(10))
    sol = RelaxedSolution(cp, integrate(updown_rp, cp), 0.5, 0.0, 0, True)
    with pytest.raises(BoundViolation) as exc:
        check_uniform_bounds(sol, consts, T=2.0)
    assert exc.value.bound in ("u_l1", "t_sup", "y_sup", "S")
    rep = check_uniform_bounds(sol, consts, T=2.0, raise_on_failure=False)
    assert "S" in rep.failures()
