import numpy as np
import pytest

from spacetime_relax import (ControlPath, DiscreteYoungMeasure, MeanMismatch, TranscriptionConfig,
                             fully_relaxed_energy, integrate,
                             integrate_measure, normalize_atoms, normalize_measure, pushforward, recovery_sequence,
                             relaxed_energy, solve_fully_relaxed, updown_reference_path)


def _oscillation(S=2.0, N=8):
    """Updown measure 1/2 delta_(1, 1) + 1/2 delta_(1, -1) in every cell."""
    return DiscreteYoungMeasure.uniform(S, np.full((N, 2), 0.5), np.ones((N, 2)),
                                        np.tile([[1.0], [-1.0]], (N, 1, 1)))


def test_measure_validation():
    with pytest.raises(ValueError, match="summing to one"):
        DiscreteYoungMeasure.uniform(1.0, [[0.5, 0.4]], [[1.0, 1.0]], [[[0.0], [0.0]]])
    with pytest.raises(ValueError, match="unit ball"):
        DiscreteYoungMeasure.uniform(1.0, [[1.0]], [[1.0]], [[[1.5]]])
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        DiscreteYoungMeasure.uniform(1.0, [[1.0]], [[1.2]], [[[0.0]]])


def test_dirac_measures_reduce_to_paths(updown_rp):
    rng = np.random.default_rng(2)
    cp = ControlPath.uniform(2.5, rng.uniform(0, 1, 12) * 0.8, rng.uniform(-1, 1, 12))
    curve = integrate(updown_rp, cp)
    e = relaxed_energy(updown_rp, curve)
    for M in (1, 3):
        mu = DiscreteYoungMeasure.from_path(cp, M)
        mc = integrate_measure(updown_rp, mu)
        np.testing.assert_allclose(mc.y_nodes, curve.y_nodes, rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(mc.t_nodes, curve.t_nodes, rtol=1e-12, atol=1e-15)
        assert fully_relaxed_energy(updown_rp, mu, mc) == pytest.approx(e, rel=1e-12)
        gc = pushforward(updown_rp, mu, mc)
        np.testing.assert_allclose(gc.mean_velocity()[:, 0], cp.v, rtol=1e-12)
        # every atom of a Dirac cell has the same velocity
        np.testing.assert_allclose(gc.velocities[:, 0], gc.velocities[:, -1], rtol=1e-12)


def test_oscillation_measure_dynamics(updown_rp):
    mu = _oscillation()
    curve = integrate_measure(updown_rp, mu)
    # y1' = mean |u| = 1, y2' = mean u = 0, t' = 1
    np.testing.assert_allclose(curve.y_nodes[:, 0], curve.s_grid, atol=1e-14)
    np.testing.assert_allclose(curve.y_nodes[:, 1], 0.0, atol=1e-14)
    np.testing.assert_allclose(curve.t_nodes, curve.s_grid, atol=1e-14)


def test_oscillation_pushforward(updown_rp):
    mu = _oscillation()
    gc = pushforward(updown_rp, mu, integrate_measure(updown_rp, mu))
    np.testing.assert_allclose(gc.weights, 0.5)
    np.testing.assert_allclose(gc.velocities[:, 0], [[1.0, 1.0, 1.0]] * 8, atol=1e-14)
    np.testing.assert_allclose(gc.velocities[:, 1], [[1.0, 1.0, -1.0]] * 8, atol=1e-14)
    np.testing.assert_allclose(gc.mean_velocity(), [[1.0, 1.0, 0.0]] * 8, atol=1e-14)
    np.testing.assert_allclose(gc.support_radius(), np.sqrt(3.0))


def test_zero_mean_measure_gives_constant_curve(updown_rp):
    # vertical atoms (0, +1) and (0, -1): y1 moves but y2 and t do not
    mu = DiscreteYoungMeasure.uniform(1.0, [[0.5, 0.5]], [[0.0, 0.0]], [[[1.0], [-1.0]]])
    curve = integrate_measure(updown_rp, mu)
    assert curve.t_nodes[-1] == 0.0 and curve.y_nodes[-1, 1] == 0.0
    gc = pushforward(updown_rp, mu, curve)
    assert not np.allclose(gc.velocities[0, 0], gc.velocities[0, 1])


def test_generalized_curve_mean_and_lipschitz(updown_rp):
    rng = np.random.default_rng(4)
    N, M = 10, 3
    w = rng.dirichlet(np.ones(M), N)
    v = rng.uniform(0, 1, (N, M))
    u = rng.uniform(-1, 1, (N, M, 1))
    mu = DiscreteYoungMeasure.uniform(3.0, w, v, u)
    curve = integrate_measure(updown_rp, mu)
    gc = pushforward(updown_rp, mu, curve, tol=1e-9)
    slope = np.linalg.norm(gc.increments(), axis=1) / mu.ds
    assert np.all(slope <= gc.support_radius() + 1e-12)


def test_inconsistent_curve_raises(updown_rp):
    mu = _oscillation()
    wrong = integrate(updown_rp, ControlPath.uniform(2.0, np.ones(8), np.full(8, 0.5)))
    with pytest.raises(MeanMismatch):
        pushforward(updown_rp, mu, wrong)


def test_double_well_measure_costs_nothing(double_well_rp):
    # atoms at the wells +-1 with mean 0 keep y = 0
    mu = DiscreteYoungMeasure.uniform(1.0, np.full((4, 2), 0.5), np.ones((4, 2)),
                                      np.tile([[1.0], [-1.0]], (4, 1, 1)))
    assert fully_relaxed_energy(double_well_rp, mu) == pytest.approx(0.0, abs=1e-15)


def test_updown_concentrated_measure_energy(updown_rp):
    mu = DiscreteYoungMeasure.from_path(updown_reference_path(), M=2)
    assert fully_relaxed_energy(updown_rp, mu, h_max=1e-3) == pytest.approx(0.75, abs=1e-6)


def test_normalize_measure():
    mu = DiscreteYoungMeasure.uniform(2.0, [[0.5, 0.5], [1.0, 0.0]], [[0.5, 0.25], [0.0, 0.0]],
                                      [[[0.1], [0.0]], [[0.0], [0.0]]])
    nm = normalize_measure(mu)
    assert nm.N == 1
    assert nm.S == pytest.approx(0.5)
    np.testing.assert_allclose(nm.v, [[1.0, 0.5]])
    assert nm.time_budget() == pytest.approx(mu.time_budget())


def test_normalize_atoms_reparametrizes_the_limit(updown_rp):
    rng = np.random.default_rng(8)
    N, M = 12, 3
    w = rng.dirichlet(np.ones(M), N)
    w[0] = [1.0, 0.0, 0.0]
    v = rng.uniform(0, 0.8, (N, M))
    u = rng.uniform(-0.6, 0.6, (N, M, 1))
    v[1], u[1] = 0.0, 0.0
    mu = DiscreteYoungMeasure.uniform(3.0, w, v, u)
    nm = normalize_atoms(mu)
    assert nm.N == N - 1
    wn, vn, un = nm.atoms()
    scale = np.maximum(vn, np.abs(un[..., 0]))
    np.testing.assert_allclose(scale[wn > 0], 1.0, rtol=1e-15)
    assert nm.time_budget() == pytest.approx(mu.time_budget(), rel=1e-13)
    a, b = integrate_measure(updown_rp, mu, h_max=1e-3), integrate_measure(updown_rp, nm, h_max=1e-3)
    np.testing.assert_allclose(b.final_state, a.final_state, atol=1e-9)
    assert fully_relaxed_energy(updown_rp, nm, b, h_max=1e-3) == pytest.approx(
        fully_relaxed_energy(updown_rp, mu, a, h_max=1e-3), abs=1e-7)


def test_recovery_sequence_structure():
    mu = DiscreteYoungMeasure.uniform(1.0, [[0.25, 0.75]], [[1.0, 0.5]], [[[1.0], [-1.0]]])
    cp = recovery_sequence(mu, 4)
    assert cp.N == 8 and cp.S == 1.0
    np.testing.assert_allclose(cp.ds, np.tile([0.0625, 0.1875], 4))
    np.testing.assert_array_equal(cp.v, np.tile([1.0, 0.5], 4))
    with pytest.raises(ValueError):
        recovery_sequence(mu, 0)
    single = DiscreteYoungMeasure.from_path(updown_reference_path())
    assert recovery_sequence(single, 1) == updown_reference_path()


def test_recovery_curves_converge_at_first_order(updown_rp):
    mu = _oscillation(N=4)
    target = integrate_measure(updown_rp, mu)
    errs = []
    for k in (1, 2, 4, 8, 16):
        curve = integrate(updown_rp, recovery_sequence(mu, k))
        # compare at the measure's cell nodes, which every recovery grid contains
        idx = np.searchsorted(curve.s_grid, target.s_grid)
        errs.append(np.abs(curve.y_nodes[idx] - target.y_nodes).max()
                    + np.abs(curve.y_nodes[:, 1]).max())
    assert all(a > b for a, b in zip(errs, errs[1:]))
    slope = np.polyfit(np.log([1, 2, 4, 8, 16]), np.log(errs), 1)[0]
    assert slope == pytest.approx(-1.0, abs=0.1)


def test_measure_dict_round_trip():
    mu = _oscillation()
    back = DiscreteYoungMeasure.from_dict(mu.to_dict())
    for a, b in zip(mu.atoms(), back.atoms()):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(mu.s_grid, back.s_grid)


def test_young_solver_with_duplicated_atoms_matches_single_atom(updown_rp):
    cfg = TranscriptionConfig(N_cells=16, max_iters=200)
    one = solve_fully_relaxed(updown_rp, cfg, M=1)
    N0 = one.measure.N
    # the coarsest level of N = 16 is the full grid
    w, v, u = one.measure.atoms()
    dup = DiscreteYoungMeasure(one.measure.s_grid, np.full((N0, 2), 0.5),
                               np.repeat(v, 2, axis=1), np.repeat(u, 2, axis=1))
    assert fully_relaxed_energy(updown_rp, dup) == pytest.approx(one.energy, rel=1e-12)
    np.testing.assert_allclose(one.measure.weights.sum(axis=1), 1.0, atol=1e-15)


def test_young_solver_unpacks(updown_rp):
    sol = solve_fully_relaxed(updown_rp, TranscriptionConfig(N_cells=16, max_iters=20), M=2)
    mu, curve, energy = sol
    assert mu is sol.measure and energy == sol.energy
    np.testing.assert_allclose(mu.weights.sum(axis=1), 1.0, atol=1e-14)
