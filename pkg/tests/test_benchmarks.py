import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from spacetime_relax import (UPDOWN_OPTIMUM, ControlPath, HeatSpectralSpec, UpdownSpec,
                             build_heat_spectral, build_relaxed, build_updown, duhamel_sine,
                             heat_eigenvalues, heat_l2_norm_quadrature, heat_optimum,
                             heat_reconstruct, heat_reference_path, heat_semigroup, integrate,
                             modified_duhamel, relaxed_energy, updown_reference_path,
                             updown_waypoints)


@settings(max_examples=50, deadline=None)
@given(arrays(float, (6,), elements=st.floats(-2.0, 2.0)))
def test_parseval(c):
    assert heat_l2_norm_quadrature(c) == pytest.approx(np.linalg.norm(c), rel=1e-12, abs=1e-14)


def test_basis_is_orthonormal():
    x = np.arange(512) / 512
    B = np.array([heat_reconstruct(np.eye(6)[i], x) for i in range(6)])
    np.testing.assert_allclose(B @ B.T / 512, np.eye(6), atol=1e-12)


def test_eigenvalues_and_contraction():
    np.testing.assert_allclose(heat_eigenvalues(2), [(2 * np.pi) ** 2] * 2 + [(4 * np.pi) ** 2] * 2)
    spec = HeatSpectralSpec(mode_count=3)
    y = np.random.default_rng(0).standard_normal(6)
    prev = np.linalg.norm(y)
    for t in (0.001, 0.01, 0.1):
        cur = np.linalg.norm(heat_semigroup(spec, t, y))
        assert cur < prev
        prev = cur


def test_duhamel_closed_form_matches_rk4():
    spec = HeatSpectralSpec(mode_count=1)
    rp = build_relaxed(build_heat_spectral(spec))
    amp, omega = np.array([0.8, -0.3]), 7.0
    # midpoint staircase of the sine forcing: O(h^2) from the staircase, O(h^4) from RK4
    N = 4000
    t = np.linspace(0.0, 1.0, N + 1)
    mid = 0.5 * (t[1:] + t[:-1])
    cp = ControlPath(t, np.ones(N), amp * np.sin(omega * mid)[:, None])
    y = integrate(rp, cp, h_max=1.0 / N).final_state
    np.testing.assert_allclose(y, duhamel_sine(spec, 1.0, amp, omega), atol=1e-6)


def test_modified_duhamel_for_vertical_segment():
    spec = HeatSpectralSpec(mode_count=1)
    cp = heat_reference_path(spec)
    alpha, _ = heat_optimum(spec)
    np.testing.assert_allclose(modified_duhamel(spec, cp), alpha * spec.target, atol=1e-15)


def test_heat_optimum_minimizes_the_scalar_objective():
    for target in ([1 / np.sqrt(2), 0.0], [2.0, 1.0], [0.1, 0.0]):
        spec = HeatSpectralSpec(mode_count=1, target_coefficients=tuple(target))
        r = np.linalg.norm(target)
        grid = np.linspace(0.0, 1.0, 200001)
        vals = grid * r + (1 - grid) ** 2 * r ** 2
        alpha, value = heat_optimum(spec)
        assert alpha == pytest.approx(grid[np.argmin(vals)], abs=1e-5)
        assert value == pytest.approx(vals.min(), abs=1e-9)


def test_heat_default_optimum_value():
    alpha, value = heat_optimum(HeatSpectralSpec(mode_count=1))
    assert alpha == pytest.approx(1 - 1 / np.sqrt(2))
    assert value == pytest.approx(0.45711, abs=1e-5)


def test_heat_zero_target_stays_at_rest():
    spec = HeatSpectralSpec(mode_count=2, target_coefficients=(0.0,) * 4)
    assert heat_optimum(spec) == (0.0, 0.0)
    cp = heat_reference_path(spec)
    rp = build_relaxed(build_heat_spectral(spec))
    assert relaxed_energy(rp, integrate(rp, cp)) == 0.0


def test_heat_reference_energy():
    spec = HeatSpectralSpec(mode_count=4)
    rp = build_relaxed(build_heat_spectral(spec))
    _, value = heat_optimum(spec)
    assert relaxed_energy(rp, integrate(rp, heat_reference_path(spec))) == pytest.approx(value,
                                                                                        abs=1e-12)


def test_updown_reference_energy(updown_rp):
    curve = integrate(updown_rp, updown_reference_path())
    assert relaxed_energy(updown_rp, curve, h_max=1e-3) == pytest.approx(UPDOWN_OPTIMUM, abs=1e-6)
    np.testing.assert_allclose(curve.points(), updown_waypoints()[[0, 1, 2, 3, 4]], atol=1e-14)


def test_updown_spec_needs_horizon_beyond_one():
    with pytest.raises(ValueError):
        UpdownSpec(T=1.0)
    p = build_updown(UpdownSpec(T=3.0))
    assert p.T == 3.0
    assert updown_waypoints(UpdownSpec(T=3.0))[-1, 0] == 3.0
