import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from spacetime_relax import (HeatSpectralSpec, build_double_well, build_heat_spectral,
                             build_relaxed, build_updown)
from spacetime_relax._optim import project_simplex, snap_time_budget
from spacetime_relax._shooting import Shooting


def _random_atoms(rng, N, M, k, vmin=0.2):
    w = rng.dirichlet(np.ones(M), N)
    v = rng.uniform(vmin, 1.0, (N, M))
    d = rng.standard_normal((N, M, k))
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    u = d * rng.uniform(0.3, 0.9, (N, M, 1))
    return w, v, u


@pytest.mark.parametrize("name,rp,M", [
    ("updown", build_relaxed(build_updown()), 1),
    ("heat1", build_relaxed(build_heat_spectral(HeatSpectralSpec(mode_count=1))), 1),
    ("double_well", build_relaxed(build_double_well()), 2),
])
def test_adjoint_matches_finite_differences(name, rp, M):
    rng = np.random.default_rng(11)
    N = 6
    grid = np.linspace(0.0, 1.5 * rp.T, N + 1)
    sh = Shooting(rp, grid, np.full(N, 3))
    w, v, u = _random_atoms(rng, N, M, rp.k)
    J, tS, gw, gv, gu = sh.gradient(w, v, u)
    Jf, tSf, fw, fv, fu = sh.gradient_fd(w, v, u, step=1e-6, train_weights=M > 1)
    assert J == Jf and tS == tSf
    for a, b in ((gv, fv), (gu, fu)) + (((gw, fw),) if M > 1 else ()):
        scale = np.abs(b).max()
        assert np.abs(a - b).max() <= 1e-4 * scale, (name, np.abs(a - b).max(), scale)


def test_forward_time_is_exact():
    rp = build_relaxed(build_updown())
    grid = np.array([0.0, 0.5, 1.5, 2.0])
    sh = Shooting(rp, grid, np.ones(3, dtype=int))
    w = np.ones((3, 1))
    v = np.array([[1.0], [0.5], [0.0]])
    u = np.zeros((3, 1, 1))
    J, tS, yS = sh.forward(w, v, u)
    assert tS == 1.0
    np.testing.assert_array_equal(yS, [0.0, 0.0])
    assert J == pytest.approx(1.0)  # g(y) = (y1 - 1)^2


def _simplex_oracle(x):
    """Bisection on the threshold of ``max(x - theta, 0)``."""
    lo, hi = x.min() - 1.0, x.max()
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.maximum(x - mid, 0.0).sum() > 1.0:
            lo = mid
        else:
            hi = mid
    return np.maximum(x - 0.5 * (lo + hi), 0.0)


@settings(max_examples=200, deadline=None)
@given(arrays(float, st.tuples(st.integers(1, 4), st.integers(1, 6)),
              elements=st.floats(-5.0, 5.0)))
def test_simplex_projection(w):
    p = project_simplex(w)
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, rtol=0, atol=1e-14)
    for row, out in zip(w, p):
        np.testing.assert_allclose(out, _simplex_oracle(row), atol=1e-9)


def test_simplex_projection_keeps_simplex_points():
    w = np.array([[0.2, 0.3, 0.5], [1.0, 0.0, 0.0]])
    np.testing.assert_allclose(project_simplex(w), w, atol=1e-15)


def test_time_budget_snap():
    rng = np.random.default_rng(0)
    ds = rng.uniform(0.05, 0.2, 20)
    w = np.ones((20, 1))
    v = rng.uniform(0.0, 1.0, (20, 1))
    T = 0.6 * ds.sum()
    out = snap_time_budget(w, v, ds, T)
    assert float(out[:, 0] @ ds) == pytest.approx(T, abs=1e-13)
    assert np.all((out >= 0) & (out <= 1))
    # every unclipped cell moved by the same theta * ds
    inner = (out[:, 0] > 0) & (out[:, 0] < 1)
    theta = (out[inner, 0] - v[inner, 0]) / ds[inner]
    np.testing.assert_allclose(theta, theta[0], atol=1e-9)


def test_time_budget_snap_respects_mask():
    ds = np.full(4, 0.5)
    w = np.ones((4, 1))
    v = np.array([[0.0], [0.5], [0.5], [0.0]])
    out = snap_time_budget(w, v, ds, 0.8, free=np.array([False, True, True, False]))
    np.testing.assert_array_equal(out[[0, 3], 0], [0.0, 0.0])
    np.testing.assert_allclose(out[[1, 2], 0], [0.8, 0.8], atol=1e-13)


def test_time_budget_snap_infeasible():
    assert snap_time_budget(np.ones((2, 1)), np.ones((2, 1)), np.ones(2), 3.0) is None
