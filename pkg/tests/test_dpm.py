import json

import numpy as np
import pytest

from spacetime_relax import (CompactifiedPoint, ControlPath, DiscreteYoungMeasure, NotNormalized,
                             classical_pairing, dpm_pairing, integrate, integrate_measure,
                             project_dpm, recovery_sequence, updown_reference_path)


def mixed_measure():
    """Oscillation, then a two-direction vertical run, then a mixed finite cell."""
    w = [[0.5, 0.5]] * 4 + [[0.3, 0.7]] * 2 + [[0.6, 0.4]] * 6
    v = [[1.0, 1.0]] * 4 + [[0.0, 0.0]] * 2 + [[1.0, 0.4]] * 6
    u = [[[1.0], [-1.0]]] * 4 + [[[1.0], [-1.0]]] * 2 + [[[0.3], [1.0]]] * 6
    return DiscreteYoungMeasure.uniform(3.0, w, v, u)


def g(t):
    return np.cos(t) + 0.5 * t


def w_fin(x):
    r = np.linalg.norm(x, axis=-1)
    return x[..., 0] / (1.0 + r) + 1.0 / (1.0 + r * r)


def w_inf(d):
    return d[..., 0]


def test_compactified_points():
    p = CompactifiedPoint.infinite([3.0, 4.0])
    assert p.direction == (0.6, 0.8) and not p.is_finite
    assert CompactifiedPoint.finite([1.0]).to_dict() == {"kind": "finite", "value": [1.0]}
    with pytest.raises(ValueError):
        CompactifiedPoint("infinite", direction=(2.0, 0.0))
    with pytest.raises(ValueError):
        CompactifiedPoint("finite", value=(1.0,), direction=(1.0,))
    with pytest.raises(ValueError):
        CompactifiedPoint("other")


def test_time_increasing_rest_path(updown_rp):
    cp = ControlPath.uniform(2.0, np.ones(10), np.zeros(10))
    d = project_dpm(cp, integrate(updown_rp, cp))
    assert d.atoms == []
    np.testing.assert_array_equal(d.rho, 1.0)
    np.testing.assert_allclose(d.bin_density, 1.0, rtol=1e-12)
    assert all(e.points == ((CompactifiedPoint.finite([0.0]), 1.0),) for e in d.mu)
    assert d.total_mass() == pytest.approx(2.0)


def test_updown_minimizer(updown_rp):
    cp = updown_reference_path()
    d = project_dpm(cp, integrate(updown_rp, cp))
    assert d.atoms == [(1.0, 0.5)]
    (atom_entry,) = [e for e in d.mu if e.atom]
    assert dict(atom_entry.points) == {CompactifiedPoint.infinite([1.0]): 0.5,
                                       CompactifiedPoint.infinite([-1.0]): 0.5}
    np.testing.assert_array_equal(d.rho, 1.0)
    # pairing with the indicator of the infinite points measures the concentration
    assert dpm_pairing(d, np.ones_like, lambda x: np.zeros(len(x)),
                       lambda x: np.ones(len(x))) == pytest.approx(0.5, abs=1e-15)
    assert dpm_pairing(d, np.ones_like, lambda x: np.ones(len(x)),
                       lambda x: np.ones(len(x))) == pytest.approx(d.total_mass())


def test_oscillation_measure(updown_rp):
    mu = DiscreteYoungMeasure.uniform(2.0, np.full((8, 2), 0.5), np.ones((8, 2)),
                                      np.tile([[1.0], [-1.0]], (8, 1, 1)))
    d = project_dpm(mu, integrate_measure(updown_rp, mu))
    assert d.atoms == []
    np.testing.assert_allclose(d.segments[:, 2], 2.0)
    np.testing.assert_allclose(d.bin_density, 2.0, rtol=1e-12)
    for e in d.mu:
        assert dict(e.points) == {CompactifiedPoint.finite([1.0]): 0.5,
                                  CompactifiedPoint.finite([-1.0]): 0.5}


def test_unit_mass_and_rho_range(updown_rp):
    mu = mixed_measure()
    d = project_dpm(mu, integrate_measure(updown_rp, mu))
    assert all(abs(e.mass - 1.0) <= 1e-10 for e in d.mu)
    assert np.all((d.rho >= 1.0) & (d.rho <= 2.0))
    assert len(d.atoms) == 1
    t, mass = d.atoms[0]
    assert t == pytest.approx(1.0) and mass == pytest.approx(0.5)
    # bins carry the same a.c. mass as the exact segments
    ac = np.sum((d.segments[:, 1] - d.segments[:, 0]) * d.segments[:, 2])
    assert np.sum(np.diff(d.bin_edges) * d.bin_density) == pytest.approx(ac, rel=1e-12)


def test_not_normalized_is_rejected(updown_rp):
    cp = ControlPath.uniform(4.0, np.full(4, 0.5), np.zeros(4))
    with pytest.raises(NotNormalized):
        project_dpm(cp, integrate(updown_rp, cp))


def test_generation_identity_against_recovery_paths(updown_rp):
    mu = mixed_measure()
    d = project_dpm(mu, integrate_measure(updown_rp, mu))
    target = dpm_pairing(d, g, w_fin, w_inf)
    errs = [abs(classical_pairing(recovery_sequence(mu, k), g, w_fin, w_inf) - target)
            for k in (1, 2, 4, 8, 16)]
    assert all(a > b for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-2


def test_recovery_paths_project_close_to_the_measure(updown_rp):
    mu = mixed_measure()
    d = project_dpm(mu, integrate_measure(updown_rp, mu))
    errs = []
    for k in (1, 4, 16):
        cp = recovery_sequence(mu, k)
        dk = project_dpm(cp, integrate(updown_rp, cp))
        # same concentration mass; pairings approach the measure's
        assert sum(m for _, m in dk.atoms) == pytest.approx(0.5)
        errs.append(abs(dpm_pairing(dk, g, w_fin, w_inf) - dpm_pairing(d, g, w_fin, w_inf)))
    assert errs[0] > errs[1] > errs[2]


def test_canonical_json_ignores_vertical_order(updown_rp):
    up_down = ControlPath([0.0, 1.0, 1.25, 1.5, 2.5], [1.0, 0.0, 0.0, 1.0],
                          [[0.0], [1.0], [-1.0], [0.0]])
    down_up = ControlPath([0.0, 1.0, 1.25, 1.5, 2.5], [1.0, 0.0, 0.0, 1.0],
                          [[0.0], [-1.0], [1.0], [0.0]])
    a = project_dpm(up_down, integrate(updown_rp, up_down))
    b = project_dpm(down_up, integrate(updown_rp, down_up))
    assert a.to_json() == b.to_json()
    data = json.loads(a.to_json())
    assert data["sigma"]["atoms"] == [[1.0, 0.5]]
    assert [p["direction"] for p in data["mu"][1]["atoms"]] == [[-1.0], [1.0]]
