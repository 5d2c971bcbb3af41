"""Space-time relaxed integrand and right-hand side.

For controls ``(v, u)`` with ``v >= 0`` the relaxed quantities are the
perspective functions

    f~(t, y, v, u) = v f(t, y, u/v),    A~(t, y, v, u) = v A(t, y, u/v)

extended to ``v = 0`` by the recession functions, ``|u| f_inf(t, y, u/|u|)``.
Both are positively 1-homogeneous in ``(v, u)``.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConvexityViolation, HomogeneityViolation

__all__ = [
    "EPS_SWITCH",
    "RelaxedProblem",
    "build_relaxed",
    "HomogeneityReport",
    "check_homogeneity",
    "ConvexityReport",
    "check_relaxed_convexity",
]

# below this time-control the ratio u/v is not formed
EPS_SWITCH = 1e-8


def _flatten(t, y, v, u, n, k):
    t = np.asarray(t, dtype=float)
    v = np.asarray(v, dtype=float)
    y = np.asarray(y, dtype=float)
    u = np.asarray(u, dtype=float)
    batch = np.broadcast_shapes(t.shape, v.shape, y.shape[:-1], u.shape[:-1])
    t = np.broadcast_to(t, batch).reshape(-1)
    v = np.broadcast_to(v, batch).reshape(-1)
    y = np.broadcast_to(y, batch + (n,)).reshape(-1, n)
    u = np.broadcast_to(u, batch + (k,)).reshape(-1, k)
    return batch, t, y, v, u


def _perspective(fun, rec, t, y, v, u, eps, out_dim):
    """``v fun(t, y, u/v)`` with the recession extension below ``eps``."""
    pos = v >= eps
    if pos.all():
        val = np.asarray(fun(t, y, u / v[:, None]), dtype=float)
        return val * (v if out_dim is None else v[:, None])
    shape = (t.shape[0],) if out_dim is None else (t.shape[0], out_dim)
    out = np.zeros(shape)
    if pos.any():
        vp = v[pos]
        val = np.asarray(fun(t[pos], y[pos], u[pos] / vp[:, None]), dtype=float)
        out[pos] = val * (vp if out_dim is None else vp[:, None])
    r = np.linalg.norm(u, axis=-1)
    rec_mask = ~pos & (r > 0)
    if rec_mask.any():
        rr = r[rec_mask]
        val = np.asarray(rec(t[rec_mask], y[rec_mask], u[rec_mask] / rr[:, None]), dtype=float)
        out[rec_mask] = val * (rr if out_dim is None else rr[:, None])
    return out


@dataclass(frozen=True)
class RelaxedProblem:
    """Relaxed evaluators built from a :class:`~spacetime_relax.problem.ProblemDef`.

    ``f_tilde`` and ``A_tilde`` take ``t (...)``, ``y (..., n)``, ``v (...)``
    and ``u (..., k)`` and broadcast over the leading axes.  The admissible
    control box is ``0 <= v <= 1``, ``|u| <= 1``.
    """

    base: object
    eps_switch: float = EPS_SWITCH
    control_box: tuple = field(default=((0.0, 1.0), 1.0))

    @property
    def n(self):
        return self.base.state_dim

    @property
    def k(self):
        return self.base.control_dim

    @property
    def T(self):
        return self.base.horizon

    def f_tilde(self, t, y, v, u):
        batch, t, y, v, u = _flatten(t, y, v, u, self.n, self.k)
        return self.f_flat(t, y, v, u).reshape(batch)

    def A_tilde(self, t, y, v, u):
        batch, t, y, v, u = _flatten(t, y, v, u, self.n, self.k)
        return self.A_flat(t, y, v, u).reshape(batch + (self.n,))

    def f_flat(self, t, y, v, u):
        """``f~`` on already flattened inputs ``t (B,)``, ``y (B, n)``, ``v (B,)``, ``u (B, k)``."""
        p = self.base
        return _perspective(p.running_cost, p.recession_cost, t, y, v, u, self.eps_switch, None)

    def A_flat(self, t, y, v, u):
        p = self.base
        if p.is_one_homogeneous:
            return np.asarray(p.dynamics(t, y, u), dtype=float)
        return _perspective(p.dynamics, p.recession_dynamics, t, y, v, u, self.eps_switch, p.n)

    def terminal(self, y):
        return self.base.terminal_cost(y)


def build_relaxed(p, eps_switch=EPS_SWITCH):
    """Relaxed problem for ``p``.

    Callers are expected to have run
    :func:`~spacetime_relax.problem.validate_problem` and
    :func:`~spacetime_relax.problem.check_recession_consistency` first.
    """
    return RelaxedProblem(base=p, eps_switch=eps_switch)


def _sample_points(rp, samples, seed, y_radius):
    rng = np.random.default_rng(seed)
    n, k = rp.n, rp.k
    t = rp.T * rng.random(samples)
    y = rp.base.initial_state + y_radius * rng.uniform(-1, 1, (samples, n))
    v = rng.random(samples)
    v[: samples // 10] = 0.0
    d = rng.standard_normal((samples, k))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    u = d * rng.random(samples)[:, None] ** (1.0 / k)
    return t, y, v, u


@dataclass(frozen=True)
class HomogeneityReport:
    lambdas: tuple
    cost_error: float
    dynamics_error: float
    switch_cost_error: float
    switch_dynamics_error: float
    worst_point: tuple
    passed: bool

    @property
    def max_error(self):
        return max(self.cost_error, self.dynamics_error)


def check_homogeneity(rp, samples=1000, lambdas=(0.1, 0.5, 2.0, 10.0), seed=0, tol=1e-9,
                      switch_tol=1e-6, y_radius=1.0, points=None, raise_on_failure=True):
    """Sampled check of positive 1-homogeneity of ``f~`` and ``A~`` in ``(v, u)``.

    The scaling error is ``max |F(lam z) - lam F(z)| / (1 + lam |F(z)|)``
    over samples and scalings.  Separately the two branches of the
    evaluators are compared at ``v = eps_switch``: a superlinear integrand or
    a wrong recession function shows up there even though each branch is
    homogeneous on its own.

    ``points`` may be given as ``(t, y, v, u)`` arrays instead of sampling.
    """
    if any(lam <= 0 for lam in lambdas):
        raise ValueError("scalings must be positive")
    if points is None:
        t, y, v, u = _sample_points(rp, samples, seed, y_radius)
    else:
        t, y, v, u = (np.asarray(a, dtype=float) for a in points)
        t, v = np.atleast_1d(t), np.atleast_1d(v)
        y, u = np.atleast_2d(y), np.atleast_2d(u)
    f0 = rp.f_tilde(t, y, v, u)
    A0 = rp.A_tilde(t, y, v, u)
    ef = np.zeros_like(f0)
    eA = np.zeros_like(f0)
    for lam in lambdas:
        f1 = rp.f_tilde(t, y, lam * v, lam * u)
        A1 = rp.A_tilde(t, y, lam * v, lam * u)
        ef = np.maximum(ef, np.abs(f1 - lam * f0) / (1.0 + lam * np.abs(f0)))
        eA = np.maximum(eA, np.linalg.norm(A1 - lam * A0, axis=-1)
                        / (1.0 + lam * np.linalg.norm(A0, axis=-1)))

    # branch continuity at the switch, on directions with |u| = 1
    p = rp.base
    d = u / np.maximum(np.linalg.norm(u, axis=-1, keepdims=True), 1e-300)
    d[np.linalg.norm(u, axis=-1) == 0] = np.eye(p.k)[0]
    eps = rp.eps_switch
    # the u = 0 value is subtracted: it contributes an O(eps) offset that is
    # not a mismatch (large for stiff drifts such as -Lambda y)
    zero = np.zeros_like(d)
    fr = eps * (np.asarray(p.running_cost(t, y, d / eps), dtype=float)
                - np.asarray(p.running_cost(t, y, zero), dtype=float))
    fz = np.asarray(p.recession_cost(t, y, d), dtype=float)
    sw_f = np.abs(fr - fz) / (1.0 + np.abs(fz))
    Ar = eps * (np.asarray(p.dynamics(t, y, d / eps), dtype=float)
                - np.asarray(p.dynamics(t, y, zero), dtype=float))
    Az = np.asarray(p.recession_dynamics(t, y, d), dtype=float)
    sw_A = np.linalg.norm(Ar - Az, axis=-1) / (1.0 + np.linalg.norm(Az, axis=-1))

    i = int(np.argmax(np.maximum(ef, eA)))
    scale_ok = max(ef.max(), eA.max()) < tol
    switch_ok = max(sw_f.max(), sw_A.max()) < switch_tol
    report = HomogeneityReport(
        lambdas=tuple(lambdas),
        cost_error=float(ef.max()),
        dynamics_error=float(eA.max()),
        switch_cost_error=float(sw_f.max()),
        switch_dynamics_error=float(sw_A.max()),
        worst_point=(float(t[i]), y[i].tolist(), float(v[i]), u[i].tolist()),
        passed=bool(scale_ok and switch_ok and np.isfinite(fr).all()),
    )
    if not report.passed and raise_on_failure:
        raise HomogeneityViolation(
            f"relaxed evaluators not 1-homogeneous: scaling error f {report.cost_error:.3g}, "
            f"A {report.dynamics_error:.3g}; branch mismatch f {report.switch_cost_error:.3g}, "
            f"A {report.switch_dynamics_error:.3g}"
        )
    return report


@dataclass(frozen=True)
class ConvexityReport:
    u_violation: float
    v_violation: float
    worst_point: tuple
    passed: bool


def check_relaxed_convexity(rp, samples=1000, seed=0, tol=1e-9, y_radius=1.0,
                            raise_on_failure=True):
    """Sampled midpoint convexity of ``f~`` in ``u`` (fixed ``v``) and in ``v`` (fixed ``u``).

    This is not a certificate.  A violation means the convex solver can only
    find local minimizers and the Young-measure path should be used.
    """
    rng = np.random.default_rng(seed)
    t, y, v, u1 = _sample_points(rp, samples, seed, y_radius)
    _, _, v2, u2 = _sample_points(rp, samples, seed + 1, y_radius)
    f = rp.f_tilde
    um = 0.5 * (u1 + u2)
    gap_u = f(t, y, v, um) - 0.5 * (f(t, y, v, u1) + f(t, y, v, u2))
    gap_u /= 1.0 + np.abs(f(t, y, v, um))
    v1 = rng.random(samples)
    vm = 0.5 * (v1 + v2)
    gap_v = f(t, y, vm, u1) - 0.5 * (f(t, y, v1, u1) + f(t, y, v2, u1))
    gap_v /= 1.0 + np.abs(f(t, y, vm, u1))
    iu, iv = int(np.argmax(gap_u)), int(np.argmax(gap_v))
    worst_u, worst_v = max(0.0, float(gap_u[iu])), max(0.0, float(gap_v[iv]))
    if worst_u >= worst_v:
        pt = ("u", float(t[iu]), y[iu].tolist(), float(v[iu]), u1[iu].tolist(), u2[iu].tolist())
    else:
        pt = ("v", float(t[iv]), y[iv].tolist(), float(v1[iv]), float(v2[iv]), u1[iv].tolist())
    report = ConvexityReport(worst_u, worst_v, pt, worst_u <= tol and worst_v <= tol)
    if not report.passed and raise_on_failure:
        raise ConvexityViolation(
            f"relaxed integrand not convex (u: {worst_u:.3g}, v: {worst_v:.3g}); "
            f"use the Young-measure solver"
        )
    return report
