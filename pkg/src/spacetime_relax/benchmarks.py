"""Built-in benchmark problems with analytic reference data.

``updown``
    Scalar control driving ``y1' = |u|``, ``y2' = u`` with cost
    ``((t-1)^2 + 1)|u| + y2^2`` and terminal cost ``(y1(T) - 1)^2``.  The
    relaxed minimum is 3/4, attained by a vertical up-and-down excursion at
    ``t = 1``; no classical control attains it.

``heat``
    Heat equation on the circle, truncated to ``m`` Fourier modes (mean
    excluded) in the orthonormal basis ``sqrt(2) sin(2 pi j x)``,
    ``sqrt(2) cos(2 pi j x)``.  Cost is the L2 norm of the control plus the
    squared L2 distance of ``y(T)`` to a target.

``double_well``
    Non-convex running cost ``w(t) dist(u, {-1, 1}) + K y^2`` with ``y' = u``.
    Oscillating between the wells is free in the limit; any single control
    value per cell pays either the well distance or the state penalty.

``order_swap``
    Dynamics whose vertical increments depend on the state, so the order in
    which a concentration visits its directions changes the end point.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .problem import ProblemDef
from .trajectory import ControlPath

__all__ = [
    "UpdownSpec",
    "build_updown",
    "updown_reference_path",
    "updown_waypoints",
    "UPDOWN_OPTIMUM",
    "HeatSpectralSpec",
    "build_heat_spectral",
    "heat_eigenvalues",
    "heat_optimum",
    "heat_reference_path",
    "heat_semigroup",
    "heat_reconstruct",
    "heat_l2_norm_quadrature",
    "duhamel_sine",
    "modified_duhamel",
    "build_double_well",
    "build_order_swap",
    "BUILTINS",
]

UPDOWN_OPTIMUM = 0.75


@dataclass(frozen=True)
class UpdownSpec:
    T: float = 2.0

    def __post_init__(self):
        if not self.T > 1:
            raise ValueError("updown needs T > 1")


def _weight(t):
    return (t - 1.0) ** 2 + 1.0


def build_updown(spec=None):
    spec = spec or UpdownSpec()

    def f(t, y, u):
        return _weight(t) * np.abs(u[..., 0]) + y[..., 1] ** 2

    def A(t, y, u):
        out = np.empty(np.shape(u)[:-1] + (2,))
        out[..., 0] = np.abs(u[..., 0])
        out[..., 1] = u[..., 0]
        return out

    def g(y):
        return (y[..., 0] - 1.0) ** 2

    def f_inf(t, y, d):
        return _weight(t) * np.abs(d[..., 0])

    return ProblemDef(
        state_dim=2, control_dim=1, horizon=spec.T, initial_state=np.zeros(2),
        running_cost=f, dynamics=A, terminal_cost=g,
        recession_cost=f_inf, recession_dynamics=A,
        is_one_homogeneous=True, is_convex=True, name="updown",
    )


def updown_reference_path(spec=None):
    """The four-segment relaxed minimizer: wait, up, down, wait."""
    T = (spec or UpdownSpec()).T
    return ControlPath(
        np.array([0.0, 1.0, 1.25, 1.5, T + 0.5]),
        np.array([1.0, 0.0, 0.0, 1.0]),
        np.array([[0.0], [1.0], [-1.0], [0.0]]),
    )


def updown_waypoints(spec=None):
    """Corners ``(t, y1, y2)`` of the minimizing space-time curve."""
    T = (spec or UpdownSpec()).T
    return np.array([[0, 0, 0], [1, 0, 0], [1, 0.25, 0.25], [1, 0.5, 0], [T, 0.5, 0]], float)


@dataclass(frozen=True)
class HeatSpectralSpec:
    """``mode_count`` Fourier modes, coefficients ordered (sin_1, cos_1, sin_2, ...).

    The default target is ``y_f = sin(2 pi x)``, whose coefficient on
    ``sqrt(2) sin(2 pi x)`` is ``1/sqrt(2)``.
    """

    mode_count: int = 4
    T: float = 1.0
    target_coefficients: Optional[tuple] = None

    def __post_init__(self):
        if self.mode_count < 1:
            raise ValueError("mode_count must be >= 1")
        if self.target_coefficients is None:
            c = np.zeros(2 * self.mode_count)
            c[0] = 1.0 / np.sqrt(2.0)
            object.__setattr__(self, "target_coefficients", tuple(c))
        elif len(self.target_coefficients) != 2 * self.mode_count:
            raise ValueError("need one sine and one cosine coefficient per mode")

    @property
    def target(self):
        return np.asarray(self.target_coefficients, dtype=float)


def heat_eigenvalues(m):
    """Diagonal of the negative Laplacian on modes ``1..m``, each twice."""
    return np.repeat((2.0 * np.pi * np.arange(1, m + 1)) ** 2, 2)


def build_heat_spectral(spec=None):
    spec = spec or HeatSpectralSpec()
    lam = heat_eigenvalues(spec.mode_count)
    target = spec.target
    n = 2 * spec.mode_count

    def f(t, y, u):
        return np.linalg.norm(u, axis=-1)

    def A(t, y, u):
        return -lam * y + u

    def g(y):
        return np.sum((y - target) ** 2, axis=-1)

    def f_inf(t, y, d):
        return np.linalg.norm(d, axis=-1)

    def A_inf(t, y, d):
        return np.broadcast_to(d, np.broadcast_shapes(d.shape, y.shape)).copy()

    return ProblemDef(
        state_dim=n, control_dim=n, horizon=spec.T, initial_state=np.zeros(n),
        running_cost=f, dynamics=A, terminal_cost=g,
        recession_cost=f_inf, recession_dynamics=A_inf,
        is_one_homogeneous=False, is_convex=True, lipschitz_hint=float(lam.max()),
        name=f"heat{spec.mode_count}",
    )


def heat_optimum(spec=None):
    """Optimal scaling ``alpha`` of ``y_T = alpha y_f`` and the relaxed optimum.

    Minimizes ``alpha |y_f| + (1 - alpha)^2 |y_f|^2`` over ``alpha >= 0``.
    """
    spec = spec or HeatSpectralSpec()
    r = float(np.linalg.norm(spec.target))
    if r == 0.0:
        return 0.0, 0.0
    alpha = max(0.0, 1.0 - 1.0 / (2.0 * r))
    return alpha, alpha * r + (1.0 - alpha) ** 2 * r ** 2


def heat_reference_path(spec=None, alpha=None):
    """Stay at rest until ``T``, then jump vertically to ``alpha y_f``."""
    spec = spec or HeatSpectralSpec()
    if alpha is None:
        alpha, _ = heat_optimum(spec)
    yT = alpha * spec.target
    L = float(np.linalg.norm(yT))
    n = yT.size
    if L == 0.0:
        return ControlPath(np.array([0.0, spec.T]), np.ones(1), np.zeros((1, n)))
    return ControlPath(
        np.array([0.0, spec.T, spec.T + L]),
        np.array([1.0, 0.0]),
        np.vstack([np.zeros(n), yT / L]),
    )


def heat_semigroup(spec, t, y):
    """``exp(t Laplacian) y`` on the retained modes."""
    return np.exp(-heat_eigenvalues(spec.mode_count) * t) * np.asarray(y, dtype=float)


def heat_reconstruct(coeffs, x):
    """Evaluate the trigonometric polynomial with the given coefficients at ``x``."""
    coeffs = np.asarray(coeffs, dtype=float)
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for j in range(coeffs.size // 2):
        arg = 2.0 * np.pi * (j + 1) * x
        out += np.sqrt(2.0) * (coeffs[2 * j] * np.sin(arg) + coeffs[2 * j + 1] * np.cos(arg))
    return out


def heat_l2_norm_quadrature(coeffs, points=256):
    """L2 norm on the circle by the periodic trapezoid rule (exact for low modes)."""
    x = np.arange(points) / points
    vals = heat_reconstruct(coeffs, x)
    return float(np.sqrt(np.mean(vals ** 2)))


def duhamel_sine(spec, t, amplitude, omega):
    """Closed-form ``int_0^t S(t - r) amplitude sin(omega r) dr`` per mode."""
    lam = heat_eigenvalues(spec.mode_count)
    a = np.asarray(amplitude, dtype=float)
    num = lam * np.sin(omega * t) - omega * np.cos(omega * t) + omega * np.exp(-lam * t)
    return a * num / (lam ** 2 + omega ** 2)


def modified_duhamel(spec, cp):
    """``y(S) = int_0^S S(t(S) - t(r)) u(r) dr`` for a piecewise-constant path.

    Only valid for the heat problem; serves as an integrator oracle.
    """
    lam = heat_eigenvalues(spec.mode_count)
    ds = cp.ds
    t_nodes = np.concatenate([[0.0], np.cumsum(cp.v * ds)])
    tS = t_nodes[-1]
    y = np.zeros(lam.size)
    for i in range(cp.N):
        rate = lam * cp.v[i]
        x = rate * ds[i]
        with np.errstate(divide="ignore", invalid="ignore"):
            inner = np.where(x > 1e-12, -np.expm1(-x) / np.where(rate > 0, rate, 1.0), ds[i])
        y += np.exp(-lam * (tS - t_nodes[i + 1])) * inner * cp.u[i]
    return y


def build_double_well(K=50.0, T=1.0):
    def dist(u):
        return np.abs(np.abs(u[..., 0]) - 1.0)

    def f(t, y, u):
        return _weight(t) * dist(u) + K * y[..., 0] ** 2

    def A(t, y, u):
        return np.asarray(u, dtype=float) + 0.0 * y

    def g(y):
        return np.zeros(np.shape(y)[:-1])

    def f_inf(t, y, d):
        return _weight(t) * np.abs(d[..., 0])

    return ProblemDef(
        state_dim=1, control_dim=1, horizon=T, initial_state=np.zeros(1),
        running_cost=f, dynamics=A, terminal_cost=g,
        recession_cost=f_inf, recession_dynamics=A,
        is_one_homogeneous=True, is_convex=False, name="double_well",
    )


def build_order_swap(T=1.0):
    """``y1' = u``, ``y2' = y1 |u|``: the second state integrates the first
    along the path, so an up-then-down excursion and a down-then-up one end
    at different ``y2``.  The growth of ``A`` in ``y`` is proportional to
    ``|u|``, which the uniform Lipschitz assumption excludes; state-dependent
    vertical motion is impossible without that.
    """

    def A(t, y, u):
        a = np.abs(u[..., 0])
        return np.stack([u[..., 0] + 0.0 * y[..., 0], y[..., 0] * a], axis=-1)

    def f(t, y, u):
        return np.abs(u[..., 0]) + y[..., 1] ** 2

    def g(y):
        return np.zeros(np.shape(y)[:-1])

    def f_inf(t, y, d):
        return np.abs(d[..., 0]) + 0.0 * y[..., 0]

    return ProblemDef(
        state_dim=2, control_dim=1, horizon=T, initial_state=np.zeros(2),
        running_cost=f, dynamics=A, terminal_cost=g,
        recession_cost=f_inf, recession_dynamics=A,
        is_one_homogeneous=True, is_convex=True, name="order_swap",
    )


BUILTINS = {
    "updown": lambda **kw: build_updown(UpdownSpec(**kw)),
    "heat": lambda **kw: build_heat_spectral(HeatSpectralSpec(**kw)),
    "double_well": lambda **kw: build_double_well(**kw),
}
