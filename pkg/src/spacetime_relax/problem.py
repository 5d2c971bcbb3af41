"""User problems and the standing assumptions they must satisfy.

A problem is the classical optimal control problem

    minimize  int_0^T f(t, y, u) dt + g(y(T)),   y' = A(t, y, u),  y(0) = y0

with controls that are only coercive in L^1.  Callbacks are *vectorized*:
``t`` has shape ``(...)``, ``y`` has shape ``(..., n)`` and ``u`` has shape
``(..., k)``; ``f`` and ``g`` return shape ``(...)`` and ``A`` returns
``(..., n)``.  Scalar-only callbacks can be adapted with
``ProblemDef(..., vectorized=False)``.

Recession functions ``f_inf(t, y, d)`` and ``A_inf(t, y, d)`` (the limits of
``f(t, y, lam*d)/lam`` for unit directions ``d``) are required inputs; the
library only cross-checks them numerically.
"""

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import CoercivityViolation, NonFiniteCallback, RecessionMismatch

__all__ = [
    "ProblemDef",
    "SamplerConfig",
    "AssumptionConstants",
    "Witness",
    "validate_problem",
    "check_recession_consistency",
    "RecessionReport",
    "shift_control",
    "classical_energy",
]


def _loop_wrap(fun, out_dim):
    """Adapt a scalar callback ``fun(t, y, u)`` to the vectorized convention."""

    def wrapped(t, y, u=None):
        t = np.asarray(t, dtype=float)
        y = np.asarray(y, dtype=float)
        batch = t.shape
        yy = y.reshape((-1, y.shape[-1]))
        tt = t.reshape(-1)
        if u is None:
            out = [fun(yy[i]) for i in range(yy.shape[0])]
        else:
            u = np.asarray(u, dtype=float)
            uu = u.reshape((-1, u.shape[-1]))
            out = [fun(tt[i], yy[i], uu[i]) for i in range(tt.shape[0])]
        out = np.asarray(out, dtype=float)
        if out_dim is None:
            return out.reshape(batch)
        return out.reshape(batch + (out_dim,))

    return wrapped


def _loop_wrap_terminal(fun):
    def wrapped(y):
        y = np.asarray(y, dtype=float)
        yy = y.reshape((-1, y.shape[-1]))
        out = np.asarray([fun(yy[i]) for i in range(yy.shape[0])], dtype=float)
        return out.reshape(y.shape[:-1])

    return wrapped


@dataclass(frozen=True)
class ProblemDef:
    """An L^1-coercive optimal control problem.

    Parameters
    ----------
    state_dim, control_dim : int
        ``n`` and ``k``.
    horizon : float
        Final time ``T > 0``.
    initial_state : array_like
        ``y0``, shape ``(n,)``.
    running_cost, dynamics, terminal_cost : callable
        ``f(t, y, u)``, ``A(t, y, u)``, ``g(y)``.
    recession_cost, recession_dynamics : callable
        ``f_inf(t, y, d)``, ``A_inf(t, y, d)`` for unit directions ``d``.
    is_one_homogeneous : bool
        ``A(t, y, lam*u) = lam*A(t, y, u)`` for ``lam >= 0``.  Enables the
        fast path ``A~(t, y, v, u) = A(t, y, u)``.
    is_convex : bool
        User declaration that ``f(t, y, .)`` is convex with minimum at 0.
    lipschitz_hint : float, optional
        Known bound on the Lipschitz constant of ``A`` in ``y``; used to keep
        explicit Runge-Kutta steps inside the stability region.
    """

    state_dim: int
    control_dim: int
    horizon: float
    initial_state: np.ndarray
    running_cost: Callable
    dynamics: Callable
    terminal_cost: Callable
    recession_cost: Callable
    recession_dynamics: Callable
    is_one_homogeneous: bool = False
    is_convex: bool = True
    lipschitz_hint: Optional[float] = None
    name: str = "problem"
    vectorized: bool = True

    def __post_init__(self):
        if int(self.state_dim) < 1 or int(self.control_dim) < 1:
            raise ValueError("state_dim and control_dim must be >= 1")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        y0 = np.array(self.initial_state, dtype=float).reshape(-1)
        if y0.shape != (self.state_dim,):
            raise ValueError(f"initial_state must have shape ({self.state_dim},)")
        y0.setflags(write=False)
        object.__setattr__(self, "initial_state", y0)
        if not self.vectorized:
            n = self.state_dim
            object.__setattr__(self, "running_cost", _loop_wrap(self.running_cost, None))
            object.__setattr__(self, "dynamics", _loop_wrap(self.dynamics, n))
            object.__setattr__(self, "terminal_cost", _loop_wrap_terminal(self.terminal_cost))
            object.__setattr__(self, "recession_cost", _loop_wrap(self.recession_cost, None))
            object.__setattr__(self, "recession_dynamics", _loop_wrap(self.recession_dynamics, n))
            object.__setattr__(self, "vectorized", True)

    @property
    def n(self):
        return self.state_dim

    @property
    def k(self):
        return self.control_dim

    @property
    def T(self):
        return self.horizon


def shift_control(p, u_star):
    """Return the problem with every control ``u`` replaced by ``u + u_star``.

    Used to move the minimizer of ``f(t, y, .)`` to the origin.  Recession
    functions are unchanged since a constant shift vanishes in the limit.
    """
    u_star = np.asarray(u_star, dtype=float).reshape(p.control_dim)
    f, A = p.running_cost, p.dynamics
    return replace(
        p,
        running_cost=lambda t, y, u: f(t, y, np.asarray(u) + u_star),
        dynamics=lambda t, y, u: A(t, y, np.asarray(u) + u_star),
        is_one_homogeneous=False,
        name=p.name + "-shifted",
    )


@dataclass
class SamplerConfig:
    n_samples: int = 2000
    seed: int = 0
    y_radius: Optional[float] = None
    u_max: float = 1e4
    E0: float = 1.0
    c_min: float = 1e-6
    rel_tol: float = 1e-6


@dataclass(frozen=True)
class Witness:
    """The sample that determined (or violated) a constant."""

    value: float
    t: float
    y: tuple
    u: tuple


@dataclass(frozen=True)
class AssumptionConstants:
    lipschitz_L: float
    growth_C: float
    coercivity_c: float
    g_lower_bound: float
    samples_used: int
    confidence_report: dict = field(default_factory=dict)
    y_radius: float = 0.0

    def state_bound(self, T, E0, y0_norm):
        """The a-priori sup bound on the state for energies below ``E0``."""
        C, c = self.growth_C, self.coercivity_c
        return 4 * C * T + 2 * C / c * E0 + y0_norm


def _ball(rng, m, dim, radius):
    d = rng.standard_normal((m, dim))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = radius * rng.random(m) ** (1.0 / dim)
    return d * r[:, None]


def _directions(rng, m, dim):
    d = rng.standard_normal((m, dim))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def _witness(value, t, y, u):
    return Witness(float(value), float(t), tuple(map(float, y)), tuple(map(float, u)))


def _check_finite(name, values, t, y, u):
    bad = ~np.isfinite(values)
    if values.ndim > 1:
        bad = bad.any(axis=tuple(range(1, values.ndim)))
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise NonFiniteCallback(
            f"{name} returned a non-finite value at t={t[i]!r}, y={y[i].tolist()}, "
            f"u={u[i].tolist() if u is not None else None}"
        )


def _estimate(p, cfg, radius, rng):
    n, k, T, m = p.n, p.k, p.T, cfg.n_samples
    y0 = p.initial_state
    t = T * rng.random(m)
    y = y0 + _ball(rng, m, n, radius)

    # controls: half uniform in a moderate ball, half on log-spaced rays
    d = _directions(rng, m, k)
    mags = np.empty(m)
    half = m // 2
    mags[:half] = 2.0 * rng.random(half)
    mags[half:] = np.logspace(-2, np.log10(cfg.u_max), m - half)
    u = d * mags[:, None]

    fv = np.asarray(p.running_cost(t, y, u), dtype=float)
    Av = np.asarray(p.dynamics(t, y, u), dtype=float)
    gv = np.asarray(p.terminal_cost(y), dtype=float)
    _check_finite("running_cost", fv, t, y, u)
    _check_finite("dynamics", Av, t, y, u)
    _check_finite("terminal_cost", gv, t, y, u)

    report = {}

    # growth: |A| <= C(|u| + 1)
    ratio_C = np.linalg.norm(Av, axis=-1) / (mags + 1.0)
    iC = int(np.argmax(ratio_C))
    C = float(ratio_C[iC])
    report["growth_C"] = _witness(C, t[iC], y[iC], u[iC])

    # coercivity: f >= c(|u| - 1); upper constraints from |u| > 1,
    # lower constraints from |u| < 1 where f is negative
    big = mags > 1.0
    ratio_c = fv[big] / (mags[big] - 1.0)
    ic = int(np.argmin(ratio_c))
    c = float(ratio_c[ic])
    idx = np.flatnonzero(big)[ic]
    report["coercivity_c"] = _witness(c, t[idx], y[idx], u[idx])
    if not c > cfg.c_min:
        raise CoercivityViolation(
            f"f(t,y,u) < c(|u|-1) for every c > {cfg.c_min:g}; worst sample t={t[idx]!r}, "
            f"y={y[idx].tolist()}, u={u[idx].tolist()}, f={fv[idx]!r}"
        )
    small = ~big
    lower = np.where(fv[small] < 0, -fv[small] / (1.0 - mags[small] + 1e-300), -np.inf)
    if lower.size and lower.max() > c * (1 + cfg.rel_tol):
        j = np.flatnonzero(small)[int(np.argmax(lower))]
        raise CoercivityViolation(
            f"no coercivity constant fits: sample t={t[j]!r}, y={y[j].tolist()}, "
            f"u={u[j].tolist()} needs c >= {lower.max():g} but large-|u| samples allow only {c:g}"
        )

    # Lipschitz in y: random pairs plus coordinate pairs (exact for diagonal linear maps)
    deltas = radius * 10.0 ** rng.uniform(-3, 0, m)
    dy = _directions(rng, m, n) * deltas[:, None]
    A2 = np.asarray(p.dynamics(t, y + dy, u), dtype=float)
    lip = np.linalg.norm(A2 - Av, axis=-1) / deltas
    best = (float(lip.max()), int(np.argmax(lip)), None)
    h = 1e-3 * max(1.0, radius)
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        Aj = np.asarray(p.dynamics(t, y + e, u), dtype=float)
        lj = np.linalg.norm(Aj - Av, axis=-1) / h
        if lj.max() > best[0]:
            best = (float(lj.max()), int(np.argmax(lj)), j)
    L, iL, _ = best
    report["lipschitz_L"] = _witness(L, t[iL], y[iL], u[iL])

    ig = int(np.argmin(gv))
    report["g_lower_bound"] = _witness(gv[ig], 0.0, y[ig], np.zeros(k))
    samples = m * (3 + n) + m
    return L, C, c, float(gv[ig]), report, samples


def validate_problem(p, sampler_config=None):
    """Estimate the standing-assumption constants of ``p`` by sampling.

    Returns an :class:`AssumptionConstants` with estimates of the Lipschitz
    constant ``L`` of ``A`` in ``y``, the growth constant ``C`` in
    ``|A| <= C(|u|+1)``, the coercivity constant ``c`` in ``f >= c(|u|-1)``
    and a lower bound for ``g``.  When no ``y_radius`` is configured a first
    pass on a unit ball around ``y0`` estimates ``C`` and ``c``; the second
    pass samples the ball of radius ``4CT + (2C/c)E0 + |y0|``, which contains
    every state reachable with energy below ``E0``.

    Raises
    ------
    NonFiniteCallback
        A callback returned NaN or inf at a sample.
    CoercivityViolation
        No positive ``c`` is compatible with the samples.
    """
    cfg = sampler_config or SamplerConfig()
    rng = np.random.default_rng(cfg.seed)
    y0n = float(np.linalg.norm(p.initial_state))
    used = 0
    if cfg.y_radius is None:
        _, C, c, _, _, s = _estimate(p, cfg, 1.0, rng)
        used += s
        radius = max(1.0, 4 * C * p.T + 2 * C / c * cfg.E0 + y0n)
    else:
        radius = float(cfg.y_radius)
    L, C, c, gmin, report, s = _estimate(p, cfg, radius, rng)
    used += s
    return AssumptionConstants(
        lipschitz_L=L,
        growth_C=C,
        coercivity_c=c,
        g_lower_bound=gmin,
        samples_used=used,
        confidence_report=report,
        y_radius=radius,
    )


@dataclass(frozen=True)
class RecessionReport:
    lambdas: tuple
    cost_discrepancy: tuple
    dynamics_discrepancy: tuple
    cost_extrapolated: float
    dynamics_extrapolated: float
    worst: float
    worst_sample: Optional[Witness]
    passed: bool


def check_recession_consistency(p, lambda_schedule=(10.0, 1e2, 1e3, 1e4), n_samples=200,
                                seed=0, y_radius=1.0, tol=1e-6, raise_on_failure=True):
    """Cross-check the user recession functions against the growth of f and A.

    For sampled ``(t, y, d)`` with ``|d| = 1`` the discrepancies
    ``|f(t,y,lam d)/lam - f_inf(t,y,d)|`` (and the same for ``A``) must not grow
    along the schedule.  The limit is estimated by Richardson extrapolation of
    the last two schedule points (first-order in ``1/lam``) and has to match
    the recession value to ``tol`` relative.

    Returns a :class:`RecessionReport`; raises :class:`RecessionMismatch` on
    failure unless ``raise_on_failure`` is false.
    """
    rng = np.random.default_rng(seed)
    lams = np.asarray(sorted(lambda_schedule), dtype=float)
    if lams.size < 2:
        raise ValueError("need at least two scalings")
    t = p.T * rng.random(n_samples)
    y = p.initial_state + _ball(rng, n_samples, p.n, y_radius)
    d = _directions(rng, n_samples, p.k)
    finf = np.asarray(p.recession_cost(t, y, d), dtype=float)
    Ainf = np.asarray(p.recession_dynamics(t, y, d), dtype=float)

    rf, rA = [], []
    for lam in lams:
        rf.append(np.asarray(p.running_cost(t, y, lam * d), dtype=float) / lam)
        rA.append(np.asarray(p.dynamics(t, y, lam * d), dtype=float) / lam)
    rf, rA = np.array(rf), np.array(rA)
    df = np.abs(rf - finf)
    dA = np.linalg.norm(rA - Ainf, axis=-1)
    worst_f, worst_A = df.max(axis=1), dA.max(axis=1)

    l1, l2 = lams[-2], lams[-1]
    ext_f = (l2 * rf[-1] - l1 * rf[-2]) / (l2 - l1)
    ext_A = (l2 * rA[-1] - l1 * rA[-2]) / (l2 - l1)
    ef = np.abs(ext_f - finf) / (1.0 + np.abs(finf))
    eA = np.linalg.norm(ext_A - Ainf, axis=-1) / (1.0 + np.linalg.norm(Ainf, axis=-1))

    # monotone non-increasing beyond the first point, up to tolerance
    slack_f = tol * (1.0 + np.abs(finf).max())
    slack_A = tol * (1.0 + np.linalg.norm(Ainf, axis=-1).max())
    mono = bool(np.all(np.diff(worst_f) <= slack_f) and np.all(np.diff(worst_A) <= slack_A))
    worst = float(max(ef.max(), eA.max()))
    i = int(np.argmax(np.maximum(ef, eA)))
    passed = mono and worst < tol and np.all(np.isfinite(rf)) and np.all(np.isfinite(rA))
    w = _witness(worst, t[i], y[i], d[i])
    report = RecessionReport(
        lambdas=tuple(lams.tolist()),
        cost_discrepancy=tuple(worst_f.tolist()),
        dynamics_discrepancy=tuple(worst_A.tolist()),
        cost_extrapolated=float(ef.max()),
        dynamics_extrapolated=float(eA.max()),
        worst=worst,
        worst_sample=w,
        passed=bool(passed),
    )
    if not passed and raise_on_failure:
        raise RecessionMismatch(
            f"recession functions inconsistent with f/A limits (worst relative discrepancy "
            f"{worst:.3g}, monotone={mono}) at t={w.t!r}, y={list(w.y)}, direction={list(w.u)}"
        )
    return report


def classical_energy(p, t_grid, u_cells, h_max=None):
    """Energy of a classical piecewise-constant control, computed in time ``t``.

    The state is integrated with RK4 and the running cost with the composite
    midpoint rule on the same substeps.  This deliberately does not go
    through the relaxed integrand.

    Returns ``(energy, y_nodes)``.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    u_cells = np.asarray(u_cells, dtype=float).reshape(len(t_grid) - 1, p.k)
    if h_max is None:
        h_max = (t_grid[-1] - t_grid[0]) / 2000.0
    A, f = p.dynamics, p.running_cost
    y = p.initial_state.copy()
    nodes = [y.copy()]
    total = 0.0

    def rk4(t, y, u, h):
        k1 = A(t, y, u)
        k2 = A(t + h / 2, y + h / 2 * k1, u)
        k3 = A(t + h / 2, y + h / 2 * k2, u)
        k4 = A(t + h, y + h * k3, u)
        return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)

    for i in range(len(t_grid) - 1):
        dt = t_grid[i + 1] - t_grid[i]
        m = max(1, int(np.ceil(dt / h_max - 1e-9)))
        h = dt / m
        u = u_cells[i]
        for j in range(m):
            t = t_grid[i] + j * h
            ymid = rk4(t, y, u, h / 2)
            total += h * float(f(np.float64(t + h / 2), ymid, u))
            y = rk4(t, y, u, h)
        nodes.append(y.copy())
    total += float(p.terminal_cost(y))
    return total, np.array(nodes)
