"""Direct transcription of the space-time relaxed problem.

Controls are piecewise constant on a uniform s-grid over ``[0, S_total]``.
The state is eliminated by single shooting (RK4), the box ``0 <= v <= 1``,
``|u| <= 1`` is handled by projection and the time budget
``sum_i v_i ds_i = T`` by an augmented Lagrangian.  Gradients come from the
discrete adjoint of the shooting map.
"""

import csv
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _cells
from ._optim import minimize, snap_time_budget
from ._shooting import Shooting
from .errors import (BoundViolation, InfeasibleTimeBudget, MaxItersExceeded, NotNormalized)
from .problem import validate_problem
from .trajectory import ControlPath, SpaceTimeCurve, integrate, is_normalized, normalize

__all__ = [
    "PenaltySchedule",
    "TranscriptionConfig",
    "RelaxedSolution",
    "BoundsReport",
    "relaxed_energy",
    "default_horizon",
    "solve",
    "run_levels",
    "finalize_path",
    "check_uniform_bounds",
    "write_trace_csv",
]

_MIN_LEVEL = 16
_COARSE_FTOL_FACTOR = 10.0
# the start near u = 0 sits on a plateau of the |u| kink
_FIRST_LEVEL_MIN_ITERS = 100
# relative time speed below which a cell counts as vertical at finalization
VERTICAL_SNAP = 1e-4
TRACE_COLUMNS = ("level", "outer", "iteration", "objective", "augmented", "residual", "step")


@dataclass(frozen=True)
class PenaltySchedule:
    """Augmented-Lagrangian parameters for the time-budget constraint."""

    rho0: float = 10.0
    growth: float = 10.0
    rho_max: float = 1e8


@dataclass(frozen=True)
class TranscriptionConfig:
    """Settings of the transcribed problem and its optimizer.

    ``S_total=None`` uses ``2T + E0/c`` with the coercivity constant ``c``
    estimated by :func:`~spacetime_relax.problem.validate_problem` (or given
    as ``coercivity_c``).  ``continuation`` solves on grids of ``N/8``,
    ``N/4``, ``N/2`` cells first; splitting cells is exact, so every level
    starts from the previous level's value.
    """

    N_cells: int = 200
    S_total: Optional[float] = None
    E0: float = 1.0
    coercivity_c: Optional[float] = None
    penalty_schedule: PenaltySchedule = field(default_factory=PenaltySchedule)
    max_iters: int = 2000
    inner_max: int = 400
    gradient_mode: str = "adjoint"
    stat_tol: float = 1e-9
    ftol: float = 1e-5
    constraint_tol: float = 1e-6
    substeps: int = 1
    continuation: bool = True
    seed: int = 0
    jitter: float = 1e-3
    snapshot_every: int = 0
    strict: bool = False

    def __post_init__(self):
        if self.N_cells < 8:
            raise ValueError("N_cells must be at least 8")
        if self.gradient_mode not in ("adjoint", "fd"):
            raise ValueError("gradient_mode is 'adjoint' or 'fd'")
        if self.max_iters < 1 or self.substeps < 1:
            raise ValueError("max_iters and substeps must be positive")


@dataclass
class RelaxedSolution:
    """Result of :func:`solve`.

    ``path`` and ``curve`` are the normalized representative; ``raw_path`` is
    the final iterate on the optimization grid after the time-budget snap.
    ``snapshots`` hold raw ``(v, u)`` iterates on their grids.
    """

    path: ControlPath
    curve: SpaceTimeCurve
    energy: float
    constraint_residual: float
    iterations: int
    converged: bool
    local_only: bool = False
    raw_path: Optional[ControlPath] = None
    trace: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)

    @property
    def convergence_flag(self):
        return self.converged


def relaxed_energy(rp, curve, h_max=None):
    """Composite midpoint quadrature of ``f~`` along ``curve`` plus ``g(y(S))``.

    Works for any curve whose ``source`` provides per-cell atoms (a
    :class:`~spacetime_relax.trajectory.ControlPath` or a Young measure).
    """
    if h_max is None:
        h_max = _cells.default_h_max(rp, curve.S)
    w, v, u = curve.source.atoms()
    return _cells.midpoint_energy(rp, curve.s_grid, curve.t_nodes, curve.y_nodes, w, v, u, h_max)


def default_horizon(rp, E0=1.0, coercivity_c=None):
    """``2T + E0/c``: no normalized path with energy below ``E0`` is longer."""
    c = coercivity_c
    if c is None:
        c = validate_problem(rp.base).coercivity_c
    return 2.0 * rp.T + E0 / c


def _levels(N, continuation):
    if not continuation:
        return [N]
    levels = [N]
    while levels[-1] % 2 == 0 and levels[-1] // 2 >= _MIN_LEVEL and len(levels) < 5:
        levels.append(levels[-1] // 2)
    return levels[::-1]


def _counts(rp, ds, substeps):
    counts = np.full(ds.size, substeps)
    hint = getattr(rp.base, "lipschitz_hint", None)
    if hint:
        counts = np.maximum(counts, np.ceil(ds * hint / _cells._RK4_STABLE - 1e-9).astype(int))
    return counts


def _finish(rp, raw, T, h_max):
    path = normalize(raw)
    curve = integrate(rp, path, h_max=h_max)
    energy = relaxed_energy(rp, curve, h_max=h_max)
    return raw, path, curve, energy, abs(curve.final_time - T)


def finalize_path(rp, s_grid, v, u, T=None, h_max=None, vertical_tol=VERTICAL_SNAP):
    """Restore ``sum v ds = T`` exactly, normalize and integrate.

    Cells with ``v < vertical_tol * max(v, |u|)`` are made exactly vertical
    (the time they used moves to the other cells) when that does not raise
    the energy.  The optimizer leaves such cells at tiny positive ``v``
    because the energy is nearly flat in that direction.

    Returns ``(raw_path, path, curve, energy, residual)``.
    """
    T = rp.T if T is None else T
    ds = np.diff(s_grid)
    v = np.asarray(v, dtype=float).reshape(-1, 1)
    u = np.asarray(u, dtype=float).reshape(ds.size, -1)
    w = np.ones_like(v)
    # cells at v = 0 stay vertical unless the budget cannot be met otherwise
    snapped = snap_time_budget(w, v, ds, T, free=v[:, 0] > 0)
    if snapped is None or abs(float(np.dot(snapped[:, 0], ds)) - T) > 1e-12 * max(1.0, T):
        snapped = snap_time_budget(w, v, ds, T)
    if snapped is None:
        raise InfeasibleTimeBudget(f"S_total = {s_grid[-1]} < T = {T}")
    best = _finish(rp, ControlPath(s_grid, snapped[:, 0], u), T, h_max)
    r = np.linalg.norm(u, axis=1)
    near = (v[:, 0] > 0) & (v[:, 0] < vertical_tol * np.maximum(v[:, 0], r))
    if vertical_tol > 0 and near.any():
        v2 = np.where(near[:, None], 0.0, v)
        v2 = snap_time_budget(w, v2, ds, T, free=(v2[:, 0] > 0))
        if v2 is not None and abs(float(np.dot(v2[:, 0], ds)) - T) <= 1e-12 * max(1.0, T):
            cand = _finish(rp, ControlPath(s_grid, v2[:, 0], u), T, h_max)
            if cand[3] <= best[3] + 1e-9 * (1.0 + abs(best[3])):
                best = cand
    return best


@dataclass
class _LevelRun:
    grid: np.ndarray
    state: object
    trace: list
    snapshots: list
    iterations: int


def run_levels(rp, cfg, S, w, v, u, train_weights):
    """Run the optimizer over the continuation levels of ``cfg``.

    ``w``, ``v``, ``u`` are atoms on the coarsest level's grid.  Splitting a
    cell into equal halves leaves the discrete problem unchanged, so each
    level starts from the previous level's value; multiplier and penalty
    carry over too.
    """
    T = rp.T
    levels = _levels(cfg.N_cells, cfg.continuation)
    # coarse levels get most iterations: they are cheap and fix the global shape
    budget = cfg.max_iters
    inv = np.array([1.0 / N ** 2 for N in levels])
    shares = inv / inv.sum()
    ps = cfg.penalty_schedule
    lam, rho = 0.0, ps.rho0
    trace, snapshots = [], []
    iterations = 0
    state = grid = None
    for li, N in enumerate(levels):
        if li > 0:
            factor = N // v.shape[0]
            w, v, u = (np.repeat(a, factor, axis=0) for a in (w, v, u))
        grid = np.linspace(0.0, S, N + 1)
        sh = Shooting(rp, grid, _counts(rp, np.diff(grid), cfg.substeps))
        last = li == len(levels) - 1
        its = budget - iterations if last else max(1, int(budget * shares[li]))
        # coarse levels only need the global shape
        ftol = cfg.ftol if last else _COARSE_FTOL_FACTOR * cfg.ftol
        state = minimize(
            sh, w, v, u, T, train_weights=train_weights, gradient_mode=cfg.gradient_mode,
            max_iters=max(its, 1), inner_max=cfg.inner_max, stat_tol=cfg.stat_tol, ftol=ftol,
            constraint_tol=cfg.constraint_tol, min_iters=_FIRST_LEVEL_MIN_ITERS if li == 0 else 0,
            rho0=rho, rho_growth=ps.growth, rho_max=ps.rho_max,
            snapshot_every=cfg.snapshot_every, lam0=lam,
        )
        lam, rho = state.multiplier, state.penalty
        w, v, u = state.w, state.v, state.u
        trace.extend((li,) + row for row in state.trace)
        snapshots.extend((grid, sw, sv, su) for sw, sv, su in state.snapshots)
        iterations += state.iterations
    return _LevelRun(grid, state, trace, snapshots, iterations)


def solve(rp, cfg=None, init=None):
    """Minimize the relaxed energy over piecewise-constant controls.

    Parameters
    ----------
    rp : RelaxedProblem
    cfg : TranscriptionConfig, optional
    init : ControlPath, optional
        Initial controls on any grid over ``[0, S_total]``; they are sampled
        at the coarsest level's cell midpoints.  The default is
        ``v = T/S_total`` and ``u`` a small seeded perturbation of zero.

    Returns
    -------
    RelaxedSolution
        The energy is recomputed by :func:`relaxed_energy` on the normalized
        representative, independently of the optimizer's own quadrature.

    Raises
    ------
    InfeasibleTimeBudget
        ``S_total < T``.
    MaxItersExceeded
        Only with ``cfg.strict``; otherwise ``converged`` is false.
    """
    cfg = cfg or TranscriptionConfig()
    T = rp.T
    S = cfg.S_total if cfg.S_total is not None else default_horizon(rp, cfg.E0, cfg.coercivity_c)
    if S < T:
        raise InfeasibleTimeBudget(f"S_total = {S} < T = {T}: the time budget is unreachable")
    if S == T:
        warnings.warn("S_total = T forces v = 1 everywhere; no vertical parts are possible")
    local_only = not rp.base.is_convex
    if local_only:
        warnings.warn("problem is not declared convex; the result is a local minimizer only")

    rng = np.random.default_rng(cfg.seed)
    N0 = _levels(cfg.N_cells, cfg.continuation)[0]
    grid0 = np.linspace(0.0, S, N0 + 1)
    if init is None:
        v = np.full((N0, 1), T / S)
        u = np.zeros((N0, 1, rp.k))
    else:
        mid = 0.5 * (grid0[1:] + grid0[:-1]) * init.S / S
        idx = np.clip(np.searchsorted(init.s_grid, mid, side="right") - 1, 0, init.N - 1)
        v = init.v[idx].reshape(N0, 1).copy()
        u = init.u[idx].reshape(N0, 1, rp.k).copy()
    # break the symmetry of |u| at u = 0
    u = u + cfg.jitter * rng.uniform(-1.0, 1.0, u.shape)

    run = run_levels(rp, cfg, S, np.ones((N0, 1)), v, u, train_weights=False)
    grid, state = run.grid, run.state
    v, u = state.v, state.u
    trace, iterations = run.trace, run.iterations
    snapshots = [(g, sv[:, 0].copy(), su[:, 0].copy()) for g, _, sv, su in run.snapshots]

    raw, path, curve, energy, residual = finalize_path(rp, grid, v[:, 0], u[:, 0], T)
    converged = bool(state.converged)
    if not converged and cfg.strict:
        raise MaxItersExceeded(f"no convergence within {cfg.max_iters} iterations "
                               f"(energy {energy:.6g}, residual {state.residual:.3g})")
    return RelaxedSolution(
        path=path, curve=curve, energy=energy, constraint_residual=residual,
        iterations=iterations, converged=converged, local_only=local_only,
        raw_path=raw, trace=trace, snapshots=snapshots,
    )


def write_trace_csv(sol, path):
    """Write the optimizer trace of ``sol`` as CSV."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(TRACE_COLUMNS)
        for row in sol.trace:
            wr.writerow([row[0], row[1], row[2]] + [repr(float(x)) for x in row[3:]])


@dataclass(frozen=True)
class BoundsReport:
    """Measured quantity and limit for each a-priori bound."""

    values: dict
    limits: dict
    passed: bool

    def failures(self):
        return [k for k in self.values if not _holds(k, self.values[k], self.limits[k])]


def _holds(name, value, limit, rtol=1e-6):
    if name == "v_l1":
        return abs(value - limit) <= rtol * max(1.0, limit)
    return value <= limit * (1.0 + rtol) + rtol


def check_uniform_bounds(sol, consts, E0=1.0, T=None, raise_on_failure=True, rtol=1e-6):
    """Check the a-priori bounds of normalized solutions with energy below ``E0``.

    ``sol`` is anything with ``path`` and ``curve`` attributes.  The bounds
    use the growth constant ``C`` and coercivity constant ``c`` of
    ``consts``; a negative lower bound of ``g`` is added to ``E0``.

    Raises
    ------
    NotNormalized
        ``sol.path`` does not satisfy ``max(v, |u|) = 1`` on every cell.
    BoundViolation
        The first failing bound, by name.
    """
    path, curve = sol.path, sol.curve
    if not is_normalized(path):
        raise NotNormalized("bounds apply to normalized solutions only")
    T = curve.final_time if T is None else T
    C, c = consts.growth_C, consts.coercivity_c
    E = E0 - min(0.0, consts.g_lower_bound)
    ds = path.ds
    y0 = float(np.linalg.norm(curve.y_nodes[0]))
    dy = np.linalg.norm(np.diff(curve.y_nodes, axis=0), axis=1) / ds
    values = {
        "u_l1": float(np.dot(np.linalg.norm(path.u, axis=1), ds)),
        "v_l1": float(np.dot(path.v, ds)),
        "t_sup": float(np.abs(curve.t_nodes).max()),
        "y_sup": float(np.linalg.norm(curve.y_nodes, axis=1).max()),
        "t_lip": float(np.max(np.diff(curve.t_nodes) / ds)),
        "y_lip": float(dy.max()),
        "S": path.S,
    }
    limits = {
        "u_l1": E / c + T,
        "v_l1": T,
        "t_sup": 2 * T + E / c,
        "y_sup": 4 * C * T + 2 * C / c * E + y0,
        "t_lip": 1.0,
        "y_lip": 2 * C,
        "S": 2 * T + E / c,
    }
    ok = [_holds(k, values[k], limits[k], rtol) for k in values]
    report = BoundsReport(values, limits, all(ok))
    if not report.passed and raise_on_failure:
        name = report.failures()[0]
        raise BoundViolation(name, values[name], limits[name])
    return report
