"""Fully relaxed problem over atomic Young measures.

Each cell of the s-grid carries a probability measure with at most ``M``
atoms ``(w_j, v_j, u_j)`` on ``[0, 1] x B_1(0)``.  The state follows the
atom-averaged relaxed right-hand side, the energy is the atom-averaged
relaxed integrand, and chattering between the atoms recovers the measure
from ordinary controls.
"""

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _cells
from ._optim import project_simplex, snap_time_budget
from .errors import DegeneratePath, InfeasibleTimeBudget, MaxItersExceeded, MeanMismatch
from .solver import TranscriptionConfig, default_horizon, run_levels, _levels
from .trajectory import ControlPath, SpaceTimeCurve, _frozen

__all__ = [
    "DiscreteYoungMeasure",
    "GeneralizedCurve",
    "YoungSolution",
    "project_simplex",
    "integrate_measure",
    "fully_relaxed_energy",
    "solve_fully_relaxed",
    "pushforward",
    "recovery_sequence",
    "normalize_measure",
    "normalize_atoms",
]

_MASS_TOL = 1e-12
_BOX_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class DiscreteYoungMeasure:
    """Per-cell atomic measures: ``weights (N, M)``, ``v (N, M)``, ``u (N, M, k)``."""

    s_grid: np.ndarray
    weights: np.ndarray
    v: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        s = _frozen(self.s_grid).reshape(-1)
        w = _frozen(np.atleast_2d(self.weights))
        v = _frozen(np.atleast_2d(self.v))
        u = np.array(self.u, dtype=float)
        if u.ndim == 2:
            u = u[..., None]
        u.setflags(write=False)
        N = s.size - 1
        if N < 1 or w.shape[0] != N or v.shape != w.shape or u.shape[:2] != w.shape:
            raise ValueError("weights, v and u need shapes (N, M), (N, M), (N, M, k)")
        if s[0] != 0.0 or np.any(np.diff(s) <= 0):
            raise ValueError("s_grid must start at 0 and be strictly increasing")
        if np.any(w < 0) or np.any(np.abs(w.sum(axis=1) - 1.0) > 1e3 * _MASS_TOL):
            raise ValueError("every cell needs non-negative weights summing to one")
        if np.any(v < -_BOX_TOL) or np.any(v > 1 + _BOX_TOL):
            raise ValueError("atom time controls must lie in [0, 1]")
        if np.any(np.linalg.norm(u, axis=-1) > 1 + _BOX_TOL):
            raise ValueError("atom state controls must lie in the unit ball")
        object.__setattr__(self, "s_grid", s)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "u", u)

    @classmethod
    def from_path(cls, cp, M=1):
        """Dirac measures at the controls of ``cp``, repeated ``M`` times with equal weight."""
        N = cp.N
        w = np.full((N, M), 1.0 / M)
        v = np.repeat(cp.v[:, None], M, axis=1)
        u = np.repeat(cp.u[:, None, :], M, axis=1)
        return cls(cp.s_grid, w, v, u)

    @classmethod
    def uniform(cls, S, weights, v, u):
        weights = np.atleast_2d(weights)
        return cls(np.linspace(0.0, S, weights.shape[0] + 1), weights, v, u)

    @property
    def N(self):
        return self.weights.shape[0]

    @property
    def M(self):
        return self.weights.shape[1]

    @property
    def k(self):
        return self.u.shape[2]

    @property
    def S(self):
        return float(self.s_grid[-1])

    @property
    def ds(self):
        return np.diff(self.s_grid)

    def atoms(self):
        return self.weights, self.v, self.u

    def mean_time_speed(self):
        return np.einsum("ij,ij->i", self.weights, self.v)

    def time_budget(self):
        return float(np.dot(self.mean_time_speed(), self.ds))

    def to_dict(self):
        return {
            "s_grid": self.s_grid.tolist(),
            "cells": [
                {"atoms": [{"weight": float(self.weights[i, j]), "v": float(self.v[i, j]),
                            "u": self.u[i, j].tolist()} for j in range(self.M)]}
                for i in range(self.N)
            ],
        }

    @classmethod
    def from_dict(cls, data):
        cells = data["cells"]
        w = np.array([[a["weight"] for a in c["atoms"]] for c in cells], dtype=float)
        v = np.array([[a["v"] for a in c["atoms"]] for c in cells], dtype=float)
        u = np.array([[a["u"] for a in c["atoms"]] for c in cells], dtype=float)
        return cls(np.asarray(data["s_grid"], dtype=float), w, v, u)


def normalize_measure(mu):
    """Rescale each cell so that its largest atom has ``max(v, |u|) = 1``.

    This is a reparametrization of the cell; cells whose atoms are all
    ``(0, 0)`` are removed.  Applied only on request.
    """
    scale = np.max(np.maximum(mu.v, np.linalg.norm(mu.u, axis=-1)), axis=1)
    lengths = scale * mu.ds
    keep = lengths > 1e-12 * lengths.sum()
    if not keep.any():
        raise DegeneratePath("measure has no motion")
    sc = scale[keep]
    s = np.concatenate([[0.0], np.cumsum(lengths[keep])])
    v = np.minimum(mu.v[keep] / sc[:, None], 1.0)
    u = mu.u[keep] / sc[:, None, None]
    r = np.linalg.norm(u, axis=-1, keepdims=True)
    u = np.where(r > 1.0, u / np.maximum(r, 1.0), u)
    return DiscreteYoungMeasure(s, mu.weights[keep], v, u)


def normalize_atoms(mu):
    """Rescale every atom to ``max(v, |u|) = 1``.

    Atom ``j`` of a cell has scale ``c_j = max(v_j, |u_j|)``.  In a chattering
    sequence it occupies ``w_j ds`` of the cell; normalizing that piece makes
    it ``c_j w_j ds`` long.  The cell therefore gets length ``sum_j c_j w_j ds``
    and weights proportional to ``c_j w_j``, which keeps the time budget, the
    state increment and (by 1-homogeneity) the energy.  Atoms with ``c_j = 0``
    get weight zero and cells without motion are removed.
    """
    w, v, u = mu.atoms()
    c = np.maximum(v, np.linalg.norm(u, axis=-1))
    mass = np.einsum("ij,ij->i", w, c)
    lengths = mass * mu.ds
    keep = lengths > 1e-12 * lengths.sum()
    if not keep.any():
        raise DegeneratePath("measure has no motion")
    w, v, u, c, mass = w[keep], v[keep], u[keep], c[keep], mass[keep]
    live = (w > 0) & (c > 0)
    cs = np.where(live, c, 1.0)
    nw = np.where(live, w * c, 0.0) / mass[:, None]
    nv = np.where(live, np.minimum(v / cs, 1.0), 0.0)
    nu = np.where(live[..., None], u / cs[..., None], 0.0)
    r = np.linalg.norm(nu, axis=-1, keepdims=True)
    nu = np.where(r > 1.0, nu / np.maximum(r, 1.0), nu)
    s = np.concatenate([[0.0], np.cumsum(lengths[keep])])
    return DiscreteYoungMeasure(s, project_simplex(nw), nv, nu)


def integrate_measure(rp, mu, h_max=None):
    """RK4 on the atom-averaged right-hand side; ``t`` from the averaged ``v``."""
    if h_max is None:
        h_max = _cells.default_h_max(rp, mu.S)
    t, y = _cells.rollout(rp, mu.s_grid, mu.weights, mu.v, mu.u, h_max)
    return SpaceTimeCurve(mu.s_grid, t, y, source=mu,
                          integrator_tag={"scheme": "rk4", "h_max": float(h_max)})


def fully_relaxed_energy(rp, mu, curve=None, h_max=None):
    """Atom-weighted midpoint quadrature of ``f~`` plus ``g(y(S))``."""
    if h_max is None:
        h_max = _cells.default_h_max(rp, mu.S)
    if curve is None:
        curve = integrate_measure(rp, mu, h_max=h_max)
    return _cells.midpoint_energy(rp, mu.s_grid, curve.t_nodes, curve.y_nodes,
                                  mu.weights, mu.v, mu.u, h_max)


@dataclass
class YoungSolution:
    measure: DiscreteYoungMeasure
    curve: SpaceTimeCurve
    energy: float
    constraint_residual: float
    iterations: int
    converged: bool
    trace: list = field(default_factory=list)

    def __iter__(self):
        # unpacks as (measure, curve, energy)
        return iter((self.measure, self.curve, self.energy))


def _initial_atoms(rng, N, M, k, v0, spread):
    """Distinct seeded atoms so that they can separate under the gradient flow."""
    w = np.full((N, M), 1.0 / M)
    v = np.full((N, M), v0)
    d = rng.standard_normal((N, M, k))
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    u = spread * d * rng.random((N, M, 1))
    return w, v, u


def solve_fully_relaxed(rp, cfg=None, M=2, init=None, spread=0.5):
    """Minimize the fully relaxed energy over ``M``-atom measures per cell.

    Projected gradient over atom positions and weights: the weights of each
    cell are projected onto the simplex, the atoms onto ``[0,1] x B_1(0)``.
    ``init`` may be a :class:`DiscreteYoungMeasure` on the coarsest level's
    grid or ``None`` for seeded distinct atoms of radius up to ``spread``.

    Returns a :class:`YoungSolution`, which unpacks as
    ``(measure, curve, energy)``.
    """
    cfg = cfg or TranscriptionConfig()
    if M < 1:
        raise ValueError("atom budget M must be >= 1")
    if M < 2 and not rp.base.is_convex:
        warnings.warn("M = 1 cannot represent oscillation; use M >= 2 for non-convex problems")
    T = rp.T
    S = cfg.S_total if cfg.S_total is not None else default_horizon(rp, cfg.E0, cfg.coercivity_c)
    if S < T:
        raise InfeasibleTimeBudget(f"S_total = {S} < T = {T}: the time budget is unreachable")
    rng = np.random.default_rng(cfg.seed)
    N0 = _levels(cfg.N_cells, cfg.continuation)[0]
    if init is None:
        w, v, u = _initial_atoms(rng, N0, M, rp.k, T / S, spread)
    else:
        if init.N != N0 or init.M != M:
            raise ValueError(f"init must have {N0} cells and {M} atoms")
        w, v, u = (np.array(a, dtype=float) for a in init.atoms())
    run = run_levels(rp, cfg, S, w, v, u, train_weights=M > 1)
    st = run.state
    ds = np.diff(run.grid)
    vv = snap_time_budget(st.w, st.v, ds, T)
    if vv is None:
        raise InfeasibleTimeBudget(f"S_total = {S} < T = {T}")
    mu = DiscreteYoungMeasure(run.grid, project_simplex(st.w), vv, st.u)
    curve = integrate_measure(rp, mu)
    energy = fully_relaxed_energy(rp, mu, curve)
    if not st.converged and cfg.strict:
        raise MaxItersExceeded(f"no convergence within {cfg.max_iters} iterations")
    return YoungSolution(mu, curve, energy, abs(curve.final_time - T), run.iterations,
                         bool(st.converged), run.trace)


@dataclass(frozen=True, eq=False)
class GeneralizedCurve:
    """Nodes ``gamma = (t, y)`` and per-cell velocity measures.

    ``velocities[i, j]`` is the ``(n+1)``-vector of atom ``j`` in cell ``i``,
    averaged over the cell; ``weights`` are the atom weights.
    """

    s_grid: np.ndarray
    nodes: np.ndarray
    weights: np.ndarray
    velocities: np.ndarray

    def mean_velocity(self):
        return np.einsum("ij,ijd->id", self.weights, self.velocities)

    def increments(self):
        return np.diff(self.nodes, axis=0)

    def support_radius(self):
        r = np.linalg.norm(self.velocities, axis=-1)
        return np.where(self.weights > 0, r, 0.0).max(axis=1)


def pushforward(rp, mu, curve, tol=1e-6, h_max=None):
    """Push the control measure forward to velocities ``(v, A~(t, y, v, u))``.

    Velocities are cell averages of ``A~`` along the curve by Simpson's rule
    with ``ceil(ds / h_max)`` panels (midpoint states from RK4 half steps).

    Raises
    ------
    MeanMismatch
        Some cell violates ``|gamma(s_i+1) - gamma(s_i) - ds_i * mean| <= tol * ds_i``.
    """
    if h_max is None:
        h_max = _cells.default_h_max(rp, mu.S)
    w, v, u = mu.atoms()
    N, M = w.shape
    n = rp.n
    ds = mu.ds
    tau = mu.mean_time_speed()
    m = int(_cells.substep_counts(mu.s_grid, h_max).max())
    h = ds / m
    A = rp.A_tilde

    def atom_rhs(t, Y):
        tt = np.broadcast_to(t[:, None], (N, M))
        yy = np.broadcast_to(Y[:, None, :], (N, M, n))
        return A(tt, yy, v, u)

    def mean_rhs(t, Y):
        return np.einsum("ij,ijk->ik", w, atom_rhs(t, Y))

    def rk4(t, Y, hh):
        k1 = mean_rhs(t, Y)
        k2 = mean_rhs(t + 0.5 * hh * tau, Y + 0.5 * hh[:, None] * k1)
        k3 = mean_rhs(t + 0.5 * hh * tau, Y + 0.5 * hh[:, None] * k2)
        k4 = mean_rhs(t + hh * tau, Y + hh[:, None] * k3)
        return Y + (hh / 6.0)[:, None] * (k1 + 2 * k2 + 2 * k3 + k4)

    Y = curve.y_nodes[:-1].copy()
    t0 = curve.t_nodes[:-1]
    acc = np.zeros((N, M, n))
    for j in range(m):
        t = t0 + tau * (j * h)
        Ym = rk4(t, Y, 0.5 * h)
        Ye = rk4(t, Y, h)
        acc += (atom_rhs(t, Y) + 4.0 * atom_rhs(t + 0.5 * h * tau, Ym)
                + atom_rhs(t + h * tau, Ye)) / 6.0
        Y = Ye
    acc /= m
    vel = np.concatenate([v[..., None], acc], axis=-1)
    gc = GeneralizedCurve(curve.s_grid, curve.points(), w, vel)
    err = np.linalg.norm(gc.increments() - ds[:, None] * gc.mean_velocity(), axis=1)
    bad = err > tol * ds
    if bad.any():
        i = int(np.argmax(err / ds))
        raise MeanMismatch(f"cell {i}: increment differs from the mean velocity by "
                           f"{err[i]:.3g} (ds = {ds[i]:.3g})")
    return gc


def recovery_sequence(mu, k):
    """Chattering path: each cell is split into ``k`` rounds, each round into
    sub-cells of lengths proportional to the atom weights, in atom order.
    """
    if k < 1:
        raise ValueError("level k must be >= 1")
    w, v, u = mu.atoms()
    lengths, vs, us = [], [], []
    for i in range(mu.N):
        active = np.flatnonzero(w[i] > 0)
        sub = w[i, active] * mu.ds[i] / k
        for _ in range(k):
            lengths.extend(sub)
            vs.extend(v[i, active])
            us.extend(u[i, active])
    s = np.concatenate([[0.0], np.cumsum(lengths)])
    # the cumulative sum can drift by an ulp from the original nodes
    s[-1] = mu.S
    return ControlPath(s, np.asarray(vs), np.asarray(us).reshape(len(vs), mu.k))
