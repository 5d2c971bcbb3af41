"""Space-time curves: integration, normalization, reparametrization, traces.

A :class:`ControlPath` holds piecewise-constant controls ``(v, u)`` on an
s-grid; :func:`integrate` turns it into a :class:`SpaceTimeCurve` of nodes
``(t(s_i), y(s_i))``.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _cells
from .errors import DegeneratePath, NonMonotonePhi
from .relaxation import build_relaxed

__all__ = [
    "EPS_VERT",
    "ControlPath",
    "SpaceTimeCurve",
    "PiecewiseLinearMap",
    "GraphProjection",
    "integrate",
    "normalize",
    "normalize_curve",
    "is_normalized",
    "reparametrize",
    "embed_classical",
    "project_to_graph",
    "trace_hausdorff",
    "vertical_runs",
]

# time-speed below which a cell counts as vertical
EPS_VERT = 1e-10
# cells shorter than this fraction of the total length are dropped
_MERGE_FRAC = 1e-12


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ControlPath:
    """Piecewise-constant controls on ``0 = s_0 < ... < s_N = S``.

    ``v`` has shape ``(N,)`` and ``u`` has shape ``(N, k)``.
    """

    s_grid: np.ndarray
    v: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        s = _frozen(self.s_grid).reshape(-1)
        v = _frozen(self.v).reshape(-1)
        u = np.array(self.u, dtype=float)
        if u.ndim == 1:
            u = u.reshape(-1, 1)
        u.setflags(write=False)
        if s.size < 2 or v.shape[0] != s.size - 1 or u.shape[0] != s.size - 1:
            raise ValueError("grid has N+1 nodes, controls need N cells")
        if s[0] != 0.0 or np.any(np.diff(s) <= 0):
            raise ValueError("s_grid must start at 0 and be strictly increasing")
        if np.any(v < 0):
            raise ValueError("time control v must be non-negative")
        object.__setattr__(self, "s_grid", s)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "u", u)

    @classmethod
    def uniform(cls, S, v, u):
        v = np.asarray(v, dtype=float)
        N = v.shape[0]
        return cls(np.linspace(0.0, S, N + 1), v, u)

    @property
    def N(self):
        return self.v.shape[0]

    @property
    def k(self):
        return self.u.shape[1]

    @property
    def S(self):
        return float(self.s_grid[-1])

    @property
    def ds(self):
        return np.diff(self.s_grid)

    def time_budget(self):
        """``sum_i v_i ds_i``, the final time this path reaches."""
        return float(np.dot(self.v, self.ds))

    def atoms(self):
        """The path as single-atom arrays ``(w, v, u)`` for the cell engine."""
        N = self.N
        return np.ones((N, 1)), self.v.reshape(N, 1), self.u.reshape(N, 1, self.k)

    def allclose(self, other, atol=0.0):
        return (
            self.N == other.N
            and np.allclose(self.s_grid, other.s_grid, rtol=0, atol=atol)
            and np.allclose(self.v, other.v, rtol=0, atol=atol)
            and np.allclose(self.u, other.u, rtol=0, atol=atol)
        )

    def __eq__(self, other):
        if not isinstance(other, ControlPath):
            return NotImplemented
        return (
            np.array_equal(self.s_grid, other.s_grid)
            and np.array_equal(self.v, other.v)
            and np.array_equal(self.u, other.u)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class SpaceTimeCurve:
    """Nodes of an integrated relaxed trajectory."""

    s_grid: np.ndarray
    t_nodes: np.ndarray
    y_nodes: np.ndarray
    source: object = None
    integrator_tag: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "s_grid", _frozen(self.s_grid))
        object.__setattr__(self, "t_nodes", _frozen(self.t_nodes))
        object.__setattr__(self, "y_nodes", _frozen(np.atleast_2d(self.y_nodes)))

    @property
    def S(self):
        return float(self.s_grid[-1])

    @property
    def final_time(self):
        return float(self.t_nodes[-1])

    @property
    def final_state(self):
        return self.y_nodes[-1]

    def points(self):
        """Nodes as rows ``(t, y_1, ..., y_n)``."""
        return np.column_stack([self.t_nodes, self.y_nodes])

    def time_speed(self):
        """Per-cell ``dt/ds``."""
        return np.diff(self.t_nodes) / np.diff(self.s_grid)


def integrate(rp, cp, h_max=None):
    """Solve the relaxed ODE for the controls of ``cp``.

    Fixed-step RK4 with ``ceil(ds_i / h_max)`` substeps per cell; ``t`` is
    exact.  The returned curve ends at ``t(S) = cp.time_budget()``; checking
    it against ``T`` is up to the caller.

    Raises :class:`~spacetime_relax.errors.NonFiniteState` if the state
    blows up.
    """
    if h_max is None:
        h_max = _cells.default_h_max(rp, cp.S)
    w, v, u = cp.atoms()
    t, y = _cells.rollout(rp, cp.s_grid, w, v, u, h_max)
    return SpaceTimeCurve(cp.s_grid, t, y, source=cp,
                          integrator_tag={"scheme": "rk4", "h_max": float(h_max)})


def _scale(cp):
    return np.maximum(cp.v, np.linalg.norm(cp.u, axis=1))


def is_normalized(cp, tol=1e-9):
    return bool(np.all(np.abs(_scale(cp) - 1.0) <= tol))


def _ball_clip(u):
    """Radial projection onto the closed unit ball, exact in floating point."""
    u = np.array(u, dtype=float)
    r = np.linalg.norm(u, axis=-1)
    big = r > 1.0
    if big.any():
        u[big] = u[big] / r[big, None]
        r2 = np.linalg.norm(u[big], axis=-1)
        over = r2 > 1.0
        if over.any():
            idx = np.flatnonzero(big)[over]
            u[idx] *= np.nextafter(1.0, 0.0)
    return u


def normalize(cp, tol=1e-12):
    """Reparametrize ``cp`` so that ``max(v, |u|) = 1`` on every cell.

    The new cell lengths are ``max(v_i, |u_i|) ds_i``; cells with
    ``(v, u) = (0, 0)`` carry no motion and are removed.  A path that is
    already normalized is returned unchanged, so the operation is idempotent.
    """
    scale = _scale(cp)
    if np.all(np.abs(scale - 1.0) <= tol):
        return cp
    lengths = scale * cp.ds
    total = lengths.sum()
    if not total > 0:
        raise DegeneratePath("path has no motion (max(v,|u|) = 0 everywhere)")
    keep = lengths > _MERGE_FRAC * total
    sc = scale[keep]
    v = np.minimum(cp.v[keep] / sc, 1.0)
    u = _ball_clip(cp.u[keep] / sc[:, None])
    s = np.concatenate([[0.0], np.cumsum(lengths[keep])])
    return ControlPath(s, v, u)


def normalize_curve(rp, curve, h_max=None):
    """Normalize the path behind ``curve`` and integrate it again."""
    cp = normalize(curve.source)
    return cp, integrate(rp, cp, h_max=h_max)


@dataclass(frozen=True)
class PiecewiseLinearMap:
    """Continuous piecewise-linear map through ``(x_knots[j], y_knots[j])``."""

    x_knots: np.ndarray
    y_knots: np.ndarray

    def __post_init__(self):
        x = _frozen(self.x_knots)
        y = _frozen(self.y_knots)
        if x.shape != y.shape or x.size < 2 or np.any(np.diff(x) <= 0):
            raise ValueError("x_knots must be strictly increasing with matching y_knots")
        object.__setattr__(self, "x_knots", x)
        object.__setattr__(self, "y_knots", y)

    def __call__(self, x):
        return np.interp(x, self.x_knots, self.y_knots)

    @property
    def slopes(self):
        return np.diff(self.y_knots) / np.diff(self.x_knots)

    @classmethod
    def random_monotone(cls, rng, S, pieces=5, S_hat=None, flat_prob=0.0):
        """A random surjective nondecreasing map ``[0, S_hat] -> [0, S]``."""
        S_hat = S if S_hat is None else S_hat
        x = np.concatenate([[0.0], np.sort(rng.uniform(0, S_hat, pieces - 1)), [S_hat]])
        inc = rng.uniform(0.2, 1.0, pieces)
        if flat_prob:
            inc[rng.random(pieces) < flat_prob] = 0.0
            if not inc.any():
                inc[0] = 1.0
        y = np.concatenate([[0.0], np.cumsum(inc)])
        y *= S / y[-1]
        y[-1] = S
        return cls(x, y)


def reparametrize(cp, phi):
    """Pull the controls of ``cp`` back along ``phi : [0, S_hat] -> [0, S]``.

    The result has controls ``(v o phi * phi', u o phi * phi')`` on a grid
    that contains the knots of ``phi`` and the preimages of the nodes of
    ``cp``.  Flat pieces of ``phi`` become ``(0, 0)`` cells.  The integrated
    curve has the same trace, and by 1-homogeneity the same relaxed energy.
    """
    if not isinstance(phi, PiecewiseLinearMap):
        phi = PiecewiseLinearMap(*phi)
    xk, yk = phi.x_knots, phi.y_knots
    S = cp.S
    if np.any(np.diff(yk) < 0):
        raise NonMonotonePhi("phi must be nondecreasing")
    if abs(yk[0]) > 1e-12 * S or abs(yk[-1] - S) > 1e-12 * S:
        raise NonMonotonePhi("phi must map onto [0, S]")
    slopes = phi.slopes
    pts = [xk]
    inner = cp.s_grid[1:-1]
    for j in np.flatnonzero(slopes > 0):
        sel = inner[(inner > yk[j]) & (inner < yk[j + 1])]
        pts.append(xk[j] + (sel - yk[j]) / slopes[j])
    grid = np.unique(np.concatenate(pts))
    S_hat = grid[-1]
    widths = np.diff(grid)
    keep = widths > _MERGE_FRAC * S_hat
    # endpoints survive; interior tiny cells are merged into their left neighbour
    grid = np.concatenate([[grid[0]], grid[1:][keep]])
    grid[-1] = S_hat
    mid = 0.5 * (grid[:-1] + grid[1:])
    seg = np.clip(np.searchsorted(xk, mid, side="right") - 1, 0, len(slopes) - 1)
    d = slopes[seg]
    s_mid = np.clip(phi(mid), 0.0, S)
    cell = np.clip(np.searchsorted(cp.s_grid, s_mid, side="right") - 1, 0, cp.N - 1)
    v = cp.v[cell] * d
    u = cp.u[cell] * d[:, None]
    return ControlPath(grid - grid[0], v, u)


def embed_classical(p, t_grid, u_cells, h_max=None):
    """Associated relaxed solution of a classical control: ``t(s) = s``, ``v = 1``.

    Returns ``(ControlPath, SpaceTimeCurve)``.  The path is not normalized
    when ``|u| > 1``.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    u_cells = np.asarray(u_cells, dtype=float).reshape(len(t_grid) - 1, p.control_dim)
    cp = ControlPath(t_grid - t_grid[0], np.ones(len(t_grid) - 1), u_cells)
    return cp, integrate(build_relaxed(p), cp, h_max=h_max)


def vertical_runs(curve, eps=EPS_VERT):
    """Maximal runs ``(start, stop)`` of consecutive cells with ``dt/ds < eps``."""
    vert = curve.time_speed() < eps
    runs = []
    i, N = 0, vert.size
    while i < N:
        if vert[i]:
            j = i
            while j < N and vert[j]:
                j += 1
            runs.append((i, j))
            i = j
        else:
            i += 1
    return runs


@dataclass(frozen=True)
class GraphProjection:
    """Curve ``y(t)`` and the measure ``dy`` of a space-time curve.

    ``ac_segments`` rows are ``(t0, t1, density...)``; ``atoms`` is a list of
    ``(t, jump_vector)``.  ``y_samples`` is right-continuous at atoms.
    """

    t_samples: np.ndarray
    y_samples: np.ndarray
    ac_segments: np.ndarray
    atoms: list

    def total_variation_vector(self):
        ac = (self.ac_segments[:, 1] - self.ac_segments[:, 0])[:, None] * self.ac_segments[:, 2:]
        jumps = sum((a[1] for a in self.atoms), np.zeros(self.ac_segments.shape[1] - 2))
        return ac.sum(axis=0) + jumps


def project_to_graph(curve, t_grid):
    """Project a finished space-time curve onto ``(y, dy)`` over ``[0, T]``.

    Where ``t`` increases, ``y(t)`` is interpolated and ``dy`` has density
    ``dy/dt``.  Every vertical run (a constant-time stretch) becomes one atom
    of ``dy`` carrying the run's total increment.
    """
    t_nodes, y_nodes = curve.t_nodes, curve.y_nodes
    n = y_nodes.shape[1]
    runs = vertical_runs(curve)
    atoms = [(float(t_nodes[a]), y_nodes[b] - y_nodes[a]) for a, b in runs]
    vert = np.zeros(len(t_nodes) - 1, dtype=bool)
    for a, b in runs:
        vert[a:b] = True
    inc = np.flatnonzero(~vert)
    t0, t1 = t_nodes[inc], t_nodes[inc + 1]
    dens = (y_nodes[inc + 1] - y_nodes[inc]) / (t1 - t0)[:, None]
    ac = np.column_stack([t0, t1, dens]) if inc.size else np.zeros((0, 2 + n))

    t_grid = np.asarray(t_grid, dtype=float)
    ys = np.empty((t_grid.size, n))
    if inc.size == 0:
        ys[:] = y_nodes[-1]
    else:
        j = np.clip(np.searchsorted(t0, t_grid, side="right") - 1, 0, inc.size - 1)
        lam = np.clip((t_grid - t0[j]) / (t1[j] - t0[j]), 0.0, 1.0)
        ys = y_nodes[inc[j]] + lam[:, None] * (y_nodes[inc[j] + 1] - y_nodes[inc[j]])
        # at and after a trailing jump the right limit applies
        for (ta, vec), (a, b) in zip(atoms, runs):
            if b == len(t_nodes) - 1:
                ys[t_grid >= ta] = y_nodes[-1]
    return GraphProjection(t_grid, ys, ac, atoms)


def _point_polyline_dist(P, Q):
    """Distance from each row of ``P`` to the polyline through the rows of ``Q``."""
    if Q.shape[0] == 1:
        return np.linalg.norm(P - Q[0], axis=1)
    a, b = Q[:-1], Q[1:]
    ab = b - a
    L2 = np.einsum("ij,ij->i", ab, ab)
    best = np.full(P.shape[0], np.inf)
    chunk = max(1, 2_000_000 // max(1, a.shape[0]))
    for s in range(0, P.shape[0], chunk):
        p = P[s:s + chunk]
        ap = p[:, None, :] - a[None, :, :]
        lam = np.einsum("pij,ij->pi", ap, ab) / np.where(L2 > 0, L2, 1.0)
        lam = np.clip(np.where(L2 > 0, lam, 0.0), 0.0, 1.0)
        d = ap - lam[..., None] * ab[None]
        best[s:s + chunk] = np.sqrt(np.einsum("pij,pij->pi", d, d).min(axis=1))
    return best


def trace_hausdorff(curve_a, curve_b):
    """Hausdorff distance between the node polylines of two curves in ``(t, y)``."""
    A, B = curve_a.points(), curve_b.points()
    return float(max(_point_polyline_dist(A, B).max(), _point_polyline_dist(B, A).max()))
