"""Projection of normalized relaxed solutions onto DiPerna-Majda measures.

For a normalized solution with control measures ``mu_s`` let
``rho(s) = sum_j w_j (v_j + |u_j|)``.  Then

* ``sigma`` is the push-forward of ``rho ds`` under ``t(s)``: a density
  ``rho / t'`` on cells where time advances, and an atom of mass
  ``int rho ds`` at every vertical run;
* ``mu_t`` gives atom ``j`` the weight ``w_j (v_j + |u_j|) / rho`` at the
  compactified point ``u_j / v_j`` (finite) or ``u_j / |u_j|`` (a direction
  at infinity when ``v_j = 0``), averaged with weight ``rho ds`` over the
  cells of a vertical run.

These satisfy the generation identity
``int g(t) w(u(t)) (1 + |u(t)|) dt -> int g int w dmu_t dsigma`` along
chattering sequences.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NotNormalized
from .trajectory import EPS_VERT, ControlPath
from .young import DiscreteYoungMeasure

__all__ = [
    "CompactifiedPoint",
    "MuEntry",
    "DpmMeasure",
    "project_dpm",
    "dpm_pairing",
    "classical_pairing",
]

_GAUSS_X, _GAUSS_W = np.polynomial.legendre.leggauss(8)
_NORM_TOL = 1e-9


@dataclass(frozen=True)
class CompactifiedPoint:
    """A point of R^k or a direction at infinity."""

    kind: str
    value: tuple = None
    direction: tuple = None

    def __post_init__(self):
        if self.kind == "finite":
            if self.value is None or self.direction is not None:
                raise ValueError("finite points carry a value and no direction")
        elif self.kind == "infinite":
            if self.direction is None or self.value is not None:
                raise ValueError("infinite points carry a direction and no value")
            if abs(math.sqrt(sum(x * x for x in self.direction)) - 1.0) > 1e-9:
                raise ValueError("directions must be unit vectors")
        else:
            raise ValueError("kind is 'finite' or 'infinite'")

    @classmethod
    def finite(cls, x):
        return cls("finite", value=tuple(float(a) for a in np.ravel(x)))

    @classmethod
    def infinite(cls, d):
        d = np.ravel(np.asarray(d, dtype=float))
        return cls("infinite", direction=tuple(float(a) for a in d / np.linalg.norm(d)))

    @property
    def is_finite(self):
        return self.kind == "finite"

    def coords(self):
        return self.value if self.is_finite else self.direction

    def sort_key(self):
        return (self.kind, self.coords())

    def to_dict(self):
        if self.is_finite:
            return {"kind": "finite", "value": list(self.value)}
        return {"kind": "infinite", "direction": list(self.direction)}


@dataclass(frozen=True)
class MuEntry:
    """``mu_t`` on ``[t0, t1]`` (an a.c. cell) or at ``t0 = t1`` (a sigma atom)."""

    t0: float
    t1: float
    atom: bool
    points: tuple

    @property
    def mass(self):
        return math.fsum(w for _, w in self.points)


@dataclass
class DpmMeasure:
    """``sigma`` on ``[0, T]`` and ``mu_t`` over the compactified control space.

    ``segments`` rows are ``(t0, t1, density)`` of the absolutely continuous
    part, one per non-vertical cell; ``bin_edges``/``bin_density`` resample
    it on a uniform grid.  ``atoms`` lists ``(t, mass)``.
    """

    T: float
    segments: np.ndarray
    atoms: list
    mu: list
    rho: np.ndarray
    bin_edges: np.ndarray
    bin_density: np.ndarray
    _mu_ac: list = field(default_factory=list, repr=False)
    _mu_atoms: list = field(default_factory=list, repr=False)

    def total_mass(self):
        ac = math.fsum((self.segments[:, 1] - self.segments[:, 0]) * self.segments[:, 2])
        return ac + math.fsum(m for _, m in self.atoms)

    def to_dict(self):
        """Canonical form: entries sorted by time, points sorted by kind and coordinates."""
        def entry(e):
            pts = sorted(e.points, key=lambda p: p[0].sort_key())
            d = {"t": e.t0, "atoms": [dict(p.to_dict(), weight=w) for p, w in pts]}
            if not e.atom:
                d["t_end"] = e.t1
            return d

        mu = sorted(self.mu, key=lambda e: (e.t0, e.t1, not e.atom))
        return {
            "T": self.T,
            "sigma": {
                "bins": {"edges": self.bin_edges.tolist(), "density": self.bin_density.tolist()},
                "segments": self.segments.tolist(),
                "atoms": [[t, m] for t, m in sorted(self.atoms)],
            },
            "mu": [entry(e) for e in mu],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def _as_measure(sol):
    if isinstance(sol, ControlPath):
        return DiscreteYoungMeasure.from_path(sol)
    if isinstance(sol, DiscreteYoungMeasure):
        return sol
    raise TypeError("expected a ControlPath or DiscreteYoungMeasure")


def _point(v, u, eps):
    if v >= eps:
        return CompactifiedPoint.finite(u / v)
    return CompactifiedPoint.infinite(u)


def _merge(items):
    """Sum weights of identical compactified points (exactly rounded)."""
    acc = {}
    for p, w in items:
        acc.setdefault(p, []).append(w)
    return tuple((p, math.fsum(ws)) for p, ws in acc.items())


def project_dpm(solution, curve, n_bins=1000, eps_vert=EPS_VERT):
    """DiPerna-Majda measure generated by a normalized relaxed solution.

    Parameters
    ----------
    solution : ControlPath or DiscreteYoungMeasure
        Every atom with positive weight must satisfy ``max(v, |u|) = 1``.
    curve : SpaceTimeCurve
        The integrated curve; only its time nodes are used.

    Raises
    ------
    NotNormalized
    """
    mu = _as_measure(solution)
    w, v, u = mu.atoms()
    r = np.linalg.norm(u, axis=-1)
    scale = np.maximum(v, r)
    active = w > 0
    if np.any(np.abs(scale[active] - 1.0) > _NORM_TOL):
        raise NotNormalized("every atom must satisfy max(v, |u|) = 1")
    ds = mu.ds
    t_nodes = np.asarray(curve.t_nodes, dtype=float)
    tau = mu.mean_time_speed()
    atom_w = w * (v + r)
    rho = atom_w.sum(axis=1)
    vertical = tau < eps_vert
    T = float(t_nodes[-1])

    segments, mu_ac = [], []
    for i in np.flatnonzero(~vertical):
        segments.append((t_nodes[i], t_nodes[i + 1], rho[i] / tau[i]))
        pts = [(_point(v[i, j], u[i, j], eps_vert), atom_w[i, j] / rho[i])
               for j in range(mu.M) if active[i, j]]
        mu_ac.append(MuEntry(float(t_nodes[i]), float(t_nodes[i + 1]), False, _merge(pts)))

    atoms, mu_atoms = [], []
    i = 0
    N = mu.N
    while i < N:
        if not vertical[i]:
            i += 1
            continue
        j = i
        while j < N and vertical[j]:
            j += 1
        cells = range(i, j)
        mass = math.fsum(rho[c] * ds[c] for c in cells)
        pts = [(_point(v[c, a], u[c, a], eps_vert), atom_w[c, a] * ds[c] / mass)
               for c in cells for a in range(mu.M) if active[c, a]]
        t = float(t_nodes[i])
        atoms.append((t, mass))
        mu_atoms.append(MuEntry(t, t, True, _merge(pts)))
        i = j

    seg = np.array(segments, dtype=float).reshape(-1, 3)
    edges = np.linspace(0.0, T, n_bins + 1) if T > 0 else np.zeros(n_bins + 1)
    # cumulative a.c. mass is continuous in t, so interpolation handles flat runs
    F = np.concatenate([[0.0], np.cumsum(np.where(vertical, 0.0, rho * ds))])
    if T > 0:
        Fe = np.interp(edges, t_nodes, F)
        density = np.diff(Fe) / np.diff(edges)
    else:
        density = np.zeros(n_bins)
    return DpmMeasure(T, seg, atoms, mu_ac + mu_atoms, rho, edges, density, mu_ac, mu_atoms)


def _w_mean(points, w_fin, w_inf):
    total = 0.0
    for p, wt in points:
        x = np.asarray(p.coords(), dtype=float)[None, :]
        val = w_fin(x) if p.is_finite else w_inf(x)
        total += wt * float(np.ravel(val)[0])
    return total


def _segment_integral(g, t0, t1):
    x = 0.5 * (t1 - t0) * _GAUSS_X + 0.5 * (t1 + t0)
    return 0.5 * (t1 - t0) * float(np.dot(_GAUSS_W, np.asarray(g(x), dtype=float)))


def dpm_pairing(dpm, g, w_fin, w_inf):
    """``int g(t) int w dmu_t dsigma(t)``.

    ``g`` maps an array of times to values; ``w_fin`` and ``w_inf`` map
    arrays of shape ``(P, k)`` (points, resp. unit directions) to ``(P,)``.
    The a.c. part is integrated cell by cell with 8-point Gauss-Legendre.
    """
    total = []
    for (t0, t1, dens), e in zip(dpm.segments, dpm._mu_ac):
        total.append(dens * _segment_integral(g, t0, t1) * _w_mean(e.points, w_fin, w_inf))
    for (t, mass), e in zip(dpm.atoms, dpm._mu_atoms):
        total.append(mass * float(np.ravel(g(np.array([t])))[0]) * _w_mean(e.points, w_fin, w_inf))
    return math.fsum(total)


def classical_pairing(path, g, w_fin, w_inf, eps_vert=EPS_VERT):
    """``int g(t) w(u(t)) (1 + |u(t)|) dt`` for the path, written in ``s``.

    On cells with ``v > 0`` the integrand is ``g(t(s)) w(u/v) (v + |u|)``,
    which is the classical one after the change of variables ``dt = v ds``;
    vertical cells contribute ``g(t) w_inf(u/|u|) |u| ds``.
    """
    ds = path.ds
    t_nodes = np.concatenate([[0.0], np.cumsum(path.v * ds)])
    r = np.linalg.norm(path.u, axis=1)
    total = []
    for i in range(path.N):
        if path.v[i] >= eps_vert:
            val = float(np.ravel(w_fin((path.u[i] / path.v[i])[None, :]))[0])
            weight = path.v[i] + r[i]
        elif r[i] > 0:
            val = float(np.ravel(w_inf((path.u[i] / r[i])[None, :]))[0])
            weight = r[i]
        else:
            continue
        # t is linear in s on the cell; integrate g(t(s)) ds by Gauss in s
        x = 0.5 * ds[i] * (_GAUSS_X + 1.0)
        ts = t_nodes[i] + path.v[i] * x
        gi = 0.5 * ds[i] * float(np.dot(_GAUSS_W, np.asarray(g(ts), dtype=float)))
        total.append(gi * val * weight)
    return math.fsum(total)
