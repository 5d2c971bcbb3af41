"""Cell-wise integration engine shared by paths and atomic Young measures.

Controls are constant on each cell of an s-grid and given as atoms: weights
``w (N, M)``, time controls ``v (N, M)`` and state controls ``u (N, M, k)``.
A deterministic path is the case ``M = 1``, ``w = 1``; the weighted sums then
reduce to the single evaluation exactly.
"""

import numpy as np

from .errors import NonFiniteEnergy, NonFiniteState

# fraction of the RK4 stability interval used for stiff linear parts
_RK4_STABLE = 2.5


def default_h_max(rp, S, resolution=2000):
    h = S / resolution
    hint = getattr(rp.base, "lipschitz_hint", None)
    if hint:
        h = min(h, _RK4_STABLE / hint)
    return h


def substep_counts(s_grid, h_max):
    ds = np.diff(s_grid)
    return np.maximum(1, np.ceil(ds / h_max - 1e-9).astype(int))


def rollout(rp, s_grid, w, v, u, h_max):
    """Integrate ``t' = sum w v``, ``y' = sum w A~(t, y, v, u)`` cell by cell.

    ``t`` is piecewise linear and computed exactly; ``y`` uses classical RK4
    with ``ceil(ds / h_max)`` equal substeps per cell.
    """
    N, M = w.shape
    n = rp.n
    y = rp.base.initial_state.astype(float).copy()
    ds = np.diff(s_grid)
    tv = np.einsum("ij,ij->i", w, v)
    t_nodes = np.concatenate([[0.0], np.cumsum(tv * ds)])
    y_nodes = np.empty((N + 1, n))
    y_nodes[0] = y
    counts = substep_counts(s_grid, h_max)
    A = rp.A_flat
    for i in range(N):
        wi, vi, ui = w[i], v[i], u[i]
        m = counts[i]
        h = ds[i] / m
        speed = tv[i]
        t0 = t_nodes[i]
        tt = np.empty(M)
        for j in range(m):
            ts = t0 + speed * (j * h)
            tm = t0 + speed * ((j + 0.5) * h)
            te = t0 + speed * ((j + 1) * h)
            tt.fill(ts)
            k1 = wi @ A(tt, np.broadcast_to(y, (M, n)), vi, ui)
            tt.fill(tm)
            k2 = wi @ A(tt, np.broadcast_to(y + 0.5 * h * k1, (M, n)), vi, ui)
            k3 = wi @ A(tt, np.broadcast_to(y + 0.5 * h * k2, (M, n)), vi, ui)
            tt.fill(te)
            k4 = wi @ A(tt, np.broadcast_to(y + h * k3, (M, n)), vi, ui)
            y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise NonFiniteState(f"state became non-finite in cell {i} (s={s_grid[i]!r})")
        y_nodes[i + 1] = y
    return t_nodes, y_nodes


def midpoint_energy(rp, s_grid, t_nodes, y_nodes, w, v, u, h_max):
    """Composite midpoint rule for ``int sum w f~ ds`` plus the terminal cost.

    Every cell is restarted from its node state and refined into equal
    substeps; midpoint states come from an RK4 half step.  All cells are
    processed together, so the cost is ``max_i ceil(ds_i / h_max)`` batched
    sweeps.
    """
    N, M = w.shape
    n, k = rp.n, rp.k
    ds = np.diff(s_grid)
    m = int(substep_counts(s_grid, h_max).max()) if N else 0
    h = ds / max(m, 1)
    tv = np.einsum("ij,ij->i", w, v)
    A, f = rp.A_tilde, rp.f_tilde
    Y = y_nodes[:-1].copy()
    vv = v
    uu = u
    total = np.zeros(N)

    def rhs(t, Y):
        tt = np.broadcast_to(t[:, None], (N, M))
        yy = np.broadcast_to(Y[:, None, :], (N, M, n))
        return np.einsum("ij,ijk->ik", w, A(tt, yy, vv, uu))

    def rk4(t, Y, hh):
        k1 = rhs(t, Y)
        k2 = rhs(t + 0.5 * hh * tv, Y + 0.5 * hh[:, None] * k1)
        k3 = rhs(t + 0.5 * hh * tv, Y + 0.5 * hh[:, None] * k2)
        k4 = rhs(t + hh * tv, Y + hh[:, None] * k3)
        return Y + (hh / 6.0)[:, None] * (k1 + 2 * k2 + 2 * k3 + k4)

    for j in range(m):
        t = t_nodes[:-1] + tv * (j * h)
        Ymid = rk4(t, Y, 0.5 * h)
        tm = t + tv * (0.5 * h)
        fv = f(np.broadcast_to(tm[:, None], (N, M)),
               np.broadcast_to(Ymid[:, None, :], (N, M, n)), vv, uu)
        total += h * np.einsum("ij,ij->i", w, fv)
        if j + 1 < m:
            Y = rk4(t, Y, h)
    energy = float(total.sum() + rp.terminal(y_nodes[-1]))
    if not np.isfinite(energy):
        raise NonFiniteEnergy("relaxed energy is not finite")
    return energy
