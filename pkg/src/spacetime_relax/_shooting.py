"""Single shooting with a discrete RK4 adjoint.

The decision variables are per-cell atoms ``(w, v, u)`` with shapes
``(N, M)``, ``(N, M)`` and ``(N, M, k)``.  The discrete objective is

    J = z_J(S) + g(y(S)),

where ``z = (y, z_J)`` is integrated by classical RK4 with the running cost
as an extra component, and ``t`` is the exact piecewise-linear time.  The
gradient is the exact derivative of this discrete map, with callback
Jacobians taken by batched finite differences at the stored stage points.
"""

import numpy as np

from .errors import NonFiniteState

# stage nodes and output weights of classical RK4
_C = np.array([0.0, 0.5, 0.5, 1.0])
_FD_STEP = 1e-6


class Shooting:
    """Discretized relaxed problem on a fixed grid with ``counts[i]`` RK4 steps in cell ``i``."""

    def __init__(self, rp, s_grid, counts):
        self.rp = rp
        self.s_grid = np.asarray(s_grid, dtype=float)
        self.ds = np.diff(self.s_grid)
        self.counts = np.asarray(counts, dtype=int)
        self.N = self.ds.size
        self.n, self.k = rp.n, rp.k
        self.step_cell = np.repeat(np.arange(self.N), self.counts)
        self.step_h = np.repeat(self.ds / self.counts, self.counts)
        starts = np.concatenate([[0], np.cumsum(self.counts)[:-1]])
        self.step_pos = np.arange(self.step_cell.size) - np.repeat(starts, self.counts)

    # --- forward -----------------------------------------------------------

    def _times(self, w, v):
        tau = np.einsum("ij,ij->i", w, v)
        t_nodes = np.concatenate([[0.0], np.cumsum(tau * self.ds)])
        return tau, t_nodes

    def _rhs(self, tt, y, wi, vi, ui, M):
        rp = self.rp
        yy = y[None, :] if M == 1 else np.broadcast_to(y, (M, self.n))
        return wi @ rp.A_flat(tt, yy, vi, ui), wi @ rp.f_flat(tt, yy, vi, ui)

    def forward(self, w, v, u, tape=False):
        """Return ``(J, t_S, y_S)`` and, with ``tape=True``, the stage record."""
        N, M = w.shape
        n = self.n
        tau, t_nodes = self._times(w, v)
        y = self.rp.base.initial_state.astype(float).copy()
        cost = 0.0
        nsteps = self.step_cell.size
        if tape:
            st_t = np.empty((nsteps, 4))
            st_y = np.empty((nsteps, 4, n))
        tt = np.empty(M)
        for p in range(nsteps):
            i = self.step_cell[p]
            h = self.step_h[p]
            wi, vi, ui = w[i], v[i], u[i]
            t0 = t_nodes[i] + tau[i] * h * self.step_pos[p]
            ts = t0 + tau[i] * h * _C
            tt.fill(ts[0])
            a1, f1 = self._rhs(tt, y, wi, vi, ui, M)
            y2 = y + 0.5 * h * a1
            tt.fill(ts[1])
            a2, f2 = self._rhs(tt, y2, wi, vi, ui, M)
            y3 = y + 0.5 * h * a2
            a3, f3 = self._rhs(tt, y3, wi, vi, ui, M)
            y4 = y + h * a3
            tt.fill(ts[3])
            a4, f4 = self._rhs(tt, y4, wi, vi, ui, M)
            if tape:
                st_t[p] = ts
                st_y[p, 0], st_y[p, 1], st_y[p, 2], st_y[p, 3] = y, y2, y3, y4
            y = y + (h / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
            cost += (h / 6.0) * (f1 + 2.0 * f2 + 2.0 * f3 + f4)
        if not (np.all(np.isfinite(y)) and np.isfinite(cost)):
            raise NonFiniteState("state or cost became non-finite during shooting")
        J = float(cost + self.rp.terminal(y))
        if tape:
            return J, float(t_nodes[-1]), y, (tau, t_nodes, st_t, st_y)
        return J, float(t_nodes[-1]), y

    # --- derivatives ---------------------------------------------------------

    def _G(self, t, y, v, u):
        rp = self.rp
        return np.concatenate([rp.A_flat(t, y, v, u), rp.f_flat(t, y, v, u)[:, None]], axis=1)

    def _stage_jacobians(self, w, v, u, st_t, st_y):
        """Callback values and derivatives at every stage point and atom."""
        N, M = w.shape
        n, k = self.n, self.k
        P = st_t.size
        cell = np.repeat(self.step_cell, 4)
        B = P * M
        t = np.repeat(st_t.reshape(-1), M)
        y = np.repeat(st_y.reshape(P, n), M, axis=0)
        vv = v[cell].reshape(B)
        uu = u[cell].reshape(B, k)
        G = self._G
        G0 = G(t, y, vv, uu)

        def central(fun_p, fun_m, step):
            return (fun_p - fun_m) / (2.0 * step)

        dt_step = _FD_STEP * np.maximum(1.0, np.abs(t))
        dG_t = (G(t + dt_step, y, vv, uu) - G(t - dt_step, y, vv, uu)) / (2.0 * dt_step)[:, None]

        dG_y = np.empty((B, n + 1, n))
        for l in range(n):
            e = _FD_STEP * max(1.0, float(np.abs(y[:, l]).max()))
            yp, ym = y.copy(), y.copy()
            yp[:, l] += e
            ym[:, l] -= e
            dG_y[:, :, l] = central(G(t, yp, vv, uu), G(t, ym, vv, uu), e)

        # one-sided in v next to the recession branch
        vp = vv + _FD_STEP
        vm = np.where(vv >= 2.0 * _FD_STEP, vv - _FD_STEP, vv)
        dG_v = (G(t, y, vp, uu) - G(t, y, vm, uu)) / (vp - vm)[:, None]

        dG_u = np.empty((B, n + 1, k))
        for l in range(k):
            up, um = uu.copy(), uu.copy()
            up[:, l] += _FD_STEP
            um[:, l] -= _FD_STEP
            dG_u[:, :, l] = central(G(t, y, vv, up), G(t, y, vv, um), _FD_STEP)

        shp = (P, M)
        return (G0.reshape(shp + (n + 1,)), dG_t.reshape(shp + (n + 1,)),
                dG_y.reshape(shp + (n + 1, n)), dG_v.reshape(shp + (n + 1,)),
                dG_u.reshape(shp + (n + 1, k)))

    def _terminal_gradient(self, y):
        g = self.rp.terminal
        n = self.n
        e = _FD_STEP * max(1.0, float(np.abs(y).max()))
        Y = np.repeat(y[None], 2 * n, axis=0)
        idx = np.arange(n)
        Y[idx, idx] += e
        Y[n + idx, idx] -= e
        vals = np.asarray(g(Y), dtype=float)
        return (vals[:n] - vals[n:]) / (2.0 * e)

    def gradient(self, w, v, u):
        """``(J, t_S, dJ/dw, dJ/dv, dJ/du)`` by the discrete adjoint."""
        N, M = w.shape
        n = self.n
        J, tS, yS, (tau, t_nodes, st_t, st_y) = self.forward(w, v, u, tape=True)
        G0, dG_t, dG_y, dG_v, dG_u = self._stage_jacobians(w, v, u, st_t, st_y)
        cell = np.repeat(self.step_cell, 4)
        W = w[cell]                                        # (P, M)
        Jy = np.einsum("pm,pmon->pon", W, dG_y)            # (P, n+1, n)
        nsteps = self.step_cell.size
        Jy = Jy.reshape(nsteps, 4, n + 1, n)

        lam = self._terminal_gradient(yS)
        MU = np.empty((nsteps, 4, n + 1))
        Lp = np.empty(n + 1)
        for p in range(nsteps - 1, -1, -1):
            h = self.step_h[p]
            Jp = Jy[p]
            Lp[:n] = lam
            Lp[n] = 1.0
            m4 = (h / 6.0) * Lp
            b4 = m4 @ Jp[3]
            m3 = (h / 3.0) * Lp
            m3[:n] += h * b4
            b3 = m3 @ Jp[2]
            m2 = (h / 3.0) * Lp
            m2[:n] += 0.5 * h * b3
            b2 = m2 @ Jp[1]
            m1 = (h / 6.0) * Lp
            m1[:n] += 0.5 * h * b2
            b1 = m1 @ Jp[0]
            MU[p, 0], MU[p, 1], MU[p, 2], MU[p, 3] = m1, m2, m3, m4
            lam = lam + b1 + b2 + b3 + b4
        MU = MU.reshape(-1, n + 1)

        gw_st = np.einsum("pmo,po->pm", G0, MU)
        gv_st = W * np.einsum("pmo,po->pm", dG_v, MU)
        gu_st = W[..., None] * np.einsum("pmok,po->pmk", dG_u, MU)
        gt_st = np.einsum("pm,pmo,po->p", W, dG_t, MU)

        gw = np.zeros((N, M))
        gv = np.zeros((N, M))
        gu = np.zeros((N, M, self.k))
        np.add.at(gw, cell, gw_st)
        np.add.at(gv, cell, gv_st)
        np.add.at(gu, cell, gu_st)

        # stage time = t_node[i] + tau_i * offset, t_node[i] = sum_{l<i} tau_l ds_l
        offset = ((self.step_pos[:, None] + _C[None, :]) * self.step_h[:, None]).reshape(-1)
        d_tau = np.bincount(cell, weights=gt_st * offset, minlength=N)
        per_cell = np.bincount(cell, weights=gt_st, minlength=N)
        later = np.concatenate([np.cumsum(per_cell[::-1])[::-1][1:], [0.0]])
        d_tau += self.ds * later
        gv += w * d_tau[:, None]
        gw += v * d_tau[:, None]
        return J, tS, gw, gv, gu

    def gradient_fd(self, w, v, u, step=1e-7, train_weights=True):
        """Whole-objective central differences; slow, for checks and tiny grids."""
        J, tS, _ = self.forward(w, v, u)
        grads = []
        arrays = [w, v, u] if train_weights else [v, u]
        for which, arr in enumerate(arrays):
            g = np.zeros_like(arr)
            flat = g.reshape(-1)
            for idx in range(arr.size):
                out = []
                for sgn in (1.0, -1.0):
                    a = arr.copy()
                    a.reshape(-1)[idx] += sgn * step
                    args = [w, v, u]
                    args[which + (0 if train_weights else 1)] = a
                    out.append(self.forward(*args)[0])
                flat[idx] = (out[0] - out[1]) / (2.0 * step)
            grads.append(g)
        if not train_weights:
            grads.insert(0, np.zeros_like(w))
        return (J, tS, *grads)
