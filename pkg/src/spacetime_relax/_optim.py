"""Projected spectral gradient with an augmented Lagrangian for ``t(S) = T``.

Shared by the path solver (one atom per cell, fixed unit weight) and the
Young-measure solver (trainable weights on the per-cell simplex).
"""

from dataclasses import dataclass, field

import numpy as np

from .trajectory import _ball_clip

_ARMIJO = 1e-4
_MAX_BACKTRACK = 40


def project_simplex(w):
    """Euclidean projection of each row of ``w`` onto the probability simplex.

    Sorting method: for a row ``x`` sorted decreasingly as ``z``, the
    threshold is ``(sum_{j<=r} z_j - 1) / r`` for the largest ``r`` with
    ``z_r`` above it.
    """
    w = np.atleast_2d(np.asarray(w, dtype=float))
    M = w.shape[1]
    z = -np.sort(-w, axis=1)
    css = np.cumsum(z, axis=1) - 1.0
    r = np.arange(1, M + 1)
    cond = z - css / r > 0
    rho = M - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(w.shape[0]), rho] / (rho + 1)
    out = np.maximum(w - theta[:, None], 0.0)
    # the kept entries already sum to one up to rounding; fix the last ulp
    out /= out.sum(axis=1, keepdims=True)
    return out


def project_box(v, u):
    return np.clip(v, 0.0, 1.0), _ball_clip(u)


def snap_time_budget(w, v, ds, T, tol=1e-14, max_iter=200, free=None):
    """Shift ``v`` per cell by ``theta ds_i`` (clipped to [0, 1]) so that
    ``sum_i ds_i sum_j w_ij v_ij = T``.  Only cells in the boolean mask
    ``free`` move, if given.

    For a single atom this is the Euclidean projection onto the box
    intersected with the budget hyperplane.  Bisection on ``theta``; the
    budget is monotone in ``theta``.
    """
    shift = ds if free is None else np.where(free, ds, 0.0)

    def budget(theta):
        vv = np.clip(v + theta * shift[:, None], 0.0, 1.0)
        return float(np.dot(np.einsum("ij,ij->i", w, vv), ds)), vv

    S = float(ds.sum())
    if T > S * (1 + 1e-12):
        return None
    lo, hi = -1.0 / ds.min(), 1.0 / ds.min()
    b, vv = budget(0.0)
    if abs(b - T) <= tol * max(1.0, T):
        return vv
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        b, vv = budget(mid)
        if abs(b - T) <= tol * max(1.0, T):
            break
        if b < T:
            lo = mid
        else:
            hi = mid
    return vv


@dataclass
class ALState:
    w: np.ndarray
    v: np.ndarray
    u: np.ndarray
    objective: float
    residual: float
    iterations: int
    converged: bool
    trace: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    multiplier: float = 0.0
    penalty: float = 0.0


def minimize(shooting, w, v, u, T, *, train_weights=False, gradient_mode="adjoint",
             max_iters=2000, inner_max=400, stat_tol=1e-9, constraint_tol=1e-6,
             ftol=1e-7, window=10, min_iters=0, rho0=10.0, rho_growth=10.0, rho_max=1e8, snapshot_every=0,
             lam0=0.0):
    """Minimize the shooting objective over the control box subject to the time budget."""
    ds = shooting.ds
    N, M = w.shape
    lam, rho = lam0, rho0

    def evaluate(w, v, u, grad):
        if grad:
            if gradient_mode == "adjoint":
                J, tS, gw, gv, gu = shooting.gradient(w, v, u)
            else:
                J, tS, gw, gv, gu = shooting.gradient_fd(w, v, u, train_weights=train_weights)
        else:
            J, tS, _ = shooting.forward(w, v, u)
        c = tS - T
        L = J + lam * c + 0.5 * rho * c * c
        if not grad:
            return J, c, L
        mult = lam + rho * c
        gv = gv + mult * w * ds[:, None]
        gw = gw + mult * v * ds[:, None]
        return J, c, L, gw, gv, gu

    def project(w, v, u):
        v, u = project_box(v, u)
        if train_weights:
            w = project_simplex(w)
        return w, v, u

    def dot(a, b):
        return sum(float(np.vdot(x, y)) for x, y in zip(a, b))

    w, v, u = project(w, v, u)
    trace, snapshots = [], []
    it = 0
    outer = 0
    converged = False
    prev_c = np.inf
    J, c, L, gw, gv, gu = evaluate(w, v, u, True)
    while it < max_iters:
        grads = (gw, gv, gu) if train_weights else (np.zeros_like(gw), gv, gu)
        gmax = max(float(np.abs(g).max()) for g in grads) or 1.0
        alpha = np.full(3, 0.1 / gmax)
        inner_conv = False
        history = [L]
        for inner in range(inner_max):
            # projected gradient measure at unit step scaled by the gradient size
            wt, vt, ut = project(w - gw / gmax if train_weights else w, v - gv / gmax, u - gu / gmax)
            pg = max(float(np.abs(vt - v).max()), float(np.abs(ut - u).max()),
                     float(np.abs(wt - w).max()) if train_weights else 0.0)
            if pg <= stat_tol:
                inner_conv = True
                break
            step = alpha.copy()
            have_grad = False
            for trial in range(_MAX_BACKTRACK):
                wn, vn, un = project(w - step[0] * gw if train_weights else w,
                                     v - step[1] * gv, u - step[2] * gu)
                delta = (wn - w, vn - v, un - u)
                decrease = dot(grads, delta)
                # BB steps are usually accepted at once: the first trial also
                # computes the gradient, later ones only the value
                if trial == 0:
                    Jn, cn, Ln, gwn, gvn, gun = evaluate(wn, vn, un, True)
                    have_grad = True
                else:
                    Jn, cn, Ln = evaluate(wn, vn, un, False)
                    have_grad = False
                if Ln <= L + _ARMIJO * decrease:
                    break
                step *= 0.5
            else:
                inner_conv = True
                break
            if not have_grad:
                Jn, cn, Ln, gwn, gvn, gun = evaluate(wn, vn, un, True)
            s = delta
            yv = (gwn - gw if train_weights else np.zeros_like(gw), gvn - gv, gun - gu)
            # one Barzilai-Borwein step per block: weights, time control, state control
            for b in range(3):
                sy = float(np.vdot(s[b], yv[b]))
                ss = float(np.vdot(s[b], s[b]))
                a = ss / sy if sy > 0 else 1e3 / gmax
                alpha[b] = min(max(a, 1e-12 / gmax), 1e6 / gmax)
            w, v, u, J, c, L, gw, gv, gu = wn, vn, un, Jn, cn, Ln, gwn, gvn, gun
            grads = (gw, gv, gu) if train_weights else (np.zeros_like(gw), gv, gu)
            it += 1
            trace.append((outer, it, J, L, abs(c), float(step.max())))
            if snapshot_every and it % snapshot_every == 0:
                snapshots.append((w.copy(), v.copy(), u.copy()))
            history.append(L)
            if (it >= min_iters and len(history) > window
                    and history[-window - 1] - L <= ftol * (1.0 + abs(L))):
                inner_conv = True
                break
            if it >= max_iters:
                break
        # outer update
        if abs(c) <= constraint_tol and inner_conv:
            converged = True
            break
        lam += rho * c
        if abs(c) > 0.25 * prev_c:
            rho = min(rho * rho_growth, rho_max)
        prev_c = abs(c)
        outer += 1
        J, c, L, gw, gv, gu = evaluate(w, v, u, True)
    return ALState(w, v, u, J, abs(c), it, converged, trace, snapshots, lam, rho)
