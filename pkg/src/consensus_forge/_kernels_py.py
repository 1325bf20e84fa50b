"""Pure Python / NumPy versions of the numerical kernels.

Signatures match the compiled ``_kernels`` module exactly so that
:mod:`consensus_forge.kernels` can swap one for the other.
"""

import numpy as np

_CHUNK = 1 << 15


def rk4_step(field, x, t, dt):
    """One classical Runge-Kutta step of ``x' = field(x, t)``."""
    k1 = field(x, t)
    k2 = field(x + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = field(x + 0.5 * dt * k2, t + 0.5 * dt)
    k4 = field(x + dt * k3, t + dt)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError(f"non-finite state after RK4 step at t={t:g}")
    return out


def inverse_row_norms(mats):
    """``1 / ||inv(H)||_inf`` for a stack of square matrices; 0 where singular."""
    mats = np.asarray(mats, dtype=complex)
    try:
        inv = np.linalg.inv(mats)
        norms = np.abs(inv).sum(axis=-1).max(axis=-1)
        bad = ~np.isfinite(norms)
    except np.linalg.LinAlgError:
        norms = np.empty(mats.shape[0])
        for k, H in enumerate(mats):
            try:
                norms[k] = np.abs(np.linalg.inv(H)).sum(axis=1).max()
            except np.linalg.LinAlgError:
                norms[k] = np.inf
        bad = ~np.isfinite(norms)
    out = np.zeros(norms.shape)
    ok = ~bad & (norms > 0)
    out[ok] = 1.0 / norms[ok]
    return out


def region_slack_grid(A, R, sigmas, omegas):
    """Minimum of ``1/||inv(A - lam I)||_inf - R`` over ``lam = sigma + j omega``.

    Returns ``(min_slack, sigma, omega)`` at the minimiser.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    sig, om = np.meshgrid(np.asarray(sigmas, float), np.asarray(omegas, float), indexing="ij")
    lam = (sig + 1j * om).ravel()
    eye = np.eye(n)
    best = (np.inf, 0.0, 0.0)
    for start in range(0, lam.size, _CHUNK):
        chunk = lam[start:start + _CHUNK]
        mats = A[None, :, :] - chunk[:, None, None] * eye[None, :, :]
        slack = inverse_row_norms(mats) - R
        k = int(np.argmin(slack))
        if slack[k] < best[0]:
            best = (float(slack[k]), float(chunk[k].real), float(chunk[k].imag))
    return best


def integrate_agents(A, B, G, K, nbr_ptr, nbr_idx, nbr_W, u0, x_init, dt, steps, guard):
    """Fixed-step RK4 of the per-agent closed loop.

    Agent 0 is the leader (``x0' = A0 x0 + B0 u0``); agent ``i >= 1`` runs
    ``x_i' = A_i x_i + B_i(-G_i x_i + K_i sum_e W_e (x_{j_e} - x_i))`` over
    its in-edges ``e`` in ``nbr_ptr[i]:nbr_ptr[i+1]``.

    Returns ``(states, taken, diverged)``: ``states[:taken + 1]`` are
    valid, and ``diverged`` is set when a state left ``[-guard, guard]`` or
    became non-finite (the trace stops there).
    """
    A = np.asarray(A, float)
    B = np.asarray(B, float)
    G = np.asarray(G, float)
    K = np.asarray(K, float)
    nbr_W = np.asarray(nbr_W, float)
    nodes = A.shape[0]
    lead_in = B[0] @ np.asarray(u0, float)
    edges = [
        [(int(nbr_idx[e]), nbr_W[e]) for e in range(nbr_ptr[i], nbr_ptr[i + 1])]
        for i in range(nodes)
    ]

    def field(x, t):
        out = np.empty_like(x)
        out[0] = A[0] @ x[0] + lead_in
        for i in range(1, nodes):
            xi = x[i]
            r = np.zeros_like(xi)
            for j, w in edges[i]:
                r += w @ (x[j] - xi)
            out[i] = A[i] @ xi + B[i] @ (K[i] @ r - G[i] @ xi)
        return out

    states = np.empty((steps + 1,) + np.shape(x_init))
    x = np.array(x_init, dtype=float)
    states[0] = x
    for k in range(steps):
        try:
            x = rk4_step(field, x, k * dt, dt)
        except FloatingPointError:
            return states, k, True
        states[k + 1] = x
        if np.max(np.abs(x)) > guard:
            return states, k + 1, True
    return states, steps, False
