"""Compiled inner loop for switched Euler-Maruyama with affine drifts.

Mirrors ``switching._em_chunk_python`` step for step; the two are tested
against each other.
"""

import numba as nb
import numpy as np


@nb.njit(cache=True)
def em_affine_chunk(x, mode, i0, noise, A, c, Abar, cbar, cumP, dt, scale,
                    ev_t, ev_u, ptr, switching, lo, hi, stride,
                    X_out, M_out, jump_from, jump_to):
    p = x.shape[0]
    K = cumP.shape[0]
    drift = np.empty(p)
    for s in range(noise.shape[0]):
        i = i0 + s
        for a in range(p):
            acc = 0.0
            if switching:
                for b in range(p):
                    acc += A[mode, a, b] * x[b]
                drift[a] = acc + c[mode, a]
            else:
                for b in range(p):
                    acc += Abar[a, b] * x[b]
                drift[a] = acc + cbar[a]
        for a in range(p):
            x[a] = x[a] + drift[a] * dt + scale * noise[s, a]
        t_next = (i + 1) * dt
        while ptr < ev_t.shape[0] and ev_t[ptr] <= t_next:
            u = ev_u[ptr] * cumP[mode, K - 1]
            new = 0
            while new < K - 1 and cumP[mode, new] <= u:
                new += 1
            jump_from[ptr] = mode
            jump_to[ptr] = new
            mode = new
            ptr += 1
        if (i + 1) % stride == 0:
            r = (i + 1) // stride
            for a in range(p):
                X_out[r, a] = x[a]
            M_out[r] = mode
        for a in range(p):
            if x[a] < lo[a] or x[a] > hi[a]:
                return mode, ptr, i + 1
    return mode, ptr, -1


@nb.njit(cache=True)
def rk4_affine(A, x0, f_nodes, f_mids, h):
    """RK4 for ``x' = A x + f(t)`` with forcing sampled at nodes and midpoints.

    Mirrors the generic loops in ``rarepath._Sweeper``; ``h < 0`` runs the
    grid in the order given.
    """
    n = f_mids.shape[0]
    p = x0.shape[0]
    out = np.empty((n + 1, p))
    x = x0.copy()
    out[0] = x
    k1 = np.empty(p)
    k2 = np.empty(p)
    k3 = np.empty(p)
    k4 = np.empty(p)
    y = np.empty(p)
    for i in range(n):
        for a in range(p):
            acc = 0.0
            for b in range(p):
                acc += A[a, b] * x[b]
            k1[a] = acc + f_nodes[i, a]
        for a in range(p):
            y[a] = x[a] + h / 2 * k1[a]
        for a in range(p):
            acc = 0.0
            for b in range(p):
                acc += A[a, b] * y[b]
            k2[a] = acc + f_mids[i, a]
        for a in range(p):
            y[a] = x[a] + h / 2 * k2[a]
        for a in range(p):
            acc = 0.0
            for b in range(p):
                acc += A[a, b] * y[b]
            k3[a] = acc + f_mids[i, a]
        for a in range(p):
            y[a] = x[a] + h * k3[a]
        for a in range(p):
            acc = 0.0
            for b in range(p):
                acc += A[a, b] * y[b]
            k4[a] = acc + f_nodes[i + 1, a]
        for a in range(p):
            x[a] = x[a] + h / 6 * (k1[a] + 2 * k2[a] + 2 * k3[a] + k4[a])
        out[i + 1] = x
    return out
