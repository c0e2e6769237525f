"""Projected subgradient loop used by the reference solver."""

import numba
import numpy as np


@numba.njit(cache=True)
def _value_and_subgradient(A, aw, G, gw, w, g):
    f = 0.0
    g[:] = 0.0
    for k in range(A.shape[0]):
        s = 0.0
        for j in range(A.shape[1]):
            s += A[k, j] * w[j]
        f += aw[k] * abs(s)
        if s != 0.0:
            sg = aw[k] if s > 0 else -aw[k]
            for j in range(A.shape[1]):
                g[j] += sg * A[k, j]
    for e in range(gw.size):
        a = 0.0
        b = 0.0
        for j in range(G.shape[1]):
            a += G[2 * e, j] * w[j]
            b += G[2 * e + 1, j] * w[j]
        nrm = np.sqrt(a * a + b * b)
        f += gw[e] * nrm
        if nrm > 0.0:
            for j in range(G.shape[1]):
                g[j] += gw[e] * (a * G[2 * e, j] + b * G[2 * e + 1, j]) / nrm
    return f


@numba.njit(cache=True)
def box_subgradient(A, aw, G, gw, lo, hi, iterations):
    """Minimize ``sum aw|A w| + sum gw||G_e w||`` over the box ``[lo, hi]``.

    Normalized subgradient steps; the step length is constant within an
    epoch and shrinks geometrically between epochs, each epoch restarting
    from the best point found so far.
    """
    p = lo.size
    w = np.minimum(np.maximum(np.zeros(p), lo), hi)
    g = np.zeros(p)
    best = w.copy()
    fbest = _value_and_subgradient(A, aw, G, gw, w, g)
    span = 0.0
    for j in range(p):
        span += (hi[j] - lo[j]) ** 2
    step = max(np.sqrt(span), 1e-12)
    span_w = 0.0
    for j in range(p):
        span_w = max(span_w, abs(lo[j]), abs(hi[j]))
    step = max(step, span_w)
    epochs = 60
    per = max(iterations // epochs, 1)
    for ep in range(epochs):
        w[:] = best
        for it in range(per):
            f = _value_and_subgradient(A, aw, G, gw, w, g)
            if f < fbest:
                fbest = f
                best[:] = w
            gn = 0.0
            for j in range(p):
                gn += g[j] * g[j]
            gn = np.sqrt(gn)
            if gn == 0.0:
                break
            t = step / np.sqrt(it + 1.0)
            for j in range(p):
                w[j] = min(max(w[j] - t * g[j] / gn, lo[j]), hi[j])
        f = _value_and_subgradient(A, aw, G, gw, w, g)
        if f < fbest:
            fbest = f
            best[:] = w
        step *= 0.7
    return best, fbest
