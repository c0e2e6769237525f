"""Compiled ADMM iteration for programs small enough for dense algebra."""

import numba
import numpy as np


@numba.njit(cache=True)
def _prox(xs, n_abs, abs_w, cone_w, sigma, out):
    for k in range(n_abs):
        t = abs_w[k] / sigma
        x = xs[k]
        if x > t:
            out[k] = x - t
        elif x < -t:
            out[k] = x + t
        else:
            out[k] = 0.0
    for e in range(cone_w.size):
        a = xs[n_abs + 2 * e]
        b = xs[n_abs + 2 * e + 1]
        nrm = np.sqrt(a * a + b * b)
        f = 0.0
        if nrm > 0.0:
            f = max(1.0 - (cone_w[e] / sigma) / nrm, 0.0)
        out[n_abs + 2 * e] = a * f
        out[n_abs + 2 * e + 1] = b * f


@numba.njit(cache=True)
def admm_dense(Kinv, L, M, n_abs, abs_w, cone_w, lo, hi, state, it0, it_end, settings):
    """Run over-relaxed ADMM on ``z = (L v, M v)`` from iteration ``it0 + 1``.

    ``state = (zs, zc, us, uc)`` holds the splitting variables and scaled
    duals and is updated in place, so that a run can be resumed.
    ``settings = (sigma, relax, tol, check_every, adapt_every, next_adapt)``.
    Returns ``(v, sigma, next_adapt, iterations, converged, kkt)``.
    """
    zs, zc, us, uc = state
    sigma, relax, tol, check_every, adapt_every, next_adapt = settings
    p = zc.size
    ms = zs.size
    LT = L.T.copy()
    MT = M.T.copy()
    hs = np.empty(ms)
    hc = np.empty(p)
    zs_new = np.empty(ms)
    v = np.zeros(p)
    converged = False
    kkt = np.inf
    it = it0
    for it in range(it0 + 1, it_end + 1):
        v = Kinv @ (LT @ (zs - us) + MT @ (zc - uc))
        Lvs = L @ v
        Lvc = M @ v
        for k in range(ms):
            hs[k] = relax * Lvs[k] + (1 - relax) * zs[k]
        for k in range(p):
            hc[k] = relax * Lvc[k] + (1 - relax) * zc[k]
        _prox(hs + us, n_abs, abs_w, cone_w, sigma, zs_new)
        dzs = zs_new - zs
        zc_new = np.minimum(np.maximum(hc + uc, lo), hi)
        dzc = zc_new - zc
        zs[:] = zs_new
        zc[:] = zc_new
        us += hs - zs
        uc += hc - zc

        if it % check_every != 0 and it != it_end:
            continue
        rp = np.sqrt(np.sum((Lvs - zs) ** 2) + np.sum((Lvc - zc) ** 2))
        rd = sigma * np.sqrt(np.sum((LT @ dzs + MT @ dzc) ** 2))
        scale_p = max(np.sqrt(np.sum(Lvs**2) + np.sum(Lvc**2)), np.sqrt(np.sum(zs**2) + np.sum(zc**2)))
        scale_d = sigma * np.sqrt(np.sum(us**2) + np.sum(uc**2))
        kkt = max(rp / (1.0 + scale_p), rd / (1.0 + scale_d))
        if kkt <= tol:
            converged = True
            break
        if it >= next_adapt:
            ratio = (rp / max(scale_p, 1e-300)) / max(rd / max(scale_d, 1e-300), 1e-300)
            next_adapt = it + adapt_every
            if ratio > 10 or ratio < 0.1:
                new = min(max(sigma * np.sqrt(ratio), 1e-6), 1e6)
                us *= sigma / new
                uc *= sigma / new
                sigma = new
                # back off so that rebalancing cannot keep the iteration from settling
                next_adapt = it + adapt_every * max(1, it // (4 * adapt_every))
    return v, sigma, next_adapt, it, converged, kkt
