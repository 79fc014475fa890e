"""Compiled inner loop of the latent-class objective."""
from __future__ import annotations

import math

import numba
import numpy as np


@numba.njit(cache=True, fastmath=False)
def mixture_loglik_sum(za, labels, offset, phi, cum, log_w, coef, xi):
    """Sum over individuals of the true-risk (or, with ``offset=0``, full) contribution.

    ``coef[l, j]`` and ``xi[:, j]`` belong to risk ``j + offset``.  Returns -inf
    or NaN when any contribution is non-finite.
    """
    n, q = za.shape
    L, R, _ = coef.shape
    nk = xi.shape[0]
    lam_cum = np.empty(R)
    expo = np.empty(L)
    total = 0.0
    for i in range(n):
        for j in range(R):
            s = 0.0
            for k in range(nk):
                s += cum[i, k] * xi[k, j]
            lam_cum[j] = s
        ev = labels[i] - offset
        log_rate = 0.0
        if ev >= 0:
            s = 0.0
            for k in range(nk):
                s += phi[i, k] * xi[k, ev]
            log_rate = math.log(s) if s > 0 else -math.inf
        top = -math.inf
        for l in range(L):
            e = log_w[l]
            for j in range(R):
                eta = 0.0
                for m in range(q):
                    eta += za[i, m] * coef[l, j, m]
                if lam_cum[j] > 0:
                    e -= lam_cum[j] * math.exp(eta)
                if j == ev:
                    e += eta
            expo[l] = e
            if e > top:
                top = e
        if top == -math.inf or top != top:
            return top
        acc = 0.0
        for l in range(L):
            acc += math.exp(expo[l] - top)
        total += log_rate + top + math.log(acc)
    return total
