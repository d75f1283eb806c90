"""Numba kernels for uniformised evolution on a finite box.

Vectors are stored as rows of a ``(k, n_vertices)`` array, so that ``k``
initial conditions are pushed through the same sequence of generators at once.
Bonds leaving the box carry ``edge_b == -1``: they contribute to the total jump
rate of their inner endpoint (killing) but have no off-diagonal entry.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

_MAX_MEAN = 400.0


@njit(cache=True)
def _apply(V, out, ia, ib, ci, diag):
    """out = V P with P = I + L / Lam on interior bonds ``(ia, ib)`` with scaled rates ``ci``."""
    k, n = V.shape
    for r in range(k):
        x = V[r]
        y = out[r]
        for v in range(n):
            y[v] = diag[v] * x[v]
        for e in range(ia.shape[0]):
            a = ia[e]
            b = ib[e]
            c = ci[e]
            y[a] += c * x[b]
            y[b] += c * x[a]


@njit(cache=True)
def _vertex_rate(v, incident, cond):
    s = 0.0
    for i in range(incident.shape[1]):
        s += cond[incident[v, i]]
    return s


@njit(cache=True)
def _poisson_weights(m, tol):
    """Poisson(m) weights w_0..w_K with the dropped tail sum_{j>K} w_j <= tol.

    Past the mode the tail is bounded by the geometric series w_K r / (1 - r),
    r = m / (K + 1), which stays meaningful below double-precision resolution of 1 - cum.
    """
    kmax = int(m + 40.0 * math.sqrt(m) + 80.0)
    w = np.zeros(kmax + 1)
    w[0] = math.exp(-m)
    k = 0
    while k < kmax:
        r = m / (k + 1)
        if r < 1.0 and w[k] * r / (1.0 - r) <= tol:
            break
        k += 1
        w[k] = w[k - 1] * m / k
    return w[: k + 1]


@njit(cache=True)
def _record(slot, V, acc, probe, snaps, snap_acc, masses, maxes, integrate):
    k, n = V.shape
    for r in range(k):
        s = 0.0
        mx = 0.0
        for v in range(n):
            x = V[r, v]
            s += x
            if x > mx:
                mx = x
        masses[slot, r] = s
        maxes[slot, r] = mx
    if snaps.shape[1] > 0:
        for i in range(probe.shape[0]):
            for r in range(k):
                snaps[slot, i, r] = V[r, probe[i]]
                if integrate:
                    snap_acc[slot, i, r] = acc[r, probe[i]]


@njit(cache=True)
def propagate_core(V, edge_a, edge_b, cond, incident, bounds, upd_ptr, upd_edge, upd_val,
                   rec_slot, tol, integrate, probe, snaps, snap_acc, masses, maxes):
    """Evolve ``V`` across ``bounds``; generators are constant between consecutive bounds.

    The truncation budget ``tol`` is shared between steps in proportion to their
    length, so the total truncation loss over the whole evolution is at most ``tol``.

    Before the interval starting at ``bounds[j]`` the bond updates
    ``upd_ptr[j]:upd_ptr[j+1]`` are applied.  Boundaries with ``rec_slot >= 0``
    are recorded.  Returns the time integral of the evolution (zeros unless
    ``integrate``).
    """
    k, n = V.shape
    mu = np.empty(n)
    for v in range(n):
        mu[v] = _vertex_rate(v, incident, cond)
    acc = np.zeros((k, n))
    cur = np.empty((k, n))
    nxt = np.empty((k, n))
    tot = np.empty((k, n))
    inner = np.flatnonzero(edge_b >= 0)
    ia = edge_a[inner]
    ib = edge_b[inner]
    ci = np.empty(inner.shape[0])
    diag = np.empty(n)
    nb = bounds.shape[0]
    span = bounds[nb - 1] - bounds[0]
    for j in range(nb):
        for u in range(upd_ptr[j], upd_ptr[j + 1]):
            e = upd_edge[u]
            cond[e] = upd_val[u]
            a = edge_a[e]
            mu[a] = _vertex_rate(a, incident, cond)
            b = edge_b[e]
            if b >= 0:
                mu[b] = _vertex_rate(b, incident, cond)
        if rec_slot[j] >= 0:
            _record(rec_slot[j], V, acc, probe, snaps, snap_acc, masses, maxes, integrate)
        if j == nb - 1:
            break
        dt = bounds[j + 1] - bounds[j]
        if dt <= 0.0:
            continue
        lam = 0.0
        for v in range(n):
            if mu[v] > lam:
                lam = mu[v]
        inv_lam = 1.0 / lam
        for e in range(inner.shape[0]):
            ci[e] = cond[inner[e]] * inv_lam
        for v in range(n):
            diag[v] = 1.0 - mu[v] * inv_lam
        nsub = int(math.ceil(lam * dt / _MAX_MEAN))
        h = dt / nsub
        w = _poisson_weights(lam * h, tol * h / span)
        for _ in range(nsub):
            cum = w[0]
            wa = max(1.0 - cum, 0.0) * inv_lam
            for r in range(k):
                for v in range(n):
                    x = V[r, v]
                    cur[r, v] = x
                    tot[r, v] = w[0] * x
                    if integrate:
                        acc[r, v] += wa * x
            for i in range(1, w.shape[0]):
                _apply(cur, nxt, ia, ib, ci, diag)
                cur, nxt = nxt, cur
                cum += w[i]
                wi = w[i]
                wa = max(1.0 - cum, 0.0) * inv_lam
                for r in range(k):
                    for v in range(n):
                        x = cur[r, v]
                        tot[r, v] += wi * x
                        if integrate:
                            acc[r, v] += wa * x
            for r in range(k):
                for v in range(n):
                    V[r, v] = tot[r, v]
    return acc
