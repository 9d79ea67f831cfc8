"""Exact short-vector bookkeeping along horocycle boxes and flow segments.

For a lattice with basis B and a vector v = (a, b) in it, the flowed and
sheared vector g_u h_s v equals (e^u (a + s b), e^{-u} b).  Writing
z = e^{-2u}, it is shorter than theta iff (a + s b)^2 < z theta^2 - z^2 b^2.
Everything below is closed-form in that expression, so systole bounds over a
box of s-values and a window of times need no sampling.
"""
from __future__ import annotations

import math

import numpy as np

from .modular import gauss_reduce_batch


def lattice_points_in_box(B, A, Bm):
    """All lattice vectors w of B Z^2 with |w_0| < A and |w_1| < Bm."""
    B = np.asarray(B, dtype=float)
    S = np.diag([1.0 / A, 1.0 / Bm]) @ B
    U, V = gauss_reduce_batch(S[None, :, 0], S[None, :, 1])
    p, q = U[0], V[0]
    det = p[0] * q[1] - p[1] * q[0]
    nmax = int(math.floor((abs(p[0]) + abs(p[1])) / abs(det))) + 1
    n = np.arange(-nmax, nmax + 1, dtype=float)
    lo = np.full(n.shape, -np.inf)
    hi = np.full(n.shape, np.inf)
    for i in (0, 1):
        if p[i] != 0:
            e1 = (-1 - n * q[i]) / p[i]
            e2 = (1 - n * q[i]) / p[i]
            lo = np.maximum(lo, np.minimum(e1, e2))
            hi = np.minimum(hi, np.maximum(e1, e2))
        else:
            bad = np.abs(n * q[i]) >= 1
            hi[bad] = -np.inf
    mlo = np.ceil(lo - 1e-9)
    mhi = np.floor(hi + 1e-9)
    cnt = np.maximum(mhi - mlo + 1, 0).astype(int)
    if cnt.sum() == 0:
        return np.zeros((0, 2))
    ns = np.repeat(n, cnt)
    ms = np.concatenate([np.arange(a, a + c) for a, c in zip(mlo, cnt) if c > 0])
    W = np.outer(ms, p) + np.outer(ns, q)
    W = W * np.array([A, Bm])
    keep = (np.abs(W[:, 0]) < A) & (np.abs(W[:, 1]) < Bm) & ((ms != 0) | (ns != 0))
    return W[keep]


def relevant_vectors(B, s_lo, s_hi, u0, u1, theta):
    """Lattice vectors (a, b) that can be shorter than theta on the box.

    Superset of all v with |g_u h_s v| < theta for some s in [s_lo, s_hi],
    u in [u0, u1]; returned in the unsheared frame.
    """
    sc = 0.5 * (s_lo + s_hi)
    hw = 0.5 * (s_hi - s_lo)
    Bm = theta * math.exp(u1)
    A = theta * math.exp(-u0) + hw * Bm
    shear = np.array([[1.0, sc], [0.0, 1.0]])
    W = lattice_points_in_box(shear @ B, A * (1 + 1e-12), Bm * (1 + 1e-12))
    W[:, 0] -= sc * W[:, 1]
    return W


def bad_intervals(vectors, u0, u1, theta):
    """Open s-intervals on which some vector is shorter than theta at some u in [u0, u1].

    Returns (lo, hi) arrays; a vector with b = 0 that is short gives (-inf, inf).
    """
    a, b = vectors[:, 0], vectors[:, 1]
    zlo, zhi = math.exp(-2 * u1), math.exp(-2 * u0)
    lo = np.full(a.shape, np.nan)
    hi = np.full(a.shape, np.nan)
    flat = b == 0
    short = flat & (np.abs(a) < theta * math.exp(-u0))
    lo[short], hi[short] = -np.inf, np.inf
    nb = ~flat
    bb = b[nb]
    z = np.clip(theta ** 2 / (2 * bb ** 2), zlo, zhi)
    w2 = z * theta ** 2 - z ** 2 * bb ** 2
    ok = w2 > 0
    w = np.sqrt(np.where(ok, w2, 0.0))
    e1 = (-a[nb] - w) / bb
    e2 = (-a[nb] + w) / bb
    l = np.where(ok, np.minimum(e1, e2), np.nan)
    h = np.where(ok, np.maximum(e1, e2), np.nan)
    lo[nb], hi[nb] = l, h
    keep = ~np.isnan(lo)
    return lo[keep], hi[keep]


def box_is_clean(B, s_lo, s_hi, u0, u1, theta):
    """True iff systole(g_u h_s x) >= theta on the whole closed box."""
    v = relevant_vectors(B, s_lo, s_hi, u0, u1, theta)
    lo, hi = bad_intervals(v, u0, u1, theta)
    return not np.any((lo < s_hi) & (hi > s_lo))


def min_systole_box(B, s_lo, s_hi, u0, u1, cap=1.0):
    """Exact minimum of systole(g_u h_s x) over the box, clamped at cap."""
    v = relevant_vectors(B, s_lo, s_hi, u0, u1, cap)
    if len(v) == 0:
        return cap
    a, b = v[:, 0], v[:, 1]
    e1, e2 = a + b * s_lo, a + b * s_hi
    c = np.where(e1 * e2 <= 0, 0.0, np.minimum(np.abs(e1), np.abs(e2)))
    zlo, zhi = math.exp(-2 * u1), math.exp(-2 * u0)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(b != 0, np.abs(c) / np.abs(b), zhi)
    z = np.clip(z, zlo, zhi)
    f = c ** 2 / z + z * b ** 2
    return float(min(cap, math.sqrt(max(float(f.min()), 0.0))))


def surviving_children(B, t, r, m_lo, m_hi, theta, u0=None, u1=None, half=None):
    """Indices m in [m_lo, m_hi] whose child box e^{-2t}[2rm - half, 2rm + half] stays clean.

    Clean means systole(g_u h_s x) >= theta for all s in the closed child box
    and u in [u0, u1]; the defaults u0 = u1 = t and half = r check the
    endpoint of the full child box only.
    """
    u0 = t if u0 is None else u0
    u1 = t if u1 is None else u1
    half = r if half is None else half
    n = m_hi - m_lo + 1
    if n <= 0:
        return np.zeros(0, dtype=np.int64)
    sc = math.exp(-2 * t)
    v = relevant_vectors(B, sc * (2 * r * m_lo - half), sc * (2 * r * m_hi + half), u0, u1, theta)
    lo, hi = bad_intervals(v, u0, u1, theta)
    blocked = np.zeros(n + 1, dtype=np.int64)
    if len(lo):
        # child m meets (lo, hi) iff sc(2rm - half) < hi and sc(2rm + half) > lo;
        # touching counts as meeting, which errs on the safe side
        slack = 1e-12
        kmin = np.ceil((lo / sc - half) / (2 * r) - slack)
        kmax = np.floor((hi / sc + half) / (2 * r) + slack)
        kmin = np.clip(kmin, m_lo, m_hi + 1).astype(np.int64) - m_lo
        kmax = np.clip(kmax, m_lo - 1, m_hi).astype(np.int64) - m_lo
        good = kmax >= kmin
        np.add.at(blocked, kmin[good], 1)
        np.add.at(blocked, kmax[good] + 1, -1)
    alive = np.cumsum(blocked)[:n] == 0
    return np.arange(m_lo, m_hi + 1)[alive]


def min_systole_orbit(B, u0, u1, cap=2.0, chunk=1.0):
    """Exact minimum of systole(g_u x) for u in [u0, u1], walking in unit chunks."""
    from .modular import reduce_batch
    best = cap
    u = u0
    while u < u1:
        w = min(chunk, u1 - u)
        G = np.diag([math.exp(u), math.exp(-u)]) @ np.asarray(B, dtype=float)
        R = reduce_batch(G[None])[0]
        best = min(best, min_systole_box(R, 0.0, 0.0, 0.0, w, cap))
        u += w
    return best
