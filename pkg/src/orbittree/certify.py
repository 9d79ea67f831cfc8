"""Independent re-verification of built trees, limit-set samples and mixing checks.

Nothing here reuses the builder's lattice points: every orbit is recomputed
from x0 and a node's integer index path in mpmath, then sampled on plain time
grids in double precision one unit of time at a time.
"""
from __future__ import annotations

from dataclasses import dataclass
import io
import math

import mpmath as mp
import numpy as np

from . import steps
from .modular import (LatticePoint, dist_to_points, haar_sample, measure_estimate, mp_flow_shift,
                      mp_from_matrix, mp_reduce, mp_to_rep, mp_workdps, point_from_alpha,
                      reduce_batch, systole_batch, CompactWindow)


@dataclass
class OrbitProfile:
    times: np.ndarray
    systole: np.ndarray
    running_min: np.ndarray
    dist_to_target: np.ndarray = None

    def __post_init__(self):
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("time grid must be strictly increasing")
        if not np.all(np.isfinite(self.systole)):
            raise ValueError("non-finite systole values")

    def to_csv(self):
        buf = io.StringIO()
        buf.write("t,systole,dist_to_target\n")
        for i, t in enumerate(self.times):
            d = "" if self.dist_to_target is None else repr(float(self.dist_to_target[i]))
            buf.write(f"{float(t)!r},{float(self.systole[i])!r},{d}\n")
        return buf.getvalue()


def _as_basis(x):
    if isinstance(x, LatticePoint):
        return mp_from_matrix(x.rep)
    if isinstance(x, np.ndarray):
        return mp_from_matrix(x)
    return x


def _orbit_reps(basis, times):
    """Float representatives of g_u x at the given increasing times (u >= 0).

    The mp basis is advanced one time unit at a time and reduced; inside each
    unit the double-precision flow is exact to well below 1e-12.
    """
    reps = np.empty((len(times), 2, 2))
    u0 = 0.0
    b = mp_reduce(*basis)
    start = 0
    while start < len(times):
        stop = start
        while stop < len(times) and times[stop] < u0 + 1.0:
            stop += 1
        if stop > start:
            base = mp_to_rep(b)
            du = np.asarray(times[start:stop]) - u0
            G = np.zeros((stop - start, 2, 2))
            G[:, 0, :] = np.exp(du)[:, None] * base[0][None, :]
            G[:, 1, :] = np.exp(-du)[:, None] * base[1][None, :]
            reps[start:stop] = G
        start = stop
        b = mp_flow_shift(b, mp.mpf(1), mp.mpf(0))
        u0 += 1.0
    return reps


def orbit_profile(x, t_max, dt, target=None):
    """Systole (and optionally distance to target) along g_u x, u in [0, t_max] with pitch dt."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    n = int(math.floor(t_max / dt + 1e-9)) + 1
    times = np.arange(n) * dt
    with mp.workdps(mp_workdps(t_max)):
        reps = _orbit_reps(_as_basis(x), times)
    sy = systole_batch(reps)
    dist = None
    if target is not None:
        dist = np.array([float(dist_to_points(LatticePoint(reduce_batch(r[None])[0]), target.rep[None])[0])
                         for r in reps])
    return OrbitProfile(times, sy, np.minimum.accumulate(sy), dist)


# ------------------------------------------------------------ tree geometry

def node_offsets(tree, node, fractions):
    """Points of a node's box, as mp coordinates c + f * r e^{-2T} for f in fractions."""
    c = tree.node_center(node)
    half = mp.mpf(tree.r) * mp.e ** (-2 * mp.mpf(node.T))
    return [c + mp.mpf(float(f)) * half for f in fractions]


def point_basis(tree, s):
    """mp basis of h_s x0."""
    x0 = mp_from_matrix(np.array(tree.x0))
    return tuple((w[0] + s * w[1], w[1]) for w in x0)


def _window_max(values, w):
    """max over the sliding window [i - w, i + w]."""
    from scipy.ndimage import maximum_filter1d
    return maximum_filter1d(values, size=2 * w + 1, mode="nearest")


def check_bounded(tree, dt=1e-2, points=5, strict_margin=None):
    """Condition (b) on every leaf: g_u E x0 lies in g_{[-t,t]} K for u in [0, T].

    Also reports the plain minimum systole of every sampled orbit, so the
    stricter statement g_u E x0 in K can be read off.
    """
    leaves = tree.levels[-1] if tree.depth > 0 else []
    eps, t = tree.epsilon, tree.schedule.t
    out = []
    fr = np.linspace(-1, 1, points) if points > 1 else np.zeros(1)
    for i, nd in enumerate(leaves):
        with mp.workdps(mp_workdps(nd.T + t)):
            worst_b, worst = math.inf, math.inf
            center_min = math.inf
            for f, s in zip(fr, node_offsets(tree, nd, fr)):
                prof = orbit_profile(point_basis(tree, s), nd.T + t, dt)
                k = int(round(t / dt))
                wmax = _window_max(prof.systole, k)
                inside = prof.times <= nd.T + 1e-12
                worst_b = min(worst_b, float(wmax[inside].min()) - eps)
                worst = min(worst, float(prof.systole[inside].min()))
                if f == 0:
                    center_min = float(prof.systole[inside].min())
        out.append({"index": i, "path": list(nd.path), "T": nd.T, "margin_b": worst_b,
                    "min_systole": worst, "center_min_systole": center_min})
    passed = all(r["margin_b"] >= 0 for r in out)
    rep = {"passed": passed, "nodes": out,
           "worst_margin_b": min((r["margin_b"] for r in out), default=math.inf),
           "worst_center_systole": min((r["center_min_systole"] for r in out), default=math.inf)}
    if strict_margin is not None:
        floor = eps * (1 - strict_margin)
        rep["strict_floor"] = floor
        rep["strict_passed"] = all(r["center_min_systole"] >= floor for r in out)
    return rep


def check_approach(tree, factor=10, eps_scale=1.0, clearance_dt=1e-3):
    """Condition (c) at every approach node, on an H-grid ``factor`` times finer than construction.

    The distance to the neutral tube uses sampled z whose count doubles until
    the minimum moves by less than eps/10.
    """
    out = []
    for k, lvl in enumerate(tree.levels):
        for i, nd in enumerate(lvl):
            if nd.kind != "approach":
                continue
            a = nd.approach
            eps_n = a["eps"] * eps_scale
            y = point_from_alpha(a["target_alpha"])
            Tk = tree.Times[k - 1]
            T = Tk + a["s_eps_prime"]
            fr = np.linspace(-1, 1, 11 * factor)
            with mp.workdps(mp_workdps(nd.T + 5)):
                reps = []
                for s in node_offsets(tree, nd, fr):
                    b = point_basis(tree, s)
                    reps.append(mp_to_rep(mp_flow_shift(b, mp.mpf(T), mp.mpf(0))))
                reps = np.array(reps)
                # clearance along [T_k + t_search, T_k + s_eps] on a coarse H-grid
                clear = math.inf
                for s in node_offsets(tree, nd, np.linspace(-1, 1, 11)):
                    b = mp_flow_shift(point_basis(tree, s), mp.mpf(Tk + a["t_search"]), mp.mpf(0))
                    prof = orbit_profile(b, a["s_eps"] - a["t_search"], clearance_dt)
                    clear = min(clear, float(prof.systole.min()))
            nz = 65
            prev = None
            while True:
                tube = steps.neutral_orbit(y, a["sigma"], nz)
                d = steps.tube_distance(reps, tube)
                if prev is not None and abs(prev - d.max()) < eps_n / 10:
                    break
                prev = float(d.max())
                nz = 2 * nz - 1
                if nz > 1100:
                    break
            dmax = float(d.max())
            out.append({"level": k, "index": i, "n": a["n"], "T": T, "max_dist": dmax, "eps": eps_n,
                        "min_clearance_systole": clear,
                        "passed": dmax < eps_n and clear >= tree.epsilon})
    return {"passed": all(r["passed"] for r in out), "levels": out}


# ---------------------------------------------------------- limit samples

def sample_limit_set(tree):
    """Centres of the deepest boxes, in the coordinate s of H (floats)."""
    if tree.depth < 1:
        raise ValueError("tree depth must be at least 1")
    return np.array([float(tree.node_center(nd)) for nd in tree.levels[-1]])


def sample_limit_random(tree, samples, seed, window=None, max_level=None):
    """Random descents through the full certified tree (not just the stored beam).

    Generic levels pick a uniformly random certified survivor; the descent
    stops before the first approach level, or at max_level, whichever comes
    first.  Returns (coordinates, levels reached).
    """
    if window is None:
        window = CompactWindow(tree.epsilon, tree.margin)
    theta = window.epsilon + window.margin if window.epsilon > 0 else 0.0
    stop = tree.depth if max_level is None else min(max_level, tree.depth)
    for lev in tree.schedule.approach_levels:
        if lev <= stop:
            stop = lev - 1
            break
    rng = np.random.default_rng(seed)
    r, t = tree.r, tree.schedule.t
    coords = np.empty(samples)
    cache = {}
    with mp.workdps(mp_workdps(stop * t + 5)):
        root = mp_reduce(*mp_from_matrix(np.array(tree.x0)))
        for j in range(samples):
            b, path, c = root, (), mp.mpf(0)
            for k in range(1, stop + 1):
                key = path
                if key not in cache:
                    cache[key] = steps.generic_survivors(mp_to_rep(b), t, r, theta)
                surv = cache[key]
                if not len(surv):
                    break
                m = int(surv[rng.integers(len(surv))])
                path = path + (m,)
                b = mp_flow_shift(b, mp.mpf(t), 2 * mp.mpf(r) * m)
                c += mp.e ** (-2 * mp.mpf(k * t)) * 2 * mp.mpf(r) * m
            coords[j] = float(c)
    return coords, stop


def box_counting_estimate(points, scales):
    """Least-squares slope of log N(delta) against log(1/delta)."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    scales = np.asarray(scales, dtype=float)
    if len(pts) == 0 or len(scales) < 2:
        raise ValueError("need points and at least two scales")
    x = np.log(1 / scales)
    if np.var(x) == 0:
        raise ValueError("degenerate fit: scales have zero variance")
    counts = np.array([len(np.unique(np.floor(pts / d), axis=0)) for d in scales])
    return float(np.polyfit(x, np.log(counts), 1)[0])


def auto_scales(points, top, n=12, per_box=16):
    """Geometric scales from top/2 down to where boxes hold ~per_box samples on average."""
    lo = top * per_box / max(len(points), 1)
    hi = top / 2
    if lo >= hi:
        raise ValueError("too few samples for a scale range")
    return np.geomspace(hi, lo, n)


# ------------------------------------------------------- equidistribution

def equidistribution_check(x, t, r, window_q, samples, seed, mc_samples=1_000_000):
    """Fraction of h in V_r with g_t h x in Q against the Haar measure of Q."""
    if not t > 0:
        raise ValueError("t must be positive")
    rng = np.random.default_rng(seed)
    s = rng.uniform(-r, r, samples)
    sy = systole_batch(steps.shear_flow_batch(x.rep, s, t))
    frac = float(np.mean(sy >= window_q.epsilon))
    est = measure_estimate(window_q, mc_samples, seed)
    stderr = math.sqrt(frac * (1 - frac) / samples + est.stderr ** 2)
    return frac, est.value, stderr


def ball_equidistribution_check(x, t, r, y, sigma, samples, seed, mc_samples=200_000):
    """Small-ball variant: Q = B_X(y, sigma)."""
    rng = np.random.default_rng(seed)
    s = rng.uniform(-r, r, samples)
    P = reduce_batch(steps.shear_flow_batch(x.rep, s, t))
    hit = np.array([dist_to_points(LatticePoint(p), y.rep[None])[0] < sigma for p in P])
    G = reduce_batch(haar_sample(mc_samples, np.random.default_rng(seed + 1)))
    mhit = np.array([dist_to_points(LatticePoint(g), y.rep[None])[0] < sigma for g in G])
    frac, m = float(hit.mean()), float(mhit.mean())
    stderr = math.sqrt(frac * (1 - frac) / samples + m * (1 - m) / mc_samples)
    return frac, m, stderr
