"""The generic step and the approach step on X = SL(2,R)/SL(2,Z).

Coordinates on H = {h_s} are the single exponential coordinate s, and a node
is described by its lattice point y and the tessellation cube |s| < r.  The
child indexed by m at time t is the box e^{-2t}[2rm - r, 2rm + r].
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
import json
import math

import numpy as np

from . import clearance
from .modular import (LatticePoint, UnsupportedPreset, dist_to_points, reduce_batch,
                      sl2z_ball, systole, systole_batch)
from .tessellation import axis_count

# rungs (multiples of eps) used to rank children by path clearance
MARGIN_LADDER = (0.5, 0.75, 0.9, 1.0, 1.05, 1.1, 1.2, 1.35, 1.5, 1.75, 2.0)
NEUTRAL_SAMPLES = 65


class GenericStepError(RuntimeError):
    pass


class ApproachStepError(RuntimeError):
    pass


def _require_sl2(x, tess=None):
    if x.preset != "sl2" or (tess is not None and tess.dim != 1):
        raise UnsupportedPreset("steps are implemented for the sl2 preset only")


def shear_flow_batch(rep, s, t):
    """Representatives of g_t h_s x for an array of s."""
    s = np.asarray(s, dtype=float)
    et, emt = math.exp(t), math.exp(-t)
    G = np.empty((len(s), 2, 2))
    G[:, 0, 0] = et * (rep[0, 0] + s * rep[1, 0])
    G[:, 0, 1] = et * (rep[0, 1] + s * rep[1, 1])
    G[:, 1, 0] = emt * rep[1, 0]
    G[:, 1, 1] = emt * rep[1, 1]
    return G


# ----------------------------------------------------------- certification

def containment_certify(box, t, x, window, pitch=None, max_halvings=12):
    """Grid-and-Lipschitz certificate that systole(g_t h_s x) >= eps + margin on a box.

    ``box`` is (s_lo, s_hi).  The grid pitch is halved until twice the
    empirical Lipschitz constant times half the pitch falls below the margin.
    """
    if window.margin <= 0:
        raise ValueError("containment_certify needs a positive margin")
    s_lo, s_hi = map(float, box)
    if not (math.isfinite(s_lo) and math.isfinite(s_hi)) or s_hi < s_lo:
        raise ValueError("box must be bounded")
    need = window.epsilon + window.margin
    width = s_hi - s_lo
    if width == 0:
        return bool(systole_batch(shear_flow_batch(x.rep, [s_lo], t))[0] >= need)
    pitch = width / 32 if pitch is None else pitch
    for _ in range(max_halvings + 1):
        n = int(math.ceil(width / pitch)) + 1
        s = np.linspace(s_lo, s_hi, n)
        vals = systole_batch(shear_flow_batch(x.rep, s, t))
        if vals.min() < need:
            return False
        h = s[1] - s[0]
        lip = 2 * float(np.max(np.abs(np.diff(vals)))) / h
        if not math.isfinite(lip):
            return False
        if lip * h / 2 < window.margin:
            return True
        pitch = h / 2
    return False


# ----------------------------------------------------------- generic step

@dataclass
class GenericStepResult:
    survivors: np.ndarray
    t: float
    count_bound: float
    children: int
    bound_met: bool

    @property
    def count(self):
        return int(len(self.survivors))

    @property
    def density(self):
        return self.count * math.exp(-2 * self.t)

    def to_json(self):
        return json.dumps({"survivors": [int(m) for m in self.survivors], "t": self.t,
                           "count_bound": self.count_bound, "children": self.children,
                           "bound_met": self.bound_met}, sort_keys=True)


def child_range(r, t):
    M = axis_count(2.0, t) // 2
    return -M, M


def generic_survivors(rep, t, r, theta, threads=None, shards=1):
    """Certified endpoint survivors (exact), optionally sharded by index range."""
    lo, hi = child_range(r, t)
    if theta <= 0:
        return np.arange(lo, hi + 1)
    if shards <= 1:
        return clearance.surviving_children(rep, t, r, lo, hi, theta)
    edges = np.linspace(lo, hi + 1, shards + 1).astype(int)
    with ThreadPoolExecutor(max_workers=threads) as ex:
        parts = ex.map(lambda i: clearance.surviving_children(rep, t, r, edges[i], edges[i + 1] - 1, theta),
                       range(shards))
        return np.concatenate(list(parts))


def generic_step(x, t, tess, window, eta, m_hat=None, threads=None, shards=1):
    _require_sl2(x, tess)
    if t <= 0:
        raise ValueError("t must be positive")
    if systole(x) < window.epsilon:
        raise ValueError("precondition failed: x is not in K")
    theta = window.epsilon + window.margin if window.epsilon > 0 else 0.0
    surv = generic_survivors(x.rep, t, tess.r, theta, threads, shards)
    lo, hi = child_range(tess.r, t)
    if len(surv) == 0:
        raise GenericStepError("generic step failed; increase t or shrink eps")
    bound = math.exp(2 * t) * ((1.0 if m_hat is None else m_hat) - eta)
    return GenericStepResult(surv, float(t), bound, hi - lo + 1, bool(len(surv) >= bound))


def path_scores(rep, t, r, eps, m_lo, m_hi, ladder=MARGIN_LADDER):
    """Highest ladder rung c with systole >= c*eps on each child box over [0, t].

    Children clean on no rung score 0.
    """
    score = np.zeros(m_hi - m_lo + 1)
    for c in ladder:
        ok = clearance.surviving_children(rep, t, r, m_lo, m_hi, c * eps, u0=0.0)
        score[ok - m_lo] = c
    return score


def lookahead_scores(rep, t, r, eps, ms, lookahead=0.5, ladder=MARGIN_LADDER):
    """Ladder rung of the exact minimum systole along each child's centre over [t, (1 + lookahead) t].

    The descendants of a child shadow its centre for roughly half a step, so
    this screens out children whose geodesic is about to dip into the cusp.
    """
    sc = math.exp(-2 * t)
    rungs = np.array((0.0,) + tuple(ladder))
    out = np.empty(len(ms))
    for i, m in enumerate(ms):
        s = sc * 2 * r * m
        v = clearance.min_systole_box(rep, s, s, t, (1 + lookahead) * t, cap=2.5 * eps) / eps
        out[i] = rungs[np.searchsorted(rungs, v * (1 + 1e-12), side="right") - 1]
    return out


# ----------------------------------------------------------- approach step

@dataclass
class ApproachStepResult:
    gamma: int
    s_eps: float
    s_eps_prime: float
    s1: float
    t: float
    window: tuple
    target: list
    epsilon: float
    sigma: float
    cert_inclusion: bool
    cert_clearance: bool
    cert_distance: float
    path_clean: bool = False
    attempts: list = field(default_factory=list)

    @property
    def passed(self):
        return self.cert_inclusion and self.cert_clearance and self.cert_distance < self.epsilon

    def to_json(self):
        d = asdict(self)
        d["window"] = list(self.window)
        return json.dumps(d, sort_keys=True)


def neutral_orbit(y, sigma, n=NEUTRAL_SAMPLES):
    """Reduced representatives of z y for z = diag(e^d, e^-d), sqrt(2)|d| <= sigma."""
    d = np.linspace(-sigma / math.sqrt(2), sigma / math.sqrt(2), n)
    Z = np.zeros((n, 2, 2))
    Z[:, 0, 0] = np.exp(d)
    Z[:, 1, 1] = np.exp(-d)
    return reduce_batch(Z @ y.rep)


def tube_distance(P, tube):
    """min over the sampled neutral orbit of dist(P, z y), for each representative P."""
    P = np.asarray(P, dtype=float).reshape(-1, 2, 2)
    return np.array([float(np.min(dist_to_points(LatticePoint(p), tube))) for p in P])


def decompose_nlz(M):
    """M = n(a) l(c) diag(e^d, e^-d) for M with M[1,1] > 0."""
    v = M[..., 1, 1]
    return M[..., 0, 1] / v, M[..., 1, 0] * v, -np.log(v)


def approach_times(t, eps, sigma, r, lam=2.0, slack=0.1):
    """(s1, s'_eps, s_eps) for the approach step at search time t."""
    s1 = max(0.0, (2.0 / lam) * math.log(2 * sigma / eps) + slack)
    sp = s1 + t
    # e^{-lam s} 2r + 3r/4 <= r and e^{-lam (s - s')} 2r <= eps/2
    need = max(math.log(8.0) / lam, sp + math.log(4 * r / eps) / lam)
    return s1, sp, 1.1 * need


def _search_hits(x, Y1, t, r, sigma, pitch_scale=8.0, chunk=200_000):
    """Grid search of h_s, |s| <= r/2, with g_t h_s x within sigma of n l z Y1."""
    pitch = sigma / pitch_scale * math.exp(-2 * t)
    n = int(math.ceil(r / pitch)) + 1
    grid = np.linspace(-r / 2, r / 2, n)
    ball = sl2z_ball(2).astype(float)
    Yinv = np.linalg.inv(Y1)
    sys_y = systole_batch(Y1[None])[0]
    # ||n(a) l(c) z|| <= e^{|a| + |c| + |d|} < e^{3 sigma}, and likewise for the inverse
    stretch = math.exp(3.0 * sigma)
    hits = []
    for k in range(0, n, chunk):
        s = grid[k:k + chunk]
        P = reduce_batch(shear_flow_batch(x.rep, s, t))
        sy = systole_batch(P)
        keep = (sy < sys_y * stretch) & (sy > sys_y / stretch)
        P, s = P[keep], s[keep]
        for gam in ball:
            Mx = P @ (gam @ Yinv)
            sign = np.where(Mx[:, 1, 1] < 0, -1.0, 1.0)
            v = Mx[:, 1, 1] * sign
            with np.errstate(divide="ignore", invalid="ignore"):
                a = Mx[:, 0, 1] * sign / v
                c = Mx[:, 1, 0] * sign * v
                d = -np.log(v)
            ok = (v > 0) & (np.abs(a) < sigma) & (np.abs(c) < sigma) & (math.sqrt(2) * np.abs(d) < sigma)
            for i in np.flatnonzero(ok):
                hits.append((float(s[i]), float(a[i]), float(c[i]), float(d[i])))
    hits.sort()
    return hits


def approach_candidates(x, y, t, eps, sigma, r, window, lam=2.0):
    """All certified approach windows at search time t, best first."""
    s1, sp, se = approach_times(t, eps, sigma, r, lam)
    Y1 = np.diag([math.exp(-s1), math.exp(s1)]) @ y.rep
    hits = _search_hits(x, Y1, t, r, sigma)
    tube = neutral_orbit(y, sigma)
    theta = window.epsilon + window.margin
    seen = {}
    for s, a, c, d in hits:
        s3 = s - math.exp(-2 * t) * a
        m = int(round(math.exp(2 * se) * s3 / (2 * r)))
        if m in seen:
            continue
        lo = math.exp(-2 * se) * (2 * r * m - r)
        hi = math.exp(-2 * se) * (2 * r * m + r)
        incl = -r <= lo and hi <= r
        clear = clearance.box_is_clean(x.rep, lo, hi, t, se, theta)
        path = clearance.box_is_clean(x.rep, lo, hi, 0.0, se, theta)
        hs = np.linspace(lo, hi, 11)
        dist = float(np.max(tube_distance(shear_flow_batch(x.rep, hs, sp), tube)))
        seen[m] = ApproachStepResult(m, se, sp, s1, t, (lo, hi), y.rep.tolist(), eps, sigma,
                                     bool(incl), bool(clear), dist, bool(path))
    cands = [c for c in seen.values() if c.passed]
    cands.sort(key=lambda c: (not c.path_clean, c.cert_distance, c.gamma))
    return cands


def approach_step(x, y, t, eps, sigma, tess, window, chart=None, extra_times=(0.0, 1.0, 2.0, 3.0, 4.0),
                  clearance_factor=0.5, y_horizon=None):
    """Steer one window of x towards the neutral tube around y.

    The search time is raised through ``extra_times`` until a certified
    candidate exists.  The target's forward orbit is checked for clearance
    systole >= eps_K (1 + clearance_factor) on [0, y_horizon]; only this
    stretch of it is ever shadowed by the window.
    """
    _require_sl2(x, tess)
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if not eps > 0:
        raise ValueError("eps must be positive")
    if chart is not None and max(sigma, tess.r) >= chart.delta1:
        raise ValueError("sigma and r must lie below the chart radius")
    if systole(x) < window.epsilon:
        raise ValueError("precondition failed: x is not in K")
    horizon = 10.0 if y_horizon is None else y_horizon
    floor = window.epsilon * (1 + clearance_factor)
    if clearance.min_systole_orbit(y.rep, 0.0, horizon) < floor:
        raise ValueError("target orbit lacks clearance from the boundary of K")
    tried = []
    for dt in extra_times:
        cands = approach_candidates(x, y, t + dt, eps, sigma, tess.r, window)
        tried.append(t + dt)
        if cands:
            best = cands[0]
            best.attempts = tried
            return best
    raise ApproachStepError("approach search failed; refine grid or increase t")
