"""The space of unimodular planar lattices X = SL(2,R)/SL(2,Z).

A point gΓ is stored through a reduced representative: the columns of the
matrix form a Gauss-reduced basis of the lattice g Z^2 with determinant +1.

Distances use a genuine right-invariant metric on SL(2,R): for g1, g2 we
compare the Moebius images g1^{-1} p, g2^{-1} p of two base points p = i and
p = 2i in the hyperbolic plane, scaled so that d(exp(b), e) <= ||b||_F.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
import math

import numpy as np

SUPPORTED_PRESETS = ("sl2",)
DEFAULT_GAMMA_RADIUS = 20
MAX_GAMMA_RADIUS = 80
HERMITE_2 = (4.0 / 3.0) ** 0.25
# base points for the metric and the speed bounds that normalize it
_P1, _P2 = 1j, 2j
_K1, _K2 = math.sqrt(2.0), math.sqrt(4.25)
_TIE = 1e-12


class UnsupportedPreset(ValueError):
    pass


def _check_preset(preset):
    if preset not in SUPPORTED_PRESETS:
        raise UnsupportedPreset(
            f"preset {preset!r} has no exact lattice model; only {SUPPORTED_PRESETS} is supported")


@dataclass(frozen=True, eq=False)
class LatticePoint:
    rep: np.ndarray
    preset: str = "sl2"

    def __eq__(self, other):
        return (isinstance(other, LatticePoint) and self.preset == other.preset
                and np.allclose(self.rep, other.rep, rtol=0, atol=1e-9))

    def __hash__(self):
        return hash((self.preset, tuple(np.round(self.rep, 9).ravel())))

    def tolist(self):
        return self.rep.tolist()


@dataclass(frozen=True)
class CompactWindow:
    """The compact set K_eps = {x : systole(x) >= eps}."""
    epsilon: float
    margin: float = 0.0

    def __post_init__(self):
        if not 0 <= self.epsilon < 1.1:
            raise ValueError("epsilon must lie in [0, 1.1)")
        if self.margin < 0:
            raise ValueError("margin must be nonnegative")

    def contains(self, x):
        return systole(x) >= self.epsilon


@dataclass(frozen=True)
class MeasureEstimate:
    value: float
    stderr: float
    samples: int
    seed: int
    exact_sampler: bool = True


# ---------------------------------------------------------------- reduction

def gauss_reduce_batch(U, V, max_iter=200):
    """Gauss-reduce many planar bases at once, keeping det(u, v) unchanged.

    U, V: arrays of shape (N, 2). Swaps are done as (u, v) -> (v, -u).
    """
    U = np.array(U, dtype=float, copy=True)
    V = np.array(V, dtype=float, copy=True)
    for _ in range(max_iter):
        nu = np.einsum("ij,ij->i", U, U)
        m = np.round(np.einsum("ij,ij->i", U, V) / nu)
        V -= m[:, None] * U
        nv = np.einsum("ij,ij->i", V, V)
        sw = nv < nu * (1 - _TIE)
        if not sw.any() and not m.any():
            break
        U[sw], V[sw] = V[sw].copy(), -U[sw]
    return U, V


def _canonicalize(U, V):
    """Pick one representative among the finitely many reduced bases."""
    nu = np.einsum("ij,ij->i", U, U)
    dot = np.einsum("ij,ij->i", U, V)
    # boundary of the reduction strip: keep <u,v> in (-|u|^2/2, |u|^2/2]
    low = dot <= -0.5 * nu * (1 - _TIE)
    V[low] += U[low]
    nv = np.einsum("ij,ij->i", V, V)
    dot = np.einsum("ij,ij->i", U, V)
    tie = np.abs(nv - nu) <= _TIE * nu
    flip_uv = tie & (dot < -_TIE * nu)
    U[flip_uv], V[flip_uv] = V[flip_uv].copy(), -U[flip_uv]
    # orientation: u in the upper half plane (angle in [0, pi))
    neg = (U[:, 1] < -_TIE * np.sqrt(nu)) | ((np.abs(U[:, 1]) <= _TIE * np.sqrt(nu)) & (U[:, 0] < 0))
    U[neg] *= -1
    V[neg] *= -1
    # equal lengths and orthogonal: prefer the smaller angle of u
    orth = tie & (np.abs(dot) <= _TIE * nu)
    if orth.any():
        U2, V2 = V[orth].copy(), -U[orth]
        n2 = (U2[:, 1] < -_TIE) | ((np.abs(U2[:, 1]) <= _TIE) & (U2[:, 0] < 0))
        U2[n2] *= -1
        V2[n2] *= -1
        a1 = np.arctan2(U[orth, 1], U[orth, 0])
        a2 = np.arctan2(U2[:, 1], U2[:, 0])
        better = a2 < a1 - 1e-12
        idx = np.flatnonzero(orth)[better]
        U[idx], V[idx] = U2[better], V2[better]
    return U, V


def reduce_batch(G):
    G = np.asarray(G, dtype=float)
    U, V = gauss_reduce_batch(G[:, :, 0], G[:, :, 1])
    U, V = _canonicalize(U, V)
    return np.stack([U, V], axis=2)


def systole_batch(G):
    """Length of the shortest nonzero vector of each lattice G[i] Z^2."""
    G = np.asarray(G, dtype=float)
    U, V = gauss_reduce_batch(G[:, :, 0], G[:, :, 1])
    return np.sqrt(np.minimum(np.einsum("ij,ij->i", U, U), np.einsum("ij,ij->i", V, V)))


def reduce(g, preset="sl2"):
    _check_preset(preset)
    g = np.asarray(g, dtype=float)
    if abs(np.linalg.det(g) - 1) > 1e-6:
        raise ValueError("not unimodular")
    return LatticePoint(reduce_batch(g[None])[0], preset)


def systole(x):
    """Shortest nonzero vector of the lattice rep * Z^2."""
    rep = x.rep if isinstance(x, LatticePoint) else np.asarray(x, dtype=float)
    u, v = gauss_reduce_batch(rep[None, :, 0], rep[None, :, 1])
    # a reduced planar basis realizes the minimum; confirm over small combinations
    best = np.inf
    for m in range(-2, 3):
        for n in range(-2, 3):
            if m or n:
                w = m * u[0] + n * v[0]
                best = min(best, math.hypot(w[0], w[1]))
    return float(best)


def flow_matrix(t):
    if abs(t) > 350:
        raise OverflowError(f"flow time {t} overflows double precision")
    return np.diag([math.exp(t), math.exp(-t)])


def flow_point(t, x):
    return reduce(flow_matrix(t) @ x.rep, x.preset)


def point_from_alpha(alpha):
    return reduce(np.array([[1.0, alpha], [0.0, 1.0]]))


def identity_point():
    return reduce(np.eye(2))


# ------------------------------------------------------- hyperbolic metric

def mobius(M, z):
    """Action of M (shape (..., 2, 2)) on points z of the upper half plane."""
    M = np.asarray(M, dtype=float)
    return (M[..., 0, 0] * z + M[..., 0, 1]) / (M[..., 1, 0] * z + M[..., 1, 1])


def hyperbolic_distance(z, w):
    num = np.abs(z - w)
    den = 2 * np.sqrt(np.imag(z) * np.imag(w))
    return 2 * np.arcsinh(num / den)


def reduce_to_fundamental_domain(z, max_iter=200):
    """Map points to the standard fundamental domain of SL(2,Z).

    Returns the reduced points and the integer matrices delta with
    delta . z = reduced point.
    """
    z = np.atleast_1d(np.asarray(z, dtype=complex)).copy()
    N = z.shape[0]
    delta = np.broadcast_to(np.eye(2, dtype=np.int64), (N, 2, 2)).copy()
    for _ in range(max_iter):
        n = np.round(z.real)
        z -= n
        T = np.broadcast_to(np.eye(2, dtype=np.int64), (N, 2, 2)).copy()
        T[:, 0, 1] = -n.astype(np.int64)
        delta = T @ delta
        inv = np.abs(z) < 1 - 1e-14
        if not inv.any() and not n.any():
            break
        z[inv] = -1 / z[inv]
        S = np.array([[0, -1], [1, 0]], dtype=np.int64)
        delta[inv] = S @ delta[inv]
    return z, delta


@lru_cache(maxsize=8)
def sl2z_ball(R):
    """All integer matrices with |entries| <= R and determinant 1."""
    r = np.arange(-R, R + 1)
    a, b, c = np.meshgrid(r, r, r, indexing="ij")
    a, b, c = a.ravel(), b.ravel(), c.ravel()
    nz = a != 0
    num = 1 + b[nz] * c[nz]
    ok = num % a[nz] == 0
    d = num[ok] // a[nz][ok]
    keep = np.abs(d) <= R
    mats = [np.stack([a[nz][ok][keep], b[nz][ok][keep], c[nz][ok][keep], d[keep]], axis=1)]
    # a = 0 forces b c = -1
    for bb, cc in ((1, -1), (-1, 1)):
        dd = r
        mats.append(np.stack([np.zeros_like(dd), np.full_like(dd, bb), np.full_like(dd, cc), dd], axis=1))
    out = np.concatenate(mats).reshape(-1, 2, 2)
    out.setflags(write=False)
    return out


def _anchor_points(g_inv):
    """Moebius images of the two metric base points, moved into the fundamental domain."""
    g_inv = np.asarray(g_inv, dtype=float).reshape(-1, 2, 2)
    w1 = mobius(g_inv, _P1)
    w2 = mobius(g_inv, _P2)
    w1r, delta = reduce_to_fundamental_domain(w1)
    w2r = mobius(delta.astype(float), w2)
    return w1r, w2r


def _metric_from_points(a1, a2, b1, b2):
    return np.maximum(hyperbolic_distance(a1, b1) / _K1, hyperbolic_distance(a2, b2) / _K2)


def group_distance(g1, g2):
    """Right-invariant distance on SL(2,R) (no quotient)."""
    i1, i2 = np.linalg.inv(g1), np.linalg.inv(g2)
    return float(_metric_from_points(mobius(i1, _P1), mobius(i1, _P2), mobius(i2, _P1), mobius(i2, _P2)))


def _dist_with_ball(a1, a2, b1, b2, R, exclude_identity=False):
    ball = sl2z_ball(R).astype(float)
    d = _metric_from_points(mobius(ball, a1), mobius(ball, a2), b1, b2)
    if exclude_identity:
        ident = np.all(np.abs(np.abs(ball) - np.eye(2)) == 0, axis=(1, 2)) & (ball[:, 0, 1] == 0)
        d = np.where(ident, np.inf, d)
    return float(np.min(d))


def dist_point(x1, x2, radius=DEFAULT_GAMMA_RADIUS):
    """Distance in X: min over gamma of d(g1 gamma, g2), radius doubled until stable."""
    (a1,), (a2,) = _anchor_points(np.linalg.inv(x1.rep)[None])
    (b1,), (b2,) = _anchor_points(np.linalg.inv(x2.rep)[None])
    R = radius
    best = _dist_with_ball(a1, a2, b1, b2, R)
    while R < MAX_GAMMA_RADIUS:
        R *= 2
        nxt = _dist_with_ball(a1, a2, b1, b2, R)
        if abs(nxt - best) <= 1e-12:
            break
        best = nxt
    return max(best, 0.0)


def dist_to_points(x, ys, radius=4):
    """dist_point(x, y) for many targets y (given as reduced reps), small fixed radius."""
    (a1,), (a2,) = _anchor_points(np.linalg.inv(x.rep)[None])
    ys = np.asarray(ys, dtype=float)
    b1, b2 = _anchor_points(np.linalg.inv(ys))
    ball = sl2z_ball(radius).astype(float)
    e1 = mobius(ball, a1)[:, None]
    e2 = mobius(ball, a2)[:, None]
    return np.min(_metric_from_points(e1, e2, b1[None], b2[None]), axis=0)


def local_injectivity_radius(x, radius=DEFAULT_GAMMA_RADIUS):
    """Half the distance from rep to its nearest distinct translate rep*gamma."""
    (a1,), (a2,) = _anchor_points(np.linalg.inv(x.rep)[None])
    return 0.5 * _dist_with_ball(a1, a2, a1, a2, radius, exclude_identity=True)


# ------------------------------------------------------------ Haar measure

def haar_sample(n, rng):
    """Haar-random representatives for SL(2,R)/SL(2,Z).

    g^{-1} = b(z) k(theta) with z uniform for dx dy / y^2 on the standard
    fundamental domain and theta uniform on [0, pi).
    """
    xs, ys = [], []
    need = n
    while need > 0:
        m = int(need * 1.15) + 16
        x = rng.uniform(-0.5, 0.5, m)
        y = (math.sqrt(3) / 2) / (1.0 - rng.uniform(0.0, 1.0, m))
        ok = x * x + y * y >= 1
        xs.append(x[ok][:need])
        ys.append(y[ok][:need])
        need -= len(xs[-1])
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    th = rng.uniform(0.0, math.pi, n)
    sy = np.sqrt(y)
    binv = np.zeros((n, 2, 2))
    binv[:, 0, 0] = 1 / sy
    binv[:, 0, 1] = -x / sy
    binv[:, 1, 1] = sy
    c, s = np.cos(th), np.sin(th)
    kinv = np.empty((n, 2, 2))
    kinv[:, 0, 0] = c
    kinv[:, 0, 1] = s
    kinv[:, 1, 0] = -s
    kinv[:, 1, 1] = c
    return kinv @ binv


def _shard_sizes(samples, shards):
    base, extra = divmod(samples, shards)
    return [base + (i < extra) for i in range(shards)]


def measure_estimate(window, samples, seed, preset="sl2", shards=8, threads=None):
    """Monte Carlo Haar measure of K_eps, deterministic in (seed, shards)."""
    if preset not in SUPPORTED_PRESETS:
        raise UnsupportedPreset(
            f"no exact Haar sampler for preset {preset!r}; use an importance-sampling fallback")
    if samples < 1000:
        raise ValueError("measure_estimate needs at least 1000 samples")
    if window.epsilon <= 0:
        return MeasureEstimate(1.0, 0.0, samples, seed)
    seqs = np.random.SeedSequence(seed).spawn(shards)

    def run(i):
        rng = np.random.default_rng(seqs[i])
        n = _shard_sizes(samples, shards)[i]
        return int(np.count_nonzero(systole_batch(haar_sample(n, rng)) >= window.epsilon))

    with ThreadPoolExecutor(max_workers=threads) as ex:
        hits = sum(ex.map(run, range(shards)))
    p = hits / samples
    return MeasureEstimate(p, math.sqrt(p * (1 - p) / samples), samples, seed)


def sample_window(window, samples, seed):
    """Haar-random points conditioned on lying in K_eps (rejection)."""
    rng = np.random.default_rng(seed)
    out = []
    have = 0
    while have < samples:
        G = haar_sample(max(2 * samples, 64), rng)
        G = G[systole_batch(G) >= window.epsilon]
        out.append(G)
        have += len(G)
    return reduce_batch(np.concatenate(out)[:samples])


def injectivity_radius_estimate(window, samples=500, seed=0):
    """Lower estimate of the injectivity radius over K_eps from Haar samples."""
    if window.epsilon <= 0:
        raise ValueError("noncompact window")
    rng = np.random.default_rng(seed)
    G = haar_sample(samples, rng)
    G = G[systole_batch(G) >= window.epsilon]
    if len(G) == 0:
        return float("inf")
    a1, a2 = _anchor_points(np.linalg.inv(G))
    ball = sl2z_ball(4).astype(float)
    ident = (np.abs(ball[:, 0, 1]) == 0) & (np.abs(ball[:, 1, 0]) == 0)
    ball = ball[~ident]
    d = _metric_from_points(mobius(ball[:, None], a1[None]), mobius(ball[:, None], a2[None]),
                            a1[None], a2[None])
    return float(0.5 * np.min(d))


# ------------------------------------------------------ continued fractions

@dataclass(frozen=True)
class CFExpansion:
    quotients: tuple
    terminated: bool


def continued_fraction(alpha, n):
    """First n partial quotients of alpha via the Gauss map.

    The map runs in exact rational arithmetic on the binary value of alpha,
    so no rounding accumulates; expansion of a float always terminates
    eventually, and ``terminated`` flags that.
    """
    if n > 64:
        raise ValueError("at most 64 partial quotients are meaningful in double precision")
    x = Fraction(alpha)
    out = []
    for _ in range(n):
        a = math.floor(x)
        out.append(int(a))
        frac = x - a
        if frac == 0:
            return CFExpansion(tuple(out), True)
        x = 1 / frac
    return CFExpansion(tuple(out), False)


# ------------------------------------------------ high-precision lattices

def mp_workdps(T):
    """Decimal digits that keep e^{2T}-amplified errors far below double precision."""
    return 40 + int(math.ceil(2 * max(T, 0.0) / math.log(10)))


def mp_reduce(u, v, max_iter=10_000):
    """Gauss reduction of a basis given as two mpf column pairs, det preserved."""
    import mpmath as mp
    for _ in range(max_iter):
        nu = u[0] ** 2 + u[1] ** 2
        m = mp.nint((u[0] * v[0] + u[1] * v[1]) / nu)
        if m:
            v = (v[0] - m * u[0], v[1] - m * u[1])
        if v[0] ** 2 + v[1] ** 2 < nu:
            u, v = v, (-u[0], -u[1])
        elif not m:
            return u, v
    raise RuntimeError("mp reduction did not converge")


def mp_from_matrix(g):
    import mpmath as mp
    g = [[mp.mpf(float(g[i][j])) if not isinstance(g[i][j], mp.mpf) else g[i][j] for j in range(2)]
         for i in range(2)]
    return (g[0][0], g[1][0]), (g[0][1], g[1][1])


def mp_flow_shift(basis, t, shift):
    """Basis of h_shift g_t L for L spanned by ``basis``, reduced."""
    import mpmath as mp
    et, emt = mp.e ** t, mp.e ** (-t)
    out = []
    for w in basis:
        a, b = et * w[0], emt * w[1]
        out.append((a + shift * b, b))
    return mp_reduce(out[0], out[1])


def mp_to_rep(basis):
    """Float canonical reduced representative of an mp basis."""
    u, v = basis
    G = np.array([[float(u[0]), float(v[0])], [float(u[1]), float(v[1])]])
    return reduce_batch(G[None])[0]
