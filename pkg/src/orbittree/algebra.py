"""Matrix Lie algebra machinery for a one-parameter flow g_t = exp(t a0).

Everything here works with concrete n x n real matrices and an explicit
basis of the Lie algebra. The Frobenius inner product is used throughout.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm, logm

# |t| * ||a0|| beyond this overflows exp() for double precision.
MAX_FLOW_EXPONENT = 350.0
DIAG_COND_LIMIT = 1e8
EIG_TOL = 1e-8


def E(i, j, n):
    m = np.zeros((n, n))
    m[i, j] = 1.0
    return m


@dataclass(frozen=True)
class Preset:
    name: str
    generator: np.ndarray
    basis: tuple

    @property
    def n(self):
        return self.generator.shape[0]

    @property
    def group_dim(self):
        return len(self.basis)

    def to_json(self):
        return json.dumps({
            "name": self.name,
            "generator": self.generator.tolist(),
            "basis": [b.tolist() for b in self.basis],
            "group_dim": self.group_dim,
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        basis = tuple(np.array(b, dtype=float) for b in d["basis"])
        if len(basis) != d["group_dim"]:
            raise ValueError("group_dim does not match basis length")
        return cls(d["name"], np.array(d["generator"], dtype=float), basis)


def _sl2_basis():
    return (E(0, 1, 2), np.diag([1.0, -1.0]), E(1, 0, 2))


def _sl2_semidirect_basis():
    # SL(2,R) x| R^2 realized as [[A, v], [0, 1]]; algebra is [[X, w], [0, 0]].
    return (E(0, 1, 3), np.diag([1.0, -1.0, 0.0]), E(1, 0, 3), E(0, 2, 3), E(1, 2, 3))


def _sl3_basis():
    off = [E(i, j, 3) for i in range(3) for j in range(3) if i != j]
    return tuple(off) + (np.diag([1.0, -1.0, 0.0]), np.diag([0.0, 1.0, -1.0]))


PRESETS = {
    "sl2": Preset("sl2", np.diag([1.0, -1.0]), _sl2_basis()),
    "sl2_semidirect": Preset("sl2_semidirect", np.diag([1.0, -1.0, 0.0]), _sl2_semidirect_basis()),
    "sl3_21": Preset("sl3_21", np.diag([2.0, -1.0, -1.0]), _sl3_basis()),
}


def get_preset(name):
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def bracket(a, b):
    return a @ b - b @ a


def frobenius(a):
    return float(np.sqrt(np.sum(np.asarray(a) ** 2)))


def _flat(basis):
    return np.array([np.asarray(b, dtype=float).ravel() for b in basis]).T


def coordinates(m, basis):
    """Coordinates of matrix ``m`` in ``basis`` (least squares)."""
    B = _flat(basis)
    c, *_ = np.linalg.lstsq(B, np.asarray(m, dtype=float).ravel(), rcond=None)
    return c


def combine(coords, basis):
    return sum(c * b for c, b in zip(coords, basis))


def group_exp(b):
    return expm(np.asarray(b, dtype=float))


def group_log(g):
    out = logm(np.asarray(g, dtype=float))
    return np.real(out)


def adjoint_operator(a0, basis):
    """Matrix of b -> [a0, b] in the given ordered basis."""
    a0 = np.asarray(a0, dtype=float)
    if not np.any(a0):
        raise ValueError("generator a0 must be nonzero")
    B = _flat(basis)
    if np.linalg.matrix_rank(B) < len(basis):
        raise ValueError("basis is rank-deficient")
    cols = [coordinates(bracket(a0, b), basis) for b in basis]
    return np.array(cols).T


@dataclass(frozen=True)
class WeightDecomposition:
    generator: np.ndarray
    weights: np.ndarray
    basis_h: tuple
    basis_n: tuple
    basis_hminus: tuple
    weights_h: np.ndarray
    chi: float
    lambda_min: float
    basis: tuple = field(repr=False, default=())

    @property
    def dims(self):
        return len(self.basis_h), len(self.basis_n), len(self.basis_hminus)

    @property
    def full_basis(self):
        return self.basis_h + self.basis_n + self.basis_hminus


def _gram(basis):
    B = _flat(basis)
    return B.T @ B


def _orthonormalize(vectors, basis):
    """Gram-Schmidt on coefficient vectors w.r.t. the Frobenius form."""
    L = np.linalg.cholesky(_gram(basis))
    Y = np.array([L.T @ v for v in vectors]).T
    Q, R = np.linalg.qr(Y)
    rank = int(np.sum(np.abs(np.diag(R)) > 1e-10))
    Q = Q[:, :rank]
    return [np.linalg.solve(L.T, q) for q in Q.T]


def _canonical_sign(m):
    k = np.argmax(np.abs(m))
    return m if m.flat[k] >= 0 else -m


def _real_nullspace(M, k):
    _, s, vh = np.linalg.svd(M)
    return vh[len(s) - k:].conj() if k else np.zeros((0, M.shape[1]))


def weight_decomposition(a0, basis=None):
    """Split the algebra into expanding, neutral and contracting parts.

    Each returned basis vector is an eigenvector of ad(a0) (or the real or
    imaginary part of one, for complex weights), orthonormal within its
    eigenspace.
    """
    if isinstance(a0, Preset):
        a0, basis = a0.generator, a0.basis
    ad = adjoint_operator(a0, basis)
    dim = ad.shape[0]
    vals, vecs = np.linalg.eig(ad)
    cond = np.linalg.cond(vecs)
    if not np.isfinite(cond) or cond > DIAG_COND_LIMIT:
        raise ValueError("generator not ad-diagonalizable")

    # cluster eigenvalues
    groups = []
    for lam in vals:
        for g in groups:
            if abs(g[0] - lam) < EIG_TOL * max(1.0, abs(lam)):
                g[1] += 1
                break
        else:
            groups.append([lam, 1])

    blocks = {"h": [], "n": [], "hm": []}
    for lam, mult in groups:
        if lam.imag < -EIG_TOL:
            continue  # handled by its conjugate
        M = ad - lam * np.eye(dim)
        ns = _real_nullspace(M, mult)
        if abs(lam.imag) <= EIG_TOL:
            cand = [np.real(v) if np.linalg.norm(np.real(v)) > np.linalg.norm(np.imag(v)) else np.imag(v)
                    for v in ns]
            lamr = float(lam.real)
            count = mult
        else:
            cand = [np.real(v) for v in ns] + [np.imag(v) for v in ns]
            lamr = lam
            count = 2 * mult
        vecs_on = _orthonormalize(cand, basis)
        if len(vecs_on) != count:
            raise ValueError("generator not ad-diagonalizable")
        re = float(np.real(lam))
        key = "h" if re > EIG_TOL else ("hm" if re < -EIG_TOL else "n")
        for v in vecs_on:
            blocks[key].append((lamr, _canonical_sign(combine(v, basis))))

    for key in blocks:
        blocks[key].sort(key=lambda p: (-np.real(p[0]), -np.imag(p[0])))

    pos = [float(np.real(v)) for v in vals if np.real(v) > EIG_TOL]
    if not pos:
        raise ValueError("expanding subalgebra is zero")
    if len(blocks["n"]) == dim:
        raise ValueError("neutral subalgebra is the whole algebra")
    return WeightDecomposition(
        generator=np.asarray(a0, dtype=float),
        weights=np.sort_complex(vals.astype(complex))[::-1],
        basis_h=tuple(m for _, m in blocks["h"]),
        basis_n=tuple(m for _, m in blocks["n"]),
        basis_hminus=tuple(m for _, m in blocks["hm"]),
        weights_h=np.array([w for w, _ in blocks["h"]]),
        chi=float(sum(pos)),
        lambda_min=float(min(pos)),
        basis=tuple(basis),
    )


def _check_exponent(t, a0):
    if abs(t) * np.linalg.norm(a0, 2) > MAX_FLOW_EXPONENT:
        raise OverflowError(f"flow time {t} overflows double precision")


def flow_element(t, a0):
    a0 = np.asarray(a0, dtype=float)
    _check_exponent(t, a0)
    if np.count_nonzero(a0 - np.diag(np.diagonal(a0))) == 0:
        return np.diag(np.exp(t * np.diagonal(a0)))
    return expm(t * a0)


def conjugate_flow(t, g, a0):
    """Phi_t(g) = g_t g g_{-t}."""
    return flow_element(t, a0) @ np.asarray(g, dtype=float) @ flow_element(-t, a0)


def adjoint_action(t, b, a0):
    """Ad(g_t) b, i.e. exp(t ad_a0) b."""
    return conjugate_flow(t, b, a0)


def expansion_matrix(decomp, t):
    """Matrix of Phi_t restricted to h, in the coordinates of basis_h."""
    cols = [coordinates(adjoint_action(t, b, decomp.generator), decomp.basis_h) for b in decomp.basis_h]
    return np.array(cols).T


def trace_on_h(decomp):
    ad = adjoint_operator(decomp.generator, decomp.basis_h + decomp.basis_n + decomp.basis_hminus)
    k = len(decomp.basis_h)
    return float(np.trace(ad[:k, :k]))


def contraction_threshold(decomp, t_grid=None):
    """Smallest grid time after which ||Ad(g_{-t}) v|| <= exp(-lambda_min t / 2) ||v|| on basis_h."""
    if t_grid is None:
        t_grid = np.linspace(0.0, 10.0, 201)
    ok = []
    for t in t_grid:
        good = True
        for v in decomp.basis_h:
            lhs = frobenius(adjoint_action(-t, v, decomp.generator))
            if lhs > np.exp(-decomp.lambda_min * t / 2) * frobenius(v) + 1e-12:
                good = False
                break
        ok.append(good)
    for i in range(len(t_grid)):
        if all(ok[i:]):
            return float(t_grid[i])
    return float("inf")


@dataclass(frozen=True)
class ProductChart:
    delta1: float
    c: float
    C_neutral: float = 1.0
    r0: float = 0.1

    def __post_init__(self):
        if not self.delta1 > 0:
            raise ValueError("delta1 must be positive")
        if not 0 < self.c < 1:
            raise ValueError("c must lie in (0, 1)")


class ChartError(ValueError):
    pass


def product_decompose(g, decomp, chart, tol=1e-10, max_iter=100):
    """Write g = h * hminus * z with h in H, hminus in H^-, z in Z.

    Damped Newton iteration in exponential coordinates.
    """
    g = np.asarray(g, dtype=float)
    n = g.shape[0]
    eye = np.eye(n)
    logg = group_log(g)
    if frobenius(logg) >= chart.c * chart.delta1:
        raise ChartError("outside product chart")
    bh, bn, bm = decomp.basis_h, decomp.basis_n, decomp.basis_hminus
    full = bh + bm + bn
    kh, km = len(bh), len(bm)
    ginv = np.linalg.inv(g)

    def parts(theta):
        h = group_exp(combine(theta[:kh], bh))
        hm = group_exp(combine(theta[kh:kh + km], bm))
        z = group_exp(combine(theta[kh + km:], bn)) if bn else eye
        return h, hm, z

    def residual(theta):
        h, hm, z = parts(theta)
        return coordinates(group_log(h @ hm @ z @ ginv), full)

    theta = coordinates(logg, full)
    res = residual(theta)
    nres = np.linalg.norm(res)
    for _ in range(max_iter):
        if nres < tol:
            h, hm, z = parts(theta)
            return h, hm, z
        J = np.empty((len(theta), len(theta)))
        step = 1e-7
        for j in range(len(theta)):
            d = np.zeros_like(theta)
            d[j] = step
            J[:, j] = (residual(theta + d) - residual(theta - d)) / (2 * step)
        delta = np.linalg.solve(J, res)
        lam = 1.0
        while True:
            cand = theta - lam * delta
            r2 = residual(cand)
            if np.linalg.norm(r2) < nres or lam < 1e-4:
                break
            lam *= 0.5
        theta, res, nres = cand, r2, np.linalg.norm(r2)
    if nres < tol:
        return parts(theta)
    raise ChartError("product decomposition did not converge")


def find_product_chart(decomp, c=0.5, start=0.5, samples=64, seed=0, max_halvings=10):
    """Shrink delta1 from ``start`` until random recompositions pass."""
    rng = np.random.default_rng(seed)
    full = decomp.full_basis
    delta1 = start
    for _ in range(max_halvings):
        chart = ProductChart(delta1=delta1, c=c)
        good = True
        for _ in range(samples):
            v = rng.normal(size=len(full))
            v *= 0.999 * c * delta1 * rng.uniform() / np.linalg.norm(combine(v, full))
            g = group_exp(combine(v, full))
            try:
                h, hm, z = product_decompose(g, decomp, chart)
            except ChartError:
                good = False
                break
            if np.max(np.abs(h @ hm @ z - g)) > 1e-8 or max(
                    frobenius(group_log(m)) for m in (h, hm, z)) > delta1:
                good = False
                break
        if good:
            return ProductChart(delta1=delta1, c=c, r0=delta1)
        delta1 /= 2
    raise ChartError("no product chart found")


def neutral_distortion_bound(decomp, chart, samples=10_000, T=10.0, seed=0):
    """Monte Carlo estimate of sup ||log Phi_t(z)|| / ||log z|| over z near e in Z."""
    if samples <= 0:
        raise ValueError("empty sample set")
    if not decomp.basis_n:
        return 1.0
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(samples):
        w = combine(rng.normal(size=len(decomp.basis_n)), decomp.basis_n)
        w *= chart.r0 * rng.uniform(0.01, 1.0) / frobenius(w)
        t = rng.uniform(-T, T)
        best = max(best, frobenius(adjoint_action(t, w, decomp.generator)) / frobenius(w))
    return best
