"""Box tessellations of an abelian expanding group H and their expansion counts.

In exponential coordinates with respect to basis_h, V_r is the open cube
|c_i| < r and its translates are indexed by the lattice 2r Z^d.  Since Phi_t
is linear in these coordinates, containment of a translate in Phi_t(V_r) is
decided exactly at the cube's corners.
"""
from __future__ import annotations

from dataclasses import dataclass
import itertools
import json
import math

import numpy as np

from .algebra import bracket, expansion_matrix, frobenius

EXPANSION_CAP = 10_000_000
_REL = 1e-12


class ExpansionCapError(RuntimeError):
    pass


@dataclass(frozen=True)
class TessellationDomain:
    r: float
    basis: tuple
    weights: tuple
    lattice_step: float
    expansion: object = None  # optional callable t -> matrix, for non-diagonal actions

    @property
    def dim(self):
        return len(self.basis)

    @property
    def volume(self):
        return (2 * self.r) ** self.dim

    def contains(self, c):
        return bool(np.all(np.abs(np.asarray(c, dtype=float)) < self.r))

    def to_json(self):
        return json.dumps({
            "r": self.r,
            "basis": [np.asarray(b).tolist() for b in self.basis],
            "weights": list(self.weights),
            "step": self.lattice_step,
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        basis = tuple(np.array(b, dtype=float) for b in d["basis"])
        return cls(float(d["r"]), basis, tuple(d["weights"]), float(d["step"]))


def make_tessellation(decomp, r):
    if not r > 0:
        raise ValueError("tessellation radius r must be positive")
    hb = decomp.basis_h
    for a, b in itertools.combinations(hb, 2):
        if frobenius(bracket(a, b)) > 1e-10:
            raise ValueError("non-abelian expanding group unsupported")
    L = expansion_matrix(decomp, 1.0)
    diagonal = np.allclose(L, np.diag(np.diag(L)), atol=1e-10)
    expansion = None if diagonal else (lambda t, d=decomp: expansion_matrix(d, t))
    return TessellationDomain(float(r), tuple(hb), tuple(float(w) for w in decomp.weights_h),
                              2.0 * float(r), expansion)


def axis_count(weight, t):
    """Number of m with |2m| r + r <= e^{weight t} r."""
    f = math.exp(weight * t)
    return 2 * int(math.floor((f - 1) / 2 * (1 + _REL) + _REL)) + 1


def expansion_factor(tess, t):
    if tess.expansion is not None:
        return float(abs(np.linalg.det(tess.expansion(t))))
    return math.exp(sum(tess.weights) * t)


def volume_ratio(tess, t):
    """vol(Phi_t(V_r)) / vol(V_r), from the corner images of the cube."""
    L = tess.expansion(t) if tess.expansion is not None else np.diag(np.exp(np.array(tess.weights) * t))
    return float(abs(np.linalg.det(L)))


def children_count(tess, t):
    if t < 0:
        raise ValueError("t must be nonnegative")
    if tess.expansion is None:
        n = 1
        for w in tess.weights:
            n *= axis_count(w, t)
        return n
    return len(children_in_expansion(tess, t))


def children_in_expansion(tess, t, cap=EXPANSION_CAP):
    """Lattice indices m (tuples) with V + 2rm inside Phi_t(V), closures allowed to touch."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    r = tess.r
    if tess.expansion is None:
        counts = [axis_count(w, t) for w in tess.weights]
        if math.prod(counts) > cap:
            raise ExpansionCapError("expansion cap exceeded")
        ranges = [range(-(c // 2), c // 2 + 1) for c in counts]
        return [tuple(m) for m in itertools.product(*ranges)]
    L = tess.expansion(t)
    Linv = np.linalg.inv(L)
    ext = np.abs(L).sum(axis=1) * r
    bounds = [int(math.floor(e / (2 * r))) for e in ext]
    if math.prod(2 * b + 1 for b in bounds) > cap:
        raise ExpansionCapError("expansion cap exceeded")
    corners = np.array(list(itertools.product((-r, r), repeat=tess.dim)))
    out = []
    for m in itertools.product(*[range(-b, b + 1) for b in bounds]):
        pts = (corners + 2 * r * np.array(m)) @ Linv.T
        if np.all(np.abs(pts) <= r * (1 + _REL)):
            out.append(tuple(m))
    return out


def verify_tessellation(tess, sample_ball_radius=1.0, samples=10_000, seed=0, step=None):
    """Check (a) null boundary, (b) disjoint interiors, (c) covering.

    ``step`` overrides the lattice step, for fault injection.
    """
    r = tess.r
    step = tess.lattice_step if step is None else step
    d = tess.dim
    report = {"a": True, "b": True, "c": True, "violations": []}
    # (b): two cubes of half-width r centred at lattice points overlap iff
    # every coordinate difference is below 2r
    nmax = int(math.ceil(sample_ball_radius / step))
    pts = np.array(list(itertools.product(range(-nmax, nmax + 1), repeat=d)), dtype=float) * step
    diffs = pts[:, None, :] - pts[None, :, :]
    overlap = np.all(np.abs(diffs) < 2 * r * (1 - _REL), axis=2)
    np.fill_diagonal(overlap, False)
    if overlap.any():
        i, j = np.argwhere(overlap)[0]
        report["b"] = False
        report["violations"].append(f"(b) interiors of translates {pts[i].tolist()} and {pts[j].tolist()} overlap")
    # (c): every random point lies in the closure of its nearest translate
    rng = np.random.default_rng(seed)
    x = rng.uniform(-sample_ball_radius, sample_ball_radius, (samples, d))
    nearest = np.round(x / step) * step
    miss = np.any(np.abs(x - nearest) > r * (1 + _REL), axis=1)
    if miss.any():
        report["c"] = False
        report["violations"].append(f"(c) {int(miss.sum())} of {samples} points uncovered")
    report["passed"] = report["a"] and report["b"] and report["c"]
    return report
