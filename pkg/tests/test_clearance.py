import math

import numpy as np
import pytest

from orbittree import clearance as C
from orbittree import modular as M


def grid_min_systole(B, s_lo, s_hi, u0, u1, n=250):
    S, U = np.meshgrid(np.linspace(s_lo, s_hi, n), np.linspace(u0, u1, n))
    S, U = S.ravel(), U.ravel()
    G = np.zeros((len(S), 2, 2))
    G[:, 0, 0] = np.exp(U) * (B[0, 0] + S * B[1, 0])
    G[:, 0, 1] = np.exp(U) * (B[0, 1] + S * B[1, 1])
    G[:, 1, 0] = np.exp(-U) * B[1, 0]
    G[:, 1, 1] = np.exp(-U) * B[1, 1]
    return M.systole_batch(G).min()


def test_lattice_points_in_box_matches_enumeration():
    rng = np.random.default_rng(0)
    for B in M.haar_sample(10, rng):
        A, Bm = rng.uniform(0.2, 3.0, 2)
        got = {tuple(np.round(w, 9)) for w in C.lattice_points_in_box(B, A, Bm)}
        want = set()
        for a in range(-40, 41):
            for b in range(-40, 41):
                w = B @ np.array([a, b])
                if (a or b) and abs(w[0]) < A and abs(w[1]) < Bm:
                    want.add(tuple(np.round(w, 9)))
        assert got == want


def test_exact_minimum_is_a_lower_bound_and_tight():
    rng = np.random.default_rng(1)
    gaps = []
    for B in M.reduce_batch(M.haar_sample(25, rng)):
        s_lo, s_hi = np.sort(rng.uniform(-0.3, 0.3, 2))
        u0, u1 = np.sort(rng.uniform(0.0, 3.0, 2))
        exact = C.min_systole_box(B, s_lo, s_hi, u0, u1, cap=1.2)
        sampled = min(grid_min_systole(B, s_lo, s_hi, u0, u1), 1.2)
        assert exact <= sampled + 1e-12
        gaps.append(sampled - exact)
    assert max(gaps) < 5e-3


def test_box_is_clean_agrees_with_minimum():
    rng = np.random.default_rng(2)
    for B in M.reduce_batch(M.haar_sample(25, rng)):
        m = C.min_systole_box(B, -0.05, 0.05, 0.0, 2.0, cap=2.0)
        assert C.box_is_clean(B, -0.05, 0.05, 0.0, 2.0, m * 0.999)
        assert not C.box_is_clean(B, -0.05, 0.05, 0.0, 2.0, m * 1.001)


def test_surviving_children_against_dense_sampling():
    B = M.identity_point().rep
    t, r = 3.0, 0.05
    M_ = int((math.exp(2 * t) - 1) // 2)
    got = set(C.surviving_children(B, t, r, -M_, M_, 0.3).tolist())
    sc = math.exp(-2 * t)
    want = set()
    for m in range(-M_, M_ + 1):
        s = np.linspace(sc * (2 * r * m - r), sc * (2 * r * m + r), 200)
        G = np.array([M.flow_matrix(t) @ np.array([[1, v], [0, 1]]) @ B for v in s])
        if M.systole_batch(G).min() >= 0.3:
            want.add(m)
    assert got == want


def test_sharded_ranges_agree():
    rng = np.random.default_rng(4)
    B = M.reduce_batch(M.haar_sample(1, rng))[0]
    full = C.surviving_children(B, 4.0, 0.05, -1490, 1490, 0.3, u0=0.0)
    parts = np.concatenate([C.surviving_children(B, 4.0, 0.05, a, b, 0.3, u0=0.0)
                            for a, b in ((-1490, -3), (-2, 700), (701, 1490))])
    assert np.array_equal(full, parts)


def test_orbit_minimum_for_badly_approximable_point():
    # the forward orbit of x_sqrt2 stays above sqrt(2 / (2 sqrt 2)) ~ 0.84 up to rounding
    y = M.point_from_alpha(math.sqrt(2))
    assert 0.8 < C.min_systole_orbit(y.rep, 0.0, 12.0) < 0.9
    assert C.min_systole_orbit(M.identity_point().rep, 0.0, 3.0) == pytest.approx(math.exp(-3))
