import math

import numpy as np
import pytest

from orbittree import algebra as A
from orbittree import clearance as C
from orbittree import modular as M
from orbittree import steps as S
from orbittree import tessellation as T

TESS = T.make_tessellation(A.weight_decomposition(A.get_preset("sl2")), 0.05)
WIN = M.CompactWindow(0.3, 0.01)


def hex_point():
    return M.reduce(np.array([[1, 0.5], [0, 1]]) @ np.diag([3 ** 0.25 / 2 ** 0.5, 2 ** 0.5 / 3 ** 0.25]))


def test_containment_agrees_with_refined_grid_and_exact_kernel():
    x, t, r = hex_point(), 3.0, 0.05
    sc = math.exp(-2 * t)
    lo, hi = S.child_range(r, t)
    rng = np.random.default_rng(0)
    for m in rng.integers(lo, hi + 1, 40):
        box = (sc * (2 * r * m - r), sc * (2 * r * m + r))
        fine = M.systole_batch(S.shear_flow_batch(x.rep, np.linspace(*box, 4001), t)).min()
        exact = C.min_systole_box(x.rep, box[0], box[1], t, t, cap=2.0)
        assert exact <= fine + 1e-12 and fine - exact < 1e-4
        ok = S.containment_certify(box, t, x, WIN)
        if ok:
            assert fine >= 0.31
        elif fine > 0.32:
            pytest.fail("certificate too pessimistic")


def test_containment_needs_margin():
    with pytest.raises(ValueError):
        S.containment_certify((0, 0.01), 1.0, hex_point(), M.CompactWindow(0.3))


def test_generic_step_whole_space_keeps_all_children():
    res = S.generic_step(hex_point(), 2.0, TESS, M.CompactWindow(0.0), eta=0.0)
    assert res.count == res.children == T.children_count(TESS, 2.0)


def test_generic_step_count_and_survivor_certificates():
    x = hex_point()
    m_hat = 1 - 3 * 0.3 ** 2 / math.pi
    res = S.generic_step(x, 4.0, TESS, WIN, eta=m_hat - m_hat ** 2, m_hat=m_hat)
    assert res.bound_met and 0.8 < res.density < 1
    sc = math.exp(-8.0)
    for m in res.survivors[::97]:
        s = np.linspace(sc * (2 * 0.05 * m - 0.05), sc * (2 * 0.05 * m + 0.05), 101)
        assert M.systole_batch(S.shear_flow_batch(x.rep, s, 4.0)).min() >= 0.31 - 1e-12


def test_generic_step_sharding_is_deterministic():
    x = hex_point()
    a = S.generic_step(x, 3.0, TESS, WIN, 0.1)
    b = S.generic_step(x, 3.0, TESS, WIN, 0.1, threads=4, shards=7)
    assert a.to_json() == b.to_json()


def test_generic_step_rejects_points_outside_window():
    with pytest.raises(ValueError):
        S.generic_step(M.flow_point(3.0, M.identity_point()), 2.0, TESS, WIN, 0.1)
    with pytest.raises(ValueError):
        S.generic_step(hex_point(), 0.0, TESS, WIN, 0.1)


def test_approach_times_example():
    s1, sp, se = S.approach_times(4.0, 0.05, 0.05, 0.05)
    assert s1 == pytest.approx(math.log(2) + 0.1)
    assert sp == pytest.approx(s1 + 4.0)
    assert se == pytest.approx(1.1 * (sp + math.log(4) / 2))


def test_decompose_nlz_round_trip():
    rng = np.random.default_rng(3)
    for a, c, d in rng.uniform(-0.3, 0.3, (20, 3)):
        M_ = np.array([[1, a], [0, 1]]) @ np.array([[1, 0], [c, 1]]) @ np.diag([math.exp(d), math.exp(-d)])
        assert np.allclose(S.decompose_nlz(M_), (a, c, d))


def test_approach_step_errors():
    y = M.point_from_alpha(math.sqrt(2))
    with pytest.raises(ValueError):
        S.approach_step(hex_point(), y, 4.0, 0.05, 0.0, TESS, WIN)
    with pytest.raises(ValueError):
        S.approach_step(M.flow_point(3.0, M.identity_point()), y, 4.0, 0.05, 0.05, TESS, WIN)
    # the cusp point's forward orbit leaves every compact set
    with pytest.raises(ValueError):
        S.approach_step(hex_point(), M.identity_point(), 4.0, 0.05, 0.05, TESS,
                        M.CompactWindow(0.9, 0.01))


@pytest.mark.slow
def test_approach_step_certificates_hold_on_finer_grids():
    x, y = hex_point(), M.point_from_alpha(math.sqrt(2))
    res = S.approach_step(x, y, 4.0, 0.05, 0.05, TESS, WIN)
    assert res.passed
    lo, hi = res.window
    assert -0.05 <= lo < hi <= 0.05
    assert hi - lo == pytest.approx(0.1 * math.exp(-2 * res.s_eps))
    # (ii) clearance on a 10x finer time and H grid
    for s in np.linspace(lo, hi, 11):
        for u in np.linspace(res.t, res.s_eps, 2000):
            g = S.shear_flow_batch(x.rep, [s], u)
            assert M.systole_batch(g)[0] >= 0.3
    # (iii) distance at s'_eps over 110 points
    tube = S.neutral_orbit(y, res.sigma, 257)
    d = S.tube_distance(S.shear_flow_batch(x.rep, np.linspace(lo, hi, 110), res.s_eps_prime), tube)
    assert d.max() < res.epsilon
