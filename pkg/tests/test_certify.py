import copy
import math

import numpy as np
import pytest

from orbittree import algebra as A
from orbittree import certify as CE
from orbittree import modular as M
from orbittree import steps as S
from orbittree import tessellation as T
from orbittree import tree as TR

TESS = T.make_tessellation(A.weight_decomposition(A.get_preset("sl2")), 0.05)
WIN = M.CompactWindow(0.3, 0.01)


def hex_point():
    return M.reduce(np.array([[1, 0.5], [0, 1]]) @ np.diag([3 ** 0.25 / 2 ** 0.5, 2 ** 0.5 / 3 ** 0.25]))


def middle_thirds(k):
    pts = np.zeros(1)
    for j in range(1, k + 1):
        pts = np.concatenate([pts, pts + 2 * 3.0 ** -j])
    return pts


@pytest.fixture(scope="module")
def gen_tree():
    return TR.build_tree(hex_point(), TR.Schedule(3.0, 3), TESS, WIN, beam=6)


def test_orbit_profile_identity():
    p = CE.orbit_profile(M.identity_point(), 2.0, 0.01)
    assert p.running_min[-1] == pytest.approx(math.exp(-2), rel=1e-9)
    assert len(p.times) == 201
    with pytest.raises(ValueError):
        CE.orbit_profile(M.identity_point(), 2.0, 0.0)


def test_orbit_profile_golden_point_stays_bounded():
    import mpmath as mp
    # exact x_phi: a double-precision phi stops being golden near q ~ 1e8
    with mp.workdps(60):
        phi = (1 + mp.sqrt(5)) / 2
        p = CE.orbit_profile(((mp.mpf(1), mp.mpf(0)), (phi, mp.mpf(1))), 30.0, 0.01)
    # min over the orbit is sqrt(2 (2 - phi)); late times approach sqrt(2 / sqrt 5)
    assert p.running_min[-1] == pytest.approx(math.sqrt(2 * (2 - (1 + math.sqrt(5)) / 2)), abs=1e-4)
    assert p.systole[-300:].min() == pytest.approx(math.sqrt(2 / math.sqrt(5)), abs=2e-3)


def test_orbit_profile_csv_and_target():
    y = M.point_from_alpha(math.sqrt(2))
    p = CE.orbit_profile(y, 1.0, 0.5, target=y)
    lines = p.to_csv().splitlines()
    assert lines[0] == "t,systole,dist_to_target" and len(lines) == 4
    assert p.dist_to_target[0] == pytest.approx(0.0, abs=1e-9)


def test_orbit_profile_matches_float_flow_at_short_times():
    x = hex_point()
    p = CE.orbit_profile(x, 3.0, 0.25)
    direct = M.systole_batch(np.array([M.flow_matrix(u) @ x.rep for u in p.times]))
    assert np.allclose(p.systole, direct, atol=1e-12)


def test_check_bounded_passes_on_built_tree(gen_tree):
    rep = CE.check_bounded(gen_tree, dt=1e-2, strict_margin=0.01)
    assert rep["passed"] and rep["strict_passed"]
    assert rep["worst_center_systole"] >= 0.3 * 0.99


def test_check_bounded_catches_corrupted_node(gen_tree):
    tr = copy.deepcopy(gen_tree)
    leaf = tr.levels[-1][0]
    par = tr.levels[-2][leaf.parent]
    lo, hi = S.child_range(tr.r, 3.0)
    ms = np.arange(lo, hi + 1)
    sy = M.systole_batch(S.shear_flow_batch(np.array(par.rep), math.exp(-6.0) * 2 * tr.r * ms, 3.0))
    m = int(ms[np.argmin(sy)])
    assert sy.min() < 0.29
    leaf.path = leaf.path[:-1] + (m,)
    rep = CE.check_bounded(tr, dt=1e-2, strict_margin=0.01)
    assert not rep["strict_passed"]
    assert rep["nodes"][0]["center_min_systole"] < 0.29


def test_check_bounded_empty_tree():
    tr = TR.build_tree(hex_point(), TR.Schedule(3.0, 0), TESS, WIN)
    assert CE.check_bounded(tr)["passed"]


def test_check_approach_without_approach_levels(gen_tree):
    rep = CE.check_approach(gen_tree)
    assert rep == {"passed": True, "levels": []}


@pytest.mark.slow
def test_approach_tree_end_to_end():
    sched = TR.Schedule(4.0, 4, (3,), (0.05,), 0.05, (math.sqrt(2),))
    tr = TR.build_tree(hex_point(), sched, TESS, WIN, beam=3)
    assert tr.diagnosis is None
    assert all(len(nd.children) == 1 for nd in tr.levels[2])
    assert TR.densities(tr)[2] == pytest.approx(math.exp(-2 * tr.times[3]))
    rep = CE.check_approach(tr, factor=10)
    assert rep["passed"] and len(rep["levels"]) == len(tr.levels[3])
    worst = max(r["max_dist"] for r in rep["levels"])
    assert not CE.check_approach(tr, factor=1, eps_scale=0.5 * worst / 0.05)["passed"]
    assert CE.check_bounded(tr)["passed"]
    assert TR.verify_treelike(tr)["passed"]


def test_sample_limit_set_leaf_centres(gen_tree):
    pts = CE.sample_limit_set(gen_tree)
    assert len(pts) == len(gen_tree.levels[-1])
    assert np.all(np.abs(pts) < gen_tree.r)


def test_sample_limit_random_lands_in_certified_boxes(gen_tree):
    pts, lev = CE.sample_limit_random(gen_tree, 50, seed=1)
    assert lev == 3 and np.all(np.abs(pts) < gen_tree.r)
    again, _ = CE.sample_limit_random(gen_tree, 50, seed=1)
    assert np.array_equal(pts, again)


def test_middle_thirds_points_match_ternary_expansion():
    pts = np.sort(middle_thirds(6))
    assert len(pts) == 64
    for p in pts:
        digits = []
        v = p
        for _ in range(6):
            v *= 3
            d = int(round(v)) if abs(v - round(v)) < 1e-9 else int(math.floor(v))
            digits.append(d)
            v -= d
        assert set(digits) <= {0, 2}


def test_box_counting_estimates():
    rng = np.random.default_rng(0)
    u = rng.uniform(0, 1, 200_000)
    assert CE.box_counting_estimate(u, np.geomspace(0.1, 1e-3, 8)) == pytest.approx(1.0, abs=0.02)
    c = middle_thirds(10)
    sc = 3.0 ** -np.arange(1, 9) * 0.999
    assert CE.box_counting_estimate(c, sc) == pytest.approx(math.log(2) / math.log(3), abs=0.02)
    assert CE.box_counting_estimate([0.3], [0.1, 0.01]) == 0.0
    with pytest.raises(ValueError):
        CE.box_counting_estimate(u, [0.1, 0.1])


def test_equidistribution_small():
    x = M.reduce(np.array([[1.0, 0.37], [0.21, 1.0777]]) / math.sqrt(1.0777 - 0.37 * 0.21))
    obs, m, se = CE.equidistribution_check(x, 6.0, 0.05, M.CompactWindow(0.5), 20_000, seed=3,
                                           mc_samples=100_000)
    assert abs(obs - m) < 3 * se + 0.02
    with pytest.raises(ValueError):
        CE.equidistribution_check(x, 0.0, 0.05, M.CompactWindow(0.5), 100, seed=3)
