import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from orbittree import algebra as A


@pytest.fixture(scope="module")
def sl2():
    return A.weight_decomposition(A.get_preset("sl2"))


def test_sl2_decomposition(sl2):
    assert sl2.dims == (1, 1, 1)
    assert sl2.chi == pytest.approx(2.0, abs=1e-12)
    assert sl2.lambda_min == pytest.approx(2.0, abs=1e-12)
    # E12 is the expanding direction, up to sign
    assert abs(sl2.basis_h[0][0, 1]) == pytest.approx(1.0)


def test_ad_eigenvalues_sl3():
    p = A.get_preset("sl3_21")
    ad = A.adjoint_operator(p.generator, p.basis)
    ev = np.sort(np.linalg.eigvals(ad).real)
    assert np.allclose(ev, [-3, -3, 0, 0, 0, 0, 3, 3], atol=1e-9)


def test_sl3_and_semidirect_decompositions():
    d = A.weight_decomposition(A.get_preset("sl3_21"))
    assert d.dims == (2, 4, 2)
    assert d.chi == pytest.approx(6.0)
    assert d.lambda_min == pytest.approx(3.0)
    s = A.weight_decomposition(A.get_preset("sl2_semidirect"))
    assert s.dims == (2, 1, 2)
    assert s.chi == pytest.approx(3.0)
    assert s.lambda_min == pytest.approx(1.0)


def test_eigenvectors_satisfy_ad_equation():
    for name in A.PRESETS:
        d = A.weight_decomposition(A.get_preset(name))
        for b, w in zip(d.full_basis, d.weights):
            lhs = A.bracket(d.generator, b)
            assert np.allclose(lhs, w * b, atol=1e-9)


def test_rejects_degenerate_generators():
    with pytest.raises(ValueError):
        A.weight_decomposition(np.zeros((2, 2)), A.get_preset("sl2").basis)
    nil = np.array([[0.0, 1.0], [0.0, 0.0]])
    with pytest.raises(ValueError, match="ad-diagonalizable"):
        A.weight_decomposition(nil, A.get_preset("sl2").basis)


def test_unknown_preset():
    with pytest.raises(KeyError):
        A.get_preset("sp4")


def test_flow_entry(sl2):
    g = A.flow_element(-1.0, sl2.generator)
    assert g[0, 0] == pytest.approx(math.exp(-1), abs=1e-12)
    # Phi_{-1} scales the unipotent coordinate by e^{-2}
    phi = A.conjugate_flow(-1.0, A.group_exp(sl2.basis_h[0]), sl2.generator)
    assert abs(phi[0, 1]) == pytest.approx(0.135335283, abs=1e-9)


def test_flow_overflow_guard(sl2):
    with pytest.raises(OverflowError):
        A.flow_element(1e4, sl2.generator)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-0.5, 0.5), min_size=3, max_size=3))
def test_exp_log_round_trip(c):
    p = A.get_preset("sl2")
    b = A.combine(c, p.basis)
    assert np.allclose(A.group_log(A.group_exp(b)), b, atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2))
def test_flow_is_a_homomorphism(s, t):
    p = A.get_preset("sl3_21")
    g = A.group_exp(A.combine(np.linspace(-0.3, 0.4, 8), p.basis))
    lhs = A.conjugate_flow(s, A.conjugate_flow(t, g, p.generator), p.generator)
    rhs = A.conjugate_flow(s + t, g, p.generator)
    assert np.allclose(lhs, rhs, rtol=1e-9, atol=1e-9)


@pytest.mark.parametrize("name", sorted(A.PRESETS))
def test_chi_is_trace_and_volume_growth(name):
    d = A.weight_decomposition(A.get_preset(name))
    assert A.trace_on_h(d) == pytest.approx(d.chi, abs=1e-9)
    for t in (0.5, 1.7):
        assert np.linalg.det(A.expansion_matrix(d, t)) == pytest.approx(math.exp(d.chi * t), rel=1e-9)


def test_contraction_threshold(sl2):
    assert A.contraction_threshold(sl2) == 0.0


def test_product_decompose_round_trip(sl2):
    chart = A.find_product_chart(sl2)
    rng = np.random.default_rng(7)
    for _ in range(20):
        c = rng.uniform(-1, 1, 3)
        c *= 0.5 * chart.c * chart.delta1 / np.linalg.norm(c)
        g = A.group_exp(A.combine(c, sl2.basis))
        h, hm, z = A.product_decompose(g, sl2, chart)
        assert np.max(np.abs(h @ hm @ z - g)) <= 1e-9
        assert np.allclose(h - np.eye(2), np.triu(h - np.eye(2), 1))
        assert np.allclose(hm - np.eye(2), np.tril(hm - np.eye(2), -1))
        assert np.allclose(z, np.diag(np.diag(z)))


def test_product_decompose_identity_and_chart_bound(sl2):
    chart = A.find_product_chart(sl2)
    h, hm, z = A.product_decompose(np.eye(2), sl2, chart)
    for m in (h, hm, z):
        assert np.allclose(m, np.eye(2), atol=1e-12)
    far = A.group_exp(A.combine([5.0, 0.0, 0.0], sl2.basis))
    with pytest.raises(A.ChartError):
        A.product_decompose(far, sl2, chart)


def test_neutral_distortion_sl2(sl2):
    chart = A.find_product_chart(sl2)
    assert A.neutral_distortion_bound(sl2, chart, samples=200) == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(ValueError, match="empty"):
        A.neutral_distortion_bound(sl2, chart, samples=0)


def test_preset_json_round_trip():
    for name, p in A.PRESETS.items():
        q = A.Preset.from_json(p.to_json())
        assert q.name == name
        assert np.array_equal(q.generator, p.generator)
        assert all(np.array_equal(a, b) for a, b in zip(q.basis, p.basis))
