import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from eternalflow.metric import (Bump, DomainError, MetricField, _bump_derivatives, christoffel, curvature_jet,
                                exp_map, geodesic_speed_profile, normal_chart, parallel_transport,
                                verify_normal_expansion)

BUMPS = (
    Bump((0.3, -0.2, 0.1), 0.7, (((0, 0, 0), -0.2), ((1, 0, 0), 0.05), ((0, 1, 1), 0.03))),
    Bump((-0.4, 0.5, 0.0), 0.9, (((0, 0, 0), 0.1), ((0, 0, 2), -0.04))),
)
CONFORMAL = MetricField(3, "conformal", bumps=BUMPS, domain_radius=5.0)
points = arrays(float, 3, elements=st.floats(-1, 1))


def fd_christoffel(metric, x, h=1e-3):
    n = len(x)
    dg = np.zeros((n, n, n))  # [k, i, j] = d_k g_ij
    for k in range(n):
        e = np.zeros(n)
        e[k] = h
        gp2, gp1, gm1, gm2 = (metric.metric(x + c * e) for c in (2, 1, -1, -2))
        dg[k] = (-gp2 + 8 * gp1 - 8 * gm1 + gm2) / (12 * h)
    ginv = np.linalg.inv(metric.metric(x))
    low = 0.5 * (np.einsum("jil->lij", dg) + np.einsum("ijl->lij", dg) - dg)  # [l, i, j] lowered
    return np.einsum("kl,lij->kij", ginv, low)


def fd_riemann(metric, x, h=1e-2):
    """R_{ijk}^l = d_i G^l_jk - d_j G^l_ik + G^l_ip G^p_jk - G^l_jp G^p_ik, by nested differences."""
    n = len(x)
    dG = np.zeros((n, n, n, n))  # [i, l, j, k]
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        G = [fd_christoffel(metric, x + c * e) for c in (2, 1, -1, -2)]
        dG[i] = (-G[0] + 8 * G[1] - 8 * G[2] + G[3]) / (12 * h)
    G = fd_christoffel(metric, x)
    R = np.einsum("iljk->ijkl", dG) - np.einsum("jlik->ijkl", dG)
    R += np.einsum("lip,pjk->ijkl", G, G) - np.einsum("ljp,pik->ijkl", G, G)
    return R


def test_euclidean_curvature_vanishes():
    jet = curvature_jet(MetricField(3, "euclidean"), np.array([0.3, 0.1, -0.2]))
    assert np.max(np.abs(jet.riemann)) == 0
    assert jet.scalar_n == 0


@pytest.mark.parametrize("rho", [1.0, 2.0])
def test_space_form_normalization(rho):
    kappa = 1 / rho**2
    metric = MetricField(3, "space_form", kappa=kappa)
    p = np.array([0.2, -0.3, 0.4])
    jet = curvature_jet(metric, p)
    assert np.allclose(jet.ricci_n, kappa * jet.metric, atol=1e-12)
    assert jet.scalar_n == pytest.approx(kappa, rel=1e-12)


def test_riemann_convention_on_unit_sphere():
    # R(X, Y)Z = <Y, Z>X - <X, Z>Y: R_{010}^1 = -1, R_{011}^0 = +1 at the chart origin
    jet = curvature_jet(MetricField(3, "space_form", kappa=1.0), np.zeros(3))
    assert jet.riemann[0, 1, 1, 0] == pytest.approx(1.0)
    assert jet.riemann[0, 1, 0, 1] == pytest.approx(-1.0)


def test_normal_chart_metric_shrinks_transversally_on_sphere():
    # sign regression: h_22(r e_1) = (sin r / r)^2 < 1 for positive curvature
    chart = normal_chart(MetricField(3, "space_form", kappa=1.0), np.zeros(3), working_radius=0.5)
    for r in (0.1, 0.3):
        h = chart.pulled_back_metric(np.array([[r, 0.0, 0.0]]))[0]
        assert h[1, 1] == pytest.approx((np.sin(r) / r) ** 2, abs=1e-8)
        assert h[0, 0] == pytest.approx(1.0, abs=1e-9)


def test_conformal_jet_matches_finite_differences():
    p = np.array([0.1, 0.2, -0.15])
    jet = curvature_jet(CONFORMAL, p)
    R = fd_riemann(CONFORMAL, p)
    assert np.max(np.abs(jet.riemann - R)) <= 1e-6 * np.max(np.abs(R))
    assert np.allclose(jet.christoffel, fd_christoffel(CONFORMAL, p), atol=1e-9)


def test_chart_curvature_route_agrees_with_jet():
    p = np.array([0.1, 0.2, -0.15])
    chart = normal_chart(CONFORMAL, p)
    R_chart = chart.curvature_at_origin()
    R_jet = curvature_jet(CONFORMAL, p).in_frame(chart.frame).riemann
    assert np.max(np.abs(R_chart - R_jet)) <= 1e-6 * np.max(np.abs(R_jet))


def test_contracted_bianchi_identity():
    # div Ric_n = (m + 1)/2 dS_n under the chosen normalization
    p = np.array([-0.2, 0.1, 0.3])
    jet = curvature_jet(CONFORMAL, p)
    ginv = np.linalg.inv(jet.metric)
    div = np.einsum("ac,abc->b", ginv, jet.ric_deriv)
    assert np.allclose(div, (jet.m + 1) / 2 * jet.dS, atol=1e-10)
    # and the trace: tr Ric_n = (m + 1) S_n
    assert np.allclose(np.einsum("ab,abc->c", ginv, jet.ric_deriv), (jet.m + 1) * jet.dS, atol=1e-10)


@given(points)
def test_scalar_curvature_two_routes(p):
    A, S = CONFORMAL.scalar_curvature_jet(p[None], 4)
    assert A.value(S)[0] == pytest.approx(curvature_jet(CONFORMAL, p).scalar_n, abs=1e-10)


@given(arrays(float, (4, 3), elements=st.floats(-1.5, 1.5)))
def test_bump_derivatives_match_jets(x):
    closed = _bump_derivatives(BUMPS, x, 3)
    A, psi = CONFORMAL.psi_jet(x, 3)
    for k in range(4):
        assert np.allclose(closed[k], A.derivative_tensor(psi, k), atol=1e-12)


def test_christoffel_is_zero_for_euclidean():
    assert np.max(np.abs(christoffel(MetricField(3, "euclidean"), np.ones((2, 3))))) == 0


def test_exp_map_trivial_cases():
    x = np.array([0.2, 0.1, 0.0])
    assert np.allclose(exp_map(CONFORMAL, x, np.zeros(3)), x)
    y = np.array([0.3, -0.4, 0.5])
    assert np.allclose(exp_map(MetricField(3, "euclidean"), x, y), x + y, atol=1e-12)


def test_geodesic_speed_is_conserved():
    speeds = geodesic_speed_profile(CONFORMAL, [0.1, 0.0, 0.2], [0.4, 0.3, -0.2], np.linspace(0, 1, 6))
    assert np.max(np.abs(speeds - speeds[0])) < 1e-8


def test_parallel_transport_trivial_cases():
    U = np.array([0.0, 1.0, 2.0])
    x = np.array([0.1, 0.2, 0.3])
    assert np.allclose(parallel_transport(CONFORMAL, x, np.zeros(3), U), U)
    assert np.allclose(parallel_transport(MetricField(3, "euclidean"), x, [0.5, 0.1, 0.0], U), U, atol=1e-12)


@given(points, points, points, points)
def test_parallel_transport_is_isometric(x, y, U, V):
    x, y = 0.5 * x, 0.5 * y
    end = exp_map(CONFORMAL, x, y)
    TU = parallel_transport(CONFORMAL, x, y, U)
    TV = parallel_transport(CONFORMAL, x, y, V)
    g0, g1 = CONFORMAL.metric(x), CONFORMAL.metric(end)
    assert TU @ g1 @ TV == pytest.approx(U @ g0 @ V, abs=1e-8)


def test_domain_is_enforced():
    with pytest.raises(DomainError):
        exp_map(CONFORMAL, [6.0, 0.0, 0.0], [0.1, 0.0, 0.0])


def test_normal_chart_invariants():
    chart = normal_chart(CONFORMAL, np.array([0.1, -0.1, 0.2]))
    assert np.allclose(chart.pulled_back_metric(np.zeros((1, 3)))[0], np.eye(3), atol=1e-12)
    rng = np.random.default_rng(3)
    d = rng.normal(size=(5, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    w = 0.6 * chart.working_radius * d
    h = chart.pulled_back_metric(w)
    radial = np.einsum("ni,nij,nj->n", d, h, d)
    assert np.max(np.abs(radial - 1)) < 1e-8


def test_space_form_chart_is_rotationally_symmetric():
    chart = normal_chart(MetricField(3, "space_form", kappa=1.0), np.zeros(3), working_radius=0.8)
    rng = np.random.default_rng(5)
    Q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    w = np.array([[0.3, 0.2, -0.1]])
    h = chart.pulled_back_metric(w)[0]
    hr = chart.pulled_back_metric(w @ Q.T)[0]
    assert np.allclose(Q @ h @ Q.T, hr, atol=1e-7)


def test_normal_expansion_euclidean_is_trivial():
    rep = verify_normal_expansion(MetricField(3, "euclidean"), np.zeros(3))
    for name in ("A", "B", "Gamma_ii"):
        assert np.max(np.abs(rep[name].fitted)) < 1e-10


def test_normal_expansion_conformal(shipped_metric, shipped_line):
    p = shipped_line.gamma[shipped_line.grid.n // 2]
    rep = verify_normal_expansion(shipped_metric, p)
    for name, order in (("A", 2), ("B", 2), ("Gamma_ii", 1)):
        assert rep[name].rel_error <= 1e-4
        assert rep[name].remainder_slope >= order + 0.7
