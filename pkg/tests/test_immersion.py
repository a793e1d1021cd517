import numpy as np
import pytest

from eternalflow.expansion import fit_slope
from eternalflow.immersion import (DegenerateGraph, ImmersionParams, area_volume, embed, mean_curvature,
                                   phi_operator, surface_geometry, unit_normal, variation_field)
from eternalflow.metric import curvature_jet
from eternalflow.sphere import BandBasis, build_grid

LADDER = (0.4, 0.3, 0.22, 0.16, 0.12)


def band_field(basis, l, amplitude, n_t):
    c = np.zeros((n_t, basis.size))
    c[:, basis.band_slice(l)[0]] = amplitude
    return c


def test_embed_trivial_cases(flat_line, small_basis):
    x = small_basis.grid.nodes
    pts = embed(flat_line, ImmersionParams(0.3, small_basis), [0.0])[0]
    assert np.allclose(pts, 0.3 * x, atol=1e-14)


def test_embed_at_geodesic_distance(sphere_line, small_basis):
    # stereographic chart of the unit sphere: distance d from 0 sits at |x| = 2 tan(d / 2)
    s = 0.35
    pts = embed(sphere_line, ImmersionParams(s, small_basis), [0.0])[0]
    assert np.allclose(np.linalg.norm(pts, axis=1), 2 * np.tan(s / 2), atol=1e-9)


def test_embed_jacobian_matches_differences(shipped_line, small_basis):
    s, t = 0.25, 0.5
    x = np.array([[0.6, 0.0, 0.8]])
    _, J = embed(shipped_line, ImmersionParams(s, small_basis), [t], x, with_jacobian=True)
    h = 1e-5
    for a in range(3):
        e = np.zeros(3)
        e[a] = h
        dp = (embed(shipped_line, ImmersionParams(s, small_basis), [t], x + e)
              - embed(shipped_line, ImmersionParams(s, small_basis), [t], x - e)) / (2 * h)
        assert np.allclose(dp[0, 0], s * J[0, 0, :, a], atol=1e-6)


def test_normal_trivial_and_unit(flat_line, shipped_line, small_basis):
    x = small_basis.grid.nodes
    assert np.allclose(unit_normal(flat_line, ImmersionParams(0.3, small_basis), [0.0])[0], x, atol=1e-12)
    f = band_field(small_basis, 2, 0.7, shipped_line.grid.n)
    geo = surface_geometry(shipped_line, ImmersionParams(0.3, small_basis, (), (f,)), [0.0, 1.0])
    g = shipped_line.metric.metric(geo.point)
    norms = np.einsum("txi,txij,txj->tx", geo.normal, g, geo.normal)
    assert np.max(np.abs(norms - 1)) < 1e-10


def test_normal_tilts_against_gradient(flat_line, small_basis):
    basis = small_basis
    x = basis.grid.nodes
    f = band_field(basis, 2, 1.0, flat_line.grid.n)
    # tangential gradient of the band-2 function
    fvals = basis.values[:, basis.band_slice(2)[0]]
    grad = basis.gradients[:, basis.band_slice(2)[0], :]
    grad = grad - (2 * fvals)[:, None] * x
    errs = []
    for s in LADDER:
        N = unit_normal(flat_line, ImmersionParams(s, basis, (), (f,)), [0.0])[0]
        errs.append(np.max(np.abs(N - x + s**2 * grad)))
    assert fit_slope(LADDER, errs) >= 3.5


def test_flat_mean_curvature_exact(flat_line, small_basis):
    for s in LADDER:
        assert np.allclose(mean_curvature(flat_line, ImmersionParams(s, small_basis), [0.0]), 1 / s, atol=1e-10)


def test_space_form_mean_curvature(sphere_line, small_basis):
    for s in LADDER:
        H = mean_curvature(sphere_line, ImmersionParams(s, small_basis), [0.0])
        assert np.allclose(H, 1 / np.tan(s), atol=1e-6)


def test_mean_curvature_rotation_invariant(radial_bump_line):
    basis = BandBasis(build_grid(2, 8), 4)
    x = basis.grid.nodes
    a = np.array([0.3, -0.5, 0.2])
    rng = np.random.default_rng(2)
    Q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    nt = radial_bump_line.grid.n
    f1 = np.broadcast_to(basis.analyze((x @ a) ** 2), (nt, basis.size))
    # f2(y) = f1(Q^T y), compared at the rotated points y = Q x
    f2 = np.broadcast_to(basis.analyze((x @ Q @ a) ** 2), (nt, basis.size))
    H1 = mean_curvature(radial_bump_line, ImmersionParams(0.3, basis, (), (f1,)), [0.0], x)
    H2 = mean_curvature(radial_bump_line, ImmersionParams(0.3, basis, (), (f2,)), [0.0], x @ Q.T)
    assert np.allclose(H1, H2, atol=1e-8)


def test_degenerate_graph_rejected(flat_line, small_basis):
    f = band_field(small_basis, 0, -300.0, flat_line.grid.n)
    with pytest.raises(DegenerateGraph):
        surface_geometry(flat_line, ImmersionParams(0.3, small_basis, (), (f,)), [0.0])


def test_variation_vanishes_for_frozen_line(flat_line, small_basis):
    V = variation_field(flat_line, ImmersionParams(0.3, small_basis), [0.0, 0.5])
    assert np.max(np.abs(V)) < 1e-12


def test_variation_leading_term(shipped_line, small_basis):
    x = small_basis.grid.nodes
    idx = shipped_line.grid.n // 2 + 6
    t = shipped_line.grid.times[idx]
    lead = x @ shipped_line.velocity_frame[idx]
    errs = []
    for s in LADDER:
        geo = surface_geometry(shipped_line, ImmersionParams(s, small_basis), [t])
        V = variation_field(shipped_line, ImmersionParams(s, small_basis), [t])
        VN = geo.conformal * np.einsum("txi,txi->tx", V, geo.normal)
        errs.append(np.max(np.abs(VN[0] - lead)))
    # the O(s^2) correction sits below the differencing noise on this line
    assert max(errs) < 1e-6 * np.max(np.abs(lead))


def test_variation_step_halving(shipped_line, small_basis):
    p = ImmersionParams(0.3, small_basis)
    t = [0.4]
    r = shipped_line.grid.dt / 4
    V1 = variation_field(shipped_line, p, t, step=r)
    V2 = variation_field(shipped_line, p, t, step=r / 2)
    V4 = variation_field(shipped_line, p, t, step=r / 4)
    e1 = np.max(np.abs(V1 - V4))
    e2 = np.max(np.abs(V2 - V4))
    assert e2 < e1 / 3


def test_phi_flat_is_zero(flat_line, small_basis):
    assert phi_operator(flat_line, ImmersionParams(0.3, small_basis)).sup_norm < 1e-12


def test_phi_response_to_graph_constant(flat_line, small_basis):
    s, c = 0.3, 0.4
    f = band_field(small_basis, 0, c / small_basis.values[0, 0], flat_line.grid.n)
    phi = phi_operator(flat_line, ImmersionParams(s, small_basis, (), (f,)), times=[0.0]).values
    assert np.allclose(phi, (1 / (1 + s**2 * c) - 1) / s**2, atol=1e-10)


def test_phi_response_to_band_two(flat_line, small_basis):
    # Phi ~ -A f = +2 f on band 2 (m = 2)
    s, eps = 0.1, 1e-4
    f = band_field(small_basis, 2, eps, flat_line.grid.n)
    phi = phi_operator(flat_line, ImmersionParams(s, small_basis, (), (f,)), times=[0.0]).values[0]
    fx = eps * small_basis.values[:, small_basis.band_slice(2)[0]]
    assert np.allclose(phi, 2 * fx, atol=1e-3 * eps)


def test_phi_response_to_moving_centre(flat_line, small_basis):
    # Y(t) = t e_1 translates the sphere: Pi Phi / s^2 = -<Y', x>
    s = 0.3
    Y = np.outer(flat_line.grid.times, [1.0, 0.0, 0.0])
    res = phi_operator(flat_line, ImmersionParams(s, small_basis, (Y,)), times=[0.0, 0.5])
    b = small_basis.linear_coefficients(res.values) / s**2
    assert np.allclose(b, [[-1.0, 0.0, 0.0]] * 2, atol=1e-8)


def test_phi_leading_term(shipped_line, small_basis):
    idx = shipped_line.grid.n // 2
    t = shipped_line.grid.times[idx]
    jet = curvature_jet(shipped_line.metric, shipped_line.gamma[idx]).in_frame(shipped_line.frames[idx])
    x = small_basis.grid.nodes
    phi0 = -np.einsum("ab,xa,xb->x", jet.ricci_n, x, x) / 3
    errs = [np.max(np.abs(phi_operator(shipped_line, ImmersionParams(s, small_basis), [t]).values[0] - phi0))
            for s in LADDER]
    assert fit_slope(LADDER, errs) >= 0.8


def test_phi_invariant(shipped_line, small_basis):
    s = 0.25
    f = band_field(small_basis, 3, 0.2, shipped_line.grid.n)
    res = phi_operator(shipped_line, ImmersionParams(s, small_basis, (), (f,)), [0.0, 1.0], keep_parts=True)
    total = s * res.values + (1 / s - res.H) + s**2 * res.VN
    assert np.max(np.abs(total)) < 1e-12


def test_area_volume_flat(flat_line, small_basis):
    s = 0.3
    A, V, F = area_volume(flat_line, ImmersionParams(s, small_basis), 0.0)
    assert A == pytest.approx(4 * np.pi * s**2, rel=1e-12)
    assert V == pytest.approx(4 / 3 * np.pi * s**3, rel=1e-12)
    assert F == pytest.approx(8 / 3 * np.pi * s**2, rel=1e-12)


def test_area_space_form(sphere_line, small_basis):
    s = 0.4
    A, _, _ = area_volume(sphere_line, ImmersionParams(s, small_basis), 0.0)
    assert A == pytest.approx(4 * np.pi * np.sin(s) ** 2, rel=1e-6)


def test_area_volume_refinement(shipped_line):
    coarse = BandBasis(build_grid(2, 10), 3)
    fine = BandBasis(build_grid(2, 16), 3)
    nt = shipped_line.grid.n
    out = []
    for basis, nr in ((coarse, 10), (fine, 16)):
        f = band_field(basis, 2, 0.3, nt)
        out.append(area_volume(shipped_line, ImmersionParams(0.3, basis, (), (f,)), 0.5, n_radial=nr))
    for a, b in zip(*out):
        assert a == pytest.approx(b, rel=1e-6)
