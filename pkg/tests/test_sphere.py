import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from eternalflow.sphere import (BandBasis, SphereFunction, TailError, UnsupportedDimension, apply_jacobi,
                                build_grid, harmonic_dimension, jacobi_eigenvalue, project_band,
                                project_linear, project_nonlinear)
from eternalflow.symtensor import sphere_moment


def test_s2_grid_trivial_integrals():
    g = build_grid(2, 11)
    assert g.integrate(np.ones(g.n_nodes)) == pytest.approx(4 * math.pi, abs=1e-12)
    assert g.integrate(g.nodes[:, 0] * g.nodes[:, 1]) == pytest.approx(0.0, abs=1e-14)
    assert g.integrate(g.nodes[:, 0] ** 4) == pytest.approx(4 * math.pi / 5, rel=1e-13)


def test_unsupported_dimension():
    with pytest.raises(UnsupportedDimension):
        build_grid(4, 6)


@given(st.sampled_from([1, 2, 3]), st.integers(0, 8), arrays(float, 4, elements=st.floats(-1, 1)))
def test_grid_exact_on_powers_of_linear_forms(m, l, a):
    g = build_grid(m, 8)
    a = a[: m + 1]
    quad = g.integrate((g.nodes @ a) ** l)
    exact = sphere_moment(m, l).contract_vector(a)
    assert quad == pytest.approx(float(exact), abs=1e-11)


@pytest.mark.parametrize("m", [1, 2, 3])
def test_band_dimensions(m):
    basis = BandBasis(build_grid(m, 10), 5)
    for l in range(6):
        assert len(basis.band_slice(l)) == harmonic_dimension(m, l)
    if m == 2:
        assert [harmonic_dimension(2, l) for l in range(4)] == [1, 3, 5, 7]


def test_basis_orthonormal(small_basis):
    V = small_basis.values
    gram = V.T @ (small_basis.grid.weights[:, None] * V)
    assert np.allclose(gram, np.eye(small_basis.size), atol=1e-12)


def test_basis_functions_harmonic(small_basis):
    # trace of the ambient Hessian of each homogeneous polynomial vanishes
    traces = np.trace(small_basis.hessians, axis1=-2, axis2=-1)
    assert np.max(np.abs(traces)) < 1e-10


def test_jacobi_eigenvalues():
    assert jacobi_eigenvalue(2, 0) == 1
    assert jacobi_eigenvalue(2, 1) == 0
    assert jacobi_eigenvalue(2, 2) == pytest.approx(-2.0)
    for m in (1, 2, 3):
        assert jacobi_eigenvalue(m, 1) == 0
        assert jacobi_eigenvalue(m, 2) == pytest.approx(-(m + 2) / m)


def test_linear_projection_cases(small_basis):
    x = small_basis.grid.nodes
    for i in range(3):
        f = SphereFunction(small_basis, x[:, i])
        assert np.allclose(project_linear(f).values, x[:, i], atol=1e-13)
    assert np.allclose(project_linear(SphereFunction(small_basis, np.ones(len(x)))).values, 0, atol=1e-13)


@given(arrays(float, (3, 3), elements=st.floats(-3, 3)))
def test_quadratic_forms_have_no_linear_part(R):
    basis = BandBasis(build_grid(2, 6), 3)
    x = basis.grid.nodes
    q = np.einsum("ab,xa,xb->x", R + R.T, x, x)
    assert np.max(np.abs(project_linear(SphereFunction(basis, q)).values)) < 1e-10
    assert np.max(np.abs(basis.linear_coefficients(q))) < 1e-10


@given(arrays(float, 3, elements=st.floats(-3, 3)))
def test_linear_coefficients_recover_vector(b):
    basis = BandBasis(build_grid(2, 6), 3)
    got = basis.linear_coefficients(basis.grid.nodes @ b)
    assert np.allclose(got, b, atol=1e-12)


def test_projections_split_function(small_basis):
    x = small_basis.grid.nodes
    f = SphereFunction(small_basis, x[:, 0] ** 3 + x[:, 1] * x[:, 2] + 0.5)
    total = project_linear(f).values + project_nonlinear(f).values
    assert np.allclose(total, f.values)
    assert np.allclose(project_band(f, 0).values, 0.5 + 0 * x[:, 0], atol=1e-13)


def test_apply_jacobi_cases(small_basis):
    x = small_basis.grid.nodes
    lin = SphereFunction(small_basis, x[:, 2])
    assert np.max(np.abs(apply_jacobi(lin).values)) < 1e-13
    one = SphereFunction(small_basis, np.ones(len(x)))
    assert np.allclose(apply_jacobi(one).values, 1.0)
    h2 = SphereFunction(small_basis, x[:, 0] * x[:, 1])
    assert np.allclose(apply_jacobi(h2).values, -2 * h2.values, atol=1e-13)


def test_apply_jacobi_rejects_unresolved_input(small_basis):
    x = small_basis.grid.nodes
    with pytest.raises(TailError):
        apply_jacobi(SphereFunction(small_basis, np.exp(4 * x[:, 0])))


def test_project_band_above_cap(small_basis):
    with pytest.raises(ValueError):
        project_band(SphereFunction(small_basis, np.ones(small_basis.grid.n_nodes)), 6)


def test_basis_requires_exact_grid():
    with pytest.raises(ValueError):
        BandBasis(build_grid(2, 6), 4)
