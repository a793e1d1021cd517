"""Quadrature and harmonic band analysis on the unit sphere S^m in R^(m+1).

Grids are built recursively: S^m is swept by latitudes z with weight
(1 - z^2)^((m-2)/2) (Gauss-Jacobi nodes) times a scaled copy of S^(m-1),
bottoming out at the trapezoid rule on the circle.

Band l is realized as the harmonic homogeneous polynomials of degree l
(kernel of the Euclidean Laplacian on degree-l monomials), orthonormalized
in L^2(S^m) by quadrature.  Keeping monomial coefficients means values,
ambient gradients and ambient Hessians of every basis function are exact.

Sign convention: the sphere Laplacian acts on band l as -l(m+l-1), so that
(m + Lap) annihilates exactly the linear functions (band 1).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations_with_replacement

import numpy as np
from scipy.linalg import null_space
from scipy.special import roots_jacobi

from .symtensor import sphere_volume

SUPPORTED_M = (1, 2, 3)
TAIL_TOL = 1e-8


class UnsupportedDimension(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SphereGrid:
    m: int
    nodes: np.ndarray
    weights: np.ndarray
    exactness_degree: int

    @property
    def n_nodes(self) -> int:
        return len(self.weights)

    @property
    def volume(self) -> float:
        return sphere_volume(self.m)

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Integrate over the last axis (node axis)."""
        return np.asarray(values) @ self.weights


def _circle(L_q: int):
    n = L_q + 1
    phi = 2 * np.pi * np.arange(n) / n
    return np.stack([np.cos(phi), np.sin(phi)], axis=1), np.full(n, 2 * np.pi / n)


def build_grid(m: int, L_q: int) -> SphereGrid:
    """Product grid integrating polynomials of degree <= L_q exactly."""
    if m not in SUPPORTED_M:
        raise UnsupportedDimension(f"unsupported sphere dimension m={m}")
    if not 0 <= L_q <= 40:
        raise ValueError("exactness degree must lie in [0, 40]")
    nodes, weights = _circle(L_q)
    for k in range(2, m + 1):
        alpha = (k - 2) / 2
        nz = L_q // 2 + 1
        z, wz = roots_jacobi(nz, alpha, alpha)
        r = np.sqrt(1 - z**2)
        nodes = np.concatenate(
            [np.column_stack([ri * nodes, np.full(len(nodes), zi)]) for zi, ri in zip(z, r)]
        )
        weights = np.concatenate([wi * weights for wi in wz])
    return SphereGrid(m, nodes, weights, L_q)


# ----------------------------------------------------------------------------
# polynomials in monomial form


def monomial_exponents(n: int, degree: int) -> np.ndarray:
    rows = []
    for combo in combinations_with_replacement(range(n), degree):
        e = np.zeros(n, dtype=int)
        for i in combo:
            e[i] += 1
        rows.append(e)
    return np.array(rows, dtype=int).reshape(-1, n)


def _laplacian_matrix(n: int, l: int) -> np.ndarray:
    """Euclidean Laplacian from degree-l to degree-(l-2) monomial coefficients."""
    src = monomial_exponents(n, l)
    dst = monomial_exponents(n, l - 2)
    index = {tuple(e): i for i, e in enumerate(dst)}
    A = np.zeros((len(dst), len(src)))
    for j, e in enumerate(src):
        for i in range(n):
            if e[i] >= 2:
                f = e.copy()
                f[i] -= 2
                A[index[tuple(f)], j] += e[i] * (e[i] - 1)
    return A


def _eval_monomials(x: np.ndarray, exps: np.ndarray, deriv: int = 0):
    """Monomial values (deriv=0), gradients (1) or Hessians (2) at points x."""
    x = np.asarray(x)
    npts, n = x.shape
    pw = np.ones((npts, n, exps.max(initial=0) + 1), dtype=x.dtype)
    for p in range(1, pw.shape[2]):
        pw[:, :, p] = pw[:, :, p - 1] * x

    def mono(e):
        out = np.ones(npts, dtype=x.dtype)
        for i in range(n):
            if e[i] < 0:
                return np.zeros(npts, dtype=x.dtype)
            out = out * pw[:, i, e[i]]
        return out

    if deriv == 0:
        return np.stack([mono(e) for e in exps], axis=1)
    if deriv == 1:
        out = np.zeros((npts, len(exps), n), dtype=x.dtype)
        for j, e in enumerate(exps):
            for i in range(n):
                if e[i]:
                    f = e.copy()
                    f[i] -= 1
                    out[:, j, i] = e[i] * mono(f)
        return out
    out = np.zeros((npts, len(exps), n, n), dtype=x.dtype)
    for j, e in enumerate(exps):
        for i in range(n):
            for k in range(n):
                f = e.copy()
                c = f[i]
                f[i] -= 1
                c *= f[k]
                f[k] -= 1
                if c:
                    out[:, j, i, k] = c * mono(f)
    return out


@dataclass(frozen=True, eq=False)
class HarmonicBand:
    degree: int
    exponents: np.ndarray  # (n_mono, n)
    coeffs: np.ndarray  # (n_mono, dim H_l), L2-orthonormal on S^m

    def values(self, x):
        return _eval_monomials(x, self.exponents) @ self.coeffs

    def gradients(self, x):
        return np.einsum("pjn,jb->pbn", _eval_monomials(x, self.exponents, 1), self.coeffs)

    def hessians(self, x):
        return np.einsum("pjnk,jb->pbnk", _eval_monomials(x, self.exponents, 2), self.coeffs)


def harmonic_dimension(m: int, l: int) -> int:
    from math import comb

    n = m + 1
    if l < 2:
        return comb(l + n - 1, n - 1)
    return comb(l + n - 1, n - 1) - comb(l + n - 3, n - 1)


class BandBasis:
    """Orthonormal harmonic basis of bands 0..L on a quadrature grid."""

    def __init__(self, grid: SphereGrid, degree_cap: int, tail_tol: float = TAIL_TOL):
        if grid.exactness_degree < 2 * degree_cap:
            raise ValueError("grid exactness must be at least twice the degree cap")
        self.grid = grid
        self.m = grid.m
        self.L = degree_cap
        self.tail_tol = tail_tol
        n = self.m + 1
        self.bands: list[HarmonicBand] = []
        for l in range(degree_cap + 1):
            exps = monomial_exponents(n, l)
            if l < 2:
                C = np.eye(len(exps))
            else:
                C = null_space(_laplacian_matrix(n, l))
            V = _eval_monomials(grid.nodes, exps) @ C
            gram = V.T @ (grid.weights[:, None] * V)
            R = np.linalg.cholesky(gram)
            C = np.linalg.solve(R, C.T).T
            self.bands.append(HarmonicBand(l, exps, C))
        self.degree = np.concatenate([np.full(b.coeffs.shape[1], b.degree) for b in self.bands])
        self.values = np.concatenate([b.values(grid.nodes) for b in self.bands], axis=1)
        self.a = np.array([jacobi_eigenvalue(self.m, l) for l in self.degree])

    @property
    def size(self) -> int:
        return len(self.degree)

    def band_slice(self, l: int) -> np.ndarray:
        return np.flatnonzero(self.degree == l)

    @cached_property
    def gradients(self) -> np.ndarray:
        return np.concatenate([b.gradients(self.grid.nodes) for b in self.bands], axis=1)

    @cached_property
    def hessians(self) -> np.ndarray:
        return np.concatenate([b.hessians(self.grid.nodes) for b in self.bands], axis=1)

    def analyze(self, values: np.ndarray) -> np.ndarray:
        """Band coefficients of nodal values (last axis = nodes)."""
        return (np.asarray(values) * self.grid.weights) @ self.values

    def synthesize(self, coeffs: np.ndarray) -> np.ndarray:
        return np.asarray(coeffs) @ self.values.T

    def tail_energy(self, values: np.ndarray) -> np.ndarray:
        """L^2 energy outside bands <= L, relative to the total energy."""
        values = np.asarray(values)
        rest = values - self.synthesize(self.analyze(values))
        total = self.grid.integrate(np.abs(values) ** 2)
        tail = self.grid.integrate(np.abs(rest) ** 2)
        return np.where(total > 0, tail / np.where(total > 0, total, 1), 0.0)

    def linear_coefficients(self, values: np.ndarray) -> np.ndarray:
        """b with Pi f = <b, x> (band-1 part written in ambient coordinates)."""
        vol = self.grid.volume
        return (np.asarray(values) * self.grid.weights) @ self.grid.nodes * ((self.m + 1) / vol)


def jacobi_eigenvalue(m: int, l: int) -> float:
    """a_l with (1/m)(m + Lap) = a_l on band l."""
    return (m - l * (m + l - 1)) / m


@dataclass(frozen=True, eq=False)
class SphereFunction:
    basis: BandBasis
    values: np.ndarray

    @property
    def grid(self) -> SphereGrid:
        return self.basis.grid


class TailError(ValueError):
    pass


def project_band(f: SphereFunction, l: int) -> SphereFunction:
    if l > f.basis.L:
        raise ValueError(f"band {l} above degree cap {f.basis.L}")
    idx = f.basis.band_slice(l)
    c = f.basis.analyze(f.values)[..., idx]
    return SphereFunction(f.basis, c @ f.basis.values[:, idx].T)


def project_linear(f: SphereFunction) -> SphereFunction:
    return project_band(f, 1)


def project_nonlinear(f: SphereFunction) -> SphereFunction:
    return SphereFunction(f.basis, f.values - project_band(f, 1).values)


def apply_jacobi(f: SphereFunction) -> SphereFunction:
    """(1/m)(m + Lap) f applied band by band."""
    tail = f.basis.tail_energy(f.values)
    if np.any(tail > f.basis.tail_tol):
        raise TailError(f"tail energy {np.max(tail):.3g} above tolerance {f.basis.tail_tol:.1g}")
    c = f.basis.analyze(f.values)
    return SphereFunction(f.basis, f.basis.synthesize(c * f.basis.a))
