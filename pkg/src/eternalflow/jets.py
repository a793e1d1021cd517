"""Truncated multivariate Taylor jets.

A jet of order K in n variables at a base point is stored as the trailing
axis of an array: coefficients c_a of the monomials xi^a with |a| <= K, where
xi is the displacement from the base point.  Leading axes are free, so a
whole field of jets (many points, tensor components) is one array.

Products gather all admissible monomial pairs and scatter them back with a
fixed 0/1 matrix, which keeps every operation a handful of numpy calls.
"""
from __future__ import annotations

from functools import lru_cache
from itertools import combinations_with_replacement
from math import factorial

import numpy as np


def _monomials(n: int, K: int) -> np.ndarray:
    rows = []
    for d in range(K + 1):
        for combo in combinations_with_replacement(range(n), d):
            e = [0] * n
            for i in combo:
                e[i] += 1
            rows.append(e)
    return np.array(rows, dtype=int).reshape(-1, n)


class JetAlgebra:
    """Bookkeeping for jets of order ``K`` in ``n`` variables."""

    def __init__(self, n: int, K: int):
        self.n, self.K = n, K
        self.exps = _monomials(n, K)
        self.M = len(self.exps)
        self.index = {tuple(e): i for i, e in enumerate(self.exps)}
        self.degree = self.exps.sum(axis=1)
        I, J, T = [], [], []
        for a, ea in enumerate(self.exps):
            for b, eb in enumerate(self.exps):
                if self.degree[a] + self.degree[b] <= K:
                    I.append(a)
                    J.append(b)
                    T.append(self.index[tuple(ea + eb)])
        self.I = np.array(I)
        self.J = np.array(J)
        self.scatter = np.zeros((len(I), self.M))
        self.scatter[np.arange(len(I)), T] = 1.0
        # d/dxi_i lowers a coefficient: c'_a = (a_i + 1) c_{a + e_i}
        self.dmat = np.zeros((n, self.M, self.M))
        for a, ea in enumerate(self.exps):
            for i in range(n):
                eb = ea.copy()
                eb[i] += 1
                b = self.index.get(tuple(eb))
                if b is not None:
                    self.dmat[i, b, a] = ea[i] + 1
        self.fact = np.array([np.prod([factorial(k) for k in e]) for e in self.exps], dtype=float)

    # construction -------------------------------------------------------
    def constant(self, value) -> np.ndarray:
        value = np.asarray(value)
        out = np.zeros(value.shape + (self.M,), dtype=np.result_type(value, float))
        out[..., 0] = value
        return out

    def variables(self, point) -> np.ndarray:
        """Coordinate jets x_i = p_i + xi_i, shape (..., n, M)."""
        point = np.asarray(point)
        out = self.constant(point)
        for i in range(self.n if self.K else 0):
            out[..., i, 1 + i] = 1.0
        return out

    # arithmetic ---------------------------------------------------------
    def mul(self, a, b):
        a = np.asarray(a)
        b = np.asarray(b)
        return (a[..., self.I] * b[..., self.J]) @ self.scatter

    def einsum(self, spec: str, a, b):
        """Jet-valued einsum of two operands (no jet index in ``spec``)."""
        lhs, out = spec.split("->")
        sa, sb = lhs.split(",")
        prod = np.einsum(f"...{sa}Z,...{sb}Z->...{out}Z", a[..., self.I], b[..., self.J])
        return prod @ self.scatter

    def power_series(self, a, coeffs):
        """sum_j coeffs[j] * (a - a0)^j for the nilpotent part of ``a``."""
        nil = np.array(a, copy=True)
        nil[..., 0] = 0
        out = self.constant(np.full(a.shape[:-1], coeffs[0], dtype=a.dtype))
        term = None
        for j in range(1, min(len(coeffs), self.K + 1)):
            term = nil if term is None else self.mul(term, nil)
            out = out + coeffs[j] * term
        return out

    def exp(self, a):
        a0 = a[..., 0]
        series = self.power_series(a, [1.0 / factorial(j) for j in range(self.K + 1)])
        return np.exp(a0)[..., None] * series

    def log(self, a):
        a0 = a[..., 0]
        u = a / a0[..., None]
        series = self.power_series(u, [0.0] + [(-1.0) ** (j + 1) / j for j in range(1, self.K + 1)])
        series[..., 0] = np.log(a0)
        return series

    def reciprocal(self, a):
        a0 = a[..., 0]
        u = a / a0[..., None]
        series = self.power_series(u, [(-1.0) ** j for j in range(self.K + 1)])
        return series / a0[..., None]

    def matinv(self, A):
        """Inverse of a jet-valued matrix, shape (..., k, k, M)."""
        A0inv = np.linalg.inv(A[..., 0])
        nil = np.array(A, copy=True)
        nil[..., 0] = 0
        X = -np.einsum("...ij,...jkZ->...ikZ", A0inv, nil)
        out = self.constant(A0inv)
        term = self.constant(A0inv)
        for _ in range(self.K):
            term = self.einsum("ij,jk->ik", X, term)
            out = out + term
        return out

    def deriv(self, a, i: int):
        """Partial derivative in variable ``i`` (top order becomes unreliable)."""
        return a @ self.dmat[i]

    def grad(self, a):
        """Stack of all first partials as a new axis before the jet axis."""
        return np.stack([self.deriv(a, i) for i in range(self.n)], axis=-2)

    # extraction ---------------------------------------------------------
    def value(self, a):
        return a[..., 0]

    def derivative_tensor(self, a, k: int):
        """Full symmetric tensor of k-th partial derivatives at the base point."""
        shape = a.shape[:-1] + (self.n,) * k
        out = np.zeros(shape, dtype=a.dtype)
        if k == 0:
            return a[..., 0].copy()
        for idx in np.ndindex(*((self.n,) * k)):
            e = np.bincount(np.array(idx), minlength=self.n)
            col = self.index[tuple(e)]
            out[(Ellipsis,) + idx] = a[..., col] * self.fact[col]
        return out


@lru_cache(maxsize=None)
def jet_algebra(n: int, K: int) -> JetAlgebra:
    return JetAlgebra(n, K)
