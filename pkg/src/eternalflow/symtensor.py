"""Dense symmetric tensors over R^(m+1).

Symmetric products follow the shuffle convention: every ordered (k, l)
shuffle of the index slots is counted once, so that delta (.) delta has
entry 6 at (1,1,1,1) and entry 2 at (1,1,2,2) in three dimensions.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from math import factorial, gamma, pi

import numpy as np

SYMMETRY_TOL = 1e-10


def _symmetrize(a: np.ndarray) -> np.ndarray:
    """Average entries over each index multiset."""
    k = a.ndim
    if k < 2:
        return a
    n = a.shape[0]
    idx = np.indices(a.shape).reshape(k, -1).T
    key = np.sort(idx, axis=1) @ (n ** np.arange(k))
    _, inverse = np.unique(key, return_inverse=True)
    sums = np.bincount(inverse, weights=a.ravel())
    counts = np.bincount(inverse)
    return (sums / counts)[inverse].reshape(a.shape)


@dataclass(frozen=True, eq=False)
class SymTensor:
    """Symmetric tensor of order ``order`` over R^dim_ambient."""

    dim_ambient: int
    entries: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.entries, dtype=float)
        if a.ndim and any(s != self.dim_ambient for s in a.shape):
            raise ValueError(f"entries shape {a.shape} does not match dimension {self.dim_ambient}")
        sym = _symmetrize(a)
        scale = max(float(np.max(np.abs(a))) if a.size else 0.0, 1.0)
        if a.ndim >= 2 and np.max(np.abs(sym - a)) > SYMMETRY_TOL * scale:
            raise ValueError("tensor is not symmetric")
        sym.setflags(write=False)
        object.__setattr__(self, "entries", sym)

    @property
    def order(self) -> int:
        return self.entries.ndim

    @property
    def m(self) -> int:
        return self.dim_ambient - 1

    def __getitem__(self, idx):
        return self.entries[idx]

    def __add__(self, other: "SymTensor") -> "SymTensor":
        _check_dims(self, other)
        return SymTensor(self.dim_ambient, self.entries + other.entries)

    def __sub__(self, other: "SymTensor") -> "SymTensor":
        _check_dims(self, other)
        return SymTensor(self.dim_ambient, self.entries - other.entries)

    def __mul__(self, c: float) -> "SymTensor":
        return SymTensor(self.dim_ambient, c * self.entries)

    __rmul__ = __mul__

    def allclose(self, other: "SymTensor", atol: float = 1e-12) -> bool:
        return self.order == other.order and np.allclose(self.entries, other.entries, rtol=0, atol=atol)

    def contract_vector(self, x: np.ndarray) -> np.ndarray:
        """T(x, ..., x) for a batch of vectors of shape (..., n)."""
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, x.shape[-1])
        res = np.broadcast_to(self.entries, (len(flat),) + self.entries.shape)
        for _ in range(self.order):
            res = np.einsum("bi...,bi->b...", res, flat)
        return res.reshape(x.shape[:-1])


def _check_dims(a: SymTensor, b: SymTensor) -> None:
    if a.dim_ambient != b.dim_ambient:
        raise ValueError(f"dimension mismatch: {a.dim_ambient} vs {b.dim_ambient}")


def scalar(c: float, dim_ambient: int) -> SymTensor:
    return SymTensor(dim_ambient, np.asarray(float(c)))


def delta(dim_ambient: int) -> SymTensor:
    return SymTensor(dim_ambient, np.eye(dim_ambient))


def sym_product(t1: SymTensor, t2: SymTensor) -> SymTensor:
    """Shuffle product: sum over the (k, l)-shuffles of the k + l slots."""
    _check_dims(t1, t2)
    k, l = t1.order, t2.order
    n = t1.dim_ambient
    if k == 0 or l == 0:
        c, t = (t1, t2) if k == 0 else (t2, t1)
        return SymTensor(n, float(c.entries) * t.entries)
    outer = np.multiply.outer(t1.entries, t2.entries)
    total = np.zeros((n,) * (k + l))
    for first in combinations(range(k + l), k):
        rest = [i for i in range(k + l) if i not in first]
        # slot first[j] carries t1's j-th index, slot rest[j] t2's j-th index
        perm = np.argsort(list(first) + rest)
        total += np.transpose(outer, perm)
    return SymTensor(n, total)


def delta_contract(t: SymTensor) -> SymTensor:
    """Contract the last two slots against delta."""
    if t.order < 2:
        raise ValueError("delta contraction needs order >= 2")
    return SymTensor(t.dim_ambient, np.trace(t.entries, axis1=-2, axis2=-1))


def delta_power(k: int, m: int) -> SymTensor:
    if k < 0:
        raise ValueError("k must be nonnegative")
    out = scalar(1.0, m + 1)
    d = delta(m + 1)
    for _ in range(k):
        out = sym_product(d, out)
    return out


def double_factorial(n: int) -> int:
    """n!! with the convention (-1)!! = 0!! = 1."""
    if n <= 0:
        return 1
    out = 1
    while n > 1:
        out *= n
        n -= 2
    return out


def sphere_volume(m: int) -> float:
    """Vol(S^m) for the unit sphere in R^(m+1)."""
    return 2.0 * pi ** ((m + 1) / 2) / gamma((m + 1) / 2)


def moment_constant(m: int, k: int) -> float:
    """C_k with int_{S^m} x^{i_1}...x^{i_2k} = C_k delta^k."""
    return sphere_volume(m) * double_factorial(m - 1) / (factorial(k) * double_factorial(m + 2 * k - 1))


def sphere_moment(m: int, l: int) -> SymTensor:
    if l < 0:
        raise ValueError("l must be nonnegative")
    if l % 2:
        return SymTensor(m + 1, np.zeros((m + 1,) * l))
    k = l // 2
    return moment_constant(m, k) * delta_power(k, m)
