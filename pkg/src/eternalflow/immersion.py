"""The perturbed sphere family along a flow line and its forced-MCF residual.

At time t the sphere is centred at q = Exp_gamma(t)(s E Y) and is the radial
graph w = rho(x) x, rho = s (1 + s^2 f(t, x)), in the chart w -> Exp_q(L w)
with L the differential of the centre map applied to the frame E.  Geometry
is computed in the original coordinates through the pulled-back metric and
connection of that chart, so the formulas stay exact (no Taylor truncation).

Orders of Y and f are kept separate: Y(s) = sum_k s^k Y_k and likewise for
f, which lets complex s flow through every step (the residual is analytic in
s and Taylor coefficients can be read off a contour).

Sign convention for the residual:
    Phi = (1/s)(H - 1/s) - s <V, N>,
with V the t-derivative of the immersion and gamma' = -c grad S.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .flowline import FlowLine, SpaceTimeField, holder_norms
from .metric import pullback_geometry, shoot
from .sphere import BandBasis

V_STEP_FRACTION = 0.25
GEODESIC_TOL = 1e-10
N_RADIAL = 10


class DegenerateGraph(ValueError):
    pass


@dataclass(eq=False)
class ImmersionParams:
    """Scale and perturbation series; ``Y`` and ``f`` hold the per-order terms."""

    s: complex
    basis: BandBasis
    Y: tuple = ()  # each (n_t, n)
    f: tuple = ()  # each (n_t, n_basis) band coefficients
    _splines: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_fields(cls, s, basis, Y=None, f=None):
        """Single (already summed) displacement and graph function."""
        Ys = () if Y is None else (np.asarray(Y),)
        fs = () if f is None else ((f.coeffs if isinstance(f, SpaceTimeField) else np.asarray(f)),)
        return cls(s, basis, Ys, fs)

    def __post_init__(self):
        if isinstance(self.s, complex) or np.iscomplexobj(self.s):
            if np.imag(self.s) == 0:
                self.s = float(np.real(self.s))
        self.Y = tuple(np.asarray(y) for y in self.Y)
        self.f = tuple(np.asarray(c) for c in self.f)

    @property
    def has_Y(self) -> bool:
        return any(np.any(y != 0) for y in self.Y)

    @property
    def has_f(self) -> bool:
        return any(np.any(c != 0) for c in self.f)

    def _series(self, name, grid, t):
        terms = getattr(self, name)
        if not terms:
            return None
        key = (name, id(grid))
        if key not in self._splines:
            self._splines[key] = [grid.spline(a) for a in terms]
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = 0
        for k, spl in enumerate(self._splines[key]):
            out = out + self.s**k * spl(t)
        return out

    def Y_at(self, grid, t):
        return self._series("Y", grid, t)

    def f_at(self, grid, t):
        return self._series("f", grid, t)


# ----------------------------------------------------------------------------
# basis evaluation at arbitrary sphere points


def _basis_data(basis: BandBasis, x: np.ndarray | None):
    if x is None:
        return basis.grid.nodes, basis.values, basis.gradients, basis.hessians
    x = np.atleast_2d(np.asarray(x, dtype=float))
    vals = np.concatenate([b.values(x) for b in basis.bands], axis=1)
    grads = np.concatenate([b.gradients(x) for b in basis.bands], axis=1)
    hess = np.concatenate([b.hessians(x) for b in basis.bands], axis=1)
    return x, vals, grads, hess


def _centres(line: FlowLine, params: ImmersionParams, t):
    """Centre q(t) and linear map L(t) for an array of times."""
    gam, E = line.state(t)
    Y = params.Y_at(line.grid, t)
    if Y is None or not np.any(Y != 0):
        dtype = np.result_type(params.s, float)
        return gam.astype(dtype), E.astype(dtype)
    v0 = params.s * np.einsum("tij,tj->ti", E, Y)
    b = shoot(line.metric, gam, v0, dv=np.swapaxes(E, 1, 2), rtol=GEODESIC_TOL, atol=GEODESIC_TOL)
    return b.x, np.swapaxes(b.J, 1, 2)


def _radius(params: ImmersionParams, fc, vals):
    """rho and f at the nodes; fc (n_t, n_basis) or None."""
    s = params.s
    if fc is None:
        fx = np.zeros((1, len(vals)))
    else:
        fx = fc @ vals.T
    return s * (1 + s**2 * fx), fx


# ----------------------------------------------------------------------------
# surface geometry


@dataclass(eq=False)
class SurfaceSample:
    times: np.ndarray
    x: np.ndarray  # (n_x, n)
    point: np.ndarray  # (n_t, n_x, n)
    normal: np.ndarray  # (n_t, n_x, n) chart components, g-unit
    H: np.ndarray  # (n_t, n_x)
    conformal: np.ndarray  # e^{2 psi} at the points
    rho: np.ndarray
    J: np.ndarray


def surface_geometry(line: FlowLine, params: ImmersionParams, t, x=None) -> SurfaceSample:
    """Points, outward unit normals and mean curvature at times t and sphere points x."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    basis = params.basis
    x, vals, grads, hess = _basis_data(basis, x)
    nt, nx, n = len(t), len(x), line.n
    m = n - 1
    s = params.s
    q, L = _centres(line, params, t)
    fc = params.f_at(line.grid, t)
    rho, fx = _radius(params, fc, vals)
    rho = np.broadcast_to(rho, (nt, nx))
    if np.any(np.real(1 + s**2 * fx) <= 0):
        raise DegenerateGraph("1 + s^2 f must stay positive")
    w = rho[..., None] * x[None]
    base = np.repeat(q, nx, axis=0)
    Lr = np.repeat(L, nx, axis=0)
    cs = pullback_geometry(line.metric, base, Lr, w.reshape(-1, n), second=True,
                           rtol=GEODESIC_TOL, atol=GEODESIC_TOL)
    h = cs.h.reshape(nt, nx, n, n)
    G = cs.christoffel.reshape(nt, nx, n, n, n)

    # level set fhat(w) = |w| - s (1 + s^2 phi(w)), phi the 0-homogeneous extension of f
    eye = np.eye(n)
    xx = x[:, :, None] * x[:, None, :]
    Df = np.broadcast_to(x, (nt, nx, n)).astype(rho.dtype)
    D2f = (eye - xx)[None] / rho[..., None, None]
    if fc is not None:
        deg = basis.degree.astype(float)
        P = vals  # (nx, nb)
        gq = grads - deg[None, :, None] * P[..., None] * x[:, None, :]  # rho * grad q
        d2 = (
            hess
            - deg[None, :, None, None] * (grads[..., :, None] * x[:, None, None, :] + x[:, None, :, None] * grads[..., None, :])
            - deg[None, :, None, None] * P[..., None, None] * eye
            + (deg * (deg + 2))[None, :, None, None] * P[..., None, None] * xx[:, None]
        )  # rho^2 * D^2 q
        Df = Df - s**3 * np.einsum("tb,xbi->txi", fc, gq) / rho[..., None]
        D2f = D2f - s**3 * np.einsum("tb,xbij->txij", fc, d2) / rho[..., None, None] ** 2
    hinv = np.linalg.inv(h)
    grad = np.einsum("txij,txj->txi", hinv, Df)
    nrm = np.sqrt(np.einsum("txi,txi->tx", grad, Df))
    Hess = D2f - np.einsum("txkij,txk->txij", G, Df)
    lap = np.einsum("txij,txij->tx", hinv, Hess)
    quad = np.einsum("txi,txij,txj->tx", grad, Hess, grad)
    H = (lap / nrm - quad / nrm**3) / m
    J = cs.J.reshape(nt, nx, n, n)
    N = np.einsum("txia,txa->txi", J, grad / nrm[..., None])
    conf = np.exp(2 * line.metric.psi_derivatives(cs.point, 0)[0]).reshape(nt, nx)
    return SurfaceSample(t, x, cs.point.reshape(nt, nx, n), N, H, conf, rho, J)


def embed(line: FlowLine, params: ImmersionParams, t, x=None, with_jacobian: bool = False):
    """Points e(s, Y, f)(t, x); optionally the chart Jacobian d point / d w."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    basis = params.basis
    x, vals, _, _ = _basis_data(basis, x)
    q, L = _centres(line, params, t)
    fc = params.f_at(line.grid, t)
    rho, _ = _radius(params, fc, vals)
    rho = np.broadcast_to(rho, (len(t), len(x)))
    w = (rho[..., None] * x[None]).reshape(-1, line.n)
    base = np.repeat(q, len(x), axis=0)
    Lr = np.repeat(L, len(x), axis=0)
    if with_jacobian:
        cs = pullback_geometry(line.metric, base, Lr, w, second=False, rtol=GEODESIC_TOL, atol=GEODESIC_TOL)
        return cs.point.reshape(len(t), len(x), -1), cs.J.reshape(len(t), len(x), line.n, line.n)
    v0 = np.einsum("nij,nj->ni", Lr, w)
    return shoot(line.metric, base, v0, rtol=GEODESIC_TOL, atol=GEODESIC_TOL).x.reshape(len(t), len(x), -1)


def unit_normal(line, params, t, x=None) -> np.ndarray:
    return surface_geometry(line, params, t, x).normal


def mean_curvature(line, params, t, x=None) -> np.ndarray:
    return surface_geometry(line, params, t, x).H


def variation_field(line: FlowLine, params: ImmersionParams, t, x=None, step: float | None = None) -> np.ndarray:
    """d/dt of the immersion by Richardson-extrapolated central differences."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    r = V_STEP_FRACTION * line.grid.dt if step is None else step
    shifts = np.array([r, -r, r / 2, -r / 2])
    tt = (t[:, None] + shifts[None, :]).ravel()
    pts = embed(line, params, tt, x).reshape(len(t), 4, -1, line.n)
    d_r = (pts[:, 0] - pts[:, 1]) / (2 * r)
    d_h = (pts[:, 2] - pts[:, 3]) / r
    return (4 * d_h - d_r) / 3


# ----------------------------------------------------------------------------
# the residual


@dataclass(eq=False)
class ResidualField:
    s: complex
    times: np.ndarray
    values: np.ndarray  # (n_t, n_nodes)
    interior: np.ndarray  # bool mask over times
    basis: BandBasis
    H: np.ndarray | None = None
    VN: np.ndarray | None = None

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values[self.interior])))

    @cached_property
    def linear_component(self) -> np.ndarray:
        """b(t) with Pi Phi(t) = <b(t), x>."""
        return self.basis.linear_coefficients(self.values)

    def holder(self, grid, alpha: float = 0.25) -> float:
        vals = np.real(self.values)
        return holder_norms(vals[self.interior], _subgrid(grid, self.interior), 0, alpha)


class _SubGrid:
    def __init__(self, times):
        self.times = times


def _subgrid(grid, mask):
    return _SubGrid(grid.times[mask])


def phi_operator(line: FlowLine, params: ImmersionParams, times=None, keep_parts: bool = False) -> ResidualField:
    """Phi on the grid times (or the given subset) at the basis quadrature nodes."""
    grid = line.grid
    if times is None:
        times = grid.times
        interior = grid.interior
    else:
        times = np.atleast_1d(np.asarray(times, dtype=float))
        interior = np.abs(times) <= grid.T - grid.margin + 1e-12
    s = params.s
    geo = surface_geometry(line, params, times)
    V = variation_field(line, params, times)
    VN = geo.conformal * np.einsum("txi,txi->tx", V, geo.normal)
    phi = (geo.H - 1 / s) / s - s * VN
    return ResidualField(s, times, phi, interior, params.basis,
                         geo.H if keep_parts else None, VN if keep_parts else None)


# ----------------------------------------------------------------------------
# area and volume


def _tangent_frames(x):
    """Orthonormal bases of the tangent spaces of S^m at x, shape (n_x, n, m)."""
    n = x.shape[1]
    P = np.eye(n)[None] - x[:, :, None] * x[:, None, :]
    U, _, _ = np.linalg.svd(P)
    return U[:, :, : n - 1]


def area_volume(line: FlowLine, params: ImmersionParams, t: float, n_radial: int = N_RADIAL):
    """(Area, Volume, Area - Volume / s) of the immersed sphere at time t."""
    basis = params.basis
    x, vals, grads, _ = _basis_data(basis, None)
    n = line.n
    wq = basis.grid.weights
    s = params.s
    q, L = _centres(line, params, np.array([t]))
    fc = params.f_at(line.grid, np.array([t]))
    rho, _ = _radius(params, fc, vals)
    rho = np.broadcast_to(rho, (1, len(x)))[0]
    # tangential derivative of rho
    if fc is not None:
        deg = basis.degree.astype(float)
        gf = np.einsum("b,xbi->xi", fc[0], grads - deg[None, :, None] * vals[..., None] * x[:, None, :])
        drho = s**3 * gf
    else:
        drho = np.zeros_like(x)
    T = _tangent_frames(x)
    base = np.repeat(q, len(x), axis=0)
    Lr = np.repeat(L, len(x), axis=0)
    cs = pullback_geometry(line.metric, base, Lr, rho[:, None] * x, second=False)
    U = rho[:, None, None] * T + x[:, :, None] * np.einsum("xi,xia->xa", drho, T)[:, None, :]
    Gm = np.einsum("xia,xij,xjb->xab", U, cs.h, U)
    area = np.sum(wq * np.sqrt(np.linalg.det(Gm)))
    # volume: radial Gauss-Legendre on [0, rho(x)]
    z, wz = np.polynomial.legendre.leggauss(n_radial)
    z = 0.5 * (z + 1)
    wz = 0.5 * wz
    r = rho[:, None] * z[None, :]
    pts = (r[..., None] * x[:, None, :]).reshape(-1, n)
    cr = pullback_geometry(line.metric, np.repeat(base, n_radial, axis=0), np.repeat(Lr, n_radial, axis=0), pts,
                           second=False)
    dens = np.sqrt(np.linalg.det(cr.h)).reshape(len(x), n_radial)
    m = n - 1
    radial = np.sum(wz * dens * r**m, axis=1) * rho
    volume = np.sum(wq * radial)
    return area, volume, area - volume / s
