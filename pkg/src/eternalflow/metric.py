"""Analytic metrics on charts of R^(m+1), curvature jets, geodesics and normal charts.

All shipped families are conformally flat, g = exp(2 psi) delta:

* ``euclidean``: psi = 0;
* ``space_form``: psi = -log(1 + kappa |x|^2 / 4), sectional curvature kappa, g(0) = delta;
* ``conformal``: psi = sum of polynomial x Gaussian bumps.

Curvature jets are computed from the metric components alone (jets of
g_ij, then Christoffel symbols, Riemann, Ricci, covariant derivatives), so
they do not rely on the conformal structure.  The geodesic integrator does
use it: Gamma(u, v) = u <v, dpsi> + v <u, dpsi> - <u, v> grad psi.

Riemann convention: R[i, j, k, l] = R_{ijk}^l is the l-component of
R(d_i, d_j) d_k with R(X, Y)Z = nabla_X nabla_Y Z - nabla_Y nabla_X Z - nabla_[X,Y] Z,
so R_{pjq}^i x^p x^q is [R(x, d_j) x]^i.  With this ordering the normal chart
metric reads delta_ij + (1/3) R_{pjq}^i x^p x^q + O(x^3) (locked by a test).

Normalization (dimension m + 1): Ric = Ric_std / m and S = S_std / (m (m + 1)),
so the unit sphere has Ric = g and S = 1.  Then tr Ric = (m + 1) S and the
contracted Bianchi identity reads div Ric = (m + 1)/2 dS.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .jets import jet_algebra

RTOL = 1e-12
ATOL = 1e-12


class DomainError(ValueError):
    pass


class IntegrationError(RuntimeError):
    pass


# ----------------------------------------------------------------------------
# metric families


@dataclass(frozen=True)
class Bump:
    """Polynomial x Gaussian term: sum_e coef_e (x - c)^e exp(-|x - c|^2 / (2 width^2))."""

    center: tuple
    width: float
    terms: tuple  # ((exponent tuple, coefficient), ...)

    def jet(self, A, X):
        c = np.asarray(self.center, dtype=float)
        U = X - A.constant(c)
        r2 = sum(A.mul(U[..., i, :], U[..., i, :]) for i in range(A.n))
        gauss = A.exp(-r2 / (2 * self.width**2))
        poly = np.zeros_like(gauss)
        for expo, coef in self.terms:
            mono = A.constant(np.ones(X.shape[:-2], dtype=X.dtype))
            for i, e in enumerate(expo):
                for _ in range(e):
                    mono = A.mul(mono, U[..., i, :])
            poly = poly + coef * mono
        return A.mul(poly, gauss)


@dataclass(frozen=True)
class MetricField:
    """Conformally flat metric exp(2 psi) delta on a ball of R^(m+1)."""

    dim_ambient: int
    family: str = "euclidean"
    kappa: float = 0.0
    bumps: tuple = ()
    domain_radius: float = np.inf

    def __post_init__(self):
        if self.family not in ("euclidean", "space_form", "conformal"):
            raise ValueError(f"unknown metric family {self.family!r}")
        if self.family == "space_form" and self.kappa < 0:
            limit = 2.0 / np.sqrt(-self.kappa)
            if self.domain_radius > limit:
                object.__setattr__(self, "domain_radius", 0.999 * limit)

    @property
    def m(self) -> int:
        return self.dim_ambient - 1

    @property
    def is_flat(self) -> bool:
        return self.family == "euclidean" or (self.family == "space_form" and self.kappa == 0) or (
            self.family == "conformal" and not self.bumps
        )

    def check_domain(self, points) -> None:
        pts = np.real(np.asarray(points))
        r = np.sqrt(np.sum(pts**2, axis=-1))
        if np.any(~np.isfinite(r)) or np.any(r >= self.domain_radius):
            raise DomainError("point outside the chart domain")

    # jets -----------------------------------------------------------------
    def psi_jet(self, points, K: int):
        points = np.asarray(points)
        A = jet_algebra(self.dim_ambient, K)
        X = A.variables(points)
        if self.family == "euclidean":
            return A, A.constant(np.zeros(points.shape[:-1], dtype=points.dtype))
        if self.family == "space_form":
            r2 = sum(A.mul(X[..., i, :], X[..., i, :]) for i in range(A.n))
            return A, -A.log(A.constant(np.ones(points.shape[:-1])) + 0.25 * self.kappa * r2)
        psi = A.constant(np.zeros(points.shape[:-1], dtype=points.dtype))
        for b in self.bumps:
            psi = psi + b.jet(A, X)
        return A, psi

    def metric_jet(self, points, K: int):
        """Jets of g_ij at the points, shape (..., n, n, M)."""
        A, psi = self.psi_jet(points, K)
        conf = A.exp(2 * psi)
        eye = np.eye(self.dim_ambient)
        return A, eye[..., :, :, None] * conf[..., None, None, :]

    def psi_derivatives(self, points, order: int = 3):
        """psi and its partial derivative tensors up to ``order`` at the points."""
        if self.family == "conformal" and order <= 3:
            return _bump_derivatives(self.bumps, np.asarray(points), order)
        A, psi = self.psi_jet(points, order)
        return [A.derivative_tensor(psi, k) for k in range(order + 1)]

    def metric(self, points):
        psi = self.psi_derivatives(points, 0)[0]
        return np.exp(2 * psi)[..., None, None] * np.eye(self.dim_ambient)

    def orthonormal_frame(self, point):
        psi = self.psi_derivatives(point, 0)[0]
        return np.exp(-psi) * np.eye(self.dim_ambient)

    def scalar_curvature_jet(self, points, K: int):
        """Normalized S as a jet from the conformal closed form (order K - 2)."""
        A, psi = self.psi_jet(points, K)
        n = self.dim_ambient
        grad = A.grad(psi)
        lap = sum(A.deriv(grad[..., i, :], i) for i in range(n))
        g2 = sum(A.mul(grad[..., i, :], grad[..., i, :]) for i in range(n))
        s_std = -A.mul(A.exp(-2 * psi), 2 * (n - 1) * lap + (n - 2) * (n - 1) * g2)
        return A, s_std / ((n - 1) * n)


@lru_cache(maxsize=None)
def _poly_derivative_table(terms, n, order):
    """For each k <= order: list of (index tuple, [(coef, exponent), ...]) of nonzero entries."""
    tables = []
    for k in range(order + 1):
        rows = []
        for idx in np.ndindex(*((n,) * k)):
            entries = []
            for expo, coef in terms:
                e = list(expo)
                c = float(coef)
                for i in idx:
                    c *= e[i]
                    e[i] -= 1
                if c:
                    entries.append((c, tuple(e)))
            if entries:
                rows.append((idx, entries))
        tables.append(rows)
    return tables


def _poly_derivatives(terms, u, order):
    n = u.shape[-1]
    powers = {}

    def mono(e):
        if e not in powers:
            out = np.ones(u.shape[:-1], dtype=u.dtype)
            for i, ei in enumerate(e):
                if ei:
                    out = out * u[..., i] ** ei
            powers[e] = out
        return powers[e]

    res = []
    for k, rows in enumerate(_poly_derivative_table(tuple(terms), n, order)):
        T = np.zeros(u.shape[:-1] + (n,) * k, dtype=u.dtype)
        for idx, entries in rows:
            T[(Ellipsis,) + idx] = sum(c * mono(e) for c, e in entries)
        res.append(T)
    return res


def _bump_derivatives(bumps, x, order):
    """Closed-form derivatives of sum of polynomial x Gaussian bumps (order <= 3)."""
    n = x.shape[-1]
    eye = np.eye(n)
    out = [np.zeros(x.shape[:-1] + (n,) * k, dtype=np.result_type(x, float)) for k in range(order + 1)]
    for b in bumps:
        u = x - np.asarray(b.center, dtype=float)
        a = 1.0 / b.width**2
        g0 = np.exp(-0.5 * a * np.sum(u * u, axis=-1))
        g = [g0]
        if order >= 1:
            g.append(-a * u * g0[..., None])
        if order >= 2:
            g.append((a * a * u[..., :, None] * u[..., None, :] - a * eye) * g0[..., None, None])
        if order >= 3:
            ag = a * a * g0[..., None]
            uu = u[..., :, None] * u[..., None, :]
            au = ag * u
            T3 = (-a * au)[..., :, None, None] * uu[..., None, :, :]
            T3 = T3 + eye[:, :, None] * au[..., None, None, :] + eye[:, None, :] * au[..., None, :, None]
            T3 = T3 + eye[None] * au[..., :, None, None]
            g.append(T3)
        p = _poly_derivatives(b.terms, u, order)
        out[0] = out[0] + p[0] * g[0]
        if order >= 1:
            out[1] = out[1] + p[1] * g0[..., None] + p[0][..., None] * g[1]
        if order >= 2:
            pg = p[1][..., :, None] * g[1][..., None, :]
            out[2] = out[2] + p[2] * g0[..., None, None] + pg + np.swapaxes(pg, -1, -2) + p[0][..., None, None] * g[2]
        if order >= 3:
            A = p[2][..., :, :, None] * g[1][..., None, None, :]
            B = g[2][..., :, :, None] * p[1][..., None, None, :]
            sym = lambda T: T + np.moveaxis(T, -1, -2) + np.moveaxis(T, -1, -3)
            out[3] = out[3] + p[3] * g0[..., None, None, None] + sym(A) + sym(B) + p[0][..., None, None, None] * g[3]
    return out


def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


def gamma_form(u, v, w):
    """Conformal Christoffel contraction u <v, w> + v <u, w> - <u, v> w (last axis)."""
    return (
        u * np.sum(v * w, axis=-1)[..., None]
        + v * np.sum(u * w, axis=-1)[..., None]
        - np.sum(u * v, axis=-1)[..., None] * w
    )


def christoffel(metric: MetricField, points):
    """Gamma^k_ij at points, array (..., k, i, j)."""
    d1 = metric.psi_derivatives(points, 1)[1]
    n = metric.dim_ambient
    eye = np.eye(n)
    return (
        np.einsum("ki,...j->...kij", eye, d1)
        + np.einsum("kj,...i->...kij", eye, d1)
        - np.einsum("ij,...k->...kij", eye, d1)
    )


# ----------------------------------------------------------------------------
# curvature jets


def _cov_deriv(A, T, gamma, kinds: str):
    """Covariant derivative of a jet tensor; appends the derivative slot last.

    ``kinds`` lists 'l' (lower) or 'u' (upper) for every tensor slot, and
    gamma is the Christoffel jet with layout [k, i, j] = Gamma^k_ij.
    """
    n = A.n
    out = A.grad(T)  # [slots..., y, M] with y the derivative slot
    letters = "abcdefgh"[: len(kinds)]
    for s, kind in enumerate(kinds):
        src = letters[:s] + "x" + letters[s + 1 :]
        if kind == "l":
            # - Gamma^x_{y a_s} T_{.. x ..}
            out = out - A.einsum(f"xy{letters[s]},{src}->{letters}y", gamma, T)
        else:
            # + Gamma^{a_s}_{y x} T^{.. x ..}
            out = out + A.einsum(f"{letters[s]}yx,{src}->{letters}y", gamma, T)
    return out


@dataclass(frozen=True, eq=False)
class CurvatureJet:
    """Curvature data at a point (normalized conventions, chart components)."""

    point: np.ndarray
    m: int
    metric: np.ndarray
    christoffel: np.ndarray
    riemann: np.ndarray  # [i, j, k, l] = R_{ijk}^l
    riemann_d: np.ndarray  # [i, j, k, l, r] = R_{ijk}^l_{;r}
    riemann_dd: np.ndarray  # [..., r, s]
    ricci_std: np.ndarray
    ricci_n: np.ndarray
    scalar_n: float
    ric_deriv: np.ndarray  # [a, b, c] = Ric_{ab;c}
    ric_deriv2: np.ndarray  # [a, b, c, d] = Ric_{ab;cd}
    dS: np.ndarray  # S_{;a}
    hess_S: np.ndarray  # S_{;ab}

    @property
    def grad_S(self) -> np.ndarray:
        return np.linalg.solve(self.metric, self.dS)

    def in_frame(self, E: np.ndarray) -> "CurvatureJet":
        """Components in the frame whose columns are E (vectors at the point)."""
        Ei = np.linalg.inv(E)

        def tr(T, kinds):
            for s, kind in enumerate(kinds):
                M = E if kind == "l" else Ei.T
                T = np.moveaxis(np.tensordot(T, M, axes=([s], [0])), -1, s)
            return T

        return CurvatureJet(
            point=self.point,
            m=self.m,
            metric=tr(self.metric, "ll"),
            christoffel=tr(self.christoffel, "ull"),
            riemann=tr(self.riemann, "lllu"),
            riemann_d=tr(self.riemann_d, "lllul"),
            riemann_dd=tr(self.riemann_dd, "lllull"),
            ricci_std=tr(self.ricci_std, "ll"),
            ricci_n=tr(self.ricci_n, "ll"),
            scalar_n=self.scalar_n,
            ric_deriv=tr(self.ric_deriv, "lll"),
            ric_deriv2=tr(self.ric_deriv2, "llll"),
            dS=tr(self.dS, "l"),
            hess_S=tr(self.hess_S, "ll"),
        )


def curvature_jet(metric: MetricField, p, K: int = 4) -> CurvatureJet:
    """Riemann, normalized Ricci and S with covariant derivatives up to order 2."""
    p = np.asarray(p, dtype=float)
    if K < 4:
        raise ValueError("curvature jets need metric derivatives of order >= 4")
    metric.check_domain(p)
    A, g = metric.metric_jet(p, K)
    g0 = g[..., 0]
    if np.any(np.linalg.eigvalsh(g0) <= 0):
        raise DomainError("metric not positive definite")
    n = A.n
    m = n - 1
    ginv = A.matinv(g)
    dg = A.grad(g)  # [l, j, i] = d_i g_lj
    T = dg + np.swapaxes(dg, -2, -3) - np.moveaxis(dg, -2, -4)
    # T[l, i, j] = d_j g_li + d_i g_lj - d_l g_ij
    gam = 0.5 * A.einsum("kl,lij->kij", ginv, T)
    dgam = A.grad(gam)  # [l, j, k, i] = d_i Gamma^l_jk
    R = (
        np.einsum("ljki...->ijkl...", dgam)
        - np.einsum("likj...->ijkl...", dgam)
        + A.einsum("lip,pjk->ijkl", gam, gam)
        - A.einsum("ljp,pik->ijkl", gam, gam)
    )
    ric_std = np.einsum("ijki...->jk...", R)
    s_std = A.einsum("jk,jk->", ginv, ric_std)
    ric = ric_std / m
    S = s_std / (m * (m + 1))
    ric_d = _cov_deriv(A, ric, gam, "ll")
    ric_dd = _cov_deriv(A, ric_d, gam, "lll")
    dS = A.grad(S)
    hS = _cov_deriv(A, dS, gam, "l")
    R_d = _cov_deriv(A, R, gam, "lllu")
    R_dd = _cov_deriv(A, R_d, gam, "lllul")
    v = A.value
    return CurvatureJet(
        point=p,
        m=m,
        metric=v(g),
        christoffel=v(gam),
        riemann=v(R),
        riemann_d=v(R_d),
        riemann_dd=v(R_dd),
        ricci_std=v(ric_std),
        ricci_n=v(ric),
        scalar_n=float(v(S)),
        ric_deriv=v(ric_d),
        ric_deriv2=v(ric_dd),
        dS=v(dS),
        hess_S=v(hS),
    )


# ----------------------------------------------------------------------------
# geodesics with first and second variations


@dataclass
class GeodesicBundle:
    """Endpoints of geodesics tau -> Exp(x, tau v) at tau = 1 with variations.

    ``J[..., a, :]`` is d(endpoint)/d(parameter a) and ``K[..., a, b, :]`` the
    second derivative, for parameters entering linearly through the initial
    velocity (v = v0 + sum_a w_a dv_a) with fixed base point.  ``T`` holds
    parallel transports of extra vectors to the endpoint.
    """

    x: np.ndarray
    v: np.ndarray
    J: np.ndarray | None = None
    K: np.ndarray | None = None
    T: np.ndarray | None = None


def shoot(metric: MetricField, x0, v0, dv=None, second: bool = False, transport=None,
          rtol: float = RTOL, atol: float = ATOL, t_end: float = 1.0, t_eval=None,
          first_step: float | None = None):
    """Integrate batched geodesics (and Jacobi data) from tau = 0 to t_end.

    x0, v0: (N, n).  dv: (N, p, n) initial velocity variations (J(0) = 0).
    transport: (N, q, n) vectors parallel transported along the geodesic.
    """
    x0 = np.asarray(x0)
    v0 = np.asarray(v0)
    N, n = x0.shape
    dtype = np.result_type(x0, v0, float) if dv is None else np.result_type(x0, v0, dv, float)
    p = 0 if dv is None else dv.shape[1]
    q = 0 if transport is None else transport.shape[1]
    parts = [x0, v0]
    if p:
        parts += [np.zeros((N, p, n)), dv]
    if p and second:
        parts += [np.zeros((N, p, p, n)), np.zeros((N, p, p, n))]
    if q:
        parts += [transport]
    shapes = [a.shape for a in parts]
    sizes = [int(np.prod(s)) for s in shapes]
    y0 = np.concatenate([np.asarray(a, dtype=dtype).reshape(-1) for a in parts])
    if metric.is_flat and metric.family == "euclidean":
        order = 0
    else:
        order = 3 if (p and second) else (2 if p else 1)

    def unpack(y):
        out, k = [], 0
        for s, z in zip(shapes, sizes):
            out.append(y[k : k + z].reshape(s))
            k += z
        return out

    def rhs(_, y):
        parts_ = unpack(y)
        x, v = parts_[0], parts_[1]
        if order == 0:
            zero = [np.zeros_like(a) for a in parts_]
            zero[0] = v
            if p:
                zero[2] = parts_[3]
            if p and second:
                zero[4] = parts_[5]
            return np.concatenate([a.reshape(-1) for a in zero])
        d = metric.psi_derivatives(x, order)
        d1 = d[1]
        vd = _dot(v, d1)
        vsq = _dot(v, v)
        out = [v, vsq[:, None] * d1 - 2 * vd[:, None] * v]
        k = 2
        if p:
            J, Jd = parts_[2], parts_[3]
            d2 = d[2]
            HJ = J @ d2  # [n, a, i] (d2 symmetric)
            vHJ = _dot(v[:, None, :], HJ)
            vJd = _dot(v[:, None, :], Jd)
            Jdd = _dot(Jd, d1[:, None, :])
            accJ = (
                vsq[:, None, None] * HJ
                - 2 * vHJ[..., None] * v[:, None, :]
                - 2 * (v[:, None, :] * Jdd[..., None] + Jd * vd[:, None, None] - vJd[..., None] * d1[:, None, :])
            )
            out += [Jd, accJ]
            k = 4
        if p and second:
            Kx, Kd = parts_[4], parts_[5]
            d3 = d[3]
            TJ = np.einsum("nijk,nbk->nbij", d3, J)
            TJJ = np.einsum("nbij,naj->nabi", TJ, J)
            X = TJJ + Kx @ d2[:, None]  # T(J_a, J_b) + H K_ab
            v4 = v[:, None, None, :]
            vX = _dot(v4, X)
            acc = vsq[:, None, None, None] * X - 2 * vX[..., None] * v4
            HJa = HJ[:, :, None, :]
            HJb = HJ[:, None, :, :]
            Jda = Jd[:, :, None, :]
            Jdb = Jd[:, None, :, :]
            g1 = d1[:, None, None, :]
            # Gamma(v, Y; Z) = v <Y,Z> + Y <v,Z> - <v,Y> Z
            acc = acc - 2 * (v4 * _dot(Jdb, HJa)[..., None] + Jdb * vHJ[:, :, None, None] - vJd[:, None, :, None] * HJa)
            acc = acc - 2 * (v4 * _dot(Jda, HJb)[..., None] + Jda * vHJ[:, None, :, None] - vJd[:, :, None, None] * HJb)
            acc = acc - 2 * (Jda * Jdd[:, None, :, None] + Jdb * Jdd[:, :, None, None] - _dot(Jda, Jdb)[..., None] * g1)
            acc = acc - 2 * (v4 * _dot(Kd, g1)[..., None] + Kd * vd[:, None, None, None] - _dot(v4, Kd)[..., None] * g1)
            out += [Kd, acc]
            k = 6
        if q:
            U = parts_[k]
            out += [-gamma_form(v[:, None, :], U, d1[:, None, :])]
        return np.concatenate([a.reshape(-1) for a in out])

    sol = solve_ivp(rhs, (0.0, t_end), y0, method="DOP853", rtol=rtol, atol=atol, t_eval=t_eval,
                    first_step=first_step)
    if not sol.success:
        raise IntegrationError(sol.message)

    def bundle(y):
        parts_ = unpack(y)
        res = GeodesicBundle(x=parts_[0], v=parts_[1])
        k = 2
        if p:
            res.J = parts_[2]
            k = 4
        if p and second:
            res.K = parts_[4]
            k = 6
        if q:
            res.T = parts_[k]
        return res

    if t_eval is not None:
        return [bundle(y) for y in sol.y.T]
    res = bundle(sol.y[:, -1])
    if np.isfinite(metric.domain_radius):
        metric.check_domain(res.x)
    return res


def exp_map(metric: MetricField, x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    metric.check_domain(x)
    return shoot(metric, x[None], y[None]).x[0]


def parallel_transport(metric: MetricField, x, y, U):
    x = np.asarray(x, dtype=float)
    metric.check_domain(x)
    b = shoot(metric, x[None], np.asarray(y, dtype=float)[None], transport=np.asarray(U, dtype=float)[None, None])
    return b.T[0, 0]


def geodesic_speed_profile(metric: MetricField, x, y, taus):
    """g-speed of tau -> Exp(x, tau y) at the requested parameters."""
    out = []
    for t in taus:
        b = shoot(metric, np.asarray(x, float)[None], np.asarray(y, float)[None], t_end=float(t)) if t > 0 else None
        if b is None:
            pt, vel = np.asarray(x, float), np.asarray(y, float)
        else:
            pt, vel = b.x[0], b.v[0]
        g = metric.metric(pt)
        out.append(np.sqrt(vel @ g @ vel))
    return np.array(out)


# ----------------------------------------------------------------------------
# normal charts


@dataclass
class ChartSample:
    """Pulled-back geometry at chart points w (batched)."""

    w: np.ndarray
    point: np.ndarray  # Exp_p(E w) in the ambient chart
    J: np.ndarray  # (N, n, n): J[:, :, a] = d point / d w_a
    h: np.ndarray  # pulled-back metric
    christoffel: np.ndarray | None  # [N, k, i, j]


def pullback_geometry(metric: MetricField, base, L, w, second: bool = True, rtol=RTOL, atol=ATOL) -> ChartSample:
    """Geometry of the map w -> Exp_base(L w), batched over w.

    base: (N, n) or (n,) base points; L: (N, n, n) or (n, n) linear maps.
    """
    w = np.asarray(w)
    N, n = w.shape
    base = np.broadcast_to(base, (N, n))
    L = np.broadcast_to(L, (N, n, n))
    v0 = np.einsum("nij,nj->ni", L, w)
    dv = np.swapaxes(L, 1, 2)  # dv[:, a, :] = L[:, :, a]
    b = shoot(metric, base, v0, dv=dv, second=second, rtol=rtol, atol=atol)
    J = np.swapaxes(b.J, 1, 2)  # [N, i, a]
    conf = np.exp(2 * metric.psi_derivatives(b.x, 0)[0])
    h = conf[:, None, None] * np.einsum("nia,nib->nab", J, J)
    gam = None
    if second:
        G = christoffel(metric, b.x)
        acc = np.moveaxis(b.K, -1, 1) + np.einsum("nkij,nia,njb->nkab", G, J, J)
        gam = np.einsum("nka,nabc->nkbc", np.linalg.inv(J), acc)
    return ChartSample(w=w, point=b.x, J=J, h=h, christoffel=gam)


@dataclass
class Chart:
    """Normal chart Exp_p(E w) with E a g-orthonormal frame at p."""

    metric: MetricField
    center: np.ndarray
    frame: np.ndarray
    working_radius: float

    def sample(self, w, second: bool = True) -> ChartSample:
        w = np.atleast_2d(np.asarray(w, dtype=float))
        r = np.sqrt(np.sum(w**2, axis=1))
        if np.any(r > self.working_radius):
            raise DomainError(f"chart radius {r.max():.3g} exceeds working radius {self.working_radius:.3g}")
        return pullback_geometry(self.metric, self.center, self.frame, w, second=second)

    def pulled_back_metric(self, w) -> np.ndarray:
        return self.sample(w, second=False).h

    def curvature_at_origin(self, step: float = 2e-3) -> np.ndarray:
        """Riemann tensor of the pulled-back metric at 0 from differenced Christoffels.

        Independent route: fourth-order central differences of the exact
        pulled-back Christoffel symbols (which vanish at the origin).
        """
        n = self.metric.dim_ambient
        ws = []
        for i in range(n):
            for k in (-2, -1, 1, 2):
                w = np.zeros(n)
                w[i] = k * step
                ws.append(w)
        G = self.sample(np.array(ws)).christoffel.reshape(n, 4, n, n, n)
        dG = (G[:, 0] - 8 * G[:, 1] + 8 * G[:, 2] - G[:, 3]) / (12 * step)  # [i, l, j, k] = d_i Gamma^l_jk
        R = np.einsum("iljk->ijkl", dG) - np.einsum("jlik->ijkl", dG)
        return R


def injectivity_estimate(metric: MetricField, p, n_dirs: int = 12, r_max: float = 6.0, seed: int = 0) -> float:
    """Lower-bound estimate of the injectivity radius by conjugate-point spraying.

    Shoots unit-speed geodesics in ``n_dirs`` directions and returns the first
    sampled radius where a Jacobi determinant stops being positive or the
    geodesic nears the chart boundary, capped by r_max.
    """
    p = np.asarray(p, dtype=float)
    n = metric.dim_ambient
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(n_dirs, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    E = metric.orthonormal_frame(p)
    v = dirs @ E.T
    free = metric.domain_radius - np.linalg.norm(p)
    # geodesics may leave the chart (e.g. through the antipode of a space
    # form); shrink the probed range until the spray integrates
    for _ in range(6):
        radii = np.linspace(r_max / 24, r_max, 24)
        if np.isfinite(free):
            radii = radii[radii < free]
            if not len(radii):
                return float(free)
        try:
            samples = shoot(metric, np.broadcast_to(p, (n_dirs, n)), v, dv=np.broadcast_to(E.T, (n_dirs, n, n)),
                            rtol=1e-8, atol=1e-10, t_end=float(radii[-1]), t_eval=radii)
            break
        except IntegrationError:
            r_max /= 2
    else:
        return float(r_max)
    for r, b in zip(radii, samples):
        near_edge = np.sqrt(np.sum(b.x**2, axis=1)) >= 0.999 * metric.domain_radius
        if np.any(np.linalg.det(b.J) <= 0) or np.any(near_edge):
            return float(r)
    return float(min(r_max, free))


def normal_chart(metric: MetricField, p, frame=None, working_radius: float | None = None) -> Chart:
    p = np.asarray(p, dtype=float)
    metric.check_domain(p)
    E = metric.orthonormal_frame(p) if frame is None else np.asarray(frame, dtype=float)
    g = metric.metric(p)
    if np.max(np.abs(E.T @ g @ E - np.eye(len(p)))) > 1e-9:
        raise ValueError("frame is not orthonormal")
    limit = 0.4 * injectivity_estimate(metric, p)
    if working_radius is None:
        working_radius = limit
    elif working_radius > limit:
        raise DomainError(f"working radius {working_radius} exceeds 0.4 x injectivity estimate {limit:.3g}")
    return Chart(metric, p, E, working_radius)


# ----------------------------------------------------------------------------
# Taylor expansion checks in normal charts


@dataclass
class TaylorFit:
    name: str
    fitted: np.ndarray
    predicted: np.ndarray
    rel_error: float
    remainder_slope: float
    order: int


def _fit_ray(values, radii, order, n_terms):
    """Fit sum_{j} c_j r^(order + j) per direction; values (R, D, ...)."""
    V = np.stack([radii ** (order + j) for j in range(n_terms)], axis=1)
    flat = values.reshape(len(radii), -1)
    coef, *_ = np.linalg.lstsq(V, flat, rcond=None)
    return coef.reshape((n_terms,) + values.shape[1:]), np.linalg.cond(V)


def _slope(radii, errs):
    ok = errs > 0
    if ok.sum() < 2:
        return np.inf
    return float(np.polyfit(np.log(radii[ok]), np.log(errs[ok]), 1)[0])


def verify_normal_expansion(metric: MetricField, p, radii: Sequence[float] = tuple(np.geomspace(0.01, 0.1, 8)),
                            n_dirs: int = 8, seed: int = 1, cond_max: float = 1e12) -> dict:
    """Fit A, B = A^{-1}, Gamma^k_ii and the transport matrix along rays of the normal chart."""
    radii = np.asarray(radii, dtype=float)
    p = np.asarray(p, dtype=float)
    n = metric.dim_ambient
    E = metric.orthonormal_frame(p)
    jet = curvature_jet(metric, p).in_frame(E)
    R = jet.riemann
    Rd = jet.riemann_d
    rng = np.random.default_rng(seed)
    U = rng.normal(size=(n_dirs, n))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    W = (radii[:, None, None] * U[None]).reshape(-1, n)
    # geometry with transported frame along each ray for the transport matrix
    N = len(W)
    v0 = W @ E.T
    dv = np.broadcast_to(E.T, (N, n, n))
    b = shoot(metric, np.broadcast_to(p, (N, n)), v0, dv=dv, second=True, transport=np.broadcast_to(E.T, (N, n, n)))
    J = np.swapaxes(b.J, 1, 2)
    conf = np.exp(2 * metric.psi_derivatives(b.x, 0)[0])
    h = conf[:, None, None] * np.einsum("nia,nib->nab", J, J)
    G = christoffel(metric, b.x)
    acc = np.moveaxis(b.K, -1, 1) + np.einsum("nkij,nia,njb->nkab", G, J, J)
    gam = np.einsum("nka,nabc->nkbc", np.linalg.inv(J), acc)
    F = np.swapaxes(b.T, 1, 2)  # transported frame at endpoint, columns
    Mt = np.linalg.solve(F, J)  # frame coordinates of transported coordinate vectors

    shape = (len(radii), n_dirs)
    A = h.reshape(shape + (n, n)) - np.eye(n)
    B = np.linalg.inv(h).reshape(shape + (n, n)) - np.eye(n)
    Gd = np.einsum("rdkii->rdki", gam.reshape(shape + (n, n, n)))
    Mm = Mt.reshape(shape + (n, n)) - np.eye(n)

    quad = np.einsum("pjqi,dp,dq->dij", R, U, U)  # [R(u, d_j) u]^i
    lin = np.einsum("piik,dp->dki", R, U)  # [k, i] = R_{pii}^k u^p
    cub = np.einsum("pjqir,dp,dq,dr->dij", Rd, U, U, U)
    report = {}
    checks = [
        ("A", A, quad / 3.0, 2),
        ("B", B, -quad / 3.0, 2),
        ("Gamma_ii", Gd, 2.0 * lin / 3.0, 1),
        ("M", Mm, quad / 6.0, 2),
    ]
    scale = max(np.max(np.abs(R)), 1e-300)
    for name, vals, pred, order in checks:
        coef, cond = _fit_ray(vals, radii, order, 5)
        if cond > cond_max:
            raise np.linalg.LinAlgError(f"fit condition number {cond:.3g} too large")
        fitted = coef[0]
        err = float(np.max(np.abs(fitted - pred)) / scale) if np.max(np.abs(R)) > 0 else float(np.max(np.abs(fitted)))
        rem = np.array([np.max(np.abs(vals[i] - radii[i] ** order * pred)) for i in range(len(radii))])
        report[name] = TaylorFit(name, fitted, pred, err, _slope(radii, rem), order)
    # the transport matrix cubic term is reported as a diagnostic only
    report["M_cubic_fit"] = _fit_ray(Mm, radii, 2, 5)[0][1]
    report["M_cubic_ref"] = cub
    return report
