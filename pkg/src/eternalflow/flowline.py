"""Gradient flow lines of the normalized scalar curvature and the time-direction solvers.

The flow is gamma' = -c grad S with c = (m+1)/(2(m+3)); frames are parallel
along gamma, so in frame components the linearized operator is
P Y = Y' + c Hess S(gamma(t)) Y.

Time series live on a uniform window grid.  Time derivatives of sampled
series are taken from their interpolating spline (matrix ``TimeGrid.D``), and
the same matrix is used wherever a derivative of a grid series is needed, so
the discrete operators are mutually consistent.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import make_interp_spline

from .metric import DomainError, IntegrationError, MetricField, gamma_form
from .sphere import BandBasis

SVD_THRESHOLD = 1e-6
GREEN_CUTOFF = 40.0
GREEN_NODES = 8
H1_TOL = 1e-8


def flow_constant(m: int) -> float:
    return (m + 1) / (2 * (m + 3))


class KernelMismatch(RuntimeError):
    pass


class BandError(ValueError):
    pass


# ----------------------------------------------------------------------------
# grids


@dataclass(frozen=True, eq=False)
class TimeGrid:
    T: float
    n: int
    margin: float = 0.0
    spline_degree: int = 7

    def __post_init__(self):
        if not 0 <= self.margin < self.T:
            raise ValueError("margin must satisfy 0 <= margin < T")
        if self.n < self.spline_degree + 2:
            raise ValueError("too few time samples for the spline degree")

    @cached_property
    def times(self) -> np.ndarray:
        return np.linspace(-self.T, self.T, self.n)

    @property
    def dt(self) -> float:
        return 2 * self.T / (self.n - 1)

    @cached_property
    def weights(self) -> np.ndarray:
        w = np.full(self.n, self.dt)
        w[[0, -1]] *= 0.5
        return w

    @cached_property
    def interior(self) -> np.ndarray:
        return np.abs(self.times) <= self.T - self.margin + 1e-12

    @cached_property
    def D(self) -> np.ndarray:
        """Nodal derivative of the interpolating spline, as a matrix."""
        spl = make_interp_spline(self.times, np.eye(self.n), k=self.spline_degree)
        return spl.derivative()(self.times)

    def spline(self, values):
        return make_interp_spline(self.times, values, k=self.spline_degree, axis=0)

    def derivative(self, values) -> np.ndarray:
        return np.tensordot(self.D, values, axes=(1, 0))


@dataclass(eq=False)
class SpaceTimeField:
    """f(t, x) stored as harmonic band coefficients per time sample."""

    grid: TimeGrid
    basis: BandBasis
    coeffs: np.ndarray  # (n_t, n_basis)

    @property
    def values(self) -> np.ndarray:
        return self.basis.synthesize(self.coeffs)

    @classmethod
    def zeros(cls, grid, basis):
        return cls(grid, basis, np.zeros((grid.n, basis.size)))

    @classmethod
    def from_values(cls, grid, basis, values):
        return cls(grid, basis, basis.analyze(values))

    def time_derivative(self) -> "SpaceTimeField":
        return SpaceTimeField(self.grid, self.basis, self.grid.derivative(self.coeffs))

    def linear_part(self) -> np.ndarray:
        return self.coeffs[:, self.basis.band_slice(1)]

    def __add__(self, other):
        return SpaceTimeField(self.grid, self.basis, self.coeffs + other.coeffs)

    def __sub__(self, other):
        return SpaceTimeField(self.grid, self.basis, self.coeffs - other.coeffs)

    def scale(self, c):
        return SpaceTimeField(self.grid, self.basis, c * self.coeffs)


# ----------------------------------------------------------------------------
# scalar curvature and critical points


def scalar_data(metric: MetricField, points):
    """S, coordinate gradient dS, covariant Hessian (lower indices) at points."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    A, S = metric.scalar_curvature_jet(points, 4)
    d1 = A.derivative_tensor(S, 1)
    d2 = A.derivative_tensor(S, 2)
    psi1 = metric.psi_derivatives(points, 1)[1]
    # Gamma^p_ab dS_p for the conformal connection
    corr = (
        psi1[:, :, None] * d1[:, None, :]
        + d1[:, :, None] * psi1[:, None, :]
        - np.einsum("ab,n->nab", np.eye(metric.dim_ambient), np.sum(psi1 * d1, axis=1))
    )
    return A.value(S), d1, d2 - corr


def grad_S(metric: MetricField, points):
    """Metric gradient (upper index) of normalized S."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    A, S = metric.scalar_curvature_jet(points, 3)
    d1 = A.derivative_tensor(S, 1)
    psi = metric.psi_derivatives(points, 0)[0]
    return np.exp(-2 * psi)[:, None] * d1


@dataclass
class CriticalPoint:
    location: np.ndarray
    hessian_S: np.ndarray  # orthonormal-frame components
    morse_index: int
    nondegenerate: bool
    S: float


def classify(metric: MetricField, x, degeneracy_tol: float = 1e-8) -> CriticalPoint:
    S, _, H = scalar_data(metric, x)
    E = metric.orthonormal_frame(np.asarray(x, dtype=float))
    Hf = E.T @ H[0] @ E
    ev = np.linalg.eigvalsh(Hf)
    scale = max(1.0, float(np.max(np.abs(ev))))
    nondeg = bool(np.min(np.abs(ev)) > degeneracy_tol * scale)
    return CriticalPoint(np.asarray(x, dtype=float), Hf, int(np.sum(ev < 0)), nondeg, float(S[0]))


def find_critical_points(metric: MetricField, seeds, tol: float = 1e-11, max_iter: int = 60,
                         dedup: float = 1e-6) -> tuple[list[CriticalPoint], list[str]]:
    """Newton on dS = 0 from every seed; returns critical points and per-seed failures."""
    found: list[CriticalPoint] = []
    failures: list[str] = []
    for k, seed in enumerate(np.atleast_2d(np.asarray(seeds, dtype=float))):
        x = seed.copy()
        ok = False
        for _ in range(max_iter):
            try:
                metric.check_domain(x)
            except DomainError:
                break
            _, d1, _ = scalar_data(metric, x)
            g = d1[0]
            if np.max(np.abs(g)) < tol:
                ok = True
                break
            A, Sj = metric.scalar_curvature_jet(x[None], 4)
            try:
                step = np.linalg.solve(A.derivative_tensor(Sj, 2)[0], g)
            except np.linalg.LinAlgError:
                break
            x = x - step
        if not ok:
            failures.append(f"seed {k}: Newton did not converge")
            continue
        cp = classify(metric, x)
        if not cp.nondegenerate:
            failures.append(f"seed {k}: degenerate critical point at {np.round(x, 6).tolist()}")
        if all(np.linalg.norm(cp.location - q.location) > dedup for q in found):
            found.append(cp)
    return found, failures


# ----------------------------------------------------------------------------
# flow lines


@dataclass(eq=False)
class FlowLine:
    metric: MetricField
    grid: TimeGrid
    gamma: np.ndarray  # (n_t, n)
    frames: np.ndarray  # (n_t, n, n), columns g-orthonormal and parallel
    S: np.ndarray
    hess: np.ndarray  # (n_t, n, n) Hess S in frame components
    c: float
    dense: object = None  # callable t -> (gamma(t), E(t))
    limits: tuple = (None, None)
    warnings: list = field(default_factory=list)

    @property
    def m(self) -> int:
        return self.metric.m

    @property
    def n(self) -> int:
        return self.metric.dim_ambient

    @cached_property
    def gamma_dot(self) -> np.ndarray:
        return -self.c * grad_S(self.metric, self.gamma)

    @cached_property
    def velocity_frame(self) -> np.ndarray:
        """gamma' in frame components."""
        return np.einsum("tij,tj->ti", np.linalg.inv(self.frames), self.gamma_dot)

    def state(self, t):
        """gamma and E at arbitrary times (dense output of the flow ODE)."""
        return self.dense(np.atleast_1d(np.asarray(t, dtype=float)))

    def apply_P(self, Y: np.ndarray) -> np.ndarray:
        return self.grid.derivative(Y) + self.c * np.einsum("tij,tj->ti", self.hess, Y)

    @cached_property
    def is_constant(self) -> bool:
        return bool(np.max(np.abs(self.gamma - self.gamma[0])) == 0.0)


def _flow_rhs(metric, c, n):
    def rhs(_, y):
        x = y[:n]
        E = y[n:].reshape(n, n)
        d = metric.psi_derivatives(x[None], 1)[1][0]
        v = -c * grad_S(metric, x[None])[0]
        dE = -gamma_form(v[None, :], E.T, d[None, :]).T
        return np.concatenate([v, dE.reshape(-1)])

    return rhs


def integrate_flowline(metric: MetricField, start, grid: TimeGrid, extend: float = 1.0,
                       rtol: float = 1e-12, atol: float = 1e-13) -> FlowLine:
    """Flow line through ``start`` at t = 0 sampled on the window grid."""
    start = np.asarray(start, dtype=float)
    metric.check_domain(start)
    n = metric.dim_ambient
    c = flow_constant(metric.m)
    E0 = metric.orthonormal_frame(start)
    y0 = np.concatenate([start, E0.reshape(-1)])
    rhs = _flow_rhs(metric, c, n)
    ends = (grid.T + extend, -grid.T - extend)
    sols = []
    for t1 in ends:
        sol = solve_ivp(rhs, (0.0, t1), y0, method="DOP853", rtol=rtol, atol=atol, dense_output=True)
        if not sol.success:
            raise IntegrationError(sol.message)
        sols.append(sol.sol)
    fwd, bwd = sols

    def dense(t):
        t = np.asarray(t, dtype=float)
        y = np.where(t[None, :] >= 0, fwd(np.maximum(t, 0)), bwd(np.minimum(t, 0)))
        return y[:n].T, y[n:].T.reshape(len(t), n, n)

    gamma, frames = dense(grid.times)
    metric.check_domain(gamma)
    S, _, H = scalar_data(metric, gamma)
    hess = np.einsum("tia,tij,tjb->tab", frames, H, frames)
    line = FlowLine(metric, grid, gamma, frames, S, hess, c, dense)
    if np.any(np.diff(S) > 1e-10 * max(1.0, np.max(np.abs(S)))):
        raise IntegrationError("scalar curvature increased along the flow line")
    ends_cp = []
    for idx, side in ((0, "-"), (-1, "+")):
        cps, _ = find_critical_points(metric, gamma[idx][None])
        if cps and np.linalg.norm(cps[0].location - gamma[idx]) < 0.1:
            ends_cp.append(cps[0])
        else:
            ends_cp.append(None)
            line.warnings.append(f"end {side}: no critical point resolved near gamma({side}T)")
    line.limits = tuple(ends_cp)
    return line


def connecting_line(metric: MetricField, source: CriticalPoint, grid: TimeGrid, toward=None,
                     kick: float = 1e-3, level: float = 0.5) -> FlowLine:
    """Unstable flow line leaving ``source``, with t = 0 where S has dropped by ``level``
    of its total drop (measured on a long forward run).

    ``toward`` picks the branch of the most unstable direction.
    """
    x0 = source.location
    ev, V = np.linalg.eigh(source.hessian_S)
    if ev[0] >= 0:
        raise ValueError("source has no unstable direction")
    v = metric.orthonormal_frame(x0) @ V[:, 0]
    if toward is not None and v @ (np.asarray(toward, dtype=float) - x0) < 0:
        v = -v
    y0 = x0 + kick * v
    c = flow_constant(metric.m)
    n = metric.dim_ambient

    def rhs(_, y):
        return -c * grad_S(metric, y[None])[0]

    sol = solve_ivp(rhs, (0.0, 200.0), y0, method="DOP853", rtol=1e-12, atol=1e-13, dense_output=True)
    if not sol.success:
        raise IntegrationError(sol.message)
    S0 = scalar_data(metric, y0)[0][0]
    S1 = scalar_data(metric, sol.y[:, -1])[0][0]
    target = S0 + level * (S1 - S0)
    ts = np.linspace(0.0, 200.0, 4001)
    Ss = scalar_data(metric, sol.sol(ts).T)[0]
    k = int(np.argmax(Ss <= target))
    a, b = ts[k - 1], ts[k]
    for _ in range(60):
        mid = 0.5 * (a + b)
        if scalar_data(metric, sol.sol(mid))[0][0] > target:
            a = mid
        else:
            b = mid
    return integrate_flowline(metric, sol.sol(0.5 * (a + b))[:n], grid)


def constant_line(metric: MetricField, point, grid: TimeGrid) -> FlowLine:
    """Constant curve at a point (a critical point, or any point of a homogeneous metric)."""
    point = np.asarray(point, dtype=float)
    return integrate_flowline(metric, point, grid, extend=0.5)


# ----------------------------------------------------------------------------
# the operator P and its kernel-orthogonal Green solver


@dataclass(eq=False)
class PSolver:
    """Factorized boundary-value discretization of P on the window."""

    line: FlowLine
    pinv: np.ndarray
    kernel: np.ndarray  # (n_t * n, k) weighted-orthonormal columns in Y space
    rows_bc: tuple
    w_sqrt: np.ndarray
    expected_kernel: int | None

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        b = self._rhs_vector(rhs)
        z = self.pinv @ b
        Y = (z / self.w_sqrt).reshape(self.line.grid.n, self.line.n)
        return Y

    def _rhs_vector(self, rhs):
        line = self.line
        rhs = np.asarray(rhs, dtype=float).reshape(line.grid.n, line.n)
        Ppos, Pneg, A0, A1 = self.rows_bc
        bc0 = Ppos @ np.linalg.solve(A0, rhs[0]) if len(Ppos) else np.zeros(0)
        bc1 = Pneg @ np.linalg.solve(A1, rhs[-1]) if len(Pneg) else np.zeros(0)
        return np.concatenate([rhs[1:].reshape(-1), bc0, bc1])


def build_P_solver(line: FlowLine, eig_tol: float = 1e-8) -> PSolver:
    grid = line.grid
    nt, n = grid.n, line.n
    A = line.c * line.hess
    L = np.kron(grid.D, np.eye(n))
    for i in range(nt):
        L[i * n : (i + 1) * n, i * n : (i + 1) * n] += A[i]
    rows = [L[n:]]
    ev0, V0 = np.linalg.eigh(A[0])
    ev1, V1 = np.linalg.eigh(A[-1])
    scale = max(1.0, np.max(np.abs(A)))
    Ppos = V0[:, ev0 > eig_tol * scale].T
    Pneg = V1[:, ev1 < -eig_tol * scale].T
    blk0 = np.zeros((len(Ppos), nt * n))
    blk0[:, :n] = Ppos
    blk1 = np.zeros((len(Pneg), nt * n))
    blk1[:, -n:] = Pneg
    Mfull = np.vstack(rows + [blk0, blk1])
    w_sqrt = np.repeat(np.sqrt(grid.weights), n)
    Mw = Mfull / w_sqrt[None, :]
    U, sv, Vt = np.linalg.svd(Mw, full_matrices=True)
    thr = SVD_THRESHOLD * sv[0]
    rank = int(np.sum(sv > thr))
    pinv = (Vt[:rank].T / sv[:rank]) @ U[:, :rank].T
    kernel = Vt[rank:].T / w_sqrt[:, None]
    expected = None
    lo, hi = line.limits
    degenerate_ends = np.min(np.abs(ev0)) <= eig_tol * scale or np.min(np.abs(ev1)) <= eig_tol * scale
    if not degenerate_ends:
        expected = int(np.sum(ev0 < 0) - np.sum(ev1 < 0))
        if kernel.shape[1] > max(expected, 0):
            raise KernelMismatch(
                f"discrete P has kernel dimension {kernel.shape[1]}, expected {expected} from Morse indices"
            )
    A0 = A[0] if len(Ppos) else np.eye(n)
    A1 = A[-1] if len(Pneg) else np.eye(n)
    return PSolver(line, pinv, kernel, (Ppos, Pneg, A0, A1), w_sqrt, expected)


def solve_P(line: FlowLine, rhs: np.ndarray, solver: PSolver | None = None) -> np.ndarray:
    """Kernel-orthogonal bounded solution of (d/dt + c Hess S) Y = rhs on the window."""
    solver = solver or build_P_solver(line)
    return solver.solve(rhs)


# ----------------------------------------------------------------------------
# the scalar parabolic Green operator and H_s


def _green_nodes(a: float, s4: float, dt: float, n_gl: int = GREEN_NODES):
    """Composite Gauss nodes/weights for int_0^{40/|a|} e^{-|a| sigma} (.) d sigma."""
    a = abs(a)
    smax = GREEN_CUTOFF / a
    width = min(1.0 / a, dt / (2 * s4)) if s4 > 0 else 1.0 / a
    n_panels = int(np.ceil(smax / width))
    edges = np.linspace(0.0, smax, n_panels + 1)
    x, w = np.polynomial.legendre.leggauss(n_gl)
    lo, hi = edges[:-1, None], edges[1:, None]
    nodes = (0.5 * (hi - lo) * x + 0.5 * (hi + lo)).ravel()
    weights = (0.5 * (hi - lo) * w).ravel()
    return nodes, weights * np.exp(-a * nodes)


def scalar_green(a: float, s: float, rhs: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """Bounded solution of s^4 u' + a u = rhs (rhs extended by its end values).

    rhs may carry extra trailing axes; they are solved simultaneously.
    """
    if a == 0:
        raise BandError("a = 0: the kernel band has no Green operator")
    if s <= 0:
        raise ValueError("scale must be positive")
    rhs = np.asarray(rhs, dtype=float)
    s4 = s**4
    sigma, wts = _green_nodes(a, s4, grid.dt)
    spl = grid.spline(rhs)
    shift = -s4 * sigma if a > 0 else s4 * sigma
    tq = np.clip(grid.times[:, None] + shift[None, :], -grid.T, grid.T)
    vals = spl(tq.ravel()).reshape(tq.shape + rhs.shape[1:])
    u = np.einsum("q,tq...->t...", wts, vals)
    return u if a > 0 else -u


def solve_Qs(s: float, rhs: SpaceTimeField, h1_tol: float = H1_TOL) -> SpaceTimeField:
    """H_s = Q_s^{-1} on functions without band-1 content, band by band."""
    basis = rhs.basis
    lin = rhs.linear_part()
    scale = max(1.0, float(np.max(np.abs(rhs.coeffs))))
    bad = np.flatnonzero(np.max(np.abs(lin), axis=1) > h1_tol * scale)
    if len(bad):
        raise BandError(f"rhs has band-1 content at times {rhs.grid.times[bad].round(6).tolist()}")
    out = np.zeros_like(rhs.coeffs)
    for l in range(basis.L + 1):
        if l == 1:
            continue
        idx = basis.band_slice(l)
        out[:, idx] = scalar_green(basis.a[idx[0]], s, rhs.coeffs[:, idx], rhs.grid)
    return SpaceTimeField(rhs.grid, basis, out)


def apply_Qs(s: float, f: SpaceTimeField) -> SpaceTimeField:
    return SpaceTimeField(f.grid, f.basis, s**4 * f.grid.derivative(f.coeffs) + f.basis.a * f.coeffs)


# ----------------------------------------------------------------------------
# Hölder norms (diagnostics)


def _seminorm_t(values, times, alpha, window=1.0):
    values = np.asarray(values)
    v = values.reshape(len(times), -1)
    best = 0.0
    for lag in range(1, len(times)):
        dtl = times[lag] - times[0]
        if dtl > window + 1e-12:
            break
        diff = np.abs(v[lag:] - v[:-lag])
        best = max(best, float(np.max(diff)) / dtl**alpha)
    return best


def _seminorm_x(values, nodes, exponent):
    """values (n_t, n_nodes, n_comp): max over times and components of chord-Hölder quotients."""
    dist = np.linalg.norm(nodes[:, None, :] - nodes[None, :, :], axis=-1)
    iu = np.triu_indices(len(nodes), 1)
    d = dist[iu] ** exponent
    best = 0.0
    for row in values:
        diff = np.max(np.abs(row[:, None, :] - row[None, :, :]), axis=-1)[iu]
        best = max(best, float(np.max(diff / d)))
    return best


def holder_norms(f, grid: TimeGrid, k: int = 0, alpha: float = 0.25, eps: float = 1.0,
                 basis: BandBasis | None = None) -> float:
    """Discrete weighted Hölder norms.

    A time series (n_t, ...) gets sum_i eps^i ||d^i f||_0 + eps^k [d^k f]_alpha.
    A SpaceTimeField gets the weighted inhomogeneous norm with x-derivatives
    up to order 2k - 2j alongside the j-th time derivative (k <= 1).
    """
    if isinstance(f, SpaceTimeField):
        return _inhomogeneous(f, k, alpha, eps)
    values = np.asarray(f, dtype=float)
    derivs = [values]
    for _ in range(k):
        derivs.append(grid.derivative(derivs[-1]))
    total = sum(eps**i * float(np.max(np.abs(d))) for i, d in enumerate(derivs))
    return total + eps**k * _seminorm_t(derivs[k], grid.times, alpha)


def _inhomogeneous(f: SpaceTimeField, k: int, alpha: float, eps: float) -> float:
    if not 0 < alpha <= 0.5:
        raise ValueError("alpha must lie in (0, 1/2]")
    basis = f.basis
    grid = f.grid
    nodes = basis.grid.nodes
    c = f.coeffs
    # x-derivatives: ambient gradients/Hessians of the 0-homogeneous extension
    # projected to the sphere tangent space
    P = np.eye(len(nodes[0]))[None] - nodes[:, :, None] * nodes[:, None, :]
    grads = np.einsum("pbi,pij->pbj", basis.gradients, P)

    def d1(cc):
        return np.einsum("tb,pbj->tpj", cc, grads)

    def d2(cc):
        # sphere Hessian of the 0-homogeneous extension: P (D^2 p - l p I) P
        deg = basis.degree.astype(float)
        D2 = basis.hessians - (deg[None, :] * basis.values)[..., None, None] * np.eye(P.shape[-1])
        H = np.einsum("pij,pbjk,pkl->pbil", P, D2, P)
        return np.einsum("tb,pbil->tpil", cc, H)

    terms = []  # (eps power, array)
    vals = basis.synthesize(c)
    terms.append((0, vals, 0))
    if k >= 1:
        terms.append((0, d1(c), 1))
        terms.append((0, d2(c), 2))
        terms.append((1, basis.synthesize(grid.derivative(c)), 2))
    total = 0.0
    for j, arr, order in terms:
        total += eps**j * float(np.max(np.abs(arr)))
        if order == 2 * k:
            flat = arr.reshape(arr.shape[0], arr.shape[1], -1)
            total += eps**j * _seminorm_x(flat, nodes, 2 * alpha)
            total += eps**j * _seminorm_t(flat, grid.times, alpha)
    return total
