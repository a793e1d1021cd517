"""Order-by-order construction of the approximate solutions and their checks.

With Phi expanded in s, the order-k coefficient contains -<P Y_{k-2}, x> and
-A f_k (A = (1/m)(m + Lap), band-diagonal with entries a_l), plus a remainder
fixed by lower orders.  Hence, with c_k the order-k coefficient computed
with the unknowns of that order set to zero,

    f_k = H (Pi-perp c_k),     Y_k = G b,  Pi c_{k+2} = <b, x>,

where H inverts A (or Q_s for the canonical s-dependent fields) and G is the
kernel-orthogonal inverse of P.  The coefficients are read off numerically,
either from a complex contour around s = 0 (default) or from a real ladder.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .flowline import (FlowLine, PSolver, SpaceTimeField, build_P_solver, holder_norms, solve_Qs)
from .immersion import ImmersionParams, phi_operator
from .sphere import BandBasis

log = logging.getLogger(__name__)

DEFAULT_LADDER = (0.4, 0.3, 0.22, 0.16, 0.12, 0.08)
N_MAX = 3
EXTRACTION_TOL = 1e-5
SUBSTITUTION_TOL = 1e-6
CONTOUR_RADIUS = 0.2
CONTOUR_POINTS = 10
VANDERMONDE_COND_MAX = 1e12
ZERO_TOL = 1e-12  # absolute size below which a coefficient field counts as zero


class ExtractionError(RuntimeError):
    pass


class LeakageError(RuntimeError):
    pass


class DegreeCapError(RuntimeError):
    pass


# ----------------------------------------------------------------------------
# Taylor coefficient extraction


@dataclass
class Extraction:
    coefficient: np.ndarray
    error: float
    coefficients: np.ndarray  # all recovered orders, leading axis = order


def _contour_nodes(radius, points):
    j = np.arange(points // 2 + 1)
    return radius * np.exp(2j * np.pi * j / points)


def contour_coefficients(evaluator, radius: float = CONTOUR_RADIUS, points: int = CONTOUR_POINTS,
                         max_order: int | None = None):
    """Taylor coefficients of a real-analytic evaluator from a circle of radius ``radius``.

    Uses conjugate symmetry, so points/2 + 1 evaluations.  Returns the
    coefficients of orders 0..max_order and an aliasing estimate per order
    (difference to the rule with half the points).
    """
    if points % 2:
        raise ValueError("contour rule needs an even number of points")
    sj = _contour_nodes(radius, points)
    vals = [np.asarray(evaluator(s)) for s in sj]
    full = [vals[0]] + vals[1:-1] + [vals[-1]] + [np.conj(v) for v in vals[-2:0:-1]]
    full = np.stack(full)
    nodes = radius * np.exp(2j * np.pi * np.arange(points) / points)
    kmax = points // 2 - 1 if max_order is None else max_order
    coeffs, errs = [], []
    for k in range(kmax + 1):
        w = nodes ** (-k) / points
        c = np.real(np.tensordot(w, full, axes=(0, 0)))
        half = np.real(np.tensordot(2 * w[::2], full[::2], axes=(0, 0)))
        coeffs.append(c)
        errs.append(float(np.max(np.abs(c - half))))
    return np.stack(coeffs), np.array(errs)


def ladder_coefficients(evaluator, ladder):
    """Exact polynomial fit through real ladder values (Vandermonde in s)."""
    ladder = np.asarray(ladder, dtype=float)
    V = np.vander(ladder, increasing=True)
    cond = np.linalg.cond(V)
    if cond > VANDERMONDE_COND_MAX:
        raise ExtractionError(f"Vandermonde condition number {cond:.3g} above threshold")
    vals = np.stack([np.real(np.asarray(evaluator(s))) for s in ladder])
    flat = vals.reshape(len(ladder), -1)
    coeffs = np.linalg.solve(V, flat).reshape(vals.shape)
    # drop the largest scale and refit one order lower
    keep = np.argsort(ladder)[:-1]
    V2 = np.vander(ladder[keep], increasing=True)
    c2 = np.linalg.solve(V2, flat[keep]).reshape((len(keep),) + vals.shape[1:])
    errs = np.array([float(np.max(np.abs(coeffs[k] - c2[k]))) for k in range(len(keep))] + [np.inf])
    return coeffs, errs


def extract_coefficient(evaluator, k: int, ladder=None, mode: str = "contour", vanish_below: int = 0,
                        tol: float = EXTRACTION_TOL, radius: float = CONTOUR_RADIUS,
                        points: int = CONTOUR_POINTS) -> Extraction:
    """Order-k Taylor coefficient of s -> evaluator(s) with an error estimate.

    Orders below ``vanish_below`` are required to vanish to ``tol``.
    """
    if mode == "ladder":
        ladder = DEFAULT_LADDER if ladder is None else ladder
        if len(ladder) < k + 2:
            raise ExtractionError("ladder needs at least k + 2 points")
        coeffs, errs = ladder_coefficients(evaluator, ladder)
    elif mode == "contour":
        if points // 2 - 1 < k:
            raise ExtractionError("contour rule too coarse for the requested order")
        coeffs, errs = contour_coefficients(evaluator, radius, points)
    else:
        raise ValueError(f"unknown extraction mode {mode!r}")
    for j in range(vanish_below):
        if np.max(np.abs(coeffs[j])) > tol:
            raise ExtractionError(f"order {j} coefficient {np.max(np.abs(coeffs[j])):.3g} should vanish")
    return Extraction(coeffs[k], float(errs[k]), coeffs)


# ----------------------------------------------------------------------------
# expansion state


@dataclass
class OrderRecord:
    order: int
    kind: str  # "f" or "Y"
    norm: float
    degree: int
    extraction_error: float
    substitution: float
    checks: dict = field(default_factory=dict)


@dataclass
class ExpansionState:
    """f_0..f_N as band coefficients of rho_k = Pi-perp c_k (f_k = H rho_k) and Y_0..Y_{N-1}."""

    line: FlowLine
    basis: BandBasis
    rho: list = field(default_factory=list)  # each (n_t, n_basis), Pi-perp sources
    Y: list = field(default_factory=list)  # each (n_t, n)
    records: list = field(default_factory=list)
    ladder: tuple = DEFAULT_LADDER
    failed: str | None = None
    _psolver: PSolver | None = None

    @property
    def order(self) -> int:
        return len(self.rho) - 1

    @property
    def grid(self):
        return self.line.grid

    @property
    def psolver(self) -> PSolver:
        if self._psolver is None:
            self._psolver = build_P_solver(self.line)
        return self._psolver

    def static_f(self, k: int) -> np.ndarray:
        """A^{-1} rho_k (the s = 0 member of the canonical family)."""
        a = self.basis.a.copy()
        a[self.basis.band_slice(1)] = np.inf
        return self.rho[k] / a

    def canonical_f(self, k: int, s: float) -> SpaceTimeField:
        return solve_Qs(s, SpaceTimeField(self.grid, self.basis, self.rho[k]))

    def static_params(self, s, n_f: int | None = None, n_Y: int | None = None) -> ImmersionParams:
        n_f = len(self.rho) if n_f is None else n_f
        n_Y = len(self.Y) if n_Y is None else n_Y
        return ImmersionParams(s, self.basis, tuple(self.Y[:n_Y]), tuple(self.static_f(k) for k in range(n_f)))

    def partial_sums(self, s: float, N: int):
        """(sum_{k<N} s^k Y_k, sum_{k<=N} s^k f_{k,s}) with canonical f."""
        Y = sum((s**k * self.Y[k] for k in range(min(N, len(self.Y)))), np.zeros((self.grid.n, self.line.n)))
        f = np.zeros((self.grid.n, self.basis.size))
        for k in range(min(N + 1, len(self.rho))):
            f = f + s**k * self.canonical_f(k, s).coeffs
        return Y, f

    def params(self, s: float, N: int) -> ImmersionParams:
        Y, f = self.partial_sums(s, N)
        return ImmersionParams(s, self.basis, (Y,), (f,))


def _evaluator(state: ExpansionState, n_f: int, n_Y: int):
    def ev(s):
        return phi_operator(state.line, state.static_params(s, n_f, n_Y)).values

    return ev


def _degree(basis: BandBasis, coeffs: np.ndarray, tol: float = 1e-10) -> int:
    energy = np.max(np.abs(coeffs), axis=0)
    scale = float(np.max(energy))
    if scale <= ZERO_TOL:
        return 0
    live = basis.degree[energy > tol * scale]
    return int(live.max()) if live.size else 0


def _sweep(state, n_f, n_Y, mode, ladder):
    ev = _evaluator(state, n_f, n_Y)
    if mode == "contour":
        return contour_coefficients(ev)
    return ladder_coefficients(ev, ladder)


def _interior_max(state, arr):
    return float(np.max(np.abs(np.asarray(arr)[state.grid.interior])))


def _solve_f(state: ExpansionState, k: int, coeffs, errs, degree_cap: int):
    basis = state.basis
    c = basis.analyze(coeffs[k])
    lin = c[:, basis.band_slice(1)].copy()
    c[:, basis.band_slice(1)] = 0
    deg = _degree(basis, c)
    src = coeffs[k][state.grid.interior]
    # relative tails of rounding noise carry no information
    tail = 0.0 if np.max(np.abs(src)) <= ZERO_TOL else float(np.max(basis.tail_energy(src)))
    if deg > degree_cap or tail > basis.tail_tol:
        raise DegreeCapError(f"order {k} graph term needs bands beyond the cap (degree {deg}, tail {tail:.2g})")
    state.rho.append(c)
    f0 = SpaceTimeField(state.grid, basis, c)
    # substitution: A f_k - rho_k = 0 for the static member
    sub = _interior_max(state, basis.synthesize(basis.a * state.static_f(k) - c))
    rec = OrderRecord(k, "f", float(np.max(np.abs(state.static_f(k)))), deg, float(errs[k]), sub,
                      {"band1_in_source": _interior_max(state, lin)})
    state.records.append(rec)
    return f0


def _solve_Y(state: ExpansionState, k: int, coeffs, errs):
    """Y_k from the order-(k+2) band-1 coefficient."""
    b = state.basis.linear_coefficients(coeffs[k + 2])
    Y = state.psolver.solve(b)
    state.Y.append(Y)
    sub = _interior_max(state, state.line.apply_P(Y) - b)
    rec = OrderRecord(k, "Y", float(np.max(np.abs(Y))), 1, float(errs[k + 2]), sub)
    state.records.append(rec)
    return Y


def _check_vanishing(state, coeffs, upto_all: int, upto_pi: int, tol: float):
    """Orders <= upto_all of Phi and <= upto_pi of Pi Phi must vanish on the interior."""
    checks = {}
    for j in range(upto_all + 1):
        checks[f"phi_order_{j}"] = _interior_max(state, coeffs[j])
    for j in range(upto_pi + 1):
        checks[f"pi_order_{j}"] = _interior_max(state, state.basis.linear_coefficients(coeffs[j]))
    bad = {k: v for k, v in checks.items() if v > 10 * tol}
    return checks, bad


def first_order(state: ExpansionState, mode: str = "contour", degree_cap: int | None = None) -> ExpansionState:
    """f_0 from Phi(s, 0, 0)."""
    cap = state.basis.L if degree_cap is None else degree_cap
    coeffs, errs = _sweep(state, 0, 0, mode, state.ladder)
    _solve_f(state, 0, coeffs, errs, cap)
    checks, _ = _check_vanishing(state, coeffs, -1, 1, EXTRACTION_TOL)
    state.records[-1].checks.update(checks)
    return state


def next_order(state: ExpansionState, mode: str = "contour", degree_cap: int | None = None,
               tol: float = EXTRACTION_TOL) -> ExpansionState:
    """From f_0..f_k, Y_0..Y_{k-1} to f_0..f_{k+1}, Y_0..Y_k."""
    k = state.order
    if k + 1 > N_MAX:
        raise ValueError(f"order above N_max = {N_MAX}")
    cap = state.basis.L if degree_cap is None else degree_cap
    # Y_k from Pi of order k + 2 (current f_0..f_k, Y_0..Y_{k-1})
    coeffs, errs = _sweep(state, k + 1, k, mode, state.ladder)
    checks, bad = _check_vanishing(state, coeffs, k, k + 1, tol)
    if bad:
        raise ExtractionError(f"lower orders do not vanish: {bad}")
    _solve_Y(state, k, coeffs, errs)
    state.records[-1].checks.update(checks)
    # f_{k+1} from Pi-perp of order k + 1 (now including Y_k)
    coeffs, errs = _sweep(state, k + 1, k + 1, mode, state.ladder)
    checks, bad = _check_vanishing(state, coeffs, k, k + 2, tol)
    if bad:
        raise ExtractionError(f"re-verification failed: {bad}")
    lin = _interior_max(state, state.basis.linear_coefficients(coeffs[k + 1]))
    if lin > 10 * tol:
        raise LeakageError(f"band-1 content {lin:.3g} in the order-{k + 1} graph equation")
    _solve_f(state, k + 1, coeffs, errs, cap)
    state.records[-1].checks.update(checks)
    return state


def build_expansion(line: FlowLine, basis: BandBasis, N: int, mode: str = "contour",
                    ladder=DEFAULT_LADDER, degree_cap: int | None = None) -> ExpansionState:
    if not 0 <= N <= N_MAX:
        raise ValueError(f"order must lie in [0, {N_MAX}]")
    state = ExpansionState(line, basis, ladder=tuple(ladder))
    try:
        first_order(state, mode, degree_cap)
        while state.order < N:
            log.info("expansion: order %d -> %d", state.order, state.order + 1)
            next_order(state, mode, degree_cap)
    except (ExtractionError, LeakageError, DegreeCapError) as exc:
        state.failed = f"{type(exc).__name__}: {exc}"
    return state


# ----------------------------------------------------------------------------
# residual decay


@dataclass
class ResidualReport:
    ladder: tuple
    sup: dict  # N -> list of sup norms over the ladder
    holder: dict
    slopes: dict
    passed: dict
    norms: dict  # (kind, k) -> list over ladder
    norm_spread: dict

    def table(self):
        rows = []
        for N, vals in self.sup.items():
            for s, v, h in zip(self.ladder, vals, self.holder[N]):
                rows.append({"order": N, "s": s, "sup": v, "holder": h})
        return rows


def fit_slope(scales, values) -> float:
    x = np.log(np.asarray(scales, dtype=float))
    y = np.log(np.maximum(np.asarray(values, dtype=float), 1e-300))
    return float(np.polyfit(x, y, 1)[0])


def residual_sweep(state: ExpansionState, orders=None, ladder=None, alpha: float = 0.25,
                   zero_tol: float = 1e-12) -> ResidualReport:
    ladder = tuple(state.ladder if ladder is None else ladder)
    orders = range(state.order + 1) if orders is None else orders
    grid = state.grid
    sup, hol, slopes, passed = {}, {}, {}, {}
    for N in orders:
        sup[N], hol[N] = [], []
        for s in ladder:
            r = phi_operator(state.line, state.params(s, N))
            sup[N].append(r.sup_norm)
            hol[N].append(r.holder(grid, alpha))
        if max(sup[N]) <= zero_tol:
            slopes[N] = float("inf")
            passed[N] = True
        else:
            slopes[N] = fit_slope(ladder, sup[N])
            passed[N] = slopes[N] >= N + 0.7
    norms, spread = {}, {}
    for k in range(len(state.rho)):
        vals = [holder_norms(state.canonical_f(k, s), grid, 1, alpha, s**4) for s in ladder]
        norms[("f", k)] = vals
    for k, Y in enumerate(state.Y):
        norms[("Y", k)] = [holder_norms(Y, grid, 1, alpha)] * len(ladder)
    for key, vals in norms.items():
        med = float(np.median(vals))
        spread[key] = 0.0 if med == 0 else float(np.max(np.abs(np.array(vals) - med)) / med)
    return ResidualReport(ladder, sup, hol, slopes, passed, norms, spread)


# ----------------------------------------------------------------------------
# Newton refinement at fixed s


@dataclass
class NewtonResult:
    s: float
    Y: np.ndarray
    f: SpaceTimeField
    initial: float
    residual: float
    history: list
    converged: bool


def _psi(line, basis, s, Y, fc):
    r = phi_operator(line, ImmersionParams(s, basis, (Y,), (fc,)))
    b = basis.linear_coefficients(r.values) / s**2
    c = basis.analyze(r.values)
    c[:, basis.band_slice(1)] = 0
    return b, c, r


def newton_refine(s: float, state: ExpansionState, N: int | None = None, reduction: float = 1e-2,
                  max_iter: int = 20, krylov: int = 4, fd_step: float = 1e-6) -> NewtonResult:
    """Newton-Krylov on Psi = (s^-2 Pi Phi, Pi-perp Phi) from the order-N partial sums.

    The leading blocks of the derivative are -P and -Q_s, so the right
    preconditioner is diag(-G, -H_s); the off-diagonal couplings are left to
    GMRES with finite-difference directional derivatives.
    """
    line, basis, grid = state.line, state.basis, state.grid
    N = state.order if N is None else N
    Y, fc = state.partial_sums(s, N)
    n_t, n = Y.shape
    nb = basis.size
    lin = basis.band_slice(1)
    interior = grid.interior

    def norm_of(r):
        return float(np.max(np.abs(r.values[interior])))

    def precondition(bY, cf):
        dY = -state.psolver.solve(bY)
        cf = cf.copy()
        cf[:, lin] = 0
        df = -solve_Qs(s, SpaceTimeField(grid, basis, cf)).coeffs
        return dY, df

    def pack(bY, cf):
        return np.concatenate([bY.ravel(), cf.ravel()])

    def unpack(v):
        return v[: n_t * n].reshape(n_t, n), v[n_t * n :].reshape(n_t, nb)

    bY, cf, r = _psi(line, basis, s, Y, fc)
    initial = norm_of(r)
    history = [initial]
    converged = initial <= ZERO_TOL
    it = 0
    while not converged and it < max_iter:
        it += 1
        F0 = pack(bY, cf)

        def jv(z):
            dY, df = precondition(*unpack(z))
            scale = fd_step / max(np.max(np.abs(np.concatenate([dY.ravel(), df.ravel()]))), 1e-300)
            b1, c1, _ = _psi(line, basis, s, Y + scale * dY, fc + scale * df)
            return (pack(b1, c1) - F0) / scale

        op = LinearOperator((F0.size, F0.size), matvec=jv, dtype=float)
        z, _ = gmres(op, -F0, restart=krylov, maxiter=1, rtol=1e-3, atol=0.0)
        dY, df = precondition(*unpack(z))
        # damped update
        lam = 1.0
        while True:
            Yn, fn = Y + lam * dY, fc + lam * df
            b2, c2, r2 = _psi(line, basis, s, Yn, fn)
            if norm_of(r2) < history[-1] or lam < 0.125:
                break
            lam *= 0.5
        Y, fc, bY, cf = Yn, fn, b2, c2
        history.append(norm_of(r2))
        log.info("newton s=%.3g iter %d residual %.3e (lambda %.3g)", s, it, history[-1], lam)
        if history[-1] <= reduction * initial:
            converged = True
        elif history[-1] >= history[-2]:
            break
    return NewtonResult(s, Y, SpaceTimeField(grid, basis, fc), initial, history[-1], history, converged)


def distance_to_partial_sums(result: NewtonResult, state: ExpansionState, N: int) -> tuple[float, float]:
    Y, fc = state.partial_sums(result.s, N)
    mask = state.grid.interior
    dY = float(np.max(np.abs((result.Y - Y)[mask])))
    df = float(np.max(np.abs(state.basis.synthesize(result.f.coeffs - fc)[mask])))
    return dY, df
