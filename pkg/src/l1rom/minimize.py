"""Residual minimizers: L2 (QR, Gauss-Newton), L1 (LP, IRLS) and Huber.

Every routine uses the same sign convention: a linear residual is
``r = A z + b``, so fitting ``A z`` to a target ``y`` means passing
``b = -y``. Nonlinear routines take a :class:`NonlinearResidual` on the
full space together with a dictionary matrix ``D``; the reduced residual is
``r(D z)`` and its Jacobian ``J(D z) D``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionMismatch, LineSearchFailure, RankDeficient
from .simplex import l1_simplex

DEFAULT_EPS = 1e-8
GN_MAX_ITER = 100
IRLS_MAX_ITER = 200
MAX_HALVINGS = 20
MAX_BAD_STEPS = 5
HUBER_EPS2 = 1e-6
DUAL_SLACK = 1e-2


class Kind(str, Enum):
    L2 = "L2"
    L1 = "L1"
    HUBER = "Huber"


class Backend(str, Enum):
    QR = "QR"
    LP = "LP"
    IRLS = "IRLS"


@dataclass(frozen=True)
class Functional:
    """Which norm of the residual to minimize, and how."""

    kind: Kind = Kind.L2
    backend: Backend = Backend.QR
    eta: float = 0.0
    huber_eps2: float = HUBER_EPS2

    def __post_init__(self):
        kind, backend = Kind(self.kind), Backend(self.backend)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "backend", backend)
        allowed = {
            Kind.L2: {Backend.QR},
            Kind.L1: {Backend.LP, Backend.IRLS},
            Kind.HUBER: {Backend.IRLS},
        }[kind]
        if backend not in allowed:
            raise ValueError(f"{kind.value} cannot use backend {backend.value}")
        if self.eta < 0:
            raise ValueError("eta must be non-negative")
        if self.huber_eps2 <= 0:
            raise ValueError("huber_eps2 must be positive")

    @property
    def name(self) -> str:
        return {
            (Kind.L2, Backend.QR): "l2",
            (Kind.L1, Backend.LP): "l1lp",
            (Kind.L1, Backend.IRLS): "l1irls",
            (Kind.HUBER, Backend.IRLS): "huber",
        }[(self.kind, self.backend)]

    @property
    def reg_norm(self) -> int:
        return 2 if self.kind is Kind.L2 else 1

    @classmethod
    def from_name(cls, name: str, eta: float = 0.0, huber_eps2: float = HUBER_EPS2):
        table = {
            "l2": (Kind.L2, Backend.QR),
            "l1lp": (Kind.L1, Backend.LP),
            "l1irls": (Kind.L1, Backend.IRLS),
            "huber": (Kind.HUBER, Backend.IRLS),
        }
        try:
            kind, backend = table[name.lower()]
        except KeyError:
            raise ValueError(f"unknown functional {name!r}") from None
        return cls(kind, backend, eta, huber_eps2)


@dataclass
class SolveReport:
    solution: np.ndarray
    objective: float
    iterations: int
    converged: bool
    residual_norm_history: list = field(default_factory=list)
    # L1 multipliers g (A^T g = 0, |g| <= 1) when the solver provides them
    dual: np.ndarray | None = None
    message: str = ""


@dataclass
class NonlinearResidual:
    eval: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], object]
    dim_in: int
    dim_out: int

    @classmethod
    def linear(cls, A, b):
        """Residual ``u -> A u + b`` on the full space."""
        A = np.asarray(A, dtype=float)
        b = np.asarray(b, dtype=float)
        return cls(lambda u: A @ u + b, lambda u: A, A.shape[1], A.shape[0])


def _check_system(A, b):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).ravel()
    if A.shape[0] != b.size:
        raise DimensionMismatch(f"A has {A.shape[0]} rows but b has {b.size} entries")
    if A.shape[0] < A.shape[1]:
        raise DimensionMismatch(f"A must be skinny, got {A.shape}")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
        raise ValueError("non-finite entries in least-squares data")
    return A, b


def qr_least_squares(A, b) -> SolveReport:
    """Minimize ``||A z + b||_2^2`` through a reduced QR factorization."""
    A, b = _check_system(A, b)
    Q, R = np.linalg.qr(A, mode="reduced")
    scale = np.abs(A).max(initial=0.0)
    diag = np.abs(np.diag(R))
    if A.shape[1] and (scale == 0.0 or diag.min() < 1e-12 * scale):
        raise RankDeficient(f"min |R_ii| = {diag.min():.3e} with ||A||_max = {scale:.3e}")
    z = -solve_triangular(R, Q.T @ b)
    res = A @ z + b
    obj = float(res @ res)
    return SolveReport(z, obj, 1, True, [float(np.sqrt(obj))])


def add_regularization(A, b, eta, q=2):
    """Stack ``eta * I`` under ``A`` so the solver's norm also penalizes ``z``.

    With ``q = 1`` the stacked L1 norm is exactly ``||Az+b||_1 + eta ||z||_1``.
    With ``q = 2`` the stacked problem is ``||Az+b||_2^2 + eta^2 ||z||_2^2``.
    """
    if eta < 0:
        raise ValueError("eta must be non-negative")
    if q not in (1, 2):
        raise ValueError("q must be 1 or 2")
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).ravel()
    if eta == 0:
        return A, b
    r = A.shape[1]
    return np.vstack([A, eta * np.eye(r)]), np.concatenate([b, np.zeros(r)])


def l1_lp(A, b, max_pivots=None) -> SolveReport:
    """Minimize ``||A z + b||_1`` as the linear program

        min 1^T (s + t)  s.t.  A z - s + t = -b,  s, t >= 0,

    solved by :func:`l1_simplex` from the all-slack basis ``z = 0``, which is
    always feasible. ``dual`` holds multipliers ``g`` with ``A^T g = 0`` and
    ``|g| <= 1``, which certify optimality.
    """
    A, b = _check_system(A, b)
    r = A.shape[1]
    lp = l1_simplex(A, -b, max_pivots=max_pivots)
    z = lp.x[:r]
    res = A @ z + b
    obj = float(np.abs(res).sum())
    return SolveReport(z, obj, lp.pivots, True, [obj], dual=-lp.duals)


def _irls_floor(r0):
    return 1e-12 * max(1.0, float(np.abs(r0).max(initial=0.0)))


def certified_vertex(A, b, zero_set):
    """Try to finish an L1 fit exactly on a guessed set of vanishing residuals.

    Solves for the vertex where the residuals in ``zero_set`` (one per
    unknown) vanish, and keeps it only if it is provably optimal: with
    ``g_i = sign(r_i)`` off the zero set, the multipliers ``g_Z`` solving
    ``A^T g = 0`` must satisfy ``|g_Z| <= 1``. Returns ``(z, g)`` or ``None``.
    """
    Z = np.asarray(zero_set)
    AZ = A[Z]
    if np.linalg.cond(AZ) > 1e10:
        return None
    z = np.linalg.solve(AZ, -b[Z])
    g = np.sign(A @ z + b)
    g[Z] = 0.0
    gZ = np.linalg.solve(AZ.T, -(A.T @ g))
    if np.abs(gZ).max(initial=0.0) > 1.0 + 1e-9:
        return None
    g[Z] = gZ
    return z, g


def _vertex_guesses(r_old, r_new, tau, n):
    """Candidate zero sets: the smallest residuals, and the fastest shrinking.

    Near an optimal vertex IRLS scales each vanishing residual by its dual
    multiplier (magnitude < 1) per step while the others settle, so the
    contraction ratio separates the two groups even when a vanishing
    residual is still larger than a persistent one.
    """
    a_new, a_old = np.abs(r_new), np.maximum(np.abs(r_old), tau)
    by_size = np.argsort(a_new, kind="stable")[:n]
    ratio = np.where(a_new <= 1e3 * tau, -1.0, a_new / a_old)
    by_rate = np.argsort(ratio, kind="stable")[:n]
    if set(by_rate) == set(by_size):
        return [by_size]
    return [by_size, by_rate]


def l1_line_search(r, d):
    """Exact ``argmin_{t >= 0} ||r + t d||_1``, a weighted median of the kinks."""
    r = np.asarray(r, dtype=float)
    d = np.asarray(d, dtype=float)
    slope = float(np.where(r != 0, np.sign(r), np.sign(d)) @ d)
    m = d != 0
    if slope >= 0 or not m.any():
        return 0.0
    kinks = -r[m] / d[m]
    jumps = np.abs(d[m])
    ahead = kinks > 0
    kinks, jumps = kinks[ahead], jumps[ahead]
    if kinks.size == 0:
        return 0.0
    order = np.argsort(kinks)
    slopes = slope + 2.0 * np.cumsum(jumps[order])
    k = min(int(np.searchsorted(slopes, 0.0)), kinks.size - 1)
    return float(kinks[order][k])


def l1_irls(A, b, z0=None, eps=DEFAULT_EPS, max_iter=IRLS_MAX_ITER, polish=True) -> SolveReport:
    """Minimize ``||A z + b||_1`` by iteratively reweighted least squares.

    Each step solves ``min_y ||Z A y + Z r||_2`` with
    ``Z = diag(max(|r_i|, e)^-1/2)`` and moves along ``y`` to the exact L1
    minimizer on that ray, so the objective never increases.

    The smoothing floor ``e`` starts at ``||r^0||_inf`` and shrinks towards
    ``tau = 1e-12 * max(1, ||r^0||_inf)``: it tracks the size of the
    ``(n+1)``-th smallest residual over ``N`` and drops tenfold whenever the
    step stalls. A floor pinned at ``tau`` from the start locks whichever
    residuals the line search zeroes first, right or wrong. The step-size
    stopping test only counts once ``e`` has reached ``tau``.

    With ``polish`` the iteration stops as soon as :func:`certified_vertex`
    proves a vertex suggested by the residual pattern optimal.
    """
    A, b = _check_system(A, b)
    N, n = A.shape
    z = np.zeros(n) if z0 is None else np.array(z0, dtype=float)
    r = A @ z + b
    tau = _irls_floor(r)
    e = max(tau, float(np.abs(r).max(initial=0.0)))
    history = [_l1(r)]
    converged = False
    message = "iteration cap reached"
    it = 0
    while it < max_iter:
        w = 1.0 / np.sqrt(np.maximum(np.abs(r), e))
        dz = qr_least_squares(w[:, None] * A, w * r).solution
        dz *= l1_line_search(r, A @ dz)
        z_prev, r_prev = z, r
        z = z + dz
        r = A @ z + b
        history.append(_l1(r))
        it += 1
        if polish:
            vertex = None
            for guess in _vertex_guesses(r_prev, r, tau, n):
                vertex = certified_vertex(A, b, guess)
                if vertex is not None:
                    break
            if vertex is not None and _l1(A @ vertex[0] + b) <= history[-1]:
                z = vertex[0]
                r = A @ z + b
                history.append(_l1(r))
                converged, message = True, "optimal vertex certified"
                break
        step = np.abs(dz).sum()
        size = 1.0 + np.abs(z_prev).sum()
        if step <= eps * size and e <= tau:
            converged, message = True, ""
            break
        if N > n:
            e = max(tau, min(e, float(np.partition(np.abs(r), n)[n]) / N))
        if step <= 1e-3 * size:
            e = max(tau, 0.1 * e)
    return SolveReport(z, history[-1], it, converged, history, message=message)


# ---------------------------------------------------------------------------
# nonlinear (Gauss-Newton type) solvers


class _Reduced:
    """Reduced residual ``z -> r(D z)`` with optional ``eta * z`` rows."""

    def __init__(self, res: NonlinearResidual, D, eta=0.0):
        self.res = res
        self.D = np.atleast_2d(np.asarray(D, dtype=float))
        if self.D.shape[0] != res.dim_in:
            raise DimensionMismatch(
                f"dictionary has {self.D.shape[0]} rows, residual expects {res.dim_in}")
        self.eta = float(eta)
        self.r = self.D.shape[1]

    def residual(self, z):
        out = np.asarray(self.res.eval(self.D @ z), dtype=float)
        if self.eta:
            out = np.concatenate([out, self.eta * z])
        return out

    def linearize(self, z):
        W = np.asarray(self.res.jacobian(self.D @ z) @ self.D, dtype=float)
        r = self.residual(z)
        if self.eta:
            W = np.vstack([W, self.eta * np.eye(self.r)])
        return r, W


def _damped_step(problem, z, dz, f_old, objective, slack=0.0):
    """Halve ``dz`` until ``objective`` decreases; return (z, f, accepted)."""
    step = 1.0
    for _ in range(MAX_HALVINGS + 1):
        z_try = z + step * dz
        f_try = objective(problem.residual(z_try))
        if np.isfinite(f_try) and f_try <= f_old + slack:
            return z_try, f_try, True
        step *= 0.5
    return z_try, f_try, False


def _bad_step_guard(accepted, bad):
    bad = 0 if accepted else bad + 1
    if bad >= MAX_BAD_STEPS:
        raise LineSearchFailure(f"objective increased on {bad} consecutive steps")
    return bad


def _sumsq(r):
    return float(r @ r)


def _l1(r):
    return float(np.abs(r).sum())


def gauss_newton_l2(res, D, z0, eps=DEFAULT_EPS, max_iter=GN_MAX_ITER, eta=0.0) -> SolveReport:
    """Gauss-Newton for ``min ||r(D z)||_2^2`` with step halving."""
    prob = _Reduced(res, D, eta)
    z = np.array(z0, dtype=float)
    r, W = prob.linearize(z)
    f = _sumsq(r)
    history = [np.sqrt(f)]
    g0 = np.linalg.norm(W.T @ r)
    converged = g0 == 0.0
    it = bad = 0
    while not converged and it < max_iter:
        dz = qr_least_squares(W, r).solution
        z, f, ok = _damped_step(prob, z, dz, f, _sumsq)
        bad = _bad_step_guard(ok, bad)
        r, W = prob.linearize(z)
        history.append(np.sqrt(f))
        it += 1
        converged = np.linalg.norm(W.T @ r) <= eps * g0
    return SolveReport(z, _sumsq(r), it, bool(converged), history,
                       message="" if converged else "iteration cap reached")


def l1_gn_lp(res, D, z0, eps=DEFAULT_EPS, max_iter=GN_MAX_ITER, eta=0.0) -> SolveReport:
    """Gauss-Newton for ``min ||r(D z)||_1``; each step is an L1 LP.

    Stops once the LP predicts a decrease of at most ``eps * ||r^0||_1``.
    """
    prob = _Reduced(res, D, eta)
    z = np.array(z0, dtype=float)
    r, W = prob.linearize(z)
    f = _l1(r)
    f0 = f
    history = [f]
    converged = f0 == 0.0
    it = bad = 0
    while not converged and it < max_iter:
        inner = l1_lp(W, r)
        if abs(inner.objective - f) <= eps * f0:
            converged = True
            break
        z, f, ok = _damped_step(prob, z, inner.solution, f, _l1)
        bad = _bad_step_guard(ok, bad)
        r, W = prob.linearize(z)
        history.append(f)
        it += 1
    return SolveReport(z, _l1(r), it, bool(converged), history,
                       message="" if converged else "iteration cap reached")


def _irls_gn(prob, z0, eps, max_iter, weights, objective, slack):
    """Shared reweighted Gauss-Newton loop.

    Returns ``(z, r, iterations, converged, history, g)`` where ``g`` holds the
    weighted-LS multipliers ``w_i^2 (r + W dz)_i`` of the final step.
    """
    z = np.array(z0, dtype=float)
    r, W = prob.linearize(z)
    tau = _irls_floor(r)
    history = [_l1(r)]
    converged = False
    g = np.zeros_like(r)
    it = bad = 0
    while it < max_iter:
        w = weights(r, tau)
        dz = qr_least_squares(w[:, None] * W, w * r).solution
        g = w * w * (r + W @ dz)
        z_prev = z
        obj = lambda rr: objective(rr, tau)  # noqa: E731
        z, f, ok = _damped_step(prob, z, dz, obj(r), obj, slack=slack(r, tau))
        bad = _bad_step_guard(ok, bad)
        r, W = prob.linearize(z)
        history.append(_l1(r))
        it += 1
        if np.abs(z - z_prev).sum() <= eps * (1.0 + np.abs(z_prev).sum()):
            converged = True
            break
    return z, r, it, converged, history, g


def l1_gn_irls(res, D, z0, eps=DEFAULT_EPS, max_iter=IRLS_MAX_ITER, eta=0.0) -> SolveReport:
    """Gauss-Newton for ``min ||r(D z)||_1`` with one reweighted LS per step.

    Weights are ``max(|r_i|, tau)^-1/2``. A small step alone does not count
    as convergence: the multipliers of the last weighted solve must also be
    dual feasible for the L1 problem (``|g_i| <= 1 + DUAL_SLACK``). A start
    where many residuals vanish exactly can make the first step tiny while
    the iterate is far from optimal; that case is reported as not converged.
    """
    prob = _Reduced(res, D, eta)

    def weights(r, tau):
        return 1.0 / np.sqrt(np.maximum(np.abs(r), tau))

    def objective(r, tau):
        return _l1(r)

    def slack(r, tau):
        # the floored reweighting majorizes |x| only up to tau/2 per entry
        return 0.5 * tau * r.size + 1e-14 * _l1(r)

    z, r, it, conv, hist, g = _irls_gn(prob, z0, eps, max_iter, weights, objective, slack)
    message = "" if conv else "iteration cap reached"
    gmax = float(np.abs(g).max(initial=0.0))
    if conv and gmax > 1.0 + DUAL_SLACK:
        conv = False
        message = f"step test met but multipliers are not dual feasible (max |g| = {gmax:.3g})"
    return SolveReport(z, _l1(r), it, conv, hist, dual=g, message=message)


def huber_threshold(r, eps2=HUBER_EPS2):
    return eps2 * max(1.0, float(np.abs(r).max(initial=0.0)))


def huber(r, M):
    """Sum of the Huber function: ``x^2`` inside ``|x| <= M``, ``2M|x| - M^2`` outside."""
    a = np.abs(np.asarray(r, dtype=float))
    return float(np.where(a <= M, a * a, 2.0 * M * a - M * M).sum())


def huber_irls(res, D, z0, eps=DEFAULT_EPS, huber_eps2=HUBER_EPS2,
               max_iter=IRLS_MAX_ITER, eta=0.0) -> SolveReport:
    """Gauss-Newton/IRLS for ``min sum_i huber_M(r_i(D z))``.

    ``M = huber_eps2 * max(1, max|r_i|)`` is refreshed from the current
    residual before each reweighting. Weights are 1 inside the quadratic zone
    and ``sqrt(M / |r_i|)`` outside.
    """
    prob = _Reduced(res, D, eta)
    state = {"M": huber_threshold(prob.residual(np.asarray(z0, dtype=float)), huber_eps2)}

    def weights(r, tau):
        M = state["M"] = huber_threshold(r, huber_eps2)
        a = np.abs(r)
        return np.where(a <= M, 1.0, np.sqrt(M / np.maximum(a, M)))

    def objective(r, tau):
        return huber(r, state["M"])

    def slack(r, tau):
        return 1e-14 * max(1.0, huber(r, state["M"]))

    z, r, it, conv, hist, _ = _irls_gn(prob, z0, eps, max_iter, weights, objective, slack)
    return SolveReport(z, huber(r, state["M"]), it, conv, hist,
                       message="" if conv else "iteration cap reached")


def minimize_linear(A, b, functional: Functional, z0=None, eps=DEFAULT_EPS) -> SolveReport:
    """Dispatch a linear residual ``A z + b`` to the solver ``functional`` names."""
    A, b = _check_system(A, b)
    if z0 is None:
        z0 = np.zeros(A.shape[1])
    if functional.kind is Kind.L2:
        return qr_least_squares(*add_regularization(A, b, functional.eta, 2))
    if functional.kind is Kind.L1 and functional.backend is Backend.LP:
        return l1_lp(*add_regularization(A, b, functional.eta, 1))
    if functional.kind is Kind.L1:
        return l1_irls(*add_regularization(A, b, functional.eta, 1), z0=z0, eps=eps)
    return huber_irls(NonlinearResidual.linear(A, b), np.eye(A.shape[1]), z0, eps=eps,
                      huber_eps2=functional.huber_eps2, eta=functional.eta)


def minimize_nonlinear(res, D, z0, functional: Functional, eps=DEFAULT_EPS) -> SolveReport:
    if functional.kind is Kind.L2:
        return gauss_newton_l2(res, D, z0, eps=eps, eta=functional.eta)
    if functional.kind is Kind.L1 and functional.backend is Backend.LP:
        return l1_gn_lp(res, D, z0, eps=eps, eta=functional.eta)
    if functional.kind is Kind.L1:
        return l1_gn_irls(res, D, z0, eps=eps, eta=functional.eta)
    return huber_irls(res, D, z0, eps=eps, huber_eps2=functional.huber_eps2, eta=functional.eta)
