"""Dictionary-based reduced models.

A reduced state is a linear combination of stored high-dimensional solutions
``u ~ D alpha``; the coefficients minimize a norm of the discrete residual.
Steady problems compose the full residual with ``D``. Unsteady problems fit,
at every step, the next dictionary snapshots to one explicit update of the
current reduced state, which is a linear fit whatever the flux.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateDictionary, NewtonDiverged
from .hdm import ConservationLaw, SteadyProblem, Trajectory
from .minimize import (
    Functional,
    SolveReport,
    minimize_linear,
    minimize_nonlinear,
)

GALERKIN_TOL = 1e-10
GALERKIN_MAX_ITER = 50
EULER_VARIABLES = ("rho", "m", "E")


def numerical_rank(A, rel=1e-12):
    """Rank from the diagonal of an R factor, relative to ``||A||_max``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    scale = np.abs(A).max(initial=0.0)
    if scale == 0.0:
        return 0
    R = np.linalg.qr(A, mode="r")
    return int(np.sum(np.abs(np.diag(R)) > rel * scale))


@dataclass(frozen=True)
class PerturbationConfig:
    """Seeded entrywise perturbation used to repair rank-deficient fits."""

    enabled: bool = True
    scale: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.scale < 0:
            raise ValueError("perturbation scale must be non-negative")


NO_PERTURBATION = PerturbationConfig(enabled=False, scale=0.0)


def rank_repair(A, cfg: PerturbationConfig, variable_range, step=0, variable=0):
    """Add ``uniform(-1, 1) * scale * variable_range`` to every entry of ``A``.

    The generator is keyed on ``(seed, step, variable)`` so repeated runs and
    different variables get reproducible, independent perturbations.
    """
    A = np.asarray(A, dtype=float)
    if not cfg.enabled or cfg.scale == 0.0:
        return A.copy()
    rng = np.random.default_rng([cfg.seed, step, variable])
    return A + rng.uniform(-1.0, 1.0, size=A.shape) * (cfg.scale * variable_range)


# ---------------------------------------------------------------------------
# steady


@dataclass
class Dictionary:
    """Steady snapshots ``u(mu_l)`` as the columns of ``matrix``."""

    mus: tuple
    matrix: np.ndarray

    def __post_init__(self):
        self.mus = tuple(float(m) for m in self.mus)
        self.matrix = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        if self.matrix.shape[1] != len(self.mus) or not self.mus:
            raise ValueError("need one column per parameter and at least one entry")

    @property
    def size(self) -> int:
        return len(self.mus)

    def nearest_unit(self, mu) -> np.ndarray:
        e = np.zeros(self.size)
        e[int(np.argmin([abs(m - mu) for m in self.mus]))] = 1.0
        return e

    def reconstruct(self, alpha):
        return self.matrix @ np.asarray(alpha, dtype=float)


def build_dictionary(factory: Callable[[float], SteadyProblem], mus) -> Dictionary:
    return Dictionary(tuple(mus), np.column_stack([factory(mu).solve() for mu in mus]))


@dataclass
class RomCoefficients:
    alpha: np.ndarray
    mu_target: float
    time_index: int = 0
    converged: bool = True
    objective: float = 0.0
    message: str = ""


@dataclass
class SteadyRomResult:
    coefficients: RomCoefficients
    reconstruction: np.ndarray
    residual: np.ndarray
    report: SolveReport | None = None


def _check_rank(dictionary: Dictionary):
    if numerical_rank(dictionary.matrix) < dictionary.size:
        raise DegenerateDictionary("dictionary matrix is numerically rank deficient")


def initial_guess(problem: SteadyProblem, dictionary: Dictionary):
    """Zero for linear residuals; the nearest dictionary member otherwise."""
    if problem.linear:
        return np.zeros(dictionary.size)
    return dictionary.nearest_unit(problem.mu)


def solve_steady_rom(problem: SteadyProblem, dictionary: Dictionary,
                     functional: Functional, z0=None) -> SteadyRomResult:
    """Minimize the chosen functional of ``r(D beta)`` over ``beta``."""
    _check_rank(dictionary)
    if z0 is None:
        z0 = initial_guess(problem, dictionary)
    rep = minimize_nonlinear(problem.as_residual(), dictionary.matrix, z0, functional)
    u = dictionary.reconstruct(rep.solution)
    coef = RomCoefficients(rep.solution, problem.mu, converged=rep.converged,
                           objective=rep.objective, message=rep.message)
    return SteadyRomResult(coef, u, problem.residual(u), rep)


def solve_galerkin(problem: SteadyProblem, dictionary: Dictionary,
                   tol=GALERKIN_TOL, max_iter=GALERKIN_MAX_ITER) -> SteadyRomResult:
    """Newton on the projected equations ``D^T r(D alpha) = 0``.

    ``tol`` bounds ``||D^T r||_inf`` relative to ``max(1, ||D^T r(D alpha_0)||_inf)``.
    """
    _check_rank(dictionary)
    D = dictionary.matrix
    alpha = initial_guess(problem, dictionary)
    g = D.T @ problem.residual(D @ alpha)
    scale = max(1.0, np.abs(g).max())
    it = 0
    while np.abs(g).max() > tol * scale:
        if it >= max_iter:
            raise NewtonDiverged(f"Galerkin Newton stalled at |D^T r| = {np.abs(g).max():.3e}")
        H = D.T @ np.asarray(problem.jacobian(D @ alpha) @ D)
        step = np.linalg.solve(H, -g)
        t = 1.0
        for _ in range(30):
            trial = alpha + t * step
            g_try = D.T @ problem.residual(D @ trial)
            if np.all(np.isfinite(g_try)) and np.abs(g_try).max() < np.abs(g).max():
                break
            t *= 0.5
        alpha, g = trial, g_try
        it += 1
    u = D @ alpha
    coef = RomCoefficients(alpha, problem.mu, objective=float(np.abs(g).max()))
    return SteadyRomResult(coef, u, problem.residual(u))


# ---------------------------------------------------------------------------
# unsteady


@dataclass
class UnsteadyDictionary:
    """HDM trajectories sharing one grid, time step and conservation law.

    ``initial(mu)`` returns the analytic initial state for any parameter,
    used to fit the first reduced coefficients.
    """

    mus: tuple
    trajectories: Sequence[Trajectory]
    initial: Callable[[float], np.ndarray]

    def __post_init__(self):
        self.mus = tuple(float(m) for m in self.mus)
        if not self.trajectories or len(self.trajectories) != len(self.mus):
            raise ValueError("need one trajectory per parameter")
        ref = self.trajectories[0]
        for tr in self.trajectories[1:]:
            if tr.dt != ref.dt or tr.states.shape != ref.states.shape:
                raise ValueError("trajectories must share the time grid and state shape")
        # (steps + 1, r, ...) stacked snapshots
        self.snapshots = np.stack([t.states for t in self.trajectories], axis=1)

    @property
    def size(self) -> int:
        return len(self.mus)

    @property
    def law(self) -> ConservationLaw:
        return self.trajectories[0].law

    @property
    def nu(self) -> float:
        tr = self.trajectories[0]
        return tr.dt / tr.grid.dx

    @property
    def n_steps(self) -> int:
        return self.snapshots.shape[0] - 1

    @property
    def dt(self) -> float:
        return self.trajectories[0].dt

    def columns(self, n, variable=None):
        """``N x r`` matrix of step-``n`` snapshots (one variable if given)."""
        S = self.snapshots[n]
        if variable is not None:
            S = S[:, variable]
        return S.reshape(S.shape[0], -1).T

    def combine(self, n, alpha):
        """``sum_l alpha_l u^n(mu_l)``; ``alpha`` may be ``(3, r)`` per variable."""
        S = self.snapshots[n]
        alpha = np.asarray(alpha, dtype=float)
        if alpha.ndim == 1:
            return np.tensordot(alpha, S, axes=1)
        return np.stack([alpha[k] @ S[:, k] for k in range(alpha.shape[0])])

    def variable_range(self, variable=None):
        S = self.snapshots if variable is None else self.snapshots[:, :, variable]
        return float(S.max() - S.min())


@dataclass
class RomTrajectory:
    coefficients: list
    reconstructed: np.ndarray
    residual_norms: list
    functional: Functional
    converged: list = field(default_factory=list)

    @property
    def n_steps(self) -> int:
        return len(self.coefficients) - 1


def _fit(A, target, functional, perturbation, scale, step, variable):
    """Minimize ``J(A beta - target)`` after optional rank repair of ``A``."""
    if perturbation is not None and perturbation.enabled:
        A = rank_repair(A, perturbation, scale, step, variable)
    return minimize_linear(A, -np.asarray(target, dtype=float), functional)


def fit_initial(dictionary: UnsteadyDictionary, mu, functional,
                perturbation=None, variables=None):
    """First coefficients: fit the dictionary's initial states to ``u_0(mu)``.

    ``variables=None`` fits the whole state with one vector; otherwise one
    vector per listed variable index (returned stacked) or, for a single
    integer, one vector fitted on that variable only.
    """
    u0 = np.asarray(dictionary.initial(mu), dtype=float)
    return _fit_step(dictionary, 0, u0, functional, perturbation, variables)


def _fit_step(dictionary, n, target, functional, perturbation, variables):
    if variables is None or np.isscalar(variables):
        var = variables
        A = dictionary.columns(n, var)
        t = target if var is None else target[var]
        rep = _fit(A, t.ravel() if var is None else t, functional, perturbation,
                   dictionary.variable_range(var), n, 0 if var is None else var)
        return rep.solution, [rep]
    reps = []
    for var in variables:
        reps.append(_fit(dictionary.columns(n, var), target[var], functional, perturbation,
                         dictionary.variable_range(var), n, var))
    return np.stack([r.solution for r in reps]), reps


def advance_unsteady_rom(dictionary: UnsteadyDictionary, alpha_n, n, functional,
                         perturbation=None, variables=None):
    """One reduced step from ``alpha^n`` to ``alpha^{n+1}``.

    With ``w^n = sum_l alpha_l^n u^n(mu_l)`` and ``b^n`` the explicit update of
    ``w^n`` on every cell, minimizes ``J(A^{n+1} beta - b^n)`` where the
    columns of ``A^{n+1}`` are the dictionary states at step ``n + 1``.
    Returns ``(alpha^{n+1}, reports)``.
    """
    w = dictionary.combine(n, alpha_n)
    b = dictionary.law.update(w, dictionary.nu)
    return _fit_step(dictionary, n + 1, b, functional, perturbation, variables)


def run_unsteady_rom(dictionary: UnsteadyDictionary, mu, functional, n_steps=None,
                     perturbation=None, variables=None) -> RomTrajectory:
    """Fit the initial state, then advance step by step."""
    if n_steps is None:
        n_steps = dictionary.n_steps
    if n_steps > dictionary.n_steps:
        raise ValueError("dictionary trajectories are shorter than the requested run")
    alpha, reps = fit_initial(dictionary, mu, functional, perturbation, variables)
    coefs = [RomCoefficients(alpha, mu, 0, all(r.converged for r in reps))]
    states = [dictionary.combine(0, alpha)]
    norms = [float(sum(r.objective for r in reps))]
    for n in range(n_steps):
        alpha, reps = advance_unsteady_rom(dictionary, alpha, n, functional, perturbation,
                                           variables)
        coefs.append(RomCoefficients(alpha, mu, n + 1, all(r.converged for r in reps)))
        states.append(dictionary.combine(n + 1, alpha))
        norms.append(float(sum(r.objective for r in reps)))
    return RomTrajectory(coefs, np.stack(states), norms, functional,
                         [c.converged for c in coefs])


def euler_rom_single_expansion(dictionary: UnsteadyDictionary, mu, functional, n_steps=None,
                               perturbation=None) -> RomTrajectory:
    """One coefficient vector per step, fitted on the density rows only."""
    return run_unsteady_rom(dictionary, mu, functional, n_steps, perturbation, variables=0)


def euler_rom_per_variable(dictionary: UnsteadyDictionary, mu, functional, n_steps=None,
                           perturbation=None) -> RomTrajectory:
    """Independent coefficient vectors for density, momentum and energy."""
    return run_unsteady_rom(dictionary, mu, functional, n_steps, perturbation,
                            variables=(0, 1, 2))
