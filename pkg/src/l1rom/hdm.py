"""High-dimensional models: steady residuals and unsteady finite-volume solvers.

Steady problems expose ``r(u)`` and its sparse Jacobian so the reduced
solvers can compose them with a dictionary. Unsteady problems are
first-order conservative finite-volume schemes marched with forward Euler;
the same :class:`ConservationLaw` update is reused by the reduced model.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .errors import NewtonDiverged, NonPhysicalState
from .minimize import NonlinearResidual

GAMMA = 1.4
STEADY_K = 100.0
NEWTON_MAX_ITER = 50


# ---------------------------------------------------------------------------
# grids


@dataclass(frozen=True)
class Grid1D:
    x: np.ndarray
    dx: float

    def __post_init__(self):
        if self.dx <= 0 or np.any(np.diff(self.x) <= 0):
            raise ValueError("grid must be strictly increasing with dx > 0")

    @property
    def n_cells(self) -> int:
        return self.x.size

    @classmethod
    def nodes(cls, n, a=0.0, b=1.0):
        """``n`` equispaced nodes including both end points."""
        return cls(np.linspace(a, b, n), (b - a) / (n - 1))

    @classmethod
    def cells(cls, n, a=0.0, b=1.0):
        """Centres of ``n`` equal cells."""
        dx = (b - a) / n
        return cls(a + (np.arange(n) + 0.5) * dx, dx)


@dataclass(frozen=True)
class Grid2D:
    nx: int
    ny: int
    length: float

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3 or self.length <= 0:
            raise ValueError("need nx, ny >= 3 and a positive domain size")

    @property
    def hx(self) -> float:
        return self.length / (self.nx - 1)

    @property
    def hy(self) -> float:
        return self.length / (self.ny - 1)

    def mesh(self):
        x = np.linspace(0.0, self.length, self.nx)
        y = np.linspace(0.0, self.length, self.ny)
        return np.meshgrid(x, y, indexing="ij")


# ---------------------------------------------------------------------------
# steady problems


@dataclass
class SteadyProblem:
    """A discretized steady problem ``r(u; mu) = 0`` at fixed ``mu``.

    For linear problems ``operator`` and ``rhs`` give ``r(u) = K u - g``.
    """

    name: str
    mu: float
    grid: object
    residual: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], sp.spmatrix]
    solver: Callable[[], np.ndarray] = field(repr=False)
    operator: sp.spmatrix | None = field(default=None, repr=False)
    rhs: np.ndarray | None = field(default=None, repr=False)

    @property
    def linear(self) -> bool:
        return self.operator is not None

    @property
    def size(self) -> int:
        g = self.grid
        return g.n_cells if isinstance(g, Grid1D) else g.nx * g.ny

    def solve(self) -> np.ndarray:
        return self.solver()

    def as_residual(self) -> NonlinearResidual:
        n = self.size
        return NonlinearResidual(self.residual, self.jacobian, n, n)


def _logistic_e(x, mu, k=STEADY_K):
    # exp(-2k(x - mu)) clipped so that the rational forms below stay finite
    return np.exp(np.clip(-2.0 * k * (x - mu), -700.0, 700.0))


def advect1d_source(x, mu, k=STEADY_K):
    e = _logistic_e(x, mu, k)
    return -2.0 * k * e / (1.0 + e) ** 2


def advect1d_continuum(x, mu, k=STEADY_K):
    """Decreasing logistic from 1 at ``x = 0`` that solves ``u' = f``."""
    return (1.0 / (1.0 + np.exp(np.clip(2.0 * k * (x - mu), -700, 700)))
            - 1.0 / (1.0 + np.exp(-2.0 * k * mu)) + 1.0)


def _linear_problem(name, mu, grid, K, g):
    K = sp.csr_matrix(K)
    return SteadyProblem(
        name=name, mu=mu, grid=grid,
        residual=lambda u: K @ u - g,
        jacobian=lambda u: K,
        solver=lambda: spsolve(K.tocsc(), g),
        operator=K, rhs=g,
    )


def advect1d_steady(mu, n=1000, k=STEADY_K) -> SteadyProblem:
    """Backward-difference discretization of ``u' = f(x; mu)``, ``u(0) = 1``.

    Row 0 is the boundary condition; row ``i`` is the flux balance
    ``u_i - u_{i-1} - dx f(x_i)`` on nodes ``x_i = i / (n - 1)``, which has
    the units of the boundary row.
    """
    if not 0.0 < mu < 1.0 or n < 10:
        raise ValueError("advect1d_steady needs 0 < mu < 1 and n >= 10")
    grid = Grid1D.nodes(n)
    K = sp.diags([np.ones(n), -np.ones(n - 1)], [0, -1], format="csr")
    g = grid.dx * advect1d_source(grid.x, mu, k)
    g[0] = 1.0
    return _linear_problem("advect1d", mu, grid, K, g)


def roe_flux_burgers(uL, uR):
    """Roe flux for ``f(u) = u^2 / 2``."""
    a = 0.5 * (uL + uR)
    return 0.25 * (uL * uL + uR * uR) - 0.5 * np.abs(a) * (uR - uL)


def _roe_burgers_partials(uL, uR):
    a = 0.5 * (uL + uR)
    s = np.sign(a)
    jump = uR - uL
    dL = 0.5 * uL - 0.25 * s * jump + 0.5 * np.abs(a)
    dR = 0.5 * uR - 0.25 * s * jump - 0.5 * np.abs(a)
    return dL, dR


def burgers_steady_source(x, mu, k=STEADY_K):
    """Source whose exact steady state drops from 1.5 to 0.5 at ``x = mu``."""
    e = _logistic_e(x, mu, k)
    return -k * e * (1.0 + 3.0 * e) / (1.0 + e) ** 3


def burgers_steady_continuum(x, mu, k=STEADY_K):
    return 1.5 - 1.0 / (1.0 + _logistic_e(x, mu, k))


def burgers1d_steady(mu, n=1000, k=STEADY_K, tol=1e-10) -> SteadyProblem:
    """Conservative Roe discretization of ``(u^2/2)' = f``, ``u(0) = 1.5``.

    Row ``i >= 1`` is the flux balance ``F_{i+1/2} - F_{i-1/2} - dx f(x_i)``
    with ``F_{i+1/2} = roe(u_i, u_{i+1})`` and an outflow copy
    ``u_n = u_{n-1}``.
    """
    if not 0.0 < mu < 1.0 or n < 10:
        raise ValueError("burgers1d_steady needs 0 < mu < 1 and n >= 10")
    grid = Grid1D.nodes(n)
    dx = grid.dx
    f = burgers_steady_source(grid.x, mu, k)

    def padded(u):
        return np.append(u, u[-1])

    def residual(u):
        v = padded(u)
        F = roe_flux_burgers(v[:-1], v[1:])  # F[i] = F_{i+1/2}
        r = np.empty(n)
        r[0] = u[0] - 1.5
        r[1:] = F[1:] - F[:-1] - dx * f[1:]
        return r

    def jacobian(u):
        v = padded(u)
        dL, dR = _roe_burgers_partials(v[:-1], v[1:])
        # row i: dL[i] u_i + dR[i] u_{i+1} - dL[i-1] u_{i-1} - dR[i-1] u_i
        diag = dL[1:] - dR[:-1]
        lower = -dL[:-1]
        upper = dR[1:-1]
        diag = np.concatenate([[1.0], diag])
        upper = np.concatenate([[0.0], upper])
        J = sp.diags([diag, lower, upper], [0, -1, 1], shape=(n, n), format="lil")
        J[n - 1, n - 1] += dR[-1]  # ghost copy u_n = u_{n-1}
        return J.tocsr()

    def solver():
        return newton_solve(residual, jacobian, np.full(n, 1.5), tol=tol)

    return SteadyProblem("burgers-steady", mu, grid, residual, jacobian, solver)


def newton_solve(residual, jacobian, u0, tol=1e-10, max_iter=NEWTON_MAX_ITER):
    """Newton with step halving on ``||r||_inf``."""
    u = np.array(u0, dtype=float)
    r = residual(u)
    norm = np.abs(r).max()
    for _ in range(max_iter):
        if norm < tol:
            return u
        du = spsolve(sp.csc_matrix(jacobian(u)), -r)
        step = 1.0
        for _ in range(30):
            trial = u + step * du
            r_try = residual(trial)
            n_try = np.abs(r_try).max()
            if np.isfinite(n_try) and n_try < norm:
                break
            step *= 0.5
        u, r, norm = trial, r_try, n_try
    if norm < tol:
        return u
    raise NewtonDiverged(f"Newton stopped at ||r||_inf = {norm:.3e}")


ADVDIFF_LENGTH = 0.018
ADVDIFF_SPEED = 0.5
ADVDIFF_KAPPA = 2e-7


def advdiff2d(mu, nx=64, speed=ADVDIFF_SPEED, kappa=ADVDIFF_KAPPA,
              length=ADVDIFF_LENGTH) -> SteadyProblem:
    """Upwind advection plus central diffusion on a uniform ``nx x nx`` grid.

    ``lambda = speed (cos mu, sin mu)``. Dirichlet data ``u = 0`` on ``x = 0``,
    ``u = 1`` on ``y = 0`` and ``1/2`` at the origin; the outflow edges
    ``x = L`` and ``y = L`` are homogeneous Neumann through mirrored ghost
    nodes. Interior rows are multiplied by ``h`` (flux-balance form) so they
    carry the same units as the Dirichlet rows. Unknowns are ordered
    ``k = i * nx + j`` with ``i`` along ``x``.
    """
    if not 0.0 < mu < np.pi / 2 or nx < 32:
        raise ValueError("advdiff2d needs 0 < mu < pi/2 and nx >= 32")
    grid = Grid2D(nx, nx, length)
    h = grid.hx
    ax, ay = speed * np.cos(mu), speed * np.sin(mu)
    d = kappa / h
    N = nx * nx
    idx = np.arange(N).reshape(nx, nx)

    rows, cols, vals = [], [], []

    def put(r, c, v):
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(np.broadcast_to(v, r.shape).ravel())

    g = np.zeros((nx, nx))
    # Dirichlet rows
    put(idx[0, :], idx[0, :], 1.0)
    put(idx[1:, 0], idx[1:, 0], 1.0)
    g[1:, 0] = 1.0
    g[0, 0] = 0.5

    I, J = np.meshgrid(np.arange(1, nx), np.arange(1, nx), indexing="ij")
    k = idx[I, J]
    put(k, k, ax + ay + 4.0 * d)
    put(k, idx[I - 1, J], -ax - d)
    put(k, idx[I, J - 1], -ay - d)
    # east / north neighbours, mirrored across the outflow edges
    east = np.where(I == nx - 1, I - 1, I + 1)
    north = np.where(J == nx - 1, J - 1, J + 1)
    put(k, idx[east, J], -d)
    put(k, idx[I, north], -d)

    K = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(N, N))
    return _linear_problem("advdiff2d", mu, grid, K, g.ravel())


# ---------------------------------------------------------------------------
# Euler


@dataclass
class EulerState:
    rho: np.ndarray
    m: np.ndarray
    E: np.ndarray
    gamma: float = GAMMA

    def __post_init__(self):
        check_physical(self.as_array(), self.gamma)

    @property
    def u(self):
        return self.m / self.rho

    @property
    def p(self):
        return pressure(self.as_array(), self.gamma)

    def as_array(self):
        return np.stack([self.rho, self.m, self.E])

    @classmethod
    def from_array(cls, U, gamma=GAMMA):
        return cls(U[0].copy(), U[1].copy(), U[2].copy(), gamma)

    @classmethod
    def from_primitive(cls, rho, u, p, gamma=GAMMA):
        rho, u, p = (np.asarray(a, dtype=float) for a in (rho, u, p))
        return cls(rho, rho * u, p / (gamma - 1.0) + 0.5 * rho * u * u, gamma)


def pressure(U, gamma=GAMMA):
    return (gamma - 1.0) * (U[2] - 0.5 * U[1] ** 2 / U[0])


def check_physical(U, gamma=GAMMA):
    rho = U[0]
    if np.any(~np.isfinite(U)) or np.any(rho <= 0):
        raise NonPhysicalState("non-positive or non-finite density")
    if np.any(pressure(U, gamma) <= 0):
        raise NonPhysicalState("non-positive pressure")


def euler_flux(U, gamma=GAMMA):
    rho, m, E = U
    u = m / rho
    p = (gamma - 1.0) * (E - 0.5 * m * u)
    return np.stack([m, m * u + p, u * (E + p)])


def roe_flux_euler(UL, UR, gamma=GAMMA, check=True):
    """Roe flux for the 1D Euler equations, no entropy fix.

    ``UL`` and ``UR`` are conserved states of shape ``(3,)`` or ``(3, m)``.
    """
    UL = np.asarray(UL, dtype=float)
    UR = np.asarray(UR, dtype=float)
    if check:
        check_physical(UL.reshape(3, -1), gamma)
        check_physical(UR.reshape(3, -1), gamma)
    rL, rR = UL[0], UR[0]
    uL, uR = UL[1] / rL, UR[1] / rR
    pL, pR = pressure(UL, gamma), pressure(UR, gamma)
    HL, HR = (UL[2] + pL) / rL, (UR[2] + pR) / rR

    sL, sR = np.sqrt(np.abs(rL)), np.sqrt(np.abs(rR))
    u = (sL * uL + sR * uR) / (sL + sR)
    H = (sL * HL + sR * HR) / (sL + sR)
    # unchecked (reduced) states may give c^2 < 0; keep the wave speeds real
    c = np.sqrt(np.abs((gamma - 1.0) * (H - 0.5 * u * u)))
    rho = sL * sR

    drho, du, dp = rR - rL, uR - uL, pR - pL
    a1 = (dp - rho * c * du) / (2.0 * c * c)
    a2 = drho - dp / (c * c)
    a3 = (dp + rho * c * du) / (2.0 * c * c)
    l1, l2, l3 = np.abs(u - c), np.abs(u), np.abs(u + c)

    diss = np.stack([
        l1 * a1 + l2 * a2 + l3 * a3,
        l1 * a1 * (u - c) + l2 * a2 * u + l3 * a3 * (u + c),
        l1 * a1 * (H - u * c) + l2 * a2 * 0.5 * u * u + l3 * a3 * (H + u * c),
    ])
    return 0.5 * (euler_flux(UL, gamma) + euler_flux(UR, gamma)) - 0.5 * diss


SOD = {"left": (1.0, 0.0, 1.0), "right": (0.125, 0.0, 0.1)}
LAX = {"left": (0.445, 0.698, 3.528), "right": (0.5, 0.0, 0.571)}


def euler_initial_primitive(x, mu):
    """``mu * Sod + (1 - mu) * Lax`` blended in (rho, u, p)."""
    left = x <= 0.5
    out = []
    for k in range(3):
        sod = np.where(left, SOD["left"][k], SOD["right"][k])
        lax = np.where(left, LAX["left"][k], LAX["right"][k])
        out.append(mu * sod + (1.0 - mu) * lax)
    return tuple(out)


def euler_initial_state(x, mu, gamma=GAMMA) -> EulerState:
    return EulerState.from_primitive(*euler_initial_primitive(x, mu), gamma=gamma)


# ---------------------------------------------------------------------------
# unsteady finite-volume machinery


def _upwind_linear(uL, uR):
    return uL


@dataclass(frozen=True)
class ConservationLaw:
    """A first-order conservative scheme ``w - nu (F_{j+1/2} - F_{j-1/2})``."""

    name: str
    flux: Callable
    boundary: str  # "periodic" or "transmissive"
    wave_speed: Callable

    def interface_fluxes(self, w):
        if self.boundary == "periodic":
            v = np.concatenate([w[..., -1:], w, w[..., :1]], axis=-1)
        else:
            v = np.concatenate([w[..., :1], w, w[..., -1:]], axis=-1)
        return self.flux(v[..., :-1], v[..., 1:])

    def update(self, w, nu):
        F = self.interface_fluxes(w)
        return w - nu * (F[..., 1:] - F[..., :-1])


def _euler_speed(U):
    check_physical(U)
    u = U[1] / U[0]
    return np.abs(u) + np.sqrt(GAMMA * pressure(U) / U[0])


LINEAR_ADVECTION = ConservationLaw("linear-advection", _upwind_linear, "periodic",
                                   lambda w: np.ones_like(w))
BURGERS = ConservationLaw("burgers", roe_flux_burgers, "periodic", np.abs)
EULER = ConservationLaw("euler", lambda L, R: roe_flux_euler(L, R, check=False),
                        "transmissive", _euler_speed)


@dataclass
class Trajectory:
    """States at every time step ``t_n = n dt`` (shape ``(steps + 1, ...)``)."""

    law: ConservationLaw
    grid: Grid1D
    dt: float
    states: np.ndarray
    mu: float | None = None

    @property
    def n_steps(self) -> int:
        return self.states.shape[0] - 1

    @property
    def times(self):
        return self.dt * np.arange(self.n_steps + 1)

    def index_of(self, t) -> int:
        n = int(round(t / self.dt))
        if abs(n * self.dt - t) > 1e-9 * max(1.0, t) or not 0 <= n <= self.n_steps:
            raise ValueError(f"t = {t} is not on the time grid")
        return n

    def at(self, t):
        return self.states[self.index_of(t)]


def aligned_time_step(dt_max, output_times):
    """Largest ``dt <= dt_max`` that hits every output time exactly.

    The smallest output time is split into whole steps; every other output
    time must be an integer multiple of it.
    """
    times = np.asarray(sorted(output_times), dtype=float)
    base = times[0]
    ratios = times / base
    if np.any(np.abs(ratios - np.round(ratios)) > 1e-9):
        raise ValueError("output times must be integer multiples of the first one")
    return base / int(np.ceil(base / dt_max - 1e-12))


def march(law: ConservationLaw, u0, grid: Grid1D, dt, n_steps, mu=None, check=None):
    nu = dt / grid.dx
    states = np.empty((n_steps + 1,) + np.shape(u0))
    states[0] = u0
    w = np.asarray(u0, dtype=float)
    for n in range(n_steps):
        if nu * law.wave_speed(w).max() > 1.0 + 1e-12:
            raise ValueError(f"CFL condition violated at step {n}")
        w = law.update(w, nu)
        if check is not None:
            check(w)
        states[n + 1] = w
    return Trajectory(law, grid, dt, states, mu)


BURGERS_LENGTH = 2.0 * np.pi
BURGERS_OUTPUT_TIMES = (np.pi / 4, np.pi / 2, np.pi)


def burgers_initial(x, mu):
    return mu * np.abs(np.sin(2.0 * x)) + 0.1


def burgers_time_step(mus, n, cfl=0.5, output_times=BURGERS_OUTPUT_TIMES):
    """Shared step for a set of parameters: the worst-case CFL bound, aligned."""
    dx = BURGERS_LENGTH / n
    umax = max(mu + 0.1 for mu in mus)
    return aligned_time_step(cfl * dx / umax, output_times)


def burgers1d_unsteady(mu, n=250, t_end=np.pi, cfl=0.5, dt=None) -> Trajectory:
    """Periodic Burgers on ``[0, 2 pi]`` with ``u_0 = mu |sin 2x| + 0.1``."""
    if not 0.0 <= mu <= 1.0 or not 0.0 < cfl <= 1.0:
        raise ValueError("need mu in [0, 1] and cfl in (0, 1]")
    grid = Grid1D.cells(n, 0.0, BURGERS_LENGTH)
    if dt is None:
        dt = burgers_time_step([mu], n, cfl)
    steps = int(round(t_end / dt))
    return march(BURGERS, burgers_initial(grid.x, mu), grid, dt, steps, mu)


def advect1d_unsteady(mu, n=200, n_steps=200, cfl=0.5, width=0.05) -> Trajectory:
    """Periodic unit-speed upwind advection of a Gaussian bump centred at ``mu``."""
    grid = Grid1D.cells(n)
    u0 = np.exp(-((grid.x - mu) / width) ** 2)
    return march(LINEAR_ADVECTION, u0, grid, cfl * grid.dx, n_steps, mu)


EULER_T_END = 0.16


def euler_time_step(mus, n_cells, cfl=0.5, t_end=EULER_T_END):
    grid = Grid1D.cells(n_cells)
    smax = max(_euler_speed(euler_initial_state(grid.x, mu).as_array()).max() for mu in mus)
    return aligned_time_step(cfl * grid.dx / smax, [t_end])


def euler1d_unsteady(mu, n_cells=300, t_end=EULER_T_END, cfl=0.5, dt=None) -> Trajectory:
    """Roe finite volumes on ``[0, 1]`` from the Sod/Lax blend, transmissive ends.

    States have shape ``(3, n_cells)`` holding ``(rho, m, E)``.
    """
    if not 0.0 <= mu <= 1.0:
        raise ValueError("mu must lie in [0, 1]")
    grid = Grid1D.cells(n_cells)
    if dt is None:
        dt = euler_time_step([mu], n_cells, cfl, t_end)
    U0 = euler_initial_state(grid.x, mu).as_array()
    steps = int(round(t_end / dt))
    return march(EULER, U0, grid, dt, steps, mu, check=check_physical)


def advect1d_exact(n, t):
    """Travelling front ``u = 1`` for ``x <= min(t, 1)`` on ``x_i = i / n``."""
    x = np.arange(n + 1) / n
    return (x <= min(t, 1.0)).astype(float)


# ---------------------------------------------------------------------------
# export


def write_trajectory_csv(path, traj: Trajectory, times):
    """One row per cell: ``x`` then one column per output time.

    Euler trajectories get ``rho``, ``u`` and ``p`` columns per time.
    """
    idx = [traj.index_of(t) for t in times]
    header = ["x"]
    cols = [traj.grid.x]
    for t, n in zip(times, idx):
        s = traj.states[n]
        if s.ndim == 1:
            header.append(f"u_t{t:.6g}")
            cols.append(s)
        else:
            header += [f"rho_t{t:.6g}", f"u_t{t:.6g}", f"p_t{t:.6g}"]
            cols += [s[0], s[1] / s[0], pressure(s)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in np.column_stack(cols):
            w.writerow([repr(float(v)) for v in row])
