"""Implicit Euler two-point-flux scheme and its damped Newton driver.

One time step solves, per species i and cell K,

    m(K)/dt * (u_{i,K} - u_{i,K}^prev) + sum_{edges of K} F_{i,K,sigma} = 0,
    F_{i,K,sigma} = -tau_sigma * alpha_i * psq_sigma * (v_{i,K,sigma} - v_{i,K}),

with v_i = u_i * g(M), M the per-cell biomass, and psq the arithmetic mean of
p(M)^2 on the two sides of the edge.  Dirichlet edges use the constant contact
state, Neumann edges carry no flux.  The unknowns are the physical proportions
(cell-major ordering: cell index varies slowest) and the Jacobian is exact,
including the dependence of psq on the biomass.

Nonnegativity and the biomass bound are theorems for exact solutions of the
scheme, so the Newton safeguards only protect transient iterates: updates are
halved until the iterate stays above -1e-14 and below saturation, after which
tiny negatives are clipped to zero.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import diagnostics
from .mesh import Mesh
from .model import ModelFunctions

# Newton iterate safeguards
_NEGATIVE_SLACK = 1e-14
_SATURATION_SLACK = 1e-14
_MAX_HALVINGS = 30

# invariant tolerances checked after every accepted step
MAX_PRINCIPLE_TOL = 1e-12
ENTROPY_STEP_TOL = 1e-9


class SolverError(Exception):
    """Base class for time-stepping failures."""


class InadmissibleStateError(SolverError):
    """Trial state reached saturation; consumed by the damping logic."""


class NewtonFailure(SolverError):
    """Newton did not converge; the adaptive driver reacts by halving dt."""

    def __init__(self, message, iterations):
        super().__init__(message)
        self.iterations = iterations


class SolverFailure(SolverError):
    """Hard failure: dt exhausted below its floor."""

    def __init__(self, message, time):
        super().__init__(f"{message} (at t = {time:.6e})")
        self.time = time


class InvariantViolation(SolverError):
    """An accepted step broke a provable structural property."""


@dataclass(frozen=True, eq=False)
class State:
    """Snapshot of the discrete solution: u has shape (n_species, n_cells)."""

    time: float
    u: np.ndarray
    dt_last: float | None = None

    @property
    def biomass(self):
        return self.u.sum(axis=0)


@dataclass(frozen=True)
class BoundaryData:
    """Constant contact-boundary proportions u^D with u^D_i > 0, sum < 1."""

    u_dirichlet: tuple[float, ...]

    def __post_init__(self):
        u = np.asarray(self.u_dirichlet, dtype=float)
        if np.any(u <= 0.0):
            raise ValueError("boundary proportions must be positive")
        if u.sum() >= 1.0:
            raise ValueError("boundary proportions must sum to less than 1")

    @property
    def values(self):
        return np.asarray(self.u_dirichlet, dtype=float)

    @property
    def biomass(self):
        return float(self.values.sum())


@dataclass(frozen=True)
class NewtonConfig:
    tol: float = 1e-10
    max_iters: int = 50
    dt_min: float = 1e-8
    dt_max: float = 1e-2
    dt_init: float = 1e-5
    damping: float = 0.5
    adaptive: bool = True
    exact_flux_jacobian: bool = True

    def __post_init__(self):
        if not (0.0 < self.dt_min <= self.dt_init <= self.dt_max):
            raise ValueError("need 0 < dt_min <= dt_init <= dt_max")
        if self.tol <= 0.0 or not (0.0 < self.damping < 1.0):
            raise ValueError("tol must be positive and damping in (0, 1)")


@dataclass(frozen=True)
class StepReport:
    """Per-step diagnostics collected after each accepted Newton solve."""

    time: float
    dt_used: float
    newton_iters: int
    dt_halvings: int
    residual_norm: float
    entropy: float
    dissipation: np.ndarray
    max_M: float
    min_u: float
    conservation_defect: float


# -- initial data --------------------------------------------------------------------


def project_initial(u0, mesh: Mesh) -> State:
    """Cell averages of the initial datum.

    ``u0`` is either an object with ``n_species``/``cell_average`` (the exact
    path for indicator-type data) or a sequence of per-species callables that
    are sampled with the midpoint rule.  Raises ValueError when a cell average
    reaches saturation.
    """
    if hasattr(u0, "cell_average"):
        u = u0.cell_average(mesh)
    else:
        functions = list(u0)
        u = np.empty((len(functions), mesh.n_cells))
        for i, f in enumerate(functions):
            u[i] = np.asarray(
                [float(f(*np.atleast_1d(c))) for c in mesh.cell_centers], dtype=float
            )
    if np.any(u < 0.0):
        raise ValueError("initial datum produced negative cell averages")
    biomass = u.sum(axis=0)
    if np.any(biomass >= 1.0):
        bad = int(np.argmax(biomass))
        raise ValueError(f"initial biomass reaches saturation in cell {bad}")
    return State(time=0.0, u=u, dt_last=None)


def max_principle_bound(state: State, bdata: BoundaryData) -> float:
    """Supremum of boundary and current biomass; invariant upper bound."""
    return max(bdata.biomass, float(state.biomass.max()))


# -- residual and Jacobian -------------------------------------------------------------


def _edge_coefficients(u, mesh, model, bdata):
    """Shared per-edge quantities for assembly: potentials and psq means."""
    biomass = u.sum(axis=0)
    if biomass.size and biomass.max() >= 1.0:
        raise InadmissibleStateError(
            f"trial biomass {float(biomass.max()):.6f} reached saturation"
        )
    g = model.g(biomass)
    v = u * g
    psq_cell = model.p(biomass) ** 2
    v_d = bdata.values * model.g(bdata.biomass)
    psq_d_const = model.p(bdata.biomass) ** 2
    return biomass, g, v, psq_cell, v_d, psq_d_const


def residual(state_prev: State, u_trial, dt, mesh: Mesh, model: ModelFunctions,
             bdata: BoundaryData):
    """Residual of the implicit Euler step at the trial state, shape (n, N)."""
    u = np.asarray(u_trial, dtype=float)
    _, _, v, psq_cell, v_d, psq_d_const = _edge_coefficients(u, mesh, model, bdata)
    alphas = model.params.alpha_array
    n, n_cells = u.shape

    out = (mesh.cell_measures / dt) * (u - state_prev.u)

    K, L, tau = mesh.interior_K, mesh.interior_L, mesh.interior_tau
    psq = 0.5 * (psq_cell[K] + psq_cell[L])
    flux_K = -(alphas[:, None] * (tau * psq)) * (v[:, L] - v[:, K])
    Kd, tau_d = mesh.dirichlet_K, mesh.dirichlet_tau
    psq_b = 0.5 * (psq_cell[Kd] + psq_d_const)
    flux_B = -(alphas[:, None] * (tau_d * psq_b)) * (v_d[:, None] - v[:, Kd])
    for i in range(n):
        out[i] += np.bincount(K, weights=flux_K[i], minlength=n_cells)
        out[i] -= np.bincount(L, weights=flux_K[i], minlength=n_cells)
        out[i] += np.bincount(Kd, weights=flux_B[i], minlength=n_cells)
    return out


def dirichlet_fluxes(u, mesh: Mesh, model: ModelFunctions, bdata: BoundaryData):
    """Outward fluxes through the contact boundary, shape (n, #dirichlet)."""
    u = np.asarray(u, dtype=float)
    _, _, v, psq_cell, v_d, psq_d_const = _edge_coefficients(u, mesh, model, bdata)
    alphas = model.params.alpha_array
    Kd, tau_d = mesh.dirichlet_K, mesh.dirichlet_tau
    psq_b = 0.5 * (psq_cell[Kd] + psq_d_const)
    return -(alphas[:, None] * (tau_d * psq_b)) * (v_d[:, None] - v[:, Kd])


def _assembly_pattern(mesh: Mesh, n: int):
    """Row/column index arrays for the sparse Jacobian, cached per mesh."""
    cache = getattr(mesh, "_jacobian_patterns", None)
    if cache is None:
        cache = {}
        mesh._jacobian_patterns = cache
    if n in cache:
        return cache[n]

    ii = np.arange(n)
    diag = np.arange(n * mesh.n_cells)

    def block(rows_cells, cols_cells):
        # index arrays of shape (n, n, E) flattened in (i, j, e) order
        shape = (n, n, rows_cells.size)
        r = np.broadcast_to(rows_cells[None, None, :] * n + ii[:, None, None], shape)
        c = np.broadcast_to(cols_cells[None, None, :] * n + ii[None, :, None], shape)
        return r.ravel(), c.ravel()

    K, L = mesh.interior_K, mesh.interior_L
    Kd = mesh.dirichlet_K
    rows = [diag]
    cols = [diag]
    for rc, cc in ((K, K), (K, L), (L, L), (L, K), (Kd, Kd)):
        r, c = block(rc, cc)
        rows.append(r)
        cols.append(c)
    pattern = (np.concatenate(rows), np.concatenate(cols))
    cache[n] = pattern
    return pattern


def _edge_blocks(tau, alphas, psq, dv, g_side, gp_side, pp_side, u_side, sign, exact):
    """Derivative of the flux into K with respect to one side's unknowns.

    Returns an (n, n, E) array: d F_{i,K,sigma} / d u_{j,side}.  ``sign`` is
    +1 when differentiating with respect to the K side, -1 for the far side.
    """
    n = alphas.shape[0]
    base = alphas[:, None] * tau  # (n, E)
    nodelta = sign * base * psq * (u_side * gp_side)
    if exact:
        nodelta = nodelta - base * (pp_side * dv)
    out = np.repeat(nodelta[:, None, :], n, axis=1)
    delta = sign * base * (psq * g_side)
    idx = np.arange(n)
    out[idx, idx, :] += delta
    return out


def jacobian(state_prev: State, u_trial, dt, mesh: Mesh, model: ModelFunctions,
             bdata: BoundaryData, exact_coefficient: bool = True):
    """Exact sparse Jacobian of ``residual`` with respect to the trial state.

    ``exact_coefficient=False`` freezes the edge coefficient psq (Picard-like
    linearization), dropping the p p' terms.
    """
    u = np.asarray(u_trial, dtype=float)
    biomass, g, v, psq_cell, v_d, psq_d_const = _edge_coefficients(u, mesh, model, bdata)
    alphas = model.params.alpha_array
    n, n_cells = u.shape

    g_prime = model.g_prime(biomass)
    pp = model.p(biomass) * model.p_prime(biomass)

    K, L, tau = mesh.interior_K, mesh.interior_L, mesh.interior_tau
    psq = 0.5 * (psq_cell[K] + psq_cell[L])
    dv = v[:, L] - v[:, K]

    A_KK = _edge_blocks(tau, alphas, psq, dv, g[K], g_prime[K], pp[K], u[:, K],
                        sign=1.0, exact=exact_coefficient)
    A_KL = _edge_blocks(tau, alphas, psq, dv, g[L], g_prime[L], pp[L], u[:, L],
                        sign=-1.0, exact=exact_coefficient)

    Kd, tau_d = mesh.dirichlet_K, mesh.dirichlet_tau
    psq_b = 0.5 * (psq_cell[Kd] + psq_d_const)
    dv_b = v_d[:, None] - v[:, Kd]
    A_bb = _edge_blocks(tau_d, alphas, psq_b, dv_b, g[Kd], g_prime[Kd], pp[Kd],
                        u[:, Kd], sign=1.0, exact=exact_coefficient)

    diag = np.repeat(mesh.cell_measures / dt, n)
    data = np.concatenate([
        diag,
        A_KK.ravel(),
        A_KL.ravel(),
        (-A_KL).ravel(),
        (-A_KK).ravel(),
        A_bb.ravel(),
    ])
    rows, cols = _assembly_pattern(mesh, n)
    size = n * n_cells
    return sp.coo_matrix((data, (rows, cols)), shape=(size, size)).tocsc()


# -- Newton and time stepping -----------------------------------------------------------


def _scaled_norm(res, dt, mesh):
    """Max norm of the residual in units of u, i.e. of R * dt / m(K)."""
    return float(np.abs(res * (dt / mesh.cell_measures)).max())


def newton_step(state_prev: State, dt, mesh: Mesh, model: ModelFunctions,
                bdata: BoundaryData, cfg: NewtonConfig):
    """One implicit Euler step via damped Newton.

    Returns (state, report); raises NewtonFailure when the iteration budget or
    the damping budget is exhausted.
    """
    u = state_prev.u.copy()
    res = residual(state_prev, u, dt, mesh, model, bdata)
    n = u.shape[0]

    for it in range(1, cfg.max_iters + 1):
        matrix = jacobian(state_prev, u, dt, mesh, model, bdata,
                          exact_coefficient=cfg.exact_flux_jacobian)
        try:
            delta = splu(matrix).solve(-res.ravel(order="F"))
        except RuntimeError as exc:  # singular factorization
            raise NewtonFailure(f"linear solve failed: {exc}", iterations=it) from exc
        delta = delta.reshape(u.shape, order="F")

        step = 1.0
        candidate = res_new = None
        for _ in range(_MAX_HALVINGS + 1):
            trial = u + step * delta
            if (trial > -_NEGATIVE_SLACK).all() and (
                trial.sum(axis=0) < 1.0 - _SATURATION_SLACK
            ).all():
                trial = np.where(trial < 0.0, 0.0, trial)
                attempt = residual(state_prev, trial, dt, mesh, model, bdata)
                if np.isfinite(attempt).all():
                    candidate, res_new = trial, attempt
                    break
            step *= cfg.damping
        if candidate is None:
            raise NewtonFailure("damping exhausted without admissible iterate",
                                iterations=it)

        u, res = candidate, res_new
        res_norm = _scaled_norm(res, dt, mesh)
        if res_norm <= cfg.tol:
            state = State(time=state_prev.time + dt, u=u, dt_last=dt)
            defect = float(
                np.sum(mesh.cell_measures * (u - state_prev.u))
                + dt * dirichlet_fluxes(u, mesh, model, bdata).sum()
            )
            report = StepReport(
                time=state.time,
                dt_used=dt,
                newton_iters=it,
                dt_halvings=0,
                residual_norm=res_norm,
                entropy=diagnostics.discrete_entropy(state, mesh, model, bdata),
                dissipation=diagnostics.dissipation(state, mesh, model, bdata),
                max_M=float(state.biomass.max()),
                min_u=float(u.min()),
                conservation_defect=defect,
            )
            return state, report

    raise NewtonFailure(f"no convergence within {cfg.max_iters} iterations",
                        iterations=cfg.max_iters)


def advance(state: State, t_end, mesh: Mesh, model: ModelFunctions,
            bdata: BoundaryData, cfg: NewtonConfig, observer=None) -> State:
    """Advance to t_end with the step-halving/doubling policy.

    The step for each new attempt starts at twice the previously accepted dt
    (capped at dt_max) and is clamped to land on t_end exactly; on Newton
    failure the step is halved, and dropping below dt_min is a hard failure.
    With ``cfg.adaptive`` false the step is pinned to dt_init.  ``observer``,
    when given, is called as observer(report, state) after every accepted
    step and must not mutate the state.
    """
    if t_end < state.time:
        raise ValueError("t_end lies before the current state time")
    m_star = max_principle_bound(state, bdata)
    entropy_prev = diagnostics.discrete_entropy(state, mesh, model, bdata)
    alphas = model.params.alpha_array
    # the biomass bound M <= M* is a theorem only for equal diffusivities
    # (the per-species equations then sum to a diffusion equation for M)
    enforce_max_principle = bool(np.all(alphas == alphas[0]))
    time_tol = 1e-13 * max(1.0, abs(t_end))

    while t_end - state.time > time_tol:
        if not cfg.adaptive:
            dt_next = cfg.dt_init
        elif state.dt_last is None:
            dt_next = cfg.dt_init
        else:
            dt_next = min(2.0 * state.dt_last, cfg.dt_max)
        dt = min(dt_next, t_end - state.time)

        halvings = 0
        while True:
            try:
                new_state, report = newton_step(state, dt, mesh, model, bdata, cfg)
                break
            except NewtonFailure as exc:
                if not cfg.adaptive:
                    raise SolverFailure(f"fixed-step Newton failed: {exc}",
                                        time=state.time) from exc
                dt *= 0.5
                halvings += 1
                if dt < cfg.dt_min:
                    raise SolverFailure("time step fell below its floor",
                                        time=state.time) from exc

        if enforce_max_principle and report.max_M > m_star + MAX_PRINCIPLE_TOL:
            raise InvariantViolation(
                f"biomass bound violated at t = {new_state.time:.6e}: "
                f"{report.max_M} > {m_star}"
            )
        if report.min_u < 0.0:
            raise InvariantViolation(f"negative proportion at t = {new_state.time:.6e}")
        produced = dt * float(alphas @ report.dissipation)
        if report.entropy + produced > entropy_prev + ENTROPY_STEP_TOL * max(1.0, entropy_prev):
            raise InvariantViolation(
                f"entropy inequality violated at t = {new_state.time:.6e}"
            )

        if halvings:
            report = replace(report, dt_halvings=halvings)
        if observer is not None:
            observer(report, new_state)
        entropy_prev = report.entropy
        state = new_state
    return state
