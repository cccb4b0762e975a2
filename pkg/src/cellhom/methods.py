"""Four routes to an effective (homogenized) coefficient tensor.

Given an oscillatory coefficient a(y), the effective tensor a0 is obtained
from cell problems posed either on the exact periodicity cell or on an
oversampled truncated box K_R = [-R/2, R/2]^d:

* ``solve_periodic_reference`` -- corrector problems on one periodicity
  cell with periodic boundary conditions; the bias-free reference.
* ``solve_elliptic_dirichlet`` -- the classical truncated cell problem
  with homogeneous Dirichlet walls; the boundary layer pollutes the
  tensor at rate 1/R.
* ``evolve_parabolic`` / ``upscale_parabolic`` -- integrate the heat flow
  of the same cell data and average in space *and* time against smooth
  filters; the boundary error becomes exponentially small in R and the
  filter order q controls an algebraic R^-(q+1) rate.
* ``solve_modified_elliptic`` -- a stationary shortcut to the same
  effect: subtract the exponentially weighted span of the lowest
  eigenmodes from the elliptic load, then average the corrected flux.

All four share one assembly routine and one quadrature rule, so the
discrete identities connecting them (elliptic corrector = time integral of
the heat flow; spectral route -> elliptic route as T -> infinity or
N -> all modes) hold to solver tolerance, not just asymptotically.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse.linalg as spla

from .errors import InvalidInputError
from .fem import (
    FemSystem,
    Grid,
    assemble,
    build_grid,
    filtered_coefficient_integral,
    filtered_flux_tensor,
    filtered_mass_matrix,
)
from .fields import TensorField
from .filters import BoxFilter, make_filter
from .linalg import cg_solve, smallest_eigpairs
from .timestepping import HeatEvolution, StepControl, evolve_heat

__all__ = [
    "MethodParams",
    "HomogenizedTensor",
    "ParabolicTrajectory",
    "optimal_params",
    "solve_periodic_reference",
    "solve_elliptic_dirichlet",
    "evolve_parabolic",
    "upscale_parabolic",
    "solve_modified_elliptic",
]

METHODS = ("periodic", "elliptic", "parabolic", "modified-elliptic")


@dataclass(frozen=True)
class MethodParams:
    """Resolved parameters of one upscaling run.

    ``L`` is the side of the averaging box, ``T`` the final time (parabolic)
    or spectral weight scale (modified elliptic), ``N`` the retained mode
    count, ``q`` the filter order.  ``k_o`` and ``k_T`` record the rules
    that produced L and T when `optimal_params` built the object.
    """

    R: float
    L: float = 0.0
    T: float = 0.0
    N: int = 0
    q: int = 0
    k_o: float = 0.0
    k_T: float = 0.0


@dataclass
class HomogenizedTensor:
    """Effective tensor plus method identification and diagnostics.

    ``diagnostics`` always carries: wall_time_s, solver_iterations,
    asymmetry (Frobenius norm of values - values^T before any
    symmetrization), spectral_min / spectral_max (eigenvalues of the
    symmetrized tensor); methods add their own extras.
    """

    values: np.ndarray
    method: str
    params: MethodParams | None = None
    diagnostics: dict = dc_field(default_factory=dict)


@dataclass
class ParabolicTrajectory:
    """Online-accumulated observables of one heat-flow evolution.

    The state history itself is not retained (except on request for small
    problems); everything the upscaling formula needs is accumulated
    trapezoidally step by step: the space-filtered products
    S_f[i, j] = int_0^T int u_i u_j mu_L dy dt for every requested filter
    f, and the plain time integral int_0^T u dt that ties the trajectory
    back to the elliptic corrector.
    """

    grid: Grid
    fem: FemSystem
    T: float
    filters: list[BoxFilter]
    spacetime_products: np.ndarray  # (n_filters, d, d)
    coefficient_averages: np.ndarray  # (n_filters, d, d)
    time_integral: np.ndarray  # (n_free, d)
    final_states: np.ndarray  # (n_free, d)
    times: np.ndarray
    energies: np.ndarray
    n_accepted: int
    n_rejected: int
    n_factorizations: int
    wall_time_s: float
    mass_solve_iterations: int
    states: list[np.ndarray] | None = None

    @property
    def R(self) -> float:
        return self.grid.side


def _require(cond: bool, msg: str):
    if not cond:
        raise InvalidInputError(msg)


def _cells_for(extent: float, h: float) -> int:
    _require(h > 0 and np.isfinite(h), f"mesh size must be positive, got {h}")
    _require(extent > 0 and np.isfinite(extent), f"box side must be positive, got {extent}")
    n = int(round(extent / h))
    return max(n, 2)


def _tensor_diagnostics(values: np.ndarray, wall: float, iters: int) -> dict:
    asym = float(np.linalg.norm(values - values.T))
    sym = 0.5 * (values + values.T)
    eigs = np.linalg.eigvalsh(sym)
    return {
        "wall_time_s": wall,
        "solver_iterations": iters,
        "asymmetry": asym,
        "spectral_min": float(eigs.min()),
        "spectral_max": float(eigs.max()),
    }


def optimal_params(
    method: str,
    R: float,
    q: int,
    k_o: float,
    alpha: float,
    beta: float,
    N_rule=None,
) -> MethodParams:
    """Resolve (L, T, N) from R by the error-equilibration rules.

    The averaging box is L = (1 - k_o) R; the time horizon is T = k_T R
    with k_T = k_o / (pi sqrt(4 beta alpha)) for the parabolic route and
    k_T = k_o / (pi sqrt(2 beta alpha)) for the modified elliptic route,
    which balances the exponential boundary/spectral terms against the
    R^-(q+1) averaging term.  ``N_rule`` is an int (fixed mode count,
    default 60 for the modified route) or a callable R -> int.

    Emits a UserWarning when the averaging box is not strictly inside the
    largest whole-period box (L >= floor(R)); the formulas remain usable
    but the supporting error analysis assumes the stricter containment.
    """
    _require(method in ("parabolic", "modified-elliptic"),
             f"optimal_params applies to the parabolic/modified-elliptic routes, got {method!r}")
    _require(R > 1.0, f"R must exceed 1, got {R}")
    _require(0.0 < k_o < 1.0, f"k_o must lie in (0, 1), got {k_o}")
    _require(isinstance(q, (int, np.integer)) and q >= 0, f"filter order must be >= 0, got {q!r}")
    _require(alpha > 0 and beta >= alpha, f"need 0 < alpha <= beta, got {alpha}, {beta}")

    L = (1.0 - k_o) * R
    if L >= math.floor(R):
        warnings.warn(
            f"averaging box L = {L:g} is not strictly inside the whole-period "
            f"box (floor(R) = {math.floor(R)}); error guarantees degrade",
            UserWarning,
            stacklevel=2,
        )
    if method == "parabolic":
        k_T = k_o / (math.pi * math.sqrt(4.0 * beta * alpha))
        N = 0
    else:
        k_T = k_o / (math.pi * math.sqrt(2.0 * beta * alpha))
        if N_rule is None:
            N = 60
        elif callable(N_rule):
            N = int(N_rule(R))
        else:
            N = int(N_rule)
        _require(N >= 1, f"mode count must be >= 1, got {N}")
    return MethodParams(R=float(R), L=float(L), T=float(k_T * R), N=N, q=int(q),
                        k_o=float(k_o), k_T=float(k_T))


def solve_periodic_reference(
    field: TensorField,
    h: float,
    nq: int = 2,
    cg_tol: float = 1e-12,
) -> HomogenizedTensor:
    """Reference tensor from corrector problems on one periodicity cell.

    Solves the d singular periodic systems with mean-projected CG and
    evaluates the full quadratic form
    a0_ij = |K|^-1 int (e_i + grad chi_i) . a (e_j + grad chi_j),
    not the energy shortcut, so the route stays independent from the
    truncated solvers it calibrates.
    """
    _require(field.period is not None, "periodic reference needs a periodic field")
    period = float(field.period)
    n = _cells_for(period, h)
    grid = build_grid(field.dim, period, n, bc="periodic")
    t0 = time.perf_counter()
    fem = assemble(field, grid, nq=nq)
    d = field.dim
    chis = np.empty((fem.n_free, d))
    iters = 0
    for i in range(d):
        x, it = cg_solve(
            fem.stiffness,
            fem.loads[i],
            tol=cg_tol,
            precond="jacobi",
            project=fem.mean_project,
        )
        chis[:, i] = fem.zero_mass_mean(x)
        iters += it

    kchi = fem.stiffness.matvec(chis)
    cross = fem.loads @ chis  # cross[i, j] = b_i . chi_j
    corr = chis.T @ kchi
    values = fem.coefficient_integral - cross - cross.T + 0.5 * (corr + corr.T)
    values /= period**field.dim
    wall = time.perf_counter() - t0
    diag = _tensor_diagnostics(values, wall, iters)
    diag["h"] = grid.h
    diag["cells_per_axis"] = n
    return HomogenizedTensor(values=values, method="periodic",
                             params=MethodParams(R=period), diagnostics=diag)


def _solve_dirichlet_correctors(
    fem: FemSystem, loads: np.ndarray, solver: str, cg_tol: float
) -> tuple[np.ndarray, int]:
    """Solve K psi = load column-wise; returns (psi, iteration count)."""
    if solver == "direct":
        lu = spla.splu(fem.stiffness.mat.tocsc())
        return lu.solve(loads.T.copy()), 0
    if solver == "cg":
        psis = np.empty((fem.n_free, loads.shape[0]))
        iters = 0
        for i in range(loads.shape[0]):
            x, it = cg_solve(fem.stiffness, loads[i], tol=cg_tol, precond="jacobi")
            psis[:, i] = x
            iters += it
        return psis, iters
    raise InvalidInputError(f"solver must be 'direct' or 'cg', got {solver!r}")


def solve_elliptic_dirichlet(
    field: TensorField,
    R: float,
    h: float,
    nq: int = 2,
    solver: str = "direct",
    cg_tol: float = 1e-12,
    bc: str = "dirichlet",
) -> HomogenizedTensor:
    """Classical truncated cell problem on K_R, energy-form average.

    a_ij = R^-d (int a_ij - psi_i . K psi_j); symmetric by construction.
    With ``bc='periodic'`` the same problem is closed periodically (R must
    then be an integer multiple of the field period), which removes the
    boundary layer entirely and is mainly useful for validation.
    """
    _require(R > 0, f"R must be positive, got {R}")
    n = _cells_for(R, h)
    if bc == "periodic":
        _require(field.period is not None, "periodic closure needs a periodic field")
        ratio = R / field.period
        _require(abs(ratio - round(ratio)) < 1e-9,
                 f"periodic closure needs R to be a whole number of periods, got R={R}")
    grid = build_grid(field.dim, R, n, bc=bc)
    t0 = time.perf_counter()
    fem = assemble(field, grid, nq=nq)
    if bc == "periodic":
        psis = np.empty((fem.n_free, field.dim))
        iters = 0
        for i in range(field.dim):
            x, it = cg_solve(fem.stiffness, fem.loads[i], tol=cg_tol,
                             precond="jacobi", project=fem.mean_project)
            psis[:, i] = fem.zero_mass_mean(x)
            iters += it
    else:
        psis, iters = _solve_dirichlet_correctors(fem, fem.loads, solver, cg_tol)
    corr = psis.T @ fem.stiffness.matvec(psis)
    values = (fem.coefficient_integral - 0.5 * (corr + corr.T)) / R**field.dim
    wall = time.perf_counter() - t0
    diag = _tensor_diagnostics(values, wall, iters)
    diag["h"] = grid.h
    diag["cells_per_axis"] = n
    diag["bc"] = bc
    return HomogenizedTensor(values=values, method="elliptic",
                             params=MethodParams(R=float(R)), diagnostics=diag)


class _TrapezoidObserver:
    """Accumulates the filtered space-time products and the time integral."""

    def __init__(self, w_mats, U0: np.ndarray):
        self.w_mats = w_mats
        d = U0.shape[1]
        self.products = np.zeros((len(w_mats), d, d))
        self.time_integral = np.zeros_like(U0)
        self._last = [self._filtered(U0, k) for k in range(len(w_mats))]
        self._last_U = U0.copy()

    def _filtered(self, U: np.ndarray, k: int) -> np.ndarray:
        P = U.T @ self.w_mats[k].matvec(U)
        return 0.5 * (P + P.T)

    def __call__(self, t_old, U_old, t_new, U_new):
        dt = t_new - t_old
        for k in range(len(self.w_mats)):
            P_new = self._filtered(U_new, k)
            self.products[k] += 0.5 * dt * (self._last[k] + P_new)
            self._last[k] = P_new
        self.time_integral += 0.5 * dt * (self._last_U + U_new)
        self._last_U = U_new.copy()


def evolve_parabolic(
    field: TensorField,
    R: float,
    h: float,
    T: float,
    filters: list[BoxFilter] | tuple[BoxFilter, ...] = (),
    control: StepControl | None = None,
    bc: str = "dirichlet",
    nq: int = 2,
    record_states: bool = False,
    mass_cg_tol: float = 1e-13,
) -> ParabolicTrajectory:
    """Evolve the heat flow of the cell data on K_R up to time T.

    The initial state of direction i is the L2 projection of the cell
    divergence data (M u0 = b_i); all directions march together.  Every
    filter in ``filters`` gets its space-time product accumulated online,
    so a single trajectory can serve several averaging orders.  Filters
    must live inside K_R.

    Returns the trajectory; feed it to `upscale_parabolic` with matching
    parameters to obtain the tensor.
    """
    _require(R > 0, f"R must be positive, got {R}")
    _require(T > 0 and np.isfinite(T), f"T must be positive and finite, got {T}")
    filters = list(filters)
    _require(len(filters) > 0, "evolve_parabolic needs at least one filter to accumulate")
    n = _cells_for(R, h)
    grid = build_grid(field.dim, R, n, bc=bc)
    t0 = time.perf_counter()
    fem = assemble(field, grid, nq=nq)
    d = field.dim

    w_mats = [filtered_mass_matrix(grid, f, nq=nq).restrict(fem.free) for f in filters]
    coeff_avgs = np.stack(
        [filtered_coefficient_integral(grid, field, f, nq=nq) for f in filters]
    )

    U0 = np.empty((fem.n_free, d))
    mass_iters = 0
    if not fem.loads.any():
        U0[:] = 0.0
    else:
        for i in range(d):
            x, it = cg_solve(fem.mass, fem.loads[i], tol=mass_cg_tol, precond="jacobi")
            U0[:, i] = x
            mass_iters += it

    obs = _TrapezoidObserver(w_mats, U0)
    evo: HeatEvolution = evolve_heat(
        fem.stiffness, fem.mass, U0, T,
        control=control if control is not None else StepControl(),
        observer=obs,
        record_states=record_states,
    )
    wall = time.perf_counter() - t0
    return ParabolicTrajectory(
        grid=grid,
        fem=fem,
        T=float(T),
        filters=filters,
        spacetime_products=obs.products,
        coefficient_averages=coeff_avgs,
        time_integral=obs.time_integral,
        final_states=evo.U,
        times=evo.times,
        energies=evo.energies,
        n_accepted=evo.n_accepted,
        n_rejected=evo.n_rejected,
        n_factorizations=evo.n_factorizations,
        wall_time_s=wall,
        mass_solve_iterations=mass_iters,
        states=evo.states,
    )


def upscale_parabolic(
    field: TensorField,
    params: MethodParams,
    trajectory: ParabolicTrajectory,
) -> HomogenizedTensor:
    """Assemble the tensor from an evolved trajectory:

    a_ij = int a_ij mu_L dy - 2 int_0^T int u_i u_j mu_L dy dt.

    The trajectory must have been evolved on K_R with the matching horizon
    and must have accumulated a filter with the requested (q, L).
    """
    _require(field.dim == trajectory.grid.dim, "field/trajectory dimension mismatch")
    _require(abs(params.R - trajectory.R) <= 1e-12 * max(1.0, params.R),
             f"params.R = {params.R} does not match trajectory R = {trajectory.R}")
    _require(abs(params.T - trajectory.T) <= 1e-12 * max(1.0, params.T),
             f"params.T = {params.T} does not match trajectory T = {trajectory.T}")
    match = None
    for k, f in enumerate(trajectory.filters):
        if f.q == params.q and abs(f.L - params.L) <= 1e-12 * max(1.0, params.L):
            match = k
            break
    _require(match is not None,
             f"trajectory accumulated no filter with q = {params.q}, L = {params.L:g}")
    values = trajectory.coefficient_averages[match] - 2.0 * trajectory.spacetime_products[match]
    diag = _tensor_diagnostics(values, trajectory.wall_time_s, trajectory.n_accepted)
    diag.update(
        n_rejected=trajectory.n_rejected,
        n_factorizations=trajectory.n_factorizations,
        h=trajectory.grid.h,
        cells_per_axis=trajectory.grid.n,
        mass_solve_iterations=trajectory.mass_solve_iterations,
    )
    return HomogenizedTensor(values=values, method="parabolic", params=params,
                             diagnostics=diag)


def solve_modified_elliptic(
    field: TensorField,
    params: MethodParams,
    h: float,
    nq: int = 2,
    symmetrize: bool = False,
    eig_tol: float = 0.0,
    seed: int = 42,
    filters: list[BoxFilter] | None = None,
) -> HomogenizedTensor:
    """Stationary cell problem with spectral exponential correction.

    The elliptic load of direction i is replaced by
    b_i - sum_k exp(-lambda_k T) (b_i . v_k) M v_k over the N smallest
    eigenpairs of K v = lambda M v, the corrected problem is solved on
    K_R with Dirichlet walls, and the tensor is read off the filtered flux
    average.  The result is asymmetric at the modelling-error level; the
    asymmetry norm is reported and ``symmetrize=True`` averages it away.
    """
    _require(params.N >= 1, f"modified elliptic needs N >= 1 retained modes, got {params.N}")
    _require(params.T > 0, f"modified elliptic needs T > 0, got {params.T}")
    R = params.R
    n = _cells_for(R, h)
    grid = build_grid(field.dim, R, n, bc="dirichlet")
    t0 = time.perf_counter()
    fem = assemble(field, grid, nq=nq)
    d = field.dim

    eig = smallest_eigpairs(fem.stiffness, fem.mass, params.N, tol=eig_tol, seed=seed)
    weights = np.exp(-eig.lambdas * params.T)  # (N,)
    G = fem.loads @ eig.vectors  # (d, N) spectral coefficients of the loads
    MV = fem.mass.matvec(eig.vectors)  # (n_free, N)
    loads_mod = fem.loads - (G * weights) @ MV.T

    lu = spla.splu(fem.stiffness.mat.tocsc())
    chis = lu.solve(loads_mod.T.copy())  # (n_free, d)
    chis_full = fem.expand(chis)

    if filters is None:
        filters = [BoxFilter(base=make_filter(params.q), L=params.L, dim=d)]
    values_all = [filtered_flux_tensor(grid, field, f, chis_full, nq=nq) for f in filters]
    values = values_all[0]
    wall = time.perf_counter() - t0
    diag = _tensor_diagnostics(values, wall, 0)
    if symmetrize:
        values = 0.5 * (values + values.T)
    diag.update(
        h=grid.h,
        cells_per_axis=n,
        lambda_min=float(eig.lambdas[0]),
        lambda_max=float(eig.lambdas[-1]),
        tail_weight=float(weights[-1]),
        eig_residual=float(eig.residuals.max()),
        symmetrized=bool(symmetrize),
    )
    if len(filters) > 1:
        diag["values_per_filter"] = values_all
    return HomogenizedTensor(values=values, method="modified-elliptic", params=params,
                             diagnostics=diag)
