"""Multilinear (Q1) finite elements on tensor-product boxes.

Everything operates on the centered box [-side/2, side/2]^dim with n
uniform cells per axis, either with homogeneous Dirichlet conditions
(boundary nodes eliminated) or periodic identification (wrapped nodes, the
constant nullspace handled by the callers).  Assembly is vectorized over
cells in chunks; coefficients are sampled at tensor-product Gauss points
(>= 2 per axis) and the same rule is reused by every integral in the
package so that discrete identities between the solvers hold exactly.

The filtered functionals at the bottom integrate against a rescaled
averaging weight mu_L.  Their quadrature is normalized by the discrete
filter mass (which equals 1 up to O(h^2) when cells do not align with the
K_L boundary) so that averaging a constant returns it exactly.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .fields import TensorField
from .filters import BoxFilter
from .linalg import SparseSym

__all__ = [
    "Grid",
    "FemSystem",
    "build_grid",
    "assemble",
    "gauss_rule",
    "node_coordinates",
    "filtered_mass_matrix",
    "filtered_bilinear",
    "filtered_flux_average",
    "filtered_flux_tensor",
    "filtered_coefficient_integral",
    "integrate_coefficient",
]

_CHUNK = 32768  # cells per assembly block; bounds peak memory in 3-d


@dataclass(frozen=True)
class Grid:
    """Uniform tensor-product grid on the centered box."""

    dim: int
    n: int
    side: float
    bc: str

    @property
    def h(self) -> float:
        return self.side / self.n

    @property
    def n_cells(self) -> int:
        return self.n**self.dim

    @property
    def nodes_per_axis(self) -> int:
        return self.n if self.bc == "periodic" else self.n + 1

    @property
    def n_nodes(self) -> int:
        return self.nodes_per_axis**self.dim


def build_grid(dim: int, side: float, n: int, bc: str = "dirichlet") -> Grid:
    """Validated Grid constructor."""
    if dim not in (1, 2, 3):
        raise InvalidInputError(f"dim must be 1, 2 or 3, got {dim}")
    if bc not in ("dirichlet", "periodic"):
        raise InvalidInputError(f"bc must be 'dirichlet' or 'periodic', got {bc!r}")
    if not isinstance(n, (int, np.integer)) or isinstance(n, bool) or n < 2:
        raise InvalidInputError(f"cells per axis must be an integer >= 2, got {n!r}")
    if not (side > 0 and np.isfinite(side)):
        raise InvalidInputError(f"box side must be positive and finite, got {side}")
    return Grid(dim=dim, n=int(n), side=float(side), bc=bc)


def gauss_rule(npts: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes/weights on [0, 1]; weights sum to 1."""
    if npts < 2:
        raise InvalidInputError(f"quadrature needs >= 2 points per axis, got {npts}")
    x, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (x + 1.0), 0.5 * w


class _Tables:
    """Per-(grid, nq) reference-element and connectivity tables."""

    def __init__(self, grid: Grid, nq: int):
        dim, n = grid.dim, grid.n
        xi, w = gauss_rule(nq)
        corners = np.array(list(itertools.product((0, 1), repeat=dim)))  # (2^d, d)
        qidx = np.array(list(itertools.product(range(nq), repeat=dim)))  # (nq^d, d)
        pts = xi[qidx]  # (np, d) reference coordinates in [0,1]^d
        self.weights = w[qidx].prod(axis=1) * grid.h**dim  # (np,)

        line = np.stack([1.0 - pts, pts], axis=0)  # (2, np, d): l_0, l_1 per axis
        dline = np.stack([-np.ones_like(pts), np.ones_like(pts)], axis=0)
        npq = pts.shape[0]
        ncorn = corners.shape[0]
        self.N = np.ones((npq, ncorn))
        self.G = np.zeros((npq, ncorn, dim))  # physical gradients (uniform h)
        for m in range(ncorn):
            for k in range(dim):
                self.N[:, m] *= line[corners[m, k], :, k]
        for m in range(ncorn):
            for k in range(dim):
                g = dline[corners[m, k], :, k] / grid.h
                for l in range(dim):
                    if l != k:
                        g = g * line[corners[m, l], :, l]
                self.G[:, m, k] = g

        cells = np.indices((n,) * dim).reshape(dim, -1).T  # (ncells, d)
        shape = (grid.nodes_per_axis,) * dim
        conn = np.empty((cells.shape[0], ncorn), dtype=np.int64)
        for m in range(ncorn):
            per_axis = cells + corners[m]
            if grid.bc == "periodic":
                per_axis = per_axis % n
            conn[:, m] = np.ravel_multi_index(per_axis.T, shape)
        self.conn = conn
        self.origins = -0.5 * grid.side + cells * grid.h  # (ncells, d)
        self.ref_pts = pts


_TABLE_CACHE: dict[tuple[Grid, int], _Tables] = {}


def _tables(grid: Grid, nq: int) -> _Tables:
    key = (grid, nq)
    tab = _TABLE_CACHE.get(key)
    if tab is None:
        tab = _Tables(grid, nq)
        if len(_TABLE_CACHE) >= 4:
            _TABLE_CACHE.pop(next(iter(_TABLE_CACHE)))
        _TABLE_CACHE[key] = tab
    return tab


def node_coordinates(grid: Grid) -> np.ndarray:
    """Coordinates of all (distinct) nodes, shape (n_nodes, dim), C-ordered."""
    nn = grid.nodes_per_axis
    idx = np.indices((nn,) * grid.dim).reshape(grid.dim, -1).T
    return -0.5 * grid.side + idx * grid.h


def _boundary_mask(grid: Grid) -> np.ndarray:
    """True on eliminated (Dirichlet boundary) nodes."""
    if grid.bc == "periodic":
        return np.zeros(grid.n_nodes, dtype=bool)
    nn = grid.nodes_per_axis
    idx = np.indices((nn,) * grid.dim).reshape(grid.dim, -1)
    return ((idx == 0) | (idx == grid.n)).any(axis=0)


@dataclass
class FemSystem:
    """Assembled operators of one cell problem (all directions share them).

    ``stiffness``/``mass`` are reduced to the free nodes; ``loads[i]`` is
    the weak divergence load of direction i, i.e. the row vector of
    -int a e_i . grad(phi_v).  ``free`` indexes free nodes into the full
    node set, and :meth:`expand` zero-pads reduced vectors back onto it.
    """

    grid: Grid
    field: TensorField
    nq: int
    stiffness: SparseSym
    mass: SparseSym
    loads: np.ndarray
    free: np.ndarray
    n_nodes: int
    coefficient_integral: np.ndarray | None = None

    @property
    def n_free(self) -> int:
        return self.free.shape[0]

    def expand(self, u: np.ndarray) -> np.ndarray:
        """Zero-padded full-node vector(s) from reduced vector(s)."""
        u = np.asarray(u)
        out = np.zeros((self.n_nodes,) + u.shape[1:])
        out[self.free] = u
        return out

    def mean_project(self, u: np.ndarray) -> np.ndarray:
        """Remove the (Euclidean) mean; CG helper for periodic nullspace."""
        return u - u.mean()

    def zero_mass_mean(self, u: np.ndarray) -> np.ndarray:
        """Shift so the consistent-mass mean 1^T M u vanishes (periodic)."""
        w = self.mass.matvec(np.ones(self.n_free))
        return u - (w @ u) / w.sum()


def assemble(field: TensorField, grid: Grid, nq: int = 2) -> FemSystem:
    """Assemble stiffness, mass and the d directional loads.

    The coefficient is sampled at the Gauss points and symmetrized; local
    stiffness blocks are symmetrized as well, so the assembled matrix is
    exactly symmetric entrywise.
    """
    if field.dim != grid.dim:
        raise InvalidInputError(
            f"field dimension {field.dim} does not match grid dimension {grid.dim}"
        )
    tab = _tables(grid, nq)
    d = grid.dim
    ncorn = tab.conn.shape[1]
    nfull = grid.n_nodes

    mloc = np.einsum("p,pu,pv->uv", tab.weights, tab.N, tab.N)
    mloc = 0.5 * (mloc + mloc.T)

    rows_all, cols_all, kvals_all = [], [], []
    bfull = np.zeros((d, nfull))
    coeff_int = np.zeros((d, d))
    for lo in range(0, grid.n_cells, _CHUNK):
        hi = min(lo + _CHUNK, grid.n_cells)
        pts = tab.origins[lo:hi, None, :] + tab.ref_pts[None, :, :] * grid.h
        a = np.asarray(field(pts), dtype=float)
        a = 0.5 * (a + np.swapaxes(a, -1, -2))
        sloc = np.einsum("p,cpkl,puk,pvl->cuv", tab.weights, a, tab.G, tab.G, optimize=True)
        sloc = 0.5 * (sloc + np.swapaxes(sloc, 1, 2))
        conn = tab.conn[lo:hi]
        rows_all.append(np.repeat(conn, ncorn, axis=1).ravel())
        cols_all.append(np.tile(conn, (1, ncorn)).ravel())
        kvals_all.append(sloc.ravel())
        bloc = -np.einsum("p,cpki,pvk->cvi", tab.weights, a, tab.G, optimize=True)
        for i in range(d):
            np.add.at(bfull[i], conn.ravel(), bloc[:, :, i].ravel())
        coeff_int += np.einsum("p,cpij->ij", tab.weights, a)

    rows = np.concatenate(rows_all)
    cols = np.concatenate(cols_all)
    kfull = SparseSym.from_coo(rows, cols, np.concatenate(kvals_all), nfull)
    mfull = SparseSym.from_coo(
        rows,
        cols,
        np.tile(mloc.ravel(), grid.n_cells),
        nfull,
    )

    free = np.nonzero(~_boundary_mask(grid))[0]
    if grid.bc == "dirichlet":
        kred = kfull.restrict(free)
        mred = mfull.restrict(free)
    else:
        kred, mred = kfull, mfull
    coeff_int = 0.5 * (coeff_int + coeff_int.T)
    return FemSystem(
        grid=grid,
        field=field,
        nq=nq,
        stiffness=kred,
        mass=mred,
        loads=bfull[:, free],
        free=free,
        n_nodes=nfull,
        coefficient_integral=coeff_int,
    )


def _filter_values(grid: Grid, filt: BoxFilter, nq: int) -> tuple[_Tables, np.ndarray]:
    """Normalized filter weights at all quadrature points: (tables, mu)."""
    if filt.dim != grid.dim:
        raise InvalidInputError(
            f"filter dimension {filt.dim} does not match grid dimension {grid.dim}"
        )
    if filt.L > grid.side * (1.0 + 1e-12):
        raise InvalidInputError(
            f"filter box side L={filt.L} exceeds the domain side {grid.side}"
        )
    tab = _tables(grid, nq)
    pts = tab.origins[:, None, :] + tab.ref_pts[None, :, :] * grid.h
    mu = filt(pts)  # (ncells, np)
    mass = float(np.einsum("p,cp->", tab.weights, mu))
    if mass <= 0.0:
        raise InvalidInputError(
            "filter support contains no quadrature point; L is too small "
            "relative to the mesh"
        )
    return tab, mu / mass


def filtered_mass_matrix(grid: Grid, filt: BoxFilter, nq: int = 2) -> SparseSym:
    """Weighted mass matrix W_uv = int phi_u phi_v mu_L on the full node set."""
    tab, mu = _filter_values(grid, filt, nq)
    wloc = np.einsum("p,cp,pu,pv->cuv", tab.weights, mu, tab.N, tab.N, optimize=True)
    wloc = 0.5 * (wloc + np.swapaxes(wloc, 1, 2))
    ncorn = tab.conn.shape[1]
    rows = np.repeat(tab.conn, ncorn, axis=1).ravel()
    cols = np.tile(tab.conn, (1, ncorn)).ravel()
    return SparseSym.from_coo(rows, cols, wloc.ravel(), grid.n_nodes)


def filtered_bilinear(
    grid: Grid, filt: BoxFilter, u: np.ndarray, v: np.ndarray, nq: int = 2
) -> float:
    """Weighted product int u v mu_L for full-node coefficient vectors."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != (grid.n_nodes,) or v.shape != (grid.n_nodes,):
        raise InvalidInputError(
            f"expected full nodal vectors of length {grid.n_nodes}, "
            f"got {u.shape} and {v.shape}"
        )
    W = filtered_mass_matrix(grid, filt, nq)
    return float(u @ W.matvec(v))


def filtered_coefficient_integral(
    grid: Grid, field: TensorField, filt: BoxFilter, nq: int = 2
) -> np.ndarray:
    """Entrywise weighted average int a_ij mu_L over the filter box."""
    tab, mu = _filter_values(grid, filt, nq)
    out = np.zeros((grid.dim, grid.dim))
    for lo in range(0, grid.n_cells, _CHUNK):
        hi = min(lo + _CHUNK, grid.n_cells)
        pts = tab.origins[lo:hi, None, :] + tab.ref_pts[None, :, :] * grid.h
        a = np.asarray(field(pts), dtype=float)
        a = 0.5 * (a + np.swapaxes(a, -1, -2))
        out += np.einsum("p,cp,cpij->ij", tab.weights, mu[lo:hi], a, optimize=True)
    return 0.5 * (out + out.T)


def filtered_flux_tensor(
    grid: Grid,
    field: TensorField,
    filt: BoxFilter,
    chis: np.ndarray,
    nq: int = 2,
) -> np.ndarray:
    """Weighted corrected-flux averages b_ij = int (a_ij + (a grad chi^j)_i) mu_L.

    ``chis`` holds the d corrector vectors on the full node set, shape
    (n_nodes, d).  Column j is the corrector driven by direction j.
    """
    chis = np.asarray(chis, dtype=float)
    if chis.shape != (grid.n_nodes, grid.dim):
        raise InvalidInputError(
            f"expected correctors of shape ({grid.n_nodes}, {grid.dim}), got {chis.shape}"
        )
    tab, mu = _filter_values(grid, filt, nq)
    out = np.zeros((grid.dim, grid.dim))
    for lo in range(0, grid.n_cells, _CHUNK):
        hi = min(lo + _CHUNK, grid.n_cells)
        pts = tab.origins[lo:hi, None, :] + tab.ref_pts[None, :, :] * grid.h
        a = np.asarray(field(pts), dtype=float)
        a = 0.5 * (a + np.swapaxes(a, -1, -2))
        cvals = chis[tab.conn[lo:hi]]  # (c, corners, d)
        grads = np.einsum("pmk,cmj->cpkj", tab.G, cvals, optimize=True)
        flux = a + np.einsum("cpik,cpkj->cpij", a, grads, optimize=True)
        out += np.einsum("p,cp,cpij->ij", tab.weights, mu[lo:hi], flux, optimize=True)
    return out


def filtered_flux_average(
    grid: Grid,
    field: TensorField,
    filt: BoxFilter,
    chi: np.ndarray,
    j: int,
    i: int,
    nq: int = 2,
) -> float:
    """Single weighted flux entry int (a_ij + sum_k a_ik d_k chi) mu_L.

    ``chi`` is the direction-j corrector on the full node set.
    """
    d = grid.dim
    if not (0 <= i < d and 0 <= j < d):
        raise InvalidInputError(f"component indices must lie in [0, {d}), got ({i}, {j})")
    chi = np.asarray(chi, dtype=float)
    if chi.shape != (grid.n_nodes,):
        raise InvalidInputError(
            f"expected a full nodal vector of length {grid.n_nodes}, got {chi.shape}"
        )
    chis = np.zeros((grid.n_nodes, d))
    chis[:, j] = chi
    return float(filtered_flux_tensor(grid, field, filt, chis, nq)[i, j])


def integrate_coefficient(grid: Grid, field: TensorField, nq: int = 2) -> np.ndarray:
    """Plain entrywise integral int_box a_ij dy (no filter, no volume scaling)."""
    tab = _tables(grid, nq)
    out = np.zeros((grid.dim, grid.dim))
    for lo in range(0, grid.n_cells, _CHUNK):
        hi = min(lo + _CHUNK, grid.n_cells)
        pts = tab.origins[lo:hi, None, :] + tab.ref_pts[None, :, :] * grid.h
        a = np.asarray(field(pts), dtype=float)
        out += np.einsum("p,cpij->ij", tab.weights, a)
    return 0.5 * (out + out.T)
