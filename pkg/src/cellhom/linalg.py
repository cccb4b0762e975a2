"""Symmetric sparse operators, a monitored CG solver, and eigenpair extraction.

Storage is CSR (scipy) behind a thin wrapper that enforces what the rest of
the package relies on: exact structural symmetry and no stored zeros.  The
conjugate gradient solver is written out longhand because the callers need
guarantees scipy does not expose: the energy functional
phi(x) = 1/2 x.A x - b.x is tracked per iteration and asserted
non-increasing, iteration counts come back for diagnostics, and Jacobi
preconditioning plus an optional nullspace projection (for singular
periodic operators) are part of the contract.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidInputError, SolverFailure

__all__ = ["SparseSym", "EigPairs", "cg_solve", "smallest_eigpairs"]


@dataclass(frozen=True)
class SparseSym:
    """Symmetric sparse matrix in CSR form.

    Construct through :meth:`from_coo` (assembly path) or :meth:`from_csr`;
    both verify symmetry on the stored pattern and drop explicit zeros.
    """

    mat: sp.csr_matrix

    @classmethod
    def from_coo(cls, rows, cols, vals, n: int) -> "SparseSym":
        m = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
        return cls.from_csr(m)

    @classmethod
    def from_csr(cls, m: sp.csr_matrix) -> "SparseSym":
        m = sp.csr_matrix(m)
        m.sum_duplicates()
        m.eliminate_zeros()
        asym = abs(m - m.T).max() if m.nnz else 0.0
        if asym != 0.0:
            raise InvalidInputError(
                f"matrix is not exactly symmetric (max |A - A^T| = {asym:.3e})"
            )
        return cls(mat=m)

    @property
    def n(self) -> int:
        return self.mat.shape[0]

    @property
    def nnz(self) -> int:
        return self.mat.nnz

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.mat @ x

    def diagonal(self) -> np.ndarray:
        return self.mat.diagonal()

    def restrict(self, idx: np.ndarray) -> "SparseSym":
        """Principal submatrix on the index set ``idx`` (kept symmetric)."""
        sub = self.mat[idx][:, idx].tocsr()
        return SparseSym.from_csr(sub)

    def toarray(self) -> np.ndarray:
        return self.mat.toarray()


@dataclass
class EigPairs:
    """The ``count`` smallest eigenpairs of K v = lambda M v.

    ``vectors`` columns are M-orthonormal and sorted by ascending
    eigenvalue; ``residuals`` holds the dual-norm residual check
    ||K v - lambda M v||_{M^-1} / lambda recorded at extraction time.
    """

    count: int
    lambdas: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray


def cg_solve(
    A: SparseSym,
    b: np.ndarray,
    tol: float = 1e-10,
    maxit: int | None = None,
    precond: str = "jacobi",
    project: Callable[[np.ndarray], np.ndarray] | None = None,
    x0: np.ndarray | None = None,
) -> tuple[np.ndarray, int]:
    """Preconditioned conjugate gradients for SPD (or projected SPSD) systems.

    Parameters
    ----------
    A : SparseSym
        System matrix; must be SPD on the subspace CG explores.
    b : ndarray
        Right-hand side.  ``b = 0`` returns immediately with x = 0.
    tol : float
        Convergence when ||r||_2 <= tol * ||b||_2.
    maxit : int, optional
        Iteration cap; defaults to 20 * n.  Exceeding it raises
        SolverFailure carrying the final relative residual.
    precond : {"jacobi", "none"}
        Diagonal or no preconditioning.
    project : callable, optional
        Applied to the initial guess/rhs and each preconditioned residual;
        used to pin the mean-zero constraint of singular periodic systems.

    Returns
    -------
    (x, iterations)

    Notes
    -----
    The energy phi(x_k) = 1/2 x_k.A x_k - b.x_k decreases strictly in exact
    arithmetic; it is tracked incrementally here and a breach beyond a
    roundoff allowance aborts with SolverFailure, since that indicates a
    non-SPD operator or a broken preconditioner.
    """
    b = np.asarray(b, dtype=float)
    n = A.n
    if b.shape != (n,):
        raise InvalidInputError(f"rhs has shape {b.shape}, expected ({n},)")
    if precond not in ("jacobi", "none"):
        raise InvalidInputError(f"unknown preconditioner {precond!r}")
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), 0
    if maxit is None:
        maxit = 20 * n

    if precond == "jacobi":
        d = A.diagonal()
        if np.any(d <= 0):
            raise InvalidInputError("Jacobi preconditioner needs positive diagonal")
        dinv = 1.0 / d
        apply_m = lambda r: dinv * r
    else:
        apply_m = lambda r: r

    if project is not None:
        b = project(b)
        bnorm = np.linalg.norm(b)
        if bnorm == 0.0:
            return np.zeros(n), 0

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if project is not None:
        x = project(x)
    r = b - A.matvec(x) if x.any() else b.copy()
    z = apply_m(r)
    if project is not None:
        z = project(z)
    p = z.copy()
    rz = float(r @ z)
    phi = 0.5 * float(x @ A.matvec(x)) - float(b @ x) if x.any() else 0.0
    phi_scale = abs(phi) + bnorm**2 / max(A.diagonal().max(), 1e-300)
    resid = np.linalg.norm(r) / bnorm

    for it in range(1, maxit + 1):
        Ap = A.matvec(p)
        pAp = float(p @ Ap)
        if pAp <= 0.0 or rz <= 0.0:
            raise SolverFailure(
                "CG encountered a non-positive curvature/inner product; "
                "operator is not SPD on the search space",
                residual=resid,
            )
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        # phi(x + alpha p) = phi(x) - alpha r.p + alpha^2/2 p.Ap = phi - alpha rz / 2
        phi_new = phi - 0.5 * alpha * rz
        if phi_new > phi + 1e-13 * phi_scale:
            raise SolverFailure(
                "CG energy functional increased; operator/preconditioner "
                "is inconsistent",
                residual=resid,
            )
        phi = phi_new
        resid = np.linalg.norm(r) / bnorm
        if resid <= tol:
            return x, it
        z = apply_m(r)
        if project is not None:
            z = project(z)
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new

    raise SolverFailure(f"CG did not converge within {maxit} iterations", residual=resid)


def _m_orthonormalize(V: np.ndarray, M: SparseSym) -> np.ndarray:
    """Return a column basis of span(V) with V^T M V = I (Cholesky trick)."""
    G = V.T @ M.matvec(V)
    G = 0.5 * (G + G.T)
    C = scipy.linalg.cholesky(G, lower=True)
    return scipy.linalg.solve_triangular(C, V.T, lower=True).T


def smallest_eigpairs(
    K: SparseSym,
    M: SparseSym,
    N: int,
    tol: float = 0.0,
    seed: int = 42,
    maxiter: int | None = None,
) -> EigPairs:
    """Compute the ``N`` algebraically smallest eigenpairs of K v = lambda M v.

    Uses ARPACK in shift-invert mode about sigma = 0 with a seeded start
    vector (deterministic across runs), falling back to a dense solve when
    the problem is small or nearly full.  Vectors come back M-orthonormal
    and ascending in lambda; a residual verification in the M^-1 dual norm
    guards the result and raises SolverFailure on breach.
    """
    n = K.n
    if M.n != n:
        raise InvalidInputError(f"K is {n}x{n} but M is {M.n}x{M.n}")
    if not isinstance(N, (int, np.integer)) or isinstance(N, bool):
        raise InvalidInputError(f"mode count must be an integer, got {N!r}")
    if N < 1:
        raise InvalidInputError(f"mode count must be >= 1, got {N}")
    if N > n:
        raise InvalidInputError(f"requested {N} modes of a {n}-dof operator")

    dense_cutoff = 400
    if n <= dense_cutoff or N > n - 2:
        lam, V = scipy.linalg.eigh(K.toarray(), M.toarray())
        lam, V = lam[:N], V[:, :N]
    else:
        rng = np.random.default_rng(seed)
        v0 = rng.standard_normal(n)
        lam, V = spla.eigsh(
            K.mat,
            k=N,
            M=M.mat,
            sigma=0.0,
            which="LM",
            v0=v0,
            tol=tol,
            maxiter=maxiter,
        )
    order = np.argsort(lam)
    lam, V = np.ascontiguousarray(lam[order]), np.ascontiguousarray(V[:, order])
    if lam[0] <= 0.0:
        raise SolverFailure(
            f"operator is not positive definite (smallest eigenvalue {lam[0]:.3e})"
        )
    V = _m_orthonormalize(V, M)

    # Dual-norm residual check: || K v - lam M v ||_{M^-1} relative to lam.
    residuals = np.empty(N)
    for k in range(N):
        r = K.matvec(V[:, k]) - lam[k] * M.matvec(V[:, k])
        s, _ = cg_solve(M, r, tol=1e-12, precond="jacobi")
        residuals[k] = np.sqrt(max(float(r @ s), 0.0)) / lam[k]
    allowed = max(tol, 1e-7)
    if residuals.max() > allowed:
        raise SolverFailure(
            f"eigenpair residual {residuals.max():.3e} exceeds {allowed:.1e}"
        )
    ortho = V.T @ M.matvec(V) - np.eye(N)
    if np.abs(ortho).max() > 1e-8:
        raise SolverFailure(
            f"eigenvectors lost M-orthonormality ({np.abs(ortho).max():.3e})"
        )
    return EigPairs(count=N, lambdas=lam, vectors=V, residuals=residuals)
