"""Linearized penalty-flow systems and the Picard iteration.

Each implicit step of the flow solver needs the solution of

    [ sigma*M + nu*K + N(w)   -B^T ] [U]   [b_u]
    [        nu*B            eps*M_Q] [P] = [ 0 ]

where ``M``/``K`` are the velocity mass/stiffness matrices, ``B`` the
pressure-velocity divergence coupling, ``M_Q`` the pressure mass matrix,
``N(w)`` the skew convection operator and ``sigma`` the time-derivative
coefficient (``1/dt``; zero gives the steady Stokes-penalty problem).
The second block row enforces the penalty relation
``nu*div(U) + eps*P = 0`` weakly, so the pressure is always recoverable
from the velocity.

Two equivalent solution paths are provided:

* ``coupled`` solves the full block system and works for every velocity
  pressure pairing;
* ``schur`` eliminates the pressure through the diagonal pressure mass
  matrix (piecewise-constant pressure only), solving
  ``(sigma*M + nu*K + (nu/eps)*D + N(w)) U = b_u`` with the grad-div
  matrix ``D`` and recovering ``P = -(nu/eps) * M_Q^{-1} B U``.

Only the convection block changes between Picard iterations, so each
system freezes its sparsity pattern once and rebuilds the numeric values
in place; every solve still performs a fresh direct factorization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .assembly import (assemble_divergence, assemble_grad_div, assemble_mass,
                       assemble_stiffness, convection_local, element_context,
                       operator_degree)

#: SuperLU configurations tried in order.  The operators here are
#: structurally symmetric with strong diagonals, so a symmetric fill
#: ordering plus diagonal pivoting keeps the fill (and factor time) an
#: order of magnitude below the default partial pivoting, which destroys
#: the symmetric ordering.  The conservative default is kept as a
#: fallback; every solve is accepted only after the residual check.
_SPLU_OPTIONS = (
    {"permc_spec": "MMD_AT_PLUS_A", "diag_pivot_thresh": 0.0},
    {"permc_spec": "COLAMD"},
)

#: Relative residual every linear solve must meet.
LINEAR_RESIDUAL_TOL = 1e-10


class ParameterError(ValueError):
    """Invalid physical or numerical parameter."""


class LinearSolveError(RuntimeError):
    """Direct solve failed or left too large a residual."""


class PicardDivergenceError(RuntimeError):
    """The nonlinear fixed-point iteration failed to converge."""

    def __init__(self, message, increments=None):
        super().__init__(message)
        self.increments = list(increments or [])


@dataclass(frozen=True)
class PicardConfig:
    """Controls for the lagged-convection fixed-point iteration.

    ``tol`` bounds the relative increment between velocity iterates, so
    the nonlinear error stays far below discretization error; the guard
    aborts on non-finite or persistently growing increments.
    """

    tol: float = 1e-10
    max_iter: int = 50
    norm_floor: float = 1e-30

    def __post_init__(self):
        if not (0.0 < self.tol < 1.0):
            raise ParameterError(f"picard tol must be in (0, 1), got {self.tol}")
        if self.max_iter < 1:
            raise ParameterError("picard max_iter must be positive")


@dataclass
class PicardStats:
    """Diagnostics of one nonlinear solve."""

    iterations: int = 0
    increments: list = field(default_factory=list)
    converged: bool = False


def linear_solve(A, b):
    """Direct sparse solve with a residual guarantee.

    A fresh LU factorization is computed on every call (the operator
    changes between calls as the convecting field is updated).

    Raises
    ------
    LinearSolveError
        If the factorization fails or the relative residual exceeds
        ``LINEAR_RESIDUAL_TOL``.
    """
    A_csc = A if sp.issparse(A) and A.format == "csc" else sp.csc_matrix(A)
    b = np.asarray(b, dtype=np.float64)
    return _splu_solve(A_csc, A_csc, b)


def _splu_solve(A_csc, A_for_residual, b):
    """Factor and solve, falling back to conservative pivoting on failure.

    ``A_for_residual`` is any multiplication-ready view of the same matrix
    (the callers keep a CSR copy around); the solution is accepted only if
    the relative residual meets ``LINEAR_RESIDUAL_TOL``.  A few sweeps of
    iterative refinement against the same factorization recover the
    residual when the operator is badly scaled (tiny penalty parameters).
    """
    bnorm = np.linalg.norm(b)
    tol = LINEAR_RESIDUAL_TOL * max(bnorm, 1e-300)
    failure = "sparse LU failed"
    for options in _SPLU_OPTIONS:
        try:
            lu = splu(A_csc, **options)
            x = lu.solve(b)
        except RuntimeError as exc:  # singular factor
            failure = f"sparse LU failed: {exc}"
            continue
        if not np.all(np.isfinite(x)):
            failure = "direct solve produced non-finite values"
            continue
        resid = np.linalg.norm(b - A_for_residual @ x)
        if resid > tol:
            # Careful path: evaluate the residual in extended precision
            # (the double-precision evaluation is itself noisy at
            # u*|A|*|x|) and refine against the same factorization.
            A_wide = A_for_residual.astype(np.longdouble)
            b_wide = b.astype(np.longdouble)
            residual = b_wide - A_wide @ x.astype(np.longdouble)
            resid = float(np.linalg.norm(residual.astype(np.float64)))
            for _ in range(3):
                if resid <= tol:
                    break
                x_next = x + lu.solve(residual.astype(np.float64))
                if not np.all(np.isfinite(x_next)):
                    break
                residual_next = b_wide - A_wide @ x_next.astype(np.longdouble)
                resid_next = float(
                    np.linalg.norm(residual_next.astype(np.float64)))
                if resid_next >= resid:  # stalled at the precision floor
                    break
                x, residual, resid = x_next, residual_next, resid_next
        if resid <= tol:
            return x
        failure = (f"linear solve residual {resid:.3e} exceeds "
                   f"{LINEAR_RESIDUAL_TOL:.1e} * max(|b|, tiny) = {tol:.3e}")
    raise LinearSolveError(failure)


class _FrozenOperator:
    """A CSR operator with fixed sparsity and fast in-place rebuilds.

    Stores the constant part of the matrix, scatter positions for the
    convection blocks, Dirichlet elimination masks, and the permutation
    that re-expresses the CSR data in CSC order for the factorization.
    """

    def __init__(self, base, conv_entries, bc_dofs, bc_values):
        base = base.tocsr()
        base.sort_indices()
        self.shape = base.shape
        self.indptr = base.indptr
        self.indices = base.indices
        self.base_data = base.data.copy()
        self.nnz = base.nnz
        n = self.shape[0]

        keys = self.indices.astype(np.int64) + np.repeat(
            np.arange(n, dtype=np.int64) * self.shape[1],
            np.diff(self.indptr))
        self._conv_pos = []
        for rows, cols in conv_entries:
            want = rows.astype(np.int64) * self.shape[1] + cols.astype(np.int64)
            pos = np.searchsorted(keys, want)
            if not np.array_equal(keys[pos], want):
                raise AssertionError("convection entries missing from pattern")
            self._conv_pos.append(pos)

        self.bc_dofs = np.asarray(bc_dofs, dtype=np.int64)
        self.bc_values = np.asarray(bc_values, dtype=np.float64)
        row_of = np.repeat(np.arange(n), np.diff(self.indptr))
        in_bc = np.zeros(n, dtype=bool)
        in_bc[self.bc_dofs] = True
        self._row_pos = np.flatnonzero(in_bc[row_of])
        self._col_pos = np.flatnonzero(in_bc[self.indices])
        diag_pos = np.searchsorted(keys, self.bc_dofs * (self.shape[1] + 1))
        if len(diag_pos) and not np.array_equal(
                keys[diag_pos], self.bc_dofs * (self.shape[1] + 1)):
            raise AssertionError("a constrained DOF has no diagonal entry")
        self._diag_pos = diag_pos
        self._x_bc = np.zeros(n)
        self._x_bc[self.bc_dofs] = self.bc_values
        self._homogeneous = not np.any(self.bc_values)

        marker = sp.csr_matrix(
            (np.arange(self.nnz, dtype=np.int64), self.indices, self.indptr),
            shape=self.shape)
        csc = marker.tocsc()
        self._csc_perm = csc.data
        self._csc_indices = csc.indices
        self._csc_indptr = csc.indptr

    def build(self, conv_data, rhs):
        """Assemble the eliminated operator and right-hand side.

        Parameters
        ----------
        conv_data : list of ndarray or None
            Flat local convection values per scatter block.
        rhs : ndarray
            Right-hand side before elimination (not modified).

        Returns
        -------
        A_csc : csc_matrix
        A_csr : csr_matrix
            The same eliminated operator in both layouts.
        b : ndarray
            Eliminated right-hand side.
        """
        data = self.base_data.copy()
        if conv_data is not None:
            for pos, vals in zip(self._conv_pos, conv_data):
                data += np.bincount(pos, weights=vals, minlength=self.nnz)
        b = np.array(rhs, dtype=np.float64)
        if len(self.bc_dofs):
            if not self._homogeneous:
                A_cur = sp.csr_matrix((data, self.indices, self.indptr),
                                      shape=self.shape)
                b -= A_cur @ self._x_bc
            data[self._row_pos] = 0.0
            data[self._col_pos] = 0.0
            data[self._diag_pos] = 1.0
            b[self.bc_dofs] = self.bc_values
        A_csr = sp.csr_matrix((data, self.indices, self.indptr),
                              shape=self.shape)
        A_csc = sp.csc_matrix(
            (data[self._csc_perm], self._csc_indices, self._csc_indptr),
            shape=self.shape)
        return A_csc, A_csr, b


class PenalizedSystem:
    """Penalty-flow operator for one mesh, pairing, and parameter set.

    Parameters
    ----------
    vspace, pspace : FunctionSpace
        Velocity (multiplicity 2) and pressure (multiplicity 1) spaces on
        the same mesh.
    nu : float
        Kinematic viscosity, positive.
    eps : float
        Penalty parameter, strictly positive (the limit ``eps=0`` is the
        constrained problem and is rejected here).
    mass_coeff : float
        Coefficient of the velocity mass block (``1/dt`` inside a time
        stepper, ``0`` for the steady Stokes-penalty problem).
    bc_dofs, bc_values : array-like
        Constrained velocity DOFs (blocked global indices) and their
        values.
    path : str
        ``"coupled"`` or ``"schur"``.
    """

    def __init__(self, vspace, pspace, nu, eps, mass_coeff=0.0,
                 bc_dofs=None, bc_values=None, path="coupled"):
        if eps <= 0.0:
            raise ParameterError(
                f"penalty parameter must be positive, got eps={eps}; "
                "the constrained limit eps=0 is outside this solver's scope")
        if nu <= 0.0:
            raise ParameterError(f"viscosity must be positive, got nu={nu}")
        if mass_coeff < 0.0:
            raise ParameterError("mass_coeff must be nonnegative")
        if path not in ("coupled", "schur"):
            raise ParameterError(f"unknown solver path {path!r}")
        if path == "schur" and pspace.family != "P0":
            raise ParameterError(
                "the schur path requires a piecewise-constant pressure "
                "(diagonal pressure mass matrix)")
        if vspace.multiplicity != 2 or pspace.multiplicity != 1:
            raise ParameterError("need a vector velocity and scalar pressure space")

        self.vspace = vspace
        self.pspace = pspace
        self.nu = float(nu)
        self.eps = float(eps)
        self.mass_coeff = float(mass_coeff)
        self.path = path

        bc_dofs = np.asarray([] if bc_dofs is None else bc_dofs, dtype=np.int64)
        bc_values = np.asarray(
            np.zeros(len(bc_dofs)) if bc_values is None else bc_values,
            dtype=np.float64)
        if bc_values.shape != bc_dofs.shape:
            raise ParameterError("bc_dofs and bc_values must match in length")

        self.mass = assemble_mass(vspace)
        stiffness = assemble_stiffness(vspace)
        self.divergence = assemble_divergence(vspace, pspace)
        self.pressure_mass = assemble_mass(pspace)

        self._conv_ctx = element_context(
            vspace, operator_degree(vspace, "convection"))
        nv = vspace.ndof
        ns = vspace.n_scalar
        cd = vspace.cell_dofs
        nloc = cd.shape[1]
        rows_local = np.repeat(cd, nloc, axis=1).ravel()
        cols_local = np.tile(cd, (1, nloc)).ravel()
        conv_entries = [(rows_local + a * ns, cols_local + a * ns)
                        for a in range(2)]

        # The base operator is built from concatenated COO triplets: sparse
        # addition would prune exact zeros and lose pattern slots that the
        # convection update needs to stay allocated.
        parts = [(self.mass, self.mass_coeff, 0, 0),
                 (stiffness, self.nu, 0, 0)]
        if path == "coupled":
            bt = self.divergence.tocoo()
            parts.append((sp.coo_matrix(
                (bt.data, (bt.col, bt.row)), shape=(nv, self.ndof_p)),
                -1.0, 0, nv))
            parts.append((self.divergence, self.nu, nv, 0))
            parts.append((self.pressure_mass, self.eps, nv, nv))
            shape = (nv + self.ndof_p, nv + self.ndof_p)
        else:
            self.grad_div = assemble_grad_div(vspace)
            parts.append((self.grad_div, self.nu / self.eps, 0, 0))
            shape = (nv, nv)
            self._mq_diag = self.pressure_mass.diagonal()
        rows, cols, data = [], [], []
        for mat, scale, roff, coff in parts:
            coo = mat.tocoo()
            rows.append(coo.row.astype(np.int64) + roff)
            cols.append(coo.col.astype(np.int64) + coff)
            data.append(scale * coo.data)
        base = sp.coo_matrix(
            (np.concatenate(data),
             (np.concatenate(rows), np.concatenate(cols))), shape=shape)
        self._op = _FrozenOperator(base, conv_entries, bc_dofs, bc_values)

    @property
    def ndof_v(self):
        return self.vspace.ndof

    @property
    def ndof_p(self):
        return self.pspace.n_scalar

    def _conv_data(self, w):
        local = convection_local(self._conv_ctx, self.vspace.cell_dofs,
                                 self.vspace.n_scalar, w)
        flat = local.ravel()
        return [flat, flat]

    def solve_linearized(self, w, b_u):
        """Solve the block system for a given convecting field ``w``.

        Parameters
        ----------
        w : ndarray or None
            Velocity coefficients of the convecting field; ``None`` drops
            the convection block entirely (Stokes-penalty problem).
        b_u : ndarray
            Velocity right-hand side (momentum load), length ``ndof_v``.

        Returns
        -------
        (U, P) : ndarray, ndarray
        """
        conv = None if w is None else self._conv_data(np.asarray(w, float))
        if self.path == "coupled":
            rhs = np.concatenate([b_u, np.zeros(self.ndof_p)])
            A_csc, A_csr, b = self._op.build(conv, rhs)
            x = _factor_solve(A_csc, A_csr, b)
            return x[:self.ndof_v], x[self.ndof_v:]
        A_csc, A_csr, b = self._op.build(conv, b_u)
        try:
            U = _factor_solve(A_csc, A_csr, b)
        except LinearSolveError as exc:
            raise LinearSolveError(
                f"{exc} (the eliminated operator carries a 1/eps-scaled "
                f"block, eps={self.eps:.1e}; the coupled path avoids this "
                "scaling)") from exc
        P = -(self.nu / self.eps) * (self.divergence @ U) / self._mq_diag
        return U, P

    def set_bc_values(self, bc_values):
        """Replace the constrained-DOF values (time-dependent boundary data).

        The constrained DOF set itself is fixed at construction; only the
        values may change between solves.
        """
        values = np.asarray(bc_values, dtype=np.float64)
        if values.shape != self._op.bc_dofs.shape:
            raise ParameterError("bc_values length does not match bc_dofs")
        self._op.bc_values = values
        self._op._x_bc[self._op.bc_dofs] = values
        self._op._homogeneous = not np.any(values)

    def penalty_residual(self, U, P):
        """Euclidean norm of ``nu*B U + eps*M_Q P`` (zero at a solution)."""
        return np.linalg.norm(self.nu * (self.divergence @ U)
                              + self.eps * (self.pressure_mass @ P))


def _factor_solve(A_csc, A_csr, b):
    """Fresh LU factorization and solve with the contract residual check."""
    return _splu_solve(A_csc, A_csr, b)


def picard_step(system, w, b_u):
    """One lagged-convection step: solve with ``N(w)`` frozen."""
    return system.solve_linearized(w, b_u)


def nonlinear_solve(system, b_u, seed, config=None):
    """Fixed-point iteration for the fully implicit step.

    The convecting field is lagged: iterate ``s+1`` solves the system with
    ``N(U^s)``, seeded with ``U^0 = seed`` (the previous time-step
    solution).  Stops when the relative velocity increment drops below
    ``config.tol``.

    Returns
    -------
    (U, P, stats) : ndarray, ndarray, PicardStats

    Raises
    ------
    PicardDivergenceError
        On non-finite iterates, growing increments, or exhaustion of
        ``config.max_iter``.
    """
    config = config or PicardConfig()
    w = np.asarray(seed, dtype=np.float64)
    stats = PicardStats()
    for s in range(1, config.max_iter + 1):
        U, P = system.solve_linearized(w, b_u)
        stats.iterations = s
        if not (np.all(np.isfinite(U)) and np.all(np.isfinite(P))):
            raise PicardDivergenceError(
                f"non-finite iterate at picard iteration {s}",
                stats.increments)
        rel = (np.linalg.norm(U - w)
               / max(np.linalg.norm(U), config.norm_floor))
        stats.increments.append(rel)
        if rel < config.tol:
            stats.converged = True
            return U, P, stats
        if rel > 1e8:
            raise PicardDivergenceError(
                f"picard increment blew up ({rel:.3e}) at iteration {s}",
                stats.increments)
        if (s >= 3 and stats.increments[-1] > stats.increments[-2]
                > stats.increments[-3]
                and stats.increments[-1] > 10.0 * stats.increments[0]):
            raise PicardDivergenceError(
                f"picard increments growing at iteration {s}: "
                f"{stats.increments[-3:]}", stats.increments)
        w = U
    raise PicardDivergenceError(
        f"picard iteration did not reach tol={config.tol:.1e} in "
        f"{config.max_iter} iterations (last increment "
        f"{stats.increments[-1]:.3e})", stats.increments)
