"""Sparse operator assembly on triangulated function spaces.

All element loops are vectorized over cells; scatter into global CSR
matrices goes through COO triplets, so repeated assembly of the same form
is deterministic and bit-identical.  Vector-valued spaces use blocked
coefficient layout (all first components, then all second components);
mass, stiffness and convection act componentwise and are therefore
block-diagonal, while the divergence and grad-div operators couple the
blocks.

The convection operator is assembled in skew form,
``N(w) = (C(w) - C(w)^T) / 2`` with ``C(w)[i, j] = ((w . grad) phi_j, phi_i)``,
which makes ``u^T N(w) u = 0`` hold to rounding for every convecting
field ``w`` and is what keeps the implicit time stepper energy-stable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fespace import eval_basis, quadrature


def operator_degree(space, kind):
    """Default quadrature degree for each operator family.

    ``mass``/``stiffness``/``divergence``/``graddiv`` integrate products of
    two basis functions; ``convection`` carries an extra coefficient
    factor; ``load``/``error`` oversample to keep data terms from
    polluting convergence tables.
    """
    d = space.degree
    if kind in ("mass", "stiffness", "divergence", "graddiv"):
        return max(1, 2 * d)
    if kind == "convection":
        return max(1, 3 * d - 1)
    if kind in ("load", "error"):
        return 2 * d + 4
    raise ValueError(f"unknown operator kind {kind!r}")


@dataclass(frozen=True)
class ElementContext:
    """Per-cell quadrature data shared by the assembly routines.

    Attributes
    ----------
    weights : ndarray, shape (nq,)
    values : ndarray, shape (nq, nloc)
        Basis values at the quadrature points.
    grads : ndarray, shape (C, nq, nloc, 2)
        Physical basis gradients.
    det : ndarray, shape (C,)
        Jacobian determinants (twice the cell areas).
    points : ndarray, shape (C, nq, 2)
        Physical coordinates of the quadrature points.
    """

    weights: np.ndarray
    values: np.ndarray
    grads: np.ndarray
    det: np.ndarray
    points: np.ndarray


def element_context(space, degree):
    """Evaluate basis data of ``space`` at a quadrature rule of ``degree``."""
    qp, qw = quadrature(degree)
    vals, ref_grads = eval_basis(space.family, qp)
    grads = np.einsum("cab,qnb->cqna", space.inv_jac_t, ref_grads)
    verts = space.mesh.nodes[space.mesh.triangles]      # (C, 3, 2)
    points = np.einsum("qv,cvx->cqx", qp, verts)
    return ElementContext(weights=qw, values=vals, grads=grads,
                          det=space.det_jac, points=points)


def _scatter(rows_map, cols_map, local, shape):
    """Accumulate (C, ni, nj) local blocks into a global CSR matrix."""
    ni, nj = local.shape[1], local.shape[2]
    rows = np.repeat(rows_map, nj, axis=1).ravel()
    cols = np.tile(cols_map, (1, ni)).ravel()
    mat = sp.coo_matrix((local.ravel(), (rows, cols)), shape=shape)
    mat = mat.tocsr()
    mat.sort_indices()
    return mat


def _blocked(space, scalar_matrix):
    """Expand a scalar operator to the blocked vector layout of a space."""
    if space.multiplicity == 1:
        return scalar_matrix
    out = sp.block_diag([scalar_matrix] * space.multiplicity, format="csr")
    out.sort_indices()
    return out


def assemble_mass(space, degree=None):
    """Mass matrix ``(phi_j, phi_i)``; block-diagonal for vector spaces."""
    degree = operator_degree(space, "mass") if degree is None else degree
    ctx = element_context(space, degree)
    local = np.einsum("q,qi,qj,c->cij", ctx.weights, ctx.values, ctx.values,
                      ctx.det)
    n = space.n_scalar
    scalar = _scatter(space.cell_dofs, space.cell_dofs, local, (n, n))
    return _blocked(space, scalar)


def assemble_stiffness(space, degree=None):
    """Stiffness matrix ``(grad phi_j, grad phi_i)``, elementwise gradients."""
    degree = operator_degree(space, "stiffness") if degree is None else degree
    ctx = element_context(space, degree)
    local = np.einsum("q,cqia,cqja,c->cij", ctx.weights, ctx.grads, ctx.grads,
                      ctx.det)
    n = space.n_scalar
    scalar = _scatter(space.cell_dofs, space.cell_dofs, local, (n, n))
    return _blocked(space, scalar)


def assemble_grad_div(space, degree=None):
    """Grad-div matrix ``(div phi_j, div phi_i)`` on a vector space."""
    if space.multiplicity != 2:
        raise ValueError("grad-div requires a two-component space")
    degree = operator_degree(space, "graddiv") if degree is None else degree
    ctx = element_context(space, degree)
    n = space.n_scalar
    blocks = []
    for a in range(2):
        row = []
        for b in range(2):
            local = np.einsum("q,cqi,cqj,c->cij", ctx.weights,
                              ctx.grads[..., a], ctx.grads[..., b], ctx.det)
            row.append(_scatter(space.cell_dofs, space.cell_dofs,
                                local, (n, n)))
        blocks.append(row)
    out = sp.bmat(blocks, format="csr")
    out.sort_indices()
    return out


def assemble_divergence(vspace, pspace, degree=None):
    """Pressure-velocity coupling ``B[q, v] = (psi_q, div phi_v)``.

    Shape is ``(pressure dofs, velocity dofs)`` with the velocity columns
    in blocked component order.
    """
    if vspace.multiplicity != 2 or pspace.multiplicity != 1:
        raise ValueError("divergence couples a vector space to a scalar space")
    degree = operator_degree(vspace, "divergence") if degree is None else degree
    ctx_v = element_context(vspace, degree)
    qp, _ = quadrature(degree)
    pvals, _ = eval_basis(pspace.family, qp)
    np_, nv = pspace.n_scalar, vspace.ndof
    cols = []
    for a in range(2):
        local = np.einsum("q,qi,cqj,c->cij", ctx_v.weights, pvals,
                          ctx_v.grads[..., a], ctx_v.det)
        cols.append(_scatter(pspace.cell_dofs, vspace.cell_dofs, local,
                             (np_, vspace.n_scalar)))
    out = sp.hstack(cols, format="csr")
    out.sort_indices()
    return out


def convection_local(ctx, cell_dofs, n_scalar, w):
    """Skew-form convection blocks per cell.

    Returns ``(C, nloc, nloc)`` local matrices of the scalar operator
    ``N(w)``; the global operator applies the same block to each velocity
    component.
    """
    wc = np.stack([w[cell_dofs], w[cell_dofs + n_scalar]], axis=2)  # (C,nloc,2)
    w_at_q = np.einsum("qi,cia->cqa", ctx.values, wc)
    advect = np.einsum("cqa,cqja->cqj", w_at_q, ctx.grads)
    c_local = np.einsum("q,qi,cqj,c->cij", ctx.weights, ctx.values, advect,
                        ctx.det)
    return 0.5 * (c_local - np.transpose(c_local, (0, 2, 1)))


def assemble_convection(vspace, w, degree=None):
    """Skew-symmetrized convection operator ``N(w)`` on a vector space."""
    if vspace.multiplicity != 2:
        raise ValueError("convection requires a two-component space")
    degree = operator_degree(vspace, "convection") if degree is None else degree
    ctx = element_context(vspace, degree)
    local = convection_local(ctx, vspace.cell_dofs, vspace.n_scalar,
                             np.asarray(w, dtype=np.float64))
    n = vspace.n_scalar
    scalar = _scatter(vspace.cell_dofs, vspace.cell_dofs, local, (n, n))
    return _blocked(vspace, scalar)


class LoadAssembler:
    """Repeated right-hand-side assembly against a fixed space.

    Precomputes quadrature geometry so that per-step forcing assembly in
    the time loop reduces to one function evaluation and one ``einsum``.
    """

    def __init__(self, space, degree=None):
        self.space = space
        self.degree = operator_degree(space, "load") if degree is None else degree
        ctx = element_context(space, self.degree)
        self._x = ctx.points[..., 0].ravel()
        self._y = ctx.points[..., 1].ravel()
        self._shape = ctx.points.shape[:2]
        # w_q * phi_i(q) * det_c, ready to contract against f values.
        self._wvals = np.einsum("q,qi,c->cqi", ctx.weights, ctx.values,
                                ctx.det)
        self._dofs = space.cell_dofs

    def assemble(self, fn):
        """Assemble ``(f, phi_i)`` for ``fn(x, y)`` returning ``(2, npts)``."""
        space = self.space
        fvals = np.asarray(fn(self._x, self._y), dtype=np.float64)
        out = np.zeros(space.ndof)
        if space.multiplicity == 1:
            cellwise = np.einsum("cq,cqi->ci",
                                 fvals.reshape(self._shape), self._wvals)
            np.add.at(out, self._dofs, cellwise)
            return out
        for a in range(2):
            cellwise = np.einsum("cq,cqi->ci",
                                 fvals[a].reshape(self._shape), self._wvals)
            np.add.at(out, self._dofs + a * space.n_scalar, cellwise)
        return out


def assemble_load(space, fn, degree=None):
    """One-shot load vector assembly; see :class:`LoadAssembler`."""
    return LoadAssembler(space, degree).assemble(fn)


def apply_dirichlet(A, b, dofs, values):
    """Eliminate Dirichlet constraints from a sparse system.

    Constrained rows and columns are zeroed symmetrically, the couplings
    are moved to the right-hand side, and constrained rows are replaced by
    identity equations ``x[dof] = value``.

    Returns
    -------
    (A2, b2) : csr_matrix, ndarray
        New objects; the inputs are not modified.
    """
    dofs = np.asarray(dofs, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    n = A.shape[0]
    x_bc = np.zeros(n)
    x_bc[dofs] = values
    b2 = np.asarray(b, dtype=np.float64) - A @ x_bc
    b2[dofs] = values
    keep = np.ones(n)
    keep[dofs] = 0.0
    mask = sp.diags(keep)
    A2 = (mask @ A @ mask + sp.diags(1.0 - keep)).tocsr()
    A2.sort_indices()
    return A2, b2


def write_coo(A, path):
    """Export a sparse matrix as text: header then one (row, col, value) per line."""
    coo = sp.coo_matrix(A)
    order = np.lexsort((coo.col, coo.row))
    lines = [f"{A.shape[0]} {A.shape[1]} {coo.nnz}"]
    for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
        lines.append(f"{r} {c} {v:.17g}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
