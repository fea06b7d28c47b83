"""Finite element families, quadrature, and function spaces on triangles.

Scalar families supported: continuous Lagrange ``P1``/``P2``/``P3``,
piecewise-constant ``P0``, and the nonconforming edge-midpoint family
``CR``.  Velocity spaces are built as two stacked copies of a scalar
family (``multiplicity=2``); coefficients are stored blocked, all first
components then all second components.

Reference element: the unit right triangle with vertices ``(0,0)``,
``(1,0)``, ``(0,1)``.  Barycentric coordinates are ordered so that
``lambda_i = 1`` at vertex ``i``; local edge ``i`` is the edge opposite
local vertex ``i``.  Edge DOFs of ``P3`` are globally ordered along each
edge starting from its lower-numbered node, so that the two triangles
sharing an edge agree on the DOF order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from .mesh import SIDE_NAMES, edge_table

FAMILIES = ("P0", "P1", "P2", "P3", "CR")

# Gradient of barycentric coordinates with respect to the reference
# coordinates (xi, eta), where lambda = (1 - xi - eta, xi, eta).
_DLAMBDA = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])

# Per-family DOF layout: (per_vertex, per_edge, per_cell).
_LAYOUT = {
    "P0": (0, 0, 1),
    "P1": (1, 0, 0),
    "P2": (1, 1, 0),
    "P3": (1, 2, 1),
    "CR": (0, 1, 0),
}


def _local_dofs(family):
    """Local DOF table: list of (key, barycentric point).

    ``key`` is ``("vertex", i)``, ``("edge", e, end)`` with ``end`` the
    local endpoint the node is closest to (``0``/``1`` for the first and
    second endpoint of local edge ``e``; midpoint nodes use ``end=0``
    alone), or ``("cell", j)``.
    """
    if family == "P0":
        return [(("cell", 0), (1 / 3, 1 / 3, 1 / 3))]
    if family == "P1":
        return [(("vertex", i), tuple(np.eye(3)[i])) for i in range(3)]
    if family in ("P2", "CR"):
        dofs = []
        if family == "P2":
            dofs += [(("vertex", i), tuple(np.eye(3)[i])) for i in range(3)]
        for e in range(3):
            lam = np.full(3, 0.5)
            lam[e] = 0.0
            dofs.append((("edge", e, 0), tuple(lam)))
        return dofs
    if family == "P3":
        dofs = [(("vertex", i), tuple(np.eye(3)[i])) for i in range(3)]
        for e in range(3):
            j, k = (e + 1) % 3, (e + 2) % 3
            for end, (tj, tk) in enumerate(((2 / 3, 1 / 3), (1 / 3, 2 / 3))):
                lam = np.zeros(3)
                lam[j], lam[k] = tj, tk
                dofs.append((("edge", e, end), tuple(lam)))
        dofs.append((("cell", 0), (1 / 3, 1 / 3, 1 / 3)))
        return dofs
    raise ValueError(f"unknown family {family!r}")


def eval_basis(family, points):
    """Evaluate a family's basis at barycentric points.

    Parameters
    ----------
    family : str
        One of ``FAMILIES``.
    points : ndarray, shape (npts, 3)
        Barycentric coordinates.

    Returns
    -------
    values : ndarray, shape (npts, nloc)
    grads : ndarray, shape (npts, nloc, 2)
        Gradients with respect to the reference coordinates (xi, eta).
    """
    lam = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if lam.shape[1] != 3:
        raise ValueError("barycentric points must have shape (npts, 3)")
    npts = lam.shape[0]
    l0, l1, l2 = lam[:, 0], lam[:, 1], lam[:, 2]

    if family == "P0":
        values = np.ones((npts, 1))
        dlam = np.zeros((npts, 1, 3))
    elif family == "P1":
        values = lam.copy()
        dlam = np.tile(np.eye(3), (npts, 1, 1))
    elif family == "CR":
        values = 1.0 - 2.0 * lam
        dlam = np.tile(-2.0 * np.eye(3), (npts, 1, 1))
    elif family == "P2":
        values = np.empty((npts, 6))
        dlam = np.zeros((npts, 6, 3))
        for i in range(3):
            li = lam[:, i]
            values[:, i] = li * (2.0 * li - 1.0)
            dlam[:, i, i] = 4.0 * li - 1.0
        for e in range(3):
            j, k = (e + 1) % 3, (e + 2) % 3
            values[:, 3 + e] = 4.0 * lam[:, j] * lam[:, k]
            dlam[:, 3 + e, j] = 4.0 * lam[:, k]
            dlam[:, 3 + e, k] = 4.0 * lam[:, j]
    elif family == "P3":
        values = np.empty((npts, 10))
        dlam = np.zeros((npts, 10, 3))
        for i in range(3):
            li = lam[:, i]
            values[:, i] = 0.5 * li * (3.0 * li - 1.0) * (3.0 * li - 2.0)
            dlam[:, i, i] = 0.5 * (27.0 * li * li - 18.0 * li + 2.0)
        for e in range(3):
            j, k = (e + 1) % 3, (e + 2) % 3
            lj, lk = lam[:, j], lam[:, k]
            col = 3 + 2 * e
            values[:, col] = 4.5 * lj * lk * (3.0 * lj - 1.0)
            dlam[:, col, j] = 4.5 * lk * (6.0 * lj - 1.0)
            dlam[:, col, k] = 4.5 * lj * (3.0 * lj - 1.0)
            values[:, col + 1] = 4.5 * lj * lk * (3.0 * lk - 1.0)
            dlam[:, col + 1, j] = 4.5 * lk * (3.0 * lk - 1.0)
            dlam[:, col + 1, k] = 4.5 * lj * (6.0 * lk - 1.0)
        values[:, 9] = 27.0 * l0 * l1 * l2
        dlam[:, 9, 0] = 27.0 * l1 * l2
        dlam[:, 9, 1] = 27.0 * l0 * l2
        dlam[:, 9, 2] = 27.0 * l0 * l1
    else:
        raise ValueError(f"unknown family {family!r}")

    grads = dlam @ _DLAMBDA
    return values, grads


def family_degree(family):
    """Polynomial degree of a family (P0 -> 0, CR -> 1)."""
    return {"P0": 0, "P1": 1, "P2": 2, "P3": 3, "CR": 1}[family]


def quadrature(degree):
    """Positive-weight quadrature rule on the reference triangle.

    Degrees 1 and 2 use the classical one- and three-point rules; higher
    degrees use a Gauss-Jacobi x Gauss-Legendre product rule on the
    collapsed square, which has strictly positive weights for any degree.

    Parameters
    ----------
    degree : int
        Polynomial degree to integrate exactly, ``>= 1``.

    Returns
    -------
    points : ndarray, shape (nq, 3)
        Barycentric coordinates.
    weights : ndarray, shape (nq,)
        Weights summing to the reference area ``1/2``.
    """
    if not isinstance(degree, (int, np.integer)) or degree < 1:
        raise ValueError(f"quadrature degree must be a positive integer, got {degree}")
    if degree == 1:
        return np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([0.5])
    if degree == 2:
        points = np.array([
            [2 / 3, 1 / 6, 1 / 6],
            [1 / 6, 2 / 3, 1 / 6],
            [1 / 6, 1 / 6, 2 / 3],
        ])
        return points, np.full(3, 1 / 6)

    n = (degree + 2) // 2  # Gauss rules with n points are exact to 2n-1
    # xi-direction: Gauss-Jacobi for weight (1 - xi) on [0, 1].
    tj, wj = roots_jacobi(n, 1, 0)
    u = 0.5 * (tj + 1.0)
    wu = 0.25 * wj          # absorbs the (1 - xi) factor of the Jacobian
    # eta-direction: Gauss-Legendre on [0, 1].
    tl, wl = roots_legendre(n)
    v = 0.5 * (tl + 1.0)
    wv = 0.5 * wl
    xi = np.repeat(u, n)
    eta = np.tile(v, n) * (1.0 - xi)
    weights = np.repeat(wu, n) * np.tile(wv, n)
    points = np.column_stack([1.0 - xi - eta, xi, eta])
    return points, weights


@dataclass(frozen=True)
class FunctionSpace:
    """Finite element space on a :class:`~penfem.mesh.TriangleMesh`.

    Attributes
    ----------
    mesh : TriangleMesh
    family : str
    multiplicity : int
        1 for scalar spaces, 2 for velocity spaces.
    n_scalar : int
        DOFs of one component.
    cell_dofs : ndarray, shape (M, nloc), int64
        Global scalar DOF of each local DOF, orientation-resolved.
    dof_points : ndarray, shape (n_scalar, 2)
        Nodal point of each scalar DOF.
    edges, triangle_edges : ndarray
        Edge table of the mesh (shared by both components).
    side_dofs : dict
        Side name -> sorted scalar DOFs whose nodal support lies on that
        side of the boundary (corners appear in both adjacent sides).
    jacobians, inv_jac_t, det_jac : ndarray
        Affine map data per triangle: Jacobian (M,2,2), inverse transpose
        (M,2,2), determinant (M,) (twice the element area).
    """

    mesh: object
    family: str
    multiplicity: int
    n_scalar: int
    cell_dofs: np.ndarray
    dof_points: np.ndarray
    edges: np.ndarray
    triangle_edges: np.ndarray
    side_dofs: dict
    jacobians: np.ndarray
    inv_jac_t: np.ndarray
    det_jac: np.ndarray
    local_dof_count: int = field(init=False, default=0)

    def __post_init__(self):
        for arr in (self.cell_dofs, self.dof_points, self.edges,
                    self.triangle_edges, self.jacobians, self.inv_jac_t,
                    self.det_jac):
            arr.setflags(write=False)
        object.__setattr__(self, "local_dof_count", self.cell_dofs.shape[1])

    @property
    def ndof(self):
        return self.multiplicity * self.n_scalar

    @property
    def degree(self):
        return family_degree(self.family)

    def component_dofs(self, scalar_dofs, component):
        """Global DOF indices of ``scalar_dofs`` in one vector component."""
        return np.asarray(scalar_dofs) + component * self.n_scalar

    def boundary_scalar_dofs(self, sides=None):
        """Sorted scalar DOFs on the given sides (all four by default)."""
        names = SIDE_NAMES if sides is None else sides
        parts = [self.side_dofs[name] for name in names]
        return np.unique(np.concatenate(parts))


def build_space(mesh, family, multiplicity=1):
    """Construct a :class:`FunctionSpace`.

    Parameters
    ----------
    mesh : TriangleMesh
    family : str
        One of ``FAMILIES``.
    multiplicity : int
        Number of stacked components (1 or 2).
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; options are {FAMILIES}")
    if multiplicity not in (1, 2):
        raise ValueError(f"multiplicity must be 1 or 2, got {multiplicity}")

    edges, triangle_edges, edge_counts = edge_table(mesh)
    n_vert = mesh.num_nodes
    n_edge = edges.shape[0]
    n_cell = mesh.num_triangles
    per_vertex, per_edge, per_cell = _LAYOUT[family]
    vert_block = per_vertex * n_vert
    edge_block = per_edge * n_edge
    n_scalar = vert_block + edge_block + per_cell * n_cell

    tri = mesh.triangles
    local = _local_dofs(family)
    nloc = len(local)
    cell_dofs = np.empty((n_cell, nloc), dtype=np.int64)
    dof_points = np.empty((n_scalar, 2))

    if per_vertex:
        dof_points[:vert_block] = mesh.nodes
    for col, (key, lam) in enumerate(local):
        if key[0] == "vertex":
            cell_dofs[:, col] = tri[:, key[1]]
        elif key[0] == "edge":
            e, end = key[1], key[2]
            j, k = (e + 1) % 3, (e + 2) % 3
            gj, gk = tri[:, j], tri[:, k]
            eid = triangle_edges[:, e]
            if per_edge == 1:
                slot = np.zeros(n_cell, dtype=np.int64)
            else:
                # Slot 0 sits closest to the lower-numbered edge node.
                slot = np.where(gj < gk, end, 1 - end)
            cell_dofs[:, col] = vert_block + eid * per_edge + slot
        else:
            cell_dofs[:, col] = vert_block + edge_block + np.arange(n_cell)

    if per_edge:
        lo = mesh.nodes[edges[:, 0]]
        hi = mesh.nodes[edges[:, 1]]
        if per_edge == 1:
            dof_points[vert_block:vert_block + edge_block] = 0.5 * (lo + hi)
        else:
            pts = np.empty((n_edge, 2, 2))
            pts[:, 0] = lo + (hi - lo) / 3.0
            pts[:, 1] = lo + 2.0 * (hi - lo) / 3.0
            dof_points[vert_block:vert_block + edge_block] = pts.reshape(-1, 2)
    if per_cell:
        centroids = mesh.nodes[tri].mean(axis=1)
        dof_points[vert_block + edge_block:] = centroids

    # Boundary classification by side.  A boundary edge's interior DOFs
    # belong to its side; vertex DOFs belong to every side containing them.
    side_dofs = {name: [] for name in SIDE_NAMES}
    edge_lookup = {}
    for idx, (a, b) in enumerate(mesh.boundary_edges):
        key = (min(a, b), max(a, b))
        edge_lookup[key] = mesh.boundary_sides[idx]
    sorted_edges = [tuple(e) for e in edges]
    for eid, key in enumerate(sorted_edges):
        side = edge_lookup.get(key)
        if side is None:
            continue
        name = SIDE_NAMES[side]
        if per_vertex:
            side_dofs[name].extend(key)
        if per_edge:
            base = vert_block + eid * per_edge
            side_dofs[name].extend(range(base, base + per_edge))
    side_dofs = {name: np.unique(np.array(v, dtype=np.int64))
                 for name, v in side_dofs.items()}

    verts = mesh.nodes[tri]
    jac = np.stack([verts[:, 1] - verts[:, 0], verts[:, 2] - verts[:, 0]],
                   axis=2)
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    inv = np.empty_like(jac)
    inv[:, 0, 0] = jac[:, 1, 1]
    inv[:, 0, 1] = -jac[:, 1, 0]
    inv[:, 1, 0] = -jac[:, 0, 1]
    inv[:, 1, 1] = jac[:, 0, 0]
    inv_jac_t = inv / det[:, None, None]

    return FunctionSpace(
        mesh=mesh,
        family=family,
        multiplicity=multiplicity,
        n_scalar=n_scalar,
        cell_dofs=cell_dofs,
        dof_points=dof_points,
        edges=edges,
        triangle_edges=triangle_edges,
        side_dofs=side_dofs,
        jacobians=jac,
        inv_jac_t=inv_jac_t,
        det_jac=det,
    )


def interpolate(space, fn):
    """Nodal interpolation of a function into a space.

    Parameters
    ----------
    space : FunctionSpace
    fn : callable
        ``fn(x, y)`` with 1-D coordinate arrays, returning ``(npts,)``
        values for scalar spaces or ``(2, npts)`` for vector spaces.

    Returns
    -------
    ndarray, shape (space.ndof,)
        Coefficients, blocked by component for vector spaces.
    """
    x, y = space.dof_points[:, 0], space.dof_points[:, 1]
    vals = np.asarray(fn(x, y), dtype=np.float64)
    if space.multiplicity == 1:
        if vals.shape != (space.n_scalar,):
            raise ValueError("scalar interpolant has wrong shape")
        return vals
    if vals.shape != (2, space.n_scalar):
        raise ValueError("vector interpolant must return shape (2, npts)")
    return vals.reshape(-1)


def locate_points(mesh, points):
    """Find the triangle containing each point of the structured mesh.

    Returns
    -------
    cells : ndarray, shape (npts,), int64
    bary : ndarray, shape (npts, 3)
        Barycentric coordinates inside the containing triangle.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n = 2 ** mesh.level
    scaled = pts * n
    cell_xy = np.clip(np.floor(scaled).astype(np.int64), 0, n - 1)
    frac = scaled - cell_xy
    fx, fy = frac[:, 0], frac[:, 1]
    lower = fy <= fx
    cells = 2 * (cell_xy[:, 1] * n + cell_xy[:, 0]) + (~lower).astype(np.int64)
    bary = np.empty((pts.shape[0], 3))
    # Lower triangle: vertices (0,0), (1,0), (1,1) of the unit square.
    bary[lower, 0] = 1.0 - fx[lower]
    bary[lower, 1] = fx[lower] - fy[lower]
    bary[lower, 2] = fy[lower]
    up = ~lower
    # Upper triangle: vertices (0,0), (1,1), (0,1).
    bary[up, 0] = 1.0 - fy[up]
    bary[up, 1] = fx[up]
    bary[up, 2] = fy[up] - fx[up]
    return cells, bary


def evaluate(space, coeffs, points):
    """Evaluate a finite element function at arbitrary points.

    Returns an array of shape ``(npts,)`` for scalar spaces or
    ``(npts, 2)`` for vector spaces.
    """
    coeffs = np.asarray(coeffs)
    if coeffs.shape != (space.ndof,):
        raise ValueError(f"expected {space.ndof} coefficients, got {coeffs.shape}")
    cells, bary = locate_points(space.mesh, points)
    values, _ = eval_basis(space.family, bary)   # (npts, nloc)
    dofs = space.cell_dofs[cells]                # (npts, nloc)
    if space.multiplicity == 1:
        return np.einsum("pi,pi->p", values, coeffs[dofs])
    out = np.empty((len(cells), 2))
    for comp in range(2):
        out[:, comp] = np.einsum("pi,pi->p", values,
                                 coeffs[dofs + comp * space.n_scalar])
    return out
