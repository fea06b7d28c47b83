"""Structured triangulations of the unit square.

The mesh is the uniform three-line triangulation: a ``(2^level + 1)`` by
``(2^level + 1)`` grid of nodes, each grid square split into two triangles
by its lower-left to upper-right diagonal.  Nodes are numbered row-major by
grid index (x fastest), triangles are listed square by square (lower
triangle first), and all triangles are oriented counter-clockwise.

Meshes are immutable after construction: every array is stored with the
writeable flag cleared so downstream modules can cache derived data safely.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

#: Names of the four sides of the unit square, indexed by side code.
SIDE_NAMES = ("bottom", "right", "top", "left")

#: Largest supported refinement level (8193 x 8193 nodes).
MAX_LEVEL = 12


@dataclass(frozen=True)
class TriangleMesh:
    """Immutable triangulation of the unit square.

    Attributes
    ----------
    nodes : ndarray, shape (N, 2), float64
        Node coordinates, row-major by grid index.
    triangles : ndarray, shape (M, 3), int64
        Node indices of each triangle, counter-clockwise.
    boundary_edges : ndarray, shape (B, 2), int64
        Node index pairs of boundary edges, lower node index first.
    boundary_sides : ndarray, shape (B,), int64
        Side code of each boundary edge (index into ``SIDE_NAMES``).
    level : int
        Refinement level; the grid has ``2**level`` cells per side.
    spacing : float
        Grid spacing ``2**-level`` (the ``h`` used in convergence tables).
    max_diameter : float
        Largest element diameter, ``sqrt(2) * spacing``.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_sides: np.ndarray
    level: int
    spacing: float
    max_diameter: float

    def __post_init__(self):
        for arr in (self.nodes, self.triangles, self.boundary_edges,
                    self.boundary_sides):
            arr.setflags(write=False)

    @property
    def num_nodes(self):
        return self.nodes.shape[0]

    @property
    def num_triangles(self):
        return self.triangles.shape[0]

    def boundary_nodes(self):
        """Sorted indices of all nodes lying on the boundary."""
        return np.unique(self.boundary_edges)


def unit_square_mesh(level):
    """Build the uniform triangulation of ``[0,1]^2`` at a refinement level.

    Parameters
    ----------
    level : int
        Refinement level, ``1 <= level <= 12``.  The grid has
        ``n = 2**level`` squares per side, hence ``(n+1)**2`` nodes and
        ``2*n**2`` triangles.

    Returns
    -------
    TriangleMesh
    """
    if not isinstance(level, (int, np.integer)):
        raise TypeError(f"level must be an integer, got {type(level).__name__}")
    if not 1 <= level <= MAX_LEVEL:
        raise ValueError(f"level must be in [1, {MAX_LEVEL}], got {level}")

    n = 2 ** level
    coords_1d = np.arange(n + 1, dtype=np.float64) / n
    xg, yg = np.meshgrid(coords_1d, coords_1d, indexing="xy")
    nodes = np.column_stack([xg.ravel(), yg.ravel()])

    # Node index of grid point (ix, iy) is iy*(n+1) + ix.
    ix, iy = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    ix = ix.ravel()
    iy = iy.ravel()
    a = iy * (n + 1) + ix          # lower-left corner of each square
    b = a + 1                      # lower-right
    c = b + (n + 1)                # upper-right
    d = a + (n + 1)                # upper-left

    # Diagonal a-c: lower triangle (a, b, c) and upper triangle (a, c, d),
    # both counter-clockwise.
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = np.column_stack([a, b, c])
    triangles[1::2] = np.column_stack([a, c, d])

    j = np.arange(n)
    bottom = np.column_stack([j, j + 1])
    right = np.column_stack([(j + 1) * (n + 1) - 1, (j + 2) * (n + 1) - 1])
    top = np.column_stack([n * (n + 1) + j, n * (n + 1) + j + 1])
    left = np.column_stack([j * (n + 1), (j + 1) * (n + 1)])
    boundary_edges = np.vstack([bottom, right, top, left])
    boundary_sides = np.repeat(np.arange(4, dtype=np.int64), n)

    spacing = 1.0 / n
    return TriangleMesh(
        nodes=nodes,
        triangles=triangles,
        boundary_edges=boundary_edges,
        boundary_sides=boundary_sides,
        level=int(level),
        spacing=spacing,
        max_diameter=np.sqrt(2.0) * spacing,
    )


def edge_table(mesh):
    """Enumerate the unique edges of a mesh and map triangles onto them.

    Parameters
    ----------
    mesh : TriangleMesh

    Returns
    -------
    edges : ndarray, shape (E, 2), int64
        Unique edges, lower node index first, sorted lexicographically.
    triangle_edges : ndarray, shape (M, 3), int64
        Edge index of each local edge; local edge ``i`` is the edge
        opposite local vertex ``i``.
    edge_counts : ndarray, shape (E,), int64
        Number of triangles sharing each edge (2 interior, 1 boundary).
    """
    tri = mesh.triangles
    # Local edge i is opposite local vertex i.
    raw = np.concatenate([tri[:, [1, 2]], tri[:, [2, 0]], tri[:, [0, 1]]])
    raw = np.sort(raw, axis=1)
    edges, inverse, counts = np.unique(
        raw, axis=0, return_inverse=True, return_counts=True)
    triangle_edges = inverse.reshape(3, -1).T
    return edges, triangle_edges, counts


def write_mesh(mesh, path):
    """Dump a mesh in a plain-text format, one record per line."""
    lines = ["penfem-mesh 1",
             f"level {mesh.level}",
             f"nodes {mesh.num_nodes}",
             f"triangles {mesh.num_triangles}",
             f"boundary_edges {mesh.boundary_edges.shape[0]}"]
    for x, y in mesh.nodes:
        lines.append(f"{x:.17g} {y:.17g}")
    for t in mesh.triangles:
        lines.append(f"{t[0]} {t[1]} {t[2]}")
    for (a, b), side in zip(mesh.boundary_edges, mesh.boundary_sides):
        lines.append(f"{a} {b} {SIDE_NAMES[side]}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_mesh(path):
    """Read a mesh written by :func:`write_mesh`.

    Returns
    -------
    TriangleMesh
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].split() != ["penfem-mesh", "1"]:
        raise ValueError(f"{path}: not a penfem mesh file")
    level = int(lines[1].split()[1])
    n_nodes = int(lines[2].split()[1])
    n_tri = int(lines[3].split()[1])
    n_bedges = int(lines[4].split()[1])
    pos = 5
    nodes = np.array([[float(v) for v in ln.split()]
                      for ln in lines[pos:pos + n_nodes]])
    pos += n_nodes
    triangles = np.array([[int(v) for v in ln.split()]
                          for ln in lines[pos:pos + n_tri]], dtype=np.int64)
    pos += n_tri
    side_code = {name: i for i, name in enumerate(SIDE_NAMES)}
    bedges = []
    bsides = []
    for ln in lines[pos:pos + n_bedges]:
        a, b, side = ln.split()
        bedges.append((int(a), int(b)))
        bsides.append(side_code[side])
    spacing = 2.0 ** -level
    return TriangleMesh(
        nodes=nodes,
        triangles=triangles,
        boundary_edges=np.array(bedges, dtype=np.int64),
        boundary_sides=np.array(bsides, dtype=np.int64),
        level=level,
        spacing=spacing,
        max_diameter=np.sqrt(2.0) * spacing,
    )
