"""Uniform time partitions and structured simplicial meshes.

Space domains are intervals in 1D and axis-aligned rectangles in 2D.  Each
rectangle cell is split into two triangles along the same diagonal
(lower-left to upper-right), which keeps the family shape regular.  Nodes
are classified as boundary by coordinate comparison; on these structured
meshes the comparison is exact up to rounding.

Grids and meshes are immutable after construction (arrays are marked
read-only) and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_BOUNDARY_RTOL = 1e-12


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of [0, T] into N steps of size tau = T/N."""

    T: float
    N: int
    tau: float
    times: np.ndarray

    def __repr__(self) -> str:  # keep array out of logs
        return f"TimeGrid(T={self.T}, N={self.N}, tau={self.tau})"


@dataclass(frozen=True)
class Mesh:
    """Simplicial mesh with interior/boundary node classification.

    Attributes
    ----------
    dim : int
        Space dimension, 1 or 2.
    nodes : ndarray, shape (n_nodes, dim)
        Node coordinates.
    elements : ndarray, shape (n_elements, dim + 1)
        Node indices per element (segments in 1D, triangles in 2D).
    boundary_mask : ndarray of bool, shape (n_nodes,)
        True for nodes on the domain boundary.
    h : float
        Maximum element diameter.
    interior_index : ndarray of int, shape (n_nodes,)
        Dense renumbering of interior nodes (0..n_interior-1); -1 on the
        boundary.
    volume : float
        Measure of the domain (length / area).
    """

    dim: int
    nodes: np.ndarray
    elements: np.ndarray
    boundary_mask: np.ndarray
    h: float
    interior_index: np.ndarray
    volume: float

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_interior(self) -> int:
        return int(np.count_nonzero(~self.boundary_mask))

    @property
    def interior_nodes(self) -> np.ndarray:
        """Coordinates of interior nodes in dense (renumbered) order."""
        return self.nodes[~self.boundary_mask]

    def __repr__(self) -> str:
        return (
            f"Mesh(dim={self.dim}, nodes={self.n_nodes}, "
            f"elements={self.elements.shape[0]}, h={self.h:.6g})"
        )


def make_time_grid(T: float, N: int) -> TimeGrid:
    """Build the uniform time partition t_n = n * T/N, n = 0..N."""
    if not T > 0.0:
        raise ValueError(f"horizon T must be positive, got {T}")
    if N < 1:
        raise ValueError(f"step count N must be >= 1, got {N}")
    tau = T / N
    times = np.linspace(0.0, T, N + 1)
    return TimeGrid(T=float(T), N=int(N), tau=tau, times=_frozen(times))


def make_interval_mesh(a: float, b: float, cells: int) -> Mesh:
    """Equispaced mesh of [a, b] with ``cells`` segments.

    Endpoints are boundary nodes; a single-cell mesh is legal but has no
    interior nodes, so solvers reject it downstream.
    """
    if not a < b:
        raise ValueError(f"need a < b, got a={a}, b={b}")
    if cells < 1:
        raise ValueError(f"cell count must be >= 1, got {cells}")
    x = np.linspace(a, b, cells + 1)
    nodes = x.reshape(-1, 1)
    elements = np.column_stack([np.arange(cells), np.arange(1, cells + 1)])
    tol = _BOUNDARY_RTOL * (b - a)
    boundary = (np.abs(x - a) <= tol) | (np.abs(x - b) <= tol)
    return Mesh(
        dim=1,
        nodes=_frozen(nodes),
        elements=_frozen(elements.astype(np.int64)),
        boundary_mask=_frozen(boundary),
        h=(b - a) / cells,
        interior_index=_frozen(_dense_interior(boundary)),
        volume=float(b - a),
    )


def make_rectangle_mesh(
    corner_min: tuple[float, float],
    corner_max: tuple[float, float],
    cells_x: int,
    cells_y: int,
) -> Mesh:
    """Structured triangulation of an axis-aligned rectangle.

    Each of the cells_x * cells_y rectangular cells is split along its
    lower-left to upper-right diagonal; h is the cell diagonal length.
    """
    ax, ay = float(corner_min[0]), float(corner_min[1])
    bx, by = float(corner_max[0]), float(corner_max[1])
    if not (ax < bx and ay < by):
        raise ValueError(
            f"need corner_min < corner_max componentwise, got {corner_min}, {corner_max}"
        )
    if cells_x < 1 or cells_y < 1:
        raise ValueError(f"cell counts must be >= 1, got {cells_x}, {cells_y}")

    x = np.linspace(ax, bx, cells_x + 1)
    y = np.linspace(ay, by, cells_y + 1)
    xv, yv = np.meshgrid(x, y, indexing="xy")  # node id = iy*(cells_x+1) + ix
    nodes = np.column_stack([xv.ravel(), yv.ravel()])

    nx1 = cells_x + 1
    ix, iy = np.meshgrid(np.arange(cells_x), np.arange(cells_y), indexing="xy")
    n00 = (iy * nx1 + ix).ravel()
    n10 = n00 + 1
    n01 = n00 + nx1
    n11 = n01 + 1
    lower = np.column_stack([n00, n10, n11])  # positive orientation
    upper = np.column_stack([n00, n11, n01])
    elements = np.vstack([lower, upper])

    tolx = _BOUNDARY_RTOL * (bx - ax)
    toly = _BOUNDARY_RTOL * (by - ay)
    boundary = (
        (np.abs(nodes[:, 0] - ax) <= tolx)
        | (np.abs(nodes[:, 0] - bx) <= tolx)
        | (np.abs(nodes[:, 1] - ay) <= toly)
        | (np.abs(nodes[:, 1] - by) <= toly)
    )
    dx = (bx - ax) / cells_x
    dy = (by - ay) / cells_y
    return Mesh(
        dim=2,
        nodes=_frozen(nodes),
        elements=_frozen(elements.astype(np.int64)),
        boundary_mask=_frozen(boundary),
        h=float(np.hypot(dx, dy)),
        interior_index=_frozen(_dense_interior(boundary)),
        volume=float((bx - ax) * (by - ay)),
    )


def _dense_interior(boundary_mask: np.ndarray) -> np.ndarray:
    idx = np.full(boundary_mask.shape[0], -1, dtype=np.int64)
    interior = np.flatnonzero(~boundary_mask)
    idx[interior] = np.arange(interior.size)
    return idx


def element_volumes(mesh: Mesh) -> np.ndarray:
    """Per-element length (1D) or area (2D); positive on valid meshes."""
    pts = mesh.nodes[mesh.elements]
    if mesh.dim == 1:
        return pts[:, 1, 0] - pts[:, 0, 0]
    e1 = pts[:, 1] - pts[:, 0]
    e2 = pts[:, 2] - pts[:, 0]
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
