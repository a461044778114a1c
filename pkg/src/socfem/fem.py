"""P1 finite elements on interior nodes: mass/stiffness assembly, L2
projection, load vectors and implicit-Euler solves.

Homogeneous Dirichlet conditions are enforced by eliminating boundary rows
and columns, so every operator and nodal vector lives on the dense interior
numbering of the mesh.  Mass and stiffness entries come from exact element
integration of P1 products; load vectors use a fixed degree-2-exact
quadrature (3-point Gauss per segment in 1D, edge midpoints per triangle in
2D), which keeps quadrature error below the h^2 discretization error.

A ``FemSystem`` is immutable after assembly.  Factorizations of (M + tau*A)
are cached per (tau, gamma) pair and may be used concurrently; creation is
guarded by a lock.
"""

from __future__ import annotations

import threading
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NumericalError
from .grid import Mesh, element_volumes

_RESIDUAL_RTOL = 1e-10
_CG_RTOL = 1e-12

# 3-point Gauss-Legendre on [-1, 1]
_GAUSS3_X = np.array([-np.sqrt(3.0 / 5.0), 0.0, np.sqrt(3.0 / 5.0)])
_GAUSS3_W = np.array([5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])


class EulerSolver:
    """Reusable solver for (M + tau*gamma*A) x = rhs on interior nodes.

    Prefers a sparse LU factorization; falls back to conjugate gradients
    when the factorization cannot be computed.  Solves are checked against
    a relative residual of 1e-10.
    """

    def __init__(self, system: "FemSystem", tau: float, gamma: float = 1.0):
        if not tau > 0.0:
            raise ValueError(f"tau must be positive, got {tau}")
        if not gamma > 0.0:
            raise ValueError(f"gamma must be positive, got {gamma}")
        self.tau = float(tau)
        self.gamma = float(gamma)
        self._op = (system.mass + tau * gamma * system.stiffness).tocsc()
        self._lu = None
        try:
            self._lu = spla.splu(self._op)
        except RuntimeError:
            self._lu = None  # singular factorization; CG fallback below

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve for one right-hand side (n,) or a batch (n, k)."""
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != self._op.shape[0]:
            raise ValueError(
                f"rhs length {rhs.shape[0]} does not match system size {self._op.shape[0]}"
            )
        if self._lu is not None:
            x = self._lu.solve(rhs)
        else:
            x = self._solve_cg(rhs)
        self._check_residual(x, rhs)
        return x

    def _solve_cg(self, rhs: np.ndarray) -> np.ndarray:
        n = self._op.shape[0]
        cols = rhs.reshape(n, -1)
        out = np.empty_like(cols)
        for j in range(cols.shape[1]):
            x, info = spla.cg(self._op, cols[:, j], rtol=_CG_RTOL, maxiter=10 * n)
            if info != 0:
                res = np.linalg.norm(self._op @ x - cols[:, j])
                raise NumericalError(
                    f"conjugate gradients did not converge (info={info}, residual={res:.3e})"
                )
            out[:, j] = x
        return out.reshape(rhs.shape)

    def _check_residual(self, x: np.ndarray, rhs: np.ndarray) -> None:
        res = np.linalg.norm(self._op @ x - rhs)
        scale = np.linalg.norm(rhs)
        if scale > 0.0 and res > _RESIDUAL_RTOL * scale:
            raise NumericalError(
                f"implicit-Euler solve residual {res:.3e} exceeds "
                f"{_RESIDUAL_RTOL:.1e} * |rhs| = {_RESIDUAL_RTOL * scale:.3e}"
            )


class FemSystem:
    """Assembled P1 operators over the interior nodes of a mesh.

    Attributes
    ----------
    mesh : Mesh
    mass : csr_matrix
        M_ij = integral of phi_i * phi_j (symmetric positive definite).
    stiffness : csr_matrix
        A_ij = integral of grad(phi_i) . grad(phi_j) (symmetric PSD).
    quad_points : ndarray, shape (n_quad, dim)
        Global quadrature points of the load rule, element-major (3 per
        element).
    quad_weights : ndarray, shape (n_quad,)
        Quadrature weight per global point.
    load_matrix : csr_matrix, shape (n_interior, n_quad)
        Maps integrand values at quadrature points to nodal load vectors.
    grad_ops : tuple of csr_matrix, shape (n_elements, n_interior)
        Per-dimension maps from interior nodal values to the (constant)
        P1 gradient on each element.
    """

    def __init__(self, mesh, mass, stiffness, quad_points, quad_weights, load_matrix, grad_ops):
        self.mesh = mesh
        self.mass = mass
        self.stiffness = stiffness
        self.quad_points = quad_points
        self.quad_weights = quad_weights
        self.load_matrix = load_matrix
        self.grad_ops = grad_ops
        self._lock = threading.Lock()
        self._euler_cache: dict[tuple[float, float], EulerSolver] = {}
        self._mass_lu = None
        self.ones_load = np.asarray(load_matrix.sum(axis=1)).ravel()

    @property
    def n(self) -> int:
        return self.mass.shape[0]

    def euler_solver(self, tau: float, gamma: float = 1.0) -> EulerSolver:
        """Cached factorization of (M + tau*gamma*A)."""
        key = (float(tau), float(gamma))
        with self._lock:
            solver = self._euler_cache.get(key)
            if solver is None:
                solver = EulerSolver(self, tau, gamma)
                self._euler_cache[key] = solver
        return solver

    def mass_solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve M x = rhs (used by the L2 projection)."""
        with self._lock:
            if self._mass_lu is None:
                try:
                    self._mass_lu = spla.splu(self.mass.tocsc())
                except RuntimeError as exc:
                    raise NumericalError(f"mass matrix factorization failed: {exc}")
        return self._mass_lu.solve(np.asarray(rhs, dtype=float))


def assemble(mesh: Mesh) -> FemSystem:
    """Assemble mass/stiffness operators and the load-quadrature map."""
    n_int = mesh.n_interior
    if n_int < 1:
        raise ValueError("mesh has no interior nodes; refine before assembling")

    if mesh.dim == 1:
        mass, stiff = _assemble_1d(mesh)
        qpts, qwts, lmat = _load_rule_1d(mesh)
    else:
        mass, stiff = _assemble_2d(mesh)
        qpts, qwts, lmat = _load_rule_2d(mesh)
    grad_ops = _gradient_ops(mesh)
    return FemSystem(mesh, mass.tocsr(), stiff.tocsr(), qpts, qwts, lmat.tocsr(), grad_ops)


def _gradient_ops(mesh: Mesh) -> tuple:
    """Interior nodal values -> constant P1 gradient per element."""
    elems = mesh.elements
    ne = elems.shape[0]
    if mesh.dim == 1:
        h = element_volumes(mesh)
        grads = np.stack([-1.0 / h, 1.0 / h], axis=1)[:, :, None]  # (ne, 2, 1)
    else:
        pts = mesh.nodes[elems]
        area = element_volumes(mesh)
        e = np.stack(
            [pts[:, 2] - pts[:, 1], pts[:, 0] - pts[:, 2], pts[:, 1] - pts[:, 0]], axis=1
        )
        # grad(lambda_i) = rot90(e_i) / (2*area)
        grads = np.stack([-e[..., 1], e[..., 0]], axis=-1) / (2.0 * area)[:, None, None]

    rows = np.broadcast_to(np.arange(ne)[:, None], elems.shape).ravel()
    cidx = mesh.interior_index[elems.ravel()]
    keep = cidx >= 0
    ops = []
    for d in range(mesh.dim):
        vals = grads[..., d].ravel()
        ops.append(
            sp.coo_matrix(
                (vals[keep], (rows[keep], cidx[keep])), shape=(ne, mesh.n_interior)
            ).tocsr()
        )
    return tuple(ops)


def _scatter(mesh: Mesh, rows, cols, vals) -> sp.coo_matrix:
    """Drop boundary couplings and map to the dense interior numbering."""
    ridx = mesh.interior_index[rows]
    cidx = mesh.interior_index[cols]
    keep = (ridx >= 0) & (cidx >= 0)
    n = mesh.n_interior
    return sp.coo_matrix((vals[keep], (ridx[keep], cidx[keep])), shape=(n, n))


def _assemble_1d(mesh: Mesh):
    elems = mesh.elements
    h = element_volumes(mesh)
    loc_mass = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    loc_stiff = np.array([[1.0, -1.0], [-1.0, 1.0]])
    mvals = (h[:, None, None] * loc_mass).ravel()
    avals = (loc_stiff / h[:, None, None]).ravel()
    rows = np.repeat(elems, 2, axis=1).ravel()
    cols = np.tile(elems, (1, 2)).ravel()
    return _scatter(mesh, rows, cols, mvals), _scatter(mesh, rows, cols, avals)


def _assemble_2d(mesh: Mesh):
    elems = mesh.elements
    pts = mesh.nodes[elems]  # (ne, 3, 2)
    area = element_volumes(mesh)
    # edge vector opposite local vertex i
    e = np.stack(
        [pts[:, 2] - pts[:, 1], pts[:, 0] - pts[:, 2], pts[:, 1] - pts[:, 0]], axis=1
    )
    loc_stiff = np.einsum("eid,ejd->eij", e, e) / (4.0 * area)[:, None, None]
    loc_mass = (np.ones((3, 3)) + np.eye(3)) / 12.0
    mvals = (area[:, None, None] * loc_mass).ravel()
    avals = loc_stiff.ravel()
    rows = np.repeat(elems, 3, axis=1).ravel()
    cols = np.tile(elems, (1, 3)).ravel()
    return _scatter(mesh, rows, cols, mvals), _scatter(mesh, rows, cols, avals)


def _load_rule_1d(mesh: Mesh):
    elems = mesh.elements
    a = mesh.nodes[elems[:, 0], 0]
    h = element_volumes(mesh)
    # quad point q of element e sits at global column e*3 + q
    x = a[:, None] + 0.5 * h[:, None] * (1.0 + _GAUSS3_X[None, :])
    w = 0.5 * h[:, None] * _GAUSS3_W[None, :]
    lam = 0.5 * (1.0 + _GAUSS3_X)  # local coordinate of each quad point
    basis = np.stack([1.0 - lam, lam], axis=0)  # (2 local nodes, 3 points)

    ne = elems.shape[0]
    qcols = (np.arange(ne)[:, None, None] * 3 + np.arange(3)[None, None, :])
    rows = np.broadcast_to(elems[:, :, None], (ne, 2, 3)).ravel()
    cols = np.broadcast_to(qcols, (ne, 2, 3)).ravel()
    vals = (w[:, None, :] * basis[None, :, :]).ravel()
    return _finish_load(mesh, x.reshape(-1, 1), w.ravel(), rows, cols, vals, ne * 3)


def _load_rule_2d(mesh: Mesh):
    elems = mesh.elements
    pts = mesh.nodes[elems]
    area = element_volumes(mesh)
    mids = 0.5 * np.stack(
        [pts[:, 0] + pts[:, 1], pts[:, 1] + pts[:, 2], pts[:, 2] + pts[:, 0]], axis=1
    )  # (ne, 3, 2)
    # P1 values at edge midpoints: vertex i is 1/2 on its two adjacent edges
    basis = 0.5 * np.array([[1.0, 0.0, 1.0], [1.0, 1.0, 0.0], [0.0, 1.0, 1.0]])

    ne = elems.shape[0]
    w = (area / 3.0)[:, None] * np.ones((1, 3))
    qcols = (np.arange(ne)[:, None, None] * 3 + np.arange(3)[None, None, :])
    rows = np.broadcast_to(elems[:, :, None], (ne, 3, 3)).ravel()
    cols = np.broadcast_to(qcols, (ne, 3, 3)).ravel()
    vals = (w[:, None, :] * basis[None, :, :]).ravel()
    return _finish_load(mesh, mids.reshape(-1, 2), w.ravel(), rows, cols, vals, ne * 3)


def _finish_load(mesh, qpts, qwts, rows, cols, vals, n_quad):
    ridx = mesh.interior_index[rows]
    keep = ridx >= 0
    lmat = sp.coo_matrix(
        (vals[keep], (ridx[keep], cols[keep])), shape=(mesh.n_interior, n_quad)
    )
    qpts = np.ascontiguousarray(qpts)
    qpts.flags.writeable = False
    qwts = np.ascontiguousarray(qwts)
    qwts.flags.writeable = False
    return qpts, qwts, lmat


def load_vector(system: FemSystem, g: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """b_i = integral of g * phi_i via the system's quadrature rule."""
    vals = np.asarray(g(system.quad_points), dtype=float)
    vals = np.broadcast_to(vals, (system.quad_points.shape[0],))
    return system.load_matrix @ vals


def load_from_values(system: FemSystem, values: np.ndarray) -> np.ndarray:
    """Load vectors from integrand values at ``system.quad_points``.

    ``values`` may carry leading batch axes, e.g. (paths, n_quad); the
    result has the matching shape (..., n_interior).
    """
    return np.asarray(values) @ system.load_matrix.T


def l2_project(system: FemSystem, g: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Discrete L2 projection of g onto the interior P1 space.

    Solves M p = load(g); the Galerkin property (M p - load(g))_j = 0 holds
    for every basis index j up to solver accuracy.
    """
    return system.mass_solve(load_vector(system, g))


def euler_solve(
    system: FemSystem, tau: float, rhs: np.ndarray, gamma: float = 1.0
) -> np.ndarray:
    """One implicit-Euler solve (M + tau*gamma*A) x = rhs."""
    return system.euler_solver(tau, gamma).solve(rhs)


def norms(system: FemSystem, x: np.ndarray) -> tuple[float, float]:
    """Return (L2 norm, H1 seminorm) of an interior nodal field."""
    x = np.asarray(x, dtype=float)
    if x.shape != (system.n,):
        raise ValueError(f"field shape {x.shape} does not match system size {system.n}")
    l2 = float(np.sqrt(x @ (system.mass @ x)))
    h1 = float(np.sqrt(max(x @ (system.stiffness @ x), 0.0)))
    return l2, h1
