"""Handle-constrained mesh deformation by local-global energy minimization.

The deformation energy is the per-cell as-rigid-as-possible (ARAP) data
term plus a rotation-smoothing penalty between neighboring cells:

    E(p', R) = sum_k sum_{j in N(k)} w_kj |e'_kj - R_k e_kj|^2
             + lam * A * sum_k sum_{l in N(k)} w_kl |R_k - R_l|_F^2

with e_kj the rest spoke vectors, e'_kj the deformed ones, A the mean
one-ring area of the rest mesh, and one rotation R_k per vertex cell.
Minimization alternates a closed-form rotation fit per cell (local step)
with one sparse SPD solve for the free vertex positions (global step).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix, csc_matrix
from scipy.sparse.linalg import splu

from .errors import DimensionError, ParameterError, SolverError
from .mesh import CellStructure, HandleSet, TriMesh

ROTATION_TOL = 1e-9


@dataclass(frozen=True)
class SolverConfig:
    smoothing: float = 5e-4        # dimensionless rotation-smoothing weight
    max_iterations: int = 100
    rel_energy_tol: float = 1e-6
    scheme: str = "cotangent"

    def __post_init__(self):
        if self.smoothing < 0:
            raise ParameterError("smoothing weight must be >= 0")
        if self.max_iterations < 1:
            raise ParameterError("max_iterations must be >= 1")
        if not self.rel_energy_tol > 0:
            raise ParameterError("rel_energy_tol must be positive")


@dataclass
class SolveReport:
    iterations: int
    energies: list
    converged: bool
    rotations: np.ndarray = field(default=None, repr=False)  # (m, 3, 3) final


def identity_rotations(count: int) -> np.ndarray:
    """A rotation field of `count` identity matrices."""
    return np.broadcast_to(np.eye(3), (count, 3, 3)).copy()


def check_rotation_field(rotations, count=None, tol=ROTATION_TOL):
    """Validate an (m, 3, 3) rotation field: orthonormal, det +1."""
    r = np.asarray(rotations, dtype=np.float64)
    if r.ndim != 3 or r.shape[1:] != (3, 3):
        raise DimensionError(f"rotation field must be (m, 3, 3), got {r.shape}")
    if count is not None and r.shape[0] != count:
        raise DimensionError(f"expected {count} rotations, got {r.shape[0]}")
    gram_err = np.abs(np.einsum("nij,nik->njk", r, r) - np.eye(3)).max()
    if gram_err > tol:
        raise ParameterError(f"rotation field not orthonormal (|R^T R - I| = {gram_err:.3e})")
    det_err = np.abs(np.linalg.det(r) - 1.0).max()
    if det_err > tol:
        raise ParameterError(f"rotation field determinant off +1 by {det_err:.3e}")
    return r


def _check_positions(rest: TriMesh, positions) -> np.ndarray:
    p = np.asarray(positions, dtype=np.float64)
    if p.shape != rest.vertices.shape:
        raise DimensionError(
            f"deformed positions {p.shape} do not match rest vertices {rest.vertices.shape}")
    return p


def _spoke_vectors(points, cells: CellStructure):
    return points[cells.spoke_vertex] - points[cells.spoke_cell]


def arap_energy(rest: TriMesh, deformed_positions, rotations, cells: CellStructure) -> float:
    """Sum over cells of the weighted squared spoke residuals (mm^2)."""
    p = _check_positions(rest, deformed_positions)
    r = check_rotation_field(rotations, count=cells.cell_count)
    e = _spoke_vectors(rest.vertices, cells)
    e_def = _spoke_vectors(p, cells)
    residual = e_def - np.einsum("dij,dj->di", r[cells.spoke_cell], e)
    return float(np.dot(cells.spoke_weight, np.einsum("di,di->d", residual, residual)))


def smoothing_term(rotations, cells: CellStructure, smoothing: float) -> float:
    """lam * A * sum over neighboring cell pairs of |R_k - R_l|_F^2."""
    r = np.asarray(rotations)
    diff = r[cells.spoke_cell] - r[cells.spoke_vertex]
    frob2 = np.einsum("dij,dij->d", diff, diff)
    return float(smoothing * cells.area_scale * np.dot(cells.spoke_weight, frob2))


def smoothed_energy(rest: TriMesh, deformed_positions, rotations, cells: CellStructure,
                    smoothing: float) -> float:
    """ARAP data term plus the rotation-smoothing penalty (mm^2)."""
    if smoothing < 0:
        raise ParameterError("smoothing weight must be >= 0")
    data = arap_energy(rest, deformed_positions, rotations, cells)
    if smoothing == 0:
        return data
    return data + smoothing_term(rotations, cells, smoothing)


def polar_rotations(matrices) -> np.ndarray:
    """Closest rotations to a batch of 3x3 matrices (Frobenius sense).

    The reflection guard flips the singular vector of the smallest
    singular value, which maximizes the trace objective among the
    det = +1 sign choices.
    """
    u, _, vt = np.linalg.svd(matrices)
    det = np.linalg.det(u @ vt)
    flip = np.ones_like(u[..., :1, :])
    flip[..., 0, 2] = det
    return (u * flip) @ vt


def _segment_sum_matrices(values, index, count):
    """Sum (D, 3, 3) values into (count, 3, 3) bins given (D,) indices."""
    out = np.zeros((count, 9))
    flat = values.reshape(len(values), 9)
    for c in range(9):
        out[:, c] = np.bincount(index, weights=flat[:, c], minlength=count)
    return out.reshape(count, 3, 3)


def local_step(rest: TriMesh, deformed_positions, cells: CellStructure, smoothing: float,
               rotations_in) -> np.ndarray:
    """Refit every cell rotation with positions fixed.

    Each cell takes the polar rotation factor of its weighted
    deformed-by-rest spoke covariance, augmented (for smoothing > 0) by
    4 * lam * A times the weighted sum of the neighboring cells' previous
    rotations.  Cells whose covariance vanishes keep their previous
    rotation.
    """
    p = _check_positions(rest, deformed_positions)
    r_in = check_rotation_field(rotations_in, count=cells.cell_count)
    e = _spoke_vectors(rest.vertices, cells)
    e_def = _spoke_vectors(p, cells)
    w = cells.spoke_weight
    outer = w[:, None, None] * (e_def[:, :, None] * e[:, None, :])
    cov = _segment_sum_matrices(outer, cells.spoke_cell, cells.cell_count)
    target = cov
    if smoothing > 0:
        pull = _segment_sum_matrices(w[:, None, None] * r_in[cells.spoke_vertex],
                                     cells.spoke_cell, cells.cell_count)
        target = cov + 4.0 * smoothing * cells.area_scale * pull
    degenerate = np.linalg.norm(target.reshape(-1, 9), axis=1) < 1e-300
    rotations = polar_rotations(target)
    if degenerate.any():
        rotations[degenerate] = r_in[degenerate]
    return rotations


def _laplacian(cells: CellStructure):
    cache = cells._solver_cache
    if "laplacian" not in cache:
        n = cells.cell_count
        k, j, w = cells.spoke_cell, cells.spoke_vertex, cells.spoke_weight
        rows = np.concatenate([k, k])
        cols = np.concatenate([j, k])
        vals = np.concatenate([-w, w])
        cache["laplacian"] = coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    return cache["laplacian"]


def _factorization(cells: CellStructure, handle_indices):
    key = ("factor", tuple(int(i) for i in np.sort(handle_indices)))
    cache = cells._solver_cache
    if key not in cache:
        lap = _laplacian(cells)
        free = np.setdiff1d(np.arange(cells.cell_count), handle_indices)
        diag = lap.diagonal()[free]
        dead = free[diag <= 0.0]
        if dead.size:
            raise SolverError(f"all spoke weights vanish around free vertex {int(dead[0])}")
        lap_ff = csc_matrix(lap[free][:, free])
        lap_fh = lap[free][:, np.asarray(handle_indices)]
        try:
            factor = splu(lap_ff)
        except RuntimeError as exc:
            raise SolverError(f"singular free-vertex system: {exc}") from exc
        cache[key] = (free, lap_fh, factor)
    return cache[key]


def global_step(rest: TriMesh, rotations, handles: HandleSet, cells: CellStructure) -> np.ndarray:
    """Solve for positions minimizing the data term with rotations fixed.

    Handle vertices are eliminated into the right-hand side, so they sit
    exactly at their targets; the reduced system is SPD because weights
    are clamped nonnegative.  The factorization depends only on the rest
    mesh and handle index set and is cached on the cell structure.
    """
    r = check_rotation_field(rotations, count=cells.cell_count)
    handles.validate_for(rest)
    k, j, w = cells.spoke_cell, cells.spoke_vertex, cells.spoke_weight
    e = _spoke_vectors(rest.vertices, cells)  # rest_j - rest_k
    mean_rot = 0.5 * (r[k] + r[j])
    contrib = w[:, None] * np.einsum("dij,dj->di", mean_rot, -e)  # (R_k+R_j)/2 (p_k - p_j)
    rhs = np.zeros_like(rest.vertices)
    np.add.at(rhs, k, contrib)

    free, lap_fh, factor = _factorization(cells, handles.indices)
    b = rhs[free] - lap_fh @ handles.targets
    positions = np.empty_like(rest.vertices)
    positions[handles.indices] = handles.targets
    positions[free] = factor.solve(b)
    return positions


def solve(rest: TriMesh, handles: HandleSet, cells: CellStructure,
          config: SolverConfig = SolverConfig()) -> tuple[TriMesh, SolveReport]:
    """Deform `rest` so handles reach their targets, minimizing the energy.

    Starts from the rest positions with handles snapped to their targets
    and identity rotations, then alternates local and global steps until
    the relative energy decrease drops below `config.rel_energy_tol` or
    `config.max_iterations` is reached.
    """
    handles.validate_for(rest)
    lam = config.smoothing
    positions = rest.vertices.copy()
    positions[handles.indices] = handles.targets
    rotations = identity_rotations(cells.cell_count)
    energies = [smoothed_energy(rest, positions, rotations, cells, lam)]
    converged = False
    iterations = 0
    for _ in range(config.max_iterations):
        rotations = local_step(rest, positions, cells, lam, rotations)
        positions = global_step(rest, rotations, handles, cells)
        iterations += 1
        energies.append(smoothed_energy(rest, positions, rotations, cells, lam))
        prev, cur = energies[-2], energies[-1]
        rel_decrease = (prev - cur) / max(prev, abs(cur), 1e-12)
        if rel_decrease < config.rel_energy_tol:
            converged = True
            break
    report = SolveReport(iterations=iterations, energies=energies, converged=converged,
                         rotations=rotations)
    return rest.with_vertices(positions), report
