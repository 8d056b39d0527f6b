"""Triangle-mesh data structures, construction, I/O and per-cell quantities.

Vertices are 3D positions in millimetres.  A "cell" is the one-ring of a
vertex: the spoke edges around it, their weights, and the summed area of
the incident triangles.  Cells are the unit that later carries one
rotation each during deformation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, MeshParseError, ParameterError, TopologyError

MIN_FACE_AREA = 1e-12  # mm^2


def _as_readonly(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TriMesh:
    """Indexed triangle surface mesh (positions in mm)."""

    vertices: np.ndarray  # (V, 3) float64
    faces: np.ndarray     # (F, 3) int64

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        f = np.asarray(self.faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise DimensionError(f"vertices must be (V, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise DimensionError(f"faces must be (F, 3), got {f.shape}")
        if not np.all(np.isfinite(v)):
            raise ParameterError("vertex positions must be finite")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise TopologyError("face index out of range")
        if np.any(f[:, 0] == f[:, 1]) or np.any(f[:, 1] == f[:, 2]) or np.any(f[:, 0] == f[:, 2]):
            raise TopologyError("face with repeated vertex index")
        # duplicate faces up to cyclic order: rotate min index to front
        canon = np.take_along_axis(f, (f.argmin(axis=1)[:, None] + [[0, 1, 2]]) % 3, axis=1)
        if len(np.unique(canon, axis=0)) != len(f):
            raise TopologyError("duplicate face (up to cyclic order)")
        # manifold: every undirected edge in at most 2 faces
        e = np.sort(f[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        if counts.size and counts.max() > 2:
            raise TopologyError("edge shared by more than 2 faces")
        if f.size and face_areas(v, f).min() < MIN_FACE_AREA:
            raise TopologyError(f"face area below {MIN_FACE_AREA} mm^2")
        object.__setattr__(self, "vertices", _as_readonly(v))
        object.__setattr__(self, "faces", _as_readonly(f))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def with_vertices(self, vertices) -> "TriMesh":
        """Same topology, new vertex positions."""
        return TriMesh(np.asarray(vertices, dtype=np.float64), self.faces)


def unique_edges(faces) -> np.ndarray:
    """Undirected edge list (E, 2), each row sorted, no duplicates."""
    e = np.sort(np.asarray(faces)[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    return np.unique(e, axis=0)


def face_areas(vertices, faces) -> np.ndarray:
    v = np.asarray(vertices)
    f = np.asarray(faces)
    cross = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    return 0.5 * np.linalg.norm(cross, axis=1)


def face_normals(vertices, faces) -> np.ndarray:
    v = np.asarray(vertices)
    f = np.asarray(faces)
    cross = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    norm = np.linalg.norm(cross, axis=1)
    return cross / np.maximum(norm, 1e-300)[:, None]


def vertex_normals(mesh: TriMesh) -> np.ndarray:
    """Area-weighted average of incident face normals, unit length."""
    fn = face_normals(mesh.vertices, mesh.faces)
    fa = face_areas(mesh.vertices, mesh.faces)
    acc = np.zeros_like(mesh.vertices)
    np.add.at(acc, mesh.faces.ravel(), np.repeat(fn * fa[:, None], 3, axis=0))
    norm = np.linalg.norm(acc, axis=1)
    return acc / np.maximum(norm, 1e-300)[:, None]


def signed_volume(mesh: TriMesh) -> float:
    """Enclosed volume (mm^3); positive for outward-oriented closed meshes."""
    v = mesh.vertices
    f = mesh.faces
    return float(np.einsum("ij,ij->", v[f[:, 0]], np.cross(v[f[:, 1]], v[f[:, 2]]))) / 6.0


def is_watertight(mesh: TriMesh) -> bool:
    e = np.sort(mesh.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    return bool(np.all(counts == 2))


@dataclass(frozen=True)
class CellStructure:
    """Per-vertex one-ring cells of a rest mesh.

    The spokes are stored as directed pairs, row d meaning cell
    ``spoke_cell[d]`` has neighbor vertex ``spoke_vertex[d]`` with weight
    ``spoke_weight[d]``.  Both directions of every edge are present, and
    weights are symmetric.  The neighboring-cell relation N(k) is the set
    of cells sharing an edge with cell k, i.e. exactly the spoke vertices.
    """

    spoke_cell: np.ndarray    # (D,) int64
    spoke_vertex: np.ndarray  # (D,) int64
    spoke_weight: np.ndarray  # (D,) float64, >= 0
    cell_area: np.ndarray     # (V,) float64, one-ring areas in mm^2
    area_scale: float         # mean one-ring area, mm^2
    cell_count: int
    scheme: str = "cotangent"
    _solver_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for name in ("spoke_cell", "spoke_vertex", "spoke_weight", "cell_area"):
            object.__setattr__(self, name, _as_readonly(np.asarray(getattr(self, name))))
        w = self.spoke_weight
        if not np.all(np.isfinite(w)) or (w.size and w.min() < 0):
            raise ParameterError("spoke weights must be finite and >= 0")
        if not self.area_scale > 0:
            raise ParameterError("area scale must be positive")

    def neighbors(self, k: int) -> np.ndarray:
        return self.spoke_vertex[self.spoke_cell == k]


def _cotangents(vertices, faces):
    """Per-face cotangents of the three corner angles (order: at v0, v1, v2)."""
    v = vertices[faces]
    cots = np.empty((len(faces), 3))
    for i in range(3):
        a = v[:, (i + 1) % 3] - v[:, i]
        b = v[:, (i + 2) % 3] - v[:, i]
        cos = np.einsum("ij,ij->i", a, b)
        sin = np.linalg.norm(np.cross(a, b), axis=1)
        cots[:, i] = cos / np.maximum(sin, 1e-300)
    return cots


def build_cell_structure(mesh: TriMesh, scheme: str = "cotangent") -> CellStructure:
    """Compute spoke weights and one-ring areas for every vertex cell.

    ``scheme`` is "cotangent" (half sum of the angles opposite each edge,
    clamped at zero) or "uniform" (all weights 1).  Neighbor relations are
    purely topological, so an edge whose cotangent weight clamps to zero
    still appears as a spoke.
    """
    if scheme not in ("cotangent", "uniform"):
        raise ParameterError(f"unknown weight scheme {scheme!r}")
    v, f = mesh.vertices, mesh.faces
    nv = mesh.n_vertices
    edges = unique_edges(f)

    if scheme == "uniform":
        w_edge = np.ones(len(edges))
    else:
        from scipy.sparse import coo_matrix

        cots = _cotangents(v, f)
        rows = np.concatenate([f[:, 1], f[:, 2], f[:, 0]])
        cols = np.concatenate([f[:, 2], f[:, 0], f[:, 1]])
        vals = 0.5 * np.concatenate([cots[:, 0], cots[:, 1], cots[:, 2]])
        acc = coo_matrix((vals, (rows, cols)), shape=(nv, nv)).tocsr()
        acc = acc + acc.T
        w_edge = np.maximum(np.asarray(acc[edges[:, 0], edges[:, 1]]).ravel(), 0.0)

    spoke_cell = np.concatenate([edges[:, 0], edges[:, 1]])
    spoke_vertex = np.concatenate([edges[:, 1], edges[:, 0]])
    spoke_weight = np.concatenate([w_edge, w_edge])
    order = np.lexsort((spoke_vertex, spoke_cell))

    fa = face_areas(v, f)
    cell_area = np.zeros(nv)
    np.add.at(cell_area, f.ravel(), np.repeat(fa, 3))

    return CellStructure(
        spoke_cell=spoke_cell[order],
        spoke_vertex=spoke_vertex[order],
        spoke_weight=spoke_weight[order],
        cell_area=cell_area,
        area_scale=float(cell_area.mean()),
        cell_count=nv,
        scheme=scheme,
    )


@dataclass(frozen=True)
class HandleSet:
    """Vertices hard-constrained to target positions during a solve."""

    indices: np.ndarray  # (H,) int64, distinct
    targets: np.ndarray  # (H, 3) float64, mm

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        tgt = np.asarray(self.targets, dtype=np.float64).reshape(-1, 3)
        if len(idx) == 0:
            raise ParameterError("at least one handle is required")
        if len(idx) != len(tgt):
            raise DimensionError("handle indices and targets differ in length")
        if len(np.unique(idx)) != len(idx):
            raise ParameterError("handle indices must be distinct")
        if not np.all(np.isfinite(tgt)):
            raise ParameterError("handle targets must be finite")
        object.__setattr__(self, "indices", _as_readonly(idx))
        object.__setattr__(self, "targets", _as_readonly(tgt))

    def validate_for(self, mesh: TriMesh):
        if self.indices.min() < 0 or self.indices.max() >= mesh.n_vertices:
            raise ParameterError("handle index out of range for mesh")
        if len(self.indices) >= mesh.n_vertices:
            raise ParameterError("handles must leave at least one free vertex")


def generate_cone_mesh(
    length: float,
    base_radius: float,
    tip_radius: float,
    axial_segments: int,
    radial_segments: int,
) -> TriMesh:
    """Watertight capped truncated cone, axis +z from z=0 (base) to z=length.

    Vertex layout: ``axial_segments`` rings of ``radial_segments`` vertices
    (ring-major, base first), then the base-cap center, then the tip-cap
    center.  Vertex count is axial_segments * radial_segments + 2.
    """
    if not (length > 0):
        raise ParameterError("length must be positive")
    if not (base_radius >= tip_radius > 0):
        raise ParameterError("need base_radius >= tip_radius > 0")
    if axial_segments < 2 or radial_segments < 3:
        raise ParameterError("need axial_segments >= 2 and radial_segments >= 3")

    zs = np.linspace(0.0, length, axial_segments)
    radii = base_radius + (tip_radius - base_radius) * zs / length
    theta = 2.0 * np.pi * np.arange(radial_segments) / radial_segments
    rings = np.stack(
        [
            np.outer(radii, np.cos(theta)),
            np.outer(radii, np.sin(theta)),
            np.repeat(zs[:, None], radial_segments, axis=1),
        ],
        axis=-1,
    ).reshape(-1, 3)
    base_center = np.array([[0.0, 0.0, 0.0]])
    tip_center = np.array([[0.0, 0.0, length]])
    vertices = np.vstack([rings, base_center, tip_center])

    faces = []
    n = radial_segments
    for i in range(axial_segments - 1):
        for j in range(n):
            a = i * n + j
            b = i * n + (j + 1) % n
            c = (i + 1) * n + (j + 1) % n
            d = (i + 1) * n + j
            faces.append((a, b, c))
            faces.append((a, c, d))
    base_c = axial_segments * n
    tip_c = base_c + 1
    last = (axial_segments - 1) * n
    for j in range(n):
        faces.append((base_c, (j + 1) % n, j))
        faces.append((tip_c, last + j, last + (j + 1) % n))
    return TriMesh(vertices, np.array(faces, dtype=np.int64))


# ---------------------------------------------------------------------------
# Mesh file I/O (ASCII OBJ and OFF)

def save_mesh(mesh: TriMesh, path):
    path = Path(path)
    ext = path.suffix.lower()
    if ext == ".obj":
        lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices]
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
        path.write_text("\n".join(lines) + "\n")
    elif ext == ".off":
        lines = ["OFF", f"{mesh.n_vertices} {mesh.n_faces} 0"]
        lines += [f"{x!r} {y!r} {z!r}" for x, y, z in mesh.vertices]
        lines += [f"3 {a} {b} {c}" for a, b, c in mesh.faces]
        path.write_text("\n".join(lines) + "\n")
    else:
        raise ParameterError(f"unsupported mesh format {ext!r} (use .obj or .off)")


def load_mesh(path) -> TriMesh:
    path = Path(path)
    ext = path.suffix.lower()
    if ext == ".obj":
        return _load_obj(path)
    if ext == ".off":
        return _load_off(path)
    raise ParameterError(f"unsupported mesh format {ext!r} (use .obj or .off)")


def _load_obj(path: Path) -> TriMesh:
    vertices = []
    faces = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "v":
            if len(parts) != 4:
                raise MeshParseError("vertex line must be 'v x y z'", line=lineno)
            try:
                vertices.append([float(p) for p in parts[1:]])
            except ValueError:
                raise MeshParseError("non-numeric vertex coordinate", line=lineno) from None
        elif parts[0] == "f":
            if len(parts) != 4:
                raise MeshParseError("only triangular 'f i j k' faces are supported", line=lineno)
            idx = []
            for p in parts[1:]:
                tok = p.split("/", 1)[0]
                try:
                    i = int(tok)
                except ValueError:
                    raise MeshParseError("non-integer face index", line=lineno) from None
                if i == 0:
                    raise MeshParseError("face index 0 (OBJ indices are 1-based)", line=lineno)
                idx.append(i - 1 if i > 0 else len(vertices) + i)
            faces.append(idx)
        else:
            warnings.warn(f"{path.name}:{lineno}: ignoring OBJ directive {parts[0]!r}")
    return TriMesh(np.array(vertices, dtype=np.float64).reshape(-1, 3),
                   np.array(faces, dtype=np.int64).reshape(-1, 3))


def _load_off(path: Path) -> TriMesh:
    tokens = []
    token_lines = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        for tok in line.split():
            tokens.append(tok)
            token_lines.append(lineno)
    if not tokens or tokens[0] != "OFF":
        raise MeshParseError("missing OFF header", line=1)
    pos = 1

    def take(n, what):
        nonlocal pos
        if pos + n > len(tokens):
            raise MeshParseError(f"truncated file while reading {what}",
                                 line=token_lines[-1] if token_lines else 1)
        out = tokens[pos:pos + n]
        pos += n
        return out

    try:
        nv, nf, _ = (int(t) for t in take(3, "counts"))
    except ValueError:
        raise MeshParseError("non-integer counts in OFF header", line=token_lines[min(pos, len(tokens) - 1)]) from None
    try:
        vertices = np.array([float(t) for t in take(3 * nv, "vertices")]).reshape(nv, 3)
    except ValueError:
        raise MeshParseError("non-numeric vertex coordinate", line=token_lines[pos - 1]) from None
    faces = []
    for _ in range(nf):
        arity_tok = take(1, "faces")[0]
        try:
            arity = int(arity_tok)
        except ValueError:
            raise MeshParseError("non-integer face arity", line=token_lines[pos - 1]) from None
        if arity != 3:
            raise MeshParseError("only triangular faces are supported", line=token_lines[pos - 1])
        try:
            faces.append([int(t) for t in take(3, "face indices")])
        except ValueError:
            raise MeshParseError("non-integer face index", line=token_lines[pos - 1]) from None
    if pos != len(tokens):
        raise MeshParseError("trailing data inconsistent with header counts", line=token_lines[pos])
    return TriMesh(vertices, np.array(faces, dtype=np.int64).reshape(-1, 3))
