"""Triangle meshes stored as flat coordinate vectors, OBJ I/O, error measures
and mesh-level regularizers (smoothness, mirror symmetry, residual).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

AXES = {"x": 0, "y": 1, "z": 2}


class ObjParseError(ValueError):
    """Raised for malformed OBJ content; carries the 1-based line number."""

    def __init__(self, message, lineno=None, path=None):
        self.lineno = lineno
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if lineno is not None:
            where += f":{lineno}" if where else f"line {lineno}"
        super().__init__(f"{where}: {message}" if where else message)


def _frozen(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """A mesh with ``n`` vertices stored as a flat ``(3n,)`` float64 vector.

    Parameters
    ----------
    vertices : array_like
        Either a flat vector of length ``3n`` (x, y, z per vertex) or an
        ``(n, 3)`` array; stored flat.
    faces : array_like, optional
        ``(F, 3)`` zero-based triangle indices.
    """

    vertices: np.ndarray
    faces: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        if v.ndim == 2:
            if v.shape[1] != 3:
                raise ValueError(f"expected (n, 3) vertices, got shape {v.shape}")
            v = v.reshape(-1)
        if v.ndim != 1 or v.size % 3 != 0:
            raise ValueError(f"vertex vector length {v.size} is not a multiple of 3")
        if v.size == 0:
            raise ValueError("mesh has no vertices")
        if not np.all(np.isfinite(v)):
            raise ValueError("mesh has non-finite coordinates")
        object.__setattr__(self, "vertices", _frozen(v))

        if self.faces is not None:
            f = np.asarray(self.faces)
            if f.size == 0:
                f = np.zeros((0, 3), dtype=np.int64)
            if f.ndim != 2 or f.shape[1] != 3:
                raise ValueError(f"faces must be (F, 3), got shape {f.shape}")
            if not np.issubdtype(f.dtype, np.integer):
                if not np.all(np.equal(np.mod(f, 1), 0)):
                    raise ValueError("face indices must be integers")
            f = f.astype(np.int64)
            n = v.size // 3
            if f.size and (f.min() < 0 or f.max() >= n):
                raise ValueError(f"face index out of range for {n} vertices")
            object.__setattr__(self, "faces", _frozen(f))

    @property
    def vertex_count(self) -> int:
        return self.vertices.size // 3

    @property
    def points(self) -> np.ndarray:
        """``(n, 3)`` read-only view of the vertex coordinates."""
        return self.vertices.reshape(-1, 3)

    @property
    def has_faces(self) -> bool:
        return self.faces is not None and len(self.faces) > 0

    def with_vertices(self, vertices) -> "Mesh":
        """Same connectivity, new coordinates."""
        return Mesh(vertices, self.faces)


# ---------------------------------------------------------------------------
# OBJ I/O


def _parse_face_index(token, n_vertices, lineno, path):
    head = token.split("/", 1)[0]
    try:
        idx = int(head)
    except ValueError:
        raise ObjParseError(f"bad face index {token!r}", lineno, path) from None
    if idx > 0:
        idx -= 1
    elif idx < 0:
        # relative index, counts back from the last vertex read so far
        idx = n_vertices + idx
    else:
        raise ObjParseError("face index 0 is invalid (OBJ is 1-based)", lineno, path)
    return idx, head


def load_obj(path) -> Mesh:
    """Read an ASCII OBJ file (``v`` and ``f`` records only).

    Quads are fan-triangulated as ``(a, b, c), (a, c, d)``; any other polygon
    arity is rejected. Texture/normal indices in ``f`` records are ignored.
    """
    verts = []
    faces = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise ObjParseError("vertex record needs 3 coordinates", lineno, path)
                try:
                    xyz = [float(t) for t in parts[1:4]]
                except ValueError:
                    raise ObjParseError(f"bad vertex coordinate in {line!r}", lineno, path) from None
                if not all(math.isfinite(c) for c in xyz):
                    raise ObjParseError("non-finite vertex coordinate", lineno, path)
                verts.append(xyz)
            elif tag == "f":
                idx = []
                for tok in parts[1:]:
                    i, _ = _parse_face_index(tok, len(verts), lineno, path)
                    if not 0 <= i < len(verts):
                        raise ObjParseError(f"face index {tok} refers to an undefined vertex", lineno, path)
                    idx.append(i)
                if len(idx) == 3:
                    faces.append(idx)
                elif len(idx) == 4:
                    a, b, c, d = idx
                    faces.append([a, b, c])
                    faces.append([a, c, d])
                else:
                    raise ObjParseError(f"unsupported polygon with {len(idx)} vertices", lineno, path)
            # vn, vt, g, o, s, usemtl, mtllib ... are ignored
    if not verts:
        raise ObjParseError("no vertices", path=path)
    return Mesh(np.asarray(verts, dtype=np.float64), np.asarray(faces, dtype=np.int64) if faces else None)


def save_obj(mesh: Mesh, path) -> None:
    """Write ``mesh`` as ASCII OBJ with round-trip float precision."""
    lines = []
    for x, y, z in mesh.points.tolist():
        lines.append(f"v {x!r} {y!r} {z!r}\n")
    if mesh.faces is not None:
        for a, b, c in (mesh.faces + 1).tolist():
            lines.append(f"f {a} {b} {c}\n")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(lines)


# ---------------------------------------------------------------------------
# error measures


def _check_same_topology(a: Mesh, b: Mesh):
    if a.vertex_count != b.vertex_count:
        raise ValueError(f"vertex count mismatch: {a.vertex_count} vs {b.vertex_count}")


def rmse_point_to_point(a: Mesh, b: Mesh) -> float:
    """Root mean square of per-vertex Euclidean distances (index correspondence)."""
    _check_same_topology(a, b)
    diff = a.points - b.points
    return float(np.sqrt(np.mean(np.einsum("ij,ij->i", diff, diff))))


def vertex_normals(mesh: Mesh) -> np.ndarray:
    """Area-weighted unit vertex normals, shape ``(n, 3)``.

    Raises if the mesh has no faces or any vertex ends up with a zero normal
    (unreferenced vertex or degenerate neighbourhood).
    """
    if not mesh.has_faces:
        raise ValueError("vertex normals need a mesh with faces")
    p = mesh.points
    f = mesh.faces
    # cross product magnitude is twice the triangle area: area weighting for free
    fn = np.cross(p[f[:, 1]] - p[f[:, 0]], p[f[:, 2]] - p[f[:, 0]])
    acc = np.zeros_like(p)
    for k in range(3):
        np.add.at(acc, f[:, k], fn)
    norms = np.linalg.norm(acc, axis=1)
    bad = np.flatnonzero(norms <= 1e-300)
    if bad.size:
        raise ValueError(f"degenerate vertex normal at vertex {int(bad[0])}")
    return acc / norms[:, None]


def rmse_point_to_plane(source: Mesh, target: Mesh) -> float:
    """RMSE of displacements projected onto the target's vertex normals."""
    _check_same_topology(source, target)
    normals = vertex_normals(target)
    d = np.einsum("ij,ij->i", source.points - target.points, normals)
    return float(np.sqrt(np.mean(d * d)))


# ---------------------------------------------------------------------------
# regularizers


@dataclass(frozen=True, eq=False)
class NeighborGraph:
    """Vertex adjacency in CSR form (``indptr``, ``indices``)."""

    indptr: np.ndarray
    indices: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "indptr", _frozen(np.asarray(self.indptr, dtype=np.int64)))
        object.__setattr__(self, "indices", _frozen(np.asarray(self.indices, dtype=np.int64)))

    @property
    def vertex_count(self) -> int:
        return len(self.indptr) - 1

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    @classmethod
    def from_faces(cls, faces, vertex_count: int) -> "NeighborGraph":
        faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
        e = np.concatenate([e, e[:, ::-1]])
        e = e[e[:, 0] != e[:, 1]]
        return cls._from_edges(e, vertex_count)

    @classmethod
    def from_adjacency(cls, adjacency) -> "NeighborGraph":
        """Build from a per-vertex list of neighbour lists; symmetrized."""
        e = [(i, j) for i, nb in enumerate(adjacency) for j in nb if i != j]
        e = np.asarray(e, dtype=np.int64).reshape(-1, 2)
        e = np.concatenate([e, e[:, ::-1]])
        return cls._from_edges(e, len(adjacency))

    @classmethod
    def _from_edges(cls, e, vertex_count):
        if e.size and (e.min() < 0 or e.max() >= vertex_count):
            raise ValueError("edge index out of range")
        e = np.unique(e, axis=0) if e.size else e.reshape(0, 2)
        counts = np.bincount(e[:, 0], minlength=vertex_count) if e.size else np.zeros(vertex_count, np.int64)
        indptr = np.concatenate([[0], np.cumsum(counts)])
        return cls(indptr, e[:, 1] if e.size else np.zeros(0, np.int64))


def smooth_loss(mesh: Mesh, graph: NeighborGraph) -> float:
    """Mean over vertices of ``||G_i - mean_{j in N(i)} G_j||_2``."""
    if graph.vertex_count != mesh.vertex_count:
        raise ValueError("graph and mesh vertex counts differ")
    deg = graph.degrees()
    if np.any(deg == 0):
        raise ValueError(f"isolated vertex {int(np.flatnonzero(deg == 0)[0])} has no neighbours")
    p = mesh.points
    sums = np.add.reduceat(p[graph.indices], graph.indptr[:-1], axis=0)
    resid = p - sums / deg[:, None]
    return float(np.mean(np.linalg.norm(resid, axis=1)))


@dataclass(frozen=True, eq=False)
class SymmetryMap:
    """Left/right vertex pairing plus the coordinate negated by reflection."""

    mirror_index: np.ndarray
    axis: int = 0

    def __post_init__(self):
        m = np.asarray(self.mirror_index, dtype=np.int64)
        if m.ndim != 1:
            raise ValueError("mirror_index must be 1-D")
        n = m.size
        if n and (m.min() < 0 or m.max() >= n):
            raise ValueError("mirror index out of range")
        if not np.array_equal(m[m], np.arange(n)):
            raise ValueError("mirror_index is not an involution")
        axis = AXES.get(self.axis, self.axis) if isinstance(self.axis, str) else int(self.axis)
        if axis not in (0, 1, 2):
            raise ValueError(f"bad reflection axis {self.axis!r}")
        object.__setattr__(self, "mirror_index", _frozen(m))
        object.__setattr__(self, "axis", axis)

    def flip(self, points) -> np.ndarray:
        """Reflect ``(n, 3)`` points and swap mirrored vertices."""
        out = np.array(points, dtype=np.float64)[self.mirror_index]
        out[:, self.axis] *= -1.0
        return out

    @classmethod
    def load(cls, path) -> "SymmetryMap":
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
        if not lines or not lines[0].startswith("axis="):
            raise ValueError(f"{path}:1: expected 'axis=x|y|z' preamble")
        axis = lines[0].split("=", 1)[1].strip()
        if axis not in AXES:
            raise ValueError(f"{path}:1: bad axis {axis!r}")
        if len(lines) < 2 or lines[1].replace(" ", "") != "index,mirror_index":
            raise ValueError(f"{path}:2: expected header 'index,mirror_index'")
        pairs = {}
        for k, ln in enumerate(lines[2:], start=3):
            try:
                i, j = (int(t) for t in ln.split(","))
            except ValueError:
                raise ValueError(f"{path}:{k}: malformed row {ln!r}") from None
            pairs[i] = j
        n = len(pairs)
        if sorted(pairs) != list(range(n)):
            raise ValueError(f"{path}: indices must cover 0..{n - 1} exactly once")
        return cls(np.array([pairs[i] for i in range(n)]), AXES[axis])

    def save(self, path) -> None:
        name = "xyz"[self.axis]
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"axis={name}\nindex,mirror_index\n")
            for i, j in enumerate(self.mirror_index.tolist()):
                fh.write(f"{i},{j}\n")


def symmetry_loss(mesh: Mesh, sym: SymmetryMap) -> float:
    """L1 norm of ``G - flip(G)`` over all coordinates."""
    if sym.mirror_index.size != mesh.vertex_count:
        raise ValueError("symmetry map size does not match the mesh")
    return float(np.abs(mesh.points - sym.flip(mesh.points)).sum())


def residual_loss(mesh: Mesh, mean: Mesh) -> float:
    """L1 distance to the mean shape."""
    _check_same_topology(mesh, mean)
    return float(np.abs(mesh.vertices - mean.vertices).sum())


def mesh_regularizer(mesh: Mesh, mean: Mesh, graph: NeighborGraph, sym: SymmetryMap) -> float:
    """Sum of the smooth, symmetry and residual terms."""
    return smooth_loss(mesh, graph) + symmetry_loss(mesh, sym) + residual_loss(mesh, mean)

