"""The sphere face model: ``M = mean + A (s * x / ||x||)``.

Holds the model container, reconstruction and projection, basis
orthonormalization, the PCA baseline and geodesic interpolation of codes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .mesh import Mesh

EPS_NORM = 1e-12
EPS_ORTH = 1e-8
RANK_TOL = 1e-10

MAGIC = b"SFMB"
FORMAT_VERSION = 1


@dataclass(frozen=True, eq=False)
class ShapeCode:
    """Raw latent vector ``x`` and scale ``s``; the identity is ``x / ||x||``."""

    x: np.ndarray
    s: float

    def __post_init__(self):
        x = np.array(self.x, dtype=np.float64).reshape(-1)
        x.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "s", float(self.s))

    @property
    def d(self) -> int:
        return self.x.size

    def identity(self) -> np.ndarray:
        return identity(self)

    def shape_parameter(self) -> np.ndarray:
        """``s * identity(x)``: the vector actually fed through the basis."""
        return self.s * identity(self)


def identity(code) -> np.ndarray:
    """Unit identity vector ``x / ||x||`` of a :class:`ShapeCode` or raw vector."""
    x = code.x if isinstance(code, ShapeCode) else np.asarray(code, dtype=np.float64)
    nrm = np.linalg.norm(x)
    if not nrm > EPS_NORM:
        raise ValueError(f"latent vector norm {nrm:.3g} is too small to normalize")
    return x / nrm


@dataclass(frozen=True, eq=False)
class SphereFaceModel:
    """Mean shape (``3n``) and basis matrix (``3n x d``, columns are directions)."""

    mean: np.ndarray
    basis: np.ndarray
    faces: np.ndarray | None = None

    def __post_init__(self):
        mean = np.array(self.mean, dtype=np.float64).reshape(-1)
        basis = np.array(self.basis, dtype=np.float64)
        if basis.ndim != 2 or basis.shape[0] != mean.size:
            raise ValueError(f"basis shape {basis.shape} does not match mean length {mean.size}")
        if mean.size % 3:
            raise ValueError("mean length is not a multiple of 3")
        if basis.shape[1] > mean.size:
            raise ValueError("latent dimension exceeds 3n")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(basis))):
            raise ValueError("model contains non-finite values")
        for a in (mean, basis):
            a.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "basis", basis)
        if self.faces is not None:
            f = np.array(self.faces, dtype=np.int64).reshape(-1, 3)
            if f.size and (f.min() < 0 or f.max() >= mean.size // 3):
                raise ValueError("face index out of range")
            f.setflags(write=False)
            object.__setattr__(self, "faces", f)

    @property
    def d(self) -> int:
        return self.basis.shape[1]

    @property
    def vertex_count(self) -> int:
        return self.mean.size // 3

    def mean_mesh(self) -> Mesh:
        return Mesh(self.mean, self.faces)

    def orthonormality_error(self) -> float:
        """Frobenius norm of ``A^T A - I``."""
        g = self.basis.T @ self.basis
        return float(np.linalg.norm(g - np.eye(self.d)))

    def is_finalized(self, tol: float = EPS_ORTH) -> bool:
        g = self.basis.T @ self.basis
        return bool(np.max(np.abs(g - np.eye(self.d))) <= tol)


def reconstruct(model: SphereFaceModel, code: ShapeCode) -> Mesh:
    if code.d != model.d:
        raise ValueError(f"code dimension {code.d} != model dimension {model.d}")
    return Mesh(model.mean + model.basis @ (code.s * identity(code)), model.faces)


def project(model: SphereFaceModel, mesh: Mesh) -> ShapeCode:
    """Closed-form least-squares code ``p = A^T (v - mean)`` as ``x = p, s = ||p||``.

    When ``p`` vanishes the identity direction is undefined; the first unit
    vector is used as a placeholder with ``s = 0``, which reconstructs the
    mean exactly.
    """
    if mesh.vertex_count != model.vertex_count:
        raise ValueError(f"mesh has {mesh.vertex_count} vertices, model expects {model.vertex_count}")
    p = model.basis.T @ (mesh.vertices - model.mean)
    s = float(np.linalg.norm(p))
    if s <= EPS_NORM:
        x = np.zeros(model.d)
        x[0] = 1.0
        return ShapeCode(x, 0.0)
    return ShapeCode(p, s)


def _sign_convention(q: np.ndarray) -> np.ndarray:
    # make each column's largest-magnitude entry positive
    idx = np.argmax(np.abs(q), axis=0)
    signs = np.sign(q[idx, np.arange(q.shape[1])])
    signs[signs == 0] = 1.0
    return q * signs


def orthonormalize(basis) -> np.ndarray:
    """Orthonormal columns spanning the same space (Householder QR).

    Raises ``ValueError`` when the columns are numerically dependent
    (``sigma_min / sigma_max < 1e-10``).
    """
    a = np.asarray(basis, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] == 0:
        raise ValueError("basis must be a non-empty 2-D matrix")
    if a.shape[1] > a.shape[0]:
        raise ValueError("more columns than rows, cannot be orthonormal")
    sv = np.linalg.svd(a, compute_uv=False)
    if not sv[0] > 0 or sv[-1] / sv[0] < RANK_TOL:
        raise ValueError("basis is rank deficient")
    q, _ = np.linalg.qr(a, mode="reduced")
    return _sign_convention(q)


def fit_pca(corpus, d: int) -> SphereFaceModel:
    """PCA baseline: sample mean plus the top-``d`` principal directions.

    ``corpus`` may be a :class:`~spherefm.corpus.LabeledCorpus` or any
    sequence of meshes with a shared topology.
    """
    meshes = list(corpus.meshes if hasattr(corpus, "meshes") else corpus)
    if not meshes:
        raise ValueError("empty corpus")
    n = meshes[0].vertex_count
    if any(m.vertex_count != n for m in meshes):
        raise ValueError("corpus meshes do not share a topology")
    d = int(d)
    if d < 1:
        raise ValueError("latent dimension must be >= 1")
    if d > min(3 * n, len(meshes) - 1):
        raise ValueError(f"d={d} too large for {len(meshes)} samples of {n} vertices")
    X = np.stack([m.vertices for m in meshes])
    mean = X.mean(axis=0)
    _, sv, vt = np.linalg.svd(X - mean, full_matrices=False)
    if sv[d - 1] <= sv[0] * RANK_TOL:
        raise ValueError(f"corpus spans fewer than {d} dimensions")
    basis = _sign_convention(vt[:d].T.copy())
    return SphereFaceModel(mean, basis, meshes[0].faces)


def slerp_identity(a, b, t: float) -> np.ndarray:
    """Geodesic interpolation between unit vectors ``a`` and ``b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("slerp endpoints differ in dimension")
    for name, v in (("a", a), ("b", b)):
        if abs(np.linalg.norm(v) - 1.0) > 1e-9:
            raise ValueError(f"slerp endpoint {name} is not unit length")
    theta = float(np.arccos(np.clip(a @ b, -1.0, 1.0)))
    if theta > np.pi - 1e-6:
        raise ValueError("antipodal endpoints: the geodesic is not unique")
    if t == 0:
        return a.copy()
    if t == 1 or np.array_equal(a, b):
        return b.copy()
    if theta < 1e-6:
        v = (1.0 - t) * a + t * b
        return v / np.linalg.norm(v)
    st = np.sin(theta)
    return (np.sin((1.0 - t) * theta) * a + np.sin(t * theta) * b) / st


def interpolate_codes(c1: ShapeCode, c2: ShapeCode, t: float) -> ShapeCode:
    """Slerp the identities, lerp the scales."""
    x = slerp_identity(identity(c1), identity(c2), t)
    s = c1.s if c1.s == c2.s else (1.0 - t) * c1.s + t * c2.s
    return ShapeCode(x, s)


# ---------------------------------------------------------------------------
# container file


def save_model(model: SphereFaceModel, path) -> None:
    """Write the ``SFMB`` container: magic, version, JSON header, raw arrays."""
    arrays = [
        ("mean", np.ascontiguousarray(model.mean, dtype="<f8")),
        ("basis", np.ascontiguousarray(model.basis, dtype="<f8")),
    ]
    if model.faces is not None:
        arrays.append(("faces", np.ascontiguousarray(model.faces, dtype="<u4")))
    header = {
        "d": model.d,
        "vertex_count": model.vertex_count,
        "has_faces": model.faces is not None,
        "arrays": [{"name": n, "dtype": a.dtype.str, "shape": list(a.shape)} for n, a in arrays],
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(hbytes)))
        fh.write(hbytes)
        for _, a in arrays:
            fh.write(a.tobytes(order="C"))


def load_model(path) -> SphereFaceModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: not an SFMB model file")
    if len(blob) < 16:
        raise ValueError(f"{path}: truncated header")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported container version {version}")
    (hlen,) = struct.unpack_from("<Q", blob, 8)
    off = 16 + hlen
    header = json.loads(blob[16:off].decode("utf-8"))
    out = {}
    for desc in header["arrays"]:
        dt = np.dtype(desc["dtype"])
        shape = tuple(desc["shape"])
        nbytes = dt.itemsize * int(np.prod(shape, dtype=np.int64))
        if off + nbytes > len(blob):
            raise ValueError(f"{path}: truncated array {desc['name']!r}")
        out[desc["name"]] = np.frombuffer(blob, dtype=dt, count=nbytes // dt.itemsize, offset=off).reshape(shape)
        off += nbytes
    if off != len(blob):
        raise ValueError(f"{path}: {len(blob) - off} trailing bytes")
    model = SphereFaceModel(out["mean"], out["basis"], out.get("faces"))
    if model.d != header["d"] or model.vertex_count != header["vertex_count"]:
        raise ValueError(f"{path}: header does not match array shapes")
    return model
