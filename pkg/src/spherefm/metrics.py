"""Separability of latent codes: silhouette (Euclidean / cosine) and
Calinski-Harabasz, plus the report that bundles them with reconstruction RMSE.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .model import identity

SPACES = ("scaled", "identity", "raw")


class InfiniteCHError(ValueError):
    """Every cluster collapsed to a point, so the within-cluster trace is zero."""


def _as_labeled(vectors, labels):
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(labels).reshape(-1)
    if X.shape[0] != y.size:
        raise ValueError(f"{X.shape[0]} vectors but {y.size} labels")
    classes, y = np.unique(y, return_inverse=True)
    if classes.size < 2:
        raise ValueError("separability metrics need at least 2 classes")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite vector")
    return X, y.reshape(-1), classes.size


def pairwise_distances(X, distance: str = "euclidean", chunk: int = 256) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    D = np.empty((n, n))
    if distance == "euclidean":
        for a in range(0, n, chunk):
            diff = X[a:a + chunk, None, :] - X[None, :, :]
            D[a:a + chunk] = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    elif distance == "cosine":
        norms = np.linalg.norm(X, axis=1)
        if np.any(norms == 0):
            raise ValueError("cosine distance undefined for a zero vector")
        U = X / norms[:, None]
        D[:] = 1.0 - U @ U.T
    else:
        raise ValueError(f"unknown distance {distance!r}")
    np.fill_diagonal(D, 0.0)
    return D


def silhouette_samples(vectors, labels, distance: str = "euclidean", paper_literal: bool = False) -> np.ndarray:
    """Per-sample silhouette values.

    ``(b - a) / max(a, b)`` with ``a`` the mean distance to the other members
    of the sample's class and ``b`` the smallest mean distance to another
    class. Members of singleton classes, and samples with ``a = b = 0``,
    score 0. ``paper_literal`` returns ``(a - b) / max(a, b)`` instead.
    """
    X, y, k = _as_labeled(vectors, labels)
    D = pairwise_distances(X, distance)
    counts = np.bincount(y, minlength=k)
    # class-wise distance sums, (n, k)
    onehot = np.zeros((y.size, k))
    onehot[np.arange(y.size), y] = 1.0
    sums = D @ onehot
    rows = np.arange(y.size)
    own = counts[y]
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(own > 1, sums[rows, y] / np.maximum(own - 1, 1), 0.0)
        means = sums / counts[None, :]
    means[rows, y] = np.inf
    b = means.min(axis=1)
    top = np.maximum(a, b)
    num = (a - b) if paper_literal else (b - a)
    out = np.zeros(y.size)
    ok = (own > 1) & (top > 0)
    out[ok] = num[ok] / top[ok]
    return out


def silhouette(vectors, labels, distance: str = "euclidean", paper_literal: bool = False) -> float:
    """Mean silhouette coefficient in ``[-1, 1]``.

    With ``paper_literal=True`` the per-sample terms ``(a - b) / max(a, b)``
    are summed rather than averaged.
    """
    vals = silhouette_samples(vectors, labels, distance, paper_literal)
    return float(vals.sum()) if paper_literal else float(vals.mean())


def calinski_harabasz(vectors, labels) -> float:
    """``tr(B) / tr(W) * (n - k) / (k - 1)``; raises :class:`InfiniteCHError` if ``tr(W) = 0``."""
    X, y, k = _as_labeled(vectors, labels)
    n = X.shape[0]
    counts = np.bincount(y, minlength=k)
    centers = np.zeros((k, X.shape[1]))
    np.add.at(centers, y, X)
    centers /= counts[:, None]
    # exact collapse test: every member equals its class's first member
    first = np.zeros(k, dtype=np.int64)
    first[y[::-1]] = np.arange(n)[::-1]
    if np.all(X == X[first[y]]):
        raise InfiniteCHError("infinite CH: every cluster is a single point (tr W = 0)")
    dev = X - centers[y]
    tr_w = float(np.einsum("ij,ij->", dev, dev))
    overall = X.mean(axis=0)
    cdev = centers - overall
    tr_b = float(np.einsum("i,ij,ij->", counts.astype(np.float64), cdev, cdev))
    if not tr_w > 0:
        raise InfiniteCHError("infinite CH: zero within-cluster dispersion")
    return tr_b / tr_w * (n - k) / (k - 1)


@dataclass
class SeparabilityReport:
    rmse: float | None
    sce: float | None
    scc: float | None
    ch: float | None
    ch_status: str
    n_samples: int
    n_classes: int
    space: str

    def to_dict(self) -> dict:
        return asdict(self)

    def table_row(self, name: str = "") -> str:
        def fmt(v, spec):
            return "-" if v is None else format(v, spec)

        ch = "+inf" if self.ch_status == "+inf" else fmt(self.ch, ".2f")
        return f"{name:<14}{fmt(self.rmse, '.4f'):>10}{fmt(self.sce, '.4f'):>10}{fmt(self.scc, '.4f'):>10}{ch:>10}"

    @staticmethod
    def table_header() -> str:
        return f"{'model':<14}{'RMSE':>10}{'SCE':>10}{'SCC':>10}{'CH':>10}"


def code_vectors(codes, space: str = "scaled") -> np.ndarray:
    """Stack codes in the requested representation.

    ``scaled`` is ``s * x/||x||`` (the shape parameter), ``identity`` is
    ``x/||x||`` and ``raw`` is ``x`` as stored.
    """
    if space not in SPACES:
        raise ValueError(f"unknown space {space!r}; choose from {SPACES}")
    codes = list(codes)
    if not codes:
        raise ValueError("no codes")
    if space == "raw":
        return np.stack([c.x for c in codes])
    if space == "identity":
        return np.stack([identity(c) for c in codes])
    return np.stack([c.s * identity(c) for c in codes])


DISTANCES = ("euclidean", "cosine")


def build_report(codes, labels, rmses=None, space: str = "scaled", paper_literal: bool = False,
                 distances=DISTANCES) -> SeparabilityReport:
    """Assemble RMSE, SCE, SCC and CH for one set of labeled codes.

    Silhouettes for distances not listed in ``distances`` are left as ``None``.
    """
    return report_from_vectors(code_vectors(codes, space), labels, rmses, space, paper_literal, distances)


def report_from_vectors(X, labels, rmses=None, space="scaled", paper_literal=False,
                        distances=DISTANCES) -> SeparabilityReport:
    """:func:`build_report` for an already stacked ``(N, d)`` array."""
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels).reshape(-1)
    unknown = set(distances) - set(DISTANCES)
    if unknown:
        raise ValueError(f"unknown distance(s) {sorted(unknown)}")
    _as_labeled(X, labels)
    sce = silhouette(X, labels, "euclidean", paper_literal) if "euclidean" in distances else None
    scc = silhouette(X, labels, "cosine", paper_literal) if "cosine" in distances else None
    try:
        ch, status = calinski_harabasz(X, labels), "ok"
    except InfiniteCHError:
        ch, status = None, "+inf"
    rmse = None
    if rmses is not None and np.size(rmses):
        rmse = float(np.mean(rmses))
        if not math.isfinite(rmse):
            raise ValueError("non-finite RMSE")
    return SeparabilityReport(rmse, sce, scc, ch, status, int(X.shape[0]), int(np.unique(labels).size), space)
