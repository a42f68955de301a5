"""Seeded synthetic corpora drawn from a known sphere face model.

Random streams are derived from ``SeedSequence(seed).spawn(5)`` in the fixed
order mean surface, basis, identity centers, per-sample codes, vertex noise;
samples are generated identity-major, so the output depends only on the
config.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .corpus import LabeledCorpus, save_corpus
from .mesh import Mesh, rmse_point_to_point
from .metrics import build_report
from .model import ShapeCode, SphereFaceModel, orthonormalize, reconstruct, save_model

MAX_ATTEMPTS = 100_000


@dataclass(frozen=True)
class SynthConfig:
    vertex_count: int = 500
    d_true: int = 16
    n_identities: int = 20
    samples_per_identity: int = 10
    within_identity_angle: float = 0.1
    scale_mean: float = 4.0
    scale_std: float = 0.4
    vertex_noise: float = 0.5
    seed: int = 0

    def validate(self) -> None:
        if min(self.vertex_count, self.d_true, self.n_identities, self.samples_per_identity) < 1:
            raise ValueError("counts and dimensions must be positive")
        if self.d_true > 3 * self.vertex_count:
            raise ValueError("d_true exceeds 3n")
        if self.within_identity_angle < 0 or self.scale_std < 0 or self.vertex_noise < 0:
            raise ValueError("spreads and noise must be non-negative")
        if not self.scale_mean > 0:
            raise ValueError("scale_mean must be positive")
        grid_shape(self.vertex_count)


@dataclass(frozen=True, eq=False)
class SynthTruth:
    model: SphereFaceModel
    centers: np.ndarray
    codes: tuple


def grid_shape(n: int):
    """Most square ``rows x cols = n`` factorization with both sides >= 2."""
    for r in range(int(math.isqrt(n)), 1, -1):
        if n % r == 0:
            return r, n // r
    raise ValueError(f"vertex_count={n} cannot be laid out as a grid with at least 2 rows and columns")


def grid_faces(rows: int, cols: int) -> np.ndarray:
    i, j = np.meshgrid(np.arange(rows - 1), np.arange(cols - 1), indexing="ij")
    a = (i * cols + j).ravel()
    b, c, d = a + 1, a + cols, a + cols + 1
    return np.concatenate([np.stack([a, b, c], 1), np.stack([b, d, c], 1)]).astype(np.int64)


def mean_surface(rows: int, cols: int, rng) -> np.ndarray:
    """A face-sized low-frequency height field (millimetres), flat ``(3n,)``."""
    xs = np.linspace(-75.0, 75.0, cols)
    ys = np.linspace(-90.0, 90.0, rows)
    X, Y = np.meshgrid(xs, ys)
    Z = 60.0 * np.exp(-(X**2 / (2 * 55.0**2) + Y**2 / (2 * 70.0**2)))
    for _ in range(4):
        fx, fy = rng.uniform(0.5, 2.0, 2) * (2 * np.pi / 180.0)
        phase = rng.uniform(0, 2 * np.pi)
        Z += rng.normal(0.0, 3.0) * np.cos(fx * X + fy * Y + phase)
    return np.stack([X, Y, Z], axis=-1).reshape(-1)


def _unit(v):
    return v / np.linalg.norm(v)


def sample_centers(k: int, d: int, min_angle: float, rng) -> np.ndarray:
    """Rejection-sample ``k`` unit vectors with pairwise angles >= ``min_angle``."""
    cos_max = math.cos(min_angle)
    centers = []
    attempts = 0
    while len(centers) < k:
        attempts += 1
        if attempts > MAX_ATTEMPTS:
            raise RuntimeError(f"could not place {k} identities {min_angle:.3g} rad apart in {d} dimensions")
        c = _unit(rng.standard_normal(d))
        if all(c @ o <= cos_max for o in centers):
            centers.append(c)
    return np.array(centers)


def perturb_identity(center, sigma, rng) -> np.ndarray:
    """Tangent-plane Gaussian step from ``center``, renormalized to the sphere."""
    g = rng.normal(0.0, sigma, center.size) if sigma > 0 else np.zeros(center.size)
    g -= (g @ center) * center
    return _unit(center + g)


def _positive_normal(mean, std, rng):
    for _ in range(1000):
        v = rng.normal(mean, std) if std > 0 else mean
        if v > 0:
            return float(v)
    raise RuntimeError("scale distribution produced no positive draw")


def generate(config: SynthConfig | None = None):
    """Return ``(LabeledCorpus, SynthTruth)`` for ``config``."""
    cfg = config or SynthConfig()
    cfg.validate()
    r_mean, r_basis, r_centers, r_codes, r_noise = (
        np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(5)
    )
    rows, cols = grid_shape(cfg.vertex_count)
    faces = grid_faces(rows, cols)
    mean = mean_surface(rows, cols, r_mean)
    basis = orthonormalize(r_basis.standard_normal((mean.size, cfg.d_true)))
    model = SphereFaceModel(mean, basis, faces)
    centers = sample_centers(cfg.n_identities, cfg.d_true, 2 * cfg.within_identity_angle, r_centers)

    meshes, labels, codes = [], [], []
    for k, c in enumerate(centers):
        for _ in range(cfg.samples_per_identity):
            code = ShapeCode(perturb_identity(c, cfg.within_identity_angle, r_codes),
                             _positive_normal(cfg.scale_mean, cfg.scale_std, r_codes))
            v = reconstruct(model, code).vertices
            if cfg.vertex_noise > 0:
                v = v + r_noise.normal(0.0, cfg.vertex_noise, v.size)
            meshes.append(Mesh(v, faces))
            labels.append(k)
            codes.append(code)
    return LabeledCorpus(meshes, labels), SynthTruth(model, centers, tuple(codes))


def oracle_report(truth: SynthTruth, corpus: LabeledCorpus, space: str = "scaled"):
    """Separability of the generating codes; RMSE is the injected noise floor."""
    if len(truth.codes) != len(corpus):
        raise ValueError("truth and corpus differ in size")
    rmses = [rmse_point_to_point(reconstruct(truth.model, c), m) for c, m in zip(truth.codes, corpus.meshes)]
    return build_report(truth.codes, corpus.labels, rmses, space)


def write_synth(corpus: LabeledCorpus, truth: SynthTruth, directory) -> None:
    """Corpus directory plus ``truth.sfmb`` and ``truth_codes.csv``."""
    from .train import export_codes_csv

    save_corpus(corpus, directory)
    save_model(truth.model, os.path.join(directory, "truth.sfmb"))
    export_codes_csv(truth.codes, corpus.labels, os.path.join(directory, "truth_codes.csv"))
