"""Stage-1 training on labeled 3D meshes.

The basis, one free code ``(x_i, s_i)`` per training mesh, the classifier
weights and the class centers are optimized jointly with Adam on the
weighted sum of the normalized-softmax, center and reconstruction losses.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .corpus import LabeledCorpus
from .losses import CENTER_DENOMINATORS, total_stage1_loss
from .model import EPS_NORM, ShapeCode, SphereFaceModel, fit_pca, identity, orthonormalize
from .optim import ParamGroup, Schedule

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    d: int = 199
    lr_code: float = 0.02
    lr_basis: float = 0.005
    batch_size: int = 512
    epochs: int = 60
    decay_factor: float = 0.1
    decay_every: int = 20
    lambda_m: float = 1.0
    lambda_c: float = 1.0
    lambda_s: float = 1.0
    seed: int = 0
    center_denominator: str = "pair_mean"
    logit_scale: float = 1.0
    optimize_mean: bool = False

    def validate(self, vertex_count=None, n_samples=None) -> None:
        for name in ("lr_code", "lr_basis", "logit_scale"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.batch_size < 1 or self.epochs < 0 or self.d < 1:
            raise ValueError("batch_size and d must be positive, epochs non-negative")
        if min(self.lambda_m, self.lambda_c, self.lambda_s) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.center_denominator not in CENTER_DENOMINATORS:
            raise ValueError(f"center_denominator must be one of {CENTER_DENOMINATORS}")
        Schedule(self.decay_factor, self.decay_every, "epoch")
        if vertex_count is not None and self.d > 3 * vertex_count:
            raise ValueError(f"d={self.d} exceeds 3n={3 * vertex_count}")
        if n_samples is not None and self.d > n_samples - 1:
            raise ValueError(f"d={self.d} needs at least {self.d + 1} samples for the PCA start, got {n_samples}")

    @classmethod
    def sphere_linear(cls, **kw) -> "TrainConfig":
        """The ablation without the recognition losses."""
        kw.update(lambda_m=0.0, lambda_c=0.0)
        return cls(**kw)


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    ortho_error_before_finalize: float = 0.0
    ortho_error_final: float = 0.0
    negative_scales: int = 0
    rmse: float = 0.0
    initial_objective: float = 0.0
    best_epoch: int = -1
    seed: int = 0
    wall_time: float = 0.0

    def to_dict(self, include_timing: bool = False) -> dict:
        out = asdict(self)
        if not include_timing:
            # timing lives in the run manifest so reports stay byte-reproducible
            out.pop("wall_time")
        return out


@dataclass
class TrainResult:
    model: SphereFaceModel
    codes: list
    weights: np.ndarray
    centers: np.ndarray
    report: TrainReport


def initial_codes(model: SphereFaceModel, X):
    """PCA projections as raw codes ``x = p`` and scales ``s = ||p||``."""
    P = (X - model.mean) @ model.basis
    s = np.linalg.norm(P, axis=1)
    x = P.copy()
    zero = s <= EPS_NORM
    x[zero] = 0.0
    x[zero, 0] = 1.0
    s[zero] = 0.0
    return x, s


def mean_rmse(model: SphereFaceModel, codes, X) -> float:
    """Mean per-sample point-to-point RMSE of ``codes`` against the rows of ``X``."""
    P = np.stack([c.s * identity(c) for c in codes])
    R = (model.mean + P @ model.basis.T - X).reshape(len(codes), -1, 3)
    return float(np.mean(np.sqrt(np.mean(np.sum(R * R, axis=2), axis=1))))


def _class_means(V, labels, k):
    out = np.zeros((k, V.shape[1]))
    np.add.at(out, labels, V)
    return out / np.bincount(labels, minlength=k)[:, None]


def train_stage1(corpus: LabeledCorpus, config: TrainConfig | None = None) -> TrainResult:
    """Optimize basis, per-sample codes, classifier weights and centers.

    Starts from the PCA solution. Each epoch visits the samples in a seeded
    random order in batches (the last partial batch is kept); per-sample
    codes only move when their sample is in the batch.

    The full-data objective is evaluated at the start and after every epoch;
    the lowest-objective state is kept, so training never ends worse than
    its PCA starting point. That state's basis is orthonormalized and every
    code is replaced by the projection of its reconstruction onto the new
    basis, which leaves reconstructions unchanged while restoring the
    isometry.
    """
    cfg = config or TrainConfig()
    cfg.validate(corpus.vertex_count, len(corpus))
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)

    pca = fit_pca(corpus, cfg.d)
    mean = pca.mean
    X = corpus.matrix()
    y = corpus.labels
    k = corpus.n_classes
    N = len(corpus)

    x0, s0 = initial_codes(pca, X)
    xh0 = x0 / np.linalg.norm(x0, axis=1)[:, None]
    w0 = _class_means(xh0, y, k)
    wn = np.linalg.norm(w0, axis=1)
    # a class whose identities cancel out gets its first member's direction
    for j in np.flatnonzero(wn <= EPS_NORM):
        w0[j] = xh0[np.flatnonzero(y == j)[0]]
        wn[j] = 1.0
    w0 /= wn[:, None]
    c0 = _class_means(s0[:, None] * xh0, y, k)

    sch = Schedule(cfg.decay_factor, cfg.decay_every, "epoch")
    groups = {
        "x": ParamGroup("x", x0, cfg.lr_code, sch, sparse_rows=True),
        "s": ParamGroup("s", s0, cfg.lr_code, sch, sparse_rows=True),
        "weights": ParamGroup("weights", w0, cfg.lr_code, sch),
        "centers": ParamGroup("centers", c0, cfg.lr_code, sch),
        "basis": ParamGroup("basis", pca.basis, cfg.lr_basis, sch),
    }
    if cfg.optimize_mean:
        groups["mean"] = ParamGroup("mean", mean, cfg.lr_basis, sch)
    report = TrainReport(seed=cfg.seed)
    lam = dict(
        lambda_m=cfg.lambda_m if k >= 2 else 0.0,
        lambda_c=cfg.lambda_c if cfg.lambda_c > 0 and k >= 2 else 0.0,
        lambda_s=cfg.lambda_s,
        logit_scale=cfg.logit_scale,
        center_denominator=cfg.center_denominator,
    )
    names = list(groups)

    def current_mean():
        return groups["mean"].params if cfg.optimize_mean else mean

    def objective() -> float:
        # full-data L_f, evaluated in batch-sized chunks; every term is a
        # per-sample mean except quantities shared by all chunks
        total = 0.0
        for start in range(0, N, cfg.batch_size):
            idx = np.arange(start, min(start + cfg.batch_size, N))
            res = total_stage1_loss(
                groups["x"].params[idx], groups["s"].params[idx], y[idx],
                groups["weights"].params, groups["centers"].params,
                groups["basis"].params, current_mean(), X[idx], **lam,
            )
            total += res.value * idx.size
        return total / N

    best_value = objective()
    best_epoch = -1
    best = None
    report.initial_objective = best_value

    for epoch in range(cfg.epochs):
        order = rng.permutation(N)
        sums = {"L_m": 0.0, "L_c": 0.0, "L_s": 0.0, "L_f": 0.0}
        for b, start in enumerate(range(0, N, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            res = total_stage1_loss(
                groups["x"].params[idx], groups["s"].params[idx], y[idx],
                groups["weights"].params, groups["centers"].params,
                groups["basis"].params, current_mean(), X[idx], **lam,
            )
            if not np.isfinite(res.value):
                raise FloatingPointError(f"non-finite loss in epoch {epoch}, batch {b}")
            for name in ("x", "s"):
                groups[name].step(res.grads[name], epoch, rows=idx)
            for name in ("weights", "centers", "basis"):
                groups[name].step(res.grads[name], epoch)
            if cfg.optimize_mean:
                groups["mean"].step(res.grads["mean"], epoch)
            for key in sums:
                sums[key] += res.components[key] * idx.size
        value = objective()
        report.epochs.append({"epoch": epoch, **{key: v / N for key, v in sums.items()}, "objective": value})
        if value < best_value:
            best_value, best_epoch = value, epoch
            best = {name: groups[name].params.copy() for name in names}
    report.best_epoch = best_epoch

    if best is None:
        # nothing beat the starting point: the PCA initialization is returned as is
        model = pca
        codes = [ShapeCode(xi, si) for xi, si in zip(x0, s0)]
        weights, centers = w0, c0
        report.ortho_error_before_finalize = model.orthonormality_error()
    else:
        A = best["basis"]
        if cfg.optimize_mean:
            mean = best["mean"]
        x, s = best["x"], best["s"]
        weights, centers = best["weights"], best["centers"]
        report.negative_scales = int(np.sum(s < 0))
        if report.negative_scales:
            log.warning("%d samples ended with a negative scale", report.negative_scales)
        report.ortho_error_before_finalize = float(np.linalg.norm(A.T @ A - np.eye(A.shape[1])))
        Q = orthonormalize(A)
        M = Q.T @ A
        P = (s[:, None] * (x / np.linalg.norm(x, axis=1)[:, None])) @ M.T
        weights = weights @ M.T
        centers = centers @ M.T
        model = SphereFaceModel(mean, Q, pca.faces)
        codes = []
        for p in P:
            nrm = float(np.linalg.norm(p))
            if nrm <= EPS_NORM:
                e = np.zeros_like(p)
                e[0] = 1.0
                codes.append(ShapeCode(e, 0.0))
            else:
                codes.append(ShapeCode(p, nrm))
    report.ortho_error_final = model.orthonormality_error()
    report.rmse = mean_rmse(model, codes, X)
    report.wall_time = time.perf_counter() - t0
    return TrainResult(model, codes, weights, centers, report)


def pca_baseline(corpus: LabeledCorpus, d: int) -> TrainResult:
    """PCA model with projected codes, in the same shape as a training result."""
    model = fit_pca(corpus, d)
    x, s = initial_codes(model, corpus.matrix())
    codes = [ShapeCode(xi, si) for xi, si in zip(x, s)]
    report = TrainReport(ortho_error_final=model.orthonormality_error(), rmse=mean_rmse(model, codes, corpus.matrix()))
    return TrainResult(model, codes, np.zeros((0, d)), np.zeros((0, d)), report)


# ---------------------------------------------------------------------------
# codes CSV


def export_codes_csv(codes, labels, path) -> None:
    """Write ``label,s,x_0..x_{d-1}`` rows with the unit identity as ``x``.

    Floats use Python's shortest round-trip representation.
    """
    codes = list(codes)
    labels = list(np.asarray(labels).reshape(-1).tolist())
    if len(codes) != len(labels):
        raise ValueError(f"{len(codes)} codes but {len(labels)} labels")
    d = codes[0].d if codes else 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(["label", "s"] + [f"x_{j}" for j in range(d)]) + "\n")
        for lab, code in zip(labels, codes):
            if code.d != d:
                raise ValueError("codes differ in dimension")
            xh = identity(code)
            fh.write(",".join([str(int(lab)), repr(float(code.s))] + [repr(float(v)) for v in xh]) + "\n")


def read_codes_csv(path):
    """Inverse of :func:`export_codes_csv`; returns ``(codes, labels)``."""
    codes, labels = [], []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["label", "s"]:
            raise ValueError(f"{path}:1: expected header starting with 'label,s'")
        d = len(header) - 2
        if header[2:] != [f"x_{j}" for j in range(d)]:
            raise ValueError(f"{path}:1: expected columns x_0..x_{d - 1}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 2:
                raise ValueError(f"{path}:{lineno}: expected {d + 2} columns, got {len(row)}")
            try:
                lab = int(row[0])
                vals = [float(v) for v in row[1:]]
            except ValueError:
                raise ValueError(f"{path}:{lineno}: malformed number") from None
            if not np.all(np.isfinite(vals)):
                raise ValueError(f"{path}:{lineno}: non-finite value")
            labels.append(lab)
            codes.append(ShapeCode(vals[1:], vals[0]))
    return codes, np.asarray(labels, dtype=np.int64)
