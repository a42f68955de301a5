"""Fitting codes of a frozen model to meshes with Adam.

Each fit starts from the closed-form projection and runs the step-decay
schedule (0.02, halved every 128 iterations, 1000 iterations by default),
keeping the best iterate seen.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .losses import normalize_backward
from .mesh import Mesh, rmse_point_to_point
from .model import EPS_NORM, ShapeCode, SphereFaceModel, project, reconstruct
from .optim import ParamGroup, Schedule


@dataclass
class FitConfig:
    lr: float = 0.02
    decay_factor: float = 0.5
    decay_every: int = 128
    iterations: int = 1000
    seed: int = 0
    record_every: int = 100

    def validate(self) -> None:
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.iterations < 0 or self.record_every < 1:
            raise ValueError("iterations must be >= 0 and record_every >= 1")
        Schedule(self.decay_factor, self.decay_every, "iteration")


@dataclass
class FitResult:
    code: ShapeCode
    final_rmse: float
    final_loss: float
    projection_loss: float
    trajectory: list = field(default_factory=list)


def _loss_and_grads(model, target, x, s):
    xn = np.linalg.norm(x)
    if not xn > EPS_NORM:
        raise ValueError("latent vector collapsed to zero during fitting")
    xh = x / xn
    r = model.mean + model.basis @ (s * xh) - target
    loss = float(r @ r)
    gp = 2.0 * (model.basis.T @ r)
    gs = float(gp @ xh)
    gx = normalize_backward((s * gp)[None, :], xh[None, :], np.array([xn]))[0]
    return loss, gx, gs


def fit_mesh(model: SphereFaceModel, target: Mesh, config: FitConfig | None = None) -> FitResult:
    """Minimize ``||reconstruct(x, s) - target||^2`` over ``(x, s)``."""
    cfg = config or FitConfig()
    cfg.validate()
    if target.vertex_count != model.vertex_count:
        raise ValueError(f"mesh has {target.vertex_count} vertices, model expects {model.vertex_count}")
    t = target.vertices
    init = project(model, target)
    sch = Schedule(cfg.decay_factor, cfg.decay_every, "iteration")
    gx_group = ParamGroup("x", init.x, cfg.lr, sch)
    gs_group = ParamGroup("s", np.array([init.s]), cfg.lr, sch)

    loss, gx, gs = _loss_and_grads(model, t, gx_group.params, gs_group.params[0])
    proj_loss = loss
    best = (loss, gx_group.params.copy(), float(gs_group.params[0]))
    trajectory = [(0, loss)]
    for it in range(cfg.iterations):
        gx_group.step(gx, it)
        gs_group.step(np.array([gs]), it)
        loss, gx, gs = _loss_and_grads(model, t, gx_group.params, gs_group.params[0])
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite loss at iteration {it + 1}")
        if loss < best[0]:
            best = (loss, gx_group.params.copy(), float(gs_group.params[0]))
        if (it + 1) % cfg.record_every == 0 or it + 1 == cfg.iterations:
            trajectory.append((it + 1, loss))

    code = ShapeCode(best[1], best[2])
    rmse = rmse_point_to_point(reconstruct(model, code), target)
    return FitResult(code, rmse, best[0], proj_loss, trajectory)


@dataclass
class CorpusFit:
    codes: list
    labels: np.ndarray
    rmses: np.ndarray
    failures: list

    @property
    def ok(self) -> np.ndarray:
        return np.array([c is not None for c in self.codes], dtype=bool)

    @property
    def mean_rmse(self) -> float:
        good = self.rmses[self.ok]
        return float(good.mean()) if good.size else float("nan")

    def successful(self):
        """``(codes, labels, rmses)`` restricted to meshes that fitted."""
        keep = self.ok
        return [c for c in self.codes if c is not None], self.labels[keep], self.rmses[keep]


def fit_corpus(model: SphereFaceModel, corpus, config: FitConfig | None = None, labels=None, workers: int = 1) -> CorpusFit:
    """Fit every mesh independently; failures are collected, not raised.

    ``corpus`` is a :class:`~spherefm.corpus.LabeledCorpus` or a sequence of
    meshes (then ``labels`` may be given, default 0). Results are in input
    order regardless of ``workers``.
    """
    if hasattr(corpus, "meshes"):
        meshes = list(corpus.meshes)
        labels = corpus.labels if labels is None else labels
    else:
        meshes = list(corpus)
    if not meshes:
        raise ValueError("cannot fit an empty corpus")
    labels = np.zeros(len(meshes), np.int64) if labels is None else np.asarray(labels, dtype=np.int64)
    if labels.size != len(meshes):
        raise ValueError("labels and meshes differ in length")

    def one(i):
        try:
            return fit_mesh(model, meshes[i], config), None
        except (ValueError, FloatingPointError) as exc:
            return None, f"{type(exc).__name__}: {exc}"

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(len(meshes))))
    else:
        results = [one(i) for i in range(len(meshes))]

    codes, rmses, failures = [], np.full(len(meshes), np.nan), []
    for i, (res, err) in enumerate(results):
        if res is None:
            codes.append(None)
            failures.append({"index": i, "error": err})
        else:
            codes.append(res.code)
            rmses[i] = res.final_rmse
    return CorpusFit(codes, labels, rmses, failures)
