"""Adam with parameter groups and step-decay schedules, plus a central
finite-difference gradient checker.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    """First/second moment buffers and step count.

    ``t`` is a scalar for dense updates, or an integer array with one
    counter per row when rows are updated sparsely (per-sample codes).
    """

    m: np.ndarray
    v: np.ndarray
    t: int | np.ndarray = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, per_row: bool = False, **kw) -> "AdamState":
        p = np.asarray(params, dtype=np.float64)
        t = np.zeros(p.shape[0], dtype=np.int64) if per_row else 0
        return cls(np.zeros_like(p), np.zeros_like(p), t, **kw)


def adam_step(state: AdamState, params, grads, lr: float, rows=None) -> np.ndarray:
    """One Adam update with bias correction; returns the new parameters.

    ``state`` is updated in place. With ``rows`` given, only those rows of
    ``params`` (and their moments and step counters) change; this needs a
    per-row ``state.t``.
    """
    p = np.array(params, dtype=np.float64)
    g = np.asarray(grads, dtype=np.float64)
    if not lr > 0:
        raise ValueError("learning rate must be positive")
    if rows is None:
        if g.shape != p.shape or state.m.shape != p.shape:
            raise ValueError(f"shape mismatch: params {p.shape}, grads {g.shape}, state {state.m.shape}")
    else:
        rows = np.asarray(rows, dtype=np.int64)
        if g.shape != (rows.size,) + p.shape[1:] or state.m.shape != p.shape:
            raise ValueError(f"shape mismatch for sparse update: grads {g.shape}, rows {rows.size}")
        if np.ndim(state.t) != 1:
            raise ValueError("sparse updates need per-row step counters")
    if not np.all(np.isfinite(g)):
        raise ValueError("non-finite gradient")

    b1, b2 = state.beta1, state.beta2
    if rows is None:
        state.t = state.t + 1
        state.m *= b1
        state.m += (1.0 - b1) * g
        state.v *= b2
        state.v += (1.0 - b2) * g * g
        if np.ndim(state.t):
            t = state.t.reshape((-1,) + (1,) * (p.ndim - 1))
        else:
            t = state.t
        mhat = state.m / (1.0 - b1**t)
        vhat = state.v / (1.0 - b2**t)
        p -= lr * mhat / (np.sqrt(vhat) + state.eps)
        return p

    state.t[rows] += 1
    t = state.t[rows].reshape((-1,) + (1,) * (p.ndim - 1))
    m = b1 * state.m[rows] + (1.0 - b1) * g
    v = b2 * state.v[rows] + (1.0 - b2) * g * g
    state.m[rows] = m
    state.v[rows] = v
    mhat = m / (1.0 - b1**t)
    vhat = v / (1.0 - b2**t)
    p[rows] -= lr * mhat / (np.sqrt(vhat) + state.eps)
    return p


@dataclass(frozen=True)
class Schedule:
    """Step decay: multiply by ``decay_factor`` every ``decay_every`` units."""

    decay_factor: float = 1.0
    decay_every: int = 1
    unit: str = "epoch"

    def __post_init__(self):
        if not 0 < self.decay_factor <= 1:
            raise ValueError("decay_factor must lie in (0, 1]")
        if int(self.decay_every) < 1:
            raise ValueError("decay_every must be a positive integer")
        if self.unit not in ("epoch", "iteration"):
            raise ValueError("schedule unit must be 'epoch' or 'iteration'")


@dataclass
class ParamGroup:
    name: str
    params: np.ndarray
    base_lr: float
    schedule: Schedule = field(default_factory=Schedule)
    state: AdamState | None = None
    sparse_rows: bool = False

    def __post_init__(self):
        if not self.base_lr > 0:
            raise ValueError(f"group {self.name!r}: base_lr must be positive")
        self.params = np.array(self.params, dtype=np.float64)
        if self.state is None:
            self.state = AdamState.zeros_like(self.params, per_row=self.sparse_rows)

    def step(self, grads, step_index: int, rows=None) -> None:
        lr = scheduled_lr(self, step_index)
        self.params = adam_step(self.state, self.params, grads, lr, rows)


def scheduled_lr(group, step: int) -> float:
    """``base_lr * decay_factor ** floor(step / decay_every)``."""
    if step < 0:
        raise ValueError("step must be >= 0")
    sch = group.schedule
    return group.base_lr * sch.decay_factor ** (int(step) // int(sch.decay_every))


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradientCheckReport:
    max_rel_error: float
    worst_index: tuple
    analytic: np.ndarray
    numeric: np.ndarray
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def check_gradients(loss_fn, point, h: float = 1e-6, tol: float = 1e-4) -> GradientCheckReport:
    """Compare ``loss_fn``'s analytic gradient with central differences.

    ``loss_fn(p)`` must return ``(value, grad)`` with ``grad`` shaped like
    ``p``. The relative error per coordinate is
    ``|a - n| / max(|a|, |n|, 1e-12)``.
    """
    if not h > 0:
        raise ValueError("step h must be positive")
    p0 = np.array(point, dtype=np.float64)
    _, analytic = loss_fn(p0.copy())
    analytic = np.asarray(analytic, dtype=np.float64).reshape(p0.shape)
    numeric = np.zeros_like(p0)
    flat = p0.reshape(-1)
    for k in range(flat.size):
        probe = flat.copy()
        probe[k] = flat[k] + h
        fp, _ = loss_fn(probe.reshape(p0.shape))
        probe[k] = flat[k] - h
        fm, _ = loss_fn(probe.reshape(p0.shape))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"non-finite loss at probe coordinate {k}")
        numeric.reshape(-1)[k] = (fp - fm) / (2.0 * h)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-12)
    rel = np.abs(analytic - numeric) / denom
    worst = np.unravel_index(int(np.argmax(rel)), rel.shape) if rel.size else ()
    return GradientCheckReport(float(rel.max()) if rel.size else 0.0, tuple(int(i) for i in worst), analytic, numeric, tol)


def check_loss_gradients(fn, inputs: dict, wrt, h: float = 1e-6, tol: float = 1e-4) -> dict:
    """Run :func:`check_gradients` for each named argument of a loss.

    ``fn(**inputs)`` must return an object with ``value`` and ``grads``
    (a :class:`~spherefm.losses.LossValueAndGrads`). Returns one report per
    name in ``wrt``.
    """
    reports = {}
    for name in wrt:
        def f(p, name=name):
            args = dict(inputs)
            args[name] = p
            res = fn(**args)
            return res.value, res.grads[name]

        reports[name] = check_gradients(f, inputs[name], h, tol)
    return reports
