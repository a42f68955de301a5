"""Stage-1 training losses with analytic gradients.

Every loss returns a :class:`LossValueAndGrads` whose ``grads`` mapping
holds one array per optimizable input, shaped like that input. Batch
quantities are row-stacked: ``x`` is ``(m, d)``, ``s`` is ``(m,)``,
classifier ``weights`` and ``centers`` are ``(n_classes, d)``, the basis is
``(3n, d)`` and targets are ``(m, 3n)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import EPS_NORM

CENTER_DENOMINATORS = ("pair_mean", "paper_literal")


@dataclass
class LossValueAndGrads:
    value: float
    grads: dict = field(default_factory=dict)
    components: dict = field(default_factory=dict)


@dataclass(frozen=True)
class MarginParams:
    """Target-logit margins: ``scale * cos(alpha * theta + beta) - gamma``.

    ``alpha`` is multiplicative angular (SphereFace-like), ``beta`` additive
    angular (ArcFace-like, radians), ``gamma`` additive cosine (CosFace-like).
    """

    alpha: float = 1.0
    beta: float = 0.0
    gamma: float = 0.0
    logit_scale: float = 1.0

    def __post_init__(self):
        if self.alpha < 1:
            raise ValueError("alpha must be >= 1")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if not self.logit_scale > 0:
            raise ValueError("logit_scale must be > 0")

    @property
    def angular(self) -> bool:
        return self.alpha != 1.0 or self.beta != 0.0


def normalize_rows(v, what="vector"):
    """Return ``(v / ||v||, ||v||)`` row-wise; near-zero rows are an error."""
    v = np.asarray(v, dtype=np.float64)
    norms = np.linalg.norm(v, axis=1)
    bad = np.flatnonzero(~(norms > EPS_NORM))
    if bad.size:
        raise ValueError(f"{what} row {int(bad[0])} has near-zero norm {norms[bad[0]]:.3g}")
    return v / norms[:, None], norms


def normalize_backward(g, unit, norms):
    """Chain ``g = dL/d(v/||v||)`` through the normalization: ``(I - u u^T) g / ||v||``."""
    radial = np.einsum("ij,ij->i", g, unit)
    return (g - radial[:, None] * unit) / norms[:, None]


def _check_labels(labels, n_classes, m):
    y = np.asarray(labels)
    if y.shape != (m,):
        raise ValueError(f"expected {m} labels, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        raise ValueError("labels must be integers")
    if m and (y.min() < 0 or y.max() >= n_classes):
        raise ValueError(f"label out of range [0, {n_classes})")
    return y.astype(np.int64)


def _cosine_softmax(x, labels, weights, margins: MarginParams):
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ValueError(f"feature/weight shape mismatch: {x.shape} vs {w.shape}")
    m = x.shape[0]
    if m == 0:
        raise ValueError("empty batch")
    y = _check_labels(labels, w.shape[0], m)
    xh, xn = normalize_rows(x, "feature")
    wh, wn = normalize_rows(w, "class weight")
    rows = np.arange(m)

    cos = xh @ wh.T
    logits = margins.logit_scale * cos
    # d(target logit)/d(cos) per sample
    dtarget = np.full(m, margins.logit_scale)
    if margins.angular:
        c = np.clip(cos[rows, y], -1.0, 1.0)
        theta = np.arccos(c)
        phi = margins.alpha * theta + margins.beta
        if np.any(phi > np.pi):
            raise ValueError("target angle with margin leaves the monotone range [0, pi] of cos")
        sin_t = np.sin(theta)
        if np.any(sin_t <= EPS_NORM):
            raise ValueError("angular margin gradient undefined at theta = 0")
        logits[rows, y] = margins.logit_scale * np.cos(phi)
        dtarget = margins.logit_scale * margins.alpha * np.sin(phi) / sin_t
    if margins.gamma:
        logits[rows, y] -= margins.gamma

    zmax = logits.max(axis=1, keepdims=True)
    ez = np.exp(logits - zmax)
    denom = ez.sum(axis=1)
    lse = np.log(denom) + zmax[:, 0]
    value = float(np.mean(lse - logits[rows, y]))

    glog = ez / denom[:, None]
    glog[rows, y] -= 1.0
    glog /= m
    gcos = margins.logit_scale * glog
    gcos[rows, y] = glog[rows, y] * dtarget

    gx = normalize_backward(gcos @ wh, xh, xn)
    gw = normalize_backward(gcos.T @ xh, wh, wn)
    return LossValueAndGrads(value, {"x": gx, "weights": gw})


def norm_softmax_loss(x, labels, weights, logit_scale: float = 1.0) -> LossValueAndGrads:
    """Softmax cross-entropy on cosines between normalized features and class weights.

    Parameters
    ----------
    x : (m, d) array
        Raw latent vectors; only their directions matter.
    labels : (m,) int array
    weights : (n_classes, d) array
        Class weight rows, normalized internally.
    logit_scale : float
        Multiplies every cosine before the softmax. 1 keeps the plain
        normalized-softmax form.
    """
    return _cosine_softmax(x, labels, weights, MarginParams(logit_scale=logit_scale))


def margin_softmax_loss(x, weights, margins: MarginParams, labels) -> LossValueAndGrads:
    """Generalized margin softmax; ``MarginParams()`` reduces to :func:`norm_softmax_loss`."""
    return _cosine_softmax(x, labels, weights, margins)


def _center_spread(centers, mode):
    """Mean squared distance between distinct centers, and its gradient."""
    k = centers.shape[0]
    total = centers.sum(axis=0)
    sq = np.einsum("ij,ij->i", centers, centers)
    # sum over unordered pairs of ||c_a - c_b||^2 = k * sum ||c||^2 - ||sum c||^2
    pair_sum = k * sq.sum() - total @ total
    dpair = 2.0 * (k * centers - total)
    if mode == "pair_mean":
        scale = 2.0 / (k * (k - 1))
    elif mode == "paper_literal":
        # (1/k) * sum over ordered pairs i != j
        scale = 2.0 / k
    else:
        raise ValueError(f"unknown center denominator {mode!r}; use one of {CENTER_DENOMINATORS}")
    return scale * pair_sum, scale * dpair


def center_loss(x, s, labels, centers, denominator: str = "pair_mean") -> LossValueAndGrads:
    """Squared distance of ``s * x/||x||`` to its class center, over center spread.

    The numerator is the batch mean of ``||s_i xhat_i - c_{y_i}||^2``; the
    denominator is the mean squared distance between distinct centers
    (``denominator="pair_mean"``) or the sum over ordered pairs divided by the
    number of classes (``"paper_literal"``).
    """
    x = np.asarray(x, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64).reshape(-1)
    c = np.asarray(centers, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] < 2:
        raise ValueError("center loss needs at least 2 class centers")
    if x.ndim != 2 or x.shape[1] != c.shape[1] or s.shape != (x.shape[0],):
        raise ValueError("center loss input shapes are inconsistent")
    m = x.shape[0]
    if m == 0:
        raise ValueError("empty batch")
    y = _check_labels(labels, c.shape[0], m)

    spread, dspread = _center_spread(c, denominator)
    if not spread > 0:
        raise ValueError("class centers coincide: zero denominator")
    xh, xn = normalize_rows(x, "feature")
    r = s[:, None] * xh - c[y]
    num = float(np.einsum("ij,ij->", r, r)) / m
    value = num / spread

    gp = (2.0 / m) * r / spread
    gc = np.zeros_like(c)
    np.add.at(gc, y, -gp)
    gc -= (num / spread**2) * dspread
    gs = np.einsum("ij,ij->i", gp, xh)
    gx = normalize_backward(s[:, None] * gp, xh, xn)
    return LossValueAndGrads(value, {"x": gx, "s": gs, "centers": gc})


def recon_ortho_loss(basis, mean, x, s, targets) -> LossValueAndGrads:
    """Batch-mean squared reconstruction error plus ``||A^T A - I||_F^2``.

    Reconstructions are ``mean + A (s_i x_i / ||x_i||)``; the error is the
    full squared Euclidean norm over all ``3n`` coordinates.
    """
    A = np.asarray(basis, dtype=np.float64)
    mu = np.asarray(mean, dtype=np.float64).reshape(-1)
    x = np.asarray(x, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64).reshape(-1)
    T = np.asarray(targets, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != mu.size:
        raise ValueError("basis and mean dimensions disagree")
    m = x.shape[0] if x.ndim == 2 else -1
    if m <= 0 or x.shape[1] != A.shape[1] or s.shape != (m,) or T.shape != (m, mu.size):
        raise ValueError("reconstruction loss input shapes are inconsistent")

    xh, xn = normalize_rows(x, "feature")
    P = s[:, None] * xh
    R = mu + P @ A.T - T
    gram_err = A.T @ A - np.eye(A.shape[1])
    rec = float(np.einsum("ij,ij->", R, R)) / m
    ortho = float(np.einsum("ij,ij->", gram_err, gram_err))

    gP = (2.0 / m) * (R @ A)
    gA = (2.0 / m) * (R.T @ P) + 4.0 * (A @ gram_err)
    gmean = (2.0 / m) * R.sum(axis=0)
    gs = np.einsum("ij,ij->i", gP, xh)
    gx = normalize_backward(s[:, None] * gP, xh, xn)
    return LossValueAndGrads(
        rec + ortho,
        {"basis": gA, "x": gx, "s": gs, "mean": gmean},
        {"reconstruction": rec, "orthogonality": ortho},
    )


def total_stage1_loss(
    x, s, labels, weights, centers, basis, mean, targets,
    lambda_m=1.0, lambda_c=1.0, lambda_s=1.0,
    logit_scale=1.0, center_denominator="pair_mean", margins=None,
) -> LossValueAndGrads:
    """``lambda_m * L_m + lambda_c * L_c + lambda_s * L_s`` with summed gradients.

    Components with a zero weight are skipped entirely, so their inputs need
    not satisfy that component's preconditions.
    """
    x = np.asarray(x, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64).reshape(-1)
    grads = {
        "x": np.zeros_like(x),
        "s": np.zeros_like(s),
        "weights": np.zeros(np.shape(weights)),
        "centers": np.zeros(np.shape(centers)),
        "basis": np.zeros(np.shape(basis)),
        "mean": np.zeros(np.size(mean)),
    }
    parts = {"L_m": 0.0, "L_c": 0.0, "L_s": 0.0}
    value = 0.0
    terms = []
    if lambda_m:
        if margins is None:
            lm = norm_softmax_loss(x, labels, weights, logit_scale)
        else:
            lm = margin_softmax_loss(x, weights, margins, labels)
        terms.append(("L_m", lambda_m, lm))
    if lambda_c:
        terms.append(("L_c", lambda_c, center_loss(x, s, labels, centers, center_denominator)))
    if lambda_s:
        terms.append(("L_s", lambda_s, recon_ortho_loss(basis, mean, x, s, targets)))
    # fixed accumulation order m, c, s
    for name, lam, res in terms:
        parts[name] = res.value
        value += lam * res.value
        for key, g in res.grads.items():
            grads[key] += lam * g
    parts["L_f"] = value
    return LossValueAndGrads(value, grads, parts)
