"""Training-loss kernels with analytic gradients.

Each kernel returns ``(loss, grad)`` in float64. The kernels are plain numpy so
they can be checked against finite differences and brute-force references;
no autodiff is involved.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .types import ValidationError

EPS_N = 1e-12
DICE_SMOOTH = 1.0


@dataclass
class FeatureBatch:
    """Student features, teacher features and the affine map ``x -> x @ W.T + b``."""

    student: np.ndarray  # (N, D)
    teacher: np.ndarray  # (N, D')
    W: np.ndarray  # (D', D)
    b: np.ndarray | None = None

    def __post_init__(self):
        self.student = np.atleast_2d(np.asarray(self.student, dtype=np.float64))
        self.teacher = np.atleast_2d(np.asarray(self.teacher, dtype=np.float64))
        self.W = np.atleast_2d(np.asarray(self.W, dtype=np.float64))
        n, d = self.student.shape
        if self.teacher.shape[0] != n:
            raise ValidationError("student and teacher row counts differ")
        if self.W.shape != (self.teacher.shape[1], d):
            raise ValidationError(f"map has shape {self.W.shape}, expected {(self.teacher.shape[1], d)}")
        self.b = np.zeros(self.W.shape[0]) if self.b is None else np.asarray(self.b, dtype=np.float64)

    @classmethod
    def identity(cls, student, teacher) -> "FeatureBatch":
        student = np.atleast_2d(np.asarray(student, dtype=np.float64))
        return cls(student, teacher, np.eye(student.shape[1]))


@dataclass
class SemBatch:
    logits: np.ndarray  # (N, C)
    labels: np.ndarray  # (N,)
    ignore_id: int | None = None

    def __post_init__(self):
        self.logits = np.atleast_2d(np.asarray(self.logits, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        n, c = self.logits.shape
        if c < 2:
            raise ValidationError("need at least two classes")
        if len(self.labels) != n:
            raise ValidationError("labels and logits differ in length")
        valid = self.labels != self.ignore_id if self.ignore_id is not None else np.ones(n, bool)
        if np.any((self.labels[valid] < 0) | (self.labels[valid] >= c)):
            raise ValidationError(f"label outside [0, {c}) that is not the ignore id")

    @property
    def valid(self) -> np.ndarray:
        if self.ignore_id is None:
            return np.ones(len(self.labels), dtype=bool)
        return self.labels != self.ignore_id


@dataclass
class BouBatch:
    logits: np.ndarray  # (N,)
    targets: np.ndarray  # (N,) in {0, 1}

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64).reshape(-1)
        self.targets = np.asarray(self.targets, dtype=np.float64).reshape(-1)
        if len(self.targets) != len(self.logits):
            raise ValidationError("targets and logits differ in length")
        if not np.all((self.targets == 0) | (self.targets == 1)):
            raise ValidationError("boundary targets must be 0 or 1")


def _rownorm(a: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("ij,ij->i", a, a))


def distill_loss(batch: FeatureBatch) -> tuple[float, np.ndarray]:
    """Mean ``1 - cos(phi(f_p), f_a)``; gradient w.r.t. the student features.

    Rows where either vector has norm below 1e-12 count as loss 1 with zero
    gradient.
    """
    u = batch.student @ batch.W.T + batch.b
    a = batch.teacher
    n = len(u)
    if n == 0:
        return 0.0, np.zeros_like(batch.student)
    nu, na = _rownorm(u), _rownorm(a)
    ok = (nu > EPS_N) & (na > EPS_N)
    dot = np.einsum("ij,ij->i", u, a)
    cos = np.where(ok, dot / np.where(ok, nu * na, 1.0), 0.0)
    loss = float(np.sum(1.0 - cos) / n)
    nu_s, na_s = np.where(ok, nu, 1.0), np.where(ok, na, 1.0)
    dcos_du = a / (nu_s * na_s)[:, None] - (cos / (nu_s * nu_s))[:, None] * u
    du = np.where(ok[:, None], -dcos_du / n, 0.0)
    return loss, du @ batch.W


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(batch: SemBatch) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy over non-ignored points."""
    valid = batch.valid
    grad = np.zeros_like(batch.logits)
    m = int(valid.sum())
    if m == 0:
        return 0.0, grad
    z = batch.logits[valid]
    y = batch.labels[valid]
    shifted = z - z.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = float(-logp[np.arange(m), y].sum() / m)
    g = np.exp(logp)
    g[np.arange(m), y] -= 1.0
    grad[valid] = g / m
    return loss, grad


def lovasz_grad(fg_sorted: np.ndarray) -> np.ndarray:
    """Increments of the Jaccard loss along a descending error ordering."""
    gts = fg_sorted.sum()
    intersection = gts - np.cumsum(fg_sorted)
    union = gts + np.cumsum(1.0 - fg_sorted)
    jaccard = 1.0 - intersection / union
    jaccard[1:] = jaccard[1:] - jaccard[:-1]
    return jaccard


def lovasz_softmax_probs(probs: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Lovasz-softmax on probabilities, averaged over classes present in ``labels``.

    Returns ``(loss, grad_wrt_probs, per_class)``; ``per_class`` is NaN for absent classes.
    """
    n, c = probs.shape
    grad = np.zeros_like(probs)
    per_class = np.full(c, np.nan)
    present = [k for k in range(c) if np.any(labels == k)]
    if not present:
        return 0.0, grad, per_class
    for k in present:
        fg = (labels == k).astype(np.float64)
        errors = np.abs(fg - probs[:, k])
        order = np.argsort(-errors, kind="stable")
        g = lovasz_grad(fg[order])
        per_class[k] = float(errors[order] @ g)
        # d|fg - p|/dp is -1 on foreground, +1 elsewhere.
        grad[order, k] += g * np.where(fg[order] > 0, -1.0, 1.0)
    loss = float(np.nansum(per_class) / len(present))
    return loss, grad / len(present), per_class


def lovasz_softmax(batch: SemBatch) -> tuple[float, np.ndarray]:
    valid = batch.valid
    grad = np.zeros_like(batch.logits)
    if not valid.any():
        return 0.0, grad
    p = softmax(batch.logits[valid])
    loss, gp, _ = lovasz_softmax_probs(p, batch.labels[valid])
    # Softmax Jacobian-vector product: p * (g - <g, p>).
    grad[valid] = p * (gp - np.einsum("ij,ij->i", gp, p)[:, None])
    return loss, grad


def sem_loss(batch: SemBatch) -> tuple[float, np.ndarray]:
    """Cross-entropy plus Lovasz-softmax on the same logits."""
    ce, g_ce = cross_entropy(batch)
    lov, g_lov = lovasz_softmax(batch)
    return ce + lov, g_ce + g_lov


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def bce_with_logits(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    n = len(logits)
    if n == 0:
        return 0.0, np.zeros(0)
    z, t = logits, targets
    per = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    return float(per.sum() / n), (sigmoid(z) - t) / n


def dice_loss(probs: np.ndarray, targets: np.ndarray, smooth: float = DICE_SMOOTH) -> tuple[float, np.ndarray]:
    """``1 - (2 sum(p t) + s) / (sum p + sum t + s)`` and its gradient w.r.t. ``probs``."""
    p = np.asarray(probs, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    inter = float(np.sum(p * t))
    denom = float(np.sum(p) + np.sum(t)) + smooth
    num = 2.0 * inter + smooth
    grad = -(2.0 * t * denom - num) / (denom * denom)
    return 1.0 - num / denom, grad


def bou_loss(batch: BouBatch) -> tuple[float, np.ndarray]:
    """Binary cross-entropy plus Dice on sigmoid probabilities."""
    bce, g_bce = bce_with_logits(batch.logits, batch.targets)
    p = sigmoid(batch.logits)
    dice, g_p = dice_loss(p, batch.targets)
    return bce + dice, g_bce + g_p * p * (1.0 - p)


def total_loss(sem: float, bou: float, distill: float, lambda_b: float = 0.9, lambda_d: float = 0.4) -> float:
    if lambda_b < 0 or lambda_d < 0:
        raise ValidationError("loss weights must be non-negative")
    return sem + lambda_b * bou + lambda_d * distill


# ---------------------------------------------------------------------------
# References used for checking: finite differences and a direct evaluation of
# the Lovasz extension of the Jaccard set loss.


def central_difference(fn, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn(x)
        flat[i] = orig - h
        fm = fn(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max abs difference scaled by the largest gradient entry (floored at 1e-8)."""
    scale = max(np.max(np.abs(analytic), initial=0.0), np.max(np.abs(numeric), initial=0.0), 1e-8)
    return float(np.max(np.abs(analytic - numeric), initial=0.0) / scale)


def jaccard_set_loss(mistakes: np.ndarray, fg: np.ndarray) -> float:
    """``|M| / |F u M|`` for mistake set ``M`` and foreground set ``F`` (boolean masks)."""
    m = int(np.sum(mistakes))
    union = int(np.sum(fg | mistakes))
    return 0.0 if union == 0 else m / union


def lovasz_extension_reference(errors: np.ndarray, fg: np.ndarray) -> float:
    """Lovasz extension of the Jaccard set loss at ``errors`` in [0, 1]^N.

    Evaluated as the Choquet integral ``int_0^1 Delta({i : e_i >= t}) dt``:
    the integrand is constant between consecutive distinct error values.
    """
    e = np.asarray(errors, dtype=np.float64)
    fg = np.asarray(fg, dtype=bool)
    levels = np.unique(np.concatenate([[0.0], e]))
    total = 0.0
    for lo, hi in zip(levels[:-1], levels[1:]):
        total += (hi - lo) * jaccard_set_loss(e >= hi, fg)
    return total


def lovasz_softmax_reference(probs: np.ndarray, labels: np.ndarray) -> float:
    c = probs.shape[1]
    vals = []
    for k in range(c):
        fg = labels == k
        if fg.any():
            vals.append(lovasz_extension_reference(np.abs(fg - probs[:, k]), fg))
    return float(np.mean(vals)) if vals else 0.0
