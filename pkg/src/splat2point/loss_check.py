"""Randomized gradient and reference checks for the loss kernels.

Gradients are compared with central finite differences (h = 1e-5, float64).
The Lovasz term is piecewise smooth: it has kinks wherever two errors of the
same class coincide. Instances whose errors come closer than ``KINK_GAP``
would let a finite-difference step straddle a kink, so they are redrawn; the
number of redraws is reported.
"""
from __future__ import annotations

import itertools

import numpy as np

from .losses import (
    BouBatch,
    FeatureBatch,
    SemBatch,
    bou_loss,
    central_difference,
    distill_loss,
    lovasz_softmax_probs,
    lovasz_softmax_reference,
    relative_error,
    sem_loss,
    softmax,
)

H = 1e-5
KINK_GAP = 1e-3
FD_TOL = 1e-4


def _distill_instance(rng):
    n, d, d2 = rng.integers(1, 7), rng.integers(1, 6), rng.integers(1, 6)
    return FeatureBatch(rng.normal(size=(n, d)), rng.normal(size=(n, d2)), rng.normal(size=(d2, d)), rng.normal(size=d2))


def _min_error_gap(logits, labels) -> float:
    p = softmax(logits)
    gap = np.inf
    for k in range(p.shape[1]):
        e = np.sort(np.abs((labels == k) - p[:, k]))
        if len(e) > 1:
            gap = min(gap, float(np.min(np.diff(e))))
    return gap


def _sem_instance(rng):
    redraws = 0
    while True:
        n, c = rng.integers(1, 9), rng.integers(2, 5)
        logits = rng.normal(scale=2.0, size=(n, c))
        labels = rng.integers(0, c, n)
        if _min_error_gap(logits, labels) > KINK_GAP:
            return SemBatch(logits, labels), redraws
        redraws += 1


def _bou_instance(rng):
    n = rng.integers(1, 10)
    return BouBatch(rng.normal(scale=2.0, size=n), rng.integers(0, 2, n))


def check_gradients(seed: int = 0, trials: int = 100) -> dict:
    rng = np.random.default_rng(seed)
    report = {}

    errs, values = [], []
    for _ in range(trials):
        batch = _distill_instance(rng)
        loss, grad = distill_loss(batch)

        def f(x, batch=batch):
            return distill_loss(FeatureBatch(x, batch.teacher, batch.W, batch.b))[0]

        errs.append(relative_error(grad, central_difference(f, batch.student, H)))
        values.append(loss)
    report["distill"] = {"max_rel_err": max(errs), "mean_value": float(np.mean(values))}

    errs, values, redraws = [], [], 0
    for _ in range(trials):
        batch, r = _sem_instance(rng)
        redraws += r
        loss, grad = sem_loss(batch)

        def f(x, batch=batch):
            return sem_loss(SemBatch(x, batch.labels))[0]

        errs.append(relative_error(grad, central_difference(f, batch.logits, H)))
        values.append(loss)
    report["sem"] = {"max_rel_err": max(errs), "mean_value": float(np.mean(values)), "kink_redraws": redraws}

    errs, values = [], []
    for _ in range(trials):
        batch = _bou_instance(rng)
        loss, grad = bou_loss(batch)

        def f(x, batch=batch):
            return bou_loss(BouBatch(x, batch.targets))[0]

        errs.append(relative_error(grad, central_difference(f, batch.logits, H)))
        values.append(loss)
    report["bou"] = {"max_rel_err": max(errs), "mean_value": float(np.mean(values))}
    return report


def check_lovasz_patterns(seed: int = 0, max_n: int = 6, max_c: int = 3) -> dict:
    """Compare the sorted-errors Lovasz term with the reference on every label pattern."""
    rng = np.random.default_rng(seed)
    worst, count = 0.0, 0
    for n in range(1, max_n + 1):
        for c in range(2, max_c + 1):
            probs = softmax(rng.normal(scale=2.0, size=(n, c)))
            for pattern in itertools.product(range(c), repeat=n):
                labels = np.array(pattern)
                fast = lovasz_softmax_probs(probs, labels)[0]
                worst = max(worst, abs(fast - lovasz_softmax_reference(probs, labels)))
                count += 1
    return {"patterns": count, "max_abs_diff": worst}


def run(seed: int = 0, trials: int = 100) -> dict:
    report = check_gradients(seed, trials)
    report["lovasz_reference"] = check_lovasz_patterns(seed)
    fd_max = max(report[k]["max_rel_err"] for k in ("distill", "sem", "bou"))
    report["fd_max_rel_err"] = fd_max
    report["passed"] = bool(fd_max <= FD_TOL and report["lovasz_reference"]["max_abs_diff"] <= 1e-12)
    report["seed"], report["trials"], report["h"] = seed, trials, H
    return report
