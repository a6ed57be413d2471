"""Clustering and classification metrics: k-means, silhouette, confusion, F1.

All distances are Euclidean. k-means uses k-means++ seeding with restarts;
the best restart is the lowest inertia, ties broken by lowest restart index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, NumericError


@dataclass
class ClusterAssignment:
    labels: np.ndarray     # int64 [n]
    centroids: np.ndarray  # [k, d]
    inertia: float
    n_iter: int
    restart_index: int


@dataclass
class F1Report:
    precision: np.ndarray  # per class
    recall: np.ndarray
    f1: np.ndarray
    macro_f1: float
    micro_f1: float


def _pairwise_sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # |x - c|^2 = |x|^2 - 2 x.c + |c|^2 ; clamp tiny negatives from cancellation
    sq = (points ** 2).sum(axis=1)[:, None] - 2.0 * points @ centers.T + (centers ** 2).sum(axis=1)[None, :]
    return np.maximum(sq, 0.0)


def _kmeans_pp_seed(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]), dtype=points.dtype)
    centers[0] = points[rng.integers(0, n)]
    d2 = _pairwise_sq_dists(points, centers[:1]).ravel()
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = rng.integers(0, n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers[j] = points[idx]
        d2 = np.minimum(d2, _pairwise_sq_dists(points, centers[j:j + 1]).ravel())
    return centers


def _lloyd(points: np.ndarray, centers: np.ndarray, max_iter: int):
    n, k = points.shape[0], centers.shape[0]
    labels = np.full(n, -1, dtype=np.int64)
    prev_inertia = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        d2 = _pairwise_sq_dists(points, centers)
        new_labels = d2.argmin(axis=1)
        # repair empty clusters: reseed at the point farthest from its centroid
        for cid in range(k):
            if not np.any(new_labels == cid):
                far = d2[np.arange(n), new_labels].argmax()
                centers[cid] = points[far]
                d2[:, cid] = ((points - centers[cid]) ** 2).sum(axis=1)
                new_labels = d2.argmin(axis=1)
        inertia = float(d2[np.arange(n), new_labels].sum())
        if inertia > prev_inertia * (1.0 + 1e-12) + 1e-12:
            raise NumericError(f"k-means inertia increased from {prev_inertia} to {inertia}")
        converged = np.array_equal(new_labels, labels)
        labels = new_labels
        prev_inertia = inertia
        for cid in range(k):
            mask = labels == cid
            if mask.any():
                centers[cid] = points[mask].mean(axis=0)
        if converged:
            break
    # final assignment against the last centroid update
    d2 = _pairwise_sq_dists(points, centers)
    labels = d2.argmin(axis=1)
    inertia = float(d2[np.arange(n), labels].sum())
    if inertia > prev_inertia * (1.0 + 1e-12) + 1e-12:
        raise NumericError(f"k-means inertia increased from {prev_inertia} to {inertia}")
    return labels, centers, inertia, it


def kmeans(points: np.ndarray, k: int, seed: int, restarts: int = 10,
           max_iter: int = 100) -> ClusterAssignment:
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise DataError(f"expected points [n, d], got shape {points.shape}")
    n = points.shape[0]
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if n < k:
        raise DataError(f"cannot form {k} clusters from {n} points")
    if not np.all(np.isfinite(points)):
        raise NumericError("k-means input contains non-finite values")
    if restarts < 1:
        raise ConfigError(f"restarts must be >= 1, got {restarts}")

    best = None
    for r, child in enumerate(np.random.SeedSequence(seed).spawn(restarts)):
        rng = np.random.default_rng(child)
        centers = _kmeans_pp_seed(points, k, rng)
        labels, centers, inertia, n_iter = _lloyd(points, centers.copy(), max_iter)
        if best is None or inertia < best.inertia:
            best = ClusterAssignment(labels=labels, centroids=centers,
                                     inertia=inertia, n_iter=n_iter, restart_index=r)
    return best


# -- silhouette -----------------------------------------------------------------

def silhouette_values(points: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-sample silhouette s = (b - a) / max(a, b); singletons score 0,
    as does the degenerate a == b == 0 case."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if points.ndim != 2 or labels.shape != (points.shape[0],):
        raise DataError(f"points {points.shape} / labels {labels.shape} mismatch")
    uniq, counts = np.unique(labels, return_counts=True)
    if uniq.size < 2:
        raise DataError(f"silhouette needs >= 2 non-empty clusters, got {uniq.size}")

    # exact per-pair differences, not the Gram-matrix shortcut: its
    # cancellation error is too coarse for a metric compared at 1e-9
    n = points.shape[0]
    dists = np.empty((n, n), dtype=np.float64)
    block = max(1, 4_000_000 // max(1, n * points.shape[1]))
    for i in range(0, n, block):
        diff = points[i:i + block, None, :] - points[None, :, :]
        dists[i:i + block] = np.sqrt((diff * diff).sum(axis=2))
    out = np.zeros(n, dtype=np.float64)
    size_of = dict(zip(uniq.tolist(), counts.tolist()))
    for i in range(n):
        own = labels[i]
        m = size_of[int(own)]
        if m == 1:
            continue
        a = dists[i, labels == own].sum() / (m - 1)
        b = min(dists[i, labels == other].mean() for other in uniq if other != own)
        denom = max(a, b)
        out[i] = 0.0 if denom == 0.0 else (b - a) / denom
    return out


def silhouette_score(points: np.ndarray, labels: np.ndarray) -> float:
    return float(silhouette_values(points, labels).mean())


# -- classification -----------------------------------------------------------

def confusion_matrix(true_labels: np.ndarray, predicted: np.ndarray,
                     n_classes: int) -> np.ndarray:
    true_labels = np.asarray(true_labels, dtype=np.int64)
    predicted = np.asarray(predicted, dtype=np.int64)
    if true_labels.shape != predicted.shape or true_labels.ndim != 1:
        raise DataError(f"label shape mismatch: {true_labels.shape} vs {predicted.shape}")
    for name, arr in (("true", true_labels), ("predicted", predicted)):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise DataError(f"{name} labels out of range [0, {n_classes})")
    mat = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(mat, (true_labels, predicted), 1)
    return mat


def f1_scores(confusion: np.ndarray) -> F1Report:
    confusion = np.asarray(confusion, dtype=np.int64)
    if confusion.ndim != 2 or confusion.shape[0] != confusion.shape[1]:
        raise DataError(f"confusion matrix must be square, got {confusion.shape}")
    tp = np.diag(confusion).astype(np.float64)
    fp = confusion.sum(axis=0) - tp
    fn = confusion.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        recall = np.where(tp + fn > 0, tp / (tp + fn), 0.0)
        pr = precision + recall
        f1 = np.where(pr > 0, 2.0 * precision * recall / np.where(pr > 0, pr, 1.0), 0.0)
    total = confusion.sum()
    micro = float(tp.sum() / total) if total > 0 else 0.0
    return F1Report(precision=precision, recall=recall, f1=f1,
                    macro_f1=float(f1.mean()), micro_f1=micro)
