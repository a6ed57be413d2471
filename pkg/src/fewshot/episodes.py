"""Episodic N-way K-shot sampling and pair sampling for contrastive training.

Episodes carry dataset records plus local labels; pixel loading and
embedding are the caller's concern so embeddings can be cached across
episodes when the extractor is frozen.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError


@dataclass
class Episode:
    """Support records ordered by (class, shot); query records shuffled.
    Labels are local (0..n_way-1); class_ids maps local -> dataset class id."""

    support_records: list
    query_records: list
    support_labels: np.ndarray  # int64 [n_way * k_shot]
    query_labels: np.ndarray    # int64 [n_way * q_queries]
    class_ids: list
    n_way: int
    k_shot: int

    def one_hot_support(self, dtype: str = "f32") -> np.ndarray:
        return one_hot(self.support_labels, self.n_way, dtype)

    def one_hot_query(self, dtype: str = "f32") -> np.ndarray:
        return one_hot(self.query_labels, self.n_way, dtype)


@dataclass
class PairBatch:
    a_records: list
    b_records: list
    same_label: np.ndarray  # float [B], 1.0 same class / 0.0 different


def one_hot(labels: np.ndarray, n_classes: int, dtype: str = "f32") -> np.ndarray:
    np_dtype = np.float32 if dtype == "f32" else np.float64
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise DataError(f"labels out of range [0, {n_classes}): {labels.min()}..{labels.max()}")
    out = np.zeros((labels.shape[0], n_classes), dtype=np_dtype)
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def _eligible_classes(by_class: dict, min_count: int) -> list:
    return [cid for cid, recs in by_class.items() if len(recs) >= min_count]


def sample_episode(manifest, section: str, n_way: int, k_shot: int,
                   q_queries: int, rng: np.random.Generator) -> Episode:
    """Draw an N-way K-shot episode with Q queries per class from one split
    section. Support and query sets are disjoint records."""
    if n_way < 2:
        raise ConfigError(f"n_way must be >= 2, got {n_way}")
    if k_shot < 1 or q_queries < 1:
        raise ConfigError(f"k_shot and q_queries must be >= 1, got {k_shot}/{q_queries}")
    section_ids = manifest.section_class_ids(section)
    by_class = manifest.by_class()
    need = k_shot + q_queries
    pool = [cid for cid in section_ids if len(by_class[cid]) >= need]
    if len(pool) < n_way:
        raise DataError(
            f"section {section!r} has {len(pool)} classes with >= {need} images, "
            f"need {n_way} for a {n_way}-way {k_shot}-shot episode with {q_queries} queries")
    chosen = [pool[i] for i in rng.choice(len(pool), size=n_way, replace=False)]

    support, query, q_labels = [], [], []
    for local, cid in enumerate(chosen):
        recs = by_class[cid]
        picks = rng.choice(len(recs), size=need, replace=False)
        support.extend(recs[i] for i in picks[:k_shot])
        query.extend(recs[i] for i in picks[k_shot:])
        q_labels.extend([local] * q_queries)

    s_labels = np.repeat(np.arange(n_way, dtype=np.int64), k_shot)
    q_labels = np.asarray(q_labels, dtype=np.int64)
    order = rng.permutation(len(query))
    query = [query[i] for i in order]
    q_labels = q_labels[order]
    return Episode(support_records=support, query_records=query,
                   support_labels=s_labels, query_labels=q_labels,
                   class_ids=chosen, n_way=n_way, k_shot=k_shot)


def sample_pairs(manifest, section: str, batch_size: int,
                 rng: np.random.Generator, positive_fraction: float = 0.5) -> PairBatch:
    """Draw a batch of image pairs; roughly positive_fraction share the class."""
    if batch_size < 1:
        raise ConfigError(f"pair batch size must be >= 1, got {batch_size}")
    if not 0.0 <= positive_fraction <= 1.0:
        raise ConfigError(f"positive_fraction must be in [0,1], got {positive_fraction}")
    section_ids = manifest.section_class_ids(section)
    by_class = {cid: manifest.by_class()[cid] for cid in section_ids}
    pos_pool = _eligible_classes(by_class, 2)
    n_pos = int(round(batch_size * positive_fraction))
    if n_pos > 0 and not pos_pool:
        raise DataError(f"section {section!r} has no class with >= 2 images; cannot draw positive pairs")
    if n_pos < batch_size and len(section_ids) < 2:
        raise DataError(f"section {section!r} has < 2 classes; cannot draw negative pairs")

    a_recs, b_recs, labels = [], [], []
    for _ in range(n_pos):
        cid = pos_pool[rng.integers(0, len(pos_pool))]
        recs = by_class[cid]
        i, j = rng.choice(len(recs), size=2, replace=False)
        a_recs.append(recs[i]); b_recs.append(recs[j]); labels.append(1.0)
    for _ in range(batch_size - n_pos):
        ci, cj = rng.choice(len(section_ids), size=2, replace=False)
        ra = by_class[section_ids[ci]]
        rb = by_class[section_ids[cj]]
        a_recs.append(ra[rng.integers(0, len(ra))])
        b_recs.append(rb[rng.integers(0, len(rb))])
        labels.append(0.0)
    order = rng.permutation(batch_size)
    return PairBatch(a_records=[a_recs[i] for i in order],
                     b_records=[b_recs[i] for i in order],
                     same_label=np.asarray(labels, dtype=np.float64)[order])


def episode_accuracy(predicted: np.ndarray, true_labels: np.ndarray) -> float:
    predicted = np.asarray(predicted)
    true_labels = np.asarray(true_labels)
    if predicted.shape != true_labels.shape:
        raise DataError(f"prediction shape {predicted.shape} != label shape {true_labels.shape}")
    if predicted.size == 0:
        raise DataError("cannot score an empty episode")
    return float(np.mean(predicted == true_labels))
