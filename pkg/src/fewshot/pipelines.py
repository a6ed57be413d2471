"""End-to-end training and evaluation procedures.

Three trainers (contrastive pair training, episodic matching training, and
the stacked variant that trains a matching head over a frozen contrastive
extractor), plus episodic evaluation and cluster scoring. Every run is a
pure function of (config, seed, dataset bytes); reports serialize to a
stable JSON schema ("report_v1") that is byte-identical across reruns
except for the wall-time field.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nets
from .data import DatasetManifest, expand_with_augments, load_pixels
from .episodes import one_hot, sample_episode, sample_pairs
from .errors import ConfigError, DataError, NumericError, ShapeError
from .metrics import confusion_matrix, f1_scores, kmeans, silhouette_score
from .optim import Adam
from .tensor import (Tensor, backward, constant, narrow,
                     softmax_cross_entropy, tensor)
from .weights import (NetworkWeights, ROLE_BACKBONE, ROLE_FCE_F, ROLE_FCE_G,
                      ROLE_SIAMESE_HEAD)

# rng stream purposes; spawn keys keep streams independent of call order
_PURPOSE_INIT = 0x11
_PURPOSE_TRAIN = 0x22
_PURPOSE_EVAL = 0x33
_PURPOSE_CLUSTER = 0x44
_PURPOSE_PAIR_EVAL = 0x55

_PIXEL_CACHE_BYTE_CAP = 256 * 1024 * 1024
_SSM_HEAD_INIT_SCALE = 0.1
_SSM_CENTER = "fce_center"  # stored mean direction of the base-section embeddings


def _rng_for(seed: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(purpose,)))


@dataclass
class RunConfig:
    seed: int = 0
    image_size: int = 32
    embedding_dim: int = 64
    dtype: str = "f32"
    n_way: int = 5
    k_shot: int = 5
    q_queries: int = 5
    eval_queries: int = 15
    episodes_per_epoch: int = 100
    epochs: int = 250
    lr: float = 1e-3
    margin: float = 1.0
    pair_batch_size: int = 32
    positive_fraction: float = 0.5
    fce_enabled: bool = True
    fce_steps: int = 3
    eval_episodes: int = 600
    early_stop_acc: float = 0.0   # 0 disables; stop when epoch train acc >= this
    patience: int = 0             # 0 disables; stop after this many non-improving epochs
    augment: bool = False
    augment_multiplier: int = 2
    allow_png: bool = False
    base_classes: int = 0         # split counts; all zero = keep manifest split
    validation_classes: int = 0
    test_classes: int = 0
    dataset_root: str = ""
    initial_weights: str = ""

    def validate(self):
        from .nets import VALID_INPUT_SIZES
        positives = ("embedding_dim", "k_shot", "q_queries", "eval_queries",
                     "episodes_per_epoch", "epochs", "pair_batch_size",
                     "fce_steps", "eval_episodes", "augment_multiplier")
        for name in positives:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.n_way < 2:
            raise ConfigError(f"n_way must be >= 2, got {self.n_way}")
        if self.image_size not in VALID_INPUT_SIZES:
            raise ConfigError(f"image_size must be one of {VALID_INPUT_SIZES}, got {self.image_size}")
        if self.dtype not in ("f32", "f64"):
            raise ConfigError(f"dtype must be f32 or f64, got {self.dtype!r}")
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if self.margin <= 0:
            raise ConfigError(f"margin must be > 0, got {self.margin}")
        if not 0.0 <= self.positive_fraction <= 1.0:
            raise ConfigError(f"positive_fraction must be in [0, 1], got {self.positive_fraction}")
        if not 0.0 <= self.early_stop_acc <= 1.0:
            raise ConfigError(f"early_stop_acc must be in [0, 1], got {self.early_stop_acc}")
        if self.patience < 0:
            raise ConfigError(f"patience must be >= 0, got {self.patience}")
        for name in ("base_classes", "validation_classes", "test_classes"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def backbone_spec(self) -> nets.BackboneSpec:
        return nets.BackboneSpec(input_size=self.image_size,
                                 embedding_dim=self.embedding_dim, dtype=self.dtype)


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return "sha256:" + hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass
class MetricsReport:
    kind: str
    config: dict
    seed: int
    run_id: str
    config_hash: str
    train: dict = None
    eval: dict = None
    cluster: dict = None
    info: dict = None
    initial_weights: str = ""
    wall_time_s: float = 0.0

    def to_dict(self) -> dict:
        return {
            "format": "report_v1",
            "kind": self.kind,
            "run_id": self.run_id,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "config": self.config,
            "initial_weights": self.initial_weights,
            "train": self.train,
            "eval": self.eval,
            "cluster": self.cluster,
            "info": self.info,
            "wall_time_s": self.wall_time_s,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_json())


def _new_report(kind: str, cfg: RunConfig) -> MetricsReport:
    chash = config_hash(cfg)
    run_id = hashlib.sha256(f"{kind}:{chash}".encode("utf-8")).hexdigest()[:16]
    return MetricsReport(kind=kind, config=cfg.to_dict(), seed=cfg.seed,
                         run_id=run_id, config_hash=chash,
                         initial_weights=cfg.initial_weights)


def _check_all_finite(report_dict, where="report"):
    def walk(node, path):
        if isinstance(node, dict):
            for k, v in node.items():
                walk(v, f"{path}.{k}")
        elif isinstance(node, (list, tuple)):
            for i, v in enumerate(node):
                walk(v, f"{path}[{i}]")
        elif isinstance(node, float) and not np.isfinite(node):
            raise NumericError(f"non-finite value at {path} in {where}")
    walk(report_dict, where)


# -- caches ---------------------------------------------------------------------

def _record_cache_key(rec):
    return (rec.path, rec.aug_index)


class PixelBank:
    """Loads record pixels at the configured size, caching while the total
    stays under a byte cap."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self._map = {}
        self._bytes = 0

    def one(self, rec) -> np.ndarray:
        key = _record_cache_key(rec)
        hit = self._map.get(key)
        if hit is not None:
            return hit
        img = load_pixels(rec, self.cfg.image_size, allow_png=self.cfg.allow_png,
                          augment_seed=self.cfg.seed)
        if self._bytes + img.nbytes <= _PIXEL_CACHE_BYTE_CAP:
            self._map[key] = img
            self._bytes += img.nbytes
        return img

    def batch(self, records) -> np.ndarray:
        return np.stack([self.one(r) for r in records])


class EmbedBank:
    """Caches per-record embedding rows for a frozen extractor."""

    def __init__(self, embed_records_fn, batch_size: int = 128):
        self._fn = embed_records_fn
        self._batch = batch_size
        self._map = {}

    def rows(self, records) -> np.ndarray:
        missing = []
        seen = set()
        for r in records:
            k = _record_cache_key(r)
            if k not in self._map and k not in seen:
                missing.append(r)
                seen.add(k)
        for i in range(0, len(missing), self._batch):
            chunk = missing[i:i + self._batch]
            rows = self._fn(chunk)
            for r, row in zip(chunk, rows):
                self._map[_record_cache_key(r)] = row
        return np.stack([self._map[_record_cache_key(r)] for r in records])


def _frozen_embed_fn(weights: NetworkWeights, cfg: RunConfig, mode: str, bank: PixelBank):
    """records -> embedding rows with gradients cut; mode picks the extractor."""
    spec = cfg.backbone_spec()
    frozen = nets.frozen_view(weights)

    center = weights.get(_SSM_CENTER).data if _SSM_CENTER in weights else None

    def _unit_rows(a):
        return a / np.maximum(np.linalg.norm(a, axis=1, keepdims=True), 1e-12)

    def fn(records):
        x = constant(tensor(bank.batch(records), dtype=cfg.dtype))
        if mode == "matching":
            return nets.embed_backbone(x, frozen, spec).data
        # "ssm": contrastive extractor incl. projection head. Rows are
        # L2-normalized, and — when the weights carry a stored center — the
        # shared mean direction is removed and rows renormalized. Contrastive
        # training leaves its embeddings in a narrow cone around an arbitrary
        # offset; cosine attention and the context encoder both need the
        # within-cone structure, not the offset.
        emb = _unit_rows(nets.siamese_embed(x, frozen, spec).data)
        if center is not None:
            emb = _unit_rows(emb - center)
        return emb

    return fn


# -- shared episode forward -----------------------------------------------------

def episode_probs(weights: NetworkWeights, cfg: RunConfig, support_emb: Tensor,
                  query_emb: Tensor, support_onehot: Tensor) -> Tensor:
    """Label-probability rows for an episode given base embeddings.

    This single code path serves training and evaluation; context encoding
    runs only when fce_enabled.
    """
    if cfg.fce_enabled:
        support_ctx = nets.fce_support(support_emb, weights)
        query_ctx = nets.fce_query(query_emb, support_ctx, weights, k_steps=cfg.fce_steps)
    else:
        support_ctx, query_ctx = support_emb, query_emb
    return nets.matching_predict(query_ctx, support_ctx, support_onehot)


def _named_trainables(w: NetworkWeights, exclude_roles=()):
    skip = set(exclude_roles)
    return [(name, t) for name, role, t in w.entries
            if t.requires_grad and role not in skip and not name.startswith("meta.")]


def _finite_guard(loss: Tensor, named_params, epoch: int, step: int):
    if not np.all(np.isfinite(loss.data)):
        raise NumericError(f"non-finite loss at epoch {epoch}, step {step}: {loss.data!r}")


def _grad_guard(named_params, epoch: int, step: int):
    for name, t in named_params:
        if t.grad is not None and not np.all(np.isfinite(t.grad)):
            raise NumericError(f"non-finite gradient in {name!r} at epoch {epoch}, step {step}")


def _check_shapes(weights: NetworkWeights, cfg: RunConfig, need_head: bool,
                  need_fce: bool = None):
    spec = cfg.backbone_spec()
    expect = {
        "conv1.weight": (nets.N_FILTERS, 3, 3, 3),
        "embed.weight": (spec.embedding_dim, spec.flat_dim),
    }
    if need_head:
        expect["head.weight"] = (spec.embedding_dim, spec.embedding_dim)
        if _SSM_CENTER in weights:
            expect[_SSM_CENTER] = (spec.embedding_dim,)
    if cfg.fce_enabled if need_fce is None else need_fce:
        d = spec.embedding_dim
        expect["fce_g.fwd.wx"] = (4 * d, d)
        expect["fce_f.wh"] = (4 * d, 2 * d)
    for name, shape in expect.items():
        got = weights.get(name).data.shape
        if got != shape:
            raise ShapeError(
                f"weights entry {name!r} has shape {got}, but the config "
                f"(image_size={cfg.image_size}, embedding_dim={cfg.embedding_dim}) needs {shape}")


def _train_manifest(cfg: RunConfig, manifest: DatasetManifest) -> DatasetManifest:
    if cfg.augment:
        return expand_with_augments(manifest, cfg.augment_multiplier)
    return manifest


def _maybe_split(cfg: RunConfig, manifest: DatasetManifest) -> DatasetManifest:
    from .data import split_classes
    counts = (cfg.base_classes, cfg.validation_classes, cfg.test_classes)
    if any(counts):
        return split_classes(manifest, *counts, seed=cfg.seed)
    if manifest.split is None:
        raise DataError("manifest has no class split and the config gives no split counts")
    return manifest


# -- trainers ---------------------------------------------------------------------

def train_siamese(cfg: RunConfig, manifest: DatasetManifest):
    """Contrastive pair training of the shared backbone plus projection head."""
    cfg.validate()
    manifest = _maybe_split(cfg, manifest)
    started = time.perf_counter()
    spec = cfg.backbone_spec()
    rng_init = _rng_for(cfg.seed, _PURPOSE_INIT)
    w = nets.init_siamese(spec, rng_init)

    by_class = manifest.by_class()
    base_ids = manifest.section_class_ids("base")
    rich = [cid for cid in base_ids if len(by_class[cid]) >= 2]
    if len(rich) < 2:
        raise DataError(f"contrastive training needs >= 2 base classes with >= 2 images, got {len(rich)}")

    train_man = _train_manifest(cfg, manifest)
    bank = PixelBank(cfg)
    named = _named_trainables(w)
    opt = Adam([t for _, t in named], lr=cfg.lr)
    rng = _rng_for(cfg.seed, _PURPOSE_TRAIN)

    loss_curve, pos_curve, neg_curve = [], [], []
    best_loss, stall = np.inf, 0
    early_stopped = False
    for epoch in range(1, cfg.epochs + 1):
        losses, pos_d, neg_d = [], [], []
        for step in range(1, cfg.episodes_per_epoch + 1):
            batch = sample_pairs(train_man, "base", cfg.pair_batch_size, rng,
                                 positive_fraction=cfg.positive_fraction)
            xa = tensor(bank.batch(batch.a_records), dtype=cfg.dtype)
            xb = tensor(bank.batch(batch.b_records), dtype=cfg.dtype)
            dist, _ = nets.siamese_forward_pair(xa, xb, w, spec)
            y = tensor(batch.same_label, dtype=cfg.dtype)
            loss = nets.contrastive_loss(dist, y, margin=cfg.margin)
            _finite_guard(loss, named, epoch, step)
            w.zero_grads()
            backward(loss)
            _grad_guard(named, epoch, step)
            opt.step()
            losses.append(float(loss.data))
            same = batch.same_label > 0.5
            if same.any():
                pos_d.append(float(dist.data[same].mean()))
            if (~same).any():
                neg_d.append(float(dist.data[~same].mean()))
        loss_curve.append(float(np.mean(losses)))
        pos_curve.append(float(np.mean(pos_d)) if pos_d else 0.0)
        neg_curve.append(float(np.mean(neg_d)) if neg_d else 0.0)
        if cfg.patience > 0:
            if loss_curve[-1] < best_loss - 1e-9:
                best_loss, stall = loss_curve[-1], 0
            else:
                stall += 1
                if stall >= cfg.patience:
                    early_stopped = True
                    break
    w.mark_trained()

    hold_pos, hold_neg = mean_pair_distances(w, manifest, cfg, section="test")
    report = _new_report("train_siamese", cfg)
    report.train = {
        "loss_curve": loss_curve,
        "pos_dist_curve": pos_curve,
        "neg_dist_curve": neg_curve,
        "holdout_pos_dist": hold_pos,
        "holdout_neg_dist": hold_neg,
        "epochs_run": len(loss_curve),
        "early_stopped": early_stopped,
    }
    report.wall_time_s = time.perf_counter() - started
    _check_all_finite(report.train, "train")
    return w, report


def _episodic_fit(cfg: RunConfig, manifest: DatasetManifest, w: NetworkWeights,
                  base_embed, exclude_roles=()):
    """Shared episodic gradient loop. `base_embed(episode) -> (sup, qry)`
    produces the base embedding Tensors for one episode."""
    named = _named_trainables(w, exclude_roles=exclude_roles)
    if not named:
        raise ConfigError("no trainable parameters; enable fce_enabled for a stacked run")
    opt = Adam([t for _, t in named], lr=cfg.lr)
    rng = _rng_for(cfg.seed, _PURPOSE_TRAIN)
    dtype = cfg.dtype

    loss_curve, acc_curve = [], []
    best_loss, stall = np.inf, 0
    early_stopped = False
    for epoch in range(1, cfg.epochs + 1):
        losses, accs = [], []
        for step in range(1, cfg.episodes_per_epoch + 1):
            ep = sample_episode(manifest, "base", cfg.n_way, cfg.k_shot, cfg.q_queries, rng)
            sup_emb, qry_emb = base_embed(ep)
            sup_y = tensor(ep.one_hot_support(dtype), dtype=dtype)
            qry_y = tensor(ep.one_hot_query(dtype), dtype=dtype)
            probs = episode_probs(w, cfg, sup_emb, qry_emb, sup_y)
            loss = softmax_cross_entropy(probs, qry_y, input_is_probs=True)
            _finite_guard(loss, named, epoch, step)
            w.zero_grads()
            backward(loss)
            _grad_guard(named, epoch, step)
            opt.step()
            losses.append(float(loss.data))
            accs.append(float(np.mean(probs.data.argmax(axis=1) == ep.query_labels)))
        loss_curve.append(float(np.mean(losses)))
        acc_curve.append(float(np.mean(accs)))
        if cfg.early_stop_acc > 0 and acc_curve[-1] >= cfg.early_stop_acc:
            early_stopped = True
            break
        if cfg.patience > 0:
            if loss_curve[-1] < best_loss - 1e-9:
                best_loss, stall = loss_curve[-1], 0
            else:
                stall += 1
                if stall >= cfg.patience:
                    early_stopped = True
                    break
    return {
        "loss_curve": loss_curve,
        "acc_curve": acc_curve,
        "epochs_run": len(loss_curve),
        "early_stopped": early_stopped,
    }


def train_matching(cfg: RunConfig, manifest: DatasetManifest,
                   initial_backbone: NetworkWeights = None):
    """Episodic training of the embedding backbone plus cosine-attention
    classifier (context encoding included when enabled)."""
    cfg.validate()
    manifest = _maybe_split(cfg, manifest)
    started = time.perf_counter()
    spec = cfg.backbone_spec()
    rng_init = _rng_for(cfg.seed, _PURPOSE_INIT)
    if initial_backbone is not None:
        w = initial_backbone.copy()
        nets.check_backbone(w, spec)
    else:
        w = nets.init_backbone(spec, rng_init)
    if cfg.fce_enabled and "fce_g.fwd.wx" not in w:
        nets.init_fce(spec.embedding_dim, rng_init, np.float32 if cfg.dtype == "f32" else np.float64, w)
    _check_shapes(w, cfg, need_head=False)

    train_man = _train_manifest(cfg, manifest)
    bank = PixelBank(cfg)

    def base_embed(ep):
        # one conv pass over support + queries; split the embedding rows after
        x = np.concatenate([bank.batch(ep.support_records), bank.batch(ep.query_records)])
        emb = nets.embed_backbone(tensor(x, dtype=cfg.dtype), w, spec)
        n_sup = len(ep.support_records)
        return (narrow(emb, 0, 0, n_sup),
                narrow(emb, 0, n_sup, len(ep.query_records)))

    train_stats = _episodic_fit(cfg, train_man, w, base_embed)
    w.mark_trained()
    report = _new_report("train_matching", cfg)
    report.train = train_stats
    report.wall_time_s = time.perf_counter() - started
    _check_all_finite(report.train, "train")
    return w, report


def train_ssm(cfg: RunConfig, manifest: DatasetManifest, siamese_weights: NetworkWeights):
    """Train the matching head over a frozen contrastive extractor."""
    cfg.validate()
    if siamese_weights is None:
        raise DataError("stacked training requires contrastive extractor weights")
    if not siamese_weights.trained:
        raise DataError("contrastive extractor weights are not flagged trained; train them first")
    manifest = _maybe_split(cfg, manifest)
    started = time.perf_counter()
    spec = cfg.backbone_spec()
    if not cfg.fce_enabled:
        raise ConfigError("stacked training has no trainable parameters with fce_enabled=false")

    w = siamese_weights.copy()
    for name, role, t in w.entries:
        if role in (ROLE_BACKBONE, ROLE_SIAMESE_HEAD):
            t.requires_grad = False
    rng_init = _rng_for(cfg.seed, _PURPOSE_INIT)
    if "fce_g.fwd.wx" not in w:
        # Near-identity start: the frozen extractor already defines a good
        # metric, so the head must begin at that accuracy, not below it.
        nets.init_fce(spec.embedding_dim, rng_init,
                      np.float32 if cfg.dtype == "f32" else np.float64, w,
                      scale=_SSM_HEAD_INIT_SCALE)
    _check_shapes(w, cfg, need_head=True)

    train_man = _train_manifest(cfg, manifest)
    if _SSM_CENTER not in w:
        # The head standardizes its inputs; the statistic travels with the
        # weights so evaluation never depends on having the training data.
        raw = EmbedBank(_frozen_embed_fn(w, cfg, "ssm", PixelBank(cfg)))
        mu = raw.rows(train_man.section_records("base")).mean(axis=0)
        w.add(_SSM_CENTER, ROLE_FCE_G, tensor(mu, dtype=cfg.dtype))
    bank = EmbedBank(_frozen_embed_fn(w, cfg, "ssm", PixelBank(cfg)))

    def base_embed(ep):
        sup = tensor(bank.rows(ep.support_records), dtype=cfg.dtype)
        qry = tensor(bank.rows(ep.query_records), dtype=cfg.dtype)
        return sup, qry

    train_stats = _episodic_fit(cfg, train_man, w, base_embed,
                                exclude_roles=(ROLE_BACKBONE, ROLE_SIAMESE_HEAD))
    report = _new_report("train_ssm", cfg)
    report.train = train_stats
    report.wall_time_s = time.perf_counter() - started
    _check_all_finite(report.train, "train")
    return w, report


# -- evaluation -------------------------------------------------------------------

def _resolve_mode(weights: NetworkWeights, mode: str) -> str:
    if mode == "auto":
        return "ssm" if "head.weight" in weights else "matching"
    if mode not in ("matching", "ssm"):
        raise ConfigError(f"mode must be auto, matching, or ssm, got {mode!r}")
    return mode


def evaluate_fewshot(weights: NetworkWeights, manifest: DatasetManifest, cfg: RunConfig,
                     mode: str = "auto", section: str = "test", embed_fn=None):
    """Episodic N-way evaluation on one split section.

    Reports episode-mean and pooled accuracy, the F1 suite over the pooled
    confusion, a 95% CI half-width over episode accuracies, and a per-episode
    prediction log sufficient to recompute every headline number.
    `embed_fn(records) -> rows` overrides the extractor (test hook).
    """
    cfg.validate()
    manifest = _maybe_split(cfg, manifest)
    started = time.perf_counter()
    mode = _resolve_mode(weights, mode) if embed_fn is None else "injected"
    if embed_fn is None:
        _check_shapes(weights, cfg, need_head=(mode == "ssm"))
        embed_fn = _frozen_embed_fn(weights, cfg, mode, PixelBank(cfg))
    frozen = nets.frozen_view(weights)
    bank = EmbedBank(embed_fn)
    rng = _rng_for(cfg.seed, _PURPOSE_EVAL)

    ep_accs = []
    pooled = np.zeros((cfg.n_way, cfg.n_way), dtype=np.int64)
    episode_log = []
    for _ in range(cfg.eval_episodes):
        ep = sample_episode(manifest, section, cfg.n_way, cfg.k_shot, cfg.eval_queries, rng)
        sup = constant(tensor(bank.rows(ep.support_records), dtype=cfg.dtype))
        qry = constant(tensor(bank.rows(ep.query_records), dtype=cfg.dtype))
        sup_y = tensor(ep.one_hot_support(cfg.dtype), dtype=cfg.dtype)
        probs = episode_probs(frozen, cfg, sup, qry, sup_y)
        pred = probs.data.argmax(axis=1)
        ep_accs.append(float(np.mean(pred == ep.query_labels)))
        pooled += confusion_matrix(ep.query_labels, pred, cfg.n_way)
        episode_log.append({
            "classes": [int(c) for c in ep.class_ids],
            "true": [int(v) for v in ep.query_labels],
            "pred": [int(v) for v in pred],
        })

    f1 = f1_scores(pooled)
    accs = np.asarray(ep_accs)
    ci = float(1.96 * accs.std(ddof=1) / np.sqrt(len(accs))) if len(accs) > 1 else 0.0
    report = _new_report("eval", cfg)
    report.eval = {
        "mode": mode,
        "section": section,
        "episodes": cfg.eval_episodes,
        "accuracy_mean": float(accs.mean()),
        "accuracy_pooled": float(np.trace(pooled) / pooled.sum()),
        "ci95_half_width": ci,
        "macro_f1": f1.macro_f1,
        "micro_f1": f1.micro_f1,
        "per_class_f1": [float(v) for v in f1.f1],
        "confusion": [[int(v) for v in row] for row in pooled],
        "episode_log": episode_log,
    }
    report.wall_time_s = time.perf_counter() - started
    _check_all_finite({k: v for k, v in report.eval.items() if k != "episode_log"}, "eval")
    return report


def cluster_eval(weights: NetworkWeights, manifest: DatasetManifest, cfg: RunConfig,
                 subset: str = "test", k: int = None, mode: str = "auto", embed_fn=None):
    """Embed a subset, k-means it (k defaults to the class count), and report
    silhouette scores for both the fitted clusters and the true labels."""
    cfg.validate()
    manifest = _maybe_split(cfg, manifest)
    started = time.perf_counter()
    if subset == "all":
        records = list(manifest.records)
    elif subset == "test":
        records = manifest.section_records("test")
    else:
        raise ConfigError(f"subset must be all or test, got {subset!r}")
    if not records:
        raise DataError(f"subset {subset!r} selected no records")
    class_ids = sorted({r.class_id for r in records})
    if k is None:
        k = len(class_ids)
    if k < 2:
        raise ConfigError(f"cluster scoring needs k >= 2, got k={k}")

    if embed_fn is None:
        mode = _resolve_mode(weights, mode)
        # raw extractor embeddings only; episode context never applies here
        _check_shapes(weights, cfg, need_head=(mode == "ssm"), need_fce=False)
        embed_fn = _frozen_embed_fn(weights, cfg, mode, PixelBank(cfg))
    points = EmbedBank(embed_fn).rows(records).astype(np.float64)

    km = kmeans(points, k, seed=cfg.seed)
    sil = silhouette_score(points, km.labels)
    true_labels = np.asarray([class_ids.index(r.class_id) for r in records])
    sil_true = silhouette_score(points, true_labels) if len(class_ids) >= 2 else 0.0

    report = _new_report("cluster", cfg)
    report.cluster = {
        "subset": subset,
        "k": int(k),
        "n_points": len(records),
        "silhouette": float(sil),
        "silhouette_true_labels": float(sil_true),
        "inertia": km.inertia,
        "restart_index": km.restart_index,
    }
    report.wall_time_s = time.perf_counter() - started
    _check_all_finite(report.cluster, "cluster")
    return report


def embed_records(weights: NetworkWeights, manifest: DatasetManifest, cfg: RunConfig,
                  records, mode: str = "auto") -> np.ndarray:
    """Frozen-extractor embedding rows for arbitrary records (CSV export)."""
    cfg.validate()
    mode = _resolve_mode(weights, mode)
    _check_shapes(weights, cfg, need_head=(mode == "ssm"), need_fce=False)
    return EmbedBank(_frozen_embed_fn(weights, cfg, mode, PixelBank(cfg))).rows(records)


def mean_pair_distances(weights: NetworkWeights, manifest: DatasetManifest,
                        cfg: RunConfig, section: str = "test", n_pairs: int = 256):
    """Mean contrastive-embedding distance over held-out positive and
    negative pairs; plain numpy, no graph."""
    bank = EmbedBank(_frozen_embed_fn(weights, cfg, "siamese", PixelBank(cfg)))
    rng = _rng_for(cfg.seed, _PURPOSE_PAIR_EVAL)
    batch = sample_pairs(manifest, section, n_pairs, rng, positive_fraction=0.5)
    ea = bank.rows(batch.a_records)
    eb = bank.rows(batch.b_records)
    d = np.sqrt(((ea - eb) ** 2).sum(axis=1))
    same = batch.same_label > 0.5
    pos = float(d[same].mean()) if same.any() else 0.0
    neg = float(d[~same].mean()) if (~same).any() else 0.0
    return pos, neg
