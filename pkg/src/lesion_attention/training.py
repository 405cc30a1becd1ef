"""SGD training with the composite CAM-attention loss, early stopping and
k-fold cross-validation."""

import csv
import io
import logging
import math
import statistics
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint
from .data.augment import AugmentConfig, augment_image
from .data.folds import stratified_folds
from .data.preprocess import geometry, normalize
from .errors import ConfigError, DivergenceError, NumericError
from .geometry import lesion_mask, normalize_cam
from .losses import (
    LossConfig,
    attention_loss,
    auc,
    classification_loss,
    composite_loss,
    pos_weight_from_labels,
)
from .network import NetConfig, build_network, compute_cam
from .rng import AUGMENT, DROPOUT, SHUFFLE, derive_seed, stream

log = logging.getLogger(__name__)

LOG_FIELDS = ["epoch", "train_lt", "train_lc", "train_la", "val_auc"]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 6
    learning_rate: float = 1e-4
    patience: int = 5
    lam: float = 0.66
    dropout_p: float = 0.5
    seed: int = 0
    input_side: int = 64
    jaccard_variant: str = "standard"
    precision: int = 64
    # False removes the CAM/attention branch from the graph entirely
    attention: bool = True
    aggregation: str = "batch"
    pos_weight: float = None  # None: negatives / positives of the training split
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    blocks: tuple = None  # None: default 4-block architecture
    eval_batch: int = 64

    def validate(self):
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ConfigError("epochs, batch_size and patience must be positive")
        if self.patience > self.epochs:
            raise ConfigError(f"patience {self.patience} exceeds epochs {self.epochs}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.precision not in (32, 64):
            raise ConfigError(f"precision must be 32 or 64, got {self.precision}")
        LossConfig(lam=self.lam, jaccard_variant=self.jaccard_variant, aggregation=self.aggregation)

    @property
    def dtype(self):
        return np.float32 if self.precision == 32 else np.float64

    def net_config(self):
        kw = {"input_side": self.input_side, "dropout_p": self.dropout_p}
        if self.blocks is not None:
            kw["blocks"] = self.blocks
        return NetConfig(**kw)

    def to_dict(self):
        d = asdict(self)
        d["blocks"] = None if self.blocks is None else [asdict(b) for b in self.blocks]
        return d


def sgd_step(params, lr):
    """Plain SGD, ``w <- w - lr * grad``; parameters without a gradient are skipped."""
    for p in params:
        if p.grad is not None:
            p.data -= np.asarray(lr, dtype=p.data.dtype) * p.grad


class EarlyStopping:
    """Track the best validation AUC; ties are not improvements."""

    def __init__(self, patience):
        self.patience = patience
        self.best = -math.inf
        self.best_epoch = None
        self.epoch = 0

    def update(self, value):
        """Record one epoch's metric; returns True when training should stop."""
        self.epoch += 1
        if value > self.best:
            self.best = value
            self.best_epoch = self.epoch
            return False
        return self.epoch - self.best_epoch >= self.patience

    @property
    def improved(self):
        return self.best_epoch == self.epoch


def prepare(samples, side, dtype, augment_seeds=None, augment_config=None):
    """Images -> normalized batch array plus boxes in the network input frame."""
    images, boxes = [], []
    for k, s in enumerate(samples):
        img, box = s.image, s.box
        if augment_seeds is not None:
            img, box, _ = augment_image(img, box, augment_seeds[k], augment_config)
        img, box = geometry(img, side, box)
        images.append(normalize(img))
        boxes.append(box)
    return np.stack(images).astype(dtype), boxes


def masks_for(boxes, side, cam_side, dtype):
    out = np.zeros((len(boxes), cam_side, cam_side), dtype=dtype)
    for k, box in enumerate(boxes):
        if box is not None:
            out[k] = lesion_mask(box, side, side, cam_side).values
    return out


def batch_loss(net, x, labels, masks, loss_config, training, dropout_seed, attention=True):
    """Forward pass and losses; returns ``(l_t, l_c, l_a)`` with ``l_a`` None if disabled."""
    scores, feats = net.forward(x, training=training, seed=dropout_seed)
    l_c = classification_loss(scores, labels, loss_config.pos_weight)
    if not attention:
        return l_c, l_c, None
    cam = normalize_cam(compute_cam(net, feats))
    l_a = attention_loss(cam, masks, loss_config)
    return composite_loss(l_c, l_a, loss_config.lam), l_c, l_a


def predict(net, samples, side, batch=64):
    """Deterministic inference; returns ``(scores, normalized_cams, boxes)``."""
    scores, cams, boxes = [], [], []
    with T.no_grad():
        for start in range(0, len(samples), batch):
            chunk = samples[start:start + batch]
            x, bx = prepare(chunk, side, net.dtype)
            s, feats = net.forward(T.Tensor(x), training=False)
            scores.append(s.data[:, 0].astype(np.float64))
            cams.append(normalize_cam(compute_cam(net, feats).data.astype(np.float64)))
            boxes.extend(bx)
    return np.concatenate(scores), np.concatenate(cams), boxes


def _check_classes(samples, what):
    labels = {s.label for s in samples}
    if labels != {0, 1}:
        raise ConfigError(f"{what} split needs both classes, has {sorted(labels)}")


def _fmt(v):
    return "nan" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def log_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_FIELDS)
    for r in rows:
        w.writerow([r["epoch"]] + [_fmt(r[k]) for k in LOG_FIELDS[1:]])
    return buf.getvalue()


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list
    history: list = field(default_factory=list)  # per-epoch weight snapshots when requested

    def log_csv(self):
        return log_csv(self.log)


def train(train_samples, val_samples, config=None, record_history=False):
    """Train a fresh network; returns the best-validation-AUC checkpoint and the epoch log."""
    config = config or TrainConfig()
    config.validate()
    _check_classes(train_samples, "training")
    _check_classes(val_samples, "validation")

    dtype = config.dtype
    net = build_network(config.net_config(), seed=config.seed, dtype=dtype)
    side, cam_side = net.input_side, net.feature_side
    pos_weight = config.pos_weight or pos_weight_from_labels([s.label for s in train_samples])
    loss_config = LossConfig(lam=config.lam, jaccard_variant=config.jaccard_variant,
                             pos_weight=pos_weight, aggregation=config.aggregation)
    params = net.parameters()
    val_labels = [s.label for s in val_samples]
    stopper = EarlyStopping(config.patience)
    best_state = net.state()
    rows, history = [], []
    n = len(train_samples)

    for epoch in range(1, config.epochs + 1):
        order = stream(config.seed, SHUFFLE, epoch).permutation(n)
        sums = {"lt": 0.0, "lc": 0.0, "la": 0.0}
        n_batches = 0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            chunk = [train_samples[i] for i in idx]
            seeds = [derive_seed(config.seed, AUGMENT, epoch, int(i)) for i in idx]
            x, boxes = prepare(chunk, side, dtype, seeds, config.augment)
            labels = np.array([[s.label] for s in chunk], dtype=dtype)
            masks = masks_for(boxes, side, cam_side, dtype) if config.attention else None
            net.zero_grad()
            try:
                l_t, l_c, l_a = batch_loss(net, T.Tensor(x), labels, masks, loss_config, True,
                                           derive_seed(config.seed, DROPOUT, epoch, b), config.attention)
                if not np.isfinite(l_t.data).all():
                    raise NumericError("loss is not finite")
                T.backward(l_t)
            except NumericError as exc:
                raise DivergenceError(epoch, b + 1, str(exc)) from exc
            sgd_step(params, config.learning_rate)
            sums["lt"] += float(l_t.data)
            sums["lc"] += float(l_c.data)
            sums["la"] += float(l_a.data) if l_a is not None else math.nan
            n_batches += 1

        val_scores, _, _ = predict(net, val_samples, side, config.eval_batch)
        val_auc = auc(val_scores, val_labels)
        rows.append({"epoch": epoch, "train_lt": sums["lt"] / n_batches, "train_lc": sums["lc"] / n_batches,
                     "train_la": sums["la"] / n_batches, "val_auc": val_auc})
        if record_history:
            history.append(net.state())
        stop = stopper.update(val_auc)
        if stopper.improved:
            best_state = net.state()
        log.info("epoch %d lt=%.5f val_auc=%.4f", epoch, rows[-1]["train_lt"], val_auc)
        if stop:
            break

    net.load_state(best_state)
    meta = {
        "best_epoch": stopper.best_epoch,
        "best_val_auc": stopper.best,
        "epochs_run": len(rows),
        "pos_weight": pos_weight,
        "train_config": config.to_dict(),
    }
    return TrainResult(Checkpoint.from_network(net, meta), rows, history)


def inner_split(samples, seed, fraction_folds=10):
    """Hold back a stratified ~10% slice of ``samples`` for early stopping."""
    split = stratified_folds([s.label for s in samples], fraction_folds, seed, ids=list(range(len(samples))))
    val = [s for k, s in enumerate(samples) if split.assignment[k] == 0]
    rest = [s for k, s in enumerate(samples) if split.assignment[k] != 0]
    return rest, val


def summarize(aucs):
    """Median, mean and population standard deviation of fold AUCs."""
    vals = [float(a) for a in aucs if a is not None]
    if not vals:
        return {"median": None, "mean": None, "std": None, "n": 0}
    return {"median": statistics.median(vals), "mean": statistics.fmean(vals),
            "std": statistics.pstdev(vals), "n": len(vals)}


def cross_validate(samples, n_folds=5, config=None):
    """Stratified k-fold: train on k-1 folds (minus an inner validation slice), test on the rest."""
    from .evaluation import evaluate

    config = config or TrainConfig()
    if n_folds < 2:
        raise ConfigError(f"n_folds must be >= 2, got {n_folds}")
    ids = [s.id for s in samples]
    split = stratified_folds([s.label for s in samples], n_folds, config.seed, ids=ids)
    reports = []
    for fold in range(n_folds):
        test = [s for s in samples if split.assignment[s.id] == fold]
        rest = [s for s in samples if split.assignment[s.id] != fold]
        fit, val = inner_split(rest, config.seed)
        result = train(fit, val, config)
        report = evaluate(result.checkpoint, test)
        report.fold = fold
        reports.append(report)
        log.info("fold %d auc=%s", fold, report.auc)
    return reports, summarize([r.auc for r in reports])
