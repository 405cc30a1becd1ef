"""Attention (Jaccard), weighted BCE and composite losses, plus evaluation metrics."""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, MetricUndefinedError, NumericError

STANDARD = "standard"
LITERAL = "literal"
BCE_EPS = 1e-7


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.66
    jaccard_variant: str = STANDARD
    smoothing: float = 1.0
    pos_weight: float = 1.0
    aggregation: str = "batch"  # or "per_image"

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda must be in [0, 1], got {self.lam}")
        if self.jaccard_variant not in (STANDARD, LITERAL):
            raise ConfigError(f"unknown Jaccard variant {self.jaccard_variant!r}")
        if self.smoothing <= 0:
            raise ConfigError("smoothing must be positive")
        if self.pos_weight <= 0:
            raise ConfigError("pos_weight must be positive")
        if self.aggregation not in ("batch", "per_image"):
            raise ConfigError(f"unknown aggregation {self.aggregation!r}")


@dataclass(frozen=True)
class LossBundle:
    l_a: float
    l_c: float
    l_t: float


def _stack_masks(masks, dtype):
    arrs = [np.asarray(getattr(m, "values", m)) for m in masks]
    return np.stack(arrs).astype(dtype)


def _jaccard(cam, mask, variant, s):
    """Loss value and d(loss)/d(cam) for one aggregation group."""
    inter = float((cam * mask).sum())
    sc, sm = float(cam.sum()), float(mask.sum())
    num = inter + s
    if variant == LITERAL:
        den = sc + sm + s
        dden = np.ones_like(cam)
    else:
        den = sc + sm - inter + s
        dden = 1.0 - mask
    loss = 1.0 - num / den
    grad = -(mask * den - num * dden) / (den * den)
    return loss, grad


def attention_loss(cams, masks, config=None):
    """Jaccard-style overlap loss between normalized CAMs and binary masks.

    ``cams`` is a ``[N,F,F]`` :class:`Tensor` (graph-connected), an array, or
    a list of 2-D maps; ``masks`` a matching list of masks or arrays. Sums run
    over every pixel of every image unless ``config.aggregation`` is
    ``"per_image"``, in which case per-image losses are averaged.
    """
    config = config or LossConfig()
    is_tensor = isinstance(cams, T.Tensor)
    if is_tensor:
        cam = cams.data
    else:
        cam = np.stack([np.asarray(c, dtype=np.float64) for c in cams]) if isinstance(cams, (list, tuple)) \
            else np.asarray(cams, dtype=np.float64)
    if cam.ndim == 2:
        cam = cam[None]
    mask = _stack_masks(masks, cam.dtype)
    if mask.ndim == 2:
        mask = mask[None]
    if cam.shape != mask.shape:
        raise DimensionError(f"CAM/mask resolution mismatch: {cam.shape} vs {mask.shape}")

    if config.aggregation == "batch":
        loss, grad = _jaccard(cam, mask, config.jaccard_variant, config.smoothing)
    else:
        n = cam.shape[0]
        parts = [_jaccard(cam[i], mask[i], config.jaccard_variant, config.smoothing) for i in range(n)]
        loss = sum(p[0] for p in parts) / n
        grad = np.stack([p[1] for p in parts]) / n

    if not is_tensor:
        return loss
    grad = grad.reshape(cams.shape).astype(cams.dtype)
    return T._node(np.asarray(loss, dtype=cams.dtype), (cams,), lambda g: (g * grad,))


def classification_loss(scores, labels, pos_weight=1.0):
    """Weighted binary cross-entropy, averaged over samples.

    ``-[w*y*ln(s) + (1-y)*ln(1-s)]`` with scores clamped to
    ``[1e-7, 1 - 1e-7]`` before the logarithm. Scores of exactly 0 or 1 are
    rejected.
    """
    is_tensor = isinstance(scores, T.Tensor)
    s = scores.data if is_tensor else np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=s.dtype)
    if s.size != y.size:
        raise DimensionError(f"scores/labels length mismatch: {s.size} vs {y.size}")
    y = y.reshape(s.shape)
    if s.size == 0:
        raise DimensionError("empty score list")
    if np.isnan(s).any() or np.any(s <= 0) or np.any(s >= 1):
        raise NumericError("scores must lie strictly inside (0, 1)")
    sc = np.clip(s, BCE_EPS, 1.0 - BCE_EPS)
    n = s.size
    per = -(pos_weight * y * np.log(sc) + (1.0 - y) * np.log(1.0 - sc))
    loss = per.sum() / n
    if not is_tensor:
        return float(loss)
    inside = (s > BCE_EPS) & (s < 1.0 - BCE_EPS)
    grad = (-(pos_weight * y / sc) + (1.0 - y) / (1.0 - sc)) * inside / n
    grad = grad.astype(s.dtype)
    return T._node(np.asarray(loss, dtype=s.dtype), (scores,), lambda g: (g * grad,))


def composite_loss(l_c, l_a, lam):
    """``(1 - lam) * l_c + lam * l_a``; works on floats and tensors."""
    return (1.0 - lam) * l_c + lam * l_a


def pos_weight_from_labels(labels):
    labels = np.asarray(labels)
    pos = int((labels == 1).sum())
    neg = int((labels == 0).sum())
    if pos == 0:
        raise MetricUndefinedError("no positive samples to weight")
    return neg / pos


# -- metrics ------------------------------------------------------------------


def _split(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.size != y.size:
        raise DimensionError(f"scores/labels length mismatch: {s.size} vs {y.size}")
    pos, neg = s[y == 1], s[y == 0]
    if pos.size == 0 or neg.size == 0:
        raise MetricUndefinedError("metric needs at least one positive and one negative sample")
    return pos, neg


def auc(scores, labels):
    """ROC AUC as the Mann-Whitney statistic with midranks for ties."""
    pos, neg = _split(scores, labels)
    allv = np.concatenate([pos, neg])
    order = np.argsort(allv, kind="mergesort")
    sorted_v = allv[order]
    ranks = np.empty(allv.size, dtype=np.float64)
    # midranks over runs of equal values
    bounds = np.flatnonzero(np.diff(sorted_v)) + 1
    starts = np.concatenate([[0], bounds])
    ends = np.concatenate([bounds, [allv.size]])
    for a, b in zip(starts, ends):
        ranks[order[a:b]] = 0.5 * (a + b + 1)
    n_pos, n_neg = pos.size, neg.size
    # Twice the U statistic is an integer, so the division below is exact up to rounding once.
    u2 = 2.0 * ranks[:n_pos].sum() - n_pos * (n_pos + 1)
    return float(u2 / (2.0 * n_pos * n_neg))


def cam_concentration(cam, mask):
    """Fraction of (normalized) CAM mass that falls inside the mask."""
    c = np.asarray(cam, dtype=np.float64)
    m = np.asarray(getattr(mask, "values", mask), dtype=np.float64)
    if c.shape != m.shape:
        raise DimensionError(f"CAM/mask resolution mismatch: {c.shape} vs {m.shape}")
    total = c.sum()
    if total <= 0:
        raise MetricUndefinedError("CAM is identically zero")
    return float((c * m).sum() / total)


def score_separation(scores, labels):
    """Mean positive score minus mean negative score."""
    pos, neg = _split(scores, labels)
    return float(pos.mean() - neg.mean())
