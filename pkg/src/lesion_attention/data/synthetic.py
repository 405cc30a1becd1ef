"""Synthetic dermoscopy-like images with a controllable spurious artifact.

Every image is a skin-toned background with one lesion. Melanoma lesions are
darker and more chromatically varied with an irregular border; benign lesions
are lighter, smoother and rounder. Independently of the lesion, an artifact
(ruler ticks, ink dots or a darkened corner) is painted outside the lesion.
With probability ``artifact_correlation`` its presence equals the label,
otherwise it is a fair coin flip, so the artifact is a learnable shortcut
whose strength the config controls.
"""

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ConfigError
from ..geometry import BoundingBox
from ..rng import LABELS, SAMPLE, stream
from .dataset import Sample
from .netpbm import quantize

ARTIFACT_KINDS = ("ruler", "ink_dot", "corner_vignette")


@dataclass(frozen=True)
class GenConfig:
    n_samples: int = 100
    image_side: int = 64
    melanoma_fraction: float = 0.3
    artifact_correlation: float = 0.9
    artifact_kinds: tuple = ARTIFACT_KINDS
    seed: int = 0
    # overlap between the two lesion appearance distributions, in [0, 1]
    lesion_ambiguity: float = 0.5

    def validate(self):
        if self.image_side < 32:
            raise ConfigError(f"image_side must be >= 32, got {self.image_side}")
        if self.n_samples < 1:
            raise ConfigError("n_samples must be positive")
        if not 0.0 < self.melanoma_fraction < 1.0:
            raise ConfigError("melanoma_fraction must be in (0, 1)")
        if self.melanoma_fraction * self.n_samples < 1:
            raise ConfigError("melanoma_fraction * n_samples < 1: no melanoma samples")
        if not 0.0 <= self.artifact_correlation <= 1.0:
            raise ConfigError("artifact_correlation must be in [0, 1]")
        if not self.artifact_kinds or set(self.artifact_kinds) - set(ARTIFACT_KINDS):
            raise ConfigError(f"artifact_kinds must be a non-empty subset of {ARTIFACT_KINDS}")
        if not 0.0 <= self.lesion_ambiguity <= 1.0:
            raise ConfigError("lesion_ambiguity must be in [0, 1]")

    def to_dict(self):
        d = asdict(self)
        d["artifact_kinds"] = list(self.artifact_kinds)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["artifact_kinds"] = tuple(d.get("artifact_kinds", ARTIFACT_KINDS))
        return cls(**d)


def class_counts(n, fraction):
    """Largest-remainder split of ``n`` into (negatives, positives)."""
    exact_pos = n * fraction
    exact_neg = n - exact_pos
    pos, neg = math.floor(exact_pos), math.floor(exact_neg)
    left = n - pos - neg
    if left:
        if exact_pos - pos >= exact_neg - neg:
            pos += left
        else:
            neg += left
    return neg, pos


def assign_labels(config):
    neg, pos = class_counts(config.n_samples, config.melanoma_fraction)
    labels = np.array([1] * pos + [0] * neg, dtype=np.int64)
    return stream(config.seed, LABELS).permutation(labels)


def _smooth_field(rng, side, cells=4):
    """Low-frequency random field in roughly [-1, 1] (bilinear upsampled grid)."""
    from .preprocess import resize_bilinear

    grid = rng.uniform(-1.0, 1.0, size=(cells, cells))
    return resize_bilinear(grid, side, side)


def _lesion_alpha(rng, side, label, ambiguity):
    yy, xx = np.mgrid[0:side, 0:side] + 0.5
    cx = rng.uniform(0.3, 0.7) * side
    cy = rng.uniform(0.3, 0.7) * side
    rx = rng.uniform(0.13, 0.21) * side
    ry = rng.uniform(0.13, 0.21) * side
    theta = rng.uniform(0.0, math.pi)
    dx, dy = xx - cx, yy - cy
    u = dx * math.cos(theta) + dy * math.sin(theta)
    v = -dx * math.sin(theta) + dy * math.cos(theta)
    r = np.sqrt((u / rx) ** 2 + (v / ry) ** 2)
    phi = np.arctan2(v / ry, u / rx)
    # border irregularity: sum of random harmonics
    irregular = 0.04 + (0.16 if label else 0.0) * (1.0 - 0.5 * ambiguity) * rng.uniform(0.5, 1.0)
    bumps = np.zeros_like(phi)
    for k in range(3, 8):
        bumps += rng.normal(0.0, 1.0) * np.cos(k * phi + rng.uniform(0, 2 * math.pi))
    edge = 1.0 + irregular * bumps / math.sqrt(5.0)
    return np.clip((edge - r) * 4.0 + 0.5, 0.0, 1.0)


def _paint_artifact(rng, img, kind, lesion):
    side = img.shape[1]
    yy, xx = np.mgrid[0:side, 0:side] + 0.5
    free = lesion < 0.05
    if kind == "ruler":
        edge = rng.integers(4)
        offset = int(rng.integers(2, 5))
        shade = np.zeros((side, side))
        shade_line = np.zeros(side, dtype=bool)
        shade_line[offset] = True
        ticks = np.zeros(side, dtype=bool)
        ticks[int(rng.integers(0, 4))::4] = True
        tick_len = np.zeros(side, dtype=bool)
        tick_len[offset:offset + 4] = True
        band = shade_line[:, None] | (tick_len[:, None] & ticks[None, :])
        shade[band] = 1.0
        shade = np.rot90(shade, int(edge))
        mask = shade * free
        img *= 1.0 - 0.7 * mask[None]
    elif kind == "ink_dot":
        for _ in range(int(rng.integers(2, 4))):
            for _attempt in range(20):
                px, py = rng.uniform(3, side - 3, size=2)
                rad = rng.uniform(1.5, 2.8)
                disk = (xx - px) ** 2 + (yy - py) ** 2 <= rad * rad
                if not (disk & ~free).any():
                    break
            disk = disk & free
            ink = np.array([0.15, 0.12, 0.35])
            img[:, disk] = ink[:, None] * rng.uniform(0.8, 1.2)
    elif kind == "corner_vignette":
        corner = rng.integers(4)
        cx = 0.0 if corner in (0, 3) else side
        cy = 0.0 if corner in (0, 1) else side
        dist = np.sqrt((xx - cx) ** 2 + (yy - cy) ** 2) / (0.45 * side)
        dark = np.clip(1.0 - dist, 0.0, 1.0) ** 1.5
        img *= 1.0 - 0.75 * dark[None]
    return img


def render_sample(config, index, label, has_artifact):
    """Render one image; returns ``(image, box, kind)``."""
    rng = stream(config.seed, SAMPLE, index)
    side = config.image_side
    amb = config.lesion_ambiguity

    skin = np.array([0.86, 0.66, 0.56]) * rng.uniform(0.92, 1.05, size=3)
    bg = skin[:, None, None] * (1.0 + 0.05 * _smooth_field(rng, side)[None])
    bg = bg + rng.normal(0.0, 0.01, size=bg.shape)

    alpha = _lesion_alpha(rng, side, label, amb)
    # appearance: a latent "malignancy" in [0, 1] whose overlap between classes grows with ambiguity
    spread = 0.5 * amb
    latent = float(np.clip((0.75 if label else 0.25) + rng.uniform(-spread, spread), 0.0, 1.0))
    base = np.array([0.55, 0.36, 0.26]) * (1.0 - 0.45 * latent) * rng.uniform(0.9, 1.1)
    chroma = 0.02 + 0.18 * latent
    texture = np.stack([_smooth_field(rng, side, cells=8) for _ in range(3)])
    blue = np.array([-0.05, 0.0, 0.08])[:, None, None] * latent * (_smooth_field(rng, side, 6)[None] > 0.2)
    lesion = base[:, None, None] * (1.0 + chroma * texture / 0.6) + blue
    lesion = lesion + rng.normal(0.0, 0.01 + 0.02 * latent, size=lesion.shape)

    img = bg * (1.0 - alpha[None]) + lesion * alpha[None]

    kind = None
    if has_artifact:
        kind = config.artifact_kinds[int(rng.integers(len(config.artifact_kinds)))]
        img = _paint_artifact(rng, img, kind, alpha)

    img = quantize(np.clip(img, 0.0, 1.0)).astype(np.float64) / 255.0
    ys, xs = np.nonzero(alpha >= 0.5)
    box = BoundingBox(float(xs.min()), float(ys.min()), float(xs.max() + 1), float(ys.max() + 1))
    return img, box, kind


def generate_dataset(config):
    """Generate the samples described by ``config`` (deterministic in the config)."""
    config.validate()
    labels = assign_labels(config)
    rho = config.artifact_correlation
    samples = []
    for i, label in enumerate(labels):
        coin = stream(config.seed, SAMPLE, i, 1)
        if coin.random() < rho:
            has_art = bool(label)
        else:
            has_art = bool(coin.random() < 0.5)
        img, box, kind = render_sample(config, i, int(label), has_art)
        samples.append(Sample(f"s{i:05d}", img, int(label), box, has_art, {"artifact_kind": kind}))
    return samples
