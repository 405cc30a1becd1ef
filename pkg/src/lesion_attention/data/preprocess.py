"""Square padding, bilinear resizing and ImageNet normalization."""

import numpy as np

from ..geometry import BoundingBox

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


def _axis_weights(n_in, n_out):
    # pixel-center alignment: dst center (i + 0.5) maps to src center (j + 0.5)
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    return lo, hi, frac


def resize_bilinear(image, out_h, out_w):
    """Bilinear resize of ``[C, H, W]`` (or ``[H, W]``) with edge clamping."""
    img = np.asarray(image, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[None]
    _, h, w = img.shape
    if (h, w) == (out_h, out_w):
        out = img.copy()
    else:
        r0, r1, fr = _axis_weights(h, out_h)
        c0, c1, fc = _axis_weights(w, out_w)
        rows = img[:, r0, :] * (1.0 - fr)[None, :, None] + img[:, r1, :] * fr[None, :, None]
        out = rows[:, :, c0] * (1.0 - fc) + rows[:, :, c1] * fc
    return out[0] if squeeze else out


def pad_square(image):
    """Zero-pad the short axis symmetrically; the odd extra pixel goes bottom/right.

    Returns the padded ``[C, S, S]`` array and the ``(left, top)`` offsets.
    """
    c, h, w = image.shape
    side = max(h, w)
    top = (side - h) // 2
    left = (side - w) // 2
    out = np.zeros((c, side, side), dtype=image.dtype)
    out[:, top:top + h, left:left + w] = image
    return out, (left, top)


def transform_box(box, offset, scale):
    left, top = offset
    return BoundingBox((box.x_min + left) * scale, (box.y_min + top) * scale,
                       (box.x_max + left) * scale, (box.y_max + top) * scale)


def normalize(image, mean=IMAGENET_MEAN, std=IMAGENET_STD):
    m = np.asarray(mean, dtype=np.float64)[:, None, None]
    s = np.asarray(std, dtype=np.float64)[:, None, None]
    return (np.asarray(image, dtype=np.float64) - m) / s


def denormalize(image, mean=IMAGENET_MEAN, std=IMAGENET_STD):
    m = np.asarray(mean, dtype=np.float64)[:, None, None]
    s = np.asarray(std, dtype=np.float64)[:, None, None]
    return np.asarray(image, dtype=np.float64) * s + m


def geometry(image, target_side, box=None):
    """Pad to square and resize; returns ``(image, box)`` still in ``[0, 1]``."""
    padded, offset = pad_square(np.asarray(image, dtype=np.float64))
    side = padded.shape[1]
    out = resize_bilinear(padded, target_side, target_side)
    if box is not None:
        box = transform_box(box, offset, target_side / side)
    return out, box


def preprocess(image, target_side, box=None):
    """Pad, resize and normalize an image in ``[0, 1]``.

    Returns ``(tensor_data, box)`` where ``box`` is mapped through the same
    pad and scale (``None`` if not given).
    """
    out, box = geometry(image, target_side, box)
    return normalize(out), box
