"""Random training-time image transformations.

Works on ``[3, H, W]`` images in ``[0, 1]`` (before normalization). Geometric
transforms move the bounding box with the image; photometric ones leave it
alone. Each transform is gated by its own probability and all draws come from
a generator seeded by the caller, so a seed fully determines the output.
"""

import math
from dataclasses import asdict, dataclass, replace

import cv2
import numpy as np
from scipy import ndimage

from ..geometry import BoundingBox
from ..rng import stream

GEOMETRIC = ("transpose", "hflip", "vflip", "shift", "rotate", "zoom")
PHOTOMETRIC = ("brightness", "contrast", "saturation", "hue")
FILTERS = ("clahe", "noise", "motion_blur", "median_blur", "gaussian_blur")


@dataclass(frozen=True)
class AugmentConfig:
    p_geometric: float = 0.5
    p_photometric: float = 0.3
    p_filter: float = 0.1
    shift_limit: float = 0.15
    rotate_limit: float = 90.0
    zoom_range: tuple = (0.85, 1.15)
    color_range: tuple = (0.85, 1.15)
    noise_sigma: float = 0.02
    clahe_clip: float = 2.0
    clahe_tiles: int = 8

    @classmethod
    def off(cls):
        return cls(p_geometric=0.0, p_photometric=0.0, p_filter=0.0)

    def to_dict(self):
        return asdict(self)

    def gate(self, name):
        if name in GEOMETRIC:
            return self.p_geometric
        if name in PHOTOMETRIC:
            return self.p_photometric
        return self.p_filter


# -- geometric ------------------------------------------------------------------


def _clip_box(box, w, h):
    if box is None:
        return None
    return box.clip(w, h)


def transpose(image, box=None):
    out = np.ascontiguousarray(image.transpose(0, 2, 1))
    if box is not None:
        box = BoundingBox(box.y_min, box.x_min, box.y_max, box.x_max)
    return out, box


def hflip(image, box=None):
    w = image.shape[2]
    out = np.ascontiguousarray(image[:, :, ::-1])
    if box is not None:
        box = BoundingBox(w - box.x_max, box.y_min, w - box.x_min, box.y_max)
    return out, box


def vflip(image, box=None):
    h = image.shape[1]
    out = np.ascontiguousarray(image[:, ::-1, :])
    if box is not None:
        box = BoundingBox(box.x_min, h - box.y_max, box.x_max, h - box.y_min)
    return out, box


def _rot90(image, box, quarter_turns):
    """Counter-clockwise (as displayed) rotation by whole quarter turns, exact."""
    out = image
    for _ in range(quarter_turns % 4):
        w = out.shape[2]
        out = np.ascontiguousarray(np.rot90(out, 1, axes=(1, 2)))
        if box is not None:
            # (x, y) -> (y, w - x)
            box = BoundingBox(box.y_min, w - box.x_max, box.y_max, w - box.x_min)
    return out, box


def warp_affine(image, box, matrix):
    """Apply ``p' = A @ (p - c) + c + t`` about the image center with bilinear
    sampling and zero fill. ``matrix`` is 2x3 in (x, y) edge coordinates."""
    _, h, w = image.shape
    a = np.asarray(matrix, dtype=np.float64)[:, :2]
    t = np.asarray(matrix, dtype=np.float64)[:, 2]
    c = np.array([w / 2.0, h / 2.0])
    inv = np.linalg.inv(a)
    # destination pixel index q (x=col, y=row) samples source index
    # inv @ (q + 0.5 - c - t) + c - 0.5
    m = np.column_stack([inv, inv @ (0.5 - c - t) + c - 0.5])
    hwc = np.ascontiguousarray(image.transpose(1, 2, 0))
    warped = cv2.warpAffine(hwc, m, (w, h), flags=cv2.INTER_LINEAR | cv2.WARP_INVERSE_MAP,
                            borderMode=cv2.BORDER_CONSTANT, borderValue=0)
    out = np.ascontiguousarray(warped.reshape(h, w, -1).transpose(2, 0, 1))
    if box is not None:
        corners = np.array([[box.x_min, box.y_min], [box.x_max, box.y_min],
                            [box.x_min, box.y_max], [box.x_max, box.y_max]])
        moved = (corners - c) @ a.T + c + t
        box = BoundingBox(*moved.min(axis=0), *moved.max(axis=0)).clip(w, h)
        if box.width <= 0 or box.height <= 0:
            box = None
    return out, box


def rotation_matrix(degrees):
    """2x2 matrix turning (x, y-down) coordinates counter-clockwise as displayed."""
    r = math.radians(degrees)
    return np.array([[math.cos(r), math.sin(r)], [-math.sin(r), math.cos(r)]])


def rotate(image, box=None, degrees=0.0):
    """Rotate counter-clockwise (as displayed) about the center."""
    quarter = degrees / 90.0
    if float(quarter).is_integer():
        return _rot90(image, box, int(quarter))
    return warp_affine(image, box, np.column_stack([rotation_matrix(degrees), np.zeros(2)]))


def shift(image, box=None, dx=0.0, dy=0.0):
    """Translate by fractions of width/height."""
    _, h, w = image.shape
    return warp_affine(image, box, [[1.0, 0.0, dx * w], [0.0, 1.0, dy * h]])


def zoom(image, box=None, factor=1.0):
    return warp_affine(image, box, [[factor, 0.0, 0.0], [0.0, factor, 0.0]])


# -- photometric -----------------------------------------------------------------


def rgb_to_hsv(image):
    r, g, b = image
    mx = image.max(axis=0)
    mn = image.min(axis=0)
    delta = mx - mn
    safe = np.where(delta > 0, delta, 1.0)
    h = np.where(mx == r, ((g - b) / safe) % 6.0,
                 np.where(mx == g, (b - r) / safe + 2.0, (r - g) / safe + 4.0))
    h = np.where(delta > 0, h / 6.0, 0.0)
    s = np.where(mx > 0, delta / np.where(mx > 0, mx, 1.0), 0.0)
    return np.stack([h, s, mx])


def hsv_to_rgb(hsv):
    h, s, v = hsv
    h6 = (h % 1.0) * 6.0
    i = np.floor(h6).astype(np.int64) % 6
    f = h6 - np.floor(h6)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    choices = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)]
    out = np.zeros((3,) + h.shape)
    for k, (rr, gg, bb) in enumerate(choices):
        sel = i == k
        out[0][sel], out[1][sel], out[2][sel] = rr[sel], gg[sel], bb[sel]
    return out


def brightness(image, factor):
    return image * factor


def contrast(image, factor):
    m = image.mean()
    return (image - m) * factor + m


def saturation(image, factor):
    hsv = rgb_to_hsv(np.clip(image, 0.0, 1.0))
    hsv[1] = np.clip(hsv[1] * factor, 0.0, 1.0)
    return hsv_to_rgb(hsv)


def hue(image, factor):
    """Multiply the hue channel, wrapping modulo 1."""
    hsv = rgb_to_hsv(np.clip(image, 0.0, 1.0))
    hsv[0] = (hsv[0] * factor) % 1.0
    return hsv_to_rgb(hsv)


# -- filters --------------------------------------------------------------------


def clahe(image, clip_limit=2.0, tiles=8):
    """Contrast-limited adaptive equalization of the HSV value channel."""
    hsv = rgb_to_hsv(np.clip(image, 0.0, 1.0))
    v8 = np.floor(hsv[2] * 255.0 + 0.5).astype(np.uint8)
    eq = cv2.createCLAHE(clipLimit=clip_limit, tileGridSize=(tiles, tiles)).apply(v8)
    hsv[2] = eq.astype(np.float64) / 255.0
    return hsv_to_rgb(hsv)


def gaussian_noise(image, rng, sigma=0.02):
    return image + rng.normal(0.0, sigma, size=image.shape)


def motion_blur(image, rng):
    k = np.zeros((3, 3))
    direction = int(rng.integers(4))
    if direction == 0:
        k[1, :] = 1.0
    elif direction == 1:
        k[:, 1] = 1.0
    elif direction == 2:
        np.fill_diagonal(k, 1.0)
    else:
        np.fill_diagonal(np.fliplr(k), 1.0)
    k /= k.sum()
    return np.stack([ndimage.convolve(ch, k, mode="reflect") for ch in image])


def median_blur(image):
    return np.stack([ndimage.median_filter(ch, size=3, mode="reflect") for ch in image])


def gaussian_blur(image):
    k1 = np.array([0.25, 0.5, 0.25])
    return np.stack([ndimage.convolve(ch, np.outer(k1, k1), mode="reflect") for ch in image])


# -- pipeline -------------------------------------------------------------------


def augment_image(image, box, seed, config=None):
    """Randomly transform ``image`` (and ``box``); returns ``(image, box, applied)``.

    ``applied`` lists the transforms that fired, with their sampled parameters.
    """
    config = config or AugmentConfig()
    rng = stream(seed)
    img = np.asarray(image, dtype=np.float64)
    applied = []
    lo, hi = config.color_range

    def fires(name):
        # one draw per gate, whether or not the gate is open, keeps streams aligned
        return rng.random() < config.gate(name)

    if fires("transpose"):
        img, box = transpose(img, box)
        applied.append(("transpose",))
    if fires("hflip"):
        img, box = hflip(img, box)
        applied.append(("hflip",))
    if fires("vflip"):
        img, box = vflip(img, box)
        applied.append(("vflip",))
    # shift, rotation and zoom compose into a single resampling
    linear = np.eye(2)
    move = np.zeros(2)
    warped = False
    _, h, w = img.shape
    if fires("shift"):
        warped = True
        dx, dy = rng.uniform(-config.shift_limit, config.shift_limit, size=2)
        move = np.array([dx * w, dy * h])
        applied.append(("shift", float(dx), float(dy)))
    if fires("rotate"):
        warped = True
        deg = rng.uniform(-config.rotate_limit, config.rotate_limit)
        linear = rotation_matrix(deg) @ linear
        applied.append(("rotate", float(deg)))
    if fires("zoom"):
        warped = True
        f = rng.uniform(*config.zoom_range)
        linear = f * linear
        applied.append(("zoom", float(f)))
    if warped:
        img, box = warp_affine(img, box, np.column_stack([linear, linear @ move]))
    if fires("brightness"):
        f = rng.uniform(lo, hi)
        img = brightness(img, f)
        applied.append(("brightness", float(f)))
    if fires("contrast"):
        f = rng.uniform(lo, hi)
        img = contrast(img, f)
        applied.append(("contrast", float(f)))
    if fires("saturation"):
        f = rng.uniform(lo, hi)
        img = saturation(img, f)
        applied.append(("saturation", float(f)))
    if fires("hue"):
        f = rng.uniform(lo, hi)
        img = hue(img, f)
        applied.append(("hue", float(f)))
    if fires("clahe"):
        img = clahe(img, config.clahe_clip, config.clahe_tiles)
        applied.append(("clahe",))
    if fires("noise"):
        img = gaussian_noise(img, rng, config.noise_sigma)
        applied.append(("noise",))
    if fires("motion_blur"):
        img = motion_blur(img, rng)
        applied.append(("motion_blur",))
    if fires("median_blur"):
        img = median_blur(img)
        applied.append(("median_blur",))
    if fires("gaussian_blur"):
        img = gaussian_blur(img)
        applied.append(("gaussian_blur",))
    return np.clip(img, 0.0, 1.0), box, applied


def augment(sample, seed, config=None):
    """Return an augmented copy of ``sample``; the label is never touched."""
    img, box, applied = augment_image(sample.image, sample.box, seed, config)
    meta = dict(sample.meta)
    meta["augment"] = applied
    return replace(sample, image=img, box=box, meta=meta)
