"""Lesion mask geometry and CAM normalization."""

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError, GeometryError, NumericError

AREA_EXTENSION = 1.2


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in continuous pixel coordinates (edges, not centers)."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        vals = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(v) for v in vals):
            raise GeometryError(f"non-finite box coordinates {vals}")

    @property
    def width(self):
        return self.x_max - self.x_min

    @property
    def height(self):
        return self.y_max - self.y_min

    @property
    def area(self):
        return self.width * self.height

    @property
    def center(self):
        return (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))

    def check(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise GeometryError(f"degenerate box {self.as_tuple()}")
        return self

    def as_tuple(self):
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def clip(self, image_w, image_h):
        return BoundingBox(
            min(max(self.x_min, 0.0), image_w),
            min(max(self.y_min, 0.0), image_h),
            min(max(self.x_max, 0.0), image_w),
            min(max(self.y_max, 0.0), image_h),
        )

    def iou(self, other):
        ix = max(0.0, min(self.x_max, other.x_max) - max(self.x_min, other.x_min))
        iy = max(0.0, min(self.y_max, other.y_max) - max(self.y_min, other.y_min))
        inter = ix * iy
        union = self.area + other.area - inter
        return inter / union if union > 0 else 0.0


@dataclass
class EllipseMask:
    values: np.ndarray  # uint8, 0 or 1
    source_box: BoundingBox = None

    @property
    def resolution(self):
        return self.values.shape


def extend_bbox(box, image_w, image_h, area_factor=AREA_EXTENSION):
    """Grow ``box`` about its center so its area is multiplied by ``area_factor``
    (aspect ratio kept), then clip to the image."""
    box.check()
    s = math.sqrt(area_factor)
    cx, cy = box.center
    hw, hh = 0.5 * box.width * s, 0.5 * box.height * s
    out = BoundingBox(cx - hw, cy - hh, cx + hw, cy + hh).clip(image_w, image_h)
    return out.check()


def rasterize_ellipse(box, resolution, image_w, image_h):
    """Binary mask of the ellipse inscribed in ``box``.

    Pixel ``(r, c)`` is set when its center, mapped to image coordinates as
    ``x = (c + 0.5) * image_w / cols``, lies inside or on the ellipse. If the
    ellipse is too thin to contain any pixel center but still overlaps the
    frame, the pixel holding the ellipse center is set so the mask is never
    empty.
    """
    box.check()
    rows, cols = resolution
    if rows < 1 or cols < 1:
        raise DimensionError(f"resolution must be at least 1x1, got {resolution}")
    cx, cy = box.center
    a, b = 0.5 * box.width, 0.5 * box.height
    xs = (np.arange(cols) + 0.5) * (image_w / cols)
    ys = (np.arange(rows) + 0.5) * (image_h / rows)
    dx = ((xs - cx) / a) ** 2
    dy = ((ys - cy) / b) ** 2
    values = (dy[:, None] + dx[None, :] <= 1.0).astype(np.uint8)
    if not values.any():
        inside = box.x_max > 0 and box.x_min < image_w and box.y_max > 0 and box.y_min < image_h
        if inside:
            px = min(max(cx, 0.0), image_w - 1e-9)
            py = min(max(cy, 0.0), image_h - 1e-9)
            values[min(int(py * rows / image_h), rows - 1), min(int(px * cols / image_w), cols - 1)] = 1
    return EllipseMask(values, box)


def resize_mask(mask, target):
    """Nearest-neighbour resample with pixel-center alignment; stays binary."""
    rows, cols = target
    if rows < 1 or cols < 1:
        raise DimensionError(f"target must be at least 1x1, got {target}")
    src = mask.values
    sr, sc = src.shape
    ri = np.minimum(((np.arange(rows) + 0.5) * sr / rows).astype(np.int64), sr - 1)
    ci = np.minimum(((np.arange(cols) + 0.5) * sc / cols).astype(np.int64), sc - 1)
    return EllipseMask(src[np.ix_(ri, ci)].copy(), mask.source_box)


def lesion_mask(box, image_w, image_h, cam_side, raster_side=None):
    """The training mask pipeline: extend the box, rasterize the ellipse, resize
    to the CAM grid.

    Rasterization happens at ``raster_side`` (default: the image size). If the
    nearest-neighbour resize loses every pixel the ellipse is rasterized
    directly at CAM resolution instead.
    """
    ext = extend_bbox(box, image_w, image_h)
    res = (raster_side, raster_side) if raster_side else (int(round(image_h)), int(round(image_w)))
    mask = resize_mask(rasterize_ellipse(ext, res, image_w, image_h), (cam_side, cam_side))
    if not mask.values.any():
        mask = rasterize_ellipse(ext, (cam_side, cam_side), image_w, image_h)
    return mask


def normalize_cam(cam):
    """Clamp negatives to 0 and divide each map by its maximum.

    Accepts a 2-D map or a ``[N,F,F]`` stack (array or :class:`Tensor`). For
    tensors the result stays in the graph, but the maximum is treated as a
    constant. Maps whose maximum is <= 0 become all zeros.
    """
    is_tensor = isinstance(cam, T.Tensor)
    data = cam.data if is_tensor else np.asarray(cam, dtype=np.float64)
    if np.isnan(data).any():
        raise NumericError("NaN in class activation map")
    single = data.ndim == 2
    d3 = data[None] if single else data
    if d3.ndim != 3:
        raise DimensionError(f"CAM must be 2-D or [N,F,F], got shape {data.shape}")
    peak = np.maximum(d3, 0).max(axis=(1, 2))
    live = (peak > 0)[:, None, None]
    divisor = np.where(live, peak[:, None, None], 1.0).astype(data.dtype)
    scale = np.where(live, 1.0 / divisor, 0.0).astype(data.dtype)
    if single:
        divisor, scale, live = divisor[0], scale[0], live[0]
    positive = data > 0
    # true division so the maximum lands on exactly 1
    out = np.where(positive & live, data / divisor, 0).astype(data.dtype)
    if not is_tensor:
        return out
    factor = positive * scale
    return T._node(out.astype(data.dtype), (cam,), lambda g: (g * factor,))
