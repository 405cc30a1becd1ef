"""Evaluation reports and CAM heatmap export."""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint
from .data.netpbm import encode_pgm, encode_ppm
from .data.preprocess import geometry, normalize, resize_bilinear
from .errors import LesionAttentionError, MetricUndefinedError
from .geometry import extend_bbox, lesion_mask, normalize_cam
from .losses import auc, cam_concentration, score_separation
from .network import compute_cam
from .training import predict

log = logging.getLogger(__name__)


@dataclass
class EvalReport:
    auc: float = None
    cam_concentration_mean: float = None
    score_separation: float = None
    score_separation_correct: float = None
    records: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    fold: int = None

    def to_dict(self):
        return {
            "auc": self.auc,
            "cam_concentration_mean": self.cam_concentration_mean,
            "score_separation": self.score_separation,
            "score_separation_correct": self.score_separation_correct,
            "n_samples": len(self.records),
            "fold": self.fold,
            "records": self.records,
            "warnings": self.warnings,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def _safe(metric, *args):
    try:
        return metric(*args)
    except MetricUndefinedError:
        return None


def evaluate(model, samples, threshold=0.5):
    """Score ``samples`` without dropout or augmentation.

    ``model`` is a :class:`Checkpoint` or a network. Concentration uses the
    same extended-ellipse mask as training, built from each sample's box.
    """
    net = model.to_network() if isinstance(model, Checkpoint) else model
    side, cam_side = net.input_side, net.feature_side
    scores, cams, boxes = predict(net, samples, side)
    labels = np.array([s.label for s in samples])
    report = EvalReport()
    concentrations = []
    for s, score, cam, box in zip(samples, scores, cams, boxes):
        conc = None
        if box is None:
            report.warnings.append({"id": s.id, "warning": "missing box; concentration omitted"})
        else:
            conc = _safe(cam_concentration, cam, lesion_mask(box, side, side, cam_side))
            if conc is None:
                report.warnings.append({"id": s.id, "warning": "all-zero CAM; concentration undefined"})
            else:
                concentrations.append(conc)
        report.records.append({"id": s.id, "label": int(s.label), "score": float(score), "concentration": conc})
    for w in report.warnings:
        log.warning("%s: %s", w["id"], w["warning"])

    report.auc = _safe(auc, scores, labels)
    report.score_separation = _safe(score_separation, scores, labels)
    correct = (scores >= threshold) == (labels == 1)
    report.score_separation_correct = _safe(score_separation, scores[correct], labels[correct])
    report.cam_concentration_mean = float(np.mean(concentrations)) if concentrations else None
    return report


def cam_for_image(net, image, box=None):
    """Normalized CAM at feature resolution plus the image and box in the input frame."""
    side = net.input_side
    img, box = geometry(image, side, box)
    with T.no_grad():
        _, feats = net.forward(T.Tensor(normalize(img)[None].astype(net.dtype)), training=False)
        cam = normalize_cam(compute_cam(net, feats).data[0].astype(np.float64))
    return cam, img, box


def heatmap_bytes(cam, side=None):
    """PGM bytes for a normalized CAM, bilinearly upsampled to ``side`` if given."""
    values = cam if side is None else np.clip(resize_bilinear(cam, side, side), 0.0, 1.0)
    return encode_pgm(values)


def overlay_image(image, cam, box=None):
    """Blend ``image`` at 50% with a copy whose red channel is raised to the
    heatmap; outline ``box`` in green."""
    side = image.shape[1]
    heat = np.clip(resize_bilinear(cam, side, side), 0.0, 1.0)
    layer = image.copy()
    layer[0] = np.maximum(image[0], heat)
    out = 0.5 * image + 0.5 * layer
    if box is not None:
        x0, y0 = int(np.floor(box.x_min)), int(np.floor(box.y_min))
        x1, y1 = int(np.ceil(box.x_max)) - 1, int(np.ceil(box.y_max)) - 1
        x0, y0 = max(x0, 0), max(y0, 0)
        x1, y1 = min(x1, side - 1), min(y1, side - 1)
        green = np.array([0.0, 1.0, 0.0])[:, None]
        out[:, y0, x0:x1 + 1] = green
        out[:, y1, x0:x1 + 1] = green
        out[:, y0:y1 + 1, x0] = green
        out[:, y0:y1 + 1, x1] = green
    return np.clip(out, 0.0, 1.0)


def export_heatmap(model, image, out_path, box=None, overlay_path=None, native=False):
    """Write the sample's normalized CAM as a PGM (and optionally a PPM overlay).

    ``native=True`` writes the map at feature resolution instead of upsampling
    it to the network input size.
    """
    net = model.to_network() if isinstance(model, Checkpoint) else model
    cam, img, box = cam_for_image(net, image, box)
    try:
        Path(out_path).write_bytes(heatmap_bytes(cam, None if native else net.input_side))
        if overlay_path is not None:
            ext = extend_bbox(box, net.input_side, net.input_side) if box is not None else None
            Path(overlay_path).write_bytes(encode_ppm(overlay_image(img, cam, ext)))
    except OSError as exc:
        raise LesionAttentionError(f"cannot write heatmap to {exc.filename}: {exc.strerror}") from exc
    return cam
