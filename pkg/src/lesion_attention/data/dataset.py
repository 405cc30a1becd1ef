"""Samples and the on-disk dataset directory layout.

Layout::

    images/<id>.ppm
    annotations.csv     id,label,x_min,y_min,x_max,y_max,has_artifact
    gen_config.json     generator configuration (provenance), optional
"""

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ParseError
from ..geometry import BoundingBox
from .netpbm import load_ppm, save_ppm

ANNOTATION_FIELDS = ["id", "label", "x_min", "y_min", "x_max", "y_max", "has_artifact"]


@dataclass
class Sample:
    id: str
    image: np.ndarray  # [3, H, W] in [0, 1]
    label: int
    box: BoundingBox = None
    has_artifact: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def height(self):
        return self.image.shape[1]

    @property
    def width(self):
        return self.image.shape[2]


def _fmt(v):
    v = float(v)
    return str(int(v)) if v.is_integer() else repr(v)


def write_annotations(samples, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ANNOTATION_FIELDS)
        for s in samples:
            b = s.box
            coords = [_fmt(c) for c in b.as_tuple()] if b is not None else ["", "", "", ""]
            writer.writerow([s.id, int(s.label), *coords, int(bool(s.has_artifact))])


def read_annotations(path):
    """Parse an annotation CSV; ``has_artifact`` and box columns may be absent or blank."""
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"id", "label"} - set(reader.fieldnames or [])
        if missing:
            raise ParseError(f"annotation header lacks {sorted(missing)}", path=path)
        for line, row in enumerate(reader, start=2):
            try:
                label = int(row["label"])
                if label not in (0, 1):
                    raise ValueError(f"label {label} not in {{0, 1}}")
                coords = [row.get(k) for k in ("x_min", "y_min", "x_max", "y_max")]
                box = None
                if all(c not in (None, "") for c in coords):
                    box = BoundingBox(*(float(c) for c in coords))
                art = row.get("has_artifact")
                records.append({
                    "id": row["id"],
                    "label": label,
                    "box": box,
                    "has_artifact": bool(int(art)) if art not in (None, "") else False,
                })
            except ValueError as exc:
                raise ParseError(f"line {line}: {exc}", path=path) from exc
    return records


def write_dataset(samples, out_dir, gen_config=None):
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    for s in samples:
        save_ppm(s.image, out / "images" / f"{s.id}.ppm")
    write_annotations(samples, out / "annotations.csv")
    if gen_config is not None:
        text = json.dumps(gen_config, sort_keys=True, indent=2) + "\n"
        (out / "gen_config.json").write_text(text, encoding="utf-8")
    return out


def load_dataset(data_dir):
    data_dir = Path(data_dir)
    samples = []
    for rec in read_annotations(data_dir / "annotations.csv"):
        image = load_ppm(data_dir / "images" / f"{rec['id']}.ppm")
        samples.append(Sample(rec["id"], image, rec["label"], rec["box"], rec["has_artifact"]))
    return samples


def directory_hash(path):
    """SHA-256 over relative paths and contents of every file under ``path``."""
    root = Path(path)
    h = hashlib.sha256()
    for f in sorted(p for p in root.rglob("*") if p.is_file()):
        h.update(f.relative_to(root).as_posix().encode("utf-8") + b"\0")
        h.update(f.read_bytes())
    return h.hexdigest()
