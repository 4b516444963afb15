"""Binary PGM images and LabelMe-style polygon annotations."""

from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np

from .errors import IoError, ParseError
from .geometry import Polygon

_PGM_HEADER = re.compile(rb"\AP5\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s")


def write_pgm(path, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError(f"expected a 2-D uint8 image, got {img.dtype} {img.shape}")
    h, w = img.shape
    try:
        with open(path, "wb") as fh:
            fh.write(b"P5\n%d %d\n255\n" % (w, h))
            fh.write(np.ascontiguousarray(img).tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror}") from exc


def read_pgm(path) -> np.ndarray:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read image {path}: {exc.strerror}") from exc
    m = _PGM_HEADER.match(data)
    if m is None:
        raise ParseError(f"{path} is not a binary PGM (P5) file", where="header")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise ParseError(f"{path}: only 8-bit PGM is supported (maxval {maxval})", where="maxval")
    body = data[m.end():]
    if len(body) < w * h:
        raise ParseError(f"{path}: truncated pixel data ({len(body)} of {w * h} bytes)", where="pixels")
    return np.frombuffer(body[: w * h], dtype=np.uint8).reshape(h, w).copy()


def shapes_to_json(polygons, label: str = "burr") -> list[dict]:
    return [
        {"label": label, "points": [[v.x, v.y] for v in poly.vertices]}
        for poly in polygons
    ]


def shapes_from_json(shapes, source: str = "<annotation>") -> list[tuple[str, Polygon]]:
    """Parse a LabelMe ``shapes`` list into ``(label, Polygon)`` pairs.

    Only ``label`` and ``points`` are read; anything else LabelMe writes
    (``shape_type``, ``flags``, ``group_id`` ...) is ignored.
    """
    if not isinstance(shapes, list):
        raise ParseError(f"{source}: 'shapes' must be a list", where="shapes")
    out = []
    for i, shape in enumerate(shapes):
        where = f"shapes[{i}]"
        if not isinstance(shape, dict):
            raise ParseError(f"{source}: shape is not an object", where=where)
        label = shape.get("label")
        if not isinstance(label, str):
            raise ParseError(f"{source}: missing or non-string label", where=f"{where}.label")
        points = shape.get("points")
        try:
            pts = [(float(p[0]), float(p[1])) for p in points]
            if any(len(p) != 2 for p in points):
                raise ValueError
        except (TypeError, ValueError, IndexError):
            raise ParseError(f"{source}: points must be [x, y] pairs", where=f"{where}.points") from None
        try:
            out.append((label, Polygon(pts)))
        except (ValueError, ParseError) as exc:
            raise ParseError(f"{source}: {exc}", where=f"{where}.points") from None
    return out


def read_labelme(path) -> list[tuple[str, Polygon]]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read annotation {path}: {exc.strerror}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", where=f"line {exc.lineno} column {exc.colno}") from None
    if not isinstance(doc, dict) or "shapes" not in doc:
        raise ParseError(f"{path}: no top-level 'shapes' field", where="shapes")
    return shapes_from_json(doc["shapes"], source=str(path))


def write_labelme(path, polygons, label: str = "burr", **extra) -> None:
    doc = dict(extra)
    doc["shapes"] = shapes_to_json(polygons, label)
    try:
        Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror}") from exc
