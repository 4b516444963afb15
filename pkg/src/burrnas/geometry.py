"""Circle fitting, polar unwrapping and annotation transforms.

Burrs on the rim of a bore are crescent shaped in the camera image, which
makes axis-aligned boxes a poor fit.  Unwrapping the annulus around the part
center turns each crescent into a roughly rectangular bump.  Conventions:

* rows of the polar image are radius (``r_min`` -> row 0, ``r_max`` -> row
  ``out_height - 1``), columns are angle;
* angle 0 points along +x and grows clockwise on screen (image y axis points
  down), i.e. ``theta = atan2(y - cy, x - cx)`` wrapped to ``[0, 2*pi)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DegenerateInput,
    EmptyResult,
    InvalidConfig,
    InvalidPolygon,
    NoModel,
    OutOfAnnulus,
    OutOfRange,
)

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite point ({self.x}, {self.y})")

    def __iter__(self):
        yield self.x
        yield self.y

    def __getitem__(self, i):
        return (self.x, self.y)[i]


@dataclass(frozen=True)
class Circle:
    center: Point2
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"circle radius must be positive, got {self.radius}")


@dataclass(frozen=True)
class BBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate box {self.as_tuple()}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


@dataclass(frozen=True)
class Polygon:
    vertices: tuple[Point2, ...]

    def __init__(self, vertices: Iterable):
        pts = tuple(v if isinstance(v, Point2) else Point2(float(v[0]), float(v[1])) for v in vertices)
        if len(pts) < 3:
            raise InvalidPolygon(f"polygon needs at least 3 vertices, got {len(pts)}")
        for i, p in enumerate(pts):
            if p == pts[i - 1]:
                raise InvalidPolygon(f"consecutive duplicate vertex at index {i}")
        object.__setattr__(self, "vertices", pts)

    def as_array(self) -> np.ndarray:
        return np.array([(p.x, p.y) for p in self.vertices], dtype=float)

    def __len__(self):
        return len(self.vertices)


@dataclass(frozen=True)
class PolarConfig:
    center: Point2
    r_min: float
    r_max: float
    out_height: int = 800
    out_width: int = 1333

    def __post_init__(self):
        if not (0 <= self.r_min < self.r_max):
            raise InvalidConfig(f"need 0 <= r_min < r_max, got {self.r_min}, {self.r_max}")
        if self.out_height < 2 or self.out_width < 2:
            raise InvalidConfig("polar output must be at least 2x2")


@dataclass(frozen=True)
class PlanarView:
    """In-plane camera pose: ``world = offset + scale * R(rotation) @ image``."""

    offset: Point2 = Point2(0.0, 0.0)
    scale: float = 1.0
    rotation: float = 0.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"view scale must be positive, got {self.scale}")


def _as_xy(points) -> np.ndarray:
    if isinstance(points, np.ndarray):
        arr = np.asarray(points, dtype=float)
    else:
        arr = np.array([(p[0], p[1]) if not isinstance(p, Point2) else (p.x, p.y) for p in points], dtype=float)
    return arr.reshape(-1, 2)


# --------------------------------------------------------------------------
# circle fitting


def circumcircle(p1: Point2, p2: Point2, p3: Point2) -> Circle:
    """Circle through three points; raises DegenerateInput if collinear."""
    ax, ay = p1
    bx, by = p2
    cx, cy = p3
    # translate to p1 for conditioning
    bx, by, cx, cy = bx - ax, by - ay, cx - ax, cy - ay
    cross = bx * cy - by * cx
    if abs(cross) / 2.0 < 1e-12:
        raise DegenerateInput("points are collinear")
    b2 = bx * bx + by * by
    c2 = cx * cx + cy * cy
    ux = (cy * b2 - by * c2) / (2.0 * cross)
    uy = (bx * c2 - cx * b2) / (2.0 * cross)
    r = math.hypot(ux, uy)
    return Circle(Point2(ux + ax, uy + ay), r)


def fit_circle_lsq(points) -> Circle:
    """Algebraic (Kasa) least-squares circle over all given points."""
    xy = _as_xy(points)
    if len(xy) < 3:
        raise DegenerateInput("need at least 3 points")
    mean = xy.mean(axis=0)
    x, y = (xy - mean).T
    A = np.column_stack([x, y, np.ones_like(x)])
    rhs = x * x + y * y
    sol, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    cx, cy = sol[0] / 2.0, sol[1] / 2.0
    r2 = sol[2] + cx * cx + cy * cy
    if not r2 > 0:
        raise DegenerateInput("least-squares fit produced no real circle")
    return Circle(Point2(float(cx + mean[0]), float(cy + mean[1])), float(math.sqrt(r2)))


def extract_border_points(image: np.ndarray, grad_threshold: float) -> list[Point2]:
    """Pixel centers whose central-difference gradient magnitude >= ``grad_threshold``."""
    xy = border_points_array(image, grad_threshold)
    return [Point2(float(x), float(y)) for x, y in xy]


def border_points_array(image: np.ndarray, grad_threshold: float) -> np.ndarray:
    img = np.asarray(image, dtype=float)
    if img.ndim != 2 or img.shape[0] < 3 or img.shape[1] < 3:
        raise ValueError(f"image must be 2-D and at least 3x3, got shape {img.shape}")
    mag = gradient_magnitude(img)
    ys, xs = np.nonzero(mag >= grad_threshold)
    if len(xs) == 0:
        raise EmptyResult(f"no pixel reaches gradient {grad_threshold}")
    return np.column_stack([xs, ys]).astype(float)


def gradient_magnitude(image: np.ndarray) -> np.ndarray:
    gy, gx = np.gradient(np.asarray(image, dtype=float))
    return np.hypot(gx, gy)


def ransac_circle(points, iterations: int, inlier_tol: float, seed: int) -> tuple[Circle, int]:
    """Robust circle fit.

    Samples random triples, keeps the circumcircle with the largest consensus
    set (``|dist - r| <= inlier_tol``) and refits it by least squares over that
    set. Returns ``(circle, inlier_count)`` where the count is the size of the
    winning consensus set.
    """
    xy = _as_xy(points)
    n = len(xy)
    if n < 3:
        raise DegenerateInput(f"need at least 3 points, got {n}")
    if iterations < 1 or not inlier_tol > 0:
        raise ValueError("iterations must be >= 1 and inlier_tol > 0")

    rng = np.random.default_rng(seed)
    best_count = 0
    best_mask = None
    for _ in range(iterations):
        i, j, k = rng.choice(n, size=3, replace=False)
        try:
            c = circumcircle(Point2(*xy[i]), Point2(*xy[j]), Point2(*xy[k]))
        except DegenerateInput:
            continue
        d = np.hypot(xy[:, 0] - c.center.x, xy[:, 1] - c.center.y)
        mask = np.abs(d - c.radius) <= inlier_tol
        count = int(mask.sum())
        if count > best_count:
            best_count, best_mask = count, mask
    if best_count < 3:
        raise NoModel("no sampled triple produced a circle with 3 or more inliers")
    return fit_circle_lsq(xy[best_mask]), best_count


# --------------------------------------------------------------------------
# polar mapping


def polar_map(point: Point2, cfg: PolarConfig) -> tuple[float, float]:
    dx = point[0] - cfg.center.x
    dy = point[1] - cfg.center.y
    dist = math.hypot(dx, dy)
    eps = 1e-9 * cfg.r_max  # rounding slack at the annulus edges
    if not (cfg.r_min - eps <= dist <= cfg.r_max + eps):
        raise OutOfAnnulus(f"point at radius {dist:.6g} outside [{cfg.r_min}, {cfg.r_max}]")
    dist = min(max(dist, cfg.r_min), cfg.r_max)
    theta = math.atan2(dy, dx) % TWO_PI
    row = (dist - cfg.r_min) / (cfg.r_max - cfg.r_min) * (cfg.out_height - 1)
    col = theta / TWO_PI * cfg.out_width
    if col >= cfg.out_width:  # atan2 of -0.0 rounding
        col = 0.0
    return row, col


def polar_unmap(row: float, col: float, cfg: PolarConfig) -> Point2:
    if not (0 <= row <= cfg.out_height - 1) or not (0 <= col < cfg.out_width):
        raise OutOfRange(f"(row={row}, col={col}) outside the {cfg.out_height}x{cfg.out_width} polar grid")
    radius = cfg.r_min + row / (cfg.out_height - 1) * (cfg.r_max - cfg.r_min)
    theta = col / cfg.out_width * TWO_PI
    return Point2(cfg.center.x + radius * math.cos(theta), cfg.center.y + radius * math.sin(theta))


def bilinear_sample(image: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear lookup at float pixel coordinates; neighbours outside the image read as 0."""
    img = np.asarray(image, dtype=float)
    h, w = img.shape
    x0 = np.floor(xs).astype(int)
    y0 = np.floor(ys).astype(int)
    fx = xs - x0
    fy = ys - y0
    out = np.zeros(np.shape(xs), dtype=float)
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            yy = y0 + dy
            xx = x0 + dx
            ok = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            vals = np.zeros_like(out)
            vals[ok] = img[yy[ok], xx[ok]]
            out += wy * wx * vals
    return out


def polar_unwrap_image(image: np.ndarray, cfg: PolarConfig) -> np.ndarray:
    img = np.asarray(image)
    h, w = img.shape
    c = cfg.center
    if c.x - cfg.r_max < 0 or c.y - cfg.r_max < 0 or c.x + cfg.r_max > w - 1 or c.y + cfg.r_max > h - 1:
        raise InvalidConfig(
            f"annulus r_max={cfg.r_max} around ({c.x}, {c.y}) exceeds the {w}x{h} image"
        )
    rows = np.arange(cfg.out_height, dtype=float)
    cols = np.arange(cfg.out_width, dtype=float)
    radius = cfg.r_min + rows / (cfg.out_height - 1) * (cfg.r_max - cfg.r_min)
    theta = cols / cfg.out_width * TWO_PI
    xs = c.x + radius[:, None] * np.cos(theta)[None, :]
    ys = c.y + radius[:, None] * np.sin(theta)[None, :]
    out = bilinear_sample(img, xs, ys)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


# --------------------------------------------------------------------------
# polygons


def _dedupe(pts: list[tuple[float, float]]) -> list[tuple[float, float]]:
    out = []
    for p in pts:
        if not out or p != out[-1]:
            out.append(p)
    while len(out) > 1 and out[0] == out[-1]:
        out.pop()
    return out


def _clip_halfplane(pts, keep, boundary):
    """Sutherland-Hodgman clip of a ring against ``keep(col)`` with seam at ``col == boundary``."""
    out = []
    n = len(pts)
    for i in range(n):
        cur = pts[i]
        prev = pts[i - 1]
        cur_in, prev_in = keep(cur[1]), keep(prev[1])
        if cur_in != prev_in:
            t = (boundary - prev[1]) / (cur[1] - prev[1])
            out.append((prev[0] + t * (cur[0] - prev[0]), boundary))
        if cur_in:
            out.append(cur)
    return out


def polygon_to_polar(poly: Polygon, cfg: PolarConfig) -> list[Polygon]:
    """Map a Cartesian polygon into polar (col, row) space.

    Returned polygons use x = column (angle) and y = row (radius) so boxes and
    fill rates read the same way as on the unwrapped image. A polygon that
    crosses the angle-0 seam comes back as two pieces.
    """
    W = cfg.out_width
    mapped = [polar_map(v, cfg) for v in poly.vertices]
    # unwrap columns so consecutive vertices never jump by more than half a turn
    ring = [mapped[0]]
    shift = 0.0
    crossed = False
    for prev, cur in zip(mapped, mapped[1:] + mapped[:1]):
        d = cur[1] - prev[1]
        if d > W / 2:
            shift -= W
            crossed = True
        elif d < -W / 2:
            shift += W
            crossed = True
        ring.append((cur[0], cur[1] + shift))
    if shift != 0.0:
        raise InvalidPolygon("polygon encloses the polar center")
    ring.pop()

    if not crossed:
        return [Polygon([(c, r) for r, c in _dedupe(mapped)])]

    boundary = W if max(c for _, c in ring) > W else 0.0
    pieces = []
    high = _dedupe(_clip_halfplane(ring, lambda col: col >= boundary, boundary))
    low = _dedupe(_clip_halfplane(ring, lambda col: col <= boundary, boundary))
    offset_high = -W if boundary == W else 0.0
    offset_low = 0.0 if boundary == W else W
    for part, off in ((low, offset_low), (high, offset_high)):
        if len(part) >= 3:
            pieces.append(Polygon([(c + off, r) for r, c in part]))
    return pieces


def polygon_bbox(poly: Polygon) -> BBox:
    xy = poly.as_array()
    x0, y0 = xy.min(axis=0)
    x1, y1 = xy.max(axis=0)
    if not (x0 < x1 and y0 < y1):
        raise InvalidPolygon(f"polygon has a degenerate bounding box {(x0, y0, x1, y1)}")
    return BBox(float(x0), float(y0), float(x1), float(y1))


def polygon_area(poly: Polygon) -> float:
    xy = poly.as_array()
    x, y = xy[:, 0], xy[:, 1]
    return float(abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))) / 2.0)


def fill_rate(poly: Polygon) -> float:
    """Polygon area over the area of its bounding box, in (0, 1]."""
    box = polygon_bbox(poly)
    area = polygon_area(poly)
    if not (area > 0 and math.isfinite(area)):
        raise InvalidPolygon(f"polygon area {area} is not positive")
    return min(area / box.area, 1.0)


def transfer_polygon(poly: Polygon, src: PlanarView, dst: PlanarView) -> Polygon:
    """Move an annotation from one camera view to another sharing the same part plane."""
    if src == dst:
        return poly
    xy = poly.as_array()
    cs, ss = math.cos(src.rotation), math.sin(src.rotation)
    wx = src.offset.x + src.scale * (cs * xy[:, 0] - ss * xy[:, 1])
    wy = src.offset.y + src.scale * (ss * xy[:, 0] + cs * xy[:, 1])
    cd, sd = math.cos(dst.rotation), math.sin(dst.rotation)
    px = wx - dst.offset.x
    py = wy - dst.offset.y
    ix = (cd * px + sd * py) / dst.scale
    iy = (-sd * px + cd * py) / dst.scale
    return Polygon(zip(ix.tolist(), iy.tolist()))


def polygons_bboxes(polys: Sequence[Polygon]) -> list[BBox]:
    return [polygon_bbox(p) for p in polys]
