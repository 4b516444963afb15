"""Synthetic annular-part images with crescent burrs.

Each sample is a face-on view of a cylindrical part: a dark background, a
bright textured annular face between the bore and the outer border, and a
dark bore.  Burrs are crescents hugging the bore rim.  Domains differ in
lighting, noise, blur and viewpoint jitter.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import InvalidRatios, IoError, ParseError
from .fileio import read_labelme, read_pgm, shapes_from_json, shapes_to_json, write_pgm
from .geometry import Circle, Point2, Polygon

BACKGROUND_LEVEL = 25.0
BORE_LEVEL = 40.0
FACE_LEVEL = 150.0
TEXTURE_AMPLITUDE = 10.0
BURR_CONTRAST = 55.0
VERTEX_SPACING_DEG = 2.0


@dataclass(frozen=True)
class DomainParams:
    name: str = "A"
    brightness: float = 0.0
    noise_sigma: float = 4.0
    blur_radius: float = 0.8
    jitter_px: int = 3
    burr_rate: float = 1.5
    burr_scale: tuple[float, float] = (10.0, 60.0)
    texture_seed: int = 0
    image_size: int = 400
    border_radius: float = 170.0
    bore_radius: float = 72.0
    burr_height: tuple[float, float] = (6.0, 16.0)

    def __post_init__(self):
        if not -128 <= self.brightness <= 127:
            raise ValueError(f"brightness {self.brightness} outside [-128, 127]")
        if self.noise_sigma < 0 or self.blur_radius < 0 or self.jitter_px < 0 or self.burr_rate < 0:
            raise ValueError("noise_sigma, blur_radius, jitter_px and burr_rate must be >= 0")
        lo, hi = self.burr_scale
        if not 0 < lo <= hi < 180:
            raise ValueError(f"burr_scale must satisfy 0 < min <= max < 180, got {self.burr_scale}")
        if not 0 < self.bore_radius + self.burr_height[1] < self.border_radius:
            raise ValueError("burrs must fit between the bore and the outer border")
        if self.border_radius + self.jitter_px + 2 > (self.image_size - 1) / 2:
            raise ValueError("part does not fit in the image")


DOMAIN_PRESETS = {
    "A": DomainParams(name="A", brightness=0.0, noise_sigma=4.0, blur_radius=0.8, texture_seed=11),
    "B": DomainParams(name="B", brightness=-15.0, noise_sigma=7.0, blur_radius=1.0, texture_seed=23),
    "C": DomainParams(name="C", brightness=10.0, noise_sigma=5.0, blur_radius=0.6, texture_seed=37),
    "D": DomainParams(name="D", brightness=-45.0, noise_sigma=6.0, blur_radius=0.8, texture_seed=41),
}
DEFAULT_SIZES = {"A": 402, "B": 396, "C": 50, "D": 76}


@dataclass
class Sample:
    image: np.ndarray
    burr_polygons: list[Polygon]
    true_circle: Circle
    domain: str
    id: str
    bore_circle: Circle | None = None


@dataclass
class Dataset:
    samples: list[Sample]
    manifest_path: Path | None = None
    domain: str = ""
    extra: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)


@dataclass(frozen=True)
class SplitRatios:
    nas: float = 1.0
    train: float = 2.0
    eval: float = 1.0


# --------------------------------------------------------------------------
# rendering


def crescent_outer_radius(dtheta: np.ndarray, bore_r: float, height: float, half_extent: float) -> np.ndarray:
    """Radial distance to the outer arc of a crescent, along rays at offset ``dtheta``.

    The outer arc belongs to a circle displaced outward along the crescent's
    mid-angle, chosen so it meets the bore at ``+-half_extent`` and peaks at
    ``bore_r + height``. Rays missing that circle get ``bore_r``.
    """
    outer = bore_r + height
    delta = (outer**2 - bore_r**2) / (2.0 * (outer - bore_r * math.cos(half_extent)))
    rho = outer - delta
    disc = rho**2 - (delta * np.sin(dtheta)) ** 2
    t = delta * np.cos(dtheta) + np.sqrt(np.clip(disc, 0.0, None))
    t = np.where((disc < 0) | (np.abs(dtheta) > half_extent), bore_r, t)
    return np.maximum(t, bore_r)


def crescent_polygon(center: Point2, bore_r: float, height: float, mid: float, half_extent: float) -> Polygon:
    n_seg = max(2, math.ceil(math.degrees(2 * half_extent) / VERTEX_SPACING_DEG))
    offsets = np.linspace(-half_extent, half_extent, n_seg + 1)
    t = crescent_outer_radius(offsets, bore_r, height, half_extent)
    t[0] = t[-1] = bore_r
    outer = [(center.x + r * math.cos(mid + o), center.y + r * math.sin(mid + o)) for o, r in zip(offsets, t)]
    inner = [
        (center.x + bore_r * math.cos(mid + o), center.y + bore_r * math.sin(mid + o))
        for o in offsets[-2:0:-1]
    ]
    return Polygon(outer + inner)


def value_noise(shape: tuple[int, int], rng: np.random.Generator, cells=(48, 16, 6)) -> np.ndarray:
    """Sum of bilinearly upsampled random grids, normalized to unit std."""
    h, w = shape
    out = np.zeros(shape)
    for k, cell in enumerate(cells):
        gh, gw = h // cell + 2, w // cell + 2
        grid = rng.standard_normal((gh, gw))
        up = ndimage.zoom(grid, cell, order=1)[:h, :w]
        out += up / (k + 1)
    return out / (out.std() + 1e-12)


def _angle_diff(a, b):
    return (a - b + math.pi) % (2 * math.pi) - math.pi


def generate_sample(params: DomainParams, seed: int, sample_id: str | None = None) -> Sample:
    rng = np.random.default_rng(seed)
    size = params.image_size
    j = params.jitter_px
    jx, jy = (int(v) for v in rng.integers(-j, j + 1, size=2)) if j > 0 else (0, 0)
    c = (size - 1) / 2.0
    center = Point2(c + jx, c + jy)

    # burr layout: non-overlapping crescents on the bore rim
    n_burrs = int(rng.poisson(params.burr_rate))
    burrs = []
    for _ in range(n_burrs):
        extent = math.radians(rng.uniform(*params.burr_scale))
        height = rng.uniform(*params.burr_height)
        for _attempt in range(20):
            mid = rng.uniform(0.0, 2 * math.pi)
            clear = all(
                abs(_angle_diff(mid, m)) > (extent + e) / 2 + math.radians(4) for m, e, _ in burrs
            )
            if clear:
                burrs.append((mid, extent, height))
                break

    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    dx, dy = xx - center.x, yy - center.y
    dist = np.hypot(dx, dy)
    theta = np.arctan2(dy, dx)

    tex_rng = np.random.default_rng([params.texture_seed, seed])
    face_cov = np.clip(params.border_radius - dist + 0.5, 0, 1) * np.clip(dist - params.bore_radius + 0.5, 0, 1)
    bore_cov = np.clip(params.bore_radius - dist + 0.5, 0, 1)
    img = BACKGROUND_LEVEL * (1 - face_cov - bore_cov) + BORE_LEVEL * bore_cov
    face = FACE_LEVEL + TEXTURE_AMPLITUDE * value_noise((size, size), tex_rng)
    img += face * face_cov

    polygons = []
    for mid, extent, height in burrs:
        half = extent / 2
        dtheta = _angle_diff(theta, mid)
        outer = crescent_outer_radius(dtheta, params.bore_radius, height, half)
        cov = np.clip(outer - dist + 0.5, 0, 1) * face_cov
        cov[np.abs(dtheta) > half] = 0.0
        img += BURR_CONTRAST * cov
        polygons.append(crescent_polygon(center, params.bore_radius, height, mid, half))

    if params.blur_radius > 0:
        img = ndimage.gaussian_filter(img, params.blur_radius, mode="nearest")
    img = img + params.brightness
    if params.noise_sigma > 0:
        img = img + rng.normal(0.0, params.noise_sigma, img.shape)
    image = np.clip(np.rint(img), 0, 255).astype(np.uint8)

    return Sample(
        image=image,
        burr_polygons=polygons,
        true_circle=Circle(center, params.border_radius),
        domain=params.name,
        id=sample_id or f"{params.name}_{seed:06d}",
        bore_circle=Circle(center, params.bore_radius),
    )


def generate_domain(params: DomainParams, n: int, seed: int, out_dir=None) -> Dataset:
    """Render ``n`` samples with seeds ``seed .. seed+n-1``; write a manifest when ``out_dir`` is given."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    samples = [generate_sample(params, seed + i) for i in range(n)]
    ds = Dataset(samples, domain=params.name)
    if out_dir is not None:
        write_manifest(ds, Path(out_dir) / "manifest.json")
    return ds


# --------------------------------------------------------------------------
# splitting and augmentation


def split_counts(n: int, weights) -> list[int]:
    """Largest-remainder apportionment of ``n`` items; ties go to the earlier bucket."""
    total = float(sum(weights))
    quotas = [n * w / total for w in weights]
    counts = [math.floor(q) for q in quotas]
    left = n - sum(counts)
    order = sorted(range(len(weights)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:left]:
        counts[i] += 1
    return counts


def split_1_2_1(ds: Dataset, ratios: SplitRatios = SplitRatios(), seed: int = 0) -> tuple[Dataset, Dataset, Dataset]:
    weights = (ratios.nas, ratios.train, ratios.eval)
    if any(not w > 0 for w in weights):
        raise InvalidRatios(f"split weights must be positive, got {weights}")
    if len(ds) == 0:
        raise ValueError("cannot split an empty dataset")
    order = np.random.default_rng(seed).permutation(len(ds))
    n_nas, n_train, _ = split_counts(len(ds), weights)
    parts = (order[:n_nas], order[n_nas : n_nas + n_train], order[n_nas + n_train :])
    return tuple(Dataset([ds.samples[i] for i in idx], domain=ds.domain, extra=dict(ds.extra)) for idx in parts)


def flip_lr(sample: Sample) -> Sample:
    w = sample.image.shape[1]

    def mirror(p: Point2) -> Point2:
        return Point2((w - 1) - p.x, p.y)

    def mirror_circle(circ):
        return None if circ is None else Circle(mirror(circ.center), circ.radius)

    sid = sample.id[: -len("_flip")] if sample.id.endswith("_flip") else sample.id + "_flip"
    return Sample(
        image=np.ascontiguousarray(sample.image[:, ::-1]),
        burr_polygons=[Polygon([mirror(v) for v in poly.vertices]) for poly in sample.burr_polygons],
        true_circle=mirror_circle(sample.true_circle),
        domain=sample.domain,
        id=sid,
        bore_circle=mirror_circle(sample.bore_circle),
    )


def with_domain_shift(params: DomainParams, name: str, brightness_delta: float = 0.0, noise_factor: float = 1.0,
                      **overrides) -> DomainParams:
    return replace(
        params,
        name=name,
        brightness=params.brightness + brightness_delta,
        noise_sigma=params.noise_sigma * noise_factor,
        **overrides,
    )


# --------------------------------------------------------------------------
# manifests


def _circle_json(c: Circle) -> dict:
    return {"cx": c.center.x, "cy": c.center.y, "r": c.radius}


def write_manifest(ds: Dataset, path) -> Path:
    """Write images next to ``path`` and a JSON manifest referencing them."""
    path = Path(path)
    img_dir = path.parent / "images"
    try:
        img_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {img_dir}: {exc.strerror}") from exc
    entries = []
    for s in ds.samples:
        rel = f"images/{s.id}.pgm"
        write_pgm(path.parent / rel, s.image)
        entry = {
            "id": s.id,
            "image": rel,
            "circle": _circle_json(s.true_circle),
            "polygons": shapes_to_json(s.burr_polygons),
        }
        if s.bore_circle is not None:
            entry["bore_r"] = s.bore_circle.radius
        entries.append(entry)
    ids = [e["id"] for e in entries]
    if len(set(ids)) != len(ids):
        raise ValueError("sample ids must be unique")
    doc = {"domain": ds.domain, **ds.extra, "samples": entries}
    try:
        path.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write manifest {path}: {exc.strerror}") from exc
    ds.manifest_path = path
    return path


def _require(obj, key, where, kind=None):
    if not isinstance(obj, dict) or key not in obj:
        raise ParseError(f"missing field '{key}'", where=where)
    val = obj[key]
    if kind is not None and not isinstance(val, kind):
        raise ParseError(f"field '{key}' has the wrong type", where=f"{where}.{key}")
    return val


def read_manifest(path) -> Dataset:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read manifest {path}: {exc.strerror}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", where=f"line {exc.lineno} column {exc.colno}") from None
    domain = _require(doc, "domain", "manifest", str)
    entries = _require(doc, "samples", "manifest", list)
    samples = []
    for i, e in enumerate(entries):
        where = f"samples[{i}]"
        sid = _require(e, "id", where, str)
        rel = _require(e, "image", where, str)
        circ = _require(e, "circle", where, dict)
        try:
            center = Point2(float(circ["cx"]), float(circ["cy"]))
            circle = Circle(center, float(circ["r"]))
        except (KeyError, TypeError, ValueError):
            raise ParseError("circle needs numeric cx, cy, r", where=f"{where}.circle") from None
        if "polygons" in e:
            shapes = shapes_from_json(e["polygons"], source=f"{path}:{where}.polygons")
        elif "annotation" in e:
            shapes = read_labelme(path.parent / e["annotation"])
        else:
            raise ParseError("sample has neither 'polygons' nor 'annotation'", where=where)
        image_path = path.parent / rel
        if not image_path.is_file():
            raise IoError(f"manifest {path} references missing image {image_path}")
        bore = Circle(center, float(e["bore_r"])) if "bore_r" in e else None
        samples.append(Sample(read_pgm(image_path), [p for _, p in shapes], circle, domain, sid, bore))
    if len({s.id for s in samples}) != len(samples):
        raise ParseError("duplicate sample ids", where="samples")
    extra = {k: v for k, v in doc.items() if k not in ("domain", "samples")}
    return Dataset(samples, manifest_path=path, domain=domain, extra=extra)
