"""Glue between the stages: circle fit + polar unwrap of whole samples and datasets."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import EmptyResult, NoModel
from .geometry import (
    Circle,
    PolarConfig,
    border_points_array,
    fill_rate,
    gradient_magnitude,
    polar_unwrap_image,
    polygon_to_polar,
    ransac_circle,
)
from .synthdata import Dataset, Sample, flip_lr

log = logging.getLogger(__name__)

DESK_POLAR_SHAPE = (200, 333)


@dataclass(frozen=True)
class UnwrapConfig:
    out_height: int = DESK_POLAR_SHAPE[0]
    out_width: int = DESK_POLAR_SHAPE[1]
    r_min_frac: float = 0.3  # of the fitted border radius
    r_max_frac: float = 0.9
    grad_frac: float = 0.5  # edge threshold as a fraction of the strongest gradient
    ransac_iters: int = 200
    inlier_tol: float = 2.0


def fit_border_circle(image: np.ndarray, cfg: UnwrapConfig = UnwrapConfig(), seed: int = 0) -> Circle:
    mag = gradient_magnitude(image)
    if mag.max() <= 0:
        raise EmptyResult("image has no edges")
    pts = border_points_array(image, cfg.grad_frac * mag.max())
    circle, _ = ransac_circle(pts, cfg.ransac_iters, cfg.inlier_tol, seed)
    return circle


def polar_config_for(circle: Circle, cfg: UnwrapConfig = UnwrapConfig()) -> PolarConfig:
    return PolarConfig(
        center=circle.center,
        r_min=cfg.r_min_frac * circle.radius,
        r_max=cfg.r_max_frac * circle.radius,
        out_height=cfg.out_height,
        out_width=cfg.out_width,
    )


def unwrap_sample(sample: Sample, cfg: UnwrapConfig = UnwrapConfig(), circle: Circle | None = None,
                  seed: int = 0) -> tuple[Sample, list[tuple[float, float]]]:
    """Polar version of ``sample`` plus per-burr ``(cartesian, polar)`` fill rates."""
    if circle is None:
        circle = fit_border_circle(sample.image, cfg, seed)
    pcfg = polar_config_for(circle, cfg)
    image = polar_unwrap_image(sample.image, pcfg)
    polys, rates = [], []
    for poly in sample.burr_polygons:
        parts = polygon_to_polar(poly, pcfg)
        polys.extend(parts)
        rates.append((fill_rate(poly), float(np.mean([fill_rate(p) for p in parts]))))
    return Sample(image, polys, circle, sample.domain, sample.id), rates


def unwrap_dataset(ds: Dataset, cfg: UnwrapConfig = UnwrapConfig(), circle: Circle | None = None,
                   seed: int = 0) -> tuple[Dataset, dict]:
    """Unwrap every sample; samples whose circle fit fails are skipped and counted."""
    out, rates, skipped = [], [], []
    for i, s in enumerate(ds.samples):
        try:
            polar, r = unwrap_sample(s, cfg, circle, seed + i)
        except (NoModel, EmptyResult) as exc:
            log.warning("skipping %s: %s", s.id, exc)
            skipped.append(s.id)
            continue
        out.append(polar)
        rates.extend(r)
    before = [a for a, _ in rates]
    after = [b for _, b in rates]
    audit = {
        "n_burrs": len(rates),
        "fill_rate_before": float(np.mean(before)) if rates else None,
        "fill_rate_after": float(np.mean(after)) if rates else None,
        "fraction_improved": float(np.mean([b > a for a, b in rates])) if rates else None,
        "skipped": skipped,
    }
    extra = {
        "polar": {
            "out_height": cfg.out_height,
            "out_width": cfg.out_width,
            "r_min_frac": cfg.r_min_frac,
            "r_max_frac": cfg.r_max_frac,
        },
        "audit": audit,
    }
    return Dataset(out, domain=ds.domain, extra=extra), audit


def augment_flip(samples) -> list[Sample]:
    out = []
    for s in samples:
        out.extend([s, flip_lr(s)])
    return out
