import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from burrnas.errors import InvalidRatios, IoError, ParseError
from burrnas.fileio import write_labelme
from burrnas.geometry import PolarConfig, Point2, fill_rate, polar_map, polygon_bbox
from burrnas.pipeline import fit_border_circle
from burrnas.synthdata import (
    DEFAULT_SIZES,
    DOMAIN_PRESETS,
    Dataset,
    DomainParams,
    SplitRatios,
    flip_lr,
    generate_domain,
    generate_sample,
    read_manifest,
    split_1_2_1,
    split_counts,
    with_domain_shift,
    write_manifest,
)

SMALL = DomainParams(name="S", image_size=200, border_radius=85, bore_radius=36, burr_height=(4, 8),
                     burr_rate=2.0, texture_seed=3)


def _angular_extent_deg(poly, center):
    a = poly.as_array()
    ang = np.unwrap(np.arctan2(a[:, 1] - center.y, a[:, 0] - center.x))
    return math.degrees(ang.max() - ang.min())


def test_no_burrs_when_rate_zero():
    s = generate_sample(replace(SMALL, burr_rate=0.0), 4)
    assert s.burr_polygons == []


def test_generation_is_deterministic():
    a, b = generate_sample(SMALL, 17), generate_sample(SMALL, 17)
    assert np.array_equal(a.image, b.image)
    assert a.burr_polygons == b.burr_polygons and a.true_circle == b.true_circle
    assert not np.array_equal(a.image, generate_sample(SMALL, 18).image)


def test_jitter_bounds_fitted_center():
    params = DOMAIN_PRESETS["A"]
    nominal = (params.image_size - 1) / 2
    shift, fit_err = 0.0, 0.0
    for seed in range(100):
        s = generate_sample(params, seed)
        c = fit_border_circle(s.image, seed=seed)
        t = s.true_circle.center
        shift = max(shift, math.hypot(t.x - nominal, t.y - nominal))
        fit_err = max(fit_err, math.hypot(c.center.x - t.x, c.center.y - t.y))
    assert shift <= 3 * math.sqrt(2)
    assert fit_err <= 3 * math.sqrt(2)
    assert fit_err < 0.5


def test_default_domain_sizes():
    assert DEFAULT_SIZES == {"A": 402, "B": 396, "C": 50, "D": 76}


@pytest.mark.slow
def test_domain_a_default_size():
    assert len(generate_domain(replace(DOMAIN_PRESETS["A"], image_size=360, border_radius=150),
                               DEFAULT_SIZES["A"], 0)) == 402


def test_domain_of_one_matches_generate_sample():
    ds = generate_domain(SMALL, 1, 9)
    ref = generate_sample(SMALL, 9)
    assert len(ds) == 1 and np.array_equal(ds.samples[0].image, ref.image)


def test_brightness_delta_shows_in_mean_intensity():
    delta = 12.0
    lo = generate_domain(SMALL, 5, 100)
    hi = generate_domain(with_domain_shift(SMALL, "S+", brightness_delta=delta), 5, 100)
    diff = np.mean([b.image.mean() - a.image.mean() for a, b in zip(lo, hi)])
    assert abs(diff - delta) <= 2


def test_burrs_inside_annulus():
    for seed in range(40):
        s = generate_sample(SMALL, seed)
        for poly in s.burr_polygons:
            d = np.hypot(*(poly.as_array() - [s.true_circle.center.x, s.true_circle.center.y]).T)
            assert d.min() >= SMALL.bore_radius - 1e-9
            assert d.max() <= SMALL.border_radius


def test_burrs_are_crescents():
    params = DOMAIN_PRESETS["A"]
    rates = []
    for seed in range(100):
        s = generate_sample(params, seed)
        rates += [fill_rate(p) for p in s.burr_polygons if _angular_extent_deg(p, s.true_circle.center) >= 20]
    assert len(rates) >= 50
    assert np.mean(np.array(rates) < 0.6) >= 0.9


def test_invalid_params():
    with pytest.raises(ValueError):
        DomainParams(jitter_px=-1)
    with pytest.raises(ValueError):
        DomainParams(burr_scale=(40, 10))
    with pytest.raises(ValueError):
        DomainParams(brightness=200)


# ---------------------------------------------------------------- splitting


def _dummy(n):
    s = generate_sample(replace(SMALL, image_size=200), 0)
    return Dataset([replace(s, id=f"s{i}") for i in range(n)])


def test_split_sizes_400():
    nas, train, ev = split_1_2_1(_dummy(400), SplitRatios(), 0)
    assert (len(nas), len(train), len(ev)) == (100, 200, 100)


def test_split_sizes_4():
    assert [len(d) for d in split_1_2_1(_dummy(4))] == [1, 2, 1]


def test_split_empty_and_bad_ratios():
    with pytest.raises(ValueError):
        split_1_2_1(Dataset([]))
    with pytest.raises(InvalidRatios):
        split_1_2_1(_dummy(4), SplitRatios(1, 0, 1))


def test_split_partition_exhaustive_small():
    base = _dummy(50)
    for n in range(1, 51):
        ds = Dataset(base.samples[:n])
        parts = split_1_2_1(ds, seed=n)
        ids = [s.id for p in parts for s in p]
        assert sorted(ids) == sorted(s.id for s in ds)
        assert len(ids) == len(set(ids))
        assert [len(p) for p in parts] == split_counts(n, (1, 2, 1))


def test_split_deterministic_in_seed():
    ds = _dummy(20)
    ids = lambda parts: [[s.id for s in p] for p in parts]  # noqa: E731
    assert ids(split_1_2_1(ds, seed=3)) == ids(split_1_2_1(ds, seed=3))
    assert ids(split_1_2_1(ds, seed=3)) != ids(split_1_2_1(ds, seed=4))


@given(st.integers(0, 500), st.lists(st.floats(0.1, 10), min_size=1, max_size=5))
def test_split_counts_sum_and_proportion(n, weights):
    counts = split_counts(n, weights)
    assert sum(counts) == n
    total = sum(weights)
    assert all(abs(c - n * w / total) < 1 for c, w in zip(counts, weights))


# ---------------------------------------------------------------- flipping


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_flip_is_involution(seed):
    s = generate_sample(SMALL, seed)
    back = flip_lr(flip_lr(s))
    assert np.array_equal(back.image, s.image) and back.id == s.id
    for p, q in zip(s.burr_polygons, back.burr_polygons):
        assert np.abs(p.as_array() - q.as_array()).max() < 1e-9


def test_flip_preserves_bbox_width_and_mirrors_pixels():
    s = generate_sample(SMALL, 5)
    f = flip_lr(s)
    assert f.id == s.id + "_flip"
    assert np.array_equal(f.image, s.image[:, ::-1])
    for p, q in zip(s.burr_polygons, f.burr_polygons):
        assert polygon_bbox(p).width == pytest.approx(polygon_bbox(q).width)


def test_flip_moves_polar_column():
    params = replace(SMALL, jitter_px=0)
    s = generate_sample(params, 1)
    c = (params.image_size - 1) / 2
    cfg = PolarConfig(Point2(c, c), 30, 80, 50, 360)
    p = Point2(c + 50 * math.cos(math.radians(30)), c + 50 * math.sin(math.radians(30)))
    f = flip_lr(replace(s, burr_polygons=[]))
    q = Point2((params.image_size - 1) - p.x, p.y)
    assert polar_map(p, cfg)[1] == pytest.approx(30)
    assert polar_map(q, cfg)[1] == pytest.approx(150)
    assert f.true_circle.center == s.true_circle.center


# ---------------------------------------------------------------- manifests


def test_manifest_round_trip(tmp_path):
    ds = generate_domain(SMALL, 10, 0, out_dir=tmp_path)
    back = read_manifest(tmp_path)
    assert back.domain == "S"
    assert [s.id for s in back] == [s.id for s in ds]
    for a, b in zip(ds, back):
        assert np.array_equal(a.image, b.image)
        assert a.burr_polygons == b.burr_polygons
        assert a.true_circle == b.true_circle


def test_manifest_missing_image(tmp_path):
    ds = generate_domain(SMALL, 2, 0, out_dir=tmp_path)
    (tmp_path / "images" / f"{ds.samples[1].id}.pgm").unlink()
    with pytest.raises(IoError, match=ds.samples[1].id):
        read_manifest(tmp_path / "manifest.json")


def test_manifest_parse_errors_have_fields(tmp_path):
    generate_domain(SMALL, 1, 0, out_dir=tmp_path)
    doc = json.loads((tmp_path / "manifest.json").read_text())
    del doc["samples"][0]["circle"]
    (tmp_path / "manifest.json").write_text(json.dumps(doc))
    with pytest.raises(ParseError) as err:
        read_manifest(tmp_path)
    assert err.value.where == "samples[0]"
    (tmp_path / "manifest.json").write_text("{\n\n  oops")
    with pytest.raises(ParseError) as err:
        read_manifest(tmp_path)
    assert "line 3" in err.value.where


def test_manifest_accepts_labelme_annotation(tmp_path):
    ds = generate_domain(replace(SMALL, burr_rate=3.0), 1, 2, out_dir=tmp_path)
    s = ds.samples[0]
    write_labelme(tmp_path / "ann.json", s.burr_polygons, imagePath=f"images/{s.id}.pgm")
    doc = json.loads((tmp_path / "manifest.json").read_text())
    entry = doc["samples"][0]
    del entry["polygons"]
    entry["annotation"] = "ann.json"
    (tmp_path / "manifest.json").write_text(json.dumps(doc))
    assert read_manifest(tmp_path).samples[0].burr_polygons == s.burr_polygons


def test_manifest_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(IoError):
        generate_domain(SMALL, 1, 0, out_dir=blocker / "sub")
