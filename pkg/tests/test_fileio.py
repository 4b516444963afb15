import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from burrnas.errors import IoError, ParseError
from burrnas.fileio import read_labelme, read_pgm, shapes_from_json, write_labelme, write_pgm
from burrnas.geometry import Polygon


@given(arrays(np.uint8, st.tuples(st.integers(1, 12), st.integers(1, 12))))
def test_pgm_round_trip(tmp_path_factory, img):
    path = tmp_path_factory.mktemp("pgm") / "x.pgm"
    write_pgm(path, img)
    assert np.array_equal(read_pgm(path), img)


def test_pgm_header_with_comment(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P5\n# made by hand\n3 2\n255\n" + bytes(range(6)))
    assert read_pgm(path).tolist() == [[0, 1, 2], [3, 4, 5]]


def test_pgm_rejects_ascii_and_truncation(tmp_path):
    (tmp_path / "a.pgm").write_bytes(b"P2\n1 1\n255\n0\n")
    with pytest.raises(ParseError):
        read_pgm(tmp_path / "a.pgm")
    (tmp_path / "t.pgm").write_bytes(b"P5\n4 4\n255\n" + bytes(3))
    with pytest.raises(ParseError):
        read_pgm(tmp_path / "t.pgm")


def test_pgm_missing_file(tmp_path):
    with pytest.raises(IoError):
        read_pgm(tmp_path / "nope.pgm")


def test_labelme_round_trip_ignores_extra_fields(tmp_path):
    poly = Polygon([(0.1, 0.2), (3.25, 0.2), (1.0, 4.125)])
    path = tmp_path / "a.json"
    write_labelme(path, [poly], imagePath="x.png")
    doc = json.loads(path.read_text())
    doc["shapes"][0]["shape_type"] = "polygon"
    doc["shapes"][0]["flags"] = {}
    path.write_text(json.dumps(doc))
    [(label, back)] = read_labelme(path)
    assert label == "burr" and back == poly


def test_labelme_errors_carry_location(tmp_path):
    with pytest.raises(ParseError) as err:
        shapes_from_json([{"label": "burr", "points": [[0, 0], [1]]}])
    assert err.value.where == "shapes[0].points"
    (tmp_path / "bad.json").write_text('{"shapes": [\n  {"label": }\n]}')
    with pytest.raises(ParseError) as err:
        read_labelme(tmp_path / "bad.json")
    assert "line 2" in err.value.where
