import json
import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from reflpose import correspondences as corr
from reflpose.correspondences import (
    CorrespondenceFormatError,
    CorrespondenceSet,
    NormalCorr,
    PixelCorr,
    ReflectionCorr,
    center,
)


def random_set(rng, n=10):
    n1 = rng.normal(size=(n, 3))
    n1[:, 2] = np.abs(n1[:, 2]) + 0.1
    n1 /= np.linalg.norm(n1, axis=1, keepdims=True)
    n2 = n1[::-1].copy()
    normals = np.hstack([n1, n2, rng.normal(size=(n, 4))])
    return CorrespondenceSet(rng.normal(size=(n, 4)), normals, np.hstack([n1, n2]))


def test_center_single():
    s = CorrespondenceSet.from_lists([PixelCorr(3, 4, 1, 2)])
    c, off = center(s)
    assert np.array_equal(c.pixels, [[0, 0, 0, 0]])
    assert np.array_equal(off, [3, 4, 1, 2])
    assert c.centered


def test_center_already_centered():
    s = CorrespondenceSet([[1, 1, -1, 2], [-1, -1, 1, -2]])
    c, off = center(s)
    assert np.array_equal(off, np.zeros(4))
    assert np.array_equal(c.pixels, s.pixels)


def test_center_means_and_normal_coordinates(rng):
    s = random_set(rng)
    c, off = center(s)
    assert np.abs(c.pixels.mean(axis=0)).max() < 1e-12
    assert np.allclose(c.normals[:, 6:], s.normals[:, 6:] - off)
    assert np.array_equal(c.normals[:, :6], s.normals[:, :6])
    assert np.array_equal(c.reflections, s.reflections)


def test_center_idempotent(rng):
    s = random_set(rng)
    once = center(s)[0]
    twice = center(once)[0]
    assert np.allclose(twice.pixels, once.pixels, atol=1e-15)


def test_center_empty():
    with pytest.raises(ValueError):
        center(CorrespondenceSet())


def test_immutable(rng):
    s = random_set(rng)
    with pytest.raises(ValueError):
        s.pixels[0, 0] = 1.0


def test_from_lists_and_back():
    s = CorrespondenceSet.from_lists(
        [PixelCorr(1, 2, 3, 4)],
        [NormalCorr((0, 0, 1), (0, 0.6, 0.8), 1, 2, 3, 4)],
        [ReflectionCorr((0, 0, 1), (0.6, 0, 0.8))],
    )
    assert s.counts == (1, 1, 1)
    assert s.pixel_list() == [PixelCorr(1, 2, 3, 4)]
    assert s.normal_list()[0].n2 == (0.0, 0.6, 0.8)
    assert s.reflection_list()[0].n2 == (0.6, 0.0, 0.8)


def test_swapped_twice_is_identity(rng):
    s = random_set(rng)
    assert s.swapped().swapped() == s


def test_save_load_round_trip(tmp_path, rng):
    s = center(random_set(rng))[0]
    p = tmp_path / "s.json"
    corr.save(s, p)
    assert corr.load(p) == s


def test_load_empty(tmp_path):
    p = tmp_path / "e.json"
    p.write_text(json.dumps({"pixels": [], "normals": [], "reflections": []}))
    s = corr.load(p)
    assert s.counts == (0, 0, 0)


def test_reject_short_normal(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"reflections": [[0, 0, 0.5, 0, 0, 1]]}))
    with pytest.raises(CorrespondenceFormatError, match="length"):
        corr.load(p)


def test_renormalise_with_warning(tmp_path, caplog):
    p = tmp_path / "w.json"
    p.write_text(json.dumps({"reflections": [[0, 0, 1.0001, 0, 0, 1]]}))
    with caplog.at_level(logging.WARNING):
        s = corr.load(p)
    assert np.isclose(np.linalg.norm(s.refl_n1[0]), 1.0, atol=1e-15)
    assert "re-normalising" in caplog.text


def test_reject_back_facing(tmp_path):
    p = tmp_path / "b.json"
    p.write_text(json.dumps({"reflections": [[0, 0.6, -0.8, 0, 0, 1]]}))
    with pytest.raises(CorrespondenceFormatError, match="front-facing"):
        corr.load(p)


@pytest.mark.parametrize("doc, msg", [
    ({"pixels": [[1, 2, 3]]}, r"pixels\[0\]"),
    ({"pixels": [[1, 2, 3, "x"]]}, r"pixels\[0\]\[3\]"),
    ({"pixels": 5}, "must be a list"),
    ({"extra": []}, "unknown keys"),
    ({"centered": "yes"}, "boolean"),
    ({"pixels": [[1, 1, 1, 1]], "centered": True}, "not zero"),
])
def test_field_diagnostics(doc, msg):
    with pytest.raises(CorrespondenceFormatError, match=msg):
        corr.from_dict(doc)


def test_parse_error_has_line(tmp_path):
    p = tmp_path / "m.json"
    p.write_text('{\n "pixels": [1,\n')
    with pytest.raises(CorrespondenceFormatError, match="line"):
        corr.load(p)


@given(st.lists(st.tuples(*[st.floats(-10, 10)] * 4), max_size=8))
def test_dict_round_trip(rows):
    s = CorrespondenceSet(rows)
    assert corr.from_dict(corr.to_dict(s)) == s


def test_subset_drops_centered(rng):
    s = center(random_set(rng))[0]
    assert s.subset(normals=[0, 1]).centered
    assert not s.subset(pixels=[0, 1]).centered
