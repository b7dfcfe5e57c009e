import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from symground.errors import EmptyForeground, MissingPatchFile
from symground.features import (FEATURES, FeatureDataset, FeatureRecord, extract_features,
                                featurize_manifest, featurize_patch, featurize_records,
                                group_by_symbol, is_background_dominated, normalize,
                                subtract_background)
from symground.glide_lite import LabeledPatch
from symground.io import write_ppm
from symground.scene_sim import render_object_patch

BG = (6, 6, 6)


def blank(size=48):
    img = np.empty((size, size, 3), dtype=np.uint8)
    img[:] = BG
    return img


def test_uniform_background_has_empty_mask():
    assert not subtract_background(blank()).any()


def test_centred_cube_mask_is_exact():
    patch = render_object_patch((30, 30, 200), "cube", (24, 24), 48, None, 0.0)
    assert subtract_background(patch).sum() == 576


def test_only_the_largest_blob_survives():
    img = blank()
    img[10:30, 10:30] = (200, 30, 30)
    img[40:42, 0:20] = (200, 200, 200)  # stray sliver
    mask = subtract_background(img)
    assert mask.sum() == 400 and not mask[41, 5]


def test_diagonal_pixels_are_separate_blobs():
    img = blank(8)
    img[2:4, 2:4] = (250, 250, 250)
    img[4, 4] = (250, 250, 250)  # touches the square only at a corner
    assert subtract_background(img).sum() == 4


@pytest.mark.parametrize("fraction, expected", [(0.0, True), (0.5, False), (0.01, True)])
def test_background_domination(fraction, expected):
    mask = np.zeros(10000, dtype=bool)
    mask[: int(fraction * 10000)] = True
    assert is_background_dominated(mask.reshape(100, 100), 0.02) is expected


def test_extract_features_of_pure_cell_square():
    img = blank(64)
    img[20:32, 20:32] = (200, 30, 30)
    raw = extract_features(img, subtract_background(img))
    assert raw.tolist() == [200.0, 30.0, 30.0, 144.0]


def test_extract_features_needs_foreground():
    with pytest.raises(EmptyForeground):
        extract_features(blank(), np.zeros((48, 48), dtype=bool))


def test_normalize_endpoints():
    assert normalize([255, 0, 0, 48 * 48], 48).tolist() == [1.0, 0.0, 0.0, 1.0]


def test_normalize_arithmetic():
    np.testing.assert_allclose(normalize([200, 30, 30, 144], 64),
                               [0.784, 0.118, 0.118, 0.0352], atol=0.001)


def test_featurize_background_patch_is_skipped():
    assert featurize_patch(blank()) is None


def test_one_patch_feeds_both_symbols():
    patch = render_object_patch((30, 30, 200), "cube", (24, 24), 48, 1, 3.0)
    recs, skipped = featurize_records([LabeledPatch("a", patch, ("blue", "cube"), 0, 0)])
    data = FeatureDataset.from_records(recs)
    assert skipped == 0 and set(data) == {"blue", "cube"}
    assert np.array_equal(data["blue"], data["cube"])


def test_empty_manifest_gives_empty_dataset():
    assert group_by_symbol([]) == {}


def test_manifest_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    manifest = []
    for i in range(20):
        shape, fp = [("cell", (12, 12)), ("cube", (24, 24))][i % 2]
        patch = render_object_patch((200, 30, 30), shape, fp, 48, rng, 3.0)
        write_ppm(tmp_path / f"p{i}.ppm", patch)
        manifest.append({"id": f"p{i:02d}", "file": f"p{i}.ppm", "symbols": ["red", shape]})
    write_ppm(tmp_path / "empty.ppm", blank())
    manifest.append({"id": "empty", "file": "empty.ppm", "symbols": ["red", "cube"]})
    records, skipped = featurize_manifest(manifest, tmp_path)
    assert len(records) == 20 and skipped == 1
    data = group_by_symbol(manifest, tmp_path)
    assert sum(data.counts().values()) == 2 * len(records)
    assert data.counts() == {"cell": 10, "cube": 10, "red": 20}
    np.testing.assert_allclose(data["cube"][:, 3], 576 / 48 ** 2)


def test_missing_patch_file(tmp_path):
    with pytest.raises(MissingPatchFile):
        featurize_manifest([{"id": "x", "file": "nope.ppm", "symbols": ["red"]}], tmp_path)


def test_feature_record_validation_and_round_trip():
    rec = FeatureRecord("a", ("red", "cube"), np.array([0.1, 0.2, 0.3, 0.4]))
    back = FeatureRecord.from_dict(json.loads(json.dumps(rec.to_dict())))
    assert back.id == rec.id and back.symbols == rec.symbols
    assert np.array_equal(back.features, rec.features)
    with pytest.raises(ValueError):
        FeatureRecord("b", ("red",), np.array([0.1, 0.2, 1.3, 0.4]))
    with pytest.raises(ValueError):
        FeatureRecord("c", ("red",), np.array([0.1, 0.2, 0.3]))


@settings(max_examples=50, deadline=None)
@given(arrays(np.uint8, (16, 16, 3)))
def test_features_are_always_in_the_unit_cube(raster):
    vec = featurize_patch(raster, theta_bg=60, theta_noise=0.0)
    if vec is not None:
        assert vec.shape == (len(FEATURES),)
        assert np.all((vec >= 0) & (vec <= 1))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 255), st.integers(0, 255), st.integers(61, 255),
       st.integers(2, 30), st.integers(2, 30))
def test_rectangle_features_are_exact(r, g, b, w, h):
    img = blank(32)
    img[1:1 + h, 1:1 + w] = (r, g, b)
    vec = featurize_patch(img, theta_bg=60, theta_noise=0.0)
    np.testing.assert_allclose(vec, [r / 255, g / 255, b / 255, w * h / 1024])


@settings(max_examples=50, deadline=None)
@given(arrays(np.uint8, (12, 12, 3)))
def test_mask_is_one_connected_bright_blob(raster):
    from scipy import ndimage
    mask = subtract_background(raster, 60)
    assert np.all(raster[mask].max(axis=1) > 60)
    assert ndimage.label(mask)[1] <= 1
