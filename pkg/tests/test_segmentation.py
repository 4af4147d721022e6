import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from letsne import segmentation as seg
from letsne.segmentation import RegionMap, SegmentationError


def sizes(regions):
    return np.bincount(regions.flat()).tolist()


def test_uniform_image_gives_quadrants():
    rm = seg.slic(np.full((8, 8, 3), 0.5), 4, compactness=1.0)
    assert rm.n_regions == 4
    assert sizes(rm) == [16, 16, 16, 16]
    # each region is a 4x4 block
    for r in range(4):
        ys, xs = np.nonzero(rm.ids == r)
        assert np.ptp(ys) == 3 and np.ptp(xs) == 3


@pytest.mark.parametrize("compactness", [0.1, 10.0, 100.0])
def test_uniform_image_any_compactness(compactness):
    assert sizes(seg.slic(np.zeros((8, 8)), 4, compactness)) == [16] * 4


def test_single_target_is_one_region():
    img = np.random.default_rng(0).random((6, 9, 3))
    rm = seg.slic(img, 1)
    assert rm.n_regions == 1


def test_two_halves_split_on_colour_edge():
    img = np.zeros((10, 12, 3))
    img[:, 6:] = 1.0
    rm = seg.slic(img, 2, compactness=1.0)
    assert rm.n_regions == 2
    assert len(set(rm.ids[:, :6].ravel())) == 1
    assert len(set(rm.ids[:, 6:].ravel())) == 1


def test_parameter_errors():
    with pytest.raises(SegmentationError):
        seg.slic(np.zeros((4, 4)), 0)
    with pytest.raises(SegmentationError):
        seg.slic(np.zeros((4, 4)), 17)
    with pytest.raises(SegmentationError):
        seg.merge_regions(RegionMap(np.zeros((2, 2), int)), np.zeros((2, 2)), -1.0)


def test_slic_deterministic():
    img = np.random.default_rng(1).random((12, 12, 3))
    a, b = seg.slic(img, 9), seg.slic(img, 9)
    np.testing.assert_array_equal(a.ids, b.ids)


def quarters_image():
    img = np.zeros((8, 8, 1))
    img[:, 4:] = 1.0
    img[:4, :4] = 0.05  # small intra-half difference
    img[:4, 4:] = 0.95
    ids = np.zeros((8, 8), int)
    ids[:4, 4:], ids[4:, :4], ids[4:, 4:] = 1, 2, 3
    return RegionMap(ids), img


def test_merge_threshold_zero_is_identity():
    rm, img = quarters_image()
    np.testing.assert_array_equal(seg.merge_regions(rm, img, 0.0).ids, rm.ids)


def test_merge_infinite_threshold_is_single_region():
    rm, img = quarters_image()
    assert seg.merge_regions(rm, img, np.inf).n_regions == 1


def test_merge_quarters_to_halves():
    rm, img = quarters_image()
    # intra-half distance 0.05, inter-half 0.9
    out = seg.merge_regions(rm, img, 0.5)
    assert out.n_regions == 2
    assert len(set(out.ids[:, :4].ravel())) == 1
    assert len(set(out.ids[:, 4:].ravel())) == 1


def test_region_map_csv(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("0,0\n1,1\n")
    assert seg.load_region_map(p).n_regions == 2
    rm = seg.slic(np.random.default_rng(2).random((7, 5)), 6)
    seg.save_region_map(rm, tmp_path / "s.csv")
    np.testing.assert_array_equal(seg.load_region_map(tmp_path / "s.csv").ids, rm.ids)


@pytest.mark.parametrize("text, match", [
    ("0,1\n1,0\n", "region 0 is not 4-connected"),
    ("0,0\n1\n", "ragged"),
    ("0,x\n1,1\n", "non-integer"),
])
def test_region_map_rejections(tmp_path, text, match):
    p = tmp_path / "r.csv"
    p.write_text(text)
    with pytest.raises(SegmentationError, match=match):
        seg.load_region_map(p)


def test_region_map_relabels_gaps(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("3,3\n7,7\n")
    assert seg.load_region_map(p).ids.tolist() == [[0, 0], [1, 1]]


def test_enforce_connectivity_absorbs_orphans():
    ids = np.array([[0, 0, 0], [0, 1, 0], [0, 0, 1]])
    out = seg.enforce_connectivity(ids)
    assert not seg.disconnected_regions(out)
    assert out.max() == 1 or out.max() == 2


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 14), st.integers(2, 14), st.integers(1, 12), st.floats(0.1, 40.0),
       st.integers(0, 2**31 - 1))
def test_partition_invariants(h, w, target, compactness, seed):
    target = min(target, h * w)
    img = np.random.default_rng(seed).random((h, w, 3))
    rm = seg.slic(img, target, compactness)
    seg.check_partition(rm)
    merged = seg.merge_regions(rm, img, 0.3)
    seg.check_partition(merged)
    assert merged.ids.shape == (h, w)
    assert merged.n_regions <= rm.n_regions
