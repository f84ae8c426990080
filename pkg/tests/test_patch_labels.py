import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from vitscope.exceptions import ShapeError
from vitscope.patch_labels import DROPPED, PatchLabelMap, label_patches, load_mask, remap_labels, select_image
from vitscope.perturb import DropMask, ShuffleSpec, shuffle


def test_containment_threshold():
    m = np.zeros((10, 10), np.int64)
    m.flat[:40] = 7  # exactly 40% of the single patch
    assert label_patches(m, 10).labels.tolist() == [7]
    m = np.zeros((10, 10), np.int64)
    m.flat[:39] = 7
    lab = label_patches(m, 10)
    assert lab.labels.tolist() == [0]
    assert lab.fractions[0] == {7: pytest.approx(0.39)}


def test_tie_goes_to_smaller_id():
    m = np.zeros((4, 4), np.int64)
    m[:2] = 9
    m[2:] = 4
    assert label_patches(m, 4).labels.tolist() == [4]


def test_grid_and_order():
    m = np.zeros((4, 6), np.int64)
    m[:2, 4:] = 2
    m[2:, :2] = 5
    lab = label_patches(m, 2)
    assert lab.grid == (2, 3)
    assert lab.labels.tolist() == [0, 0, 2, 5, 0, 0]
    assert lab.object_patches() == [3, 4]
    assert lab.background_patches() == [1, 2, 5, 6]
    with pytest.raises(ShapeError):
        label_patches(np.zeros((5, 4)), 2)


def test_class_collapse():
    m = np.array([[1, 1], [2, 2]])
    assert label_patches(m, 2, class_of={1: 8, 2: 8}).labels.tolist() == [8]


def test_select_image():
    two = PatchLabelMap(np.array([1, 1, 1, 2, 2, 2, 0]), [{}] * 7, (1, 7))
    assert select_image(two)
    assert not select_image(two, min_patches=4)
    one = PatchLabelMap(np.array([1, 1, 1, 2, 2, 0]), [{}] * 6, (1, 6))
    assert not select_image(one)
    assert select_image(one, min_objects=1)


def test_remap_drop_and_identity():
    lab = label_patches(np.kron(np.array([[1, 0], [2, 3]]), np.ones((2, 2), np.int64)), 2)
    same = remap_labels(lab, ShuffleSpec(2, (0, 1, 2, 3)))
    assert same.labels.tolist() == lab.labels.tolist()
    dropped = remap_labels(lab, DropMask((2, 3), 4))
    assert dropped.labels.tolist() == [1, DROPPED, DROPPED, 3]
    with pytest.raises(ShapeError):
        remap_labels(lab, ShuffleSpec(3, tuple(range(9))))
    with pytest.raises(TypeError):
        remap_labels(lab, "nope")


def test_remap_patch_sized_cells_swap():
    m = np.zeros((28, 28), np.int64)
    m[:2, :2] = 1
    lab = label_patches(m, 2)
    perm = list(range(196))
    perm[0], perm[195] = 195, 0
    out = remap_labels(lab, ShuffleSpec(14, tuple(perm)))
    assert out.labels[0] == 0 and out.labels[195] == 1


@settings(max_examples=40, deadline=None)
@given(st.sampled_from([1, 2, 4]), st.integers(0, 2**32))
def test_label_then_shuffle_commutes(g, seed):
    # with cells aligned to patches, shuffling the mask or the labels agrees
    rng = np.random.default_rng(seed)
    mask = np.kron(rng.integers(0, 4, (4, 4)), np.ones((3, 3), np.int64))
    shuffled, spec = shuffle(mask, g, seed)
    direct = label_patches(shuffled, 3)
    carried = remap_labels(label_patches(mask, 3), spec)
    assert direct.labels.tolist() == carried.labels.tolist()


def test_load_mask_void_and_sidecar(tmp_path):
    ids = np.array([[0, 255], [1, 2]], np.uint8)
    im = Image.fromarray(ids, mode="P")
    im.putpalette([0, 0, 0] * 256)
    im.save(tmp_path / "a.png")
    (tmp_path / "a.json").write_text(json.dumps({"1": "dog", "2": "cat"}))
    mask, names = load_mask(tmp_path / "a.png")
    assert mask.tolist() == [[0, 0], [1, 2]]
    assert names == {1: "dog", 2: "cat"}
    kept, _ = load_mask(tmp_path / "a.png", void_as_background=False)
    assert kept[0, 1] == 255
    big, _ = load_mask(tmp_path / "a.png", size=4)
    assert big.shape == (4, 4) and big[3, 3] == 2


def test_label_map_json_round_trip():
    lab = label_patches(np.array([[1, 1], [0, 2]]), 1, names={1: "a"})
    back = PatchLabelMap.from_json(lab.to_json())
    assert back.labels.tolist() == lab.labels.tolist()
    assert back.fractions == lab.fractions and back.names == {1: "a"}
