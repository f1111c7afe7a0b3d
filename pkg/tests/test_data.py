import numpy as np
import pytest

from glnet.data import (MAX_DISTRACTOR_REPEATS, PALETTE, SHAPES, augment, dataset_fingerprint, load_dataset,
                        read_pgm_u8, read_ppm, render_image, shape_mask, synth_dataset, write_dataset, write_ppm)


@pytest.fixture(scope="module")
def groups():
    return synth_dataset(seed=7, n_groups=6, group_size=4, side=48)


def test_shapes_and_ranges(groups):
    for g in groups:
        assert g.images.shape == (4, 3, 48, 48) and g.masks.shape == (4, 1, 48, 48)
        assert g.images.min() >= 0 and g.images.max() <= 1
        assert set(np.unique(g.masks)) <= {0.0, 1.0}
        assert all(m.any() for m in g.masks)


def test_same_seed_is_bitwise_identical(groups):
    again = synth_dataset(seed=7, n_groups=6, group_size=4, side=48)
    for a, b in zip(groups, again):
        assert a.images.tobytes() == b.images.tobytes() and a.masks.tobytes() == b.masks.tobytes()


def test_distractors_never_share_the_group_category():
    for g in synth_dataset(seed=3, n_groups=40, group_size=5, side=32):
        assert g.category[0] in SHAPES and g.category[1] in PALETTE
        for drawn in g.distractors:
            assert 1 <= len(drawn) <= 3
            assert all(cat != g.category for cat in drawn)


def test_only_the_common_colour_recurs_across_the_group():
    for g in synth_dataset(seed=4, n_groups=30, group_size=5, side=16):
        images_with = {}
        for i, drawn in enumerate(g.distractors):
            assert len({c for _, c in drawn}) == len(drawn)
            for _, colour in drawn:
                images_with.setdefault(colour, set()).add(i)
        assert all(len(v) <= MAX_DISTRACTOR_REPEATS for v in images_with.values())


def test_mask_is_exactly_the_common_object():
    rng = np.random.default_rng(0)
    img, region = render_image(rng, 40, ("disk", "red"), [])
    red = np.array(PALETTE["red"])[:, None]
    # inside the mask the colour is the jittered red (plus noise), outside it is background
    assert np.abs(img[:, region] - red).max() < 0.05 + 0.1
    assert region.sum() > 0


def test_object_scale_within_range():
    for shape in SHAPES:
        m = shape_mask(shape, 100, 50, 50, 30)
        ys, xs = np.nonzero(m)
        assert ys.max() - ys.min() + 1 <= 31 and xs.max() - xs.min() + 1 <= 31
    with pytest.raises(ValueError):
        shape_mask("hexagon", 10, 5, 5, 3)


@pytest.mark.parametrize("flip", [False, True])
@pytest.mark.parametrize("turns", [0, 1, 2, 3])
def test_augmentation_keeps_mask_on_object(flip, turns):
    rng = np.random.default_rng(turns)
    img, region = render_image(rng, 32, ("triangle", "green"), [("disk", "red")])
    green = np.array(PALETTE["green"])[:, None, None]
    dist = np.abs(img - green).max(axis=0)
    assert dist[region].max() < dist[~region].min()
    cut = 0.5 * (dist[region].max() + dist[~region].min())
    a_img, a_mask = augment(img, region[None].astype(np.float32), flip, turns)
    # rebuild the mask from the transformed image colour: must coincide
    close = np.abs(a_img - green).max(axis=0) < cut
    assert np.array_equal(close, a_mask[0] > 0.5)


def test_ppm_round_trip(tmp_path, rng):
    img = rng.integers(0, 256, (3, 5, 7)) / 255.0
    write_ppm(tmp_path / "x.ppm", img)
    head = (tmp_path / "x.ppm").read_bytes()[:2]
    assert head == b"P6"
    np.testing.assert_allclose(read_ppm(tmp_path / "x.ppm"), img, atol=1e-7)


def test_dataset_layout_round_trip(tmp_path, groups):
    write_dataset(tmp_path, groups[:2])
    gdir = tmp_path / groups[0].name
    assert sorted(p.name for p in gdir.iterdir())[:2] == ["000.ppm", "000_gt.pgm"]
    for gt in tmp_path.rglob("*_gt.pgm"):
        assert gt.read_bytes()[:2] == b"P5"
        assert set(np.unique(read_pgm_u8(gt))) <= {0, 255}
    loaded = load_dataset(tmp_path)
    assert [g.name for g in loaded] == [g.name for g in groups[:2]]
    np.testing.assert_array_equal(loaded[0].masks, groups[0].masks)
    np.testing.assert_allclose(loaded[0].images, groups[0].images, atol=0.5 / 255 + 1e-6)


def test_load_resizes_and_validates(tmp_path, groups):
    write_dataset(tmp_path, groups[:1])
    small = load_dataset(tmp_path, side=24)
    assert small[0].images.shape == (4, 3, 24, 24) and small[0].masks.shape == (4, 1, 24, 24)
    (tmp_path / groups[0].name / "000_gt.pgm").unlink()
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path)
    assert load_dataset(tmp_path, require_gt=False)[0].masks is None


def test_write_is_byte_deterministic(tmp_path):
    for name in ("a", "b"):
        write_dataset(tmp_path / name, synth_dataset(seed=1, n_groups=2, group_size=2, side=16))
    assert dataset_fingerprint(tmp_path / "a") == dataset_fingerprint(tmp_path / "b")


def test_n_groups_must_be_positive():
    with pytest.raises(ValueError):
        synth_dataset(0, 0)
