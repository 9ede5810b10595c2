"""Data pipeline: decoding, normalization, augmentation, batching."""
import numpy as np
import pytest
from PIL import Image

from minet import data


def write_png(path, arr, mode="L"):
    Image.fromarray(arr, mode=mode).save(path)


def make_pair(tmp_path, name="s1", size=(20, 20), cls=None, value=100, mask_value=200):
    img_dir = tmp_path / "train" / "images"
    mask_dir = tmp_path / "train" / "masks"
    if cls:
        img_dir, mask_dir = img_dir / cls, mask_dir / cls
    img_dir.mkdir(parents=True, exist_ok=True)
    mask_dir.mkdir(parents=True, exist_ok=True)
    img = np.full(size, value, dtype=np.uint8)
    mask = np.zeros(size, dtype=np.uint8)
    mask[4:12, 6:14] = mask_value
    write_png(img_dir / f"{name}.png", img)
    write_png(mask_dir / f"{name}.png", mask)
    return img_dir / f"{name}.png", mask_dir / f"{name}.png"


def test_load_sample_normalization_and_binarization(tmp_path):
    ip, mp = make_pair(tmp_path, value=128, mask_value=127)
    s = data.load_sample(ip, mp)
    want = (128 / 255.0 - data.MEAN) / data.STD
    np.testing.assert_allclose(s.image.data, want, atol=1e-6)
    # 127 < 128 threshold -> all-zero mask
    assert s.mask.data.sum() == 0
    ip2, mp2 = make_pair(tmp_path, name="s2", mask_value=128)
    s2 = data.load_sample(ip2, mp2)
    assert set(np.unique(s2.mask.data)) == {0.0, 1.0}
    assert s2.mask.data.sum() == 8 * 8


def test_load_sample_rgb_luminance(tmp_path):
    p = tmp_path / "rgb.png"
    arr = np.zeros((4, 4, 3), dtype=np.uint8)
    arr[..., 0] = 255  # pure red
    write_png(p, arr, mode="RGB")
    g = data._read_gray(p)
    np.testing.assert_allclose(g, 0.299, atol=1e-9)


def test_load_sample_size_mismatch(tmp_path):
    ip, _ = make_pair(tmp_path, size=(20, 20))
    _, mp = make_pair(tmp_path, name="other", size=(10, 10))
    with pytest.raises(ValueError, match="size mismatch"):
        data.load_sample(ip, mp)


def test_defect_class_from_parent_dir(tmp_path):
    ip, mp = make_pair(tmp_path, cls="patches")
    assert data.load_sample(ip, mp).defect_class == "patches"
    ip2, mp2 = make_pair(tmp_path, name="plain")
    assert data.load_sample(ip2, mp2).defect_class == "unknown"


def test_resize_sample_keeps_mask_binary(tmp_path):
    ip, mp = make_pair(tmp_path)
    s = data.resize_sample(data.load_sample(ip, mp), 37)
    assert s.image.shape == (1, 1, 37, 37)
    assert s.mask.shape == (1, 1, 37, 37)
    assert set(np.unique(s.mask.data)) <= {0.0, 1.0}


def test_augment_crop_and_forced_flip(tmp_path):
    ip, mp = make_pair(tmp_path)
    s = data.load_sample(ip, mp)
    cfg = data.AugmentConfig(resize_to=16, crop_to=12, seed=0)
    rng = np.random.default_rng(0)
    plain = data.augment(s, cfg, rng, force_flip=False)
    assert plain.image.shape == (1, 1, 12, 12)
    rng2 = np.random.default_rng(0)  # same crop offsets
    flipped = data.augment(s, cfg, rng2, force_flip=True)
    np.testing.assert_array_equal(flipped.mask.data, plain.mask.data[:, :, :, ::-1])


def test_augment_config_validation():
    with pytest.raises(ValueError):
        data.AugmentConfig(resize_to=16, crop_to=20)
    with pytest.raises(ValueError):
        data.AugmentConfig(std=0.0)


def test_discover_pairs_and_missing_mask(tmp_path):
    make_pair(tmp_path, name="a")
    make_pair(tmp_path, name="b", cls="scratches")
    pairs = data.discover_pairs(tmp_path, "train")
    assert len(pairs) == 2
    (tmp_path / "train" / "images" / "orphan.png").write_bytes(
        (tmp_path / "train" / "images" / "a.png").read_bytes())
    with pytest.raises(FileNotFoundError, match="no mask"):
        data.discover_pairs(tmp_path, "train")


def test_discover_pairs_missing_dirs(tmp_path):
    with pytest.raises(FileNotFoundError):
        data.discover_pairs(tmp_path, "train")


def test_epoch_items_doubles_with_flips(tmp_path):
    make_pair(tmp_path, name="a")
    make_pair(tmp_path, name="b")
    pairs = data.discover_pairs(tmp_path, "train")
    items = data.epoch_items(pairs, np.random.default_rng(0))
    assert len(items) == 4
    assert sorted(flip for _, flip in items) == [False, False, True, True]


def test_iterate_batches_deterministic_and_keeps_short_batch(tmp_path):
    for name in ("a", "b", "c"):
        make_pair(tmp_path, name=name)
    pairs = data.discover_pairs(tmp_path, "train")
    cfg = data.AugmentConfig(resize_to=16, crop_to=12)

    def run():
        out = []
        for imgs, masks, ids in data.iterate_batches(pairs, 4, cfg, np.random.default_rng(9)):
            out.append((imgs.data.copy(), masks.data.copy(), list(ids)))
        return out

    b1, b2 = run(), run()
    assert [len(ids) for _, _, ids in b1] == [4, 2]  # 6 items, last batch short
    for (i1, m1, d1), (i2, m2, d2) in zip(b1, b2):
        np.testing.assert_array_equal(i1, i2)
        np.testing.assert_array_equal(m1, m2)
        assert d1 == d2
    flips = [i for _, _, ids in b1 for i in ids if i.endswith("_flip")]
    assert len(flips) == 3


def test_iterate_batches_empty_index():
    cfg = data.AugmentConfig()
    with pytest.raises(ValueError):
        next(data.iterate_batches([], 4, cfg, np.random.default_rng(0)))


def test_normalize_denormalize_roundtrip():
    x = np.linspace(0, 1, 11)
    np.testing.assert_allclose(data.denormalize(data.normalize(x)), x, atol=1e-12)


def test_read_index_file(tmp_path):
    p = tmp_path / "idx.txt"
    p.write_text("a\n\n b \nc\n")
    assert data.read_index_file(p) == ["a", "b", "c"]
