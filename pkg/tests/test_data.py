import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jointdec import data as D
from jointdec.errors import ConfigurationError, FormatError


def records(rng, n):
    images = rng.integers(0, 256, (n, 3, 32, 32), dtype=np.uint8)
    labels = rng.integers(0, 10, n)
    return images, labels


class TestCifar:
    def test_round_trip(self, rng, tmp_path):
        images, labels = records(rng, 2)
        path = tmp_path / "b.bin"
        D.write_cifar10_records(path, images, labels)
        raw = path.read_bytes()
        assert len(raw) == 2 * 3073
        assert raw[0] == labels[0] and raw[3073] == labels[1]
        got_i, got_l = D.read_cifar10_file(path)
        np.testing.assert_array_equal(got_i, images)
        np.testing.assert_array_equal(got_l, labels)

    def test_empty(self):
        images, labels = D.parse_cifar10_bytes(b"")
        assert images.shape == (0, 3, 32, 32) and labels.shape == (0,)

    def test_truncated(self):
        with pytest.raises(FormatError) as exc:
            D.parse_cifar10_bytes(bytes(3072))
        assert exc.value.offset == 0

    def test_truncated_second_record(self):
        with pytest.raises(FormatError) as exc:
            D.parse_cifar10_bytes(bytes(3073 + 100))
        assert exc.value.offset == 3073

    def test_bad_label(self):
        raw = bytearray(2 * 3073)
        raw[3073] = 10
        with pytest.raises(FormatError) as exc:
            D.parse_cifar10_bytes(bytes(raw))
        assert exc.value.offset == 3073

    def test_cifar100_rejected(self):
        with pytest.raises(FormatError, match="CIFAR-100"):
            D.parse_cifar10_bytes(bytes(3074))

    def test_directory(self, rng, tmp_path):
        for name in D.CIFAR10_TRAIN_FILES + (D.CIFAR10_TEST_FILE,):
            D.write_cifar10_records(tmp_path / name, *records(rng, 2))
        train, test = D.read_cifar10(tmp_path)
        assert len(train) == 10 and len(test) == 2
        assert train.images.max() <= 1.0

    def test_missing_directory(self, tmp_path):
        with pytest.raises(FormatError):
            D.read_cifar10(tmp_path)


class TestToy:
    def test_deterministic(self):
        a, _ = D.make_toy_set(3, 30, 9)
        b, _ = D.make_toy_set(3, 30, 9)
        assert a.images.tobytes() == b.images.tobytes()
        assert a.labels.tobytes() == b.labels.tobytes()

    def test_different_seeds(self):
        assert not np.array_equal(D.make_toy_set(0, 9, 3)[0].images, D.make_toy_set(1, 9, 3)[0].images)

    def test_balanced(self):
        train, test = D.make_toy_set(0, 300, 30)
        assert np.bincount(train.labels).tolist() == [100, 100, 100]
        assert train.images.shape == (300, 3, 16, 16)
        assert 0 <= train.images.min() and train.images.max() <= 1

    def test_invalid_sizes(self):
        with pytest.raises(ConfigurationError):
            D.make_toy_set(0, 0, 5)


class TestNormalize:
    def test_identity(self, rng):
        ds = D.LabeledImageSet(rng.random((4, 3, 4, 4)), [0, 1, 2, 0], num_classes=3)
        out = D.normalize(ds, D.AugmentPolicy(crop=4, cutout_size=0))
        np.testing.assert_array_equal(out.images, ds.images)

    def test_moments(self, rng):
        ds = D.LabeledImageSet(rng.random((20, 3, 8, 8)) * 3 + 1, np.zeros(20), num_classes=3)
        mean, std = D.channel_stats(ds.images)
        out = D.normalize(ds, D.AugmentPolicy(crop=8, cutout_size=0, channel_mean=mean, channel_std=std))
        np.testing.assert_allclose(out.images.mean(axis=(0, 2, 3)), 0, atol=1e-6)
        np.testing.assert_allclose(out.images.std(axis=(0, 2, 3)), 1, atol=1e-6)

    def test_constant_channel_rejected(self):
        ds = D.LabeledImageSet(np.ones((2, 3, 4, 4)), [0, 1], num_classes=3)
        _, std = D.channel_stats(ds.images)
        with pytest.raises(ConfigurationError):
            D.normalize(ds, D.AugmentPolicy(crop=4, cutout_size=0, channel_std=std))


class TestAugment:
    def test_disabled_is_identity(self, rng):
        img = rng.random((3, 32, 32))
        out = D.augment_image(img, D.AugmentPolicy(pad=0, hflip_prob=0, cutout_size=0), rng)
        np.testing.assert_array_equal(out, img)

    def test_centered_cutout(self):
        y0, y1, x0, x1 = D.cutout_bounds(16, 16, 16, 32, 32)
        img = np.ones((3, 32, 32))
        img[:, y0:y1, x0:x1] = 0
        assert [(img[c] == 0).sum() for c in range(3)] == [256] * 3

    @settings(max_examples=200, deadline=None)
    @given(cy=st.integers(0, 31), cx=st.integers(0, 31), size=st.integers(1, 32))
    def test_cutout_area(self, cy, cx, size):
        y0, y1, x0, x1 = D.cutout_bounds(cy, cx, size, 32, 32)
        area = (y1 - y0) * (x1 - x0)
        inside = cy - size // 2 >= 0 and cx - size // 2 >= 0 and cy - size // 2 + size <= 32 and cx - size // 2 + size <= 32
        assert area <= size * size
        assert (area == size * size) == inside

    def test_crop_offsets_in_range(self, rng):
        img = rng.random((3, 32, 32)) + 1
        padded = np.pad(img, ((0, 0), (4, 4), (4, 4)))
        policy = D.AugmentPolicy(pad=4, crop=32, hflip_prob=0, cutout_size=0)
        seen = set()
        for i in range(200):
            out = D.augment_image(img, policy, np.random.default_rng(i))
            assert out.shape == img.shape
            hits = [(oy, ox) for oy in range(9) for ox in range(9)
                    if np.array_equal(out, padded[:, oy : oy + 32, ox : ox + 32])]
            assert len(hits) == 1
            seen.add(hits[0])
        assert len(seen) > 40

    def test_batch_reproducible_and_order_free(self, rng):
        batch = rng.random((4, 3, 16, 16))
        policy = D.toy_policy()
        a = D.augment_batch(batch, policy, (1, 0, 2), 3, [10, 11, 12, 13])
        b = D.augment_batch(batch[::-1], policy, (1, 0, 2), 3, [13, 12, 11, 10])
        np.testing.assert_array_equal(a, b[::-1])
        c = D.augment_batch(batch, policy, (1, 0, 2), 4, [10, 11, 12, 13])
        assert not np.array_equal(a, c)

    def test_wrong_size(self, rng):
        with pytest.raises(ConfigurationError):
            D.augment_image(rng.random((3, 16, 16)), D.cifar_policy(), rng)


def test_batches_cover_everything(rng):
    idx = np.concatenate(list(D.batches(10, 3, rng)))
    assert sorted(idx.tolist()) == list(range(10))
    assert D.num_batches(10, 3) == 4


def test_label_validation():
    with pytest.raises(ConfigurationError):
        D.LabeledImageSet(np.zeros((2, 3, 4, 4)), [0, 5], num_classes=3)
    with pytest.raises(ConfigurationError):
        D.LabeledImageSet(np.zeros((2, 3, 4, 4)), [0], num_classes=3)
