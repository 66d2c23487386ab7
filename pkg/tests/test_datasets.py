import numpy as np
import pytest

from ChannelGating.Datasets import (
    BatchLoader,
    DatasetSource,
    ImageSet,
    load_cifar10,
    parse_records,
    read_batch_file,
    synthetic_conditional_dataset,
)
from ChannelGating.Datasets.constants import CIFAR_RECORD_SIZE
from ChannelGating.ImageHelpers import PILHelper


def cifar_records(labels, rng):
    out = bytearray()
    for label in labels:
        out.append(label)
        out.extend(rng.integers(0, 256, size=CIFAR_RECORD_SIZE - 1, dtype=np.uint8).tobytes())
    return bytes(out)


@pytest.fixture
def cifar_dir(tmp_path, rng):
    (tmp_path / "data_batch_1.bin").write_bytes(cifar_records([0, 3, 9, 1], rng))
    (tmp_path / "test_batch.bin").write_bytes(cifar_records([5, 2], rng))
    return tmp_path


class TestCifar10:
    def test_record_layout(self, rng):
        data = cifar_records([7], rng)
        pixels, labels = parse_records(data)
        assert pixels.shape == (1, 3, 32, 32)
        np.testing.assert_array_equal(labels, [7])
        # red plane first, row-major
        assert pixels[0, 0, 0, 1] == data[2]
        assert pixels[0, 1, 0, 0] == data[1 + 1024]
        assert pixels[0, 2, 31, 31] == data[-1]

    def test_truncated_record(self, rng):
        data = cifar_records([1, 2], rng)[:-10]
        with pytest.raises(ValueError, match=f"truncated record at byte offset {CIFAR_RECORD_SIZE}"):
            parse_records(data)

    def test_label_out_of_range(self, rng):
        data = cifar_records([1, 12], rng)
        with pytest.raises(ValueError, match=f"label 12 > 9 at byte offset {CIFAR_RECORD_SIZE}"):
            parse_records(data)

    def test_directory(self, cifar_dir):
        train, test = load_cifar10(cifar_dir)
        np.testing.assert_array_equal(train.labels, [0, 3, 9, 1])
        np.testing.assert_array_equal(test.labels, [5, 2])
        assert train.classes == 10

    def test_single_file_rejected(self, cifar_dir):
        with pytest.raises(ValueError, match="single batch file"):
            load_cifar10(cifar_dir / "data_batch_1.bin")

    def test_missing_test_batch(self, tmp_path, rng):
        (tmp_path / "data_batch_1.bin").write_bytes(cifar_records([0, 1], rng))
        with pytest.raises(ValueError, match="no test_batch.bin"):
            load_cifar10(tmp_path)

    def test_known_record_values(self, tmp_path):
        # label 4; red ramps 0..255 over every eight rows, green saturated, blue black
        record = bytes([4]) + bytes(i % 256 for i in range(1024)) + bytes([255] * 1024) + bytes(1024)
        (tmp_path / "data_batch_1.bin").write_bytes(record)
        (tmp_path / "test_batch.bin").write_bytes(record * 2)
        train, test = load_cifar10(tmp_path)
        images = test.images()
        assert test.labels.tolist() == [4, 4]
        assert images[0, 0, 0, 0] == pytest.approx((0.0 - 0.4914) / 0.2470, rel=1e-6)
        assert images[0, 0, 0, 31] == pytest.approx((31 / 255 - 0.4914) / 0.2470, rel=1e-6)
        assert images[0, 0, 7, 31] == pytest.approx((255 / 255 - 0.4914) / 0.2470, rel=1e-6)
        assert images[0, 0, 8, 0] == pytest.approx((0.0 - 0.4914) / 0.2470, rel=1e-6)
        np.testing.assert_allclose(images[0, 1], (1.0 - 0.4822) / 0.2435, rtol=1e-6)
        np.testing.assert_allclose(images[0, 2], (0.0 - 0.4465) / 0.2616, rtol=1e-6)
        np.testing.assert_array_equal(train.images()[0], images[1])

    def test_missing_path(self, tmp_path):
        with pytest.raises(ValueError, match="does not exist"):
            load_cifar10(tmp_path / "nope")

    def test_source_subsets(self, cifar_dir):
        train, test = DatasetSource(kind="cifar10-binary", path=str(cifar_dir), train_size=2, test_size=1).load()
        assert (len(train), len(test)) == (2, 1)

    def test_read_batch_file_normalizes(self, cifar_dir):
        images = read_batch_file(cifar_dir / "test_batch.bin").images()
        assert images.dtype == np.float32
        assert images.shape == (2, 3, 32, 32)


class TestSynthetic:
    def test_deterministic(self):
        a = synthetic_conditional_dataset(4, 50, 10)
        b = synthetic_conditional_dataset(4, 50, 10)
        np.testing.assert_array_equal(a.pixels, b.pixels)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_seeds_differ(self):
        a = synthetic_conditional_dataset(4, 50, 10)
        b = synthetic_conditional_dataset(5, 50, 10)
        assert not np.array_equal(a.pixels, b.pixels)

    def test_balanced_labels(self):
        data = synthetic_conditional_dataset(0, 100, 10)
        np.testing.assert_array_equal(np.bincount(data.labels, minlength=10), np.full(10, 10))

    def test_test_split_shares_statistics(self):
        train, test = DatasetSource(train_size=40, test_size=20, classes=4).load()
        assert test.mean == train.mean and test.std == train.std
        assert not np.array_equal(train.pixels[:20], test.pixels)

    def test_pattern_lives_in_group_region(self):
        # classes 0 and 1 belong to different halves with 2 groups
        data = synthetic_conditional_dataset(0, 400, 2)
        pixels = data.pixels.astype(np.float64)
        top = pixels[:, :, :16].std(axis=(1, 2, 3))
        bottom = pixels[:, :, 16:].std(axis=(1, 2, 3))
        assert np.mean(top[data.labels == 0]) > np.mean(top[data.labels == 1])
        assert np.mean(bottom[data.labels == 1]) > np.mean(bottom[data.labels == 0])

    @pytest.mark.parametrize("n,classes", [(0, 10), (10, 1)])
    def test_invalid(self, n, classes):
        with pytest.raises(ValueError):
            synthetic_conditional_dataset(0, n, classes)


class TestImageSet:
    def test_rejects_float_pixels(self):
        with pytest.raises(ValueError, match="uint8"):
            ImageSet(np.zeros((1, 3, 2, 2)), np.zeros(1, dtype=np.int64), (0.5,) * 3, (0.2,) * 3, 10)

    def test_rejects_bad_labels(self):
        with pytest.raises(ValueError, match="labels outside"):
            ImageSet(np.zeros((1, 3, 2, 2), np.uint8), np.array([10]), (0.5,) * 3, (0.2,) * 3, 10)

    def test_invalid_source(self):
        with pytest.raises(ValueError, match="needs a path"):
            DatasetSource(kind="cifar10-binary")


class TestBatchLoader:
    @pytest.fixture
    def data(self):
        return synthetic_conditional_dataset(0, 37, 4)

    def test_batch_count(self, data):
        assert len(BatchLoader(data, 8)) == 5
        assert len(BatchLoader(data, 8, drop_last=True)) == 4

    def test_unshuffled_order(self, data):
        labels = np.concatenate([y for _, y in BatchLoader(data, 8, shuffle=False)])
        np.testing.assert_array_equal(labels, data.labels)

    def test_epochs_shuffle_differently(self, data):
        a = np.concatenate([y for _, y in BatchLoader(data, 8, epoch=0)])
        b = np.concatenate([y for _, y in BatchLoader(data, 8, epoch=1)])
        assert sorted(a) == sorted(b)
        assert not np.array_equal(a, b)

    @pytest.mark.parametrize("workers", [1, 3])
    def test_workers_do_not_change_batches(self, data, workers):
        serial = list(BatchLoader(data, 8, seed=2, epoch=1, augment=True))
        threaded = list(BatchLoader(data, 8, seed=2, epoch=1, augment=True, workers=workers))
        assert len(serial) == len(threaded)
        for (x, y), (xt, yt) in zip(serial, threaded):
            np.testing.assert_array_equal(x, xt)
            np.testing.assert_array_equal(y, yt)

    def test_worker_error_reaches_consumer(self, data):
        loader = BatchLoader(data, 8, workers=2)

        def broken(index):
            raise RuntimeError(f"batch {index}")

        loader.make_batch = broken
        with pytest.raises(RuntimeError, match="batch 0"):
            list(loader)
        assert not loader.running

    def test_invalid_batch_size(self, data):
        with pytest.raises(ValueError, match="batch size"):
            BatchLoader(data, 0)


class TestPILHelper:
    def test_mirror_twice_is_identity(self, rng):
        pixels = rng.integers(0, 256, size=(3, 8, 8), dtype=np.uint8)
        image = PILHelper.to_image(pixels)
        np.testing.assert_array_equal(PILHelper.from_image(PILHelper.mirror(PILHelper.mirror(image))), pixels)

    def test_mirror_flips_columns(self, rng):
        pixels = rng.integers(0, 256, size=(3, 4, 4), dtype=np.uint8)
        flipped = PILHelper.from_image(PILHelper.mirror(PILHelper.to_image(pixels)))
        np.testing.assert_array_equal(flipped, pixels[:, :, ::-1])

    def test_centered_crop_is_identity(self, rng):
        pixels = rng.integers(0, 256, size=(3, 8, 8), dtype=np.uint8)
        image = PILHelper.pad_and_crop(PILHelper.to_image(pixels), 4, 4, 4)
        np.testing.assert_array_equal(PILHelper.from_image(image), pixels)

    def test_corner_crop_shifts_in_black(self, rng):
        pixels = rng.integers(1, 256, size=(3, 8, 8), dtype=np.uint8)
        shifted = PILHelper.from_image(PILHelper.pad_and_crop(PILHelper.to_image(pixels), 2, 0, 0))
        assert np.all(shifted[:, :2, :] == 0)
        np.testing.assert_array_equal(shifted[:, 2:, 2:], pixels[:, :6, :6])

    def test_crop_offset_range(self, rng):
        image = PILHelper.to_image(np.zeros((3, 4, 4), np.uint8))
        with pytest.raises(ValueError, match="offset"):
            PILHelper.pad_and_crop(image, 2, 5, 0)

    def test_augment_batch_keeps_shape(self, rng):
        pixels = rng.integers(0, 256, size=(5, 3, 8, 8), dtype=np.uint8)
        out = PILHelper.augment_batch(pixels, rng)
        assert out.shape == pixels.shape and out.dtype == np.uint8
