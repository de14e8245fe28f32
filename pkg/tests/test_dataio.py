import struct
from fractions import Fraction

import numpy as np
import pytest

from ffcnn.dataio import (
    ImageSet,
    SplitSpec,
    apply_laws,
    convert_color_space,
    laws_filter_bank,
    load_cifar10,
    load_idx,
    load_raw_container,
    rgb_to_gray,
    rgb_to_lab,
    rgb_to_ycbcr,
    sample_balanced_subset,
    save_raw_container,
    ycbcr_to_rgb,
)
from ffcnn.errors import ColorError, ConfigError, FormatError, MissingLabels


def write_idx_images(path, images):
    n, h, w = images.shape
    path.write_bytes(struct.pack(">IIII", 0x803, n, h, w) + images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels):
    path.write_bytes(struct.pack(">II", 0x801, len(labels)) + bytes(labels))


class TestIdx:
    def test_pads_28_to_32(self, tmp_path):
        images = np.zeros((3, 28, 28), dtype=np.uint8)
        images[:, 10, 10] = 255
        write_idx_images(tmp_path / "imgs", images)
        write_idx_labels(tmp_path / "labels", [0, 1, 2])
        iset = load_idx(tmp_path / "imgs", tmp_path / "labels")
        assert iset.images.shape == (3, 32, 32, 1)
        assert iset.images[0, 12, 12, 0] == pytest.approx(1.0)
        np.testing.assert_array_equal(iset.labels, [0, 1, 2])

    def test_zero_image_pads_to_zero(self, tmp_path):
        write_idx_images(tmp_path / "imgs", np.zeros((1, 28, 28), dtype=np.uint8))
        iset = load_idx(tmp_path / "imgs")
        np.testing.assert_array_equal(iset.images, 0.0)
        assert iset.images.shape == (1, 32, 32, 1)

    def test_wrong_magic_rejected(self, tmp_path):
        path = tmp_path / "bad"
        path.write_bytes(struct.pack(">IIII", 0x801, 1, 28, 28) + bytes(28 * 28))
        with pytest.raises(FormatError):
            load_idx(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "short"
        path.write_bytes(struct.pack(">IIII", 0x803, 2, 28, 28) + bytes(28 * 28))
        with pytest.raises(FormatError):
            load_idx(path)

    def test_label_magic_checked(self, tmp_path):
        write_idx_images(tmp_path / "imgs", np.zeros((1, 28, 28), dtype=np.uint8))
        (tmp_path / "labels").write_bytes(struct.pack(">II", 0x803, 1) + b"\x00")
        with pytest.raises(FormatError):
            load_idx(tmp_path / "imgs", tmp_path / "labels")

    def test_gzip_transparent(self, tmp_path):
        import gzip

        images = np.full((2, 28, 28), 7, dtype=np.uint8)
        raw = struct.pack(">IIII", 0x803, 2, 28, 28) + images.tobytes()
        (tmp_path / "imgs.gz").write_bytes(gzip.compress(raw))
        iset = load_idx(tmp_path / "imgs.gz")
        assert iset.n == 2


def make_cifar_batch(path, n, label_fn=lambda i: i % 10):
    records = bytearray()
    for i in range(n):
        records.append(label_fn(i))
        records.extend(bytes([i % 256] * 3072))
    path.write_bytes(bytes(records))


class TestCifar:
    def test_multiple_batches(self, tmp_path):
        for b in range(2):
            make_cifar_batch(tmp_path / f"b{b}.bin", 10)
        iset = load_cifar10([tmp_path / "b0.bin", tmp_path / "b1.bin"])
        assert iset.images.shape == (20, 32, 32, 3)
        assert iset.color_tag == "rgb"
        assert iset.labels.shape == (20,)

    def test_single_record(self, tmp_path):
        make_cifar_batch(tmp_path / "one.bin", 1)
        assert load_cifar10([tmp_path / "one.bin"]).n == 1

    def test_bad_size(self, tmp_path):
        (tmp_path / "bad.bin").write_bytes(bytes(3072))
        with pytest.raises(FormatError):
            load_cifar10([tmp_path / "bad.bin"])

    def test_label_byte_out_of_range(self, tmp_path):
        make_cifar_batch(tmp_path / "bad.bin", 1, label_fn=lambda i: 10)
        with pytest.raises(FormatError):
            load_cifar10([tmp_path / "bad.bin"])

    def test_plane_layout(self, tmp_path):
        # R plane 255, G plane 128, B plane 0
        record = bytes([3]) + bytes([255] * 1024) + bytes([128] * 1024) + bytes([0] * 1024)
        (tmp_path / "p.bin").write_bytes(record)
        iset = load_cifar10([tmp_path / "p.bin"])
        np.testing.assert_allclose(iset.images[0, 0, 0], [1.0, 128 / 255, 0.0], atol=1e-7)


class TestRawContainer:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        images = (rng.integers(0, 256, size=(5, 4, 4, 3)) / 255.0).astype(np.float32)
        iset = ImageSet(images, np.array([0, 1, 2, 3, 4]), "rgb")
        save_raw_container(iset, tmp_path / "x.ffc")
        redo = load_raw_container(tmp_path / "x.ffc")
        np.testing.assert_allclose(redo.images, images, atol=1e-7)
        np.testing.assert_array_equal(redo.labels, iset.labels)

    def test_hand_built_payload(self, tmp_path):
        payload = b"FFC1" + struct.pack("<IIIIB", 2, 2, 2, 1, 1) + bytes(range(8)) + bytes([1, 0])
        (tmp_path / "h.ffc").write_bytes(payload)
        iset = load_raw_container(tmp_path / "h.ffc")
        assert iset.n == 2 and iset.shape == (2, 2, 1)
        np.testing.assert_array_equal(iset.labels, [1, 0])
        assert iset.images[0, 0, 1, 0] == pytest.approx(1 / 255)

    def test_unlabeled_flag(self, tmp_path):
        payload = b"FFC1" + struct.pack("<IIIIB", 1, 2, 2, 1, 0) + bytes(4)
        (tmp_path / "u.ffc").write_bytes(payload)
        assert load_raw_container(tmp_path / "u.ffc").labels is None

    def test_declared_size_too_large(self, tmp_path):
        payload = b"FFC1" + struct.pack("<IIIIB", 4, 8, 8, 3, 0) + bytes(16)
        (tmp_path / "t.ffc").write_bytes(payload)
        with pytest.raises(FormatError):
            load_raw_container(tmp_path / "t.ffc")

    def test_bad_magic(self, tmp_path):
        (tmp_path / "m.ffc").write_bytes(b"NOPE" + bytes(32))
        with pytest.raises(FormatError):
            load_raw_container(tmp_path / "m.ffc")


def make_labeled_set(n, n_classes=10, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(n_classes), n // n_classes)
    images = rng.random((n, 2, 2, 1)).astype(np.float32)
    return ImageSet(images, labels, "gray", num_classes=n_classes)


class TestBalancedSplit:
    def test_mnist_sized_fraction_counts(self):
        # floor((1/256) * 60000 / 10) = 23 per class, 230 total
        iset = make_labeled_set(60000)
        spec = SplitSpec(Fraction(1, 256), seed=0)
        labeled, unlabeled = sample_balanced_subset(iset, spec)
        assert labeled.n == 230
        assert unlabeled.n == 60000 - 230
        assert unlabeled.labels is None
        np.testing.assert_array_equal(np.bincount(labeled.labels), [23] * 10)

    def test_fraction_one_takes_everything(self):
        iset = make_labeled_set(100)
        labeled, unlabeled = sample_balanced_subset(iset, SplitSpec(Fraction(1), seed=0))
        assert labeled.n == 100
        assert unlabeled.n == 0

    def test_determinism(self):
        iset = make_labeled_set(500)
        spec = SplitSpec(Fraction(1, 2), seed=42)
        l1, u1 = sample_balanced_subset(iset, spec)
        l2, u2 = sample_balanced_subset(iset, spec)
        np.testing.assert_array_equal(l1.images, l2.images)
        np.testing.assert_array_equal(u1.images, u2.images)

    def test_partition_no_overlap(self):
        iset = make_labeled_set(200)
        # tag images with unique values so membership is checkable
        iset.images[:, 0, 0, 0] = np.arange(200) / 200.0
        labeled, unlabeled = sample_balanced_subset(iset, SplitSpec(Fraction(1, 4), seed=7))
        all_ids = np.concatenate([labeled.images[:, 0, 0, 0], unlabeled.images[:, 0, 0, 0]])
        assert np.unique(all_ids).size == 200

    def test_unlabeled_input_rejected(self):
        iset = ImageSet(np.zeros((4, 2, 2, 1), dtype=np.float32))
        with pytest.raises(MissingLabels):
            sample_balanced_subset(iset, SplitSpec(Fraction(1, 2), seed=0))

    def test_overdraw_rejected(self):
        # unbalanced set: class 0 has 2 samples, the rest have 100
        labels = np.concatenate([[0, 0], np.repeat(np.arange(1, 10), 100)])
        images = np.zeros((labels.size, 2, 2, 1), dtype=np.float32)
        iset = ImageSet(images, labels, "gray", num_classes=10)
        with pytest.raises(ConfigError):
            sample_balanced_subset(iset, SplitSpec(Fraction(1, 2), seed=0))


def rgb_set(pixels):
    arr = np.asarray(pixels, dtype=np.float32)[None, None, :, :] / 255.0
    return ImageSet(arr, None, "rgb")


class TestColorSpaces:
    def test_achromatic_fixed_point(self):
        iset = rgb_set([[128, 128, 128]])
        y, cb, cr = convert_color_space(iset, "ycbcr")
        assert y.images[0, 0, 0, 0] * 255 == pytest.approx(128.0, abs=1e-4)
        assert cb.images[0, 0, 0, 0] * 255 == pytest.approx(128.0, abs=1e-4)
        assert cr.images[0, 0, 0, 0] * 255 == pytest.approx(128.0, abs=1e-4)

    def test_reference_white_lab(self):
        lum, a, b = rgb_to_lab(np.ones((1, 1, 1, 3)))
        assert lum[0, 0, 0] == pytest.approx(100.0, abs=1e-3)
        assert a[0, 0, 0] == pytest.approx(0.0, abs=1e-2)
        assert b[0, 0, 0] == pytest.approx(0.0, abs=1e-2)

    def test_pure_red_chroma(self):
        # evaluate the matrix by hand for (255, 0, 0)
        cb_expected = 128.0 - 0.168736 * 255.0
        cr_expected = 128.0 + 0.5 * 255.0
        iset = rgb_set([[255, 0, 0]])
        _, cb, cr = convert_color_space(iset, "ycbcr")
        assert cb.images[0, 0, 0, 0] * 255 == pytest.approx(cb_expected, abs=1e-3)
        assert cr.images[0, 0, 0, 0] * 255 == pytest.approx(cr_expected, abs=1e-3)
        assert cr.images[0, 0, 0, 0] * 255 > 128
        assert cb.images[0, 0, 0, 0] * 255 < 128

    def test_ycbcr_roundtrip_within_one_step(self):
        rng = np.random.default_rng(5)
        rgb = (rng.integers(0, 256, size=(4, 6, 6, 3)) / 255.0).astype(np.float32)
        y, cb, cr = rgb_to_ycbcr(rgb)
        back = ycbcr_to_rgb(y, cb, cr)
        assert np.abs(back - rgb).max() <= 1.0 / 255.0 + 1e-6

    def test_non_rgb_rejected(self):
        iset = ImageSet(np.zeros((1, 2, 2, 1), dtype=np.float32))
        with pytest.raises(ColorError):
            convert_color_space(iset, "ycbcr")
        with pytest.raises(ColorError):
            convert_color_space(rgb_set([[1, 2, 3]]), "hsv")

    def test_channel_tags(self):
        sets = convert_color_space(rgb_set([[10, 20, 30]]), "lab")
        assert [s.color_tag for s in sets] == ["L", "a", "b"]


class TestLaws:
    def test_bank_is_nine_rank_one_kernels(self):
        bank = laws_filter_bank()
        assert bank.shape == (9, 3, 3)
        for kernel in bank:
            assert np.linalg.matrix_rank(kernel) == 1

    def test_bank_spans_full_space(self):
        assert np.linalg.matrix_rank(laws_filter_bank().reshape(9, 9)) == 9

    def test_constant_image_zero_sum_kernels(self):
        iset = ImageSet(np.full((1, 8, 8, 1), 0.5, dtype=np.float32))
        outs = apply_laws(iset)
        # every kernel with an E3 or S3 factor sums to zero
        for k, out in enumerate(outs):
            if k == 0:
                continue
            np.testing.assert_allclose(out.images, 0.0, atol=1e-6)

    def test_constant_image_through_smoothing_kernel(self):
        iset = ImageSet(np.full((1, 8, 8, 1), 0.25, dtype=np.float32))
        out = apply_laws(iset)[0]  # L3'L3, kernel sum 16
        np.testing.assert_allclose(out.images, 16 * 0.25, atol=1e-5)

    def test_color_input_goes_through_luma(self):
        rng = np.random.default_rng(2)
        rgb = ImageSet(rng.random((2, 8, 8, 3)).astype(np.float32), None, "rgb")
        outs = apply_laws(rgb)
        assert len(outs) == 9
        assert all(o.images.shape == (2, 8, 8, 1) for o in outs)
        assert [o.color_tag for o in outs] == [f"laws{k}" for k in range(9)]

    def test_luma_weights(self):
        rgb = rgb_set([[100, 150, 200]])
        gray = rgb_to_gray(rgb)
        expected = (0.299 * 100 + 0.587 * 150 + 0.114 * 200) / 255.0
        assert gray.images[0, 0, 0, 0] == pytest.approx(expected, abs=1e-6)
