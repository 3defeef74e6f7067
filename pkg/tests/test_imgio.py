import numpy as np
import pytest
from PIL import Image as PILImage

from cuts import imgio
from cuts.errors import (
    BadMagicError,
    CorruptDataError,
    TruncatedFileError,
    UnsupportedFormatError,
    ZeroDimensionError,
)


def write_png(path, arr, mode):
    PILImage.fromarray(arr, mode=mode).save(path, format="PNG")


class TestLoadImage:
    def test_rgb_max_intensity(self, tmp_path):
        p = tmp_path / "white.png"
        write_png(p, np.full((2, 2, 3), 255, dtype=np.uint8), "RGB")
        img = imgio.load_image(p)
        assert (img.height, img.width, img.channels) == (2, 2, 3)
        assert np.all(img.data == 1.0)

    def test_gray_zero(self, tmp_path):
        p = tmp_path / "black.png"
        write_png(p, np.zeros((1, 1), dtype=np.uint8), "L")
        img = imgio.load_image(p)
        assert (img.height, img.width, img.channels) == (1, 1, 1)
        assert img.data[0, 0, 0] == 0.0

    def test_gray_scaling(self, tmp_path):
        p = tmp_path / "gray.png"
        write_png(p, np.array([[51, 102]], dtype=np.uint8), "L")
        img = imgio.load_image(p)
        assert np.allclose(img.data[0, :, 0], [0.2, 0.4])

    def test_binary_pgm_and_ppm(self, tmp_path):
        pgm = tmp_path / "img.pgm"
        pgm.write_bytes(b"P5\n2 1\n255\n" + bytes([0, 255]))
        img = imgio.load_image(pgm)
        assert img.channels == 1
        assert np.allclose(img.data[0, :, 0], [0.0, 1.0])

        ppm = tmp_path / "img.ppm"
        ppm.write_bytes(b"P6\n1 1\n255\n" + bytes([255, 0, 0]))
        img = imgio.load_image(ppm)
        assert img.channels == 3
        assert np.allclose(img.data[0, 0], [1.0, 0.0, 0.0])

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            imgio.load_image(tmp_path / "nope.png")

    def test_unsupported_mode(self, tmp_path):
        p = tmp_path / "rgba.png"
        write_png(p, np.zeros((2, 2, 4), dtype=np.uint8), "RGBA")
        with pytest.raises(UnsupportedFormatError):
            imgio.load_image(p)

    def test_not_an_image(self, tmp_path):
        p = tmp_path / "junk.png"
        p.write_bytes(b"this is not a png at all")
        with pytest.raises(UnsupportedFormatError):
            imgio.load_image(p)

    def test_truncated_png(self, tmp_path):
        p = tmp_path / "ok.png"
        write_png(p, np.random.default_rng(0).integers(0, 255, (32, 32), dtype=np.uint8).astype(np.uint8), "L")
        blob = p.read_bytes()
        bad = tmp_path / "cut.png"
        bad.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(CorruptDataError):
            imgio.load_image(bad)


class TestResize:
    def test_same_size_identity(self):
        rng = np.random.default_rng(1)
        img = imgio.Image.from_array(rng.random((7, 5, 3)).astype(np.float32))
        out = imgio.resize_bilinear(img, 7, 5)
        assert np.array_equal(out.data, img.data)

    def test_constant_invariance(self):
        img = imgio.Image.from_array(np.full((4, 6), 0.37, dtype=np.float32))
        out = imgio.resize_bilinear(img, 9, 3)
        assert np.allclose(out.data, 0.37)

    def test_align_corners_interpolation(self):
        img = imgio.Image.from_array(np.array([[0.0, 1.0]], dtype=np.float64), dtype=np.float64)
        out = imgio.resize_bilinear(img, 1, 3)
        assert np.allclose(out.data[0, :, 0], [0.0, 0.5, 1.0])

    def test_bounds_preserved(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            h, w = rng.integers(1, 12, 2)
            oh, ow = rng.integers(1, 25, 2)
            img = imgio.Image.from_array(rng.random((h, w)).astype(np.float32))
            out = imgio.resize_bilinear(img, int(oh), int(ow))
            assert out.data.min() >= img.data.min() - 1e-9
            assert out.data.max() <= img.data.max() + 1e-9

    def test_zero_dimension(self):
        img = imgio.Image.from_array(np.zeros((2, 2), dtype=np.float32))
        with pytest.raises(ZeroDimensionError):
            imgio.resize_bilinear(img, 0, 5)


class TestLabelMapFile:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        for _ in range(5):
            lm = imgio.LabelMap.from_array(rng.integers(0, 9, (6, 4)))
            path = tmp_path / "m.lbl"
            imgio.write_label_map(lm, path)
            back = imgio.read_label_map(path)
            assert np.array_equal(back.labels, lm.labels)
            # write -> read -> write is byte-stable
            path2 = tmp_path / "m2.lbl"
            imgio.write_label_map(back, path2)
            assert path.read_bytes() == path2.read_bytes()

    def test_exact_byte_count(self, tmp_path):
        lm = imgio.LabelMap.from_array([[0]])
        path = tmp_path / "one.lbl"
        imgio.write_label_map(lm, path)
        # 8 magic + 4 height + 4 width + 4 payload
        assert path.stat().st_size == 8 + 8 + 4

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.lbl"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 12)
        with pytest.raises(BadMagicError):
            imgio.read_label_map(path)

    def test_truncated(self, tmp_path):
        lm = imgio.LabelMap.from_array([[0, 1], [2, 3]])
        path = tmp_path / "t.lbl"
        imgio.write_label_map(lm, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-3])
        with pytest.raises(TruncatedFileError):
            imgio.read_label_map(path)

    def test_trailing_junk(self, tmp_path):
        lm = imgio.LabelMap.from_array([[0]])
        path = tmp_path / "j.lbl"
        imgio.write_label_map(lm, path)
        path.write_bytes(path.read_bytes() + b"xx")
        with pytest.raises(CorruptDataError):
            imgio.read_label_map(path)


class TestRender:
    def test_same_label_same_color(self):
        lm = imgio.LabelMap.from_array([[4, 4]])
        out = imgio.render_label_map(lm)
        assert np.array_equal(out.data[0, 0], out.data[0, 1])

    def test_distinct_labels_distinct_colors(self):
        lm = imgio.LabelMap.from_array([[0, 1]])
        out = imgio.render_label_map(lm)
        assert not np.array_equal(out.data[0, 0], out.data[0, 1])

    def test_mod_256_wraparound(self):
        lm = imgio.LabelMap.from_array([[0, 256, 512]])
        out = imgio.render_label_map(lm)
        assert np.array_equal(out.data[0, 0], out.data[0, 1])
        assert np.array_equal(out.data[0, 0], out.data[0, 2])

    def test_palette_injective_within_256(self):
        lm = imgio.LabelMap.from_array(np.arange(256).reshape(16, 16))
        out = imgio.render_label_map(lm)
        colors = out.data.reshape(-1, 3)
        assert len(np.unique(colors, axis=0)) == 256

    def test_render_matches_congruence_exactly(self):
        rng = np.random.default_rng(4)
        labels = rng.integers(0, 1000, (8, 8))
        out = imgio.render_label_map(imgio.LabelMap.from_array(labels))
        flat_lab = labels.ravel() % 256
        flat_col = out.data.reshape(-1, 3)
        for i in range(len(flat_lab)):
            for j in range(i + 1, len(flat_lab)):
                same = np.array_equal(flat_col[i], flat_col[j])
                assert same == (flat_lab[i] == flat_lab[j])

    def test_image_png_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        img = imgio.Image.from_array((rng.integers(0, 256, (5, 7)) / 255.0).astype(np.float32))
        p = tmp_path / "x.png"
        imgio.save_image(img, p)
        back = imgio.load_image(p)
        assert np.allclose(back.data, img.data, atol=1e-9)
