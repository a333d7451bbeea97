import numpy as np
import pytest

from lumiflow import imgio


def test_pfm_roundtrip_exact(tmp_path, rng):
    img = rng.uniform(0, 10, (9, 5, 3)).astype(np.float32)
    path = tmp_path / "img.pfm"
    imgio.write_pfm(path, img)
    back = imgio.read_pfm(path)
    assert back.dtype == np.float32
    assert np.array_equal(back, img)


def test_pfm_rejects_bad_shape(tmp_path):
    with pytest.raises(ValueError):
        imgio.write_pfm(tmp_path / "x.pfm", np.zeros((4, 4)))


def test_pfm_rejects_bad_header(tmp_path):
    path = tmp_path / "bad.pfm"
    path.write_bytes(b"Pf\n2 2\n-1.0\n" + b"\x00" * 16)
    with pytest.raises(ValueError, match="not a color PFM"):
        imgio.read_pfm(path)


def test_png_roundtrip_quantized(tmp_path, rng):
    img = rng.uniform(0, 1, (7, 7, 3))
    path = tmp_path / "img.png"
    imgio.write_png(path, img)
    back = imgio.read_png(path)
    # value = round(255 x) / 255 on read-back
    assert np.array_equal(np.round(255 * img), 255 * back)


def test_png_range_check(tmp_path):
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        imgio.write_png(tmp_path / "x.png", np.full((2, 2, 3), 1.5))


def test_require_files_lists_missing(tmp_path):
    present = tmp_path / "ok.txt"
    present.write_text("x")
    with pytest.raises(FileNotFoundError) as err:
        imgio.require_files(present, tmp_path / "gone1", tmp_path / "gone2")
    assert "gone1" in str(err.value) and "gone2" in str(err.value)
