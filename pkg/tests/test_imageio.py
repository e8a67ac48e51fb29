import numpy as np
import pytest

from crossiris.imageio import (ImageFormatError, read_image, read_mask, write_image,
                               write_mask)


@pytest.mark.parametrize("ext", [".png", ".pgm"])
@pytest.mark.parametrize("bits,step", [(8, 255), (16, 65535)])
def test_round_trip_is_exact_on_the_quantization_grid(tmp_path, ext, bits, step):
    rng = np.random.default_rng(bits)
    img = rng.integers(0, step + 1, (6, 9)) / step
    path = tmp_path / f"x{ext}"
    write_image(path, img, bits)
    got = read_image(path)
    assert got.dtype == np.float32 and got.shape == (6, 9)
    np.testing.assert_allclose(got, img, atol=1e-6)


def test_values_are_clipped(tmp_path):
    write_image(tmp_path / "c.png", np.array([[-1.0, 2.0]]))
    np.testing.assert_array_equal(read_image(tmp_path / "c.png"), [[0.0, 1.0]])


def test_mask_round_trip(tmp_path):
    m = np.array([[True, False], [False, True]])
    write_mask(tmp_path / "m.png", m)
    np.testing.assert_array_equal(read_mask(tmp_path / "m.png"), m)


def test_bad_files_raise_format_errors(tmp_path):
    (tmp_path / "bad.pgm").write_bytes(b"P6\n1 1\n255\n\x00\x00\x00")
    with pytest.raises(ImageFormatError):
        read_image(tmp_path / "bad.pgm")
    (tmp_path / "short.pgm").write_bytes(b"P5\n4 4\n255\n\x00")
    with pytest.raises(ImageFormatError):
        read_image(tmp_path / "short.pgm")
    (tmp_path / "bad.png").write_bytes(b"not a png")
    with pytest.raises(ImageFormatError):
        read_image(tmp_path / "bad.png")
    with pytest.raises(ImageFormatError):
        read_image(tmp_path / "x.tif")
    from PIL import Image
    Image.new("RGB", (2, 2)).save(tmp_path / "rgb.png")
    with pytest.raises(ImageFormatError, match="grayscale"):
        read_image(tmp_path / "rgb.png")
