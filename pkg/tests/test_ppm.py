"""P6 file round-trips, a hand-built golden file, and malformed inputs."""
import numpy as np
import pytest

from sketchfill.ppm import ImageFormatError, read_image, write_image


def test_roundtrip_within_quantization(tmp_path, rng):
    img = rng.random((3, 9, 7))
    path = tmp_path / "x.ppm"
    write_image(path, img)
    back = read_image(path)
    assert back.shape == img.shape
    assert np.abs(back - img).max() <= 1.0 / 255.0


def test_golden_two_by_two(tmp_path):
    # red, green / blue, white with a comment in the header
    payload = bytes([255, 0, 0, 0, 255, 0, 0, 0, 255, 255, 255, 255])
    blob = b"P6\n# test pattern\n2 2\n255\n" + payload
    path = tmp_path / "golden.ppm"
    path.write_bytes(blob)
    img = read_image(path)
    assert img.shape == (3, 2, 2)
    assert np.array_equal(img[:, 0, 0], [1.0, 0.0, 0.0])
    assert np.array_equal(img[:, 0, 1], [0.0, 1.0, 0.0])
    assert np.array_equal(img[:, 1, 0], [0.0, 0.0, 1.0])
    assert np.array_equal(img[:, 1, 1], [1.0, 1.0, 1.0])


def test_write_then_read_exact_for_quantized(tmp_path):
    img = np.arange(12).reshape(3, 2, 2) / 255.0
    path = tmp_path / "q.ppm"
    write_image(path, img)
    assert np.array_equal(read_image(path), img)


def test_non_image_bytes_error(tmp_path):
    path = tmp_path / "junk.ppm"
    path.write_bytes(b"\x00\x01\x02 not an image at all")
    with pytest.raises(ImageFormatError):
        read_image(path)


def test_truncated_pixels_error(tmp_path):
    path = tmp_path / "short.ppm"
    path.write_bytes(b"P6\n4 4\n255\n" + b"\x00" * 10)
    with pytest.raises(ImageFormatError, match="truncated"):
        read_image(path)


def test_wrong_depth_error(tmp_path):
    path = tmp_path / "deep.ppm"
    path.write_bytes(b"P6\n1 1\n65535\n" + b"\x00" * 6)
    with pytest.raises(ImageFormatError, match="depth"):
        read_image(path)


def test_unsupported_extension(tmp_path, rng):
    with pytest.raises(ImageFormatError, match="unsupported"):
        write_image(tmp_path / "x.bmp", rng.random((3, 2, 2)))
    with pytest.raises(ImageFormatError, match="unsupported"):
        read_image(tmp_path / "x.bmp")


def test_bad_shape_rejected(tmp_path):
    with pytest.raises(ImageFormatError):
        write_image(tmp_path / "x.ppm", np.zeros((1, 4, 4)))
