import numpy as np
import pytest

from seqlab.image import Image, ImageError, decode_pnm, encode_pnm, read_pnm, write_pnm


def test_flat_roundtrip():
    img = Image.from_flat(2, 3, 1, list(range(6)))
    assert img.shape == (2, 3, 1)
    assert img.flat().tolist() == list(range(6))
    assert img.pixels[1, 0, 0] == 3  # row-major


def test_rejects_bad_shapes_and_values():
    with pytest.raises(ImageError):
        Image.from_flat(2, 2, 1, [0, 1, 2])
    with pytest.raises(ImageError):
        Image(np.zeros((2, 2, 2)))
    with pytest.raises(ImageError):
        Image(np.full((2, 2, 1), 256))
    with pytest.raises(ImageError):
        Image(np.full((2, 2, 1), 1.5))


def test_immutable():
    src = np.zeros((2, 2, 1), dtype=np.uint8)
    img = Image(src)
    src[0, 0, 0] = 9
    assert img.pixels[0, 0, 0] == 0
    with pytest.raises(ValueError):
        img.pixels[0, 0, 0] = 1
    with pytest.raises(AttributeError):
        img.pixels = src


@pytest.mark.parametrize("c", [1, 3])
def test_pnm_roundtrip(tmp_path, c):
    img = Image(np.random.default_rng(c).integers(0, 256, (5, 7, c), dtype=np.uint8))
    path = tmp_path / "x.pnm"
    write_pnm(path, img)
    assert path.read_bytes()[:2] == (b"P5" if c == 1 else b"P6")
    assert read_pnm(path) == img


def test_pnm_header_comments():
    data = b"P5\n# made by hand\n2 1\n# max\n255\n\x01\x02"
    img = decode_pnm(data)
    assert img.shape == (1, 2, 1) and img.flat().tolist() == [1, 2]


@pytest.mark.parametrize(
    "data",
    [b"P3\n1 1\n255\n0", b"P5\n2 2\n255\n\x00", b"P5\n1 1\n65535\n\x00\x00", b"P5\n1 x\n255\n\x00"],
)
def test_pnm_errors(data):
    with pytest.raises(ImageError):
        decode_pnm(data)


def test_encode_is_canonical():
    img = Image(np.zeros((1, 1, 3), dtype=np.uint8))
    assert encode_pnm(img) == b"P6\n1 1\n255\n\x00\x00\x00"
