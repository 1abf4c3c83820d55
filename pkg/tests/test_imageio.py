import numpy as np
import pytest

from reflmm.errors import FormatError
from reflmm.imageio import read_mask_png, read_pfm, write_mask_png, write_pfm, write_preview_png


@pytest.mark.parametrize("shape", [(5, 7), (5, 7, 3)])
def test_pfm_round_trip_is_exact(tmp_path, shape):
    img = np.random.default_rng(0).normal(size=shape).astype(np.float32)
    write_pfm(tmp_path / "a.pfm", img)
    back = read_pfm(tmp_path / "a.pfm")
    assert back.dtype == np.float32
    np.testing.assert_array_equal(back, img)


def test_pfm_layout_is_bottom_to_top(tmp_path):
    img = np.arange(6, dtype=np.float32).reshape(2, 3)
    write_pfm(tmp_path / "a.pfm", img)
    raw = (tmp_path / "a.pfm").read_bytes()
    assert raw.startswith(b"Pf\n3 2\n-1.0\n")
    body = np.frombuffer(raw[len(b"Pf\n3 2\n-1.0\n"):], "<f4")
    np.testing.assert_array_equal(body, [3, 4, 5, 0, 1, 2])


def test_pfm_reads_big_endian(tmp_path):
    img = np.array([[1.5, -2.0]], dtype=np.float32)
    (tmp_path / "b.pfm").write_bytes(b"Pf\n2 1\n1.0\n" + img.astype(">f4").tobytes())
    np.testing.assert_array_equal(read_pfm(tmp_path / "b.pfm"), img)


def test_two_channel_images_are_padded(tmp_path):
    uv = np.random.default_rng(1).random((3, 4, 2)).astype(np.float32)
    write_pfm(tmp_path / "uv.pfm", uv)
    back = read_pfm(tmp_path / "uv.pfm")
    np.testing.assert_array_equal(back[..., :2], uv)
    np.testing.assert_array_equal(back[..., 2], 0)


def test_pfm_errors(tmp_path):
    write_pfm(tmp_path / "a.pfm", np.ones((4, 4, 3)))
    data = (tmp_path / "a.pfm").read_bytes()
    (tmp_path / "t.pfm").write_bytes(data[:-5])
    with pytest.raises(FormatError):
        read_pfm(tmp_path / "t.pfm")
    (tmp_path / "x.pfm").write_bytes(b"P6\n4 4\n255\n" + bytes(48))
    with pytest.raises(FormatError):
        read_pfm(tmp_path / "x.pfm")
    with pytest.raises(FormatError):
        write_pfm(tmp_path / "bad.pfm", np.ones((2, 2, 4)))


def test_mask_png_round_trip(tmp_path):
    mask = np.random.default_rng(2).random((6, 9)) > 0.5
    write_mask_png(tmp_path / "m.png", mask)
    np.testing.assert_array_equal(read_mask_png(tmp_path / "m.png"), mask)
    (tmp_path / "junk.png").write_bytes(b"not a png")
    with pytest.raises(FormatError):
        read_mask_png(tmp_path / "junk.png")


def test_preview_png(tmp_path):
    write_preview_png(tmp_path / "p.png", np.full((2, 2, 3), 2.0))
    from PIL import Image
    assert np.asarray(Image.open(tmp_path / "p.png")).max() == 255
