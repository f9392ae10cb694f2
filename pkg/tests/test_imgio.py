import os

import numpy as np
import pytest
from PIL import Image

from smokeflow.fields import FlowField
from smokeflow.imgio import (
    ImageFrame,
    read_flo,
    read_image,
    read_mask,
    write_flo,
    write_image,
    write_mask,
)
from smokeflow.utils import (
    BadMagic,
    CorruptHeader,
    IoFailure,
    MissingFile,
    SizeMismatch,
    UnsupportedFormat,
)


def test_read_pgm_maps_bytes_to_unit_range(tmp_path):
    path = tmp_path / 'tiny.pgm'
    path.write_bytes(b'P5\n2 2\n255\n' + bytes([0, 255, 128, 64]))
    frame = read_image(str(path))
    assert frame.channels == 1
    expected = np.array([[0.0, 1.0], [128 / 255, 64 / 255]], dtype=np.float32)
    np.testing.assert_array_equal(frame.data[:, :, 0], expected)


def test_read_ppm_white_pixel(tmp_path):
    path = tmp_path / 'white.ppm'
    path.write_bytes(b'P6\n1 1\n255\n' + bytes([255, 255, 255]))
    frame = read_image(str(path))
    assert frame.data.shape == (1, 1, 3)
    assert np.all(frame.data == 1.0)


def test_read_sixteen_bit_png(tmp_path):
    path = tmp_path / 'deep.png'
    Image.fromarray(np.array([[0, 65535], [32768, 1000]], dtype=np.uint16)).save(path)
    frame = read_image(str(path))
    np.testing.assert_allclose(frame.data[:, :, 0], np.array([[0, 1], [32768 / 65535, 1000 / 65535]]), atol=1e-7)


def test_truncated_png_is_corrupt(tmp_path, rng):
    path = tmp_path / 'cut.png'
    Image.fromarray(rng.integers(0, 256, (64, 64, 3), dtype=np.uint8)).save(path)
    raw = path.read_bytes()
    path.write_bytes(raw[:len(raw) // 2])
    with pytest.raises(CorruptHeader) as err:
        read_image(str(path))
    assert str(path) in str(err.value)


def test_missing_and_unsupported(tmp_path):
    with pytest.raises(MissingFile):
        read_image(str(tmp_path / 'nope.png'))
    text = tmp_path / 'notes.txt'
    text.write_text('not an image')
    with pytest.raises(UnsupportedFormat):
        read_image(str(text))


def test_write_zero_frame_round_trip(tmp_path):
    path = str(tmp_path / 'zero.png')
    write_image(ImageFrame(np.zeros((4, 4))), path)
    assert np.all(read_image(path).data == 0.0)


@pytest.mark.parametrize('suffix', ['.png', '.ppm'])
def test_rgb_round_trip_within_quantization(tmp_path, rng, suffix):
    frame = ImageFrame(rng.random((8, 8, 3)))
    path = str(tmp_path / ('rgb' + suffix))
    write_image(frame, path)
    back = read_image(path)
    assert back.data.shape == (8, 8, 3)
    assert np.max(np.abs(back.data - frame.data)) <= 1 / 255


def test_write_pgm_rejects_colour(tmp_path):
    with pytest.raises(UnsupportedFormat):
        write_image(ImageFrame(np.zeros((4, 4, 3))), str(tmp_path / 'c.pgm'))


def test_unwritable_destination(tmp_path):
    with pytest.raises(IoFailure):
        write_image(ImageFrame(np.zeros((4, 4))), str(tmp_path / 'missing-dir' / 'a.png'))


def test_write_leaves_no_temporary_files(tmp_path):
    write_image(ImageFrame(np.zeros((4, 4))), str(tmp_path / 'a.png'))
    assert os.listdir(tmp_path) == ['a.png']


def test_written_files_get_default_permissions(tmp_path):
    mask = os.umask(0)
    os.umask(mask)
    path = tmp_path / 'a.png'
    write_image(ImageFrame(np.zeros((4, 4))), str(path))
    assert os.stat(path).st_mode & 0o777 == 0o666 & ~mask


def test_frame_rejects_out_of_range():
    with pytest.raises(ValueError):
        ImageFrame(np.full((2, 2), 1.5))
    with pytest.raises(ValueError):
        ImageFrame(np.full((2, 2), np.nan))


def test_mask_round_trip(tmp_path):
    labels = np.array([[0, 1], [1, 0]], dtype=np.uint8)
    path = str(tmp_path / 'm.png')
    write_mask(labels, path)
    raw = np.asarray(Image.open(path))
    assert set(np.unique(raw)) == {0, 255}
    np.testing.assert_array_equal(read_mask(path), labels)


def test_flo_single_pixel_layout(tmp_path):
    path = str(tmp_path / 'one.flo')
    write_flo(FlowField(np.array([[3.0]]), np.array([[-4.0]])), path)
    raw = open(path, 'rb').read()
    assert len(raw) == 20
    assert np.frombuffer(raw[:4], '<f4')[0] == np.float32(202021.25)
    assert tuple(np.frombuffer(raw[4:12], '<i4')) == (1, 1)
    flow = read_flo(path)
    assert flow.u[0, 0] == 3.0 and flow.v[0, 0] == -4.0


def test_flo_zero_payload(tmp_path):
    path = str(tmp_path / 'zero.flo')
    write_flo(FlowField.zeros((3, 5)), path)
    raw = open(path, 'rb').read()
    assert len(raw) - 12 == 8 * 3 * 5
    assert raw[12:] == bytes(8 * 15)


def test_flo_round_trip_is_exact_for_float32_values(tmp_path, rng):
    u = rng.normal(size=(6, 7)).astype(np.float32)
    v = rng.normal(size=(6, 7)).astype(np.float32)
    path = str(tmp_path / 'r.flo')
    write_flo(FlowField(u, v), path)
    flow = read_flo(path)
    np.testing.assert_array_equal(flow.u, u)
    np.testing.assert_array_equal(flow.v, v)


def test_flo_bad_magic(tmp_path):
    path = tmp_path / 'bad.flo'
    path.write_bytes(np.array([202021.24], '<f4').tobytes() + np.array([1, 1], '<i4').tobytes() + bytes(8))
    with pytest.raises(BadMagic):
        read_flo(str(path))


def test_flo_size_mismatch(tmp_path):
    path = tmp_path / 'short.flo'
    path.write_bytes(np.array([202021.25], '<f4').tobytes() + np.array([2, 2], '<i4').tobytes() + bytes(8))
    with pytest.raises(SizeMismatch):
        read_flo(str(path))
