"""
Frame, flow and mask file I/O.

Images are PNG, PGM or PPM and come back as ImageFrame values in [0,1].
Flow fields use the Middlebury `.flo` layout: float32 magic 202021.25,
int32 width and height, then row-major interleaved (u, v) float32 samples,
everything little-endian. Every write goes through utils.atomic_write.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from PIL import Image, UnidentifiedImageError

from .utils import (
    BadMagic,
    CorruptHeader,
    IoFailure,
    SizeMismatch,
    UnsupportedFormat,
    atomic_write,
    require_file,
)

if TYPE_CHECKING:
    from .fields import FlowField

# --- Logging setup ---
logger = logging.getLogger(__name__)

FLO_MAGIC = np.float32(202021.25)

IMAGE_SUFFIXES = {'.png': 'PNG', '.pgm': 'PPM', '.ppm': 'PPM'}
PIL_FORMATS = {'PNG', 'PPM'}


@dataclass(frozen=True, eq=False)
class ImageFrame:
    """
    A single frame: `data` is a (height, width, channels) float32 array in [0,1]
    with 1 or 3 channels.
    """
    data: np.ndarray

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise ValueError(f"ImageFrame needs 1 or 3 channels, got shape {data.shape}")
        if not np.all(np.isfinite(data)) or data.min(initial=0.0) < 0.0 or data.max(initial=0.0) > 1.0:
            raise ValueError("ImageFrame values must be finite and within [0,1]")
        object.__setattr__(self, 'data', data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple:
        return self.data.shape[:2]

    @classmethod
    def from_array(cls, array: np.ndarray) -> 'ImageFrame':
        """Build a frame from any real array, clipping into [0,1]"""
        return cls(np.clip(np.asarray(array, dtype=np.float64), 0.0, 1.0))


# =============================================================================
# IMAGES
# =============================================================================

def read_image(path: str) -> ImageFrame:
    """
    Read a PNG, PGM or PPM file

    Args:
        path: Image file

    Returns:
        ImageFrame: 8-bit samples divided by 255, 16-bit samples by 65535

    Raises:
        MissingFile, UnsupportedFormat, CorruptHeader
    """
    require_file(path)
    suffix = os.path.splitext(path)[1].lower()
    try:
        with Image.open(path) as img:
            if img.format not in PIL_FORMATS:
                raise UnsupportedFormat(f"Unsupported image format {img.format}", path=path)
            img.load()
            mode = img.mode
            array = np.asarray(img)
    except UnidentifiedImageError as e:
        if suffix in IMAGE_SUFFIXES:
            raise CorruptHeader('Unreadable image header', path=path) from e
        raise UnsupportedFormat('Unsupported image format', path=path) from e
    except (OSError, SyntaxError, ValueError) as e:
        raise CorruptHeader(f"Corrupt image data: {e}", path=path) from e

    if mode in ('I;16', 'I;16B', 'I;16L', 'I') or array.dtype == np.uint16:
        scale = 65535.0
    elif array.dtype == np.uint8 or mode in ('L', 'RGB', 'P', 'RGBA', 'LA', '1'):
        scale = 255.0
    else:
        raise UnsupportedFormat(f"Unsupported pixel mode {mode}", path=path)

    if mode == '1':
        array = array.astype(np.uint8) * 255
    elif mode == 'P':
        with Image.open(path) as img:
            array = np.asarray(img.convert('RGB'))
    if array.ndim == 3 and array.shape[2] in (2, 4):
        # drop alpha
        array = array[:, :, :-1] if array.shape[2] == 4 else array[:, :, :1]

    data = array.astype(np.float64) / scale
    logger.debug("Read %s (%dx%d, mode %s)", path, data.shape[1], data.shape[0], mode)
    return ImageFrame(data)


def _to_uint8(frame: ImageFrame) -> np.ndarray:
    array = np.rint(frame.data.astype(np.float64) * 255.0).astype(np.uint8)
    return array[:, :, 0] if frame.channels == 1 else array


def write_image(frame: ImageFrame, path: str) -> None:
    """
    Write a frame as 8-bit PNG, PGM or PPM (chosen by suffix)

    Args:
        frame: Frame to write
        path: Destination; `.png`, `.pgm` or `.ppm`

    Raises:
        UnsupportedFormat: Unknown suffix, or a colour frame sent to `.pgm`
        IoFailure: Destination not writable
    """
    suffix = os.path.splitext(path)[1].lower()
    if suffix not in IMAGE_SUFFIXES:
        raise UnsupportedFormat(f"Cannot write {suffix or 'suffix-less'} images", path=path)
    if suffix == '.pgm' and frame.channels != 1:
        raise UnsupportedFormat('PGM holds grayscale frames only', path=path)

    img = Image.fromarray(_to_uint8(frame))
    with atomic_write(path) as tmp:
        try:
            img.save(tmp, format=IMAGE_SUFFIXES[suffix])
        except OSError as e:
            raise IoFailure(f"Cannot write: {e}", path=path) from e
    logger.debug("Wrote %s", path)


def write_mask(labels: np.ndarray, path: str) -> None:
    """
    Write binary labels as an 8-bit grayscale PNG with values {0, 255}
    """
    img = Image.fromarray(np.where(np.asarray(labels) > 0, 255, 0).astype(np.uint8))
    with atomic_write(path) as tmp:
        img.save(tmp, format='PNG')


def read_mask(path: str) -> np.ndarray:
    """
    Read a mask PNG; any nonzero sample is foreground

    Returns:
        np.ndarray: uint8 labels in {0, 1}
    """
    frame = read_image(path)
    return (frame.data[:, :, 0] > 0.5).astype(np.uint8)


# =============================================================================
# FLOW FILES
# =============================================================================

def read_flo(path: str) -> 'FlowField':
    """
    Read a Middlebury `.flo` file

    Raises:
        MissingFile, BadMagic, SizeMismatch
    """
    from .fields import FlowField

    require_file(path)
    with open(path, 'rb') as f:
        raw = f.read()

    if len(raw) < 12:
        raise BadMagic('File too short for a .flo header', path=path)
    magic = np.frombuffer(raw, dtype='<f4', count=1)[0]
    if magic != FLO_MAGIC:
        raise BadMagic(f"Magic number {magic!r} != 202021.25", path=path)

    width, height = (int(x) for x in np.frombuffer(raw, dtype='<i4', count=2, offset=4))
    if width <= 0 or height <= 0:
        raise SizeMismatch(f"Invalid dimensions {width}x{height}", path=path)
    expected = 8 * width * height
    if len(raw) - 12 != expected:
        raise SizeMismatch(
            f"Header declares {width}x{height} ({expected} bytes), payload has {len(raw) - 12}",
            path=path)

    samples = np.frombuffer(raw, dtype='<f4', offset=12).reshape(height, width, 2)
    return FlowField(samples[:, :, 0].astype(np.float64), samples[:, :, 1].astype(np.float64))


def write_flo(flow: 'FlowField', path: str) -> None:
    """
    Write a flow field as a Middlebury `.flo` file

    Raises:
        IoFailure: Destination not writable
    """
    height, width = flow.shape
    header = np.array([FLO_MAGIC], dtype='<f4').tobytes() + np.array([width, height], dtype='<i4').tobytes()
    payload = np.stack([flow.u, flow.v], axis=-1).astype('<f4').tobytes()
    with atomic_write(path) as tmp:
        with open(tmp, 'wb') as f:
            f.write(header)
            f.write(payload)
    logger.debug("Wrote %s (%dx%d)", path, width, height)
