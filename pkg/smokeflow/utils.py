"""
Smokeflow Utilities
Consolidated utilities for configuration, errors, logging, and atomic file output
"""

import logging
import os
import tempfile
from contextlib import contextmanager
from typing import Iterator, Optional

import numpy as np

# =============================================================================
# CONFIGURATION
# =============================================================================

# Verbosity only; everything semantic lives in RunConfig
LOG_LEVEL = os.environ.get('SMOKEFLOW_LOG_LEVEL', 'INFO')
LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'

# Intensities are held in [0,1]; derivatives are taken on this scale
INTENSITY_SCALE = 255.0

# Minimum frame edge accepted by the solver, the pyramid and level-set init
MIN_SIZE = 8

# Process umask, read once; written files get the mode open() would give them
_UMASK = os.umask(0)
os.umask(_UMASK)
FILE_MODE = 0o666 & ~_UMASK

# --- Logging setup ---
logger = logging.getLogger(__name__)


# =============================================================================
# ERRORS
# =============================================================================

class SmokeflowError(Exception):
    """
    Base error for the package

    Args:
        message: Human readable description
        path: Offending file path, if any
        key: Offending configuration key, if any
    """
    exit_code = 2

    def __init__(self, message: str, path: Optional[str] = None, key: Optional[str] = None):
        self.path = str(path) if path is not None else None
        self.key = key
        if self.path:
            message = f"{message} ({self.path})"
        if key:
            message = f"{key}: {message}"
        super().__init__(message)

    @property
    def name(self) -> str:
        return type(self).__name__


class InputError(SmokeflowError):
    """Errors caused by the caller's inputs or configuration"""
    exit_code = 1


class ConfigError(InputError):
    pass


class PreconditionError(InputError):
    pass


class MissingFile(InputError):
    pass


class UnsupportedFormat(InputError):
    pass


class CorruptHeader(InputError):
    pass


class BadMagic(InputError):
    pass


class SizeMismatch(InputError):
    pass


class IoFailure(SmokeflowError):
    pass


class DegenerateSize(SmokeflowError):
    pass


class OrderOutOfRange(SmokeflowError):
    pass


class NonFiniteInput(SmokeflowError):
    pass


class NonFiniteDivergence(SmokeflowError):
    """Raised when a solver field stops being finite"""

    def __init__(self, message: str, iteration: int):
        self.iteration = iteration
        super().__init__(f"{message} at iteration {iteration}")


class TooFewPixels(SmokeflowError):
    pass


class DegenerateMixture(SmokeflowError):
    pass


class NotColor(SmokeflowError):
    pass


class EmptyMask(SmokeflowError):
    pass


class NoValidGradients(SmokeflowError):
    pass


class TooSmall(SmokeflowError):
    pass


# =============================================================================
# LOGGING
# =============================================================================

def configure_logging(level: Optional[str] = None) -> None:
    """
    Install a single stream handler on the package logger

    Args:
        level: Level name; defaults to SMOKEFLOW_LOG_LEVEL
    """
    root = logging.getLogger('smokeflow')
    root.setLevel((level or LOG_LEVEL).upper())
    if not any(getattr(h, '_smokeflow', False) for h in root.handlers):
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handler._smokeflow = True
        root.addHandler(handler)


# =============================================================================
# FILE UTILITIES
# =============================================================================

@contextmanager
def atomic_write(path: str) -> Iterator[str]:
    """
    Yield a temporary path next to `path`; move it into place on success

    Args:
        path: Final destination

    Raises:
        IoFailure: If the temporary file cannot be created or moved
    """
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    suffix = os.path.splitext(path)[1]
    try:
        fd, tmp = tempfile.mkstemp(prefix='.tmp-', suffix=suffix, dir=directory)
        os.close(fd)
    except OSError as e:
        raise IoFailure(f"Cannot write: {e.strerror or e}", path=path) from e

    try:
        yield tmp
        os.chmod(tmp, FILE_MODE)
        os.replace(tmp, path)
    except OSError as e:
        raise IoFailure(f"Cannot write: {e.strerror or e}", path=path) from e
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def require_file(path: str) -> str:
    """
    Check that an input file exists

    Returns:
        str: The path, unchanged

    Raises:
        MissingFile: If nothing is found at `path`
    """
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise MissingFile('File not found', path=path)
    return path


# =============================================================================
# VALIDATION UTILITIES
# =============================================================================

def require_finite(name: str, *arrays: np.ndarray) -> None:
    """
    Raise NonFiniteInput if any array holds NaN or infinity
    """
    for array in arrays:
        if not np.all(np.isfinite(array)):
            raise NonFiniteInput(f"{name} contains non-finite values")


def require_same_shape(name: str, *arrays: np.ndarray) -> None:
    """
    Raise SizeMismatch unless all arrays share their leading (height, width)
    """
    shapes = {tuple(np.shape(a)[:2]) for a in arrays}
    if len(shapes) > 1:
        raise SizeMismatch(f"{name}: sizes differ {sorted(shapes)}")
