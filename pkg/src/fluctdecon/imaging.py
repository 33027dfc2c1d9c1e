"""Core value types: images, acquisition stacks, PSFs, and emitter sets.

Images are plain 2-D numpy arrays; `as_image` is the single validation
gate every public operation routes through. The dataclasses below bundle
pixel data with the physical metadata (pixel pitch, FWHM, field size)
the rest of the pipeline needs. All types are immutable after
construction: array fields are marked read-only, so instances can be
shared freely across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

# FWHM of a Gaussian = 2*sqrt(2*ln 2) * sigma
FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))


def as_image(pixels, *, nonnegative: bool = False, name: str = "image") -> np.ndarray:
    """Validate and normalize a 2-D pixel grid to a read-only float64 array.

    Rejects non-2-D input and any NaN/Inf entry. With ``nonnegative=True``
    also rejects negative entries.
    """
    arr = np.asarray(pixels, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ParameterError(f"{name} must be a non-empty 2-D grid, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ParameterError(f"{name} contains NaN or Inf entries")
    if nonnegative and arr.min() < 0.0:
        raise ParameterError(f"{name} must be elementwise >= 0 (min {arr.min():.3e})")
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class FrameStack:
    """A temporal acquisition stack: T frames of one n x n (or h x w) grid.

    Frames are stored as float32, the camera/file precision; statistics
    are accumulated in float64 downstream. ``fwhm_nm`` records the PSF
    width the stack was acquired (or simulated) with; NaN means unknown.
    """

    frames: np.ndarray  # (T, h, w) float32
    pixel_size_nm: float
    fwhm_nm: float = float("nan")

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float32)
        if frames.ndim != 3:
            raise ParameterError(f"frames must be (T, h, w), got shape {frames.shape}")
        if frames.shape[0] < 2:
            raise ParameterError("a stack needs T >= 2 frames (auto-covariance divides by T-1)")
        if not np.all(np.isfinite(frames)):
            raise ParameterError("stack contains NaN or Inf entries")
        if not (self.pixel_size_nm > 0):
            raise ParameterError(f"pixel_size_nm must be > 0, got {self.pixel_size_nm}")
        object.__setattr__(self, "frames", _freeze(frames))

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def frame_shape(self) -> tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]


@dataclass(frozen=True)
class Psf:
    """A normalized, centrally symmetric blur kernel on an odd square grid.

    Entries are >= 0 and sum to 1 within 1e-12. Symmetry under both axis
    flips and transposition is required exactly, which the Gaussian
    sampling in `psf_from_fwhm` guarantees bit-for-bit.
    """

    kernel: np.ndarray
    fwhm_nm: float
    pixel_size_nm: float

    def __post_init__(self):
        k = np.asarray(self.kernel, dtype=np.float64)
        if k.ndim != 2 or k.shape[0] != k.shape[1] or k.shape[0] % 2 == 0:
            raise ParameterError(f"PSF kernel must be an odd square grid, got shape {k.shape}")
        if not np.all(np.isfinite(k)):
            raise ParameterError("PSF kernel contains NaN or Inf")
        if k.min() < 0.0:
            raise ParameterError("PSF kernel entries must be >= 0")
        if abs(k.sum() - 1.0) > 1e-12:
            raise ParameterError(f"PSF kernel must sum to 1 within 1e-12, got {k.sum()!r}")
        if not (
            np.array_equal(k, k[::-1, :])
            and np.array_equal(k, k[:, ::-1])
            and np.array_equal(k, k.T)
        ):
            raise ParameterError("PSF kernel must be centrally symmetric")
        if not (self.fwhm_nm > 0 and self.pixel_size_nm > 0):
            raise ParameterError("fwhm_nm and pixel_size_nm must be > 0")
        object.__setattr__(self, "kernel", _freeze(k))

    @property
    def sigma_px(self) -> float:
        return self.fwhm_nm / FWHM_PER_SIGMA / self.pixel_size_nm

    @property
    def radius_px(self) -> int:
        return self.kernel.shape[0] // 2


@dataclass(frozen=True)
class EmitterSet:
    """Continuous emitter coordinates inside a square field.

    ``positions`` is (N, 2) with columns (x_nm, y_nm); x maps to the
    image column axis and y to the row axis. An empty set is allowed
    (pure-noise scenes).
    """

    positions: np.ndarray
    field_size_nm: float

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 2)
        if not np.all(np.isfinite(pos)):
            raise ParameterError("emitter positions contain NaN or Inf")
        if not (self.field_size_nm > 0):
            raise ParameterError(f"field_size_nm must be > 0, got {self.field_size_nm}")
        if pos.size and (pos.min() < 0.0 or pos.max() >= self.field_size_nm):
            raise ParameterError("all emitter positions must lie inside [0, field_size_nm)")
        object.__setattr__(self, "positions", _freeze(pos))

    def __len__(self) -> int:
        return self.positions.shape[0]


def psf_from_fwhm(fwhm_nm: float, pixel_size_nm: float, radius_px: int | None = None) -> Psf:
    """Sample an isotropic Gaussian PSF at pixel centers and normalize it.

    The Gaussian standard deviation is fwhm / (2*sqrt(2 ln 2)) converted
    to pixels. ``radius_px`` defaults to ceil(4*sigma_px), which truncates
    less than 1e-4 of the mass.
    """
    if not (fwhm_nm > 0):
        raise ParameterError(f"fwhm_nm must be > 0, got {fwhm_nm}")
    if not (pixel_size_nm > 0):
        raise ParameterError(f"pixel_size_nm must be > 0, got {pixel_size_nm}")
    sigma_px = fwhm_nm / FWHM_PER_SIGMA / pixel_size_nm
    if radius_px is None:
        radius_px = max(1, math.ceil(4.0 * sigma_px))
    if radius_px < 1:
        raise ParameterError(f"radius_px must be >= 1, got {radius_px}")

    offsets = np.arange(-radius_px, radius_px + 1, dtype=np.float64)
    # exp of identical doubles for mirrored offsets keeps the kernel
    # exactly flip- and transpose-symmetric.
    g = np.exp(-(offsets**2) / (2.0 * sigma_px**2))
    kernel = np.outer(g, g)
    kernel /= kernel.sum()
    return Psf(kernel=kernel, fwhm_nm=float(fwhm_nm), pixel_size_nm=float(pixel_size_nm))
