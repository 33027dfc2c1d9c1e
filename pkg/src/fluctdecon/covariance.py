"""Second-order temporal statistics and the squared-blur operator.

A stack of T frames is reduced to its pixelwise temporal mean and its
unbiased sample variance (the auto-covariance image). Under the forward
model, frame variance propagates through the blur as convolution with
the *entrywise squared* kernel plus a flat noise floor:

    var(y) = (K*K) conv var(x) + s

where K*K denotes the Hadamard square of the PSF kernel. `squared_psf_operator`
builds that kernel; `apply`/`apply_adjoint` realize both operators as
zero-padded "same" convolutions, whose adjoint is correlation with the
same kernel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .errors import ConvergenceError, ParameterError
from .imaging import FrameStack, Psf, _freeze, as_image

# Relative slack below which a negative sample variance is attributed to
# floating-point rounding and clamped to zero.
_NEG_VAR_TOL = 1e-12


@dataclass(frozen=True)
class CovarianceImage:
    """Per-pixel temporal sample variance of a stack (all entries >= 0)."""

    image: np.ndarray
    source_T: int

    def __post_init__(self):
        img = as_image(self.image, nonnegative=True, name="covariance image")
        if self.source_T < 2:
            raise ParameterError(f"source_T must be >= 2, got {self.source_T}")
        object.__setattr__(self, "image", img)

    @property
    def shape(self) -> tuple[int, int]:
        return self.image.shape


@dataclass(frozen=True)
class PsfSq:
    """Entrywise square of a PSF kernel, deliberately NOT renormalized."""

    kernel: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.kernel, dtype=np.float64)
        if k.ndim != 2 or k.shape[0] != k.shape[1] or k.shape[0] % 2 == 0:
            raise ParameterError(f"squared kernel must be an odd square grid, got {k.shape}")
        if not np.all(np.isfinite(k)) or k.min() < 0.0:
            raise ParameterError("squared kernel entries must be finite and >= 0")
        object.__setattr__(self, "kernel", _freeze(k))


def temporal_mean(stack: FrameStack) -> np.ndarray:
    """Pixelwise arithmetic mean of the stack, in float64."""
    return as_image(stack.frames.mean(axis=0, dtype=np.float64), name="temporal mean")


def auto_covariance(stack: FrameStack) -> CovarianceImage:
    """Unbiased per-pixel sample variance, computed in one streaming pass.

    Uses Welford's update so large stacks never need a second read; tests
    pin it against a two-pass oracle. Entries that come out negative by
    rounding (within 1e-12 of zero, relatively) are clamped to 0.
    """
    T = stack.T
    mean = np.zeros(stack.frame_shape, dtype=np.float64)
    m2 = np.zeros(stack.frame_shape, dtype=np.float64)
    for t in range(T):
        frame = stack.frames[t].astype(np.float64)
        delta = frame - mean
        mean += delta / (t + 1)
        m2 += delta * (frame - mean)
    var = m2 / (T - 1)
    scale = max(float(np.abs(var).max()), 1.0)
    if var.min() < -_NEG_VAR_TOL * scale:
        raise AssertionError(
            f"sample variance below rounding tolerance: min {var.min():.3e} at scale {scale:.3e}"
        )
    np.maximum(var, 0.0, out=var)
    return CovarianceImage(image=var, source_T=T)


def squared_psf_operator(psf: Psf) -> PsfSq:
    """Hadamard square of the PSF kernel; applying it as a convolution
    equals multiplying by the Hadamard-squared convolution matrix."""
    return PsfSq(kernel=psf.kernel**2)


def _kernel_of(op: Psf | PsfSq | np.ndarray) -> np.ndarray:
    if isinstance(op, (Psf, PsfSq)):
        return op.kernel
    return np.asarray(op, dtype=np.float64)


def apply(op: Psf | PsfSq | np.ndarray, x: np.ndarray) -> np.ndarray:
    """Zero-padded linear convolution cropped back to x's shape."""
    kernel = _kernel_of(op)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ParameterError(f"apply expects a 2-D image, got shape {x.shape}")
    return fftconvolve(x, kernel, mode="same")


def apply_adjoint(op: Psf | PsfSq | np.ndarray, y: np.ndarray) -> np.ndarray:
    """Adjoint of `apply`: correlation with the same kernel (flipped conv)."""
    kernel = _kernel_of(op)
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2:
        raise ParameterError(f"apply_adjoint expects a 2-D image, got shape {y.shape}")
    return fftconvolve(y, kernel[::-1, ::-1], mode="same")


def operator_norm_sq(
    op: Psf | PsfSq | np.ndarray,
    shape: tuple[int, int],
    tol: float = 1e-8,
    max_iters: int = 500,
    seed: int = 0,
) -> float:
    """Largest eigenvalue of A^T A (the squared operator norm of A) by
    power iteration, where A is convolution with the kernel on `shape`.

    Raises ConvergenceError if the eigenvalue estimate does not settle to
    relative change < tol within max_iters.
    """
    kernel = _kernel_of(op)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    x = rng.standard_normal(shape)
    x /= np.linalg.norm(x)
    lam_prev = 0.0
    for _ in range(max_iters):
        y = apply_adjoint(kernel, apply(kernel, x))
        lam = float(np.linalg.norm(y))
        if lam == 0.0:
            return 0.0
        x = y / lam
        if abs(lam - lam_prev) <= tol * lam:
            return lam
        lam_prev = lam
    raise ConvergenceError(
        f"power iteration did not converge in {max_iters} iterations", achieved=abs(lam - lam_prev) / lam
    )
