"""Synthetic fluctuating-emitter acquisitions.

The forward model per frame is

    y_t = blur(x_t) + background + noise_t,

where x_t bins the instantaneous emitter brightness onto the pixel grid,
blur is zero-padded convolution with the PSF, and noise_t is i.i.d.
Gaussian with variance `noise_variance_s`. Emitters blink as independent
two-state Markov chains started from the stationary distribution, so the
temporal statistics are transient-free from frame one.

All randomness flows through numpy's counter-based Philox generator via
`SeedSequence`, with one spawned child stream per emitter: chains of
distinct emitters are statistically independent by construction, and a
given (seed, parameters) pair reproduces stacks bit-identically on one
platform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .covariance import apply
from .errors import FluctDeconError, ParameterError
from .imaging import EmitterSet, FrameStack, Psf, as_image

# Fraction of the field kept emitter-free on each side.
FIELD_MARGIN = 0.05


@dataclass(frozen=True)
class BlinkingParams:
    """Two-state (on/off) Markov blinking model.

    Per-frame switch probabilities, mean emission when on, and a uniform
    multiplicative brightness jitter of +- photon_jitter_fraction.
    """

    rate_on_per_frame: float = 0.15
    rate_off_per_frame: float = 0.35
    mean_photons_on: float = 300.0
    photon_jitter_fraction: float = 0.2

    def __post_init__(self):
        for name in ("rate_on_per_frame", "rate_off_per_frame"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ParameterError(f"{name} must lie in [0, 1], got {v}")
        if not (self.mean_photons_on > 0):
            raise ParameterError(f"mean_photons_on must be > 0, got {self.mean_photons_on}")
        if not (0.0 <= self.photon_jitter_fraction < 1.0):
            raise ParameterError(
                f"photon_jitter_fraction must lie in [0, 1), got {self.photon_jitter_fraction}"
            )

    @property
    def stationary_on_fraction(self) -> float:
        total = self.rate_on_per_frame + self.rate_off_per_frame
        return self.rate_on_per_frame / total if total > 0 else 0.5


@dataclass(frozen=True)
class AcquisitionParams:
    """Camera-side parameters: frame count, background, noise, and seed.

    background_level is either a constant or a full background image of
    the acquisition shape.
    """

    T: int = 500
    background_level: float | np.ndarray = 0.0
    noise_variance_s: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.T < 2:
            raise ParameterError(f"T must be >= 2, got {self.T}")
        if not (self.noise_variance_s >= 0):
            raise ParameterError(f"noise_variance_s must be >= 0, got {self.noise_variance_s}")
        if np.ndim(self.background_level) == 0:
            if not (float(self.background_level) >= 0):
                raise ParameterError("constant background must be >= 0")
        else:
            object.__setattr__(
                self,
                "background_level",
                as_image(self.background_level, nonnegative=True, name="background"),
            )


def _philox(seed) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def generate_filament_pattern(
    seed: int,
    field_size_nm: float,
    n_filaments: int,
    emitters_per_filament: int,
) -> EmitterSet:
    """Place emitters along smooth random curves inside a margin-inset field.

    Each filament is a quadratic Bezier through three random control
    points, resampled at approximately equal arc length, which keeps
    consecutive emitters at sub-pixel spacing for the densities used in
    practice. The Bezier hull property confines every sample to the
    margin-inset box.
    """
    if n_filaments < 1 or emitters_per_filament < 1:
        raise ParameterError("n_filaments and emitters_per_filament must be >= 1")
    if not (field_size_nm > 0):
        raise ParameterError(f"field_size_nm must be > 0, got {field_size_nm}")

    rng = _philox(seed)
    lo = FIELD_MARGIN * field_size_nm
    hi = (1.0 - FIELD_MARGIN) * field_size_nm
    positions = []
    t_fine = np.linspace(0.0, 1.0, 512)
    for _ in range(n_filaments):
        control = rng.uniform(lo, hi, size=(3, 2))
        curve = (
            np.outer((1 - t_fine) ** 2, control[0])
            + np.outer(2 * t_fine * (1 - t_fine), control[1])
            + np.outer(t_fine**2, control[2])
        )
        seg = np.linalg.norm(np.diff(curve, axis=0), axis=1)
        arc = np.concatenate([[0.0], np.cumsum(seg)])
        if arc[-1] == 0.0:  # degenerate all-coincident control points
            samples = np.repeat(curve[:1], emitters_per_filament, axis=0)
        else:
            targets = np.linspace(0.0, arc[-1], emitters_per_filament)
            samples = np.stack(
                [np.interp(targets, arc, curve[:, 0]), np.interp(targets, arc, curve[:, 1])],
                axis=1,
            )
        positions.append(samples)
    return EmitterSet(positions=np.concatenate(positions, axis=0), field_size_nm=field_size_nm)


def simulate_blinking(
    emitters: EmitterSet,
    params: BlinkingParams,
    T: int,
    seed: int,
) -> np.ndarray:
    """Brightness time series, one independent on/off chain per emitter.

    Returns an (n_emitters, T) array: mean_photons_on * (1 + jitter) when
    the chain is on, 0 when off. Initial states are drawn from the
    stationary distribution. Each emitter consumes its own spawned
    substream, in the fixed order (initial state, T transition uniforms,
    T jitter uniforms).
    """
    if T < 2:
        raise ParameterError(f"T must be >= 2, got {T}")
    n = len(emitters)
    if n == 0:
        return np.zeros((0, T), dtype=np.float64)

    children = np.random.SeedSequence(seed).spawn(n)
    u_init = np.empty(n)
    u_trans = np.empty((n, T))
    jitter = np.empty((n, T))
    f = params.photon_jitter_fraction
    for e, child in enumerate(children):
        rng = np.random.Generator(np.random.Philox(child))
        u_init[e] = rng.random()
        u_trans[e] = rng.random(T)
        jitter[e] = rng.uniform(-f, f, T) if f > 0 else 0.0

    on = u_init < params.stationary_on_fraction
    states = np.empty((n, T), dtype=bool)
    states[:, 0] = on
    for t in range(1, T):
        turn_off = on & (u_trans[:, t] < params.rate_off_per_frame)
        turn_on = ~on & (u_trans[:, t] < params.rate_on_per_frame)
        on = (on & ~turn_off) | turn_on
        states[:, t] = on

    series = np.where(states, params.mean_photons_on * (1.0 + jitter), 0.0)
    return series


def raised_cosine_background(
    image_size_px: int,
    amplitude: float,
    center_frac: tuple[float, float] = (0.5, 0.5),
    radius_frac: float = 0.5,
) -> np.ndarray:
    """Smooth nonnegative bump for exercising the background-smoothness term."""
    if not (amplitude >= 0 and radius_frac > 0):
        raise ParameterError("amplitude must be >= 0 and radius_frac > 0")
    n = image_size_px
    rr, cc = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    r0, c0 = center_frac[0] * n, center_frac[1] * n
    dist = np.sqrt((rr - r0) ** 2 + (cc - c0) ** 2) / (radius_frac * n)
    return np.where(dist < 1.0, 0.5 * amplitude * (1.0 + np.cos(np.pi * dist)), 0.0)


def render_stack(
    emitters: EmitterSet,
    series: np.ndarray,
    psf: Psf,
    acq: AcquisitionParams,
    image_size_px: int,
) -> tuple[FrameStack, np.ndarray, np.ndarray]:
    """Render the acquisition stack plus ground truth.

    Bins each emitter's brightness into its containing pixel (row = y,
    col = x), blurs with the PSF, adds background and Gaussian noise of
    variance noise_variance_s. Returns (stack, mean_truth, support_mask):
    mean_truth is the temporal mean of the unblurred x_t and support_mask
    flags every pixel that received an emitter.
    """
    series = np.asarray(series, dtype=np.float64)
    n_emitters = len(emitters)
    if series.shape != (n_emitters, acq.T):
        raise ParameterError(
            f"series shape {series.shape} does not match ({n_emitters}, {acq.T})"
        )
    if image_size_px < 1:
        raise ParameterError(f"image_size_px must be >= 1, got {image_size_px}")
    n = image_size_px
    pixel = psf.pixel_size_nm

    if n_emitters:
        cols = np.floor(emitters.positions[:, 0] / pixel).astype(np.int64)
        rows = np.floor(emitters.positions[:, 1] / pixel).astype(np.int64)
        if cols.min() < 0 or rows.min() < 0 or cols.max() >= n or rows.max() >= n:
            raise FluctDeconError(
                "emitter binned outside the image grid; the pattern margin should prevent this"
            )
    else:
        cols = rows = np.zeros(0, dtype=np.int64)

    x_stack = np.zeros((acq.T, n, n), dtype=np.float64)
    for e in range(n_emitters):
        x_stack[:, rows[e], cols[e]] += series[e]

    background = acq.background_level
    if np.ndim(background) == 2 and background.shape != (n, n):
        raise ParameterError(
            f"background shape {background.shape} does not match image ({n}, {n})"
        )

    rng = _philox(acq.seed)
    sigma_noise = float(np.sqrt(acq.noise_variance_s))
    frames = np.empty((acq.T, n, n), dtype=np.float32)
    for t in range(acq.T):
        y = apply(psf, x_stack[t]) + background
        if sigma_noise > 0:
            y = y + sigma_noise * rng.standard_normal((n, n))
        frames[t] = y.astype(np.float32)

    mean_truth = x_stack.mean(axis=0)
    support_mask = np.zeros((n, n), dtype=bool)
    support_mask[rows, cols] = True
    stack = FrameStack(frames=frames, pixel_size_nm=pixel, fwhm_nm=psf.fwhm_nm)
    return stack, mean_truth, support_mask
