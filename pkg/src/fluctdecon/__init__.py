"""Fluctuation-based fluorescence microscopy deconvolution toolkit.

Simulates stacks of blinking emitters, reduces them to auto-covariance
images, estimates the emitter support and noise variance with a
proximal-gradient solver (explicit sparsity prox operators or
plug-and-play denoisers, local or behind a wire protocol), and recovers
intensities and background on the estimated support.
"""

from .covariance import (
    CovarianceImage,
    PsfSq,
    apply,
    apply_adjoint,
    auto_covariance,
    operator_norm_sq,
    squared_psf_operator,
    temporal_mean,
)
from .errors import (
    BridgeError,
    ConvergenceError,
    DivergenceError,
    FluctDeconError,
    FormatError,
    ParameterError,
    ProtocolError,
)
from .imaging import EmitterSet, FrameStack, Psf, as_image, psf_from_fwhm
from .intensity import (
    IntensityProblem,
    IntensityResult,
    RestrictedOperators,
    build_restricted_operators,
    solve_intensity,
)
from .metrics import MatchReport, jaccard_index, pixel_centers, psnr
from .regularizers import (
    Denoiser,
    QuadraticDenoiser,
    SparsityProx,
    TvDenoiser,
    prox_l0_nonneg,
    prox_l1_nonneg,
    quadratic_gradient_step_denoiser,
    total_variation,
    tv_denoise,
    tweedie_residual_check,
)
from .simulate import (
    AcquisitionParams,
    BlinkingParams,
    generate_filament_pattern,
    raised_cosine_background,
    render_stack,
    simulate_blinking,
)
from .support import (
    IterationRecord,
    PgStep,
    SolverConfig,
    SupportResult,
    estimate_noise_variance,
    eval_objective,
    pg_step,
    solve_support,
)
from .bridge import BridgeDenoiser, BridgeEndpoint, Capabilities, handshake

__version__ = "0.1.0"
