"""Support and noise-variance estimation on the auto-covariance image.

Solves

    min_{r >= 0, s >= 0}  lam/2 * ||r_cov - Ksq r - s*1||^2 + penalty(r)

by alternating a closed-form noise update with a proximal-gradient step
on r: per iteration, s is set to the exact minimizer mean(r_cov - Ksq r)
(clamped at 0), then

    z = r + tau*lam * Ksq^T (r_cov - Ksq r - s*1)
    r <- prox(z)            (model-based, penalty = strength * l1/l0)
    r <- denoiser(z, sigma) (plug-and-play)

With tau*lam*L <= 1 (L the squared operator norm of Ksq, estimated by
power iteration) the model-based composite objective is non-increasing;
the same certificate holds for any plug-and-play denoiser that is an
exact proximal map. The tracked objective is

    lam/2 * ||residual||^2 + (1/tau) * (R_sigma(z) - 0.5*||z - r||^2)

in the PnP branch, which is the scaled composite the iteration actually
descends (the tau and lam factors matter whenever they differ from 1).

Before calling a denoiser the data is rescaled so max(r_cov) = 1,
matching how such denoisers are trained; results are scaled back, and
the trace's objective values are in the normalized units.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .covariance import CovarianceImage, PsfSq, apply, apply_adjoint, operator_norm_sq, squared_psf_operator
from .errors import BridgeError, DivergenceError, ParameterError
from .imaging import Psf, as_image
from .regularizers import Denoiser, SparsityProx

# Default support threshold for denoiser outputs, relative to max(r_hat):
# network-style denoisers return non-sparse images, so exact nonzeroness
# is meaningless for them.
PNP_THRESHOLD_FRACTION = 1e-3

logger = logging.getLogger(__name__)


@dataclass
class SolverConfig:
    """Knobs of the alternating solver.

    tau=1.0 with lam=0.99 keeps tau*lam*L <= 1 for unit-normalized blur
    kernels; tau=None asks the solver for the largest certified step
    1/(lam*L), which matters here because squared blur kernels have tiny
    operator norms. support_threshold=None picks the per-branch default
    (exact 0 for prox penalties, 1e-3 * max for denoisers).
    """

    regularizer: SparsityProx | Denoiser
    tau: float | None = 1.0
    lam: float = 0.99
    max_iters: int = 2000
    tol: float = 1e-8
    sigma: float | None = None
    support_threshold: float | None = None
    r_x0: np.ndarray | None = None

    def __post_init__(self):
        if self.tau is not None and not (self.tau > 0):
            raise ParameterError("tau must be > 0 (or None for automatic)")
        if not (self.lam > 0):
            raise ParameterError("lam must be > 0")
        if self.max_iters < 1:
            raise ParameterError(f"max_iters must be >= 1, got {self.max_iters}")
        if not (self.tol > 0):
            raise ParameterError(f"tol must be > 0, got {self.tol}")
        if self.support_threshold is not None and self.support_threshold < 0:
            raise ParameterError("support_threshold must be >= 0")
        if isinstance(self.regularizer, Denoiser):
            if self.sigma is None or not (self.sigma > 0):
                raise ParameterError("denoiser regularizers need sigma > 0")
        elif not isinstance(self.regularizer, SparsityProx):
            raise ParameterError(
                f"regularizer must be a SparsityProx or Denoiser, got {type(self.regularizer)!r}"
            )

    @property
    def is_pnp(self) -> bool:
        return isinstance(self.regularizer, Denoiser)


@dataclass
class IterationRecord:
    iteration: int
    objective: float | None
    rel_change: float
    rel_change_min: float
    s: float


@dataclass
class SupportResult:
    """Estimated covariance image, noise variance, support set, and trace."""

    r_x_hat: CovarianceImage
    s_hat: float
    support_mask: np.ndarray
    trace: list[IterationRecord]
    converged: bool
    iterations: int
    threshold: float
    scale: float = 1.0

    @property
    def omega(self) -> np.ndarray:
        """Support pixel indices as an (N, 2) array of (row, col)."""
        return np.argwhere(self.support_mask)


class PgStep(NamedTuple):
    z: np.ndarray
    r_x_next: np.ndarray
    potential: float | None


def _cov_array(r_cov: CovarianceImage | np.ndarray) -> np.ndarray:
    if isinstance(r_cov, CovarianceImage):
        return r_cov.image
    return as_image(r_cov, nonnegative=True, name="covariance data")


def estimate_noise_variance(
    r_cov: CovarianceImage | np.ndarray,
    r_x: np.ndarray,
    op: PsfSq,
) -> float:
    """Exact minimizer of s -> ||r_cov - Ksq r_x - s*1||^2, clamped at 0.

    That minimizer is the mean of the residual r_cov - Ksq r_x.
    """
    data = _cov_array(r_cov)
    if data.shape != np.shape(r_x):
        raise ParameterError(f"shape mismatch: {data.shape} vs {np.shape(r_x)}")
    return max(float(np.mean(data - apply(op, r_x))), 0.0)


def pg_step(
    r_x: np.ndarray,
    s: float,
    r_cov: CovarianceImage | np.ndarray,
    op: PsfSq,
    cfg: SolverConfig,
    iteration: int | None = None,
    _blurred: np.ndarray | None = None,
) -> PgStep:
    """One descent-plus-prox (or denoise) step on r_x at fixed s."""
    if cfg.tau is None:
        raise ParameterError("pg_step needs an explicit tau; solve_support resolves tau=None")
    data = _cov_array(r_cov)
    blurred = apply(op, r_x) if _blurred is None else _blurred
    residual = data - blurred - s
    z = r_x + cfg.tau * cfg.lam * apply_adjoint(op, residual)
    if not np.all(np.isfinite(z)):
        raise DivergenceError("gradient step produced non-finite values", iteration=iteration)
    if cfg.is_pnp:
        r_next, potential = cfg.regularizer.denoise(z, cfg.sigma)
        r_next = np.asarray(r_next, dtype=np.float64)
        if r_next.shape != z.shape or not np.all(np.isfinite(r_next)):
            raise DivergenceError("denoiser returned an invalid image", iteration=iteration)
    else:
        r_next = np.maximum(cfg.regularizer.prox(z, cfg.tau), 0.0)
        potential = None
    return PgStep(z=z, r_x_next=r_next, potential=potential)


def eval_objective(
    r_x: np.ndarray,
    z: np.ndarray,
    s: float,
    r_cov: CovarianceImage | np.ndarray,
    op: PsfSq,
    regularizer: SparsityProx | Denoiser,
    *,
    tau: float = 1.0,
    lam: float = 0.99,
    potential: float | None = None,
) -> float | None:
    """Composite objective value at (r_x, s); None when unavailable.

    Model-based: lam/2 * data + penalty. PnP: lam/2 * data plus the
    potential-based surrogate (R_sigma(z) - 0.5||z - r_x||^2) / tau,
    requiring the potential returned by the denoise call that produced
    r_x from z. Denoisers without potentials yield None and the solver
    falls back to relative-change-only stopping.
    """
    data = _cov_array(r_cov)
    fit = 0.5 * lam * float(((data - apply(op, r_x) - s) ** 2).sum())
    if isinstance(regularizer, SparsityProx):
        return fit + regularizer.penalty_value(r_x)
    if potential is None:
        return None
    return fit + (potential - 0.5 * float(((z - r_x) ** 2).sum())) / tau


def solve_support(
    r_cov: CovarianceImage | np.ndarray,
    psf: Psf | PsfSq,
    cfg: SolverConfig,
) -> SupportResult:
    """Run the alternating solver until the relative change drops below tol.

    The stopping statistic is ||r^{k+1} - r^k||^2 / ||r_ref||^2 with
    r_ref the initial iterate, falling back to the first nonzero iterate
    when starting from zero; the trace also records its running minimum.
    """
    data = _cov_array(r_cov)
    source_T = r_cov.source_T if isinstance(r_cov, CovarianceImage) else 2
    op = squared_psf_operator(psf) if isinstance(psf, Psf) else psf

    L = operator_norm_sq(op, data.shape)
    if cfg.tau is None:
        tau = 1.0 / (cfg.lam * L)
    else:
        tau = cfg.tau
        if tau * cfg.lam * L > 1.0 + 1e-12:
            tau = 1.0 / (cfg.lam * L)
            warnings.warn(
                f"tau*lam*L = {cfg.tau * cfg.lam * L:.3g} > 1 breaks the descent guarantee; "
                f"shrinking tau to {tau:.3g}",
                stacklevel=2,
            )
    run_cfg = SolverConfig(
        regularizer=cfg.regularizer,
        tau=tau,
        lam=cfg.lam,
        max_iters=cfg.max_iters,
        tol=cfg.tol,
        sigma=cfg.sigma,
        support_threshold=cfg.support_threshold,
    )

    scale = 1.0
    if run_cfg.is_pnp:
        if not run_cfg.regularizer.is_exact_prox:
            # smoothness/boundedness of an external denoiser's potential is
            # unverifiable at runtime, so objective decrease is not certified
            logger.info(
                "denoiser %s carries no proximal-map certificate; "
                "objective monotonicity is not guaranteed",
                getattr(run_cfg.regularizer, "name", "<unnamed>"),
            )
        peak = float(data.max())
        if peak > 0:
            scale = peak
    work = data / scale

    if cfg.r_x0 is not None:
        r_x = as_image(cfg.r_x0, name="r_x0").copy() / scale
        if r_x.shape != work.shape:
            raise ParameterError("r_x0 shape does not match the covariance image")
    else:
        r_x = np.zeros_like(work)

    denom = float((r_x**2).sum())
    trace: list[IterationRecord] = []
    converged = False
    rel_min = np.inf
    blurred = apply(op, r_x)
    s = 0.0
    for k in range(1, run_cfg.max_iters + 1):
        s = max(float(np.mean(work - blurred)), 0.0)
        try:
            step = pg_step(r_x, s, work, op, run_cfg, iteration=k, _blurred=blurred)
        except BridgeError as exc:
            exc.trace = trace  # surface whatever was computed before the failure
            raise
        diff = float(((step.r_x_next - r_x) ** 2).sum())
        if denom == 0.0:
            denom = float((step.r_x_next**2).sum())
        rel = diff / denom if denom > 0 else 0.0
        rel_min = min(rel_min, rel)

        r_x = step.r_x_next
        blurred = apply(op, r_x)
        objective = eval_objective(
            r_x,
            step.z,
            s,
            work,
            op,
            run_cfg.regularizer,
            tau=run_cfg.tau,
            lam=run_cfg.lam,
            potential=step.potential,
        )
        trace.append(
            IterationRecord(
                iteration=k,
                objective=objective,
                rel_change=rel,
                rel_change_min=float(rel_min),
                s=s * scale,
            )
        )
        if rel < run_cfg.tol:
            converged = True
            break

    r_hat = np.maximum(r_x * scale, 0.0)
    if run_cfg.support_threshold is not None:
        threshold = run_cfg.support_threshold
    elif run_cfg.is_pnp:
        threshold = PNP_THRESHOLD_FRACTION * float(r_hat.max())
    else:
        threshold = 0.0
    mask = r_hat > threshold
    return SupportResult(
        r_x_hat=CovarianceImage(image=r_hat, source_T=source_T),
        s_hat=s * scale,
        support_mask=mask,
        trace=trace,
        converged=converged,
        iterations=len(trace),
        threshold=threshold,
        scale=scale,
    )
