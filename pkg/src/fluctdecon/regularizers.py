"""Sparsity prox operators and denoisers for the support solver.

Two interchangeable families fill the solver's denoising slot:

* `SparsityProx` wraps the closed-form nonnegative l1 (soft) and l0
  (hard) thresholding rules. Both are exact proximity operators of
  `strength * penalty + indicator(x >= 0)`.

* `Denoiser` subclasses implement `denoise(z, sigma) -> (image, potential)`.
  `TvDenoiser` is a built-in analytic choice: it is the exact proximal
  map of a total-variation penalty, so plugging it into the solver keeps
  the iteration a genuine proximal-gradient method with a computable,
  monotone objective. `QuadraticDenoiser` is the tractable gradient-step
  instance D(z) = z - grad((a/2)||z||^2) = (1-a) z used by the theory
  checks and the bridge fixtures.

For a gradient-step denoiser D = Id - grad(R), the potential R evaluated
at the *input* z is what the solver's objective bookkeeping needs; every
`denoise` call therefore returns it alongside the image (None when the
backend cannot provide one).
"""

from __future__ import annotations

import abc
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, ParameterError


def prox_l1_nonneg(z: np.ndarray, theta: float) -> np.ndarray:
    """Soft threshold onto the nonnegative orthant: max(z - theta, 0).

    Exact prox of theta*||x||_1 + indicator(x >= 0).
    """
    if not (theta > 0):
        raise ParameterError(f"theta must be > 0, got {theta}")
    return np.maximum(np.asarray(z, dtype=np.float64) - theta, 0.0)


def prox_l0_nonneg(z: np.ndarray, theta: float) -> np.ndarray:
    """Hard threshold: keep z where z > sqrt(2*theta), else 0.

    Exact prox of theta*||x||_0 + indicator(x >= 0); ties at the
    threshold resolve to 0 (the sparser minimizer).
    """
    if not (theta > 0):
        raise ParameterError(f"theta must be > 0, got {theta}")
    z = np.asarray(z, dtype=np.float64)
    return np.where(z > np.sqrt(2.0 * theta), z, 0.0)


@dataclass(frozen=True)
class SparsityProx:
    """A sparsity penalty `strength * pen(x)` with its exact prox.

    `prox(z, step)` evaluates the proximity operator of
    step * strength * pen + indicator(x >= 0), which is the operator a
    proximal-gradient iteration with step `step` applies.
    """

    kind: str  # "l1" | "l0"
    strength: float

    def __post_init__(self):
        if self.kind not in ("l1", "l0"):
            raise ParameterError(f"unknown sparsity kind {self.kind!r}")
        if not (self.strength > 0):
            raise ParameterError(f"strength must be > 0, got {self.strength}")

    @property
    def name(self) -> str:
        return f"{self.kind}+nonneg(strength={self.strength:g})"

    def prox(self, z: np.ndarray, step: float) -> np.ndarray:
        theta = step * self.strength
        if self.kind == "l1":
            return prox_l1_nonneg(z, theta)
        return prox_l0_nonneg(z, theta)

    def penalty_value(self, x: np.ndarray) -> float:
        if self.kind == "l1":
            return self.strength * float(np.abs(x).sum())
        return self.strength * float(np.count_nonzero(x))


class Denoiser(abc.ABC):
    """Contract for the plug-and-play slot of the support solver.

    `denoise(z, sigma)` returns a same-shape finite image and, when
    `returns_potential`, the scalar potential value R_sigma(z) of the
    gradient-step form D = Id - grad(R_sigma). `is_exact_prox` marks
    denoisers that are provably proximal maps, for which the solver's
    objective is guaranteed non-increasing.
    """

    name: str = "denoiser"
    returns_potential: bool = False
    is_exact_prox: bool = False

    @abc.abstractmethod
    def denoise(self, z: np.ndarray, sigma: float) -> tuple[np.ndarray, float | None]:
        raise NotImplementedError

    def close(self):
        """Release any backing resource (bridge connections override this)."""


def _tv_forward_diff(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    gx = np.zeros_like(x)
    gy = np.zeros_like(x)
    gx[:, :-1] = x[:, 1:] - x[:, :-1]
    gy[:-1, :] = x[1:, :] - x[:-1, :]
    return gx, gy


def _tv_divergence(px: np.ndarray, py: np.ndarray) -> np.ndarray:
    div = np.zeros_like(px)
    if px.shape[1] > 1:
        div[:, 0] += px[:, 0]
        div[:, 1:-1] += px[:, 1:-1] - px[:, :-2]
        div[:, -1] += -px[:, -2]
    if py.shape[0] > 1:
        div[0, :] += py[0, :]
        div[1:-1, :] += py[1:-1, :] - py[:-2, :]
        div[-1, :] += -py[-2, :]
    return div


def total_variation(x: np.ndarray) -> float:
    """Isotropic discrete TV with forward differences and Neumann boundary."""
    gx, gy = _tv_forward_diff(np.asarray(x, dtype=np.float64))
    return float(np.sqrt(gx**2 + gy**2).sum())


def tv_denoise(
    z: np.ndarray,
    strength: float,
    inner_iters: int = 20000,
    gap_factor: float = 1e-6,
    full_output: bool = False,
):
    """Exact prox of strength * TV via an accelerated dual projection.

    Parametrizes x = z - strength * div(p) with the dual field p (one
    2-vector per pixel, projected onto the unit ball) and drives p with
    FISTA steps of size 1/8, restarting the momentum whenever the dual
    objective 0.5*||x||^2 increases. The primal-dual gap

        strength * sum_ij(|grad(x)_ij| + <grad(x)_ij, p_ij>)

    certifies optimality; the iteration keeps the best-certified iterate
    as its incumbent output, so the reported gap sequence is monotone
    non-increasing by construction. Stops once the incumbent gap drops
    below gap_factor * ||z||^2, raising ConvergenceError with the
    achieved gap if inner_iters is exhausted first.

    With full_output=True also returns the per-iteration incumbent gaps.
    """
    if not (strength > 0):
        raise ParameterError(f"strength must be > 0, got {strength}")
    z = np.asarray(z, dtype=np.float64)
    gap_tol = gap_factor * float((z**2).sum())

    px = np.zeros_like(z)
    py = np.zeros_like(z)
    qx, qy = px, py  # extrapolated point
    t = 1.0
    dual_prev = np.inf
    best_gap = np.inf
    best_x = z.copy()
    gaps = []
    for _ in range(inner_iters):
        x = z - strength * _tv_divergence(px, py)
        gx, gy = _tv_forward_diff(x)
        mag = np.sqrt(gx**2 + gy**2)
        gap = strength * float((mag + (gx * px + gy * py)).sum())
        if gap < best_gap:
            best_gap = gap
            best_x = x
        gaps.append(best_gap)
        if best_gap <= gap_tol:
            return (best_x, gaps) if full_output else best_x

        dual = 0.5 * float((x**2).sum())  # the dual objective being minimized
        if dual > dual_prev:  # momentum overshoot: restart from the current p
            t = 1.0
            xq, gqx, gqy = x, gx, gy
            qx, qy = px, py
        else:
            xq = z - strength * _tv_divergence(qx, qy)
            gqx, gqy = _tv_forward_diff(xq)
        dual_prev = dual

        nx = qx - gqx / (8.0 * strength)
        ny = qy - gqy / (8.0 * strength)
        norm = np.maximum(1.0, np.sqrt(nx**2 + ny**2))
        nx /= norm
        ny /= norm
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        beta = (t - 1.0) / t_new
        qx = nx + beta * (nx - px)
        qy = ny + beta * (ny - py)
        t = t_new
        px, py = nx, ny
    raise ConvergenceError(
        f"TV dual projection did not reach gap tolerance {gap_tol:.3e} in {inner_iters} iterations",
        achieved=best_gap,
    )


class TvDenoiser(Denoiser):
    """Total-variation proximal map packaged as a level-driven denoiser.

    At level sigma it evaluates prox of (scale * sigma^2) * TV, the exact
    Gaussian-MAP denoiser for that prior. The reported potential is the
    Moreau envelope value

        R_sigma(z) = w*TV(D(z)) + 0.5*||z - D(z)||^2,   w = scale*sigma^2,

    which is the gradient-step potential satisfying D = Id - grad(R_sigma).
    """

    returns_potential = True
    is_exact_prox = True

    def __init__(self, scale: float = 1.0, inner_iters: int = 2000, gap_factor: float = 1e-6):
        if not (scale > 0):
            raise ParameterError(f"scale must be > 0, got {scale}")
        self.scale = scale
        self.inner_iters = inner_iters
        self.gap_factor = gap_factor
        self.name = f"tv(scale={scale:g})"

    def tv_weight(self, sigma: float) -> float:
        return self.scale * sigma**2

    def denoise(self, z: np.ndarray, sigma: float) -> tuple[np.ndarray, float]:
        if not (sigma > 0):
            raise ParameterError(f"sigma must be > 0, got {sigma}")
        w = self.tv_weight(sigma)
        out = tv_denoise(z, w, inner_iters=self.inner_iters, gap_factor=self.gap_factor)
        potential = w * total_variation(out) + 0.5 * float(((z - out) ** 2).sum())
        return out, potential


def quadratic_gradient_step_denoiser(z: np.ndarray, alpha: float) -> tuple[np.ndarray, float]:
    """The tractable gradient-step denoiser with potential (alpha/2)||z||^2.

    Returns ((1 - alpha) * z, potential). Requires 0 < alpha < 1 so the
    residual map stays contractive.
    """
    if not (0.0 < alpha < 1.0):
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    z = np.asarray(z, dtype=np.float64)
    return (1.0 - alpha) * z, 0.5 * alpha * float((z**2).sum())


class QuadraticDenoiser(Denoiser):
    """Gradient-step denoiser with quadratic potential; ignores sigma.

    Exact prox of alpha/(2(1-alpha)) * ||x||^2, so solver runs with it
    are proximal-gradient iterations with closed-form behavior. Useful as
    a bridge/test reference.
    """

    returns_potential = True
    is_exact_prox = True

    def __init__(self, alpha: float):
        if not (0.0 < alpha < 1.0):
            raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
        self.alpha = alpha
        self.name = f"quadratic(alpha={alpha:g})"

    def denoise(self, z: np.ndarray, sigma: float) -> tuple[np.ndarray, float]:
        return quadratic_gradient_step_denoiser(z, self.alpha)


def tweedie_residual_check(gamma: float, sigma: float, z: np.ndarray) -> float:
    """Max deviation of the score identity for the Gaussian prior N(0, gamma^2 Id).

    For that prior the MMSE denoiser is D(z) = gamma^2/(gamma^2+sigma^2) z
    and the smoothed prior's score is grad log p_sigma(z) = -z/(gamma^2+sigma^2);
    the identity sigma^2 * score = D(z) - z should hold to rounding.
    """
    if not (gamma > 0 and sigma > 0):
        raise ParameterError("gamma and sigma must be > 0")
    z = np.asarray(z, dtype=np.float64)
    shrink = gamma**2 / (gamma**2 + sigma**2)
    denoised = shrink * z
    score = -z / (gamma**2 + sigma**2)
    return float(np.abs(denoised - z - sigma**2 * score).max()) if z.size else 0.0
