"""Intensity and background recovery on an estimated support.

Given the support mask and the temporal mean of the stack, solves the
jointly convex quadratic

    min_{x >= 0, b >= 0}  0.5*||A_S x + b - y_mean||^2
                          + mu/2 * ||G_S x||^2 + beta/2 * ||G b||^2

where A_S is the blur restricted to the support columns, G_S the forward-
difference gradient over pixel pairs whose BOTH endpoints lie in the
support (so boundary pixels are not penalized against the outside), and
G the full-grid gradient smoothing the background. The solver is
accelerated projected gradient with adaptive restart; a monotone plain
projected-gradient step replaces any momentum step that would increase
the objective, so the recorded objective never increases.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .covariance import apply, apply_adjoint
from .errors import ParameterError
from .imaging import Psf, as_image


@dataclass(frozen=True)
class IntensityProblem:
    support_mask: np.ndarray
    psf: Psf
    y_mean: np.ndarray
    mu: float = 0.1
    beta: float = 0.1

    def __post_init__(self):
        mask = np.asarray(self.support_mask, dtype=bool)
        y = as_image(self.y_mean, name="y_mean")
        if mask.shape != y.shape:
            raise ParameterError(f"mask shape {mask.shape} != image shape {y.shape}")
        if not mask.any():
            raise ParameterError("support mask is empty")
        if not (self.mu > 0 and self.beta > 0):
            raise ParameterError("mu and beta must be > 0")
        mask = mask.copy()
        mask.setflags(write=False)
        object.__setattr__(self, "support_mask", mask)
        object.__setattr__(self, "y_mean", y)


class RestrictedOperators:
    """Blur and gradient operators restricted to a support mask.

    Support vectors are ordered by np.flatnonzero of the mask. The
    gradient keeps only forward-difference pairs fully inside the mask;
    a single-pixel support therefore has a zero gradient operator.
    """

    def __init__(self, psf: Psf, support_mask: np.ndarray):
        mask = np.asarray(support_mask, dtype=bool)
        if mask.ndim != 2 or not mask.any():
            raise ParameterError("support mask must be a non-empty 2-D boolean grid")
        self.psf = psf
        self.mask = mask
        self.shape = mask.shape
        self.indices = np.flatnonzero(mask)
        self.pair_x = mask & np.roll(mask, -1, axis=1)
        self.pair_x[:, -1] = False
        self.pair_y = mask & np.roll(mask, -1, axis=0)
        self.pair_y[-1, :] = False

    @property
    def size(self) -> int:
        return self.indices.size

    def embed(self, x: np.ndarray) -> np.ndarray:
        img = np.zeros(self.shape, dtype=np.float64)
        img.flat[self.indices] = x
        return img

    def restrict(self, img: np.ndarray) -> np.ndarray:
        return img.flat[self.indices].astype(np.float64)

    def psi(self, x: np.ndarray) -> np.ndarray:
        return apply(self.psf, self.embed(x))

    def psi_adjoint(self, img: np.ndarray) -> np.ndarray:
        return self.restrict(apply_adjoint(self.psf, img))

    def grad(self, x: np.ndarray) -> np.ndarray:
        img = self.embed(x)
        gx = np.zeros(self.shape)
        gy = np.zeros(self.shape)
        gx[:, :-1] = img[:, 1:] - img[:, :-1]
        gy[:-1, :] = img[1:, :] - img[:-1, :]
        return np.stack([gx * self.pair_x, gy * self.pair_y])

    def grad_adjoint(self, p: np.ndarray) -> np.ndarray:
        gx = p[0] * self.pair_x
        gy = p[1] * self.pair_y
        out = np.zeros(self.shape)
        out[:, :-1] -= gx[:, :-1]
        out[:, 1:] += gx[:, :-1]
        out[:-1, :] -= gy[:-1, :]
        out[1:, :] += gy[:-1, :]
        return self.restrict(out)


def build_restricted_operators(
    psf: Psf, support_mask: np.ndarray, image_size_px: int | None = None
) -> RestrictedOperators:
    """Construct A_S and G_S for a support mask (see RestrictedOperators)."""
    ops = RestrictedOperators(psf, support_mask)
    if image_size_px is not None and ops.shape != (image_size_px, image_size_px):
        raise ParameterError(
            f"mask shape {ops.shape} does not match image size {image_size_px}"
        )
    return ops


def _full_grad(img: np.ndarray) -> np.ndarray:
    gx = np.zeros_like(img)
    gy = np.zeros_like(img)
    gx[:, :-1] = img[:, 1:] - img[:, :-1]
    gy[:-1, :] = img[1:, :] - img[:-1, :]
    return np.stack([gx, gy])


def _full_grad_adjoint(p: np.ndarray) -> np.ndarray:
    out = np.zeros_like(p[0])
    out[:, :-1] -= p[0][:, :-1]
    out[:, 1:] += p[0][:, :-1]
    out[:-1, :] -= p[1][:-1, :]
    out[1:, :] += p[1][:-1, :]
    return out


@dataclass
class IntensityResult:
    x_image: np.ndarray
    background: np.ndarray
    x_on_support: np.ndarray
    converged: bool
    iterations: int
    pg_norm: float
    objective_trace: list[float]


def _power_iteration_joint(ops: RestrictedOperators, mu: float, beta: float, iters: int = 200) -> float:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(7)))
    x = rng.standard_normal(ops.size)
    b = rng.standard_normal(ops.shape)
    norm = np.sqrt((x**2).sum() + (b**2).sum())
    x, b = x / norm, b / norm
    lam = 0.0
    for _ in range(iters):
        r = ops.psi(x) + b
        hx = ops.psi_adjoint(r) + mu * ops.grad_adjoint(ops.grad(x))
        hb = r + beta * _full_grad_adjoint(_full_grad(b))
        lam_new = float(np.sqrt((hx**2).sum() + (hb**2).sum()))
        if lam_new == 0.0:
            return 1.0
        x, b = hx / lam_new, hb / lam_new
        if abs(lam_new - lam) <= 1e-10 * lam_new:
            return lam_new
        lam = lam_new
    return lam


def solve_intensity(
    problem: IntensityProblem,
    max_iters: int = 5000,
    tol: float = 1e-6,
    momentum: bool = True,
) -> IntensityResult:
    """Accelerated projected gradient on the joint (x, b) problem.

    Terminates when the norm of the generalized (projected) gradient
    L*(u - P(u - grad/L)) falls below tol; returns converged=False when
    max_iters runs out first. momentum=False falls back to plain
    monotone projected gradient.
    """
    ops = RestrictedOperators(problem.psf, problem.support_mask)
    y = problem.y_mean
    mu, beta = problem.mu, problem.beta

    L = _power_iteration_joint(ops, mu, beta)
    step = 1.0 / L

    def grad(x, b):
        r = ops.psi(x) + b - y
        gx = ops.psi_adjoint(r) + mu * ops.grad_adjoint(ops.grad(x))
        gb = r + beta * _full_grad_adjoint(_full_grad(b))
        return gx, gb

    def objective(x, b):
        r = ops.psi(x) + b - y
        return 0.5 * float((r**2).sum()) + 0.5 * mu * float(
            (ops.grad(x) ** 2).sum()
        ) + 0.5 * beta * float((_full_grad(b) ** 2).sum())

    x = np.zeros(ops.size)
    b = np.zeros(ops.shape)
    x_prev, b_prev = x, b
    t = 1.0
    f = objective(x, b)
    trace = [f]
    converged = False
    pg_norm = np.inf
    iterations = 0
    for k in range(1, max_iters + 1):
        iterations = k
        if momentum and k > 1:
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            w = (t - 1.0) / t_new
            yx = x + w * (x - x_prev)
            yb = b + w * (b - b_prev)
            t = t_new
        else:
            yx, yb = x, b
        gx, gb = grad(yx, yb)
        x_new = np.maximum(yx - step * gx, 0.0)
        b_new = np.maximum(yb - step * gb, 0.0)
        f_new = objective(x_new, b_new)
        if f_new > f:
            # momentum overshoot: take the guaranteed-monotone plain step
            t = 1.0
            gx, gb = grad(x, b)
            x_new = np.maximum(x - step * gx, 0.0)
            b_new = np.maximum(b - step * gb, 0.0)
            f_new = objective(x_new, b_new)
        x_prev, b_prev = x, b
        x, b = x_new, b_new
        f = f_new
        trace.append(f)

        gx, gb = grad(x, b)
        px = L * (x - np.maximum(x - step * gx, 0.0))
        pb = L * (b - np.maximum(b - step * gb, 0.0))
        pg_norm = float(np.sqrt((px**2).sum() + (pb**2).sum()))
        if pg_norm < tol:
            converged = True
            break

    return IntensityResult(
        x_image=ops.embed(x),
        background=b,
        x_on_support=x,
        converged=converged,
        iterations=iterations,
        pg_norm=pg_norm,
        objective_trace=trace,
    )
