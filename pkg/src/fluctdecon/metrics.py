"""Localization and intensity metrics.

The Jaccard index matches estimated and ground-truth points one-to-one
under a distance tolerance delta (in nm) using optimal assignment, so
the score does not depend on point ordering the way greedy matching
does. Pixel supports are converted to points at pixel centers; when a
pixel grid is given, ground-truth emitters are first deduplicated to
unique pixels (several emitters binned to one pixel count once).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ParameterError

_UNMATCHABLE = 1e12


@dataclass(frozen=True)
class MatchReport:
    cd: int
    fn: int
    fp: int
    matches: tuple
    delta_nm: float
    degenerate: bool = False

    @property
    def n_ground_truth(self) -> int:
        return self.cd + self.fn

    @property
    def n_estimated(self) -> int:
        return self.cd + self.fp


def pixel_centers(mask_or_indices: np.ndarray, pixel_size_nm: float) -> np.ndarray:
    """Convert a boolean pixel mask or (N, 2) (row, col) indices to
    (x_nm, y_nm) pixel-center coordinates."""
    arr = np.asarray(mask_or_indices)
    if arr.dtype == bool:
        idx = np.argwhere(arr)
    else:
        idx = arr.reshape(-1, 2)
    centers = np.empty((idx.shape[0], 2), dtype=np.float64)
    centers[:, 0] = (idx[:, 1] + 0.5) * pixel_size_nm  # x from column
    centers[:, 1] = (idx[:, 0] + 0.5) * pixel_size_nm  # y from row
    return centers


def _dedupe_to_pixel_centers(points: np.ndarray, pixel_size_nm: float) -> np.ndarray:
    idx = np.floor(points / pixel_size_nm).astype(np.int64)
    unique = np.unique(idx, axis=0)
    return (unique + 0.5) * pixel_size_nm


def _as_points(est, pixel_size_nm) -> np.ndarray:
    arr = np.asarray(est)
    if arr.dtype == bool:
        if pixel_size_nm is None:
            raise ParameterError("pixel_size_nm is required to convert a pixel mask to points")
        return pixel_centers(arr, pixel_size_nm)
    return arr.reshape(-1, 2).astype(np.float64)


def jaccard_index(
    est,
    gt,
    delta_nm: float,
    pixel_size_nm: float | None = None,
) -> tuple[float, MatchReport]:
    """Tolerance-delta Jaccard index CD / (CD + FN + FP).

    est is a boolean pixel mask or an (N, 2) point list in nm; gt is a
    point list in nm (deduplicated to unique pixels when pixel_size_nm is
    given). Matching maximizes the number of pairs within delta_nm via
    optimal assignment. Two empty sets give JI = 1 with a degenerate flag.
    """
    if not (delta_nm > 0):
        raise ParameterError(f"delta_nm must be > 0, got {delta_nm}")
    est_pts = _as_points(est, pixel_size_nm)
    gt_pts = np.asarray(gt, dtype=np.float64).reshape(-1, 2)
    if pixel_size_nm is not None and gt_pts.size:
        gt_pts = _dedupe_to_pixel_centers(gt_pts, pixel_size_nm)

    n_est, n_gt = est_pts.shape[0], gt_pts.shape[0]
    if n_est == 0 and n_gt == 0:
        return 1.0, MatchReport(cd=0, fn=0, fp=0, matches=(), delta_nm=delta_nm, degenerate=True)
    if n_est == 0 or n_gt == 0:
        return 0.0, MatchReport(
            cd=0, fn=n_gt, fp=n_est, matches=(), delta_nm=delta_nm
        )

    dist = np.linalg.norm(gt_pts[:, None, :] - est_pts[None, :, :], axis=2)
    cost = np.where(dist <= delta_nm, dist, _UNMATCHABLE)
    rows, cols = linear_sum_assignment(cost)
    matches = tuple(
        (int(r), int(c), float(dist[r, c]))
        for r, c in zip(rows, cols)
        if dist[r, c] <= delta_nm
    )
    cd = len(matches)
    fn = n_gt - cd
    fp = n_est - cd
    ji = cd / (cd + fn + fp)
    return ji, MatchReport(cd=cd, fn=fn, fp=fp, matches=matches, delta_nm=delta_nm)


def psnr(x_hat: np.ndarray, x_gt: np.ndarray, peak: float | None = None) -> float:
    """10*log10(peak^2 / MSE); +inf when the images coincide.

    peak defaults to max(x_gt) and must be positive.
    """
    x_hat = np.asarray(x_hat, dtype=np.float64)
    x_gt = np.asarray(x_gt, dtype=np.float64)
    if x_hat.shape != x_gt.shape:
        raise ParameterError(f"shape mismatch: {x_hat.shape} vs {x_gt.shape}")
    if peak is None:
        peak = float(x_gt.max())
    if not (peak > 0):
        raise ParameterError(f"peak must be > 0, got {peak}")
    mse = float(((x_hat - x_gt) ** 2).mean())
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak**2 / mse)
