"""Worker and master update rules for RSA, plus the gradient-aggregation baselines."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, InvalidInputError
from .paramcore import sign_vec

ANCHOR_RADIUS = 1e-12
ANCHOR_DAMPING = 0.5


@dataclass(frozen=True)
class RsaConfig:
    lam: float = 0.01
    alpha: float = 0.01

    def __post_init__(self):
        if not self.lam > 0:
            raise InvalidInputError("lambda must be positive")
        if not self.alpha > 0:
            raise InvalidInputError("alpha must be positive")


def _stack(vectors, what="vectors") -> np.ndarray:
    if len(vectors) == 0:
        raise InvalidInputError(f"no {what} to aggregate")
    try:
        return np.stack([np.asarray(v, dtype=np.float64) for v in vectors])
    except ValueError as exc:
        raise InvalidInputError(f"{what} have mismatched lengths") from exc


def rsa_worker_update(xk, gk, x0, cfg: RsaConfig) -> np.ndarray:
    """One local subgradient step on ``f_k(x_k) + lam * ||x_k - x0||_1``."""
    xk, gk, x0 = (np.asarray(a, dtype=np.float64) for a in (xk, gk, x0))
    if not (xk.shape == gk.shape == x0.shape):
        raise InvalidInputError("dimension mismatch in worker update")
    return xk - cfg.alpha * (gk + cfg.lam * sign_vec(xk - x0))


def _sign_sum(messages, dim) -> np.ndarray:
    stacked = _stack(messages, "messages")
    if stacked.shape[1] != dim:
        raise InvalidInputError("message length differs from the model")
    # Accumulate in worker-index order so the result never depends on scheduling.
    total = np.zeros(dim)
    for m in stacked:
        total += m
    return total


def rsa_master_update(x0, grad_f0, messages, cfg: RsaConfig) -> np.ndarray:
    """``x0 - alpha * (grad_f0 + lam * sum(messages))``.

    Messages are oriented as ``sign(x0 - xk)``, the orientation the master sums.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    grad_f0 = np.asarray(grad_f0, dtype=np.float64)
    if grad_f0.shape != x0.shape:
        raise InvalidInputError("dimension mismatch in master update")
    return x0 - cfg.alpha * (grad_f0 + cfg.lam * _sign_sum(messages, x0.size))


def mean_aggregate(vectors) -> np.ndarray:
    stacked = _stack(vectors)
    total = np.zeros(stacked.shape[1])
    for v in stacked:
        total += v
    return total / stacked.shape[0]


def sign_majority_aggregate(messages) -> np.ndarray:
    """Coordinate-wise majority vote; a tied vote resolves to +1."""
    stacked = _stack(messages, "messages")
    return sign_vec(_sign_sum(stacked, stacked.shape[1]))


def gm_objective(y, points) -> float:
    points = np.asarray(points, dtype=np.float64)
    return float(np.linalg.norm(points - y, axis=1).sum())


def geometric_median(points, tol: float = 1e-8, max_iter: int = 1000) -> np.ndarray:
    """Weiszfeld iteration for ``argmin_y sum_k ||y - p_k||``.

    Starts from the coordinate-wise mean, which is already a fixed point for
    two points, so they yield their midpoint. When an iterate lands on a data
    point, the point is returned if the subgradient condition certifies it
    optimal; otherwise a damped step away is taken, halved until the
    objective decreases. The data point nearest each iterate is also tested
    directly, since plain Weiszfeld only creeps toward an optimum that sits on
    or near a (possibly repeated) data point.

    Each iteration applies the Weiszfeld map twice and tries a squared
    extrapolation (SQUAREM) of the two steps, keeping it only when it lowers
    the objective, so every accepted iterate is at least as good as plain
    Weiszfeld would give.
    """
    pts = _stack(points, "points")
    if not tol > 0 or max_iter < 1:
        raise InvalidInputError("need tol > 0 and max_iter >= 1")
    y = pts.mean(axis=0)
    for _ in range(max_iter):
        y1 = _weiszfeld_step(y, pts)
        if y1 is None:
            return y
        if np.linalg.norm(y1 - y) < tol:
            return y1
        nearest = pts[np.argmin(np.linalg.norm(pts - y, axis=1))]
        if _is_optimal_data_point(nearest, pts):
            return nearest.copy()
        y2 = _weiszfeld_step(y1, pts)
        if y2 is None:
            return y1
        y_new = _extrapolate(y, y1, y2, pts)
        if np.linalg.norm(y_new - y) < tol:
            return y_new
        y = y_new
    raise ConvergenceError(
        f"Weiszfeld did not converge in {max_iter} iterations", last_iterate=y
    )


def _weiszfeld_step(y, pts):
    """One Weiszfeld update, or None when ``y`` is an optimal data point."""
    diff = pts - y
    dist = np.linalg.norm(diff, axis=1)
    at_anchor = dist < ANCHOR_RADIUS
    if at_anchor.all():
        return None
    w = 1.0 / dist[~at_anchor]
    target = (w[:, None] * pts[~at_anchor]).sum(axis=0) / w.sum()
    if not at_anchor.any():
        return target
    pull = (w[:, None] * diff[~at_anchor]).sum(axis=0)
    if np.linalg.norm(pull) <= at_anchor.sum():
        return None
    step = ANCHOR_DAMPING
    f_y = gm_objective(y, pts)
    while step > 1e-16 and gm_objective(y + step * (target - y), pts) >= f_y:
        step *= 0.5
    return y + step * (target - y)


def _extrapolate(y0, y1, y2, pts):
    r = y1 - y0
    v = (y2 - y1) - r
    nv = np.linalg.norm(v)
    if nv == 0.0:
        return y2
    a = min(-1.0, -np.linalg.norm(r) / nv)
    candidate = y0 - 2.0 * a * r + a * a * v
    if gm_objective(candidate, pts) < gm_objective(y2, pts):
        return candidate
    return y2


def _is_optimal_data_point(p, pts) -> bool:
    """Subgradient test: ``p`` minimizes iff the unit pulls of the other points sum to at most its multiplicity."""
    diff = pts - p
    dist = np.linalg.norm(diff, axis=1)
    here = dist < ANCHOR_RADIUS
    if here.all():
        return True
    pull = (diff[~here] / dist[~here, None]).sum(axis=0)
    return bool(np.linalg.norm(pull) <= here.sum())
