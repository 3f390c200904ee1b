"""Accuracy, losses, and the Moreau-envelope stationarity measure.

The stacked variable is ``[x_1; ...; x_r; x_0]`` (regular workers' local
models, then the master model), and the objective is

    h(x) = sum_k f_k(x_k) + f_0(x_0) + gamma * lam * sum_k ||x_k - x_0||_1

with ``f_k`` the full local empirical risk and ``f_0 = c * ||x_0||^2``. The
squared norm of the envelope gradient is ``rho_bar^2 * ||x - prox(x)||^2``,
where ``prox(x) = argmin_y h(y) + rho_bar/2 * ||y - x||^2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConvergenceError, InvalidInputError

_BISECT_STEPS = 80


def eval_accuracy(model, params, test) -> float:
    """Fraction of argmax-correct predictions; ties go to the lowest class index."""
    if len(test) == 0:
        raise InvalidInputError("empty test set")
    pred = np.argmax(model.forward(params, test.features), axis=1)
    return float(np.mean(pred == test.labels))


def dataset_loss(model, params, data) -> float:
    loss, _ = model.loss_and_grad(params, data.features, data.labels)
    return loss


@dataclass(frozen=True)
class MoreauConfig:
    rho_bar: float = 1.0
    inner_tol: float = 1e-8
    inner_max_iter: int = 20000
    gamma_weight: float = 1.0

    def __post_init__(self):
        if not self.rho_bar > 0:
            raise InvalidInputError("rho_bar must be positive")
        if not self.inner_tol > 0:
            raise InvalidInputError("inner_tol must be positive")
        if not 0 < self.gamma_weight <= 1:
            raise InvalidInputError("gamma_weight must lie in (0, 1]")


def soft_threshold(z, thresh):
    return np.sign(z) * np.maximum(np.abs(z) - thresh, 0.0)


@dataclass(frozen=True)
class L1Norm:
    """``weight * ||y||_1``."""

    weight: float

    def value(self, y) -> float:
        return self.weight * float(np.abs(y).sum())

    def prox(self, z, t: float) -> np.ndarray:
        return soft_threshold(z, self.weight * t)


@dataclass(frozen=True)
class ConsensusL1:
    """``weight * sum_k ||y_k - y_0||_1`` over ``num_blocks`` worker blocks then ``y_0``."""

    weight: float
    num_blocks: int
    block_dim: int

    def _split(self, y):
        y = np.asarray(y, dtype=np.float64)
        if y.size != (self.num_blocks + 1) * self.block_dim:
            raise InvalidInputError("stacked point has the wrong length")
        blocks = y.reshape(self.num_blocks + 1, self.block_dim)
        return blocks[:-1], blocks[-1]

    def value(self, y) -> float:
        xs, x0 = self._split(y)
        return self.weight * float(np.abs(xs - x0).sum())

    def prox(self, z, t: float) -> np.ndarray:
        """Exact prox, solved coordinate by coordinate.

        For a fixed master coordinate ``a0`` each worker coordinate is a
        soft-threshold of ``z_k - a0``; what remains is a 1-D convex problem in
        ``a0`` whose derivative is monotone and piecewise linear. Bisection
        locates the active piece, then the piece's linear equation is solved
        exactly.
        """
        zs, z0 = self._split(z)
        ct = self.weight * t
        if ct == 0:
            return np.asarray(z, dtype=np.float64).copy()
        r = self.num_blocks

        def slope(a0):
            return (a0 - z0) / t - np.clip((zs - a0) / t, -self.weight, self.weight).sum(axis=0)

        lo, hi = z0 - r * ct, z0 + r * ct
        for _ in range(_BISECT_STEPS):
            mid = 0.5 * (lo + hi)
            pos = slope(mid) > 0
            hi = np.where(pos, mid, hi)
            lo = np.where(pos, lo, mid)
        a0 = 0.5 * (lo + hi)

        diff = zs - a0
        lin = np.abs(diff) < ct
        sat = np.where(lin, 0.0, np.sign(diff))
        exact = (z0 + np.where(lin, zs, 0.0).sum(axis=0) + ct * sat.sum(axis=0)) / (
            1.0 + lin.sum(axis=0)
        )
        diff_exact = zs - exact
        same = np.all(
            (np.abs(diff_exact) < ct) == lin, axis=0
        ) & np.all(np.where(lin, True, np.sign(diff_exact) == sat), axis=0)
        a0 = np.where(same, exact, a0)
        xs = a0 + soft_threshold(zs - a0, ct)
        return np.concatenate([xs.ravel(), a0])


@dataclass
class CompositeObjective:
    """``smooth(y) + nonsmooth(y)``; ``smooth`` returns ``(value, gradient)``."""

    dim: int
    smooth: Optional[Callable] = None
    nonsmooth: Optional[object] = None

    def smooth_value_grad(self, y):
        if self.smooth is None:
            return 0.0, np.zeros_like(y)
        return self.smooth(y)

    def value(self, y) -> float:
        val = self.smooth_value_grad(y)[0]
        if self.nonsmooth is not None:
            val += self.nonsmooth.value(y)
        return float(val)

    def prox_nonsmooth(self, z, t):
        if self.nonsmooth is None:
            return np.asarray(z, dtype=np.float64).copy()
        return self.nonsmooth.prox(z, t)


def stack_point(local_models, x0) -> np.ndarray:
    return np.concatenate([np.asarray(m, dtype=np.float64) for m in local_models] + [x0])


def stacked_objective(model, shards, cfg: MoreauConfig, rsa, reg_coeff: float) -> CompositeObjective:
    """Build ``h`` over the regular workers' local datasets."""
    d = model.num_params
    r = len(shards)

    def smooth(y):
        blocks = y.reshape(r + 1, d)
        grad = np.empty_like(blocks)
        total = 0.0
        for k, data in enumerate(shards):
            loss, g = model.loss_and_grad(blocks[k], data.features, data.labels)
            total += loss
            grad[k] = g
        x0 = blocks[-1]
        total += reg_coeff * float(x0 @ x0)
        grad[-1] = 2.0 * reg_coeff * x0
        return total, grad.ravel()

    penalty = ConsensusL1(cfg.gamma_weight * rsa.lam, r, d)
    return CompositeObjective((r + 1) * d, smooth, penalty)


def full_objective_h(point, model, shards, cfg: MoreauConfig, rsa, reg_coeff: float) -> float:
    obj = stacked_objective(model, shards, cfg, rsa, reg_coeff)
    point = np.asarray(point, dtype=np.float64)
    if point.size != obj.dim:
        raise InvalidInputError(f"stacked point has length {point.size}, expected {obj.dim}")
    return obj.value(point)


def estimate_curvature(objective: CompositeObjective, y, iters: int = 30) -> float:
    """Largest Hessian eigenvalue of the smooth part near ``y`` by power iteration."""
    if objective.smooth is None:
        return 0.0
    v = np.random.default_rng(0).standard_normal(y.size)
    v /= np.linalg.norm(v)
    h = 1e-5 * max(1.0, float(np.linalg.norm(y)))
    lam = 0.0
    for _ in range(iters):
        hv = (objective.smooth(y + h * v)[1] - objective.smooth(y - h * v)[1]) / (2 * h)
        lam = float(np.linalg.norm(hv))
        if lam == 0.0:
            return 0.0
        v = hv / lam
    return lam


@dataclass
class ProxResult:
    point: np.ndarray
    iterations: int
    # Norm of an explicit subgradient of the subproblem at ``point``.
    residual: float


def prox_point(point, cfg: MoreauConfig, objective: CompositeObjective) -> ProxResult:
    """Minimize ``h(y) + rho_bar/2 ||y - point||^2`` by proximal gradient.

    Step ``1 / (L + rho_bar)`` with ``L`` a power-iteration curvature estimate,
    doubled whenever the quadratic upper bound fails. Stops once both the
    iterate movement and the subgradient certificate fall under tolerance.
    """
    x = np.asarray(point, dtype=np.float64)
    if x.size != objective.dim:
        raise InvalidInputError("point does not match the objective dimension")
    rho = cfg.rho_bar

    def f_and_grad(y):
        val, g = objective.smooth_value_grad(y)
        diff = y - x
        return val + 0.5 * rho * float(diff @ diff), g + rho * diff

    curv = estimate_curvature(objective, x)
    y = x.copy()
    fy, gy = f_and_grad(y)
    for it in range(1, cfg.inner_max_iter + 1):
        while True:
            t = 1.0 / (curv + rho)
            y_new = objective.prox_nonsmooth(y - t * gy, t)
            step = y_new - y
            f_new, g_new = f_and_grad(y_new)
            if f_new <= fy + float(gy @ step) + float(step @ step) / (2 * t) + 1e-12 * abs(fy):
                break
            curv = max(2.0 * curv, 1e-12 + rho)
        # (w - y_new)/t lies in the nonsmooth subdifferential at y_new.
        residual = float(np.linalg.norm(g_new - gy - step / t))
        move = float(np.linalg.norm(step))
        y, fy, gy = y_new, f_new, g_new
        if move < cfg.inner_tol and residual < cfg.inner_tol * rho:
            return ProxResult(y, it, residual)
    raise ConvergenceError(
        f"prox subproblem not solved in {cfg.inner_max_iter} iterations", last_iterate=y
    )


def moreau_grad(point, cfg: MoreauConfig, objective: CompositeObjective) -> np.ndarray:
    x = np.asarray(point, dtype=np.float64)
    return cfg.rho_bar * (x - prox_point(x, cfg, objective).point)


def moreau_grad_norm_sq(point, cfg: MoreauConfig, objective: CompositeObjective) -> float:
    g = moreau_grad(point, cfg, objective)
    return float(g @ g)
