"""Sign-perturbation mechanisms, their calibration, and exact privacy-loss oracles.

Two local randomizers act on the sign message a worker sends:

* :class:`FlipMechanism` keeps each sign with probability ``gamma`` and flips
  it otherwise (randomized response on one bit per coordinate).
* :class:`SignGaussMechanism` adds ``N(0, sigma^2 I)`` to the model difference
  ``u = x0 - xk`` and transmits the sign of the result, so that
  ``Pr(out_i = y) = Phi(y * u_i / sigma)``.

Budgets are per message (delta is always 0).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc, erfcx

from .errors import InvalidInputError, OutOfRangeError
from .paramcore import sign_vec

_SQRT2 = math.sqrt(2.0)
GAUSS_EPSILON_MAX = 8.0


def log_ndtr(a) -> np.ndarray:
    """Natural log of the standard normal CDF, stable far into the lower tail.

    For ``a < -1`` the tail is written as ``0.5 * erfcx(-a/sqrt2) * exp(-a^2/2)``
    and the exponential is kept in log space; elsewhere ``log1p`` of the upper
    tail keeps precision as ``Phi(a) -> 1``.
    """
    a = np.asarray(a, dtype=np.float64)
    out = np.empty_like(a)
    lower = a < -1.0
    al = a[lower]
    out[lower] = np.log(0.5 * erfcx(-al / _SQRT2)) - 0.5 * al * al
    au = a[~lower]
    out[~lower] = np.log1p(-0.5 * erfc(au / _SQRT2))
    return out


def ndtr(a) -> np.ndarray:
    return 0.5 * erfc(-np.asarray(a, dtype=np.float64) / _SQRT2)


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float = 0.0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InvalidInputError("epsilon must be positive")
        if self.delta != 0:
            raise InvalidInputError("only pure (epsilon, 0) budgets are supported")


@dataclass(frozen=True)
class Sensitivity:
    """l2 bound on how far ``u = x0 - xk`` can move between adjacent datasets."""

    delta_u: float

    def __post_init__(self):
        if not self.delta_u > 0:
            raise InvalidInputError("sensitivity must be positive")

    @classmethod
    def from_clipping(cls, alpha: float, clip_norm: float) -> "Sensitivity":
        # One clipped local step moves xk by at most alpha * M; two adjacent
        # datasets can push it in opposite directions.
        return cls(2.0 * alpha * clip_norm)


@dataclass(frozen=True)
class FlipMechanism:
    """Keep each sign with probability ``gamma``.

    ``gamma`` must lie in [0.5, 1]. The endpoints are degenerate (0.5 is a fair
    coin with zero privacy loss, 1 transmits the true sign with infinite loss)
    and are accepted so those limits can be simulated.
    """

    gamma: float

    def __post_init__(self):
        if not 0.5 <= self.gamma <= 1.0:
            raise InvalidInputError("gamma must lie in [0.5, 1]")

    @property
    def epsilon(self) -> float:
        return exact_flip_pl(self)


@dataclass(frozen=True)
class SignGaussMechanism:
    sigma: float

    def __post_init__(self):
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise InvalidInputError("sigma must be positive and finite")


def flip_perturb(s, mech: FlipMechanism, rng: np.random.Generator) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if not np.all(np.abs(s) == 1.0):
        raise InvalidInputError("flip_perturb expects a +-1 sign vector")
    keep = rng.random(s.shape) < mech.gamma
    return np.where(keep, s, -s)


def gauss_perturb(u, mech: SignGaussMechanism, rng: np.random.Generator) -> np.ndarray:
    """Sign of ``u + e`` with ``e ~ N(0, sigma^2 I)``; ``u`` is the raw difference."""
    u = np.asarray(u, dtype=np.float64)
    if not np.all(np.isfinite(u)):
        raise InvalidInputError("u contains non-finite values")
    return sign_vec(u + mech.sigma * rng.standard_normal(u.shape))


def calibrate_gamma(budget: PrivacyBudget) -> FlipMechanism:
    eps = budget.epsilon
    if not eps > 0:
        raise OutOfRangeError("epsilon must be positive")
    return FlipMechanism(1.0 / (1.0 + math.exp(-eps)))


def exact_flip_pl(mech: FlipMechanism) -> float:
    """Worst-case log ratio ``ln(gamma / (1 - gamma))`` of output probabilities."""
    if mech.gamma == 1.0:
        return math.inf
    return math.log(mech.gamma) - math.log1p(-mech.gamma)


def calibrate_sigma(
    budget: PrivacyBudget,
    sens: Sensitivity,
    u_entry_bound: float,
    margin: float = 0.05,
) -> SignGaussMechanism:
    """Noise scale ``(1 + margin) * max(2/3 * u_entry_bound, 4 * delta_u / epsilon)``.

    ``u_entry_bound`` bounds ``|u_i|`` for every coordinate. The bound only
    holds for epsilon in (0, 8).
    """
    eps = budget.epsilon
    if not 0 < eps < GAUSS_EPSILON_MAX:
        raise OutOfRangeError(f"epsilon must lie in (0, {GAUSS_EPSILON_MAX:g}), got {eps}")
    if u_entry_bound < 0:
        raise InvalidInputError("u_entry_bound must be nonnegative")
    if not margin > 0:
        raise InvalidInputError("margin must be positive")
    base = max(2.0 * u_entry_bound / 3.0, 4.0 * sens.delta_u / eps)
    return SignGaussMechanism((1.0 + margin) * base)


def exact_gauss_pl(u, v, y, sigma: float) -> float:
    """``ln Pr(y | u) - ln Pr(y | u + v)`` under the Sign-Gaussian mechanism."""
    u, v, y = (np.asarray(a, dtype=np.float64) for a in (u, v, y))
    if not (u.shape == v.shape == y.shape):
        raise InvalidInputError("u, v and y must have equal lengths")
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        raise InvalidInputError("non-finite input")
    if not sigma > 0:
        raise InvalidInputError("sigma must be positive")
    return float(np.sum(log_ndtr(y * u / sigma) - log_ndtr(y * (u + v) / sigma)))


def sphere_grid(dim: int, resolution: int) -> np.ndarray:
    """Unit directions on a hyperspherical-angle grid, plus the +-e_i axes.

    The polar angles take ``resolution`` values on [0, pi] and the azimuth
    takes ``2 * resolution`` values on [0, 2pi).
    """
    axes = np.vstack([np.eye(dim), -np.eye(dim)])
    if dim == 1:
        return axes
    polar = np.linspace(0.0, np.pi, resolution)
    azimuth = np.linspace(0.0, 2.0 * np.pi, 2 * resolution, endpoint=False)
    grids = np.meshgrid(*([polar] * (dim - 2) + [azimuth]), indexing="ij")
    angles = np.stack([g.ravel() for g in grids], axis=1)
    pts = np.ones((angles.shape[0], dim))
    for j in range(dim - 1):
        pts[:, j] *= np.cos(angles[:, j])
        pts[:, j + 1:] *= np.sin(angles[:, j])[:, None]
    return np.vstack([pts, axes])


MAX_EXHAUSTIVE_DIM = 4


def worst_case_gauss_pl(
    u,
    sens: Sensitivity,
    sigma: float,
    resolution: int = 64,
) -> float:
    """Largest privacy loss over all outputs and a dense grid of shifts.

    Searches every ``y`` in {+-1}^d and every ``v`` on a grid of the sphere of
    radius ``delta_u``. The loss is additive across coordinates and, for a fixed
    output, monotone in each ``v_i``, so the supremum over the ball lies on its
    boundary and the best ``y`` can be picked coordinate by coordinate.
    """
    u = np.asarray(u, dtype=np.float64).ravel()
    d = u.size
    if d < 1 or d > MAX_EXHAUSTIVE_DIM:
        raise InvalidInputError(
            f"exhaustive search supports 1 <= d <= {MAX_EXHAUSTIVE_DIM}, got {d}"
        )
    if resolution < 32:
        raise InvalidInputError("resolution must be at least 32")
    if not sigma > 0:
        raise InvalidInputError("sigma must be positive")
    v = sens.delta_u * sphere_grid(d, resolution)
    per_coord = []
    for y in (1.0, -1.0):
        per_coord.append(log_ndtr(y * u / sigma) - log_ndtr(y * (u + v) / sigma))
    best = np.maximum(per_coord[0], per_coord[1]).sum(axis=1)
    return float(best.max())


def brute_force_gauss_pl(u, sens: Sensitivity, sigma: float, resolution: int = 64) -> float:
    """Same supremum as :func:`worst_case_gauss_pl` by enumerating every output.

    Slower by a factor 2^d; kept as an independent cross-check.
    """
    u = np.asarray(u, dtype=np.float64).ravel()
    v = sens.delta_u * sphere_grid(u.size, resolution)
    best = -math.inf
    for y in itertools.product((1.0, -1.0), repeat=u.size):
        y = np.array(y)
        for row in v:
            best = max(best, exact_gauss_pl(u, row, y, sigma))
    return best


def expected_flip_message(s, mech: FlipMechanism) -> np.ndarray:
    return (2.0 * mech.gamma - 1.0) * np.asarray(s, dtype=np.float64)


def expected_gauss_message(u, mech: SignGaussMechanism) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    return (2.0 * ndtr(np.abs(u) / mech.sigma) - 1.0) * sign_vec(u)
