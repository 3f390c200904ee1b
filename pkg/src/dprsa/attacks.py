"""Byzantine message generators.

An attack produces a raw vector from a read-only snapshot of the round. The
engine turns it into the algorithm's wire type (``sign(x0 - z)`` for the RSA
family, the vector itself for gradient baselines). Sample duplication is the
exception: it copies a regular worker's finished wire message verbatim.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidInputError

KINDS = ("none", "gaussian", "sign_flip", "sample_duplicate")
TARGETS = ("model", "gradient")


@dataclass(frozen=True)
class AttackSpec:
    kind: str = "none"
    sigma_b: float = 1e4
    scale: float = -5.0
    victim_index: int = 0
    # None means "whatever the algorithm transmits".
    applies_to: Optional[str] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown attack kind {self.kind!r}")
        if not self.sigma_b > 0:
            raise InvalidInputError("sigma_b must be positive")
        if not self.scale < 0:
            raise InvalidInputError("sign-flip scale must be negative")
        if self.victim_index < 0:
            raise InvalidInputError("victim_index must be nonnegative")
        if self.applies_to is not None and self.applies_to not in TARGETS:
            raise InvalidInputError(f"applies_to must be one of {TARGETS}")


@dataclass(frozen=True)
class ByzantineContext:
    """What an omniscient attacker sees in one round. Treated as read-only."""

    x0: np.ndarray
    regular_messages: Sequence[np.ndarray]
    regular_models: Sequence[np.ndarray] = field(default_factory=list)
    regular_grads: Sequence[np.ndarray] = field(default_factory=list)


def gaussian_attack(dim: int, sigma_b: float, rng: np.random.Generator) -> np.ndarray:
    if dim < 1:
        raise InvalidInputError("dim must be at least 1")
    return sigma_b * rng.standard_normal(dim)


def sign_flip_attack(truth, scale: float) -> np.ndarray:
    if not scale < 0:
        raise InvalidInputError("scale must be negative")
    return scale * np.asarray(truth, dtype=np.float64)


def sample_duplicate_attack(ctx: ByzantineContext, victim: int) -> np.ndarray:
    if not 0 <= victim < len(ctx.regular_messages):
        raise InvalidInputError(
            f"victim {victim} out of range for {len(ctx.regular_messages)} regular workers"
        )
    return np.array(ctx.regular_messages[victim], copy=True)


def honest_mean(vectors) -> np.ndarray:
    total = np.zeros_like(np.asarray(vectors[0], dtype=np.float64))
    for v in vectors:
        total += v
    return total / len(vectors)


def craft(spec: AttackSpec, ctx: ByzantineContext, target: str, rng) -> np.ndarray:
    """Raw attack vector for one Byzantine worker.

    ``target`` is the message family of the running algorithm ("model" or
    "gradient"); ``spec.applies_to`` overrides it for the sign-flip attack.
    """
    if spec.kind == "gaussian":
        return gaussian_attack(np.asarray(ctx.x0).size, spec.sigma_b, rng)
    if spec.kind == "sign_flip":
        which = spec.applies_to or target
        truth = ctx.regular_models if which == "model" else ctx.regular_grads
        if not truth:
            raise InvalidInputError(f"no honest {which} values available this round")
        return sign_flip_attack(honest_mean(truth), spec.scale)
    if spec.kind == "sample_duplicate":
        return sample_duplicate_attack(ctx, spec.victim_index)
    raise InvalidInputError("attack kind 'none' produces no message")
