"""Flat parameter vectors, the tanh MLP, softmax regression and gradient helpers.

Every model keeps its weights in one flat float64 vector. The MLP packs its
parameters layer by layer, weights before biases, with each weight matrix
stored row-major in ``(fan_out, fan_in)`` shape::

    W1 (hidden, input), b1 (hidden),
    W2 (hidden, hidden), b2 (hidden),
    W3 (output, hidden), b3 (output)

so that ``logits = W3 @ tanh(W2 @ tanh(W1 @ x + b1) + b2) + b3``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInputError

CHECKPOINT_MAGIC = b"DPRSA001"
_HEADER = struct.Struct("<8sIII")


def _as_finite(v, name="input") -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return arr


def sign_vec(v) -> np.ndarray:
    """Element-wise sign with sign(0) = sign(-0.0) = +1.

    Returns a float64 array of exactly +1.0 / -1.0 so messages can be summed
    directly.
    """
    arr = _as_finite(v)
    # -0.0 >= 0.0 is True under IEEE comparison, so negative zero maps to +1.
    return np.where(arr >= 0.0, 1.0, -1.0)


@dataclass(frozen=True)
class ClipConfig:
    max_norm: float = 1.0

    def __post_init__(self):
        if not (self.max_norm > 0 and np.isfinite(self.max_norm)):
            raise InvalidInputError("clip bound M must be a positive finite number")


def clip_grad(g, clip: ClipConfig) -> np.ndarray:
    """Rescale ``g`` onto the l2 ball of radius ``clip.max_norm`` if it lies outside."""
    g = _as_finite(g, "gradient")
    norm = float(np.linalg.norm(g))
    if norm <= clip.max_norm:
        return g.copy()
    out = g * (clip.max_norm / norm)
    # Rounding can leave the rescaled norm a few ulps above the bound.
    while np.linalg.norm(out) > clip.max_norm:
        out = out * (1.0 - 2.0 ** -52)
    return out


def reg_grad(x0, coeff: float) -> np.ndarray:
    """Gradient of ``coeff * ||x0||^2``."""
    if coeff < 0:
        raise InvalidInputError("regularization coefficient must be nonnegative")
    return 2.0 * coeff * np.asarray(x0, dtype=np.float64)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _check_batch(x, y, input_dim, output_dim):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if x.shape[0] == 0:
        raise InvalidInputError("batch is empty")
    if x.shape[1] != input_dim:
        raise InvalidInputError(f"expected {input_dim} features, got {x.shape[1]}")
    if y.shape[0] != x.shape[0]:
        raise InvalidInputError("feature and label counts differ")
    if y.min() < 0 or y.max() >= output_dim:
        raise InvalidInputError("label outside [0, num_classes)")
    return x, y


def _cross_entropy(logits, y):
    """Mean cross-entropy and its gradient with respect to the logits."""
    logp = _log_softmax(logits)
    n = y.shape[0]
    loss = -float(logp[np.arange(n), y].mean())
    dlogits = np.exp(logp)
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    return loss, dlogits


@dataclass(frozen=True)
class MlpModel:
    """Two hidden tanh layers of equal width followed by a linear output layer."""

    input_dim: int
    hidden_dim: int = 50
    output_dim: int = 10

    def __post_init__(self):
        if min(self.input_dim, self.hidden_dim, self.output_dim) < 1:
            raise InvalidInputError("MLP dimensions must be positive")

    @property
    def num_params(self) -> int:
        i, h, o = self.input_dim, self.hidden_dim, self.output_dim
        return i * h + h + h * h + h + h * o + o

    def unpack(self, params):
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (self.num_params,):
            raise InvalidInputError(
                f"expected {self.num_params} parameters, got {params.shape}"
            )
        i, h, o = self.input_dim, self.hidden_dim, self.output_dim
        shapes = [(h, i), (h,), (h, h), (h,), (o, h), (o,)]
        out, pos = [], 0
        for shape in shapes:
            size = int(np.prod(shape))
            out.append(params[pos:pos + size].reshape(shape))
            pos += size
        return out

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        """Glorot-uniform weights, zero biases."""
        parts = []
        for fan_out, fan_in in [
            (self.hidden_dim, self.input_dim),
            (self.hidden_dim, self.hidden_dim),
            (self.output_dim, self.hidden_dim),
        ]:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            parts.append(rng.uniform(-limit, limit, size=fan_out * fan_in))
            parts.append(np.zeros(fan_out))
        return np.concatenate(parts)

    def forward(self, params, x) -> np.ndarray:
        """Logits for one sample (1-D ``x``) or a batch (2-D ``x``)."""
        w1, b1, w2, b2, w3, b3 = self.unpack(params)
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.input_dim:
            raise InvalidInputError(f"expected {self.input_dim} features, got {x.shape[-1]}")
        a1 = np.tanh(x @ w1.T + b1)
        a2 = np.tanh(a1 @ w2.T + b2)
        return a2 @ w3.T + b3

    def loss_and_grad(self, params, x, y):
        """Mean cross-entropy over the batch and its analytic gradient."""
        x, y = _check_batch(x, y, self.input_dim, self.output_dim)
        w1, b1, w2, b2, w3, b3 = self.unpack(params)
        a1 = np.tanh(x @ w1.T + b1)
        a2 = np.tanh(a1 @ w2.T + b2)
        loss, d3 = _cross_entropy(a2 @ w3.T + b3, y)

        gw3 = d3.T @ a2
        gb3 = d3.sum(axis=0)
        d2 = (d3 @ w3) * (1.0 - a2 * a2)
        gw2 = d2.T @ a1
        gb2 = d2.sum(axis=0)
        d1 = (d2 @ w2) * (1.0 - a1 * a1)
        gw1 = d1.T @ x
        gb1 = d1.sum(axis=0)
        grad = np.concatenate(
            [gw1.ravel(), gb1, gw2.ravel(), gb2, gw3.ravel(), gb3]
        )
        return loss, grad


@dataclass(frozen=True)
class LinearModel:
    """Multinomial logistic regression, packed as ``W (output, input)`` then ``b``.

    Convex in its parameters, which is what the Moreau-envelope diagnostic needs.
    """

    input_dim: int
    output_dim: int = 10

    def __post_init__(self):
        if min(self.input_dim, self.output_dim) < 1:
            raise InvalidInputError("model dimensions must be positive")

    @property
    def num_params(self) -> int:
        return self.output_dim * self.input_dim + self.output_dim

    def unpack(self, params):
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (self.num_params,):
            raise InvalidInputError(
                f"expected {self.num_params} parameters, got {params.shape}"
            )
        split = self.output_dim * self.input_dim
        return params[:split].reshape(self.output_dim, self.input_dim), params[split:]

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        limit = np.sqrt(6.0 / (self.input_dim + self.output_dim))
        w = rng.uniform(-limit, limit, size=self.output_dim * self.input_dim)
        return np.concatenate([w, np.zeros(self.output_dim)])

    def forward(self, params, x) -> np.ndarray:
        w, b = self.unpack(params)
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.input_dim:
            raise InvalidInputError(f"expected {self.input_dim} features, got {x.shape[-1]}")
        return x @ w.T + b

    def loss_and_grad(self, params, x, y):
        x, y = _check_batch(x, y, self.input_dim, self.output_dim)
        w, b = self.unpack(params)
        loss, d = _cross_entropy(x @ w.T + b, y)
        return loss, np.concatenate([(d.T @ x).ravel(), d.sum(axis=0)])


def mlp_forward(model, params, x) -> np.ndarray:
    return model.forward(params, x)


def loss_and_grad(model, params, x, y):
    return model.loss_and_grad(params, x, y)


def save_checkpoint(path, model, params) -> None:
    """Write ``params`` as little-endian float64 after a 20-byte header.

    Header: magic ``DPRSA001`` then input, hidden and output widths as uint32.
    A hidden width of 0 marks a :class:`LinearModel`.
    """
    hidden = model.hidden_dim if isinstance(model, MlpModel) else 0
    params = _as_finite(params, "params")
    if params.shape != (model.num_params,):
        raise InvalidInputError("parameter vector does not match the model")
    header = _HEADER.pack(CHECKPOINT_MAGIC, model.input_dim, hidden, model.output_dim)
    Path(path).write_bytes(header + params.astype("<f8").tobytes())


def load_checkpoint(path):
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise InvalidInputError("checkpoint shorter than its header")
    magic, n_in, n_hidden, n_out = _HEADER.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise InvalidInputError(f"bad checkpoint magic {magic!r}")
    model = MlpModel(n_in, n_hidden, n_out) if n_hidden else LinearModel(n_in, n_out)
    body = raw[_HEADER.size:]
    if len(body) != 8 * model.num_params:
        raise InvalidInputError("checkpoint body length does not match its header")
    return model, np.frombuffer(body, dtype="<f8").astype(np.float64)
