"""Single-layer LSTM with a scalar readout, written out by hand.

Parameters live in one flat float64 vector with a fixed layout: the four
gates in the order input, forget, output, candidate, each contributing its
recurrent ``H x H`` matrix (row-major), input vector and bias; then the
``H`` readout weights and the readout bias.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .series import WindowedDataset

GATES = ("input", "forget", "output", "candidate")


def parameter_count(hidden_size: int) -> int:
    h = hidden_size
    return 4 * (h * h + h + h) + h + 1


class ModelWeights:
    """Immutable LSTM + readout parameters."""

    __slots__ = ("hidden_size", "flat")

    def __init__(self, hidden_size: int, flat):
        hidden_size = int(hidden_size)
        if hidden_size < 1:
            raise ValueError("hidden_size must be >= 1")
        flat = np.array(flat, dtype=np.float64)
        expected = parameter_count(hidden_size)
        if flat.shape != (expected,):
            raise ValueError(
                f"expected {expected} parameters for hidden_size={hidden_size}, "
                f"got shape {flat.shape}"
            )
        flat.setflags(write=False)
        self.hidden_size = hidden_size
        self.flat = flat

    @property
    def n_params(self) -> int:
        return self.flat.size

    def flatten(self) -> np.ndarray:
        return self.flat.copy()

    @classmethod
    def unflatten(cls, hidden_size: int, flat) -> "ModelWeights":
        return cls(hidden_size, flat)

    @classmethod
    def zeros(cls, hidden_size: int) -> "ModelWeights":
        return cls(hidden_size, np.zeros(parameter_count(hidden_size)))

    def unpack(self):
        """Return views ``(W, U, b, v, c)``.

        ``W`` is ``(4H, H)`` stacking the recurrent matrices, ``U`` and ``b``
        are ``(4H,)``, ``v`` is the ``(H,)`` readout and ``c`` its bias.
        """
        h = self.hidden_size
        block = h * h + 2 * h
        gates = self.flat[: 4 * block].reshape(4, block)
        W = gates[:, : h * h].reshape(4 * h, h)
        U = gates[:, h * h : h * h + h].reshape(4 * h)
        b = gates[:, h * h + h :].reshape(4 * h)
        v = self.flat[4 * block : 4 * block + h]
        return W, U, b, v, float(self.flat[-1])

    def gate(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        k = GATES.index(name)
        h = self.hidden_size
        W, U, b, _, _ = self.unpack()
        return W[k * h : (k + 1) * h], U[k * h : (k + 1) * h], b[k * h : (k + 1) * h]

    def __eq__(self, other) -> bool:
        if not isinstance(other, ModelWeights):
            return NotImplemented
        return self.hidden_size == other.hidden_size and np.array_equal(self.flat, other.flat)

    def __repr__(self) -> str:
        return f"ModelWeights(hidden_size={self.hidden_size}, n_params={self.n_params})"

    def to_dict(self) -> dict:
        # float repr is the shortest string that parses back to the same double
        return {"hidden_size": self.hidden_size, "flat": [float(x) for x in self.flat]}

    @classmethod
    def from_dict(cls, data: dict) -> "ModelWeights":
        return cls(data["hidden_size"], data["flat"])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ModelWeights":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def init_weights(hidden_size: int, rng_seed: int = 0) -> ModelWeights:
    """Uniform(-1/sqrt(H), 1/sqrt(H)) init with forget-gate biases set to 1."""
    rng = np.random.default_rng(rng_seed)
    k = 1.0 / np.sqrt(hidden_size)
    flat = rng.uniform(-k, k, size=parameter_count(hidden_size))
    w = ModelWeights(hidden_size, flat)
    flat = w.flatten()
    h = hidden_size
    block = h * h + 2 * h
    forget_bias = block + h * h + h
    flat[forget_bias : forget_bias + h] = 1.0
    return ModelWeights(hidden_size, flat)


@dataclass(frozen=True, eq=False)
class ForwardTrace:
    """Activations kept for backpropagation.

    Gate arrays are ``(L, N, H)``; ``c`` and ``h`` are ``(L + 1, N, H)`` with
    the zero initial state at index 0.
    """

    inputs: np.ndarray
    i: np.ndarray
    f: np.ndarray
    o: np.ndarray
    g: np.ndarray
    c: np.ndarray
    h: np.ndarray
    prediction: np.ndarray

    def __len__(self) -> int:
        return self.inputs.shape[1]


def _check_windows(w: ModelWeights, windows) -> np.ndarray:
    x = np.asarray(windows, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] == 0:
        raise ValueError(f"windows must be a nonempty (n, L) array, got shape {x.shape}")
    return x


def forward_batch(w: ModelWeights, windows) -> ForwardTrace:
    """Run the recurrence over ``N`` windows at once; returns the trace."""
    x = _check_windows(w, windows)
    n, steps = x.shape
    H = w.hidden_size
    W, U, b, v, c_out = w.unpack()

    i_s = np.empty((steps, n, H))
    f_s = np.empty((steps, n, H))
    o_s = np.empty((steps, n, H))
    g_s = np.empty((steps, n, H))
    c_s = np.zeros((steps + 1, n, H))
    h_s = np.zeros((steps + 1, n, H))
    for t in range(steps):
        z = h_s[t] @ W.T + x[:, t, None] * U + b
        i_s[t] = expit(z[:, :H])
        f_s[t] = expit(z[:, H : 2 * H])
        o_s[t] = expit(z[:, 2 * H : 3 * H])
        g_s[t] = np.tanh(z[:, 3 * H :])
        c_s[t + 1] = f_s[t] * c_s[t] + i_s[t] * g_s[t]
        h_s[t + 1] = o_s[t] * np.tanh(c_s[t + 1])
    prediction = h_s[steps] @ v + c_out
    return ForwardTrace(x, i_s, f_s, o_s, g_s, c_s, h_s, prediction)


def forward(w: ModelWeights, window) -> tuple[float, ForwardTrace]:
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 1:
        raise ValueError("forward takes a single 1-D window; use forward_batch for many")
    trace = forward_batch(w, window)
    return float(trace.prediction[0]), trace


def predict(w: ModelWeights, windows) -> np.ndarray:
    return forward_batch(w, windows).prediction


def backward_batch(w: ModelWeights, trace: ForwardTrace, targets) -> tuple[np.ndarray, np.ndarray]:
    """Squared-error losses ``(N,)`` and per-sample gradients ``(N, P)``."""
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    x = trace.inputs
    n, steps = x.shape
    if y.shape != (n,):
        raise ValueError(f"expected {n} targets, got {y.size}")
    H = w.hidden_size
    W, _, _, v, _ = w.unpack()

    err = trace.prediction - y
    losses = err * err
    d_pred = 2.0 * err

    d_v = d_pred[:, None] * trace.h[steps]
    d_c_out = d_pred.copy()
    d_W = np.zeros((n, 4 * H, H))
    d_U = np.zeros((n, 4 * H))
    d_b = np.zeros((n, 4 * H))

    dh = d_pred[:, None] * v
    dc = np.zeros((n, H))
    for t in reversed(range(steps)):
        i, f, o, g = trace.i[t], trace.f[t], trace.o[t], trace.g[t]
        c_prev, c = trace.c[t], trace.c[t + 1]
        tanh_c = np.tanh(c)
        dc = dc + dh * o * (1.0 - tanh_c * tanh_c)
        dz = np.concatenate(
            [
                dc * g * i * (1.0 - i),
                dc * c_prev * f * (1.0 - f),
                dh * tanh_c * o * (1.0 - o),
                dc * i * (1.0 - g * g),
            ],
            axis=1,
        )
        d_W += dz[:, :, None] * trace.h[t][:, None, :]
        d_U += dz * x[:, t, None]
        d_b += dz
        dh = dz @ W
        dc = dc * f

    block = H * H + 2 * H
    gate_grads = np.concatenate(
        [d_W.reshape(n, 4, H * H), d_U.reshape(n, 4, H), d_b.reshape(n, 4, H)], axis=2
    ).reshape(n, 4 * block)
    grads = np.concatenate([gate_grads, d_v, d_c_out[:, None]], axis=1)
    return losses, grads


def backward(w: ModelWeights, trace: ForwardTrace, target: float) -> tuple[float, np.ndarray]:
    losses, grads = backward_batch(w, trace, [target])
    return float(losses[0]), grads[0]


def loss(w: ModelWeights, window, target: float) -> float:
    pred, _ = forward(w, window)
    return (pred - target) ** 2


def average_gradient(w: ModelWeights, dataset: WindowedDataset) -> tuple[float, np.ndarray]:
    """Mean loss and mean gradient over ``dataset``, summed in dataset order."""
    if len(dataset) == 0:
        raise ValueError("cannot average gradients over an empty dataset")
    trace = forward_batch(w, dataset.inputs)
    losses, grads = backward_batch(w, trace, dataset.targets)
    total = np.zeros(w.n_params)
    total_loss = 0.0
    for k in range(len(dataset)):
        total += grads[k]
        total_loss += losses[k]
    return total_loss / len(dataset), total / len(dataset)


def clip_by_norm(g: np.ndarray, max_norm: float | None) -> np.ndarray:
    if max_norm is None:
        return g
    norm = float(np.linalg.norm(g))
    if norm > max_norm:
        return g * (max_norm / norm)
    return g


def sgd_step(w: ModelWeights, g, eta: float) -> ModelWeights:
    g = np.asarray(g, dtype=np.float64)
    if g.shape != w.flat.shape:
        raise ValueError(f"gradient has shape {g.shape}, weights have {w.flat.shape}")
    return ModelWeights(w.hidden_size, w.flat - eta * g)


def numerical_gradient(w: ModelWeights, window, target: float, epsilon: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of the squared loss, one parameter at a time."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    base = w.flatten()
    grad = np.empty_like(base)
    for j in range(base.size):
        plus = base.copy()
        plus[j] += epsilon
        minus = base.copy()
        minus[j] -= epsilon
        l_plus = loss(ModelWeights(w.hidden_size, plus), window, target)
        l_minus = loss(ModelWeights(w.hidden_size, minus), window, target)
        grad[j] = (l_plus - l_minus) / (2 * epsilon)
    return grad


def forecast_horizon(w: ModelWeights, seed_window, horizon: int) -> np.ndarray:
    """Iterated one-step-ahead forecasts in normalized space.

    Accepts one window ``(L,)`` or a batch ``(N, L)``; the output has shape
    ``(horizon,)`` or ``(N, horizon)`` to match.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    window = np.asarray(seed_window, dtype=np.float64)
    single = window.ndim == 1
    window = np.atleast_2d(window).copy()
    out = np.empty((window.shape[0], horizon))
    for k in range(horizon):
        out[:, k] = predict(w, window)
        window = np.concatenate([window[:, 1:], out[:, k, None]], axis=1)
    return out[0] if single else out
