"""Feed-forward networks with hand-written backpropagation, and Adam."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import RngStream
from .errors import ContractError, NonFiniteError

ACTIVATIONS = ("tanh", "relu")


def _act(name, z):
    if name == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _act_grad(name, z, a):
    # derivative expressed through pre-activation z and activation a
    if name == "tanh":
        return 1.0 - a * a
    return (z > 0.0).astype(z.dtype)


class Mlp:
    """Affine layers with a shared hidden activation and identity output.

    ``weights[i]`` has shape ``(sizes[i+1], sizes[i])``; inputs are row
    vectors, so a batch ``X`` of shape ``(n, d0)`` maps to ``X @ W.T + b``.
    """

    def __init__(self, sizes, activation: str = "tanh", rng: RngStream | None = None):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ContractError(f"invalid layer sizes {sizes}")
        if activation not in ACTIVATIONS:
            raise ContractError(f"activation must be one of {ACTIVATIONS}, got {activation!r}")
        self.sizes = sizes
        self.activation = activation
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            if rng is None:
                w = np.zeros((fan_out, fan_in))
            else:
                lim = np.sqrt(6.0 / (fan_in + fan_out))
                w = rng.uniform(-lim, lim, size=(fan_out, fan_in))
            self.weights.append(w)
            self.biases.append(np.zeros(fan_out))

    @classmethod
    def from_params(cls, weights, biases, activation: str = "tanh") -> "Mlp":
        sizes = [np.asarray(weights[0]).shape[1]] + [np.asarray(w).shape[0] for w in weights]
        net = cls(sizes, activation)
        net.set_params([np.array(p, dtype=np.float64) for pair in zip(weights, biases) for p in pair])
        return net

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def params(self) -> list:
        """Parameters as ``[W1, b1, W2, b2, ...]`` (live references)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def set_params(self, params) -> None:
        params = list(params)
        for i in range(self.n_layers):
            w, b = params[2 * i], params[2 * i + 1]
            if w.shape != self.weights[i].shape or b.shape != self.biases[i].shape:
                raise ContractError(f"layer {i}: parameter shapes {w.shape}, {b.shape} do not match network")
            self.weights[i] = np.array(w, dtype=np.float64)
            self.biases[i] = np.array(b, dtype=np.float64)

    def copy(self) -> "Mlp":
        return Mlp.from_params([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.activation)

    def copy_from(self, other: "Mlp") -> None:
        for i in range(self.n_layers):
            np.copyto(self.weights[i], other.weights[i])
            np.copyto(self.biases[i], other.biases[i])

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.sizes[0] or x.ndim not in (1, 2):
            raise ContractError(f"input shape {x.shape} incompatible with input size {self.sizes[0]}")
        return x

    def forward(self, x, keep: bool = False):
        """Evaluate the network on a vector or a row batch.

        With ``keep=True`` also returns the per-layer ``(z, a)`` cache
        needed by :meth:`backprop`.
        """
        x = self._check_input(x)
        a = x
        cache = [(None, x)]
        last = self.n_layers - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w.T + b
            a = z if i == last else _act(self.activation, z)
            if keep:
                cache.append((z, a))
        return (a, cache) if keep else a

    __call__ = forward

    def backprop(self, x, loss_grad, cache=None) -> list:
        """Gradients ``[dW1, db1, ...]`` of a scalar loss given dLoss/dOutput.

        For batched input the per-row gradients are summed, so ``loss_grad``
        should already include any ``1/n`` of a mean loss.
        """
        if cache is None:
            _, cache = self.forward(x, keep=True)
        delta = np.asarray(loss_grad, dtype=np.float64)
        out_dim = self.sizes[-1]
        if delta.shape[-1] != out_dim or delta.shape != cache[-1][1].shape:
            raise ContractError(f"loss_grad shape {delta.shape} does not match output shape {cache[-1][1].shape}")
        grads = [None] * (2 * self.n_layers)
        for i in range(self.n_layers - 1, -1, -1):
            a_prev = cache[i][1]
            if delta.ndim == 1:
                grads[2 * i] = np.outer(delta, a_prev)
                grads[2 * i + 1] = delta.copy()
            else:
                grads[2 * i] = delta.T @ a_prev
                grads[2 * i + 1] = delta.sum(axis=0)
            if i > 0:
                z, a = cache[i]
                delta = (delta @ self.weights[i]) * _act_grad(self.activation, z, a)
        return grads


def mlp_forward(net: Mlp, x):
    return net.forward(x)


def mlp_backprop(net: Mlp, x, loss_grad) -> list:
    return net.backprop(x, loss_grad)


def mse(pred, target):
    """``(1/n) * sum ||pred - target||^2`` and its gradient wrt ``pred``."""
    diff = np.asarray(pred) - np.asarray(target)
    n = diff.shape[0] if diff.ndim > 1 else 1
    return float(np.sum(diff * diff) / n), 2.0 * diff / n


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def copy(self) -> "AdamState":
        return AdamState(self.lr, self.beta1, self.beta2, self.eps, self.t, [x.copy() for x in self.m], [x.copy() for x in self.v])


def adam_step(params: list, grads: list, state: AdamState, lr: float | None = None) -> None:
    """Bias-corrected Adam update applied in place to ``params``.

    ``lr`` overrides ``state.lr`` for this step (scheduler-driven rates).
    """
    if len(params) != len(grads):
        raise ContractError("params and grads differ in length")
    for i, g in enumerate(grads):
        if g.shape != params[i].shape:
            raise ContractError(f"gradient {i} has shape {g.shape}, parameter has {params[i].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in parameter {i}; update rejected")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.t += 1
    alpha = state.lr if lr is None else lr
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= alpha * (m / c1) / (np.sqrt(v / c2) + state.eps)


# ---------------------------------------------------------------------------
# Parameter files
#
# An ``.npz`` archive holding ``p0, p1, ...`` (the flat parameter list in
# ``[W1, b1, W2, b2, ...]`` order, float64) and ``header``, a JSON string
# with ``format``, ``sizes`` and ``activation`` plus any caller metadata.
# Round trips are bit-exact.
# ---------------------------------------------------------------------------

PARAM_FORMAT = "mbrlkit-mlp-v1"


def save_params(net: Mlp, path, extra: dict | None = None, arrays: dict | None = None) -> None:
    header = {"format": PARAM_FORMAT, "sizes": net.sizes, "activation": net.activation}
    if extra:
        header.update(extra)
    payload = {f"p{i}": p for i, p in enumerate(net.params())}
    payload.update(arrays or {})
    with open(Path(path), "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header, sort_keys=True)), **payload)


def load_params(path) -> tuple[Mlp, dict, dict]:
    """Returns ``(net, header, extra_arrays)``."""
    with np.load(Path(path), allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        if header.get("format") != PARAM_FORMAT:
            raise ContractError(f"{path}: not an mbrlkit parameter file")
        n = 2 * (len(header["sizes"]) - 1)
        params = [data[f"p{i}"] for i in range(n)]
        extra = {k: data[k] for k in data.files if k != "header" and not (k[0] == "p" and k[1:].isdigit())}
    net = Mlp(header["sizes"], header["activation"])
    net.set_params(params)
    return net, header, extra
