"""Reverse-mode autodiff for small dense networks, with input jets.

Two differentiation paths:

* plain forward + reverse sweep -> exact weight gradients of a scalar loss;
* jet propagation -> exact first/second derivatives of outputs with respect
  to chosen input coordinates, recorded so that losses built from those
  derivatives remain differentiable with respect to the weights (needed for
  PDE-residual training).

Batch convention: inputs are (batch, d_in); weights are (d_out, d_in).
All arithmetic is double precision.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from battwin.errors import UnsupportedActivation

_SUPPORTED = ("tanh", "sigmoid", "relu", "identity")


def _act(name, z):
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    if name == "relu":
        return np.maximum(z, 0.0)
    return z


def _act_derivs(name, s, order):
    """Derivatives of the activation expressed through its value s.

    Returns (s1, s2, s3) up to the requested order; unused entries are None.
    """
    if name == "tanh":
        s1 = 1.0 - s * s
        if order == 1:
            return s1, None, None
        s2 = -2.0 * s * s1
        s3 = -2.0 * (s1 * s1 + s * s2) if order >= 3 else None
        return s1, s2, s3
    if name == "sigmoid":
        s1 = s * (1.0 - s)
        if order == 1:
            return s1, None, None
        s2 = s1 * (1.0 - 2.0 * s)
        s3 = s2 * (1.0 - 2.0 * s) - 2.0 * s1 * s1 if order >= 3 else None
        return s1, s2, s3
    if name == "relu":
        if order > 1:
            raise UnsupportedActivation("relu has no second derivative")
        return (s > 0.0).astype(float), None, None
    # identity
    if order == 1:
        return np.ones_like(s), None, None
    z = np.zeros_like(s)
    return np.ones_like(s), z, z


@dataclass
class DenseNet:
    """Fully connected network: affine layers with per-layer activations."""

    weights: list        # (d_out, d_in) arrays
    biases: list         # (d_out,) arrays
    activations: list    # activation tag per layer

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ValueError("layer lists must have equal length")
        for i in range(1, len(self.weights)):
            if self.weights[i].shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(f"layer {i} input dim mismatch")
        for a in self.activations:
            if a not in _SUPPORTED:
                raise ValueError(f"unknown activation {a!r}")
        for w in self.weights:
            if not np.all(np.isfinite(w)):
                raise ValueError("non-finite weights")

    @classmethod
    def init(cls, widths, activations, seed=0):
        """Xavier/Glorot-initialized network for the given layer widths."""
        rng = np.random.default_rng(seed)
        ws, bs = [], []
        for d_in, d_out in zip(widths[:-1], widths[1:]):
            bound = np.sqrt(6.0 / (d_in + d_out))
            ws.append(rng.uniform(-bound, bound, size=(d_out, d_in)))
            bs.append(np.zeros(d_out))
        if isinstance(activations, str):
            activations = [activations] * len(ws)
        return cls(ws, bs, list(activations))

    @property
    def widths(self):
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def n_params(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def get_params(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b])
                               for w, b in zip(self.weights, self.biases)])

    def set_params(self, vec: np.ndarray) -> None:
        i = 0
        for li, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[li] = vec[i:i + w.size].reshape(w.shape).copy()
            i += w.size
            self.biases[li] = vec[i:i + b.size].copy()
            i += b.size

    def to_dict(self, **metadata) -> dict:
        return {
            "widths": self.widths,
            "activations": list(self.activations),
            "weights": [w.ravel().tolist() for w in self.weights],  # row-major
            "biases": [b.tolist() for b in self.biases],
            "metadata": metadata,
        }

    @classmethod
    def from_dict(cls, d) -> "DenseNet":
        widths = d["widths"]
        ws = [np.array(w, dtype=float).reshape(widths[i + 1], widths[i])
              for i, w in enumerate(d["weights"])]
        bs = [np.array(b, dtype=float) for b in d["biases"]]
        return cls(ws, bs, list(d["activations"]))

    def save(self, path, **metadata) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(**metadata), fh)

    @classmethod
    def load(cls, path) -> "DenseNet":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def forward(net: DenseNet, x: np.ndarray) -> np.ndarray:
    """Plain forward pass; x is (batch, d_in) or (d_in,)."""
    squeeze = x.ndim == 1
    a = np.atleast_2d(np.asarray(x, dtype=float))
    for w, b, act in zip(net.weights, net.biases, net.activations):
        a = _act(act, a @ w.T + b)
    return a[0] if squeeze else a


@dataclass
class Tape:
    """Recorded forward pass: layer inputs and post-activation values."""

    net: DenseNet
    inputs: list      # a_0 .. a_{L-1}
    outputs: list     # s_1 .. s_L (post-activation)

    def output(self):
        return self.outputs[-1]


def forward_tape(net: DenseNet, x: np.ndarray) -> tuple:
    a = np.atleast_2d(np.asarray(x, dtype=float))
    inputs, outputs = [], []
    for w, b, act in zip(net.weights, net.biases, net.activations):
        inputs.append(a)
        a = _act(act, a @ w.T + b)
        outputs.append(a)
    return a, Tape(net, inputs, outputs)


def grad_weights(tape: Tape, grad_output: np.ndarray, with_input_grad=False):
    """Reverse sweep: gradient of sum(grad_output * output) over all weights.

    grad_output is dLoss/dOutput, shape matching the forward output. Returns a
    flat gradient vector ordered like DenseNet.get_params (optionally also the
    gradient with respect to the input batch).
    """
    net = tape.net
    g = np.atleast_2d(np.asarray(grad_output, dtype=float))
    grads_w = [None] * len(net.weights)
    grads_b = [None] * len(net.weights)
    for li in range(len(net.weights) - 1, -1, -1):
        s = tape.outputs[li]
        s1, _, _ = _act_derivs(net.activations[li], s, 1)
        gz = g * s1
        grads_w[li] = gz.T @ tape.inputs[li]
        grads_b[li] = gz.sum(axis=0)
        g = gz @ net.weights[li]
    flat = np.concatenate([np.concatenate([w.ravel(), b])
                           for w, b in zip(grads_w, grads_b)])
    return (flat, g) if with_input_grad else flat


@dataclass
class JetTape:
    """Recorded jet propagation for one forward evaluation.

    Channels are directional input derivatives; every channel carries a first
    derivative, and channels flagged in `second` also carry a pure second
    derivative. The reverse sweep produces weight gradients of losses that mix
    values and derivatives.
    """

    net: DenseNet
    wrt: tuple
    second: tuple
    inputs: list      # per layer: (a, a1[K], a2[K] or None)
    outputs: list     # per layer: (s, s1act, s2act, s3act, z1[K], z2[K])
    value: np.ndarray
    first: np.ndarray   # (K, batch, d_out)
    second_out: np.ndarray  # (K, batch, d_out); rows for unflagged channels are 0


def jet_forward(net: DenseNet, x: np.ndarray, wrt, second=None) -> JetTape:
    """Propagate (value, d/dx_k, d2/dx_k2) through the network.

    wrt: input coordinate indices defining the derivative channels.
    second: subset of wrt for which second derivatives are needed.
    """
    if second is None:
        second = tuple(wrt)
    a = np.atleast_2d(np.asarray(x, dtype=float))
    batch, d_in = a.shape
    K = len(wrt)
    need2 = np.array([w in second for w in wrt])
    a1 = np.zeros((K, batch, d_in))
    for k, idx in enumerate(wrt):
        a1[k, :, idx] = 1.0
    a2 = np.zeros((K, batch, d_in))

    inputs, outputs = [], []
    max_order = 3 if K else 1
    for w, b, act in zip(net.weights, net.biases, net.activations):
        if act == "relu":
            raise UnsupportedActivation("relu is not twice differentiable")
        inputs.append((a, a1, a2))
        z = a @ w.T + b
        z1 = a1 @ w.T
        z2 = a2 @ w.T
        s = _act(act, z)
        s1, s2, s3 = _act_derivs(act, s, max_order)
        a = s
        a1 = s1[None] * z1
        a2 = s2[None] * z1 ** 2 + s1[None] * z2
        outputs.append((s, s1, s2, s3, z1, z2))
    a2 = a2 * need2[:, None, None]
    return JetTape(net, tuple(wrt), tuple(second), inputs, outputs, a, a1, a2)


def input_jet(net: DenseNet, x: np.ndarray, wrt: int):
    """(value, first, second derivative) of outputs w.r.t. input coordinate wrt."""
    tape = jet_forward(net, x, (wrt,))
    squeeze = np.asarray(x).ndim == 1
    v, d1, d2 = tape.value, tape.first[0], tape.second_out[0]
    if squeeze:
        return v[0], d1[0], d2[0]
    return v, d1, d2


def jet_grad_weights(tape: JetTape, g_value, g_first=None, g_second=None) -> np.ndarray:
    """Weight gradient of sum(g_value*v + g_first*v' + g_second*v'').

    g_first/g_second: (K, batch, d_out) adjoints per derivative channel (or
    None for zero). Returns a flat vector ordered like DenseNet.get_params.
    """
    net = tape.net
    K = len(tape.wrt)
    gv = np.atleast_2d(np.asarray(g_value, dtype=float))
    batch, d_out = tape.value.shape
    g1 = np.zeros((K, batch, d_out)) if g_first is None else np.asarray(g_first, dtype=float)
    g2 = np.zeros((K, batch, d_out)) if g_second is None else np.asarray(g_second, dtype=float)

    grads_w = [None] * len(net.weights)
    grads_b = [None] * len(net.weights)
    for li in range(len(net.weights) - 1, -1, -1):
        s, s1, s2, s3, z1, z2 = tape.outputs[li]
        a, a1, a2 = tape.inputs[li]
        w = net.weights[li]
        # activation reverse: y = act(z), y1 = s1*z1, y2 = s2*z1^2 + s1*z2
        if s2 is None:
            gz = gv * s1
            gz1 = g1 * s1[None]
            gz2 = g2 * s1[None]
        else:
            gz = (gv * s1
                  + np.einsum("kbo,kbo->bo", g1, s2[None] * z1)
                  + np.einsum("kbo,kbo->bo", g2, s3[None] * z1 ** 2 + s2[None] * z2))
            gz1 = g1 * s1[None] + 2.0 * g2 * (s2[None] * z1)
            gz2 = g2 * s1[None]
        # affine reverse
        gw = gz.T @ a
        for k in range(K):
            gw += gz1[k].T @ a1[k] + gz2[k].T @ a2[k]
        grads_w[li] = gw
        grads_b[li] = gz.sum(axis=0)
        gv = gz @ w
        g1 = gz1 @ w
        g2 = gz2 @ w
    return np.concatenate([np.concatenate([gw.ravel(), gb])
                           for gw, gb in zip(grads_w, grads_b)])
