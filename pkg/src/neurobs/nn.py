"""Residual feed-forward networks and their loop-isolation forms.

A network here is the tuple (W1, ..., W[L+1], W[L+2]) with L hidden layers,
one scalar activation shared by every neuron, and a linear shortcut W[L+2]
from input to output.  Each neuron's activation lies in a sector
[alpha_i, beta_i], which is the only property downstream certificates use.

Isolation rewrites the network as two linear maps around the stacked
nonlinearity: one producing [x; output] and one producing [xi; w] from the
joint vector [x; w], where xi and w collect every pre- and post-activation
signal.  This turns a loop closed through the network into a linear system
plus a sector-bounded block.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Activation",
    "NeuralNet",
    "ShapedNN",
    "SignalStack",
    "IsolationForm",
    "isolate",
    "isolate_vector",
]


@dataclass(frozen=True)
class Activation:
    """Scalar activation function with a known global sector.

    Every variant satisfies sigma(0) = 0 and lies in the sector returned by
    :meth:`sector`, i.e. (sigma(s) - alpha*s) * (beta*s - sigma(s)) >= 0 for
    all real s.
    """

    kind: str
    slope: float = 0.0   # leaky_relu only
    gamma: float = 0.0   # fal only
    delta: float = 0.0   # fal only

    def __post_init__(self):
        if self.kind in ("relu", "tanh"):
            return
        if self.kind == "leaky_relu":
            if not 0.0 < self.slope < 1.0:
                raise ValueError(f"leaky_relu slope must be in (0, 1), got {self.slope}")
            return
        if self.kind == "fal":
            if not 0.0 < self.gamma < 1.0:
                raise ValueError(f"fal gamma must be in (0, 1), got {self.gamma}")
            if not self.delta > 0.0:
                raise ValueError(f"fal delta must be positive, got {self.delta}")
            return
        raise ValueError(f"unknown activation kind {self.kind!r}")

    @classmethod
    def relu(cls) -> "Activation":
        return cls("relu")

    @classmethod
    def tanh(cls) -> "Activation":
        return cls("tanh")

    @classmethod
    def leaky_relu(cls, slope: float = 0.01) -> "Activation":
        return cls("leaky_relu", slope=slope)

    @classmethod
    def fal(cls, gamma: float, delta: float) -> "Activation":
        return cls("fal", gamma=gamma, delta=delta)

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "relu":
            return np.maximum(s, 0.0)
        if self.kind == "tanh":
            return np.tanh(s)
        if self.kind == "leaky_relu":
            return np.where(s >= 0.0, s, self.slope * s)
        # fal: power law outside the linear band [-delta, delta]
        linear = s / self.delta ** (1.0 - self.gamma)
        power = np.abs(s) ** self.gamma * np.sign(s)
        return np.where(np.abs(s) <= self.delta, linear, power)

    def sector(self) -> tuple[float, float]:
        """Tightest global sector (alpha, beta) for this variant."""
        if self.kind == "relu":
            return 0.0, 1.0
        if self.kind == "tanh":
            return 0.0, 1.0
        if self.kind == "leaky_relu":
            return self.slope, 1.0
        return 0.0, self.delta ** (self.gamma - 1.0)

    def to_json(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "leaky_relu":
            d["slope"] = self.slope
        elif self.kind == "fal":
            d["gamma"] = self.gamma
            d["delta"] = self.delta
        return d

    @classmethod
    def from_json(cls, d: dict) -> "Activation":
        kind = d["kind"]
        if kind == "leaky_relu":
            return cls.leaky_relu(d["slope"])
        if kind == "fal":
            return cls.fal(d["gamma"], d["delta"])
        return cls(kind)


@dataclass(frozen=True)
class SignalStack:
    """Pre-activation (xi) and post-activation (w) signals, stacked layer by layer."""

    xi: np.ndarray
    w: np.ndarray


@dataclass(frozen=True)
class NeuralNet:
    """Residual feed-forward network.

    weights holds (W1, ..., W[L+1], W[L+2]); W[l] maps layer l-1 to layer l
    and the last entry is the input-to-output shortcut.  alpha and beta are
    per-neuron sector vectors of length n_sigma = sum of hidden widths; they
    default to the activation's tightest global sector.
    """

    weights: tuple
    activation: Activation
    alpha: np.ndarray = None
    beta: np.ndarray = None

    def __post_init__(self):
        ws = tuple(np.atleast_2d(np.asarray(w, dtype=float)) for w in self.weights)
        object.__setattr__(self, "weights", ws)
        if len(ws) < 3:
            raise ValueError("need at least one hidden layer: weights = (W1, W2, W3)")
        L = len(ws) - 2
        for l in range(L):
            if ws[l + 1].shape[1] != ws[l].shape[0]:
                raise ValueError(
                    f"W{l + 2} expects {ws[l].shape[0]} inputs, has {ws[l + 1].shape[1]} columns"
                )
        if ws[-1].shape != (ws[L].shape[0], ws[0].shape[1]):
            raise ValueError(
                f"shortcut must map input dim {ws[0].shape[1]} to output dim "
                f"{ws[L].shape[0]}, got shape {ws[-1].shape}"
            )
        a0, b0 = self.activation.sector()
        n_sig = self.n_sigma
        alpha = np.full(n_sig, a0) if self.alpha is None else np.asarray(self.alpha, float)
        beta = np.full(n_sig, b0) if self.beta is None else np.asarray(self.beta, float)
        if alpha.shape != (n_sig,) or beta.shape != (n_sig,):
            raise ValueError(f"sector vectors must have length {n_sig}")
        if np.any(alpha > beta):
            raise ValueError("sector requires alpha <= beta componentwise")
        # Overrides may only widen the activation's own sector.
        if np.any(alpha > a0 + 1e-15) or np.any(beta < b0 - 1e-15):
            raise ValueError(
                f"sector override must contain the activation sector [{a0}, {b0}]"
            )
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)

    @property
    def hidden_layers(self) -> int:
        return len(self.weights) - 2

    @property
    def widths(self) -> tuple:
        return (self.weights[0].shape[1],) + tuple(
            w.shape[0] for w in self.weights[: self.hidden_layers + 1]
        )

    @property
    def n_sigma(self) -> int:
        return sum(w.shape[0] for w in self.weights[: self.hidden_layers])

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    def forward(self, x) -> np.ndarray:
        x = _as_vector(x, self.input_dim, "input")
        h = x
        for l in range(self.hidden_layers):
            h = self.activation(self.weights[l] @ h)
        return self.weights[self.hidden_layers] @ h + self.weights[-1] @ x

    def signals(self, x) -> SignalStack:
        """Collect the input and output of every activation, in layer order."""
        x = _as_vector(x, self.input_dim, "input")
        xs, ws = [], []
        h = x
        for l in range(self.hidden_layers):
            xi = self.weights[l] @ h
            h = self.activation(xi)
            xs.append(xi)
            ws.append(h)
        return SignalStack(np.concatenate(xs), np.concatenate(ws))

    def negate_input(self) -> "NeuralNet":
        """Network computing x -> self(-x), i.e. W1 and the shortcut negated."""
        ws = list(self.weights)
        ws[0] = -ws[0]
        ws[-1] = -ws[-1]
        return NeuralNet(tuple(ws), self.activation, self.alpha.copy(), self.beta.copy())

    def to_json(self) -> dict:
        return {
            "L": self.hidden_layers,
            "widths": list(self.widths),
            "weights": [w.tolist() for w in self.weights],
            "activation": self.activation.to_json(),
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "NeuralNet":
        ws = tuple(np.asarray(w, dtype=float) for w in d["weights"])
        act = Activation.from_json(d["activation"])
        alpha = np.asarray(d["alpha"], float) if "alpha" in d else None
        beta = np.asarray(d["beta"], float) if "beta" in d else None
        net = cls(ws, act, alpha, beta)
        if "L" in d and d["L"] != net.hidden_layers:
            raise ValueError(f"declared L={d['L']} but weights give L={net.hidden_layers}")
        return net


@dataclass(frozen=True)
class ShapedNN:
    """Network with linear input/output shaping: x -> out_shape @ net(in_shape @ x)."""

    net: NeuralNet
    in_shape: np.ndarray
    out_shape: np.ndarray

    def __post_init__(self):
        t1 = np.atleast_2d(np.asarray(self.in_shape, float))
        t2 = np.atleast_2d(np.asarray(self.out_shape, float))
        if t1.shape[0] != self.net.input_dim:
            raise ValueError(
                f"in_shape rows {t1.shape[0]} != network input dim {self.net.input_dim}"
            )
        if t2.shape[1] != self.net.output_dim:
            raise ValueError(
                f"out_shape cols {t2.shape[1]} != network output dim {self.net.output_dim}"
            )
        object.__setattr__(self, "in_shape", t1)
        object.__setattr__(self, "out_shape", t2)

    @property
    def ambient_dim(self) -> int:
        return self.in_shape.shape[1]

    @property
    def shaped_output_dim(self) -> int:
        return self.out_shape.shape[0]

    def forward(self, x) -> np.ndarray:
        return self.out_shape @ self.net.forward(self.in_shape @ np.asarray(x, float))

    def signals(self, x) -> SignalStack:
        return self.net.signals(self.in_shape @ np.asarray(x, float))


@dataclass(frozen=True)
class IsolationForm:
    """Linear maps exposing a network (or stack of networks) around its nonlinearity.

    With z = [x; w] (ambient input and all post-activation signals),

        io_map   @ z = [x; shaped output],
        loop_map @ z = [xi; w],

    and the four blocks satisfy io_map = [[I, 0], [out_from_x, out_from_w]],
    loop_map = [[pre_from_x, pre_from_w], [0, I]].
    """

    out_from_x: np.ndarray
    out_from_w: np.ndarray
    pre_from_x: np.ndarray
    pre_from_w: np.ndarray
    io_map: np.ndarray
    loop_map: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray

    @property
    def n_sigma(self) -> int:
        return self.alpha.size

    @property
    def ambient_dim(self) -> int:
        return self.out_from_x.shape[1]

    @property
    def output_dim(self) -> int:
        return self.out_from_x.shape[0]


def _as_vector(x, dim: int, what: str) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (dim,):
        raise ValueError(f"{what} must be a vector of length {dim}, got shape {x.shape}")
    return x


def _isolation_blocks(snn: ShapedNN):
    """Blocks of the single-network isolation, with shaping folded in."""
    net, t1, t2 = snn.net, snn.in_shape, snn.out_shape
    L = net.hidden_layers
    n_sig = net.n_sigma
    n_amb = snn.ambient_dim
    n_out = snn.shaped_output_dim
    hidden = [w.shape[0] for w in net.weights[:L]]
    offs = np.concatenate([[0], np.cumsum(hidden)])

    out_x = t2 @ net.weights[-1] @ t1
    out_w = np.zeros((n_out, n_sig))
    out_w[:, offs[L - 1]:offs[L]] = t2 @ net.weights[L]
    pre_x = np.zeros((n_sig, n_amb))
    pre_x[offs[0]:offs[1], :] = net.weights[0] @ t1
    pre_w = np.zeros((n_sig, n_sig))
    for l in range(1, L):
        pre_w[offs[l]:offs[l + 1], offs[l - 1]:offs[l]] = net.weights[l]
    return out_x, out_w, pre_x, pre_w


def _assemble(out_x, out_w, pre_x, pre_w, alpha, beta) -> IsolationForm:
    n_out, n_amb = out_x.shape
    n_sig = pre_x.shape[0]
    io_map = np.block(
        [[np.eye(n_amb), np.zeros((n_amb, n_sig))], [out_x, out_w]]
    )
    loop_map = np.block(
        [[pre_x, pre_w], [np.zeros((n_sig, n_amb)), np.eye(n_sig)]]
    )
    return IsolationForm(out_x, out_w, pre_x, pre_w, io_map, loop_map, alpha, beta)


def isolate(snn: ShapedNN) -> IsolationForm:
    """Isolation form of a single shaped network."""
    out_x, out_w, pre_x, pre_w = _isolation_blocks(snn)
    return _assemble(out_x, out_w, pre_x, pre_w, snn.net.alpha, snn.net.beta)


def isolate_vector(snns: list) -> IsolationForm:
    """Isolation form of a stack of shaped networks sharing one ambient input.

    The stacked output is the concatenation of the shaped outputs; the
    cross-network blocks of the w/xi maps are exactly zero (block diagonal).
    """
    if not snns:
        raise ValueError("need at least one network")
    n_amb = snns[0].ambient_dim
    for k, s in enumerate(snns):
        if s.ambient_dim != n_amb:
            raise ValueError(
                f"network {k} has ambient dim {s.ambient_dim}, expected {n_amb}"
            )
    blocks = [_isolation_blocks(s) for s in snns]
    sigs = [s.net.n_sigma for s in snns]
    outs = [s.shaped_output_dim for s in snns]
    n_sig, n_out = sum(sigs), sum(outs)
    soff = np.concatenate([[0], np.cumsum(sigs)])
    ooff = np.concatenate([[0], np.cumsum(outs)])

    out_x = np.vstack([b[0] for b in blocks])
    pre_x = np.vstack([b[2] for b in blocks])
    out_w = np.zeros((n_out, n_sig))
    pre_w = np.zeros((n_sig, n_sig))
    for k, b in enumerate(blocks):
        out_w[ooff[k]:ooff[k + 1], soff[k]:soff[k + 1]] = b[1]
        pre_w[soff[k]:soff[k + 1], soff[k]:soff[k + 1]] = b[3]
    alpha = np.concatenate([s.net.alpha for s in snns])
    beta = np.concatenate([s.net.beta for s in snns])
    return _assemble(out_x, out_w, pre_x, pre_w, alpha, beta)
