"""Recurrent cells, flat parameter vectors, and deterministic forward evaluation.

Three cell kinds share one interface:

* ``linear``: h_t = W_hh h_{t-1} + W_xh x_t, y_t = W_hy h_t (no biases,
  identity activation by construction).
* ``elman``: h_t = phi(W_hh h_{t-1} + W_xh x_t + b_h), y_t = W_hy h_t + b_y.
* ``lstm``: standard gated cell; the internal state is the concatenation
  [cell_state, hidden_activation] of length 2*d_h, and the output layer reads
  the hidden-activation half.

All learnable weights live in one flat float64 vector ``theta`` with a named
block layout, so optimizers and serialization never special-case the cell.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .linalg import DimensionError
from .rng import SplitMix64

CELL_KINDS = ("linear", "elman", "lstm")
ACTIVATIONS = ("tanh", "relu", "identity")

# LSTM gate row blocks, in fixed order: input, forget, cell candidate, output.
LSTM_GATES = ("i", "f", "g", "o")


class NonFiniteError(FloatingPointError):
    """A forward or backward pass produced NaN/Inf; names the first bad step."""

    def __init__(self, where: str, time_index: int):
        super().__init__(f"non-finite value in {where} at time index {time_index}")
        self.time_index = time_index


@dataclass(frozen=True)
class CellSpec:
    """Architecture choice: cell kind plus input/hidden/output widths."""

    kind: str
    d_x: int
    d_h: int
    d_y: int
    activation: str = "tanh"
    use_biases: bool = True

    def __post_init__(self):
        if self.kind not in CELL_KINDS:
            raise ValueError(f"unknown cell kind {self.kind!r}, expected one of {CELL_KINDS}")
        if min(self.d_x, self.d_h, self.d_y) < 1:
            raise ValueError("d_x, d_h, d_y must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.kind == "linear":
            # linear cells are bias-free with identity activation by definition
            if self.activation != "identity" or self.use_biases:
                raise ValueError("linear cells require activation='identity' and use_biases=False")
        if self.kind == "lstm" and self.activation != "tanh":
            raise ValueError("lstm cells use tanh internally; set activation='tanh'")

    @property
    def state_dim(self) -> int:
        return 2 * self.d_h if self.kind == "lstm" else self.d_h

    def to_json_dict(self) -> dict:
        return {
            "kind": self.kind,
            "d_x": self.d_x,
            "d_h": self.d_h,
            "d_y": self.d_y,
            "activation": self.activation,
            "use_biases": self.use_biases,
        }

    @staticmethod
    def from_json_dict(d: dict) -> "CellSpec":
        return CellSpec(
            kind=d["kind"],
            d_x=int(d["d_x"]),
            d_h=int(d["d_h"]),
            d_y=int(d["d_y"]),
            activation=d["activation"],
            use_biases=bool(d["use_biases"]),
        )


Layout = dict[str, tuple[int, int, tuple[int, ...]]]


def build_layout(spec: CellSpec) -> Layout:
    """Named blocks -> (start, stop, shape), partitioning [0, n) in order."""
    gate = 4 if spec.kind == "lstm" else 1
    blocks: list[tuple[str, tuple[int, ...]]] = [
        ("W_hh", (gate * spec.d_h, spec.d_h)),
        ("W_xh", (gate * spec.d_h, spec.d_x)),
    ]
    if spec.use_biases:
        blocks.append(("b_h", (gate * spec.d_h,)))
    blocks.append(("W_hy", (spec.d_y, spec.d_h)))
    if spec.use_biases:
        blocks.append(("b_y", (spec.d_y,)))

    layout: Layout = {}
    offset = 0
    for name, shape in blocks:
        size = int(np.prod(shape))
        layout[name] = (offset, offset + size, shape)
        offset += size
    return layout


def num_params(spec: CellSpec) -> int:
    layout = build_layout(spec)
    return max(stop for _, stop, _ in layout.values())


@dataclass
class Params:
    """Flat parameter vector plus its named block layout."""

    theta: np.ndarray
    spec: CellSpec
    layout: Layout = field(default_factory=dict)

    def __post_init__(self):
        if not self.layout:
            self.layout = build_layout(self.spec)
        self.theta = np.asarray(self.theta, dtype=np.float64)
        n = num_params(self.spec)
        if self.theta.shape != (n,):
            raise DimensionError(f"theta has shape {self.theta.shape}, expected ({n},)")

    def block(self, name: str) -> np.ndarray:
        """Copy of one named block, reshaped."""
        start, stop, shape = self.layout[name]
        return self.theta[start:stop].reshape(shape).copy()

    def unpack(self) -> dict[str, np.ndarray]:
        return {name: self.block(name) for name in self.layout}

    def with_block(self, name: str, value: np.ndarray) -> "Params":
        start, stop, shape = self.layout[name]
        value = np.asarray(value, dtype=np.float64)
        if value.shape != shape:
            raise DimensionError(f"block {name} has shape {shape}, got {value.shape}")
        theta = self.theta.copy()
        theta[start:stop] = value.reshape(-1)
        return Params(theta, self.spec, self.layout)

    def copy(self) -> "Params":
        return Params(self.theta.copy(), self.spec, self.layout)

    def to_json(self) -> str:
        return json.dumps(
            {
                "spec": self.spec.to_json_dict(),
                "layout": [[name, start, stop] for name, (start, stop, _) in self.layout.items()],
                "theta": self.theta.tolist(),
            }
        )

    @staticmethod
    def from_json(text: str) -> "Params":
        d = json.loads(text)
        spec = CellSpec.from_json_dict(d["spec"])
        params = Params(np.array(d["theta"], dtype=np.float64), spec)
        stored = [[name, start, stop] for name, (start, stop, _) in params.layout.items()]
        if stored != [list(row) for row in d["layout"]]:
            raise ValueError("stored layout does not match the spec-derived layout")
        return params


def pack(spec: CellSpec, blocks: dict[str, np.ndarray]) -> Params:
    """Inverse of unpack: assemble theta from named blocks."""
    layout = build_layout(spec)
    if set(blocks) != set(layout):
        raise ValueError(f"blocks {sorted(blocks)} do not match layout {sorted(layout)}")
    theta = np.empty(num_params(spec), dtype=np.float64)
    for name, (start, stop, shape) in layout.items():
        value = np.asarray(blocks[name], dtype=np.float64)
        if value.shape != shape:
            raise DimensionError(f"block {name} has shape {shape}, got {value.shape}")
        theta[start:stop] = value.reshape(-1)
    return Params(theta, spec, layout)


def init_params(spec: CellSpec, seed: int) -> Params:
    """Seeded init: weights uniform on [-1/sqrt(d_h), 1/sqrt(d_h)], biases zero,
    LSTM forget-gate bias 1.0."""
    rng = SplitMix64(seed)
    scale = 1.0 / np.sqrt(spec.d_h)
    layout = build_layout(spec)
    theta = np.zeros(num_params(spec), dtype=np.float64)
    for name, (start, stop, _) in layout.items():
        if name.startswith("W_"):
            theta[start:stop] = rng.uniforms(stop - start, -scale, scale)
    if spec.kind == "lstm" and spec.use_biases:
        start, _, _ = layout["b_h"]
        theta[start + spec.d_h : start + 2 * spec.d_h] = 1.0
    return Params(theta, spec, layout)


@dataclass
class Trajectory:
    """Forward-pass record: hidden[t] is the state after t inputs (hidden[0] = h0)."""

    hidden: np.ndarray  # (T'+1, state_dim)
    outputs: np.ndarray  # (T', d_y)


def _activation(kind: str, a: np.ndarray) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(a)
    if kind == "relu":
        return np.maximum(a, 0.0)
    return a


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def batched_forward(
    params: Params, h0: np.ndarray, inputs: np.ndarray, keep_cache: bool = False
) -> tuple[np.ndarray, np.ndarray, dict]:
    """Run the recursion on a batch of sequences sharing one parameter vector.

    h0: (B, state_dim); inputs: (B, T', d_x). Returns (states (B, T'+1, sd),
    outputs (B, T', d_y), cache). The cache holds what the backward pass needs
    (LSTM gate activations; Elman derivatives are recomputed from the states).
    """
    spec = params.spec
    blocks = params.unpack()
    B, T, d_x = inputs.shape
    if d_x != spec.d_x:
        raise DimensionError(f"inputs have d_x={d_x}, spec wants {spec.d_x}")
    if h0.shape != (B, spec.state_dim):
        raise DimensionError(f"h0 has shape {h0.shape}, expected ({B}, {spec.state_dim})")

    W_hh, W_xh, W_hy = blocks["W_hh"], blocks["W_xh"], blocks["W_hy"]
    b_h = blocks.get("b_h")
    b_y = blocks.get("b_y")
    d_h = spec.d_h

    states = np.empty((B, T + 1, spec.state_dim), dtype=np.float64)
    states[:, 0] = h0
    cache: dict = {}
    if spec.kind == "lstm" and keep_cache:
        cache["gates"] = np.empty((B, T, 4 * d_h), dtype=np.float64)
        cache["tanh_c"] = np.empty((B, T, d_h), dtype=np.float64)

    # overflow surfaces as a NonFiniteError below, not as a warning
    with np.errstate(over="ignore", invalid="ignore"):
        h = h0
        if spec.kind == "lstm":
            for t in range(T):
                c_prev, hh_prev = h[:, :d_h], h[:, d_h:]
                z = inputs[:, t] @ W_xh.T + hh_prev @ W_hh.T
                if b_h is not None:
                    z = z + b_h
                gi = _sigmoid(z[:, :d_h])
                gf = _sigmoid(z[:, d_h : 2 * d_h])
                gg = np.tanh(z[:, 2 * d_h : 3 * d_h])
                go = _sigmoid(z[:, 3 * d_h :])
                c_new = gf * c_prev + gi * gg
                tanh_c = np.tanh(c_new)
                hh_new = go * tanh_c
                h = np.concatenate([c_new, hh_new], axis=1)
                states[:, t + 1] = h
                if keep_cache:
                    cache["gates"][:, t] = np.concatenate([gi, gf, gg, go], axis=1)
                    cache["tanh_c"][:, t] = tanh_c
        else:
            for t in range(T):
                a = h @ W_hh.T + inputs[:, t] @ W_xh.T
                if b_h is not None:
                    a = a + b_h
                h = _activation(spec.activation, a)
                states[:, t + 1] = h

        read = states[:, 1:, d_h:] if spec.kind == "lstm" else states[:, 1:]
        outputs = read @ W_hy.T
        if b_y is not None:
            outputs = outputs + b_y

    if not np.all(np.isfinite(states)) or not np.all(np.isfinite(outputs)):
        for t in range(T):
            if not (np.all(np.isfinite(states[:, t + 1])) and np.all(np.isfinite(outputs[:, t]))):
                raise NonFiniteError("forward pass", t + 1)
    return states, outputs, cache


def forward(params: Params, h0, inputs) -> Trajectory:
    """Deterministic forward evaluation of one sequence from a given initial state.

    ``inputs`` is a (T', d_x) array (or sequence of length-d_x vectors);
    ``h0`` may be None for the zero state.
    """
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"inputs must be (T', d_x), got shape {x.shape}")
    if h0 is None:
        h0 = np.zeros(params.spec.state_dim)
    h0 = np.asarray(h0, dtype=np.float64)
    if h0.shape != (params.spec.state_dim,):
        raise DimensionError(f"h0 has shape {h0.shape}, expected ({params.spec.state_dim},)")
    states, outputs, _ = batched_forward(params, h0[None, :], x[None, :, :])
    return Trajectory(hidden=states[0], outputs=outputs[0])


def output_at(params: Params, h0, inputs, t: int) -> np.ndarray:
    """Output y_t for 1-based t; identical semantics to forward(...).outputs[t-1]."""
    x = np.asarray(inputs, dtype=np.float64)
    if not 1 <= t <= x.shape[0]:
        raise IndexError(f"t={t} out of range [1, {x.shape[0]}]")
    return forward(params, h0, x[:t]).outputs[-1]


def zero_state(spec: CellSpec, batch: int | None = None) -> np.ndarray:
    if batch is None:
        return np.zeros(spec.state_dim)
    return np.zeros((batch, spec.state_dim))
