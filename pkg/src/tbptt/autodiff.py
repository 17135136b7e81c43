"""Reverse-mode differentiation through the unrolled recurrence.

The backward pass is exact over whatever sequence it is given: truncation
lives entirely in how callers segment the data, never inside the gradient.
``fd_gradient`` is the independent central-difference oracle used by tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import DimensionError
from .rnn_core import CellSpec, NonFiniteError, Params, batched_forward, pack


@dataclass
class Gradient:
    """Derivatives with respect to theta and the initial state."""

    d_theta: np.ndarray
    d_h0: np.ndarray


@dataclass
class Tape:
    """Cached forward pass: everything the backward sweep needs."""

    params: Params
    inputs: np.ndarray  # (B, T', d_x)
    states: np.ndarray  # (B, T'+1, state_dim)
    outputs: np.ndarray  # (B, T', d_y)
    cache: dict


def record(params: Params, h0: np.ndarray, inputs: np.ndarray) -> Tape:
    """Forward pass over a batch, keeping the activations backprop needs."""
    states, outputs, cache = batched_forward(params, h0, inputs, keep_cache=True)
    return Tape(params=params, inputs=inputs, states=states, outputs=outputs, cache=cache)


def _phi_prime(activation: str, h_new: np.ndarray) -> np.ndarray:
    # derivative from the cached post-activation; relu'(0) := 0
    if activation == "tanh":
        return 1.0 - h_new * h_new
    if activation == "relu":
        return (h_new > 0.0).astype(np.float64)
    return np.ones_like(h_new)


def backprop(tape: Tape, cograds: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reverse sweep for the scalar sum_t <cograds[:, t], y_t>.

    Returns (d_theta summed over the batch, d_h0 per batch row).
    """
    spec = tape.params.spec
    blocks = tape.params.unpack()
    B, T, _ = tape.inputs.shape
    if cograds.shape != tape.outputs.shape:
        raise DimensionError(
            f"cograds shape {cograds.shape} != outputs shape {tape.outputs.shape}"
        )
    if not np.all(np.isfinite(cograds)):
        bad = np.where(~np.isfinite(cograds).all(axis=(0, 2)))[0]
        raise NonFiniteError("output cogradients", int(bad[0]) + 1)

    W_hh, W_hy = blocks["W_hh"], blocks["W_hy"]
    d_h = spec.d_h
    read = tape.states[:, 1:, d_h:] if spec.kind == "lstm" else tape.states[:, 1:]

    grads: dict[str, np.ndarray] = {
        "W_hy": np.einsum("bti,btj->ij", cograds, read),
        "W_hh": np.zeros_like(W_hh),
        "W_xh": np.zeros_like(blocks["W_xh"]),
    }
    if spec.use_biases:
        grads["b_y"] = cograds.sum(axis=(0, 1))
        grads["b_h"] = np.zeros_like(blocks["b_h"])

    if spec.kind == "lstm":
        gates, tanh_c = tape.cache["gates"], tape.cache["tanh_c"]
        carry_dc = np.zeros((B, d_h))
        carry_dh = np.zeros((B, d_h))
        for t in range(T - 1, -1, -1):
            dh = cograds[:, t] @ W_hy + carry_dh
            gi = gates[:, t, :d_h]
            gf = gates[:, t, d_h : 2 * d_h]
            gg = gates[:, t, 2 * d_h : 3 * d_h]
            go = gates[:, t, 3 * d_h :]
            tc = tanh_c[:, t]
            c_prev = tape.states[:, t, :d_h]
            hh_prev = tape.states[:, t, d_h:]

            do = dh * tc
            dc = carry_dc + dh * go * (1.0 - tc * tc)
            dz = np.concatenate(
                [
                    dc * gg * gi * (1.0 - gi),
                    dc * c_prev * gf * (1.0 - gf),
                    dc * gi * (1.0 - gg * gg),
                    do * go * (1.0 - go),
                ],
                axis=1,
            )
            grads["W_xh"] += dz.T @ tape.inputs[:, t]
            grads["W_hh"] += dz.T @ hh_prev
            if spec.use_biases:
                grads["b_h"] += dz.sum(axis=0)
            carry_dh = dz @ W_hh
            carry_dc = dc * gf
        d_h0 = np.concatenate([carry_dc, carry_dh], axis=1)
    else:
        carry = np.zeros((B, d_h))
        for t in range(T - 1, -1, -1):
            dh = cograds[:, t] @ W_hy + carry
            da = dh * _phi_prime(spec.activation, tape.states[:, t + 1])
            grads["W_hh"] += da.T @ tape.states[:, t]
            grads["W_xh"] += da.T @ tape.inputs[:, t]
            if spec.use_biases:
                grads["b_h"] += da.sum(axis=0)
            carry = da @ W_hh
        d_h0 = carry

    return pack(spec, grads).theta, d_h0


def backward(params: Params, h0, inputs, output_cograds) -> Gradient:
    """Exact gradient of sum_t <cograds[t], y_t> w.r.t. theta and h0."""
    x = np.asarray(inputs, dtype=np.float64)
    cg = np.asarray(output_cograds, dtype=np.float64)
    if h0 is None:
        h0 = np.zeros(params.spec.state_dim)
    h0 = np.asarray(h0, dtype=np.float64)
    tape = record(params, h0[None, :], x[None, :, :])
    d_theta, d_h0 = backprop(tape, cg[None, :, :])
    return Gradient(d_theta=d_theta, d_h0=d_h0[0])


def weighted_loss(params: Params, h0: np.ndarray, inputs: np.ndarray,
                  targets: np.ndarray, weights: np.ndarray) -> float:
    """sum_{b,t} weights[b,t] * ||y_{b,t} - targets_{b,t}||^2 (value only)."""
    _, outputs, _ = batched_forward(params, h0, inputs)
    err = outputs - targets
    return float(np.sum(weights * np.sum(err * err, axis=2)))


def weighted_loss_grad(
    params: Params, h0: np.ndarray, inputs: np.ndarray,
    targets: np.ndarray, weights: np.ndarray,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Value and gradient of the weighted squared-error sum.

    weights: (B, T') nonnegative; entries of weight zero are excluded from the
    loss and contribute no cogradient. Returns (loss, d_theta, d_h0 (B, sd)).
    """
    tape = record(params, h0, inputs)
    err = tape.outputs - targets
    loss = float(np.sum(weights * np.sum(err * err, axis=2)))
    cograds = 2.0 * weights[:, :, None] * err
    d_theta, d_h0 = backprop(tape, cograds)
    return loss, d_theta, d_h0


def segment_weights(n_steps: int, m: int, batch: int = 1) -> np.ndarray:
    """Burn-in weighting of one segment: steps 1..m excluded, the rest averaged."""
    if not 0 <= m <= n_steps - 1:
        raise ValueError(f"burn-in m={m} out of range [0, {n_steps - 1}]")
    w = np.zeros((batch, n_steps))
    w[:, m:] = 1.0 / (n_steps - m)
    return w


def loss_grad(params: Params, segment, m: int) -> tuple[float, Gradient]:
    """Mean squared error of one segment after its burn-in, with exact gradient.

    The segment is run from the zero state; outputs at steps 1..m are excluded,
    steps m+1..N are averaged.
    """
    x = np.asarray(segment.inputs, dtype=np.float64)
    yd = np.asarray(segment.targets, dtype=np.float64)
    n = x.shape[0]
    w = segment_weights(n, m)
    h0 = np.zeros((1, params.spec.state_dim))
    loss, d_theta, d_h0 = weighted_loss_grad(params, h0, x[None], yd[None], w)
    return loss, Gradient(d_theta=d_theta, d_h0=d_h0[0])


def fd_gradient(params: Params, segment, m: int, step: float = 1e-5) -> Gradient:
    """Central-difference gradient of the segment loss; test oracle only."""
    x = np.asarray(segment.inputs, dtype=np.float64)[None]
    yd = np.asarray(segment.targets, dtype=np.float64)[None]
    w = segment_weights(x.shape[1], m)
    h0 = np.zeros((1, params.spec.state_dim))

    def value(theta: np.ndarray, h: np.ndarray) -> float:
        return weighted_loss(Params(theta, params.spec, params.layout), h, x, yd, w)

    d_theta = np.zeros_like(params.theta)
    for k in range(params.theta.size):
        up = params.theta.copy()
        dn = params.theta.copy()
        up[k] += step
        dn[k] -= step
        d_theta[k] = (value(up, h0) - value(dn, h0)) / (2.0 * step)

    d_h0 = np.zeros(params.spec.state_dim)
    for k in range(d_h0.size):
        up = h0.copy()
        dn = h0.copy()
        up[0, k] += step
        dn[0, k] -= step
        d_h0[k] = (value(params.theta, up) - value(params.theta, dn)) / (2.0 * step)
    return Gradient(d_theta=d_theta, d_h0=d_h0)
