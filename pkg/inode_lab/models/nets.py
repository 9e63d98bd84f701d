"""
Small trainable building blocks: MLPs and a gated recurrent encoder.

Parameters are passed as a mapping from dotted names to arrays (plain mode) or
diffnum nodes (tape mode); every network reads its tensors under a name prefix.
"""

from __future__ import annotations

from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from inode_lab.core.exceptions import ContractError, ShapeError
from inode_lab.models.params import ModelParams
from inode_lab.numerics import diffnum
from inode_lab.numerics.diffnum import ACTIVATIONS, ArrayLike, value_of
from inode_lab.schemas.model import MlpSpec, RnnSpec

ParamMap = Mapping[str, ArrayLike]
Layout = Dict[str, Tuple[int, ...]]


# ---------------------------------------------------------------------------
# MLP
# ---------------------------------------------------------------------------

def mlp_layout(spec: MlpSpec, prefix: str) -> Layout:
    layout: Layout = {}
    for i in range(spec.n_layers):
        layout[f"{prefix}.w{i}"] = (spec.widths[i], spec.widths[i + 1])
        layout[f"{prefix}.b{i}"] = (spec.widths[i + 1],)
    return layout


def mlp_forward(spec: MlpSpec, params: ParamMap, x: ArrayLike, prefix: str) -> ArrayLike:
    """Affine + activation stack over the last axis of ``x`` (rank 1 to 3)."""
    shape = value_of(x).shape
    if not shape or shape[-1] != spec.widths[0]:
        raise ShapeError(f"mlp {prefix}", shape, (spec.widths[0],))
    squeeze = len(shape) == 1
    h = diffnum.reshape(x, (1, shape[0])) if squeeze else x

    act = ACTIVATIONS[spec.activation]
    for i in range(spec.n_layers):
        h = diffnum.matmul(h, params[f"{prefix}.w{i}"]) + params[f"{prefix}.b{i}"]
        if i < spec.n_layers - 1:
            h = act(h)
        elif spec.final_activation is not None:
            h = ACTIVATIONS[spec.final_activation](h)

    return diffnum.reshape(h, (spec.widths[-1],)) if squeeze else h


# ---------------------------------------------------------------------------
# Gated recurrent encoder
# ---------------------------------------------------------------------------

_GATES = ("z", "r", "h")


def rnn_layout(spec: RnnSpec, prefix: str) -> Layout:
    layout: Layout = {}
    for gate in _GATES:
        layout[f"{prefix}.w{gate}"] = (spec.input_dim, spec.hidden_dim)
        layout[f"{prefix}.u{gate}"] = (spec.hidden_dim, spec.hidden_dim)
        layout[f"{prefix}.b{gate}"] = (spec.hidden_dim,)
    layout[f"{prefix}.wo"] = (spec.hidden_dim, spec.output_dim)
    layout[f"{prefix}.bo"] = (spec.output_dim,)
    return layout


def gru_step(params: ParamMap, prefix: str, x_t: ArrayLike, h: ArrayLike) -> ArrayLike:
    """One gated update: h' = (1 - z) * n + z * h."""
    p = lambda name: params[f"{prefix}.{name}"]  # noqa: E731
    z = diffnum.sigmoid(diffnum.matmul(x_t, p("wz")) + diffnum.matmul(h, p("uz")) + p("bz"))
    r = diffnum.sigmoid(diffnum.matmul(x_t, p("wr")) + diffnum.matmul(h, p("ur")) + p("br"))
    n = diffnum.tanh(diffnum.matmul(x_t, p("wh")) + diffnum.matmul(r * h, p("uh")) + p("bh"))
    return (1.0 - z) * n + z * h


def rnn_encode(spec: RnnSpec, params: ParamMap, seq: ArrayLike, prefix: str) -> ArrayLike:
    """
    Run the recurrent cell over ``seq`` ([T, D] or [B, T, D]) from the last frame to
    the first and return the linear readout of the final hidden state.
    """
    shape = value_of(seq).shape
    if len(shape) not in (2, 3):
        raise ShapeError(f"rnn {prefix}", shape)
    if shape[-2] < 1:
        raise ContractError(f"rnn {prefix}: empty sequence")
    if shape[-1] != spec.input_dim:
        raise ShapeError(f"rnn {prefix}", shape, (spec.input_dim,))

    batched = len(shape) == 3
    if not batched:
        seq = diffnum.reshape(seq, (1,) + tuple(shape))
    n_batch, n_steps = value_of(seq).shape[:2]

    h: ArrayLike = np.zeros((n_batch, spec.hidden_dim), dtype=np.float64)
    for t in reversed(range(n_steps)):
        h = gru_step(params, prefix, seq[:, t, :], h)

    out = diffnum.matmul(h, params[f"{prefix}.wo"]) + params[f"{prefix}.bo"]
    return out if batched else diffnum.reshape(out, (spec.output_dim,))


# ---------------------------------------------------------------------------
# Initialisation
# ---------------------------------------------------------------------------

def glorot_uniform(rng: np.random.Generator, shape: Tuple[int, ...]) -> np.ndarray:
    fan_in, fan_out = shape[0], shape[1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(
    layout: Mapping[str, Tuple[int, ...]],
    seed: int,
    constants: Optional[Mapping[str, float]] = None,
) -> ModelParams:
    """Glorot-uniform matrices, zero vectors, optional named constants."""
    params = ModelParams(layout)
    rng = np.random.default_rng(seed)
    constants = constants or {}
    for name, shape in params.layout.items():
        if name in constants:
            params[name] = np.full(shape, constants[name], dtype=np.float64)
        elif len(shape) == 2:
            params[name] = glorot_uniform(rng, shape)
    return params
