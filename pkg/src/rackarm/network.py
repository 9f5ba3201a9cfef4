"""Gated correction network over the segment sequence.

Per-segment expert MLPs embed a 15-feature state; a bidirectional GRU
mixes information along the backbone in both directions; two small heads
read the concatenated code: one predicts a residual local-pose increment,
the other emits a per-axis gate that blends the prediction with the
nominal physics increment.  A positive gate bias starts the blend leaning
on the physics.

All math runs on the autodiff Tensors so training and the differentiable
recomposition can backpropagate through everything here.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import InvalidInputError, NumericFaultError, UsageError

CHECKPOINT_FORMAT = 1

STATE_WIDTH = 15
# Feature layout of one per-segment state row.
_FIELD_SLICES = {
    "q": slice(0, 2),
    "dq_hist": slice(2, 4),
    "x_loc": slice(4, 7),
    "dq_cmd": slice(7, 9),
    "j_flat": slice(9, 15),
}

DEFAULT_HIDDEN = 128
DEFAULT_GRU_HIDDEN = 128
DEFAULT_HEAD_HIDDEN = 64
DEFAULT_GATE_BIAS = 2.0
# Ceiling on the trust gate. Gradient reaches the prediction head only
# through the (1 - beta) factor, so a gate pinned at 1 would leave that
# channel's slopes untrained while the deployment lift still reads them.
GATE_CEILING = 0.9
EXPERT_BLOCKS = 2


@dataclass
class NetworkParams:
    """All weights plus the frozen input normalization.

    ``tensors`` maps parameter names to autodiff Tensors (requires_grad).
    ``norm_mean`` / ``norm_std`` are the per-feature affine constants the
    encoder applies; they are data statistics, not trainable.
    """

    n_segments: int
    hidden: int
    gru_hidden: int
    head_hidden: int
    gate_bias: float
    norm_mean: np.ndarray
    norm_std: np.ndarray
    tensors: dict[str, Tensor] = field(default_factory=dict)

    @property
    def code_width(self) -> int:
        return self.hidden + 2 * self.gru_hidden + 6

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def gradients(self) -> dict[str, np.ndarray]:
        return {
            name: (np.zeros_like(t.data) if t.grad is None else t.grad)
            for name, t in self.tensors.items()
        }


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, shape)


def init_params(
    seed: int,
    n_segments: int,
    hidden: int = DEFAULT_HIDDEN,
    gru_hidden: int = DEFAULT_GRU_HIDDEN,
    head_hidden: int = DEFAULT_HEAD_HIDDEN,
    gate_bias: float = DEFAULT_GATE_BIAS,
) -> NetworkParams:
    """Fresh weights: fan-in-scaled uniform, identity normalization."""
    rng = np.random.default_rng(seed)
    weights: dict[str, np.ndarray] = {}

    for i in range(n_segments):
        weights[f"expert{i}_stem_w"] = _uniform(rng, STATE_WIDTH, (STATE_WIDTH, hidden))
        weights[f"expert{i}_stem_b"] = np.zeros(hidden)
        weights[f"expert{i}_stem_g"] = np.ones(hidden)
        weights[f"expert{i}_stem_s"] = np.zeros(hidden)
        for r in range(EXPERT_BLOCKS):
            base = f"expert{i}_res{r}"
            weights[f"{base}_w"] = _uniform(rng, hidden, (hidden, hidden))
            weights[f"{base}_b"] = np.zeros(hidden)
            weights[f"{base}_g"] = np.ones(hidden)
            weights[f"{base}_s"] = np.zeros(hidden)

    for direction in ("fwd", "bwd"):
        weights[f"gru_{direction}_w"] = _uniform(rng, hidden, (hidden, 3 * gru_hidden))
        weights[f"gru_{direction}_u"] = _uniform(rng, gru_hidden, (gru_hidden, 3 * gru_hidden))
        weights[f"gru_{direction}_bx"] = np.zeros(3 * gru_hidden)
        weights[f"gru_{direction}_bh"] = np.zeros(3 * gru_hidden)

    code = hidden + 2 * gru_hidden + 6
    for head in ("pred", "gate"):
        weights[f"{head}_w1"] = _uniform(rng, code, (code, head_hidden))
        weights[f"{head}_b1"] = np.zeros(head_hidden)
        weights[f"{head}_w2"] = _uniform(rng, head_hidden, (head_hidden, 3))
        weights[f"{head}_b2"] = np.zeros(3)

    return NetworkParams(
        n_segments=n_segments,
        hidden=hidden,
        gru_hidden=gru_hidden,
        head_hidden=head_hidden,
        gate_bias=float(gate_bias),
        norm_mean=np.zeros(STATE_WIDTH),
        norm_std=np.ones(STATE_WIDTH),
        tensors={k: Tensor(v, requires_grad=True) for k, v in weights.items()},
    )


def set_normalization(params: NetworkParams, mean: np.ndarray, std: np.ndarray):
    """Freeze per-feature affine constants (std floored away from zero)."""
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    if mean.shape != (STATE_WIDTH,) or std.shape != (STATE_WIDTH,):
        raise InvalidInputError("normalization constants must have width 15")
    params.norm_mean = mean
    params.norm_std = np.maximum(std, 1e-6)


# -- state encoding ------------------------------------------------------------


def encode_state(q, dq_hist, dq_cmd, shape_local, jac, params: NetworkParams | None = None):
    """Assemble the per-segment feature rows (N x 15).

    ``shape_local`` accepts a ShapeState or a raw (N, 3) array of local
    poses; ``jac`` accepts a PhysicalJacobian or raw (N, 3, 2) blocks.
    When ``params`` is given, rows are standardized with its stored affine
    constants; otherwise raw values are returned.
    """
    local = np.asarray(getattr(shape_local, "local", shape_local), dtype=float)
    blocks = np.asarray(getattr(jac, "local_blocks", jac), dtype=float)
    q = np.asarray(q, dtype=float)
    dq_hist = np.asarray(dq_hist, dtype=float)
    dq_cmd = np.asarray(dq_cmd, dtype=float)
    n = local.shape[0] if local.ndim == 2 else 0
    if (
        local.shape != (n, 3)
        or blocks.shape != (n, 3, 2)
        or q.shape != (2 * n,)
        or dq_hist.shape != (2 * n,)
        or dq_cmd.shape != (2 * n,)
    ):
        raise InvalidInputError("encode_state: inconsistent input dimensions")
    rows = np.concatenate(
        [
            q.reshape(n, 2),
            dq_hist.reshape(n, 2),
            local,
            dq_cmd.reshape(n, 2),
            blocks.reshape(n, 6),
        ],
        axis=1,
    )
    if params is not None:
        rows = (rows - params.norm_mean) / params.norm_std
    return rows


def decode_state(rows: np.ndarray, params: NetworkParams | None = None) -> dict:
    """Invert encode_state back to named raw fields."""
    rows = np.asarray(rows, dtype=float)
    if rows.ndim != 2 or rows.shape[1] != STATE_WIDTH:
        raise InvalidInputError("decode_state: rows must be (N, 15)")
    if params is not None:
        rows = rows * params.norm_std + params.norm_mean
    return {name: rows[:, sl].copy() for name, sl in _FIELD_SLICES.items()}


# -- forward / backward ---------------------------------------------------------


def _check_finite(t: Tensor, where: str):
    if not np.all(np.isfinite(t.data)):
        raise NumericFaultError("non-finite activations", where=where)


def _expert(params: NetworkParams, i: int, x: Tensor) -> Tensor:
    p = params.tensors
    h = x @ p[f"expert{i}_stem_w"] + p[f"expert{i}_stem_b"]
    h = ad.gelu(ad.layer_norm(h, p[f"expert{i}_stem_g"], p[f"expert{i}_stem_s"]))
    for r in range(EXPERT_BLOCKS):
        base = f"expert{i}_res{r}"
        inner = h @ p[f"{base}_w"] + p[f"{base}_b"]
        inner = ad.gelu(ad.layer_norm(inner, p[f"{base}_g"], p[f"{base}_s"]))
        h = h + inner
    _check_finite(h, f"expert{i}")
    return h


def _gru_cell(params: NetworkParams, direction: str, x: Tensor, h: Tensor) -> Tensor:
    p = params.tensors
    k = params.gru_hidden
    gx = x @ p[f"gru_{direction}_w"] + p[f"gru_{direction}_bx"]
    gh = h @ p[f"gru_{direction}_u"] + p[f"gru_{direction}_bh"]
    reset = ad.sigmoid(gx[:, :k] + gh[:, :k])
    update = ad.sigmoid(gx[:, k : 2 * k] + gh[:, k : 2 * k])
    candidate = ad.tanh(gx[:, 2 * k :] + reset * gh[:, 2 * k :])
    one = Tensor(1.0)
    return (one - update) * candidate + update * h


def _head(params: NetworkParams, name: str, z: Tensor) -> Tensor:
    p = params.tensors
    hidden = ad.gelu(z @ p[f"{name}_w1"] + p[f"{name}_b1"])
    return hidden @ p[f"{name}_w2"] + p[f"{name}_b2"]


@dataclass
class ForwardResult:
    """Outputs of one forward pass; keeps the graph for a backward call."""

    dx_hybrid: np.ndarray
    dx_net: np.ndarray
    beta: np.ndarray
    _nodes: tuple | None = None  # (hybrid, net, beta) Tensors


def forward_graph(params: NetworkParams, states, dx_nom) -> tuple[Tensor, Tensor, Tensor]:
    """Tensor-valued forward pass; leading batch axis optional.

    Returns (dx_hybrid, dx_net, beta), each (B, N, 3), as graph nodes.
    ``states`` and ``dx_nom`` may be Tensors (to differentiate through the
    inputs) or plain arrays.
    """
    states = ad.as_tensor(states)
    dx_nom = ad.as_tensor(dx_nom)
    if states.ndim == 2:
        states = states.reshape(1, *states.shape)
        dx_nom = dx_nom.reshape(1, *dx_nom.shape)
    batch, n, width = states.shape
    if n != params.n_segments or width != STATE_WIDTH:
        raise InvalidInputError(
            f"states must be (B, {params.n_segments}, {STATE_WIDTH}), got {states.shape}"
        )

    codes = [_expert(params, i, states[:, i, :]) for i in range(n)]

    zeros = Tensor(np.zeros((batch, params.gru_hidden)))
    h_fwd: list[Tensor] = [None] * n
    h = zeros
    for i in range(n):
        h = _gru_cell(params, "fwd", codes[i], h)
        h_fwd[i] = h
    h_bwd: list[Tensor] = [None] * n
    h = zeros
    for i in reversed(range(n)):
        h = _gru_cell(params, "bwd", codes[i], h)
        h_bwd[i] = h
    _check_finite(h_fwd[-1], "gru_fwd")
    _check_finite(h_bwd[0], "gru_bwd")

    hybrid_parts, net_parts, beta_parts = [], [], []
    for i in range(n):
        j_flat = states[:, i, _FIELD_SLICES["j_flat"]]
        z = ad.concat([codes[i], h_fwd[i], h_bwd[i], j_flat], axis=1)
        dx_net_i = _head(params, "pred", z)
        beta_i = ad.sigmoid(_head(params, "gate", z) + params.gate_bias) * Tensor(GATE_CEILING)
        nom_i = dx_nom[:, i, :]
        hybrid_parts.append(beta_i * nom_i + (Tensor(1.0) - beta_i) * dx_net_i)
        net_parts.append(dx_net_i)
        beta_parts.append(beta_i)

    dx_hybrid = ad.stack(hybrid_parts, axis=1)
    dx_net = ad.stack(net_parts, axis=1)
    beta = ad.stack(beta_parts, axis=1)
    _check_finite(dx_net, "pred_head")
    _check_finite(beta, "gate_head")
    return dx_hybrid, dx_net, beta


def forward(params: NetworkParams, states: np.ndarray, dx_nom: np.ndarray) -> ForwardResult:
    """Numpy-in / numpy-out forward pass keeping the graph for backward()."""
    states = np.asarray(states, dtype=float)
    squeeze = states.ndim == 2
    hybrid, net, beta = forward_graph(params, states, dx_nom)
    result = ForwardResult(
        dx_hybrid=hybrid.data[0] if squeeze else hybrid.data,
        dx_net=net.data[0] if squeeze else net.data,
        beta=beta.data[0] if squeeze else beta.data,
        _nodes=(hybrid, net, beta),
    )
    return result


def backward(
    params: NetworkParams,
    result: ForwardResult,
    upstream_hybrid: np.ndarray,
    upstream_net: np.ndarray | None = None,
    upstream_beta: np.ndarray | None = None,
) -> dict[str, np.ndarray]:
    """Vector-Jacobian product: parameter gradients for given output grads.

    Consumes the recorded graph; calling twice (or on a result without a
    graph) is a usage error.
    """
    if result._nodes is None:
        raise UsageError("backward requires a fresh forward pass")
    hybrid, net, beta = result._nodes
    result._nodes = None

    def seed(node: Tensor, grad) -> Tensor:
        g = np.asarray(grad, dtype=float).reshape(node.shape)
        return (node * Tensor(g)).sum()

    proxy = seed(hybrid, upstream_hybrid)
    if upstream_net is not None:
        proxy = proxy + seed(net, upstream_net)
    if upstream_beta is not None:
        proxy = proxy + seed(beta, upstream_beta)
    params.zero_grad()
    proxy.backward()
    return params.gradients()


# -- checkpoints ----------------------------------------------------------------


def save_checkpoint(params: NetworkParams, path: str):
    """Self-describing JSON container with base64 float64 payloads."""
    doc = {
        "format_version": CHECKPOINT_FORMAT,
        "n_segments": params.n_segments,
        "hidden": params.hidden,
        "gru_hidden": params.gru_hidden,
        "head_hidden": params.head_hidden,
        "gate_bias": params.gate_bias,
        "norm_mean": params.norm_mean.tolist(),
        "norm_std": params.norm_std.tolist(),
        "tensors": {
            name: {
                "shape": list(t.data.shape),
                "data": base64.b64encode(np.ascontiguousarray(t.data).tobytes()).decode(),
            }
            for name, t in params.tensors.items()
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path: str) -> NetworkParams:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format_version") != CHECKPOINT_FORMAT:
        raise InvalidInputError(
            f"unsupported checkpoint format {doc.get('format_version')!r}"
        )
    tensors = {}
    for name, entry in doc["tensors"].items():
        data = np.frombuffer(base64.b64decode(entry["data"]), dtype=np.float64)
        tensors[name] = Tensor(data.reshape(entry["shape"]).copy(), requires_grad=True)
    return NetworkParams(
        n_segments=doc["n_segments"],
        hidden=doc["hidden"],
        gru_hidden=doc["gru_hidden"],
        head_hidden=doc["head_hidden"],
        gate_bias=doc["gate_bias"],
        norm_mean=np.asarray(doc["norm_mean"], dtype=float),
        norm_std=np.asarray(doc["norm_std"], dtype=float),
        tensors=tensors,
    )
