"""Loss construction and the optimization loop for the correction network.

The loss has two views of the same prediction: a local term on per-segment
pose increments (orientation-heavy, since proximal angle errors amplify
down the chain) and a global term that recomposes the predicted increments
onto the ground-truth frame chain and penalizes the resulting node poses.
Both are Huber-robust.  Optimization is Adam with global-norm clipping and
a cosine step-size schedule, keeping the best validation checkpoint.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .dataset import TrainingSample, stack_dataset
from .errors import InvalidInputError, NumericFaultError
from .geometry import decompose_chain
from .network import NetworkParams, forward_graph, set_normalization


@dataclass(frozen=True)
class LossWeights:
    """Channel weights and Huber scales for both loss terms."""

    w_x: float = 1.0
    w_y: float = 1.0
    w_theta: float = 10.0
    lambda_local: float = 0.5
    huber_delta_xy: float = 1.0  # mm
    huber_delta_theta: float = 0.02  # rad

    def __post_init__(self):
        if not (self.w_theta > self.w_x and self.w_theta > self.w_y):
            raise InvalidInputError("w_theta must dominate w_x and w_y")
        for name in ("w_x", "w_y", "lambda_local", "huber_delta_xy", "huber_delta_theta"):
            if getattr(self, name) <= 0:
                raise InvalidInputError(f"{name} must be positive")


@dataclass
class OptConfig:
    """Optimizer and schedule settings, recorded in the log header."""

    epochs: int = 40
    batch_size: int = 256
    learning_rate: float = 1e-3
    min_lr_fraction: float = 0.05
    warmup_steps: int = 50
    clip_norm: float = 1.0
    val_fraction: float = 0.1
    seed: int = 0

    def describe(self) -> str:
        return (
            f"optimizer=adam lr={self.learning_rate} min_lr_frac={self.min_lr_fraction} "
            f"warmup_steps={self.warmup_steps} clip_norm={self.clip_norm} "
            f"batch_size={self.batch_size} epochs={self.epochs} "
            f"val_fraction={self.val_fraction} seed={self.seed}"
        )


def differentiable_fk(x_gt_global_t: np.ndarray, dx_local_pred) -> Tensor:
    """Predicted next global poses from local increments, differentiably.

    The ground-truth chain at t provides the base frames; each predicted
    local increment is added to the corresponding local pose and the chain
    is recomposed with graph-tracked rotations, so gradients flow from any
    global-pose loss back into ``dx_local_pred``.

    Accepts (N, 3) or batched (B, N, 3) inputs; returns matching shape.
    """
    x_t = np.asarray(x_gt_global_t, dtype=float)
    dx = ad.as_tensor(dx_local_pred)
    squeeze = x_t.ndim == 2
    if squeeze:
        x_t = x_t[None]
        dx = dx.reshape(1, *dx.shape)
    if x_t.shape != dx.shape:
        raise InvalidInputError(
            f"pose/increment shape mismatch: {x_t.shape} vs {dx.shape}"
        )
    base_local = np.stack([decompose_chain(w) for w in x_t])
    local = Tensor(base_local) + dx

    batch, n, _ = x_t.shape
    x = Tensor(np.zeros(batch))
    y = Tensor(np.zeros(batch))
    phi = Tensor(np.zeros(batch))
    nodes = []
    for i in range(n):
        lx = local[:, i, 0]
        ly = local[:, i, 1]
        lth = local[:, i, 2]
        c = ad.cos(phi)
        s = ad.sin(phi)
        x = x + c * lx - s * ly
        y = y + s * lx + c * ly
        phi = phi + lth
        nodes.append(ad.stack([x, y, phi], axis=1))
    out = ad.stack(nodes, axis=1)  # (B, N, 3)
    return out.reshape(n, 3) if squeeze else out


def _channel_huber(residual: Tensor, weights: LossWeights, channel_weights) -> Tensor:
    """Sum of per-channel Huber penalties over all leading axes."""
    wx, wy, wt = channel_weights
    hx = ad.huber(residual[..., 0], weights.huber_delta_xy).sum() * wx
    hy = ad.huber(residual[..., 1], weights.huber_delta_xy).sum() * wy
    ht = ad.huber(residual[..., 2], weights.huber_delta_theta).sum() * wt
    return hx + hy + ht


def local_loss(residual: Tensor, weights: LossWeights) -> Tensor:
    """Orientation-weighted Huber sum on local increment errors."""
    return _channel_huber(residual, weights, (weights.w_x, weights.w_y, weights.w_theta))


def global_loss(x_pred: Tensor, x_gt_t1: np.ndarray, weights: LossWeights) -> Tensor:
    """Unweighted Huber sum on recomposed global node-pose errors."""
    return _channel_huber(x_pred - Tensor(np.asarray(x_gt_t1, float)), weights, (1.0, 1.0, 1.0))


@dataclass
class BatchColumns:
    """Stacked sample arrays for one batch."""

    states: np.ndarray
    dx_nom_local: np.ndarray
    dx_gt_local: np.ndarray
    x_gt_global_t: np.ndarray
    x_gt_global_t1: np.ndarray

    @classmethod
    def from_columns(cls, columns: dict, index=None):
        if index is None:
            return cls(**columns)
        return cls(**{k: v[index] for k, v in columns.items()})

    @property
    def size(self) -> int:
        return self.states.shape[0]


def batch_loss(
    params: NetworkParams, batch: BatchColumns, weights: LossWeights
) -> tuple[Tensor, dict]:
    """Mean per-sample total loss over a batch, plus monitoring scalars.

    Raises a numeric fault naming the first offending batch index if the
    loss stops being finite.
    """
    normalized = (batch.states - params.norm_mean) / params.norm_std
    dx_hybrid, dx_net, beta = forward_graph(params, normalized, batch.dx_nom_local)
    residual = dx_hybrid - Tensor(batch.dx_gt_local)
    l_local = local_loss(residual, weights)
    x_pred = differentiable_fk(batch.x_gt_global_t, dx_hybrid)
    l_global = global_loss(x_pred, batch.x_gt_global_t1, weights)
    total = (l_global + weights.lambda_local * l_local) * (1.0 / batch.size)
    if not np.isfinite(total.data):
        per_sample = np.isfinite(x_pred.data.reshape(batch.size, -1)).all(axis=1)
        per_sample &= np.isfinite(residual.data.reshape(batch.size, -1)).all(axis=1)
        bad = int(np.argmin(per_sample))
        raise NumericFaultError("non-finite loss", where=f"batch[{bad}]")
    aux = {
        "local": float(l_local.data) / batch.size,
        "global": float(l_global.data) / batch.size,
        "beta_mean": beta.data.mean(axis=(0, 1)),  # (3,) per channel
    }
    return total, aux


class AdamState:
    """First/second-moment accumulators keyed like the parameter dict."""

    def __init__(self, params: NetworkParams, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step = 0
        self.m = {k: np.zeros_like(t.data) for k, t in params.tensors.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.tensors.items()}

    def apply(self, params: NetworkParams, grads: dict, lr: float, clip_norm: float):
        total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        scale = clip_norm / total if total > clip_norm else 1.0
        self.step += 1
        b1c = 1.0 - self.beta1**self.step
        b2c = 1.0 - self.beta2**self.step
        for name, tensor in params.tensors.items():
            g = grads[name] * scale
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            mhat = self.m[name] / b1c
            vhat = self.v[name] / b2c
            tensor.data -= lr * mhat / (np.sqrt(vhat) + self.eps)


def _cosine_lr(cfg: OptConfig, step: int, total_steps: int) -> float:
    warmup = min(cfg.warmup_steps, max(0, total_steps // 10))
    if step < warmup:
        return cfg.learning_rate * (step + 1) / warmup
    lo = cfg.learning_rate * cfg.min_lr_fraction
    span = max(1, total_steps - 1 - warmup)
    t = min(step - warmup, span) / span
    return lo + 0.5 * (cfg.learning_rate - lo) * (1.0 + np.cos(np.pi * t))


@dataclass
class TrainResult:
    params: NetworkParams
    log: list[dict] = field(default_factory=list)
    diverged: bool = False

    def write_log(self, path: str, cfg: OptConfig):
        with open(path, "w") as fh:
            fh.write(f"# {cfg.describe()}\n")
            fh.write("epoch,train_loss,val_loss,mean_beta_x,mean_beta_y,mean_beta_theta\n")
            for row in self.log:
                fh.write(
                    f"{row['epoch']},{row['train_loss']:.10g},{row['val_loss']:.10g},"
                    f"{row['beta'][0]:.6f},{row['beta'][1]:.6f},{row['beta'][2]:.6f}\n"
                )


def train(
    samples: list[TrainingSample],
    params: NetworkParams,
    weights: LossWeights | None = None,
    cfg: OptConfig | None = None,
) -> TrainResult:
    """Optimize the network on the sample set.

    Freezes input normalization from the training split, runs Adam with
    clipping and a cosine schedule, evaluates the held-out split each
    epoch, and returns the best-validation parameters.  A non-finite
    validation loss aborts and returns the last good checkpoint.
    """
    if not samples:
        raise InvalidInputError("training requires a non-empty dataset")
    weights = weights or LossWeights()
    cfg = cfg or OptConfig()
    rng = np.random.default_rng(cfg.seed)

    columns = stack_dataset(samples)
    n = columns["states"].shape[0]
    order = rng.permutation(n)
    n_val = int(round(cfg.val_fraction * n))
    val_idx, train_idx = order[:n_val], order[n_val:]
    if train_idx.size == 0:
        raise InvalidInputError("validation split leaves no training data")

    train_states = columns["states"][train_idx]
    flat = train_states.reshape(-1, train_states.shape[-1])
    set_normalization(params, flat.mean(axis=0), flat.std(axis=0))

    opt = AdamState(params)
    steps_per_epoch = max(1, -(-train_idx.size // cfg.batch_size))
    total_steps = cfg.epochs * steps_per_epoch
    result = TrainResult(params=params)
    best_val = np.inf
    best_snapshot = None
    step = 0

    for epoch in range(cfg.epochs):
        epoch_order = rng.permutation(train_idx)
        train_losses = []
        for start in range(0, epoch_order.size, cfg.batch_size):
            batch = BatchColumns.from_columns(
                columns, epoch_order[start : start + cfg.batch_size]
            )
            params.zero_grad()
            try:
                loss, _ = batch_loss(params, batch, weights)
            except NumericFaultError:
                result.diverged = True
                if best_snapshot is not None:
                    params.tensors = best_snapshot
                return result
            loss.backward()
            opt.apply(
                params,
                params.gradients(),
                _cosine_lr(cfg, step, total_steps),
                cfg.clip_norm,
            )
            train_losses.append(float(loss.data))
            step += 1

        if val_idx.size:
            val_batch = BatchColumns.from_columns(columns, val_idx)
            try:
                val_loss_t, aux = batch_loss(params, val_batch, weights)
                val_loss = float(val_loss_t.data)
            except NumericFaultError:
                result.diverged = True
                if best_snapshot is not None:
                    params.tensors = best_snapshot
                return result
        else:
            probe = BatchColumns.from_columns(columns, train_idx[: cfg.batch_size])
            val_loss_t, aux = batch_loss(params, probe, weights)
            val_loss = float(val_loss_t.data)

        result.log.append(
            {
                "epoch": epoch,
                "train_loss": float(np.mean(train_losses)),
                "val_loss": val_loss,
                "beta": aux["beta_mean"],
            }
        )
        if val_loss < best_val:
            best_val = val_loss
            best_snapshot = {
                k: Tensor(t.data.copy(), requires_grad=True)
                for k, t in params.tensors.items()
            }

    if best_snapshot is not None:
        params.tensors = best_snapshot
    return result
