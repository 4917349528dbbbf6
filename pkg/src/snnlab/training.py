"""Supervised training of the SNN/CNN pair on 3-output regression.

The SNN is trained by backpropagation through time. The Heaviside spike is
replaced in the backward pass by the arctan surrogate and the reset term
``v_th * s[t-1]`` is treated as a constant unless ``detach_reset`` is off.
The loss is the MSE of the readout membrane at the last timestep.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor
from .network import CONV, READOUT, Model, cnn_run, layer_shapes, snn_run
from .neuron import surrogate_grad

log = logging.getLogger(__name__)

BETA_FLOOR = 1e-3


class DivergenceError(ArithmeticError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 16
    seed: int = 0
    learn_beta: bool = True
    detach_reset: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs ≥ 1 required")
        if self.batch_size < 1:
            raise ValueError("batch_size ≥ 1 required")
        if not self.lr >= 0:
            raise ValueError(f"lr must be non-negative, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")

    def to_json(self) -> dict:
        return asdict(self)


def _layer_backward(model: Model, p: int, x: np.ndarray, grad_out: np.ndarray):
    shape = layer_shapes(model.spec)[p]
    layer = model.spec.layers[shape.index]
    w = model.weights[p]
    if layer.kind == CONV:
        return tensor.conv2d_backward(x, w, grad_out, layer.stride, layer.pad)
    flat = x.reshape(x.shape[0], -1)
    gx, gw = tensor.linear_backward(flat, w, grad_out)
    return gx.reshape(x.shape), gw


def snn_backward(model: Model, trace, grad_pred: np.ndarray, detach_reset: bool = True):
    """Gradients of a scalar loss w.r.t. weights and per-layer betas.

    ``grad_pred`` is dL/d(readout membrane at the last step), ``[N, n_out]``.
    """
    shapes = layer_shapes(model.spec)
    lif = model.lif
    T, n = trace.v[0].shape[:2]
    grads_w = [None] * len(shapes)
    grads_beta = np.zeros(len(shapes))
    delta_s = None
    for p in reversed(range(len(shapes))):
        v = trace.v[p]
        beta = model.betas[p]
        dv = np.zeros_like(v)
        carry = np.zeros_like(v[0])
        if shapes[p].activation == READOUT:
            for t in reversed(range(T)):
                carry = beta * carry
                if t == T - 1:
                    carry = carry + grad_pred
                dv[t] = carry
        else:
            sg = surrogate_grad(v - lif.v_th, lif.surrogate_slope)
            for t in reversed(range(T)):
                ds = delta_s[t]
                if not detach_reset and lif.reset_enabled:
                    ds = ds - lif.v_th * carry
                carry = ds * sg[t] + beta * carry
                dv[t] = carry
        v_prev = np.concatenate([np.zeros_like(v[:1]), v[:-1]])
        grads_beta[p] = float(np.sum(dv * v_prev))
        if p == 0:
            _, grads_w[0] = _layer_backward(model, 0, trace.inputs[0], dv.sum(axis=0))
        else:
            x = trace.inputs[p]
            gx, grads_w[p] = _layer_backward(
                model, p, x.reshape((T * n,) + x.shape[2:]), dv.reshape((T * n,) + v.shape[2:]))
            delta_s = gx.reshape(x.shape)
    return grads_w, grads_beta


def cnn_backward(model: Model, trace, grad_pred: np.ndarray):
    shapes = layer_shapes(model.spec)
    grads_w = [None] * len(shapes)
    grads_b = [None] * len(shapes)
    g = grad_pred
    for p in reversed(range(len(shapes))):
        if shapes[p].activation != READOUT:
            g = g * (trace.pre[p] > 0)
        gx, grads_w[p] = _layer_backward(model, p, trace.inputs[p], g)
        if model.biases is not None:
            grads_b[p] = g.sum(axis=(0, 2, 3)) if g.ndim == 4 else g.sum(axis=0)
        g = gx
    return grads_w, grads_b


def _backward(model: Model, trace, grad_pred, detach_reset: bool = True) -> list:
    """Gradients aligned with ``model.tensors()``: weights, CNN biases, betas."""
    if model.mode == "snn":
        gw, gbeta = snn_backward(model, trace, grad_pred, detach_reset)
        return list(gw) + [gbeta]
    gw, gbias = cnn_backward(model, trace, grad_pred)
    return list(gw) + (list(gbias) if model.biases is not None else []) + [np.zeros_like(model.betas)]


def _forward(model: Model, images):
    return snn_run(model, images) if model.mode == "snn" else cnn_run(model, images)


def loss_and_grads(model: Model, images, targets, detach_reset: bool = True):
    """Mean-MSE loss over the batch and gradients aligned with ``model.tensors()``."""
    targets = tensor.as_tensor(targets)
    pred, trace = _forward(model, images)
    if pred.shape != targets.shape:
        raise tensor.ShapeError(f"prediction {pred.shape} vs target {targets.shape}")
    err = pred - targets
    with np.errstate(over="ignore", invalid="ignore"):
        loss = float(np.mean(err ** 2))
    return loss, _backward(model, trace, 2.0 * err / err.size, detach_reset)


def _set_tensors(model: Model, tensors: list) -> None:
    n_w = len(model.weights)
    model.weights = tensors[:n_w]
    if model.biases is not None:
        model.biases = tensors[n_w:-1]
    model.betas = tensors[-1]


def train(model: Model, dataset, cfg: TrainConfig):
    """SGD with momentum on mean MSE. Returns ``(trained_copy, loss_history)``.

    ``dataset`` is anything with ``images [N, C, H, W]`` and ``targets [N, 3]``.
    Batches are drawn from a permutation seeded by ``cfg.seed``.
    """
    images = tensor.as_tensor(dataset.images)
    targets = tensor.as_tensor(dataset.targets)
    if len(images) == 0:
        raise ValueError("empty dataset")
    if images.shape[1:] != model.spec.input_shape:
        raise tensor.ShapeError(f"dataset images {images.shape[1:]} vs network input {model.spec.input_shape}")
    model = model.copy()
    rng = np.random.default_rng(cfg.seed)
    velocity = [np.zeros_like(t) for t in model.tensors()]
    learn_beta = cfg.learn_beta and model.mode == "snn"
    history = []
    n = len(images)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = loss_and_grads(model, images[idx], targets[idx], cfg.detach_reset)
            if not np.isfinite(loss):
                raise DivergenceError(f"loss became non-finite in epoch {epoch + 1}")
            total += loss * len(idx)
            params = model.tensors()
            updated = []
            for k, (param, g) in enumerate(zip(params, grads)):
                if k == len(params) - 1 and not learn_beta:
                    updated.append(param)
                    continue
                velocity[k] = cfg.momentum * velocity[k] + g
                updated.append(param - cfg.lr * velocity[k])
            if learn_beta:
                updated[-1] = np.clip(updated[-1], BETA_FLOOR, 1.0)
            _set_tensors(model, updated)
        epoch_loss = total / n
        history.append(epoch_loss)
        log.info("epoch %d/%d %s loss %.6f", epoch + 1, cfg.epochs, model.mode, epoch_loss)
    return model, history


def evaluate_mse(model: Model, dataset, batch_size: int = 64) -> float:
    images = tensor.as_tensor(dataset.images)
    targets = tensor.as_tensor(dataset.targets)
    preds = []
    for start in range(0, len(images), batch_size):
        if model.mode == "snn":
            preds.append(snn_run(model, images[start:start + batch_size])[0])
        else:
            preds.append(cnn_run(model, images[start:start + batch_size])[0])
    return float(np.mean((np.concatenate(preds) - targets) ** 2))


# --------------------------------------------------------------------------
# finite-difference gradient checks

def _relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float) -> float:
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def grad_check(model: Model, sample, epsilon: float = 1e-5, *, part: str = "readout",
               max_params: int | None = 200, seed: int = 0, floor: float = 1e-7) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``sample`` is ``(image, target)``. For a CNN every layer is checked. For an
    SNN ``part`` selects ``"readout"`` (readout weights and beta on the true
    spiking forward; upstream spikes do not depend on them, so the path is
    exactly differentiable) or ``"spiking"`` (all parameters of the soft
    relaxation where spikes are ``arctan(slope * x) / pi + 1/2`` and reset
    terms are frozen at their base values). ``max_params`` bounds the number of
    randomly chosen coordinates checked per tensor. CNN coordinates whose
    perturbation flips a ReLU gate straddle a kink, where the central
    difference is not a derivative estimate; they are skipped and counted in
    the log.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError(f"epsilon must lie in [1e-7, 1e-3], got {epsilon}")
    image, target = sample
    images = tensor.as_tensor(image)
    if images.ndim == 3:
        images = images[None]
    targets = tensor.as_tensor(target).reshape(len(images), -1)
    model = model.copy()
    shapes = layer_shapes(model.spec)
    rng = np.random.default_rng(seed)

    if model.mode == "cnn":
        def loss_fn(m):
            out, tr = cnn_run(m, images)
            gates = b"".join(np.packbits(z > 0).tobytes() for z in tr.pre[:-1])
            return float(np.mean((out - targets) ** 2)), gates
        pred, trace = cnn_run(model, images)
        grads = _backward(model, trace, 2.0 * (pred - targets) / targets.size)
        checked = [(k, None) for k in range(len(grads) - 1)]
    elif part == "readout":
        def loss_fn(m):
            return float(np.mean((snn_run(m, images)[0] - targets) ** 2)), None
        pred, trace = snn_run(model, images)
        grads = _backward(model, trace, 2.0 * (pred - targets) / targets.size)
        checked = [(len(shapes) - 1, None), (len(grads) - 1, [len(shapes) - 1])]
    elif part == "spiking":
        pred, trace = snn_run(model, images, relax=True)
        resets = trace.resets

        def loss_fn(m):
            out = snn_run(m, images, relax=True, frozen_resets=resets)[0]
            return float(np.mean((out - targets) ** 2)), None
        grads = _backward(model, trace, 2.0 * (pred - targets) / targets.size)
        checked = [(k, None) for k in range(len(grads))]
    else:
        raise ValueError(f"unknown part {part!r}")

    params = model.tensors()
    _, base_gates = loss_fn(model)
    analytic, numeric = [], []
    skipped = 0
    for k, only in checked:
        w = params[k]
        flat_idx = np.arange(w.size) if only is None else np.asarray(only)
        if max_params is not None and flat_idx.size > max_params:
            flat_idx = rng.choice(w.size, max_params, replace=False)
        for i in flat_idx:
            pos = np.unravel_index(i, w.shape)
            orig = w[pos]
            w[pos] = orig + epsilon
            up, gates_up = loss_fn(model)
            w[pos] = orig - epsilon
            down, gates_down = loss_fn(model)
            w[pos] = orig
            if gates_up != base_gates or gates_down != base_gates:
                skipped += 1
                continue
            analytic.append(grads[k][pos])
            numeric.append((up - down) / (2 * epsilon))
    if skipped:
        log.info("grad_check skipped %d coordinates that cross a ReLU kink", skipped)
    return _relative_error(np.array(analytic), np.array(numeric), floor)
