"""Identical-geometry SNN and CNN models.

The SNN is run over a simulation window of ``t_window`` steps with direct
encoding (the analog image is presented at every step). Hidden layers are LIF
neurons, the final parameterized layer is a non-resetting readout whose
membrane potential at the last step is the prediction. The CNN shares the
geometry with ReLU hidden activations and an identity output.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import tensor
from .neuron import LifParams, fire, soft_spike

CONV, DENSE, FLATTEN = "conv", "dense", "flatten"
SPIKING_LIF, RELU, READOUT, NONE = "spiking_lif", "relu", "readout", "none"


class InvalidSpecError(ValueError):
    pass


class NonFiniteError(ArithmeticError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    activation: str = NONE
    in_c: int = 0
    out_c: int = 0
    k: int = 0
    stride: int = 1
    pad: int = 0
    n_in: int = 0
    n_out: int = 0

    @classmethod
    def conv(cls, in_c, out_c, k, stride=1, pad=0, activation=SPIKING_LIF):
        return cls(CONV, activation, in_c=in_c, out_c=out_c, k=k, stride=stride, pad=pad)

    @classmethod
    def dense(cls, n_in, n_out, activation=SPIKING_LIF):
        return cls(DENSE, activation, n_in=n_in, n_out=n_out)

    @classmethod
    def flatten(cls):
        return cls(FLATTEN)

    @property
    def parameterized(self) -> bool:
        return self.kind in (CONV, DENSE)

    @property
    def n_src(self) -> int:
        if self.kind == CONV:
            return self.k * self.k * self.in_c
        if self.kind == DENSE:
            return self.n_in
        return 0

    def weight_shape(self) -> tuple:
        if self.kind == CONV:
            return (self.out_c, self.in_c, self.k, self.k)
        return (self.n_out, self.n_in)

    def to_json(self) -> dict:
        if self.kind == CONV:
            keys = ("kind", "in_c", "out_c", "k", "stride", "pad", "activation")
        elif self.kind == DENSE:
            keys = ("kind", "n_in", "n_out", "activation")
        else:
            keys = ("kind",)
        d = asdict(self)
        return {k: d[k] for k in keys}

    @classmethod
    def from_json(cls, d: dict) -> "LayerSpec":
        return cls(**d)


@dataclass(frozen=True)
class LayerShape:
    """Resolved geometry of one parameterized layer."""
    index: int          # position in NetworkSpec.layers
    kind: str
    activation: str
    in_shape: tuple
    out_shape: tuple
    neuron_count: int
    n_src: int
    param_count: int
    flatten_before: bool = False

    @property
    def input_size(self) -> int:
        return int(np.prod(self.in_shape))

    @property
    def macs(self) -> int:
        return self.neuron_count * self.n_src


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple
    t_window: int = 4
    input_shape: tuple = (3, 32, 32)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(self.input_shape))

    def to_json(self) -> dict:
        return {"layers": [l.to_json() for l in self.layers],
                "t_window": self.t_window,
                "input_shape": list(self.input_shape)}

    @classmethod
    def from_json(cls, d: dict) -> "NetworkSpec":
        return cls(layers=tuple(LayerSpec.from_json(l) for l in d["layers"]),
                   t_window=int(d["t_window"]),
                   input_shape=tuple(d["input_shape"]))

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)

    def save(self, path):
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "NetworkSpec":
        return cls.from_json(json.loads(Path(path).read_text()))

    def shapes(self) -> list[LayerShape]:
        return layer_shapes(self)


def default_spec(t_window: int = 4, input_shape=(3, 32, 32)) -> NetworkSpec:
    c, h, w = input_shape
    for _ in range(3):
        h = (h + 2 - 3) // 2 + 1
        w = (w + 2 - 3) // 2 + 1
    return NetworkSpec(
        layers=(
            LayerSpec.conv(c, 8, 3, 2, 1),
            LayerSpec.conv(8, 16, 3, 2, 1),
            LayerSpec.conv(16, 16, 3, 2, 1),
            LayerSpec.flatten(),
            LayerSpec.dense(16 * h * w, 64),
            LayerSpec.dense(64, 3, activation=READOUT),
        ),
        t_window=t_window,
        input_shape=tuple(input_shape),
    )


def layer_shapes(spec: NetworkSpec) -> list[LayerShape]:
    """Validate ``spec`` and resolve the geometry of its parameterized layers."""
    if spec.t_window < 1:
        raise InvalidSpecError(f"t_window must be >= 1, got {spec.t_window}")
    if len(spec.input_shape) != 3 or spec.input_shape[0] not in (1, 3):
        raise InvalidSpecError(f"input_shape must be (1|3, H, W), got {spec.input_shape}")
    param_idx = [i for i, l in enumerate(spec.layers) if l.parameterized]
    if not param_idx:
        raise InvalidSpecError("network has no parameterized layer")
    shape = tuple(spec.input_shape)
    out = []
    pending_flatten = False
    for i, layer in enumerate(spec.layers):
        where = f"layer {i} ({layer.kind})"
        if layer.kind == FLATTEN:
            shape = (int(np.prod(shape)),)
            pending_flatten = True
            continue
        if layer.kind == CONV:
            if len(shape) != 3:
                raise InvalidSpecError(f"{where}: conv needs a [C, H, W] input, got {shape}")
            if layer.in_c != shape[0]:
                raise InvalidSpecError(f"{where}: in_c={layer.in_c} but input has {shape[0]} channels")
            if min(layer.in_c, layer.out_c, layer.k, layer.stride) < 1 or layer.pad < 0:
                raise InvalidSpecError(f"{where}: non-positive conv parameter")
            try:
                ho = tensor.conv_output_size(shape[1], layer.k, layer.stride, layer.pad)
                wo = tensor.conv_output_size(shape[2], layer.k, layer.stride, layer.pad)
            except tensor.GeometryError as exc:
                raise InvalidSpecError(f"{where}: {exc}") from None
            new = (layer.out_c, ho, wo)
        elif layer.kind == DENSE:
            if len(shape) != 1:
                raise InvalidSpecError(f"{where}: dense needs a flat input, got {shape}; add a flatten")
            if layer.n_in != shape[0]:
                raise InvalidSpecError(f"{where}: n_in={layer.n_in} but input has {shape[0]} features")
            if min(layer.n_in, layer.n_out) < 1:
                raise InvalidSpecError(f"{where}: non-positive dense size")
            new = (layer.n_out,)
        else:
            raise InvalidSpecError(f"{where}: unknown layer kind")
        is_last = i == param_idx[-1]
        if is_last and layer.activation != READOUT:
            raise InvalidSpecError(f"{where}: last parameterized layer must use the readout activation")
        if not is_last and layer.activation != SPIKING_LIF:
            raise InvalidSpecError(f"{where}: hidden layers must use the spiking_lif activation")
        out.append(LayerShape(
            index=i, kind=layer.kind, activation=layer.activation,
            in_shape=shape, out_shape=new,
            neuron_count=int(np.prod(new)), n_src=layer.n_src,
            param_count=int(np.prod(layer.weight_shape())),
            flatten_before=pending_flatten))
        pending_flatten = False
        shape = new
    if pending_flatten:
        raise InvalidSpecError("trailing flatten after the readout layer")
    return out


@dataclass
class Model:
    """Weights of one network instance.

    ``mode`` is ``"snn"`` or ``"cnn"``. ``betas`` holds one decay factor per
    parameterized layer (unused by the CNN).
    """
    spec: NetworkSpec
    mode: str
    weights: list
    betas: np.ndarray
    lif: LifParams = field(default_factory=LifParams)
    biases: list | None = None  # CNN only; spiking layers carry no bias

    @property
    def shapes(self) -> list[LayerShape]:
        return layer_shapes(self.spec)

    def copy(self) -> "Model":
        biases = None if self.biases is None else [b.copy() for b in self.biases]
        return Model(self.spec, self.mode, [w.copy() for w in self.weights],
                     self.betas.copy(), self.lif, biases)

    def tensors(self) -> list:
        """Parameter tensors in serialization order."""
        return list(self.weights) + list(self.biases or []) + [self.betas]

    def param_vector(self) -> np.ndarray:
        return np.concatenate([t.ravel() for t in self.tensors()])


def init_weights(spec: NetworkSpec, rng: np.random.Generator) -> list:
    """Kaiming-uniform fan-in initialization, ``U(-b, b)`` with ``b = sqrt(6 / fan_in)``."""
    weights = []
    for shape in layer_shapes(spec):
        layer = spec.layers[shape.index]
        bound = np.sqrt(6.0 / shape.n_src)
        weights.append(rng.uniform(-bound, bound, size=layer.weight_shape()))
    return weights


def build_pair(spec: NetworkSpec, seed: int, lif: LifParams = LifParams()):
    """Two models with identical geometry and independently seeded weights."""
    shapes = layer_shapes(spec)
    snn_seq, cnn_seq = np.random.SeedSequence(seed).spawn(2)
    betas = np.full(len(shapes), lif.beta)
    snn = Model(spec, "snn", init_weights(spec, np.random.default_rng(snn_seq)), betas.copy(), lif)
    cnn = Model(spec, "cnn", init_weights(spec, np.random.default_rng(cnn_seq)), np.ones(len(shapes)), lif,
                [np.zeros(spec.layers[s.index].weight_shape()[0]) for s in shapes])
    return snn, cnn


# --------------------------------------------------------------------------
# forward passes

def _apply(shape: LayerShape, layer: LayerSpec, w: np.ndarray, x: np.ndarray) -> np.ndarray:
    if shape.flatten_before:
        x = x.reshape(x.shape[0], -1)
    if layer.kind == CONV:
        return tensor.conv2d(x, w, layer.stride, layer.pad)
    return tensor.linear(x, w)


def _as_batch(model: Model, images) -> np.ndarray:
    x = tensor.as_tensor(images)
    if x.shape == model.spec.input_shape:
        x = x[None]
    if x.ndim != 4 or x.shape[1:] != model.spec.input_shape:
        raise tensor.ShapeError(f"image shape {x.shape} does not match input_shape {model.spec.input_shape}")
    return x


@dataclass
class SnnTrace:
    """Per-layer recordings of a batched SNN run; arrays are ``[T, N, ...]``."""
    inputs: list    # layer inputs (first layer: the analog image, [N, ...])
    currents: list  # weighted inputs
    v: list         # membrane potentials after each step
    spikes: list    # emitted spikes (readout: zeros)
    resets: list    # reset term v_th * s[t-1] actually subtracted


def snn_run(model: Model, images, t_window: int | None = None, *,
            relax: bool = False, frozen_resets: list | None = None):
    """Batched SNN simulation. Returns ``(predictions [N, n_out], trace)``.

    ``relax`` replaces the Heaviside spike by its smooth arctan primitive;
    ``frozen_resets`` substitutes recorded reset terms (used by gradient checks).
    """
    T = model.spec.t_window if t_window is None else int(t_window)
    if T < 1:
        raise ValueError(f"t_window must be >= 1, got {T}")
    x = _as_batch(model, images)
    n = x.shape[0]
    lif = model.lif
    trace = SnnTrace([], [], [], [], [])
    h = x
    shapes = layer_shapes(model.spec)
    for p, shape in enumerate(shapes):
        layer = model.spec.layers[shape.index]
        w = model.weights[p]
        if p == 0:
            cur1 = _apply(shape, layer, w, h)
            cur = np.broadcast_to(cur1, (T,) + cur1.shape)
            trace.inputs.append(h)
        else:
            flat = h.reshape((T * n,) + h.shape[2:])
            cur = _apply(shape, layer, w, flat).reshape((T, n) + shape.out_shape)
            trace.inputs.append(h)
        beta = model.betas[p]
        v = np.zeros((T, n) + shape.out_shape)
        s = np.zeros_like(v)
        r = np.zeros_like(v)
        v_prev = np.zeros((n,) + shape.out_shape)
        s_prev = np.zeros_like(v_prev)
        readout = shape.activation == READOUT
        for t in range(T):
            vt = beta * v_prev + cur[t]
            if not readout and lif.reset_enabled:
                rt = frozen_resets[p][t] if frozen_resets is not None else lif.v_th * s_prev
                vt = vt - rt
                r[t] = rt
            v[t] = vt
            if not readout:
                s[t] = soft_spike(vt - lif.v_th, lif.surrogate_slope) if relax else fire(vt, lif.v_th)
            v_prev, s_prev = vt, s[t]
        trace.currents.append(cur)
        trace.v.append(v)
        trace.spikes.append(s)
        trace.resets.append(r)
        h = s
    pred = trace.v[-1][-1]
    if not np.all(np.isfinite(pred)):
        raise NonFiniteError("non-finite SNN readout")
    return pred, trace


@dataclass
class CnnTrace:
    inputs: list
    pre: list


def cnn_run(model: Model, images):
    """Batched CNN pass. Returns ``(predictions, trace)``."""
    x = _as_batch(model, images)
    trace = CnnTrace([], [])
    h = x
    for p, shape in enumerate(layer_shapes(model.spec)):
        layer = model.spec.layers[shape.index]
        trace.inputs.append(h)
        z = _apply(shape, layer, model.weights[p], h)
        if model.biases is not None:
            b = model.biases[p]
            z = z + (b[:, None, None] if layer.kind == CONV else b)
        trace.pre.append(z)
        h = z if shape.activation == READOUT else np.maximum(z, 0.0)
    if not np.all(np.isfinite(h)):
        raise NonFiniteError("non-finite CNN output")
    return h, trace


def predict(model: Model, images) -> np.ndarray:
    if model.mode == "snn":
        return snn_run(model, images)[0]
    return cnn_run(model, images)[0]


# --------------------------------------------------------------------------
# sparsity profiles

@dataclass
class SparsityProfile:
    """Measured input/output sparsity per parameterized layer and timestep.

    ``s_in`` and ``s_out`` are ``[L, T]`` arrays. ``analog_input`` flags the
    directly encoded first layer, whose inputs are real pixels.
    """
    s_in: np.ndarray
    s_out: np.ndarray
    neuron_count: np.ndarray
    n_src: np.ndarray
    analog_input: np.ndarray

    @property
    def n_layers(self) -> int:
        return self.s_in.shape[0]

    @property
    def t_window(self) -> int:
        return self.s_in.shape[1]

    @classmethod
    def mean(cls, profiles) -> "SparsityProfile":
        profiles = list(profiles)
        if not profiles:
            raise ValueError("cannot average zero profiles")
        first = profiles[0]
        return cls(np.mean([p.s_in for p in profiles], axis=0),
                   np.mean([p.s_out for p in profiles], axis=0),
                   first.neuron_count.copy(), first.n_src.copy(), first.analog_input.copy())

    def to_json(self) -> dict:
        return {k: np.asarray(v).tolist() for k, v in asdict(self).items()}

    @classmethod
    def from_json(cls, d: dict) -> "SparsityProfile":
        return cls(np.asarray(d["s_in"], float), np.asarray(d["s_out"], float),
                   np.asarray(d["neuron_count"], int), np.asarray(d["n_src"], int),
                   np.asarray(d["analog_input"], bool))


def _zero_fraction(a: np.ndarray, lead: int) -> np.ndarray:
    """Fraction of zeros over all but the first ``lead`` axes."""
    flat = a.reshape(a.shape[:lead] + (-1,))
    return np.count_nonzero(flat == 0, axis=-1) / flat.shape[-1]


def profiles_from_trace(model: Model, trace: SnnTrace) -> list[SparsityProfile]:
    """One profile per image of the batch."""
    shapes = layer_shapes(model.spec)
    T, n = trace.v[0].shape[:2]
    s_in = np.zeros((n, len(shapes), T))
    s_out = np.ones((n, len(shapes), T))
    for p, shape in enumerate(shapes):
        if p == 0:
            s_in[:, p, :] = _zero_fraction(trace.inputs[0], 1)[:, None]
        else:
            s_in[:, p, :] = _zero_fraction(trace.inputs[p], 2).T
        if shape.activation != READOUT:
            s_out[:, p, :] = _zero_fraction(trace.spikes[p], 2).T
    nc = np.array([s.neuron_count for s in shapes])
    ns = np.array([s.n_src for s in shapes])
    analog = np.zeros(len(shapes), bool)
    analog[0] = True
    return [SparsityProfile(s_in[i], s_out[i], nc.copy(), ns.copy(), analog.copy()) for i in range(n)]


def snn_forward(model: Model, image, t_window: int | None = None):
    """Single-image SNN inference. Returns ``(prediction, SparsityProfile)``."""
    image = tensor.as_tensor(image)
    if image.shape != model.spec.input_shape:
        raise tensor.ShapeError(f"image shape {image.shape} does not match {model.spec.input_shape}")
    if image.min() < 0.0 or image.max() > 1.0:
        raise ValueError("pixel values must lie in [0, 1]")
    pred, trace = snn_run(model, image, t_window)
    return pred[0], profiles_from_trace(model, trace)[0]


def op_counts(spec: NetworkSpec) -> list[int]:
    """MACs per parameterized layer: neuron_count * n_src."""
    return [s.macs for s in layer_shapes(spec)]


def cnn_forward(model: Model, image):
    """Single-image CNN inference. Returns ``(prediction, per-layer MAC counts)``."""
    image = tensor.as_tensor(image)
    if image.shape != model.spec.input_shape:
        raise tensor.ShapeError(f"image shape {image.shape} does not match {model.spec.input_shape}")
    pred, _ = cnn_run(model, image)
    return pred[0], op_counts(model.spec)


# --------------------------------------------------------------------------
# serialization: <u64 LE header length><JSON header><float64 LE parameters>

def save_model(model: Model, path) -> None:
    header = model.spec.to_json()
    header["model"] = model.mode
    header["lif"] = asdict(model.lif)
    header["tensors"] = [["w%d" % i, list(w.shape)] for i, w in enumerate(model.weights)]
    header["tensors"] += [["b%d" % i, list(b.shape)] for i, b in enumerate(model.biases or [])]
    header["tensors"].append(["betas", [len(model.betas)]])
    blob = json.dumps(header, sort_keys=True).encode()
    data = model.param_vector().astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(data)


def load_model(path) -> Model:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise ValueError(f"{path}: truncated checkpoint")
    (n,) = struct.unpack("<Q", raw[:8])
    header = json.loads(raw[8:8 + n].decode())
    values = np.frombuffer(raw[8 + n:], dtype="<f8").astype(np.float64)
    spec = NetworkSpec.from_json(header)
    tensors = []
    pos = 0
    for _, shape in header["tensors"]:
        size = int(np.prod(shape))
        tensors.append(values[pos:pos + size].reshape(shape).copy())
        pos += size
    if pos != values.size:
        raise ValueError(f"{path}: parameter payload has {values.size} values, header describes {pos}")
    n_w = sum(1 for name, _ in header["tensors"] if name.startswith("w"))
    biases = tensors[n_w:-1] or None
    model = Model(spec, header["model"], tensors[:n_w], tensors[-1], LifParams(**header["lif"]), biases)
    expected = [tuple(spec.layers[s.index].weight_shape()) for s in layer_shapes(spec)]
    if [w.shape for w in model.weights] != expected:
        raise ValueError(f"{path}: weight shapes do not match the embedded spec")
    return model


def with_t_window(spec: NetworkSpec, t_window: int) -> NetworkSpec:
    return replace(spec, t_window=t_window)
