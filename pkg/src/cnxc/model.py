"""Model assembly, forward/backward orchestration, and checkpoint I/O.

The architecture is a stack of conv blocks (conv -> batch norm -> ReLU ->
2x2 max pool), a flatten, then for each hidden dense width a dropout ->
dense -> ReLU group, and finally a single-unit dense head whose sigmoid
output is the pneumonia probability. Default: five blocks with filters
(32, 64, 128, 128, 128), kernel 3 with same padding, one hidden dense layer
of 512, dropout 0.5; on 150x150 inputs this is 1,438,401 trainable
parameters.

Checkpoint format (little-endian):
    bytes 0..4   magic "CNXC1"
    u32          config blob length, then that many bytes of key=value text
    u32          tensor count
    raw float32  every persisted tensor in declaration order
    u64          length guard: total payload bytes (must also end the file)
Persisted tensors are the trainable parameters plus batch-norm running
statistics, in model declaration order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from .errors import ConfigError, CorruptionError, ParameterError, ShapeError
from .rng import Rng
from .tensor import he_init

CHECKPOINT_MAGIC = b"CNXC1"

STANDARD = "standard"
SEPARABLE = "separable"


@dataclass
class BlockSpec:
    filters: int
    kernel: int = 3
    flavor: str = STANDARD
    batchnorm: bool = True


@dataclass
class ModelConfig:
    in_channels: int = 1
    input_h: int = 150
    input_w: int = 150
    blocks: tuple = (
        BlockSpec(32),
        BlockSpec(64),
        BlockSpec(128),
        BlockSpec(128),
        BlockSpec(128),
    )
    dense_widths: tuple = (512,)
    dropout_p: float = 0.5
    padding: str = "same"   # "same" keeps maps fixed so only pooling shrinks them
    dtype: str = "float32"  # "float64" promotes the stack for gradient checks
    bn_momentum: float = 0.9
    bn_epsilon: float = 1e-5

    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32


def default_config(**overrides) -> ModelConfig:
    return ModelConfig(**overrides)


def separable_config(**overrides) -> ModelConfig:
    blocks = tuple(BlockSpec(b.filters, b.kernel, SEPARABLE, b.batchnorm)
                   for b in ModelConfig().blocks)
    return ModelConfig(blocks=blocks, **overrides)


def _conv_pad(kernel: int, padding: str) -> int:
    return kernel // 2 if padding == "same" else 0


def spatial_chain(cfg: ModelConfig):
    """(h, w) after each block's conv+pool; raises ConfigError on collapse."""
    h, w = cfg.input_h, cfg.input_w
    out = []
    for i, blk in enumerate(cfg.blocks):
        pad = _conv_pad(blk.kernel, cfg.padding)
        h = (h + 2 * pad - blk.kernel) + 1
        w = (w + 2 * pad - blk.kernel) + 1
        if h < 2 or w < 2:
            raise ConfigError(f"spatial extent exhausted at block {i + 1}: {h}x{w} before pool")
        h //= 2
        w //= 2
        out.append((h, w))
    return out


def parameter_count(cfg: ModelConfig) -> int:
    """Closed-form trainable parameter count, independent of build_model."""
    if not cfg.blocks:
        raise ConfigError("need at least one conv block")
    total = 0
    c_in = cfg.in_channels
    for blk in cfg.blocks:
        k = blk.kernel
        if blk.flavor == SEPARABLE:
            total += c_in * k * k + blk.filters * c_in + blk.filters
        else:
            total += blk.filters * c_in * k * k + blk.filters
        if blk.batchnorm:
            total += 2 * blk.filters
        c_in = blk.filters
    h, w = spatial_chain(cfg)[-1]
    feats = c_in * h * w
    for width in cfg.dense_widths:
        total += feats * width + width
        feats = width
    total += feats * 1 + 1
    return total


# ----------------------------------------------------------------- layers

class _Node:
    """Thin stateful wrapper pairing persisted tensors with layer functions."""

    name = ""

    def forward(self, x, mode, rng):
        raise NotImplementedError

    def backward(self, grad_out, cache):
        raise NotImplementedError

    def tensors(self):
        return []

    def trainable(self):
        return self.tensors()


class ConvNode(_Node):
    def __init__(self, name, params: L.ConvParams):
        self.name = name
        self.p = params

    def forward(self, x, mode, rng):
        return L.conv2d_forward(x, self.p)

    def backward(self, grad_out, cache):
        gx, gk, gb = L.conv2d_backward(grad_out, cache)
        return gx, {f"{self.name}.kernels": gk, f"{self.name}.bias": gb}

    def tensors(self):
        return [(f"{self.name}.kernels", self.p.kernels), (f"{self.name}.bias", self.p.bias)]


class SepConvNode(_Node):
    def __init__(self, name, params: L.SepConvParams):
        self.name = name
        self.p = params

    def forward(self, x, mode, rng):
        return L.sepconv_forward(x, self.p)

    def backward(self, grad_out, cache):
        gx, gdw, gpw, gb = L.sepconv_backward(grad_out, cache)
        return gx, {
            f"{self.name}.depthwise": gdw,
            f"{self.name}.pointwise": gpw,
            f"{self.name}.bias": gb,
        }

    def tensors(self):
        return [
            (f"{self.name}.depthwise", self.p.depthwise),
            (f"{self.name}.pointwise", self.p.pointwise),
            (f"{self.name}.bias", self.p.bias),
        ]


class BatchNormNode(_Node):
    def __init__(self, name, params: L.BatchNormParams):
        self.name = name
        self.p = params

    def forward(self, x, mode, rng):
        return L.batchnorm_forward(x, self.p, mode)

    def backward(self, grad_out, cache):
        gx, gg, gb = L.batchnorm_backward(grad_out, cache)
        return gx, {f"{self.name}.gamma": gg, f"{self.name}.beta": gb}

    def tensors(self):
        return [
            (f"{self.name}.gamma", self.p.gamma),
            (f"{self.name}.beta", self.p.beta),
            (f"{self.name}.running_mean", self.p.running_mean),
            (f"{self.name}.running_var", self.p.running_var),
        ]

    def trainable(self):
        return self.tensors()[:2]


class ReluNode(_Node):
    def __init__(self, name):
        self.name = name

    def forward(self, x, mode, rng):
        return L.relu(x)

    def backward(self, grad_out, cache):
        return L.relu_backward(grad_out, cache), {}


class PoolNode(_Node):
    def __init__(self, name):
        self.name = name

    def forward(self, x, mode, rng):
        return L.maxpool2(x)

    def backward(self, grad_out, cache):
        return L.maxpool2_backward(grad_out, cache), {}


class FlattenNode(_Node):
    def __init__(self, name):
        self.name = name

    def forward(self, x, mode, rng):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, grad_out, cache):
        return grad_out.reshape(cache), {}


class DropoutNode(_Node):
    def __init__(self, name, p_drop):
        self.name = name
        self.p_drop = p_drop

    def forward(self, x, mode, rng):
        return L.dropout(x, self.p_drop, mode, rng)

    def backward(self, grad_out, cache):
        return L.dropout_backward(grad_out, cache), {}


class DenseNode(_Node):
    def __init__(self, name, weights, bias):
        self.name = name
        self.weights = weights
        self.bias = bias

    def forward(self, x, mode, rng):
        return L.dense_forward(x, self.weights, self.bias)

    def backward(self, grad_out, cache):
        gx, gw, gb = L.dense_backward(grad_out, cache)
        return gx, {f"{self.name}.weights": gw, f"{self.name}.bias": gb}

    def tensors(self):
        return [(f"{self.name}.weights", self.weights), (f"{self.name}.bias", self.bias)]


# ------------------------------------------------------------------ model

@dataclass
class Tape:
    """Forward record consumed by backward; outputs kept only when requested."""

    caches: list
    probs: np.ndarray | None = None
    outputs: list | None = None


class Model:
    def __init__(self, cfg: ModelConfig, nodes: list, block_relu: list):
        self.cfg = cfg
        self.nodes = nodes
        self.block_relu = block_relu  # node index of each block's ReLU output

    # -- inference/training passes

    def run_range(self, x, mode, rng=None, start=0, stop=None, record=False):
        """Run nodes[start:stop] on x; returns (value, Tape)."""
        caches, outputs = [], ([] if record else None)
        for node in self.nodes[start:stop]:
            x, cache = node.forward(x, mode, rng)
            caches.append(cache)
            if record:
                outputs.append(x)
        return x, Tape(caches, outputs=outputs)

    def logits(self, x, mode, rng=None, record=False):
        x = np.ascontiguousarray(x, dtype=self.cfg.np_dtype())
        if x.ndim != 4 or x.shape[1:] != (self.cfg.in_channels, self.cfg.input_h, self.cfg.input_w):
            raise ShapeError(
                f"input {x.shape} != (batch, {self.cfg.in_channels}, "
                f"{self.cfg.input_h}, {self.cfg.input_w})"
            )
        z, tape = self.run_range(x, mode, rng, record=record)
        return z[:, 0], tape

    def forward(self, x, mode, rng=None, record=False):
        """Per-sample pneumonia probabilities in (0, 1); class 1 iff p > 0.5."""
        z, tape = self.logits(x, mode, rng, record=record)
        tape.probs = L.sigmoid(z)
        return tape.probs, tape

    def backward_from(self, grad, tape, start=0):
        """Backprop grad through nodes[start:]; tape must come from a full forward."""
        grads = {}
        for node, cache in zip(reversed(self.nodes[start:]), reversed(tape.caches[start:])):
            grad, node_grads = node.backward(grad, cache)
            grads.update(node_grads)
        return grad, grads

    def backward(self, grad_probs, tape):
        """Gradients of the loss for every trainable tensor, via the sigmoid head."""
        gz = L.sigmoid_backward(grad_probs, tape.probs)[:, None]
        _, grads = self.backward_from(gz, tape)
        return grads

    # -- parameter access

    def tensors(self):
        out = []
        for node in self.nodes:
            out.extend(node.tensors())
        return out

    def parameters(self):
        out = []
        for node in self.nodes:
            out.extend(node.trainable())
        return out

    def param_count(self) -> int:
        return sum(int(np.prod(arr.shape)) for _, arr in self.parameters())

    def copy_state(self):
        return [arr.copy() for _, arr in self.tensors()]

    def load_state(self, state):
        for (_, arr), saved in zip(self.tensors(), state):
            arr[:] = saved


def build_model(cfg: ModelConfig, rng: Rng | None) -> Model:
    """Instantiate the architecture: He-initialised weights, zero biases.

    Passing rng=None builds zero-filled tensors (used by checkpoint loading,
    which overwrites them).
    """
    if not cfg.blocks:
        raise ConfigError("need at least one conv block")
    if cfg.padding not in ("same", "valid"):
        raise ConfigError(f"padding must be 'same' or 'valid', got {cfg.padding}")
    if not 0.0 <= cfg.dropout_p < 1.0:
        raise ConfigError(f"dropout_p must be in [0, 1), got {cfg.dropout_p}")
    spatial_chain(cfg)  # validates no spatial collapse
    dt = cfg.np_dtype()
    init_rng = rng.derive("init") if rng is not None else None

    def draw(shape, fan_in):
        if init_rng is None:
            return np.zeros(shape, dtype=dt)
        return he_init(shape, fan_in, init_rng, dtype=dt)

    nodes, block_relu = [], []
    c_in = cfg.in_channels
    for i, blk in enumerate(cfg.blocks):
        tag = f"block{i + 1}"
        k = blk.kernel
        pad = _conv_pad(k, cfg.padding)
        if blk.flavor == SEPARABLE:
            p = L.SepConvParams(
                depthwise=draw((c_in, 1, k, k), k * k),
                pointwise=draw((blk.filters, c_in, 1, 1), c_in),
                bias=np.zeros(blk.filters, dtype=dt),
                stride=1,
                padding=pad,
            )
            nodes.append(SepConvNode(f"{tag}.sepconv", p))
        elif blk.flavor == STANDARD:
            p = L.ConvParams(
                kernels=draw((blk.filters, c_in, k, k), c_in * k * k),
                bias=np.zeros(blk.filters, dtype=dt),
                stride=1,
                padding=pad,
            )
            nodes.append(ConvNode(f"{tag}.conv", p))
        else:
            raise ConfigError(f"unknown conv flavor '{blk.flavor}'")
        if blk.batchnorm:
            bn = L.BatchNormParams(
                gamma=np.ones(blk.filters, dtype=dt),
                beta=np.zeros(blk.filters, dtype=dt),
                running_mean=np.zeros(blk.filters, dtype=dt),
                running_var=np.ones(blk.filters, dtype=dt),
                momentum=cfg.bn_momentum,
                epsilon=cfg.bn_epsilon,
            )
            nodes.append(BatchNormNode(f"{tag}.bn", bn))
        nodes.append(ReluNode(f"{tag}.relu"))
        block_relu.append(len(nodes) - 1)
        nodes.append(PoolNode(f"{tag}.pool"))
        c_in = blk.filters

    nodes.append(FlattenNode("flatten"))
    h, w = spatial_chain(cfg)[-1]
    feats = c_in * h * w
    for j, width in enumerate(cfg.dense_widths):
        tag = f"dense{j + 1}"
        nodes.append(DropoutNode(f"{tag}.dropout", cfg.dropout_p))
        nodes.append(DenseNode(tag, draw((feats, width), feats), np.zeros(width, dtype=dt)))
        nodes.append(ReluNode(f"{tag}.relu"))
        feats = width
    nodes.append(DenseNode("head", draw((feats, 1), feats), np.zeros(1, dtype=dt)))
    return Model(cfg, nodes, block_relu)


# ------------------------------------------------------------- checkpoints

def serialize_config(cfg: ModelConfig) -> str:
    blocks = ",".join(
        f"{b.filters}:{b.kernel}:{b.flavor}:{'bn' if b.batchnorm else 'nobn'}" for b in cfg.blocks
    )
    dense = ",".join(str(w) for w in cfg.dense_widths)
    lines = [
        f"in_channels={cfg.in_channels}",
        f"input_h={cfg.input_h}",
        f"input_w={cfg.input_w}",
        f"blocks={blocks}",
        f"dense_widths={dense}",
        f"dropout_p={cfg.dropout_p}",
        f"padding={cfg.padding}",
        f"dtype={cfg.dtype}",
        f"bn_momentum={cfg.bn_momentum}",
        f"bn_epsilon={cfg.bn_epsilon}",
    ]
    return "\n".join(lines) + "\n"


def parse_config(text: str) -> ModelConfig:
    fields = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CorruptionError(f"bad config line {lineno}: {line!r}")
        key, value = line.split("=", 1)
        fields[key.strip()] = value.strip()
    try:
        blocks = []
        for part in fields["blocks"].split(","):
            f, k, flavor, bn = part.split(":")
            blocks.append(BlockSpec(int(f), int(k), flavor, bn == "bn"))
        dense = tuple(int(w) for w in fields["dense_widths"].split(",") if w)
        return ModelConfig(
            in_channels=int(fields["in_channels"]),
            input_h=int(fields["input_h"]),
            input_w=int(fields["input_w"]),
            blocks=tuple(blocks),
            dense_widths=dense,
            dropout_p=float(fields["dropout_p"]),
            padding=fields["padding"],
            dtype=fields["dtype"],
            bn_momentum=float(fields.get("bn_momentum", 0.9)),
            bn_epsilon=float(fields.get("bn_epsilon", 1e-5)),
        )
    except (KeyError, ValueError) as exc:
        raise CorruptionError(f"bad model config block: {exc}") from None


def save_checkpoint(model: Model) -> bytes:
    cfg_blob = serialize_config(model.cfg).encode()
    tensors = model.tensors()
    payload = b"".join(np.ascontiguousarray(arr, dtype="<f4").tobytes() for _, arr in tensors)
    return b"".join(
        [
            CHECKPOINT_MAGIC,
            struct.pack("<I", len(cfg_blob)),
            cfg_blob,
            struct.pack("<I", len(tensors)),
            payload,
            struct.pack("<Q", len(payload)),
        ]
    )


def load_checkpoint(data: bytes) -> Model:
    if data[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CorruptionError("bad checkpoint magic")
    pos = len(CHECKPOINT_MAGIC)
    try:
        (cfg_len,) = struct.unpack_from("<I", data, pos)
        pos += 4
        cfg = parse_config(data[pos : pos + cfg_len].decode())
        pos += cfg_len
        (n_tensors,) = struct.unpack_from("<I", data, pos)
        pos += 4
    except (struct.error, UnicodeDecodeError) as exc:
        raise CorruptionError(f"truncated checkpoint header: {exc}") from None
    if len(data) < pos + 8:
        raise CorruptionError("truncated checkpoint: missing length guard")
    (guard,) = struct.unpack_from("<Q", data, len(data) - 8)
    payload = data[pos : len(data) - 8]
    if guard != len(payload):
        raise CorruptionError(f"length guard {guard} != payload size {len(payload)}")
    model = build_model(cfg, rng=None)
    tensors = model.tensors()
    if n_tensors != len(tensors):
        raise CorruptionError(f"checkpoint lists {n_tensors} tensors, model has {len(tensors)}")
    expected = sum(int(np.prod(arr.shape)) for _, arr in tensors) * 4
    if len(payload) != expected:
        raise CorruptionError(f"payload size {len(payload)} != expected {expected}")
    off = 0
    for _, arr in tensors:
        count = int(np.prod(arr.shape))
        vals = np.frombuffer(payload, dtype="<f4", count=count, offset=off)
        arr[:] = vals.reshape(arr.shape).astype(arr.dtype)
        off += count * 4
    return model
