"""Convolutional auto-encoders: architecture presets, forward pass, weights I/O.

Four presets share one encoder-decoder layer table:
R_small/R_large are real-valued, C_small/C_large complex-valued. For the
complex presets the tabulated filter counts are total feature maps, so
each layer holds half as many complex filters (one complex filter = one
real plus one imaginary map). This reading reproduces the reference
parameter counts 100,226 and 397,442.
"""

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .complex_ops import ComplexBNState, ComplexKernel, ComplexTensor, complex_batch_norm, complex_conv2d
from .errors import FormatError, ShapeError
from .tensor import BatchNormState, Conv2dParams, Tensor, as_tensor, batch_norm, conv2d, maxpool2, relu, tanh_out, upsample2

KINDS = ("conv", "pool_conv", "up_conv")
ACTIVATIONS = ("relu", "tanh", "none")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    filters: int
    batch_norm: bool = False
    domain: str = "real"
    activation: str = "relu"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"layer kind must be one of {KINDS}, got {self.kind!r}")
        if self.filters < 1:
            raise ValueError(f"filters must be >= 1, got {self.filters}")
        if self.domain not in ("real", "complex"):
            raise ValueError(f"domain must be 'real' or 'complex', got {self.domain!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")


@dataclass(frozen=True)
class ArchitectureSpec:
    name: str
    layers: tuple
    domain: str = "real"
    input_channels: int = 1

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ValueError("an architecture needs at least one layer")
        if any(layer.domain != self.domain for layer in self.layers):
            raise ValueError(f"{self.name}: every layer must share the {self.domain} domain")
        if self.layers[-1].filters != self.input_channels:
            raise ValueError(
                f"{self.name}: output layer has {self.layers[-1].filters} filters, "
                f"input has {self.input_channels} channels"
            )
        if self.n_pools != sum(layer.kind == "up_conv" for layer in self.layers):
            raise ValueError(f"{self.name}: pool and upsample stages must balance")
        depth = 0
        for layer in self.layers:
            depth += {"pool_conv": 1, "up_conv": -1}.get(layer.kind, 0)
            if depth < 0:
                raise ValueError(f"{self.name}: upsampling before a matching pool stage")

    @property
    def n_pools(self):
        return sum(layer.kind == "pool_conv" for layer in self.layers)

    def to_dict(self):
        return {
            "name": self.name,
            "domain": self.domain,
            "input_channels": self.input_channels,
            "layers": [asdict(layer) for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            name=d["name"],
            layers=tuple(LayerSpec(**layer) for layer in d["layers"]),
            domain=d["domain"],
            input_channels=d["input_channels"],
        )


# (kind, tabulated filters, batch norm); the final layer maps back to the input channels
_TABLE = (
    ("conv", 8, False),
    ("conv", 8, True),
    ("pool_conv", 16, True),
    ("pool_conv", 32, True),
    ("pool_conv", 64, True),
    ("pool_conv", 128, False),
    ("up_conv", 64, True),
    ("up_conv", 32, True),
    ("up_conv", 16, True),
    ("up_conv", 8, False),
    ("conv", 8, True),
)


def _preset(name, domain, width):
    per_map = 2 if domain == "complex" else 1
    layers = [LayerSpec(kind, f * width // per_map, bn, domain, "relu") for kind, f, bn in _TABLE]
    layers.append(LayerSpec("conv", 1, False, domain, "tanh"))
    return ArchitectureSpec(name, tuple(layers), domain, 1)


PRESETS = {
    "C_small": _preset("C_small", "complex", 1),
    "R_small": _preset("R_small", "real", 1),
    "C_large": _preset("C_large", "complex", 2),
    "R_large": _preset("R_large", "real", 2),
}

# published "parameters on graph" for each preset
PUBLISHED_COUNTS = {"C_small": 100_226, "R_small": 198_001, "C_large": 397_442, "R_large": 790_945}


def get_preset(name):
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


# ---------------------------------------------------------------------------
# model


@dataclass
class _Layer:
    spec: LayerSpec
    conv: object
    bn: object = None


class Autoencoder:
    """A built auto-encoder: its spec plus named parameters and BN states."""

    def __init__(self, spec, layers):
        self.spec = spec
        self.layers = layers

    @property
    def is_complex(self):
        return self.spec.domain == "complex"

    def parameters(self):
        """Trainable tensors by unique name, in layer order."""
        params = {}
        for i, layer in enumerate(self.layers):
            prefix = f"layer{i:02d}"
            if self.is_complex:
                k = layer.conv
                params[f"{prefix}.conv.weight_re"] = k.k_re
                params[f"{prefix}.conv.weight_im"] = k.k_im
                params[f"{prefix}.conv.bias_re"] = k.bias_re
                params[f"{prefix}.conv.bias_im"] = k.bias_im
            else:
                params[f"{prefix}.conv.weight"] = layer.conv.weight
                params[f"{prefix}.conv.bias"] = layer.conv.bias
            if layer.bn is not None:
                params[f"{prefix}.bn.gamma"] = layer.bn.gamma
                params[f"{prefix}.bn.beta"] = layer.bn.beta
        return params

    def _running_names(self, i):
        prefix = f"layer{i:02d}.bn"
        second = "running_cov" if self.is_complex else "running_var"
        return (f"{prefix}.running_mean", "running_mean"), (f"{prefix}.{second}", second)

    def state_dict(self):
        """Every buffer (parameters and BN running statistics) as numpy arrays."""
        out = {name: t.data for name, t in self.parameters().items()}
        for i, layer in enumerate(self.layers):
            if layer.bn is not None:
                for name, attr in self._running_names(i):
                    out[name] = getattr(layer.bn, attr)
        return dict(sorted(out.items()))

    def load_state_dict(self, state):
        params = self.parameters()
        expected = {name: t.shape for name, t in params.items()}
        for i, layer in enumerate(self.layers):
            if layer.bn is not None:
                for name, attr in self._running_names(i):
                    expected[name] = getattr(layer.bn, attr).shape
        missing = sorted(set(expected) - set(state))
        extra = sorted(set(state) - set(expected))
        if missing or extra:
            raise ValueError(f"state mismatch for {self.spec.name}: missing {missing}, unexpected {extra}")
        for name, shape in expected.items():
            if tuple(np.shape(state[name])) != tuple(shape):
                raise ValueError(f"{name}: expected shape {shape}, got {np.shape(state[name])}")
        for name, t in params.items():
            t.data = np.array(state[name], dtype=np.float64)
        for i, layer in enumerate(self.layers):
            if layer.bn is not None:
                for name, attr in self._running_names(i):
                    setattr(layer.bn, attr, np.array(state[name], dtype=np.float64))

    def zero_grad(self):
        for t in self.parameters().values():
            t.grad = None

    def forward(self, x, mode="train"):
        return forward(self, x, mode)

    __call__ = forward


def build(spec, seed=0):
    """Initialize every layer of ``spec`` deterministically from ``seed``."""
    if isinstance(spec, str):
        spec = get_preset(spec)
    rng = np.random.default_rng(seed)
    layers = []
    c_in = spec.input_channels
    for i, ls in enumerate(spec.layers):
        prefix = f"layer{i:02d}"
        if spec.domain == "complex":
            conv = ComplexKernel.create(c_in, ls.filters, rng, name=f"{prefix}.conv")
            bn = ComplexBNState.create(ls.filters, name=f"{prefix}.bn") if ls.batch_norm else None
        else:
            conv = Conv2dParams.create(c_in, ls.filters, rng, name=f"{prefix}.conv")
            bn = BatchNormState.create(ls.filters, name=f"{prefix}.bn") if ls.batch_norm else None
        layers.append(_Layer(ls, conv, bn))
        c_in = ls.filters
    return Autoencoder(spec, layers)


def forward(model, x, mode="train"):
    """Run the auto-encoder; output has the same shape and kind as ``x``.

    Spatial dims must be divisible by 2**(number of pool stages). Complex
    models take a :class:`ComplexTensor`, real models a rank-4 tensor.
    """
    spec = model.spec
    if model.is_complex:
        if not isinstance(x, ComplexTensor):
            raise TypeError(f"{spec.name} is complex; pass a ComplexTensor")
        shape = x.shape
        h = x.stacked
    else:
        h = as_tensor(x)
        if h.ndim != 4:
            raise ShapeError(f"expected (n, c, h, w) input, got shape {h.shape}")
        shape = h.shape
    if shape[1] != spec.input_channels:
        raise ShapeError(f"{spec.name} expects {spec.input_channels} input channel(s), got {shape[1]}")
    factor = 2**spec.n_pools
    if shape[2] % factor or shape[3] % factor:
        raise ShapeError(
            f"{spec.name}: height and width must be divisible by {factor} "
            f"({spec.n_pools} pool stages), got {shape[2]}x{shape[3]}"
        )

    for layer in model.layers:
        ls = layer.spec
        if ls.kind == "pool_conv":
            h = maxpool2(h)
        elif ls.kind == "up_conv":
            h = upsample2(h)
        if model.is_complex:
            z = complex_conv2d(ComplexTensor.from_stacked(h), layer.conv)
            if layer.bn is not None:
                z = complex_batch_norm(z, layer.bn, mode)
            h = z.stacked
        else:
            h = conv2d(h, layer.conv.weight, layer.conv.bias)
            if layer.bn is not None:
                h = batch_norm(h, layer.bn, mode)
        if ls.activation == "relu":
            h = relu(h)
        elif ls.activation == "tanh":
            h = tanh_out(h)
    return ComplexTensor.from_stacked(h) if model.is_complex else h


def predict(model, x):
    """Inference-mode forward on numpy input; returns numpy (complex for complex models)."""
    x = np.asarray(x)
    if model.is_complex:
        return forward(model, ComplexTensor.from_complex(x), mode="infer").to_complex()
    return forward(model, Tensor(x), mode="infer").data


def complex_from_real(real_model):
    """Complex model with the same filter layout whose imaginary weights are zero.

    On inputs with zero imaginary part it reproduces ``real_model``.
    """
    rs = real_model.spec
    if rs.domain != "real":
        raise ValueError("complex_from_real expects a real model")
    layers = tuple(LayerSpec(l.kind, l.filters, l.batch_norm, "complex", l.activation) for l in rs.layers)
    cspec = ArchitectureSpec(f"{rs.name}_as_complex", layers, "complex", rs.input_channels)
    cm = build(cspec, seed=0)
    for rl, cl in zip(real_model.layers, cm.layers):
        cl.conv.k_re.data = rl.conv.weight.data.copy()
        cl.conv.k_im.data = np.zeros_like(rl.conv.weight.data)
        cl.conv.bias_re.data = rl.conv.bias.data.copy()
        cl.conv.bias_im.data = np.zeros_like(rl.conv.bias.data)
        if rl.bn is not None:
            c = rl.bn.channels
            cl.bn.epsilon = rl.bn.epsilon
            cl.bn.momentum = rl.bn.momentum
            cl.bn.gamma.data = np.stack([rl.bn.gamma.data, np.zeros(c), np.ones(c)], axis=-1)
            cl.bn.beta.data = np.stack([rl.bn.beta.data, np.zeros(c)], axis=-1)
            cl.bn.running_mean = np.stack([rl.bn.running_mean, np.zeros(c)], axis=-1)
            cl.bn.running_cov = np.stack([rl.bn.running_var, np.zeros(c), np.ones(c)], axis=-1)
    return cm


# ---------------------------------------------------------------------------
# parameter counting


def count_params(model):
    """Parameter totals under both batch-norm counting conventions.

    ``on_graph_2per_bn`` counts only trainable BN values (gamma, beta: 2 per
    real channel, 5 per complex channel); ``on_graph_4per_bn`` adds the
    running statistics (4 per real channel, 10 per complex channel).
    ``trainable`` equals ``on_graph_2per_bn``.
    """
    trainable = sum(t.data.size for t in model.parameters().values())
    total = sum(np.size(a) for a in model.state_dict().values())
    return {"trainable": trainable, "on_graph_2per_bn": trainable, "on_graph_4per_bn": total}


def published_match(name, counts):
    """Which convention (if any) reproduces the published count for a preset."""
    target = PUBLISHED_COUNTS.get(name)
    for key in ("on_graph_2per_bn", "on_graph_4per_bn"):
        if counts[key] == target:
            return key
    return None


# ---------------------------------------------------------------------------
# weight container
#
# layout (little endian):
#   b"CXAE" | u16 version | u32 record count
#   record: u16 name length | name utf-8 | u8 dtype code | u8 rank | u32 dims[rank] | raw data
#   u32 manifest length | manifest JSON (utf-8)

CONTAINER_MAGIC = b"CXAE"
CONTAINER_VERSION = 1
_DTYPE_CODES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}
_CODE_FOR = {"float64": 0, "float32": 1}


def write_container(path, buffers, manifest, dtype="float64"):
    code = _CODE_FOR[dtype]
    np_dtype = _DTYPE_CODES[code]
    parts = [CONTAINER_MAGIC, struct.pack("<HI", CONTAINER_VERSION, len(buffers))]
    for name, array in buffers.items():
        array = np.ascontiguousarray(array, dtype=np_dtype)
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw_name)) + raw_name)
        parts.append(struct.pack("<BB", code, array.ndim))
        parts.append(struct.pack(f"<{array.ndim}I", *array.shape))
        parts.append(array.tobytes())
    raw_manifest = json.dumps(manifest, sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(raw_manifest)) + raw_manifest)
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, count, what):
        end = self.pos + count
        if end > len(self.buf):
            raise FormatError(
                f"truncated weight file: {what} needs {count} bytes at offset {self.pos}, "
                f"missing {end - len(self.buf)} bytes"
            )
        chunk = self.buf[self.pos : end]
        self.pos = end
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def read_container(path):
    """Parse a weight container into ``(buffers, manifest)``."""
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(4, "magic") != CONTAINER_MAGIC:
        raise FormatError(f"{path}: not a CXAE weight file")
    version, count = r.unpack("<HI", "header")
    if version != CONTAINER_VERSION:
        raise FormatError(f"{path}: unsupported container version {version}")
    buffers = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H", "name length")
        name = r.take(name_len, "name").decode("utf-8")
        code, rank = r.unpack("<BB", f"{name} header")
        if code not in _DTYPE_CODES:
            raise FormatError(f"{name}: unknown dtype code {code}")
        dims = r.unpack(f"<{rank}I", f"{name} dims")
        dtype = _DTYPE_CODES[code]
        n = int(np.prod(dims, dtype=np.int64))
        data = np.frombuffer(r.take(n * dtype.itemsize, f"{name} data"), dtype=dtype)
        buffers[name] = data.astype(np.float64).reshape(dims)
    (manifest_len,) = r.unpack("<I", "manifest length")
    manifest = json.loads(r.take(manifest_len, "manifest").decode("utf-8"))
    if r.pos != len(r.buf):
        raise FormatError(f"{path}: {len(r.buf) - r.pos} trailing bytes after manifest")
    return buffers, manifest


def save_weights(model, path, dtype="float64", optimizer=None):
    """Write all model buffers, plus Adam moments if ``optimizer`` is given."""
    buffers = {f"model/{k}": v for k, v in model.state_dict().items()}
    manifest = {"spec": model.spec.to_dict(), "dtype": dtype}
    if optimizer is not None:
        for name in sorted(optimizer.m):
            buffers[f"adam.m/{name}"] = optimizer.m[name]
            buffers[f"adam.v/{name}"] = optimizer.v[name]
        manifest["adam_step"] = int(optimizer.t)
    write_container(path, buffers, manifest, dtype)


def load_weights(path):
    """Rebuild an :class:`Autoencoder` from a weight container."""
    buffers, manifest = read_container(path)
    try:
        spec = ArchitectureSpec.from_dict(manifest["spec"])
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: manifest lacks a valid architecture spec") from exc
    model = build(spec, seed=0)
    state = {k[len("model/") :]: v for k, v in buffers.items() if k.startswith("model/")}
    try:
        model.load_state_dict(state)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return model


def identity_spec(domain="real"):
    """Single linear 3x3 conv; with a centred delta kernel it is the identity map."""
    return ArchitectureSpec("identity", (LayerSpec("conv", 1, False, domain, "none"),), domain, 1)


def identity_model(domain="real"):
    model = build(identity_spec(domain))
    layer = model.layers[0]
    if domain == "complex":
        layer.conv.k_re.data[:] = 0.0
        layer.conv.k_re.data[0, 0, 1, 1] = 1.0
        layer.conv.k_im.data[:] = 0.0
    else:
        layer.conv.weight.data[:] = 0.0
        layer.conv.weight.data[0, 0, 1, 1] = 1.0
    return model
