"""Dense ReLU networks with hand-written backward passes, plus a binary
checkpoint container.

All networks in the package (teachers, student, feature regressors and the
policy trunk) are ``DenseNet`` instances.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor_core as tc
from .errors import FormatError, ParameterError, ShapeError, StateError
from .rng import stream

ACTIVATIONS = ("relu", "none")

MAGIC = b"MTKD"
FORMAT_VERSION = 1


@dataclass
class NetSpec:
    layer_sizes: list
    activations: list
    init_seed: int = 0

    def __post_init__(self):
        self.layer_sizes = [int(s) for s in self.layer_sizes]
        self.activations = list(self.activations)
        if len(self.layer_sizes) < 2:
            raise ParameterError(f"a net needs at least two layer sizes, got {self.layer_sizes}")
        if len(self.activations) != len(self.layer_sizes) - 1:
            raise ParameterError("activations must be one shorter than layer_sizes")
        if any(s < 1 for s in self.layer_sizes):
            raise ParameterError(f"layer sizes must be positive: {self.layer_sizes}")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ParameterError(f"unknown activation {a!r}")

    @classmethod
    def mlp(cls, sizes, init_seed=0):
        """Hidden layers use ReLU, the output layer is affine."""
        return cls(list(sizes), ["relu"] * (len(sizes) - 2) + ["none"], init_seed)


@dataclass
class Layer:
    weight: tc.ParamTensor
    bias: tc.ParamTensor
    activation: str

    @property
    def fan_in(self):
        return self.weight.shape[0]

    @property
    def fan_out(self):
        return self.weight.shape[1]


@dataclass
class _Cache:
    inputs: list = field(default_factory=list)
    preacts: list = field(default_factory=list)


class DenseNet:
    def __init__(self, spec: NetSpec, layers: list[Layer]):
        for prev, nxt in zip(layers, layers[1:]):
            if prev.fan_out != nxt.fan_in:
                raise ShapeError(f"layer dims do not chain: {prev.weight.shape} -> {nxt.weight.shape}")
        self.spec = spec
        self.layers = layers
        self._cache = None

    @property
    def in_dim(self):
        return self.layers[0].fan_in

    @property
    def out_dim(self):
        return self.layers[-1].fan_out

    @property
    def feature_dim(self):
        return self.layers[-1].fan_in

    def parameters(self):
        params = []
        for layer in self.layers:
            params.extend((layer.weight, layer.bias))
        return params

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def forward_features(self, x, cache=True):
        """Return ``(feature, logits)``: the input to the last layer and its output.

        With ``cache=False`` nothing is retained, so the call is safe on a net
        whose cache is still waiting for a backward pass.
        """
        h = tc.as_matrix(x)
        if h.shape[1] != self.in_dim:
            raise ShapeError(f"input has {h.shape[1]} columns, net expects {self.in_dim}")
        record = _Cache() if cache else None
        feature = h
        for layer in self.layers:
            feature = h
            z = tc.matmul(h, layer.weight.value) + layer.bias.value
            if record is not None:
                record.inputs.append(h)
                record.preacts.append(z)
            h = tc.relu(z) if layer.activation == "relu" else z
        if cache:
            self._cache = record
        return feature, h

    def forward(self, x, cache=True):
        return self.forward_features(x, cache=cache)[1]

    def backward(self, grad_logits, grad_feature=None):
        """Accumulate parameter grads from the last forward pass; return d/d input.

        ``grad_feature`` is added at the penultimate activation (the input of
        the last layer), on top of whatever flows back from the logits.
        """
        cache = self._cache
        if cache is None:
            raise StateError("backward called without a cached forward pass")
        g = tc.as_matrix(grad_logits)
        if g.shape != cache.preacts[-1].shape:
            raise StateError(f"grad_logits shape {g.shape} does not match cached output {cache.preacts[-1].shape}")
        if grad_feature is not None:
            grad_feature = tc.as_matrix(grad_feature)
            if grad_feature.shape != cache.inputs[-1].shape:
                raise StateError(
                    f"grad_feature shape {grad_feature.shape} does not match cached feature {cache.inputs[-1].shape}"
                )
        last = len(self.layers) - 1
        for k in range(last, -1, -1):
            layer = self.layers[k]
            if layer.activation == "relu":
                g = tc.relu_backward(cache.preacts[k], g)
            x = cache.inputs[k]
            layer.weight.grad += tc.matmul(x.T, g)
            layer.bias.grad += g.sum(axis=0, keepdims=True)
            g = tc.matmul(g, layer.weight.value.T)
            if k == last and grad_feature is not None:
                g = g + grad_feature
        self._cache = None
        return g

    def clear_cache(self):
        self._cache = None

    def state_arrays(self):
        """``(name, array)`` pairs in a fixed order."""
        out = []
        for i, layer in enumerate(self.layers):
            out.append((f"layer{i}.weight", layer.weight.value))
            out.append((f"layer{i}.bias", layer.bias.value))
        return out

    def checksum(self) -> str:
        h = hashlib.sha256()
        for _, arr in self.state_arrays():
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()

    def copy(self) -> "DenseNet":
        layers = [
            Layer(tc.ParamTensor(l.weight.value), tc.ParamTensor(l.bias.value), l.activation) for l in self.layers
        ]
        return DenseNet(NetSpec(list(self.spec.layer_sizes), list(self.spec.activations), self.spec.init_seed), layers)


def build_net(spec: NetSpec) -> DenseNet:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)) from the spec's seed; zero biases."""
    if spec is None:
        raise ParameterError("empty net spec")
    rng = stream(spec.init_seed, "net-init")
    layers = []
    for fan_in, fan_out, act in zip(spec.layer_sizes, spec.layer_sizes[1:], spec.activations):
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        layers.append(Layer(tc.ParamTensor(w), tc.ParamTensor(np.zeros((1, fan_out))), act))
    return DenseNet(spec, layers)


def forward_features(net: DenseNet, x, cache=True):
    return net.forward_features(x, cache=cache)


def backward(net: DenseNet, grad_logits, grad_feature=None):
    return net.backward(grad_logits, grad_feature)


# ---------------------------------------------------------------------------
# checkpoint container
#
#   "MTKD" | u8 version | u32 LE manifest length | UTF-8 JSON manifest |
#   little-endian float64 arrays in manifest order
# ---------------------------------------------------------------------------

_HEADER = len(MAGIC) + 1 + 4


def checkpoint_bytes(nets: dict, meta=None) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for name, net in nets.items():
        arrays = []
        for arr_name, arr in net.state_arrays():
            raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            arrays.append({"name": arr_name, "shape": list(arr.shape), "offset": offset})
            chunks.append(raw)
            offset += len(raw)
        entries.append({"name": name, "spec": asdict(net.spec), "arrays": arrays})
    manifest = {"nets": entries, "data_bytes": offset, "meta": meta or {}}
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + bytes([FORMAT_VERSION]) + struct.pack("<I", len(blob)) + blob + b"".join(chunks)


def save_checkpoint(nets: dict, path, meta=None):
    Path(path).write_bytes(checkpoint_bytes(nets, meta))


def parse_checkpoint(buf: bytes):
    """Decode a checkpoint; return ``(nets, meta)``. Raises FormatError."""
    if len(buf) < len(MAGIC) or buf[: len(MAGIC)] != MAGIC:
        raise FormatError(f"bad magic {buf[:len(MAGIC)]!r}, expected {MAGIC!r}", offset=0)
    if len(buf) < len(MAGIC) + 1:
        raise FormatError("truncated before version byte", offset=len(MAGIC))
    version = buf[len(MAGIC)]
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}", offset=len(MAGIC))
    if len(buf) < _HEADER:
        raise FormatError("truncated manifest length", offset=len(MAGIC) + 1)
    (mlen,) = struct.unpack_from("<I", buf, len(MAGIC) + 1)
    data_start = _HEADER + mlen
    if len(buf) < data_start:
        raise FormatError(f"truncated manifest: need {mlen} bytes", offset=_HEADER)
    try:
        manifest = json.loads(buf[_HEADER:data_start].decode("utf-8"))
        entries = manifest["nets"]
        data_bytes = int(manifest["data_bytes"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"malformed manifest: {exc}", offset=_HEADER) from None
    if len(buf) < data_start + data_bytes:
        raise FormatError(
            f"truncated array data: expected {data_bytes} bytes, found {len(buf) - data_start}",
            offset=len(buf),
        )
    if len(buf) > data_start + data_bytes:
        raise FormatError("trailing bytes after array data", offset=data_start + data_bytes)

    nets = {}
    for entry in entries:
        name = entry["name"]
        if name in nets:
            raise FormatError(f"duplicate net name {name!r} in manifest", offset=_HEADER)
        try:
            spec = NetSpec(**entry["spec"])
        except (TypeError, ParameterError) as exc:
            raise FormatError(f"bad spec for net {name!r}: {exc}", offset=_HEADER) from None
        arrays = {}
        for a in entry["arrays"]:
            shape = tuple(a["shape"])
            count = int(np.prod(shape))
            start = data_start + int(a["offset"])
            end = start + 8 * count
            if end > data_start + data_bytes:
                raise FormatError(f"array {name}.{a['name']} runs past end of data", offset=start)
            arrays[a["name"]] = np.frombuffer(buf[start:end], dtype="<f8").astype(tc.DTYPE).reshape(shape)
        layers = []
        for i, act in enumerate(spec.activations):
            try:
                w = arrays[f"layer{i}.weight"]
                b = arrays[f"layer{i}.bias"]
            except KeyError as exc:
                raise FormatError(f"net {name!r} is missing array {exc}", offset=_HEADER) from None
            layers.append(Layer(tc.ParamTensor(w), tc.ParamTensor(b), act))
        nets[name] = DenseNet(spec, layers)
    return nets, manifest.get("meta", {})


def load_checkpoint(path, with_meta=False):
    nets, meta = parse_checkpoint(Path(path).read_bytes())
    return (nets, meta) if with_meta else nets
