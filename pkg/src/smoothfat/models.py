"""Desk-scale classifiers: an MLP and a small CNN, with flat parameter views and checkpoints."""

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad

CKPT_MAGIC = b"SFATCKPT"


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description.

    ``kind="mlp"``: input -> hidden widths (relu) -> num_classes.
    ``kind="cnn"``: conv3x3(C -> channels[0]), relu, conv3x3(-> channels[1]), relu,
    two 2x2 mean pools, dense -> num_classes. ``input_shape`` is (C, H, W) and
    H, W must be divisible by 4.
    """

    kind: str = "mlp"
    input_shape: tuple = (784,)
    num_classes: int = 10
    hidden: tuple = (256,)
    channels: tuple = (8, 16)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "hidden", tuple(int(v) for v in self.hidden))
        object.__setattr__(self, "channels", tuple(int(v) for v in self.channels))
        self.validate()

    def validate(self):
        if self.kind not in ("mlp", "cnn"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if not self.input_shape or any(v <= 0 for v in self.input_shape):
            raise ValueError(f"invalid input shape {self.input_shape}")
        if self.kind == "mlp":
            if any(v <= 0 for v in self.hidden):
                raise ValueError("hidden widths must be positive")
        else:
            if len(self.input_shape) != 3:
                raise ValueError("cnn input shape must be (C, H, W)")
            if len(self.channels) != 2 or any(v <= 0 for v in self.channels):
                raise ValueError("cnn needs two positive channel counts")
            if self.input_shape[1] % 4 or self.input_shape[2] % 4:
                raise ValueError("cnn spatial dims must be divisible by 4")

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def param_shapes(self):
        """Ordered (name, shape, fan_in) triples."""
        shapes = []
        if self.kind == "mlp":
            widths = [int(np.prod(self.input_shape)), *self.hidden, self.num_classes]
            for i, (a, b) in enumerate(zip(widths[:-1], widths[1:]), start=1):
                shapes.append((f"fc{i}.w", (a, b), a))
                shapes.append((f"fc{i}.b", (b,), a))
        else:
            c, h, w = self.input_shape
            c1, c2 = self.channels
            shapes += [("conv1.w", (c1, c, 3, 3), 9 * c), ("conv1.b", (c1,), 9 * c),
                       ("conv2.w", (c2, c1, 3, 3), 9 * c1), ("conv2.b", (c2,), 9 * c1)]
            flat = c2 * (h // 4) * (w // 4)
            shapes += [("fc.w", (flat, self.num_classes), flat), ("fc.b", (self.num_classes,), flat)]
        return shapes

    def param_count(self):
        return sum(int(np.prod(s)) for _, s, _ in self.param_shapes())


@dataclass
class ModelParams:
    spec: ModelSpec
    arrays: dict = field(default_factory=dict)

    @property
    def size(self):
        return sum(a.size for a in self.arrays.values())

    def flatten(self):
        return flatten_params(self)

    def copy(self):
        return ModelParams(self.spec, {k: v.copy() for k, v in self.arrays.items()})

    def on_tape(self, tape):
        """Leaf tensors for every parameter, recorded on ``tape``."""
        return {k: tape.leaf(v) for k, v in self.arrays.items()}


def build_model(spec, seed):
    """He-initialized weights (normal, std sqrt(2 / fan_in)), zero biases, float32."""
    spec.validate()
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape, fan_in in spec.param_shapes():
        if name.endswith(".b"):
            arrays[name] = np.zeros(shape, dtype=np.float32)
        else:
            arrays[name] = (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)
    return ModelParams(spec, arrays)


def flatten_params(params):
    return np.concatenate([a.reshape(-1) for a in params.arrays.values()])


def unflatten(spec, vector, dtype=np.float32):
    vector = np.asarray(vector)
    expected = spec.param_count()
    if vector.ndim != 1 or vector.size != expected:
        raise ValueError(f"flat vector has {vector.size} entries, model needs {expected}")
    arrays, off = {}, 0
    for name, shape, _ in spec.param_shapes():
        n = int(np.prod(shape))
        arrays[name] = vector[off:off + n].reshape(shape).astype(dtype, copy=True)
        off += n
    return ModelParams(spec, arrays)


def _check_inputs(spec, x):
    data = x.data if isinstance(x, ad.Tensor) else np.asarray(x)
    if data.shape[1:] != spec.input_shape:
        raise ad.ShapeError(f"images have shape {data.shape[1:]}, model expects {spec.input_shape}")
    if data.size and (data.min() < 0 or data.max() > 1):
        raise ValueError("pixel values must lie in [0, 1]")


def forward(params, x, weights=None):
    """Logits [batch, K] for images ``x``.

    ``weights`` maps parameter names to tensors (e.g. from ``params.on_tape``);
    without it the stored arrays are used as constants. ``x`` may be a tape
    tensor, so gradients flow to inputs, parameters, or both.
    """
    spec = params.spec
    _check_inputs(spec, x)
    if weights is None:
        weights = {k: ad.Tensor(v) for k, v in params.arrays.items()}
    if not isinstance(x, ad.Tensor):
        x = ad.constant(x)
    n = x.shape[0]
    if spec.kind == "mlp":
        h = x.reshape(n, -1) if x.data.ndim != 2 else x
        layers = len(spec.hidden) + 1
        for i in range(1, layers + 1):
            h = h @ weights[f"fc{i}.w"] + weights[f"fc{i}.b"]
            if i < layers:
                h = h.relu()
        return h
    h = ad.conv3x3(x, weights["conv1.w"], weights["conv1.b"]).relu()
    h = ad.conv3x3(h, weights["conv2.w"], weights["conv2.b"]).relu()
    h = ad.meanpool2(ad.meanpool2(h))
    h = h.reshape(n, -1)
    return h @ weights["fc.w"] + weights["fc.b"]


def predict(params, x):
    """Argmax class per row; ties go to the lowest index."""
    return np.argmax(forward(params, x).data, axis=1)


def save_checkpoint(path, params, seed=None, epoch=None, extra=None):
    header = {"spec": params.spec.to_dict(), "seed": seed, "epoch": epoch}
    if extra:
        header.update(extra)
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    flat = flatten_params(params).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(flat.tobytes())


def load_checkpoint(path):
    """Returns ``(params, header)``. Raises :class:`CheckpointError` on malformed files."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:8]!r}")
    if len(raw) < 12:
        raise CheckpointError(f"{path}: truncated header length")
    (hlen,) = struct.unpack("<I", raw[8:12])
    if len(raw) < 12 + hlen:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[12:12 + hlen].decode("utf-8"))
        spec = ModelSpec.from_dict(header["spec"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: invalid header ({exc})") from None
    body = raw[12 + hlen:]
    if len(body) != 4 * spec.param_count():
        raise CheckpointError(f"{path}: expected {spec.param_count()} floats, found {len(body) / 4:g}")
    flat = np.frombuffer(body, dtype="<f4")
    return unflatten(spec, flat), header
