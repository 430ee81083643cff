"""Architecture definition, shape propagation, parameter auditing and the
executable network (forward/backward) for the PV-faultNet classifier."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import nn
from .nn import ConvKernel, LinearLayer, ShapeError

LAYER_KINDS = {
    "conv",
    "maxpool",
    "flatten",
    "fully_connected",
    "relu",
    "batchnorm",
    "dropout",
    "output",
}

# Published per-layer learnable-parameter counts for the reference build,
# keyed by the labels produced by count_parameters().
PUBLISHED_LAYER_COUNTS = {
    "Convolution-01": 140,
    "Convolution-02": 460,
    "FC-01": 2_916_100,
    "FC-02": 5_050,
    "Output": 102,
}
PUBLISHED_TOTAL = 2_921_852

# Published model sizes in millions of parameters, for the efficiency
# comparison block. These are reference constants, not implemented models.
PUBLISHED_MODEL_SIZES_M = {
    "ResNet50": 23.58,
    "VGG16": 138.35,
    "GoogleNet": 6.8,
    "PV-CrackNet": 7.01,
    "PV-faultNet": 2.92,
}


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    filters: int = 0
    kernel: int = 0
    stride: int = 1
    padding: int = 0
    units: int = 0
    rate: float = 0.0
    channels: int = 0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind '{self.kind}'")
        if self.kind == "conv":
            if self.filters < 1:
                raise ValueError("conv layer needs at least one filter")
            if self.kernel < 1 or self.kernel % 2 == 0:
                raise ValueError(f"conv kernel extent must be odd and positive, got {self.kernel}")
        if self.kind in ("fully_connected", "output") and self.units < 1:
            raise ValueError(f"{self.kind} layer needs at least one unit")
        if self.kind == "dropout" and not 0 <= self.rate < 1:
            raise ValueError(f"dropout rate must be in [0,1), got {self.rate}")
        if self.kind == "batchnorm" and self.channels < 1:
            raise ValueError("batchnorm layer needs a positive channel count")


@dataclass(frozen=True)
class ArchitectureConfig:
    name: str
    input_shape: tuple  # (channels, height, width)
    layers: tuple  # of LayerSpec

    def __post_init__(self):
        if len(self.input_shape) != 3 or any(e < 1 for e in self.input_shape):
            raise ValueError(f"input shape must be (C,H,W) with positive extents, got {self.input_shape}")
        outputs = [i for i, l in enumerate(self.layers) if l.kind == "output"]
        if len(outputs) != 1 or outputs[0] != len(self.layers) - 1:
            raise ValueError("architecture must end with exactly one output layer")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "input_shape": list(self.input_shape),
            "layers": [
                {k: v for k, v in asdict(l).items() if v not in (0, 0.0, "") or k in ("kind",)}
                for l in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureConfig":
        layers = tuple(LayerSpec(**{**l, "stride": l.get("stride", 1)}) for l in d["layers"])
        return cls(d["name"], tuple(d["input_shape"]), layers)

    def to_text(self) -> str:
        c, h, w = self.input_shape
        lines = [f"name: {self.name}", f"input: {c}x{h}x{w}"]
        for l in self.layers:
            parts = [l.kind]
            if l.kind == "conv":
                parts.append(f"filters={l.filters}")
                parts.append(f"kernel={l.kernel}")
                if l.stride != 1:
                    parts.append(f"stride={l.stride}")
                if l.padding != 0:
                    parts.append(f"padding={l.padding}")
            elif l.kind in ("fully_connected", "output"):
                parts.append(f"units={l.units}")
            elif l.kind == "dropout":
                parts.append(f"rate={l.rate}")
            elif l.kind == "batchnorm":
                parts.append(f"channels={l.channels}")
            lines.append("layer: " + " ".join(parts))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ArchitectureConfig":
        name = "unnamed"
        input_shape = None
        layers = []
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition(":")
            key, value = key.strip(), value.strip()
            if key == "name":
                name = value
            elif key == "input":
                input_shape = tuple(int(e) for e in value.split("x"))
            elif key == "layer":
                parts = value.split()
                kwargs = {"kind": parts[0]}
                for p in parts[1:]:
                    k, _, v = p.partition("=")
                    kwargs[k] = float(v) if k == "rate" else int(v)
                layers.append(LayerSpec(**kwargs))
            else:
                raise ValueError(f"unknown config line: {line!r}")
        if input_shape is None:
            raise ValueError("config file is missing the 'input' line")
        return cls(name, input_shape, tuple(layers))


def build_pvfaultnet(input_side: int) -> ArchitectureConfig:
    """The canonical two-conv-block / two-FC architecture at the given
    square input resolution (3-channel input)."""
    if input_side < 16:
        raise ValueError(f"input side must be at least 16, got {input_side}")
    layers = (
        LayerSpec("conv", filters=5, kernel=3),
        LayerSpec("maxpool"),
        LayerSpec("conv", filters=10, kernel=3),
        LayerSpec("maxpool"),
        LayerSpec("flatten"),
        LayerSpec("fully_connected", units=100),
        LayerSpec("relu"),
        LayerSpec("fully_connected", units=50),
        LayerSpec("relu"),
        LayerSpec("output", units=2),
    )
    config = ArchitectureConfig(f"pv-faultnet-{input_side}", (3, input_side, input_side), layers)
    shape_propagate(config)  # rejects inputs too small to survive the stack
    return config


def shape_propagate(config: ArchitectureConfig) -> list:
    """Per-layer output shapes, starting with the input shape. Spatial shapes
    are (C,H,W) tuples; flattened/FC shapes are plain ints."""
    shapes = [config.input_shape]
    cur = config.input_shape
    for i, layer in enumerate(config.layers):
        spatial = isinstance(cur, tuple)
        if layer.kind == "conv":
            if not spatial:
                raise ShapeError(f"layer {i} (conv) needs a spatial input, got flat size {cur}")
            c, h, w = cur
            h2 = nn.conv_output_size(h, layer.kernel, layer.stride, layer.padding)
            w2 = nn.conv_output_size(w, layer.kernel, layer.stride, layer.padding)
            if h2 < 1 or w2 < 1:
                raise ShapeError(f"layer {i} (conv): input {h}x{w} collapses below 1x1")
            cur = (layer.filters, h2, w2)
        elif layer.kind == "maxpool":
            if not spatial:
                raise ShapeError(f"layer {i} (maxpool) needs a spatial input, got flat size {cur}")
            c, h, w = cur
            if h < 2 or w < 2:
                raise ShapeError(f"layer {i} (maxpool): input {h}x{w} too small for 2x2 window")
            cur = (c, h // 2, w // 2)
        elif layer.kind == "flatten":
            if not spatial:
                raise ShapeError(f"layer {i} (flatten) needs a spatial input, got flat size {cur}")
            c, h, w = cur
            cur = c * h * w
        elif layer.kind in ("fully_connected", "output"):
            if spatial:
                raise ShapeError(
                    f"layer {i} ({layer.kind}) needs a flat input; add a flatten layer before it"
                )
            cur = layer.units
        elif layer.kind == "batchnorm":
            if not spatial:
                raise ShapeError(f"layer {i} (batchnorm) needs a spatial input, got flat size {cur}")
            if cur[0] != layer.channels:
                raise ShapeError(
                    f"layer {i} (batchnorm) declares {layer.channels} channels but input has {cur[0]}"
                )
        # relu and dropout keep the shape
        shapes.append(cur)
    return shapes


@dataclass
class LayerAudit:
    index: int
    kind: str
    label: str
    output_shape: object
    params: int


@dataclass
class ParameterAudit:
    entries: list
    total: int


def _layer_labels(config: ArchitectureConfig) -> list:
    labels = []
    n_conv = n_fc = 0
    for layer in config.layers:
        if layer.kind == "conv":
            n_conv += 1
            labels.append(f"Convolution-{n_conv:02d}")
        elif layer.kind == "fully_connected":
            n_fc += 1
            labels.append(f"FC-{n_fc:02d}")
        elif layer.kind == "output":
            labels.append("Output")
        elif layer.kind == "maxpool":
            labels.append("Max-pool")
        else:
            labels.append(layer.kind.capitalize())
    return labels


def count_parameters(config: ArchitectureConfig) -> ParameterAudit:
    """Learnable-parameter count per layer: conv (k*k*f_in + 1)*filters,
    fully-connected (n_in + 1)*n_out, batchnorm 2*channels, rest 0."""
    shapes = shape_propagate(config)
    labels = _layer_labels(config)
    entries = []
    for i, layer in enumerate(config.layers):
        in_shape, out_shape = shapes[i], shapes[i + 1]
        if layer.kind == "conv":
            params = (layer.kernel * layer.kernel * in_shape[0] + 1) * layer.filters
        elif layer.kind in ("fully_connected", "output"):
            params = (in_shape + 1) * layer.units
        elif layer.kind == "batchnorm":
            params = 2 * layer.channels
        else:
            params = 0
        entries.append(LayerAudit(i, layer.kind, labels[i], out_shape, params))
    return ParameterAudit(entries, sum(e.params for e in entries))


@dataclass
class ReferenceRow:
    label: str
    computed: int
    published: int

    @property
    def match(self) -> bool:
        return self.computed == self.published

    @property
    def delta(self) -> int:
        return self.computed - self.published


@dataclass
class ReferenceAudit:
    rows: list
    total_computed: int
    total_published: int = PUBLISHED_TOTAL

    @property
    def all_match(self) -> bool:
        return all(r.match for r in self.rows) and self.total_computed == self.total_published

    @property
    def mismatches(self) -> list:
        return [r for r in self.rows if not r.match]


def audit_reference_counts(config: ArchitectureConfig) -> ReferenceAudit:
    """Compare a canonical build's per-layer parameter counts against the
    published reference counts. Mismatches are reported, not raised."""
    audit = count_parameters(config)
    rows = []
    for entry in audit.entries:
        if entry.label in PUBLISHED_LAYER_COUNTS:
            rows.append(ReferenceRow(entry.label, entry.params, PUBLISHED_LAYER_COUNTS[entry.label]))
    if len(rows) != len(PUBLISHED_LAYER_COUNTS):
        raise ValueError(
            f"config '{config.name}' is not a canonical build: expected layers "
            f"{sorted(PUBLISHED_LAYER_COUNTS)}, found {[r.label for r in rows]}"
        )
    return ReferenceAudit(rows, audit.total)


class BatchNorm:
    """Per-channel batch normalization for (N,C,H,W) activations."""

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1, dtype=np.float32):
        self.eps = eps
        self.momentum = momentum
        self.gamma = np.ones(channels, dtype=dtype)
        self.beta = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def forward(self, x: np.ndarray, train: bool):
        if train:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            self.running_mean = ((1 - self.momentum) * self.running_mean + self.momentum * mean).astype(
                self.running_mean.dtype
            )
            self.running_var = ((1 - self.momentum) * self.running_var + self.momentum * var).astype(
                self.running_var.dtype
            )
        else:
            mean = self.running_mean.astype(x.dtype)
            var = self.running_var.astype(x.dtype)
        std = np.sqrt(var + self.eps)
        xhat = (x - mean[None, :, None, None]) / std[None, :, None, None]
        y = self.gamma[None, :, None, None] * xhat + self.beta[None, :, None, None]
        return y, (xhat, std)

    def backward(self, x: np.ndarray, cache, upstream: np.ndarray):
        xhat, std = cache
        m = x.shape[0] * x.shape[2] * x.shape[3]
        dgamma = (upstream * xhat).sum(axis=(0, 2, 3))
        dbeta = upstream.sum(axis=(0, 2, 3))
        dxhat = upstream * self.gamma[None, :, None, None]
        sum_dxhat = dxhat.sum(axis=(0, 2, 3), keepdims=True)
        sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
        dx = (dxhat - sum_dxhat / m - xhat * sum_dxhat_xhat / m) / std[None, :, None, None]
        return dx, dgamma, dbeta


@dataclass
class ForwardCache:
    layer_caches: list
    logits: np.ndarray  # batched
    single: bool
    shape_trace: list
    train: bool


class Network:
    """Executable network for an ArchitectureConfig. Parameters are float32;
    pass float64 inputs (after casting parameters) for gradient checks."""

    def __init__(self, config: ArchitectureConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.seed = seed
        self.dtype = dtype
        shapes = shape_propagate(config)
        rng = np.random.default_rng(seed)
        self.layers = []
        for i, spec in enumerate(config.layers):
            in_shape = shapes[i]
            if spec.kind == "conv":
                fan_in = spec.kernel * spec.kernel * in_shape[0]
                weights = nn.he_init(rng, (spec.filters, in_shape[0], spec.kernel, spec.kernel), fan_in, dtype)
                self.layers.append(ConvKernel(weights, np.zeros(spec.filters, dtype=dtype), spec.stride, spec.padding))
            elif spec.kind in ("fully_connected", "output"):
                weights = nn.he_init(rng, (spec.units, in_shape), in_shape, dtype)
                self.layers.append(LinearLayer(weights, np.zeros(spec.units, dtype=dtype)))
            elif spec.kind == "batchnorm":
                self.layers.append(BatchNorm(spec.channels, dtype=dtype))
            else:
                self.layers.append(None)

    def parameters(self) -> list:
        """Ordered (name, array) pairs for every learnable tensor."""
        out = []
        for i, (spec, layer) in enumerate(zip(self.config.layers, self.layers)):
            if spec.kind == "conv":
                out.append((f"L{i}.weights", layer.weights))
                out.append((f"L{i}.bias", layer.bias))
            elif spec.kind in ("fully_connected", "output"):
                out.append((f"L{i}.weights", layer.weights))
                out.append((f"L{i}.bias", layer.bias))
            elif spec.kind == "batchnorm":
                out.append((f"L{i}.gamma", layer.gamma))
                out.append((f"L{i}.beta", layer.beta))
        return out

    def buffers(self) -> list:
        """Non-learnable state saved in checkpoints (batchnorm running stats)."""
        out = []
        for i, (spec, layer) in enumerate(zip(self.config.layers, self.layers)):
            if spec.kind == "batchnorm":
                out.append((f"L{i}.running_mean", layer.running_mean))
                out.append((f"L{i}.running_var", layer.running_var))
        return out

    def set_parameter(self, name: str, value: np.ndarray) -> None:
        idx, attr = name[1:].split(".")
        layer = self.layers[int(idx)]
        current = getattr(layer, attr)
        if current.shape != value.shape:
            raise ShapeError(f"parameter {name}: shape {value.shape} does not match {current.shape}")
        setattr(layer, attr, value)

    def _flat_shape(self, arr_shape) -> object:
        if len(arr_shape) == 2:
            return arr_shape[1]
        return tuple(arr_shape[1:])

    def forward(self, x: np.ndarray, train: bool = False, rng: np.random.Generator | None = None):
        """Run the network; returns (logits, cache). Dropout is active only
        when train=True, in which case an rng must be supplied if the
        architecture contains dropout layers with a positive rate."""
        single = x.ndim == 3
        xb = x[None] if single else x
        if xb.ndim != 4 or tuple(xb.shape[1:]) != tuple(self.config.input_shape):
            raise ShapeError(
                f"image shape {tuple(x.shape)} does not match model input {self.config.input_shape}"
            )
        caches = []
        trace = []
        cur = xb
        for spec, layer in zip(self.config.layers, self.layers):
            if spec.kind == "conv":
                caches.append(cur)
                cur = nn.conv2d(cur, layer)
            elif spec.kind == "maxpool":
                cur, pc = nn.maxpool2(cur)
                caches.append(pc)
            elif spec.kind == "flatten":
                caches.append(cur.shape)
                cur = cur.reshape(cur.shape[0], -1)
            elif spec.kind in ("fully_connected", "output"):
                caches.append(cur)
                cur = nn.linear(cur, layer)
            elif spec.kind == "relu":
                caches.append(cur)
                cur = nn.relu(cur)
            elif spec.kind == "batchnorm":
                x_in = cur
                cur, bc = layer.forward(cur, train)
                caches.append((x_in, bc))
            elif spec.kind == "dropout":
                if train and spec.rate > 0:
                    if rng is None:
                        raise ValueError("training forward through dropout requires an rng")
                    mask = (rng.random(cur.shape) >= spec.rate).astype(cur.dtype) / (1 - spec.rate)
                    caches.append(mask)
                    cur = cur * mask
                else:
                    caches.append(None)
            trace.append(self._flat_shape(cur.shape))
        logits = cur
        cache = ForwardCache(caches, logits, single, trace, train)
        return (logits[0] if single else logits), cache

    def backward(self, cache: ForwardCache, labels):
        """Loss and gradients for every learnable tensor, from a forward cache."""
        if cache is None:
            raise ValueError("backward requires the cache from a forward pass")
        if cache.single:
            labels = np.asarray([labels])
        loss, grad = nn.softmax_cross_entropy(cache.logits, labels)
        grads = {}
        for i in reversed(range(len(self.config.layers))):
            spec, layer, lc = self.config.layers[i], self.layers[i], cache.layer_caches[i]
            if spec.kind == "conv":
                grad, gw, gb = nn.conv2d_grad(lc, layer, grad)
                grads[f"L{i}.weights"] = gw
                grads[f"L{i}.bias"] = gb
            elif spec.kind == "maxpool":
                grad = nn.maxpool2_grad(lc, grad)
            elif spec.kind == "flatten":
                grad = grad.reshape(lc)
            elif spec.kind in ("fully_connected", "output"):
                grad, gw, gb = nn.linear_grad(lc, layer, grad)
                grads[f"L{i}.weights"] = gw
                grads[f"L{i}.bias"] = gb
            elif spec.kind == "relu":
                grad = nn.relu_grad(lc, grad)
            elif spec.kind == "batchnorm":
                x_in, bc = lc
                grad, dgamma, dbeta = layer.backward(x_in, bc, grad)
                grads[f"L{i}.gamma"] = dgamma
                grads[f"L{i}.beta"] = dbeta
            elif spec.kind == "dropout":
                if lc is not None:
                    grad = grad * lc
        return loss, grads

    def predict(self, image: np.ndarray) -> tuple[int, np.ndarray]:
        """Inference-mode class index and softmax probabilities for one image."""
        logits, _ = self.forward(image, train=False)
        probs = nn.softmax(logits)
        return int(np.argmax(logits)), probs


def with_batchnorm(config: ArchitectureConfig) -> ArchitectureConfig:
    """Insert a batchnorm layer after each conv+pool block."""
    layers = []
    last_conv_filters = None
    for spec in config.layers:
        layers.append(spec)
        if spec.kind == "conv":
            last_conv_filters = spec.filters
        elif spec.kind == "maxpool" and last_conv_filters is not None:
            layers.append(LayerSpec("batchnorm", channels=last_conv_filters))
            last_conv_filters = None
    return ArchitectureConfig(config.name + "+bn", config.input_shape, tuple(layers))


def with_dropout(config: ArchitectureConfig, rate: float = 0.25) -> ArchitectureConfig:
    """Insert inverted-scaling dropout before each hidden fully-connected layer."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must be in [0,1), got {rate}")
    layers = []
    for spec in config.layers:
        if spec.kind == "fully_connected":
            layers.append(LayerSpec("dropout", rate=rate))
        layers.append(spec)
    return ArchitectureConfig(config.name + f"+dropout{rate:g}", config.input_shape, tuple(layers))
