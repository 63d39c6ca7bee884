"""Portable sequential-CNN models: manifest parsing, weight loading, and
recorded forward passes.

A model arrives as two files:

* a JSON manifest (``format_version`` 1) declaring ``input_shape`` (C, H, W),
  ``class_labels``, the ordered ``layers`` list, an optional ``target_layer``
  (conv layer name or index), and optional per-channel input
  ``normalization`` (mean/std applied after pixel/255 scaling);
* a raw weights file: per-layer arrays in manifest order, conv2d as
  [C_out, C_in, kH, kW] then bias [C_out], dense as [M, N] then bias [M],
  all row-major 32-bit little-endian floats with no header or padding.

Channel counts and feature widths of later layers are derived by symbolic
shape propagation from ``input_shape``, so the manifest never repeats them.
Weights are widened to float64 on load and the whole layer chain is
shape-checked before any inference runs.

The target layer (whose activations the attribution step consumes) defaults
to the last conv2d layer and may be overridden by name or index. The
activation is captured after the ReLU immediately following the target conv
layer when one directly follows, so captured feature maps are nonnegative.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, InputError
from .numerics import (
    LayerTrace,
    _out_extent,
    as_tensor,
    backward_to_layer,
    conv2d_forward,
    dense_forward,
    flatten_forward,
    maxpool_forward,
    relu_forward,
    softmax,
)

__all__ = [
    "LayerSpec",
    "Model",
    "InferenceRecord",
    "parse_manifest",
    "load_model",
    "forward",
    "class_score_gradient",
    "to_manifest_dict",
    "write_weights",
]

LAYER_KINDS = ("conv2d", "relu", "maxpool", "flatten", "dense", "softmax")


@dataclass(frozen=True)
class LayerSpec:
    """One declared layer. Unused fields stay at their neutral defaults."""

    kind: str
    name: str
    out_channels: int = 0   # conv2d
    kernel: int = 0         # conv2d, maxpool
    stride: int = 1         # conv2d, maxpool
    padding: int = 0        # conv2d
    out_features: int = 0   # dense


@dataclass(frozen=True)
class Model:
    """A validated, immutable network ready for inference.

    ``weights[i]`` is a (weights, bias) float64 pair for conv2d/dense layers
    and None otherwise. ``target_layer`` indexes the conv2d layer whose
    activations feed attribution; ``capture_index`` is where the activation
    is actually grabbed (the following ReLU when one is adjacent).
    """

    input_shape: tuple[int, int, int]
    layers: tuple[LayerSpec, ...]
    weights: tuple[tuple[np.ndarray, np.ndarray] | None, ...]
    class_labels: tuple[str, ...]
    target_layer: int
    capture_index: int
    layer_shapes: tuple[tuple[int, ...], ...]
    normalization: tuple[tuple[float, ...], tuple[float, ...]] | None = None
    manifest_path: str | None = None
    weights_path: str | None = None

    @property
    def parameter_count(self) -> int:
        total = 0
        for pair in self.weights:
            if pair is not None:
                total += pair[0].size + pair[1].size
        return total

    @property
    def num_classes(self) -> int:
        return len(self.class_labels)


@dataclass
class InferenceRecord:
    """Everything one forward pass produced, cached for the backward pass.

    Owned by a single inference; not shared across threads.
    """

    traces: list[LayerTrace]
    logits: np.ndarray
    probabilities: np.ndarray
    predicted_class: int
    confidence: float
    target_activation: np.ndarray
    capture_index: int


# ---------------------------------------------------------------------------
# manifest parsing and validation
# ---------------------------------------------------------------------------

def _fail(path: str, msg: str) -> None:
    raise ConfigurationError(f"{path}: {msg}")


def _positive_int(value, path: str) -> int:
    if not isinstance(value, int) or isinstance(value, bool) or value < 1:
        _fail(path, f"must be a positive integer, got {value!r}")
    return value


def _check_keys(obj: dict, allowed: set[str], required: set[str], path: str) -> None:
    for key in required:
        if key not in obj:
            _fail(path, f"missing required field {key!r}")
    for key in obj:
        if key not in allowed:
            _fail(f"{path}.{key}" if path else key, "unknown field")


_LAYER_FIELDS: dict[str, tuple[set[str], set[str]]] = {
    # kind -> (required, optional) besides "kind"/"name"
    "conv2d": ({"out_channels", "kernel"}, {"stride", "padding"}),
    "relu": (set(), set()),
    "maxpool": ({"kernel"}, {"stride"}),
    "flatten": (set(), set()),
    "dense": ({"out_features"}, set()),
    "softmax": (set(), set()),
}


def _parse_layer(obj, index: int) -> LayerSpec:
    path = f"layers[{index}]"
    if not isinstance(obj, dict):
        _fail(path, f"must be an object, got {type(obj).__name__}")
    kind = obj.get("kind")
    if kind not in LAYER_KINDS:
        _fail(f"{path}.kind", f"must be one of {', '.join(LAYER_KINDS)}, got {kind!r}")
    required, optional = _LAYER_FIELDS[kind]
    _check_keys(obj, required | optional | {"kind", "name"}, required | {"kind"}, path)

    name = obj.get("name", f"{kind}{index}")
    if not isinstance(name, str) or not name:
        _fail(f"{path}.name", "must be a non-empty string")

    spec = LayerSpec(kind=kind, name=name)
    if kind == "conv2d":
        spec = replace(
            spec,
            out_channels=_positive_int(obj["out_channels"], f"{path}.out_channels"),
            kernel=_positive_int(obj["kernel"], f"{path}.kernel"),
            stride=_positive_int(obj.get("stride", 1), f"{path}.stride"),
            padding=obj.get("padding", 0),
        )
        pad = spec.padding
        if not isinstance(pad, int) or isinstance(pad, bool) or pad < 0:
            _fail(f"{path}.padding", f"must be a non-negative integer, got {pad!r}")
    elif kind == "maxpool":
        kernel = _positive_int(obj["kernel"], f"{path}.kernel")
        stride = _positive_int(obj.get("stride", kernel), f"{path}.stride")
        spec = replace(spec, kernel=kernel, stride=stride)
    elif kind == "dense":
        spec = replace(spec, out_features=_positive_int(obj["out_features"], f"{path}.out_features"))
    return spec


def _propagate_shapes(
    input_shape: tuple[int, int, int], layers: tuple[LayerSpec, ...]
) -> tuple[tuple[int, ...], ...]:
    """Compute every layer's output shape, validating the chain end to end."""
    shape: tuple[int, ...] = input_shape
    out: list[tuple[int, ...]] = []
    for i, spec in enumerate(layers):
        path = f"layers[{i}] ({spec.name})"
        if spec.kind == "conv2d":
            if len(shape) != 3:
                _fail(path, f"conv2d needs a (C, H, W) input, got shape {shape}")
            try:
                h = _out_extent("height", shape[1], spec.kernel, spec.stride, spec.padding)
                w = _out_extent("width", shape[2], spec.kernel, spec.stride, spec.padding)
            except ConfigurationError as exc:
                _fail(path, str(exc))
            shape = (spec.out_channels, h, w)
        elif spec.kind == "maxpool":
            if len(shape) != 3:
                _fail(path, f"maxpool needs a (C, H, W) input, got shape {shape}")
            try:
                h = _out_extent("height", shape[1], spec.kernel, spec.stride, 0)
                w = _out_extent("width", shape[2], spec.kernel, spec.stride, 0)
            except ConfigurationError as exc:
                _fail(path, str(exc))
            shape = (shape[0], h, w)
        elif spec.kind == "relu":
            pass
        elif spec.kind == "flatten":
            shape = (int(np.prod(shape)),)
        elif spec.kind == "dense":
            if len(shape) != 1:
                _fail(path, f"dense needs a flattened 1-d input, got shape {shape}")
            shape = (spec.out_features,)
        elif spec.kind == "softmax":
            if len(shape) != 1:
                _fail(path, f"softmax needs a 1-d input, got shape {shape}")
            if i != len(layers) - 1:
                _fail(path, "softmax is only supported as the final layer")
        out.append(shape)
    return tuple(out)


def _resolve_target(layers: tuple[LayerSpec, ...], selector, path: str) -> int:
    conv_indices = [i for i, s in enumerate(layers) if s.kind == "conv2d"]
    if not conv_indices:
        raise ConfigurationError("Grad-CAM requires a convolutional layer")
    if selector is None:
        return conv_indices[-1]
    if isinstance(selector, bool):
        _fail(path, f"must be a layer name or index, got {selector!r}")
    if isinstance(selector, int):
        if not 0 <= selector < len(layers):
            _fail(path, f"layer index {selector} out of range [0, {len(layers)})")
        idx = selector
    elif isinstance(selector, str):
        matches = [i for i, s in enumerate(layers) if s.name == selector]
        if not matches:
            _fail(path, f"no layer named {selector!r}")
        idx = matches[0]
    else:
        _fail(path, f"must be a layer name or index, got {selector!r}")
    if layers[idx].kind != "conv2d":
        _fail(path, f"layer {layers[idx].name!r} is {layers[idx].kind}, not conv2d")
    return idx


def _parse_normalization(obj, channels: int):
    path = "normalization"
    if not isinstance(obj, dict):
        _fail(path, f"must be an object, got {type(obj).__name__}")
    _check_keys(obj, {"mean", "std"}, {"mean", "std"}, path)
    out = []
    for key in ("mean", "std"):
        vals = obj[key]
        if (
            not isinstance(vals, list)
            or len(vals) != channels
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in vals)
        ):
            _fail(f"{path}.{key}", f"must be a list of {channels} numbers")
        out.append(tuple(float(v) for v in vals))
    if any(v == 0.0 for v in out[1]):
        _fail(f"{path}.std", "must not contain zeros")
    return tuple(out)


def parse_manifest(doc, target_override=None) -> Model:
    """Validate a manifest dict into a Model shell (weights not yet loaded).

    ``target_override`` replaces the manifest's target_layer when given.
    """
    if not isinstance(doc, dict):
        raise ConfigurationError(f"manifest root must be an object, got {type(doc).__name__}")
    _check_keys(
        doc,
        {"format_version", "input_shape", "class_labels", "layers", "target_layer", "normalization"},
        {"format_version", "input_shape", "class_labels", "layers"},
        "",
    )
    if doc["format_version"] != 1:
        _fail("format_version", f"unsupported version {doc['format_version']!r} (expected 1)")

    raw_shape = doc["input_shape"]
    if not isinstance(raw_shape, list) or len(raw_shape) != 3:
        _fail("input_shape", f"must be a [C, H, W] list of 3 integers, got {raw_shape!r}")
    input_shape = tuple(
        _positive_int(v, f"input_shape[{i}]") for i, v in enumerate(raw_shape)
    )

    labels = doc["class_labels"]
    if (
        not isinstance(labels, list)
        or not labels
        or not all(isinstance(v, str) and v for v in labels)
    ):
        _fail("class_labels", "must be a non-empty list of non-empty strings")
    if len(set(labels)) != len(labels):
        _fail("class_labels", "labels must be unique")

    raw_layers = doc["layers"]
    if not isinstance(raw_layers, list) or not raw_layers:
        _fail("layers", "must be a non-empty list")
    layers = tuple(_parse_layer(obj, i) for i, obj in enumerate(raw_layers))
    names = [s.name for s in layers]
    if len(set(names)) != len(names):
        dupe = next(n for n in names if names.count(n) > 1)
        _fail("layers", f"duplicate layer name {dupe!r}")

    shapes = _propagate_shapes(input_shape, layers)
    final = shapes[-1]
    if len(final) != 1 or final[0] != len(labels):
        _fail(
            "layers",
            f"final layer produces shape {final}, but class_labels has {len(labels)} entries",
        )

    selector = target_override if target_override is not None else doc.get("target_layer")
    target = _resolve_target(layers, selector, "target_layer")
    capture = target
    if capture + 1 < len(layers) and layers[capture + 1].kind == "relu":
        capture += 1

    normalization = None
    if "normalization" in doc:
        normalization = _parse_normalization(doc["normalization"], input_shape[0])

    return Model(
        input_shape=input_shape,  # type: ignore[arg-type]
        layers=layers,
        weights=tuple(None for _ in layers),
        class_labels=tuple(labels),
        target_layer=target,
        capture_index=capture,
        layer_shapes=shapes,
        normalization=normalization,
    )


def to_manifest_dict(model: Model) -> dict:
    """Serialize back to manifest form; parse(to_manifest_dict(m)) == parse input."""
    layers = []
    for spec in model.layers:
        obj: dict = {"kind": spec.kind, "name": spec.name}
        if spec.kind == "conv2d":
            obj.update(
                out_channels=spec.out_channels,
                kernel=spec.kernel,
                stride=spec.stride,
                padding=spec.padding,
            )
        elif spec.kind == "maxpool":
            obj.update(kernel=spec.kernel, stride=spec.stride)
        elif spec.kind == "dense":
            obj.update(out_features=spec.out_features)
        layers.append(obj)
    doc = {
        "format_version": 1,
        "input_shape": list(model.input_shape),
        "class_labels": list(model.class_labels),
        "layers": layers,
        "target_layer": model.layers[model.target_layer].name,
    }
    if model.normalization is not None:
        doc["normalization"] = {
            "mean": list(model.normalization[0]),
            "std": list(model.normalization[1]),
        }
    return doc


# ---------------------------------------------------------------------------
# weight loading
# ---------------------------------------------------------------------------

def _weight_shapes(model: Model) -> list[tuple[int, tuple[tuple[int, ...], tuple[int, ...]] | None]]:
    """Per layer: (index, ((w_shape), (b_shape))) for parameterized layers."""
    out = []
    shape: tuple[int, ...] = model.input_shape
    for i, spec in enumerate(model.layers):
        if spec.kind == "conv2d":
            out.append((i, ((spec.out_channels, shape[0], spec.kernel, spec.kernel), (spec.out_channels,))))
        elif spec.kind == "dense":
            out.append((i, ((spec.out_features, shape[0]), (spec.out_features,))))
        else:
            out.append((i, None))
        shape = model.layer_shapes[i]
    return out


def load_weights(model: Model, weights_path: str) -> Model:
    """Attach weights read from the raw little-endian float32 file."""
    try:
        with open(weights_path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise ConfigurationError(f"cannot read weights file {weights_path}: {exc}") from exc

    plan = _weight_shapes(model)
    expected_floats = 0
    for _, sh in plan:
        if sh is not None:
            w_shape, b_shape = sh
            expected_floats += int(np.prod(w_shape)) + int(np.prod(b_shape))
    expected_bytes = expected_floats * 4
    if len(blob) != expected_bytes:
        raise ConfigurationError(
            f"weights file size mismatch for {weights_path}: "
            f"expected {expected_bytes} bytes ({expected_floats} float32 values), "
            f"got {len(blob)} bytes"
        )
    flat = np.frombuffer(blob, dtype="<f4").astype(np.float64)
    if not np.isfinite(flat).all():
        raise ConfigurationError(f"weights file {weights_path} contains non-finite values")

    weights: list[tuple[np.ndarray, np.ndarray] | None] = []
    pos = 0
    for _, sh in plan:
        if sh is None:
            weights.append(None)
            continue
        w_shape, b_shape = sh
        w_n, b_n = int(np.prod(w_shape)), int(np.prod(b_shape))
        w = flat[pos:pos + w_n].reshape(w_shape)
        pos += w_n
        b = flat[pos:pos + b_n].reshape(b_shape)
        pos += b_n
        weights.append((w, b))
    return replace(model, weights=tuple(weights), weights_path=weights_path)


def load_model(manifest_path: str, weights_path: str, target_override=None) -> Model:
    """Parse the manifest, validate the chain, and load matching weights."""
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read manifest {manifest_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"manifest {manifest_path} is not valid JSON: {exc}") from exc
    model = parse_manifest(doc, target_override=target_override)
    model = replace(model, manifest_path=manifest_path)
    return load_weights(model, weights_path)


def write_weights(path: str, model_or_layers, weights_by_layer=None) -> None:
    """Write (weights, bias) pairs as the concatenated float32 LE format.

    Accepts either a weighted Model or an explicit list of (w, b) pairs in
    layer order (parameterized layers only).
    """
    if weights_by_layer is None:
        pairs = [p for p in model_or_layers.weights if p is not None]
    else:
        pairs = list(weights_by_layer)
    with open(path, "wb") as fh:
        for w, b in pairs:
            fh.write(np.ascontiguousarray(w, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f4").tobytes())


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------

def forward(model: Model, image: np.ndarray) -> InferenceRecord:
    """Run the network on one (C, H, W) tensor, caching backward state."""
    x = as_tensor(image)
    if x.shape != model.input_shape:
        raise InputError(
            f"input tensor shape {x.shape} does not match model input_shape {model.input_shape}"
        )
    if any(p is None for s, p in zip(model.layers, model.weights) if s.kind in ("conv2d", "dense")):
        raise ConfigurationError("model has no weights loaded")

    traces: list[LayerTrace] = []
    target_activation: np.ndarray | None = None
    logits: np.ndarray | None = None
    for i, spec in enumerate(model.layers):
        in_shape = tuple(x.shape)
        if spec.kind == "conv2d":
            w, b = model.weights[i]  # type: ignore[misc]
            y = conv2d_forward(x, w, b, spec.stride, spec.padding)
            traces.append(LayerTrace("conv2d", in_shape, weights=w, stride=spec.stride, padding=spec.padding))
        elif spec.kind == "relu":
            y = relu_forward(x)
            traces.append(LayerTrace("relu", in_shape, relu_mask=(x > 0.0)))
        elif spec.kind == "maxpool":
            y, argmax = maxpool_forward(x, spec.kernel, spec.stride)
            traces.append(LayerTrace("maxpool", in_shape, argmax=argmax))
        elif spec.kind == "flatten":
            y = flatten_forward(x)
            traces.append(LayerTrace("flatten", in_shape))
        elif spec.kind == "dense":
            w, b = model.weights[i]  # type: ignore[misc]
            y = dense_forward(x, w, b)
            traces.append(LayerTrace("dense", in_shape, weights=w))
        else:  # softmax; validation guarantees this is the final layer
            logits = x.copy()
            y = softmax(x)
            traces.append(LayerTrace("softmax", in_shape))
        if i == model.capture_index:
            target_activation = y.copy()
        x = y

    if logits is None:  # no softmax layer: the raw output is the logit vector
        logits = x.copy()
        probabilities = softmax(logits)
    else:
        probabilities = x
    assert target_activation is not None  # capture_index always executes

    predicted = int(np.argmax(probabilities))  # first maximum: lowest index wins ties
    return InferenceRecord(
        traces=traces,
        logits=logits,
        probabilities=probabilities,
        predicted_class=predicted,
        confidence=float(probabilities[predicted]),
        target_activation=target_activation,
        capture_index=model.capture_index,
    )


def class_score_gradient(model: Model, record: InferenceRecord, class_index: int) -> np.ndarray:
    """Gradient of the pre-softmax logit for ``class_index`` with respect to
    ``record.target_activation``; same shape as the activation."""
    tail = record.traces[record.capture_index + 1:]
    return backward_to_layer(tail, class_index, model.num_classes)
