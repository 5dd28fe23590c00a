"""Canonical model representation and platform parameter codecs.

Server-side code works on a single flat float64 parameter vector per model
(the canonical form). Client platforms do not: one family of runtimes wants
name-to-tensor maps, the other only exposes parameters positionally. The two
encodings here (``NameKeyed``, ``IndexKeyed``) capture that split, and the
codecs guarantee a lossless round trip so aggregation can stay
representation-agnostic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

PLATFORM_NAME_KEYED = "NameKeyed"
PLATFORM_INDEX_KEYED = "IndexKeyed"
PLATFORMS = (PLATFORM_NAME_KEYED, PLATFORM_INDEX_KEYED)

ARCH_LINEAR = "linear"
ARCH_MLP = "mlp"


class ModelFormatError(Exception):
    """Base class for codec failures."""


class MissingLayer(ModelFormatError):
    def __init__(self, name: str):
        super().__init__(f"encoding is missing layer {name!r}")
        self.layer = name


class UnknownLayer(ModelFormatError):
    def __init__(self, key: object):
        super().__init__(f"encoding carries unknown layer {key!r}")
        self.layer = key


class ShapeMismatch(ModelFormatError):
    def __init__(self, name: str, expected: tuple[int, ...], got: tuple[int, ...]):
        super().__init__(f"layer {name!r}: expected shape {expected}, got {got}")
        self.layer = name


@dataclass(frozen=True)
class Arch:
    """Architecture tag. ``linear`` or ``mlp`` with a hidden width."""

    kind: str
    hidden: int | None = None

    def to_json(self) -> dict:
        if self.kind == ARCH_MLP:
            return {"kind": self.kind, "hidden": self.hidden}
        return {"kind": self.kind}

    @staticmethod
    def from_json(obj: dict) -> "Arch":
        if not isinstance(obj, dict) or "kind" not in obj:
            raise ModelFormatError(f"bad arch object: {obj!r}")
        kind = obj["kind"]
        if kind == ARCH_LINEAR:
            return Arch(ARCH_LINEAR)
        if kind == ARCH_MLP:
            hidden = obj.get("hidden")
            if not isinstance(hidden, int) or hidden < 1:
                raise ModelFormatError(f"mlp arch needs positive hidden, got {hidden!r}")
            return Arch(ARCH_MLP, hidden)
        raise ModelFormatError(f"unknown arch kind {kind!r}")


@dataclass(frozen=True)
class LayerSpec:
    """One named tensor inside the flat parameter vector."""

    name: str
    shape: tuple[int, ...]
    offset: int

    @property
    def length(self) -> int:
        return math.prod(self.shape)


@dataclass
class CanonicalModel:
    model_id: str
    version: int
    arch: Arch
    layers: list[LayerSpec]
    params: np.ndarray  # flat float64, canonical layer order

    def layer_values(self, spec: LayerSpec) -> np.ndarray:
        return self.params[spec.offset : spec.offset + spec.length]

    def spec_only(self) -> "CanonicalModel":
        """Copy without parameter values (decode target)."""
        return CanonicalModel(self.model_id, self.version, self.arch, list(self.layers), np.empty(0))


@dataclass(frozen=True)
class Tensor:
    """Shaped value block as platforms ship it: shape plus flat row-major data."""

    shape: tuple[int, ...]
    values: np.ndarray


@dataclass
class PlatformEncoding:
    platform: str
    # NameKeyed: dict name -> Tensor. IndexKeyed: ordered (index, Tensor) pairs.
    named: dict[str, Tensor] = field(default_factory=dict)
    indexed: list[tuple[int, Tensor]] = field(default_factory=list)


@dataclass(frozen=True)
class Violation:
    code: str
    detail: str

    def __str__(self) -> str:
        return f"{self.code}: {self.detail}"


def layers_from_shapes(named_shapes: Iterable[tuple[str, Iterable[int]]]) -> list[LayerSpec]:
    """Build a contiguous layer list from (name, shape) pairs."""
    layers: list[LayerSpec] = []
    offset = 0
    for name, shape in named_shapes:
        spec = LayerSpec(name, tuple(int(s) for s in shape), offset)
        layers.append(spec)
        offset += spec.length
    return layers


def validate_model(model: CanonicalModel) -> list[Violation]:
    """Return every invariant violation; empty list means the model is valid."""
    violations: list[Violation] = []
    if not model.layers:
        violations.append(Violation("EmptyLayers", "model has no layers"))
    if model.version < 1:
        violations.append(Violation("BadVersion", f"version must be >= 1, got {model.version}"))

    seen: set[str] = set()
    expected_offset = 0
    for spec in model.layers:
        if spec.name in seen:
            violations.append(Violation("DuplicateName", f"layer name {spec.name!r} repeats"))
        seen.add(spec.name)
        if not spec.shape or any(s < 1 for s in spec.shape):
            violations.append(Violation("BadShape", f"layer {spec.name!r} shape {spec.shape} has entries < 1"))
        if spec.offset != expected_offset:
            violations.append(
                Violation("BadOffset", f"layer {spec.name!r} offset {spec.offset}, expected {expected_offset}")
            )
        expected_offset = spec.offset + spec.length

    if model.params.shape != (expected_offset,):
        violations.append(
            Violation("LengthMismatch", f"params length {model.params.shape}, layers total {expected_offset}")
        )
    if model.arch.kind not in (ARCH_LINEAR, ARCH_MLP):
        violations.append(Violation("BadArch", f"unknown arch kind {model.arch.kind!r}"))
    elif model.arch.kind == ARCH_MLP and (model.arch.hidden is None or model.arch.hidden < 1):
        violations.append(Violation("BadArch", f"mlp arch needs positive hidden, got {model.arch.hidden!r}"))
    return violations


def encode_for_platform(model: CanonicalModel, platform: str) -> PlatformEncoding:
    """Slice the flat vector into per-layer tensors, keyed per platform."""
    if platform not in PLATFORMS:
        raise ModelFormatError(f"unknown platform {platform!r}")
    if platform == PLATFORM_NAME_KEYED:
        named = {
            spec.name: Tensor(spec.shape, np.array(model.layer_values(spec), dtype=np.float64))
            for spec in model.layers
        }
        return PlatformEncoding(platform, named=named)
    indexed = [
        (i, Tensor(spec.shape, np.array(model.layer_values(spec), dtype=np.float64)))
        for i, spec in enumerate(model.layers)
    ]
    return PlatformEncoding(platform, indexed=indexed)


def decode_from_platform(encoding: PlatformEncoding, spec: CanonicalModel) -> np.ndarray:
    """Reassemble the canonical flat vector from a platform encoding.

    NameKeyed payloads are matched by name (map order is irrelevant);
    IndexKeyed payloads by layer position. Raises MissingLayer / UnknownLayer /
    ShapeMismatch when the encoding does not fit ``spec``.
    """
    total = sum(layer.length for layer in spec.layers)
    out = np.empty(total, dtype=np.float64)

    if encoding.platform == PLATFORM_NAME_KEYED:
        known = {layer.name for layer in spec.layers}
        for key in encoding.named:
            if key not in known:
                raise UnknownLayer(key)
        for layer in spec.layers:
            tensor = encoding.named.get(layer.name)
            if tensor is None:
                raise MissingLayer(layer.name)
            _check_tensor(layer, tensor)
            out[layer.offset : layer.offset + layer.length] = tensor.values
        return out

    if encoding.platform == PLATFORM_INDEX_KEYED:
        by_index: dict[int, Tensor] = {}
        for index, tensor in encoding.indexed:
            if not 0 <= index < len(spec.layers):
                raise UnknownLayer(index)
            if index in by_index:
                raise UnknownLayer(index)
            by_index[index] = tensor
        for i, layer in enumerate(spec.layers):
            if i not in by_index:
                raise MissingLayer(layer.name)
            tensor = by_index[i]
            _check_tensor(layer, tensor)
            out[layer.offset : layer.offset + layer.length] = tensor.values
        return out

    raise ModelFormatError(f"unknown platform {encoding.platform!r}")


def _check_tensor(layer: LayerSpec, tensor: Tensor) -> None:
    if tuple(tensor.shape) != layer.shape:
        raise ShapeMismatch(layer.name, layer.shape, tuple(tensor.shape))
    if tensor.values.shape != (layer.length,):
        raise ShapeMismatch(layer.name, (layer.length,), tensor.values.shape)


# --- model document (file / wire format) -------------------------------------
#
# A canonical model travels as one JSON object:
#   {model_id, version, arch, layers: [{name, shape}], params: [numbers]}
# Offsets are derived from layer order, never stored.


def to_document(model: CanonicalModel, include_params: bool = True) -> dict:
    doc = {
        "model_id": model.model_id,
        "version": model.version,
        "arch": model.arch.to_json(),
        "layers": [{"name": s.name, "shape": list(s.shape)} for s in model.layers],
    }
    if include_params:
        doc["params"] = [float(v) for v in model.params]
    return doc


def from_document(doc: dict) -> CanonicalModel:
    """Parse a model document. Raises ModelFormatError on structural problems;
    semantic invariants are the caller's job via validate_model."""
    try:
        model_id = doc["model_id"]
        version = doc["version"]
        arch = Arch.from_json(doc["arch"])
        raw_layers = doc["layers"]
        raw_params = doc.get("params", [])
    except (KeyError, TypeError) as exc:
        raise ModelFormatError(f"model document missing field: {exc}") from exc
    if not isinstance(model_id, str) or not isinstance(version, int) or isinstance(version, bool):
        raise ModelFormatError("model_id must be a string and version an integer")
    if not isinstance(raw_layers, list):
        raise ModelFormatError("layers must be a list")
    named_shapes = []
    for entry in raw_layers:
        if not isinstance(entry, dict) or "name" not in entry or "shape" not in entry:
            raise ModelFormatError(f"bad layer entry: {entry!r}")
        if not isinstance(entry["shape"], list) or not all(
            isinstance(s, int) and not isinstance(s, bool) for s in entry["shape"]
        ):
            raise ModelFormatError(f"layer {entry.get('name')!r} shape must be a list of ints")
        named_shapes.append((entry["name"], entry["shape"]))
    layers = layers_from_shapes(named_shapes)
    if not isinstance(raw_params, list):
        raise ModelFormatError("params must be a list of numbers")
    params = np.asarray(raw_params, dtype=np.float64)
    return CanonicalModel(model_id, version, arch, layers, params)


def canonical_json(obj: object) -> str:
    """Deterministic JSON: sorted keys, no whitespace."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


# --- constructors for the two supported architectures ------------------------


def new_linear_model(model_id: str, n_features: int, version: int = 1) -> CanonicalModel:
    """Affine regressor; weights and bias start at zero."""
    layers = layers_from_shapes([("w", [n_features]), ("b", [1])])
    return CanonicalModel(model_id, version, Arch(ARCH_LINEAR), layers, np.zeros(n_features + 1))


def new_mlp_model(
    model_id: str,
    n_features: int,
    hidden: int,
    n_classes: int,
    seed: int,
    version: int = 1,
) -> CanonicalModel:
    """One-hidden-layer ReLU classifier; weights uniform(-0.1, 0.1) from seed."""
    layers = layers_from_shapes(
        [("w1", [n_features, hidden]), ("b1", [hidden]), ("w2", [hidden, n_classes]), ("b2", [n_classes])]
    )
    total = sum(s.length for s in layers)
    rng = np.random.default_rng(seed)
    params = rng.uniform(-0.1, 0.1, size=total)
    return CanonicalModel(model_id, version, Arch(ARCH_MLP, hidden), layers, params)


def linear_n_features(model: CanonicalModel) -> int:
    return model.layers[0].length


def mlp_dims(model: CanonicalModel) -> tuple[int, int, int]:
    """(n_features, hidden, n_classes) from the layer shapes."""
    w1 = model.layers[0].shape
    w2 = model.layers[2].shape
    return w1[0], w1[1], w2[1]
