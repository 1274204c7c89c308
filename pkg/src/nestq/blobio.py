"""On-disk formats: binary tensor blobs and the JSON model manifest.

Blob layout: 4 magic bytes, one dtype code byte, one rank byte, rank little-
endian uint32 dims, then the little-endian row-major payload. Manifests are a
JSON tree referencing blobs by relative path. All writes go through a temp
file plus rename so partially written files are never observed.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .controller import ControllerSpec
from .intops import DEFAULT_FRAC_BITS
from .layers import LayerSpec, ModelGraph
from .quantize import NestedTensor, QuantParams

BLOB_MAGIC = b"NQTB"
MANIFEST_VERSION = 1

_DTYPES = {0: "<f4", 1: "u1", 2: "<u2", 3: "<i4", 4: "<i8"}
_DTYPE_CODES = {"float32": 0, "uint8": 1, "uint16": 2, "int32": 3, "int64": 4}


class ManifestError(ValueError):
    """Unreadable or ill-formed manifest or blob."""


def atomic_write_bytes(path: Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode())


def write_blob(path: Path, array: np.ndarray) -> None:
    array = np.asarray(array)
    name = array.dtype.name
    if name == "float64":
        array = array.astype(np.float32)
        name = "float32"
    if name not in _DTYPE_CODES:
        raise ManifestError(f"dtype {name} not supported by the blob format")
    code = _DTYPE_CODES[name]
    header = BLOB_MAGIC + struct.pack("<BB", code, array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    payload = np.ascontiguousarray(array.astype(_DTYPES[code])).tobytes()
    atomic_write_bytes(path, header + payload)


def read_blob(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != BLOB_MAGIC:
        raise ManifestError(f"{path}: bad blob magic")
    code, rank = struct.unpack("<BB", raw[4:6])
    if code not in _DTYPES:
        raise ManifestError(f"{path}: unknown dtype code {code}")
    dims = struct.unpack(f"<{rank}I", raw[6:6 + 4 * rank])
    dtype = np.dtype(_DTYPES[code])
    expected = int(np.prod(dims)) * dtype.itemsize
    payload = raw[6 + 4 * rank:]
    if len(payload) != expected:
        raise ManifestError(f"{path}: payload length {len(payload)} != {expected}")
    return np.frombuffer(payload, dtype=dtype).reshape(dims).copy()


def _params_to_json(p: QuantParams | None):
    if p is None:
        return None
    return {"scale": p.scale, "offset": p.offset,
            "bitwidth": p.bitwidth, "master_bitwidth": p.master_bitwidth}


def _params_from_json(d) -> QuantParams | None:
    if d is None:
        return None
    return QuantParams(**d)


_LAYER_SCALARS = ("kind", "name", "in_features", "out_features", "in_channels",
                  "out_channels", "kernel", "stride", "padding", "pool",
                  "source", "alpha")
_LAYER_PARAMS = ("input_params", "weight_params", "bias_params",
                 "prebias_params", "output_params")


def save_model(model: ModelGraph, directory: Path, provenance: dict | None = None) -> Path:
    """Write the manifest plus one blob per stored tensor; returns manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    layers_json = []
    for i, layer in enumerate(model.layers):
        entry = {k: getattr(layer, k) for k in _LAYER_SCALARS}
        entry.update({k: _params_to_json(getattr(layer, k)) for k in _LAYER_PARAMS})
        for attr, suffix in (("weight", "weight"), ("bias", "bias")):
            t = getattr(layer, attr)
            if t is not None:
                ref = f"blobs/layer{i}_{suffix}.nqtb"
                write_blob(directory / ref, np.asarray(t))
                entry[attr] = ref
            qt = getattr(layer, attr + "_q")
            if qt is not None:
                ref = f"blobs/layer{i}_{suffix}_q.nqtb"
                write_blob(directory / ref, qt.data)
                entry[attr + "_q"] = ref
        layers_json.append(entry)
    manifest = {
        "version": MANIFEST_VERSION,
        "input_shape": list(model.input_shape),
        "input_params": _params_to_json(model.input_params),
        "quantization": {
            "master_bitwidth": model.master_bitwidth,
            "frac_bits": model.frac_bits,
        },
        "layers": layers_json,
        "provenance": provenance or {},
    }
    path = directory / "manifest.json"
    atomic_write_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_model(manifest_path: Path) -> ModelGraph:
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.json"
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read manifest {manifest_path}: {exc}") from exc
    if manifest.get("version") != MANIFEST_VERSION:
        raise ManifestError(f"unrecognized manifest version {manifest.get('version')!r}")
    base = manifest_path.parent
    layers = []
    for entry in manifest["layers"]:
        layer = LayerSpec(**{k: entry[k] for k in _LAYER_SCALARS})
        for k in _LAYER_PARAMS:
            setattr(layer, k, _params_from_json(entry.get(k)))
        if "weight" in entry:
            layer.weight = read_blob(base / entry["weight"]).astype(np.float64)
        if "bias" in entry:
            layer.bias = read_blob(base / entry["bias"]).astype(np.float64)
        if "weight_q" in entry:
            layer.weight_q = NestedTensor(
                data=read_blob(base / entry["weight_q"]).astype(np.int64),
                params=layer.weight_params)
        if "bias_q" in entry:
            layer.bias_q = NestedTensor(
                data=read_blob(base / entry["bias_q"]).astype(np.int64),
                params=layer.bias_params)
        layers.append(layer)
    q = manifest["quantization"]
    model = ModelGraph(
        layers=layers,
        input_shape=tuple(manifest["input_shape"]),
        input_params=_params_from_json(manifest.get("input_params")),
        master_bitwidth=q["master_bitwidth"],
        frac_bits=q.get("frac_bits", DEFAULT_FRAC_BITS),
    )
    return model


def save_controller(spec: ControllerSpec, directory: Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name in ("w1", "b1", "w2", "b2"):
        t = getattr(spec, name)
        if t is not None and t.size:
            write_blob(directory / f"{name}.nqtb", np.asarray(t, dtype=np.float64))
    meta = {
        "num_layers": spec.num_layers,
        "candidates": list(spec.candidates),
        "feature_dim": spec.feature_dim,
        "hidden": spec.hidden,
        "source": "loaded",
        "seed": spec.seed,
    }
    path = directory / "controller.json"
    atomic_write_text(path, json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def load_controller(path: Path) -> ControllerSpec:
    path = Path(path)
    if path.is_dir():
        path = path / "controller.json"
    meta = json.loads(path.read_text())
    spec = ControllerSpec(
        num_layers=meta["num_layers"],
        candidates=tuple(meta["candidates"]),
        feature_dim=meta["feature_dim"],
        hidden=meta["hidden"],
        source="loaded",
        seed=meta.get("seed"),
    )
    base = path.parent
    for name in ("w1", "b1", "w2", "b2"):
        blob = base / f"{name}.nqtb"
        if blob.exists():
            setattr(spec, name, read_blob(blob).astype(np.float64))
    return spec


def write_report(path: Path, tree: dict) -> None:
    """Write a report as key=value lines plus a JSON twin next to it."""
    lines = []

    def walk(prefix: str, node):
        if isinstance(node, dict):
            for k in sorted(node):
                walk(f"{prefix}{k}." if prefix else f"{k}.", node[k]) \
                    if isinstance(node[k], dict) else walk_leaf(prefix, k, node[k])
        else:
            lines.append(f"{prefix.rstrip('.')}={node}")

    def walk_leaf(prefix: str, key: str, value):
        if isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        lines.append(f"{prefix}{key}={value}")

    walk("", tree)
    path = Path(path)
    atomic_write_text(path, "\n".join(lines) + "\n")
    atomic_write_text(path.with_suffix(path.suffix + ".json"),
                      json.dumps(tree, indent=2, sort_keys=True) + "\n")
