"""Binary checkpoint format.

Layout::

    magic    8 bytes   b"SOPGANCK"
    version  uint32 LE
    length   uint64 LE  byte length of the manifest
    manifest UTF-8 JSON
    payload  little-endian float64 tensors, concatenated

The manifest holds the architecture metadata, normalisation statistics, the
run configuration snapshot and a tensor directory
``{name: {"shape": [...], "offset": bytes_from_payload_start}}``.
"""

import json
import struct

import numpy as np

from . import nncore as nn
from .dsp import NormStats
from .errors import CheckpointError
from .gan import GanModel, expected_shapes

MAGIC = b"SOPGANCK"
VERSION = 1
_HEADER = struct.Struct("<8sIQ")


def _tensors(model):
    out = dict(model.params)
    for name, st in model.bn_stats.items():
        out[f"{name}.running_mean"] = st.running_mean
        out[f"{name}.running_var"] = st.running_var
    return out


def save(path, model, run_config=None, extra=None):
    tensors = _tensors(model)
    directory, offset = {}, 0
    for name in sorted(tensors):
        arr = tensors[name]
        directory[name] = {"shape": list(arr.shape), "offset": offset}
        offset += arr.size * 8
    manifest = {
        "architecture": {
            "latent_dim": model.latent_dim,
            "image_shape": list(model.image_shape),
            "base_channels": model.base_channels,
            "feature_layer": model.feature_layer,
            "bn_momentum": {k: s.momentum for k, s in model.bn_stats.items()},
        },
        "norm_stats": None if model.norm_stats is None else
        {"lo": model.norm_stats.lo, "hi": model.norm_stats.hi},
        "run_config": run_config,
        "extra": extra or {},
        "tensors": directory,
        "payload_bytes": offset,
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(blob)))
        fh.write(blob)
        for name in sorted(tensors):
            fh.write(np.ascontiguousarray(tensors[name], dtype="<f8").tobytes())


def load(path):
    """Returns ``(model, manifest)``; any inconsistency raises CheckpointError."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if len(raw) < _HEADER.size:
        raise CheckpointError(f"{path}: truncated header")
    magic, version, mlen = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    start = _HEADER.size + mlen
    if len(raw) < start:
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[_HEADER.size:start].decode("utf-8"))
        arch = manifest["architecture"]
        directory = manifest["tensors"]
        declared = int(manifest["payload_bytes"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: corrupt manifest ({exc})") from None
    payload = raw[start:]
    if len(payload) != declared:
        raise CheckpointError(f"{path}: payload has {len(payload)} bytes, manifest declares {declared}")

    tensors = {}
    for name, entry in directory.items():
        shape = tuple(int(v) for v in entry["shape"])
        off = int(entry["offset"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8
        if off < 0 or off + nbytes > declared:
            raise CheckpointError(f"{path}: tensor {name} {shape} overruns the payload")
        tensors[name] = np.frombuffer(payload, dtype="<f8", count=nbytes // 8, offset=off) \
            .astype(np.float64).reshape(shape)

    latent, shape, base = int(arch["latent_dim"]), tuple(arch["image_shape"]), int(arch["base_channels"])
    want = expected_shapes(latent, shape, base)
    params, bn = {}, {}
    for name, wshape in want.items():
        if name not in tensors:
            raise CheckpointError(f"{path}: missing tensor {name}")
        if tensors[name].shape != wshape:
            raise CheckpointError(f"{path}: tensor {name} has shape {tensors[name].shape}, "
                                  f"architecture needs {wshape}")
        params[name] = tensors[name]
    for layer, momentum in arch["bn_momentum"].items():
        c = params[f"{layer}.gamma"].shape
        try:
            mean, var = tensors[f"{layer}.running_mean"], tensors[f"{layer}.running_var"]
        except KeyError:
            raise CheckpointError(f"{path}: missing running statistics for {layer}") from None
        if mean.shape != c or var.shape != c:
            raise CheckpointError(f"{path}: running statistics of {layer} do not match {c}")
        bn[layer] = nn.BatchNormStats(mean, var, float(momentum))
    ns = manifest.get("norm_stats")
    stats = NormStats(ns["lo"], ns["hi"]) if ns else None
    model = GanModel(latent, shape, base, params, bn, stats, int(arch["feature_layer"]))
    return model, manifest
