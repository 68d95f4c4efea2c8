"""One binary container for trained models and controller policies.

Layout:

    4-byte magic  "MFC1"
    uint16 little-endian format version
    uint32 little-endian header length
    UTF-8 JSON header: {"kind", "meta", "tensors": [{name, shape, dtype}]}
    tensor blobs, concatenated in header order, little-endian, C-contiguous

The header fully describes every blob, so a loader can validate shapes and
byte counts before touching the payload. Round trips are bit-exact: the
bytes written for a tensor are exactly ``tensor.tobytes()`` in little
endian, and loading reverses that without any float conversion.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .diffusion import AmdmModel, NoiseSchedule
from .errors import (
    CheckpointError,
    CheckpointMagicError,
    CheckpointShapeError,
    CheckpointTruncatedError,
    CheckpointVersionError,
)
from .motion import NormalizationStats
from .nets import DenoiserParams
from .skeleton import SkeletonSpec

MAGIC = b"MFC1"
VERSION = 1

_VERSION_STRUCT = struct.Struct("<H")
_HEADER_LEN = struct.Struct("<I")

_DTYPE_TAGS = {"<f8": np.dtype("<f8"), "<f4": np.dtype("<f4")}


def config_fingerprint(config) -> str:
    """Short stable hash of a configuration mapping or dataclass."""
    if hasattr(config, "__dataclass_fields__"):
        from dataclasses import asdict

        config = asdict(config)
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def write_container(path, kind: str, meta: dict, tensors: list) -> None:
    """Write named tensors plus metadata; `tensors` is [(name, array), ...]."""
    table = []
    blobs = []
    for name, array in tensors:
        array = np.asarray(array)
        tag = "<f4" if array.dtype == np.float32 else "<f8"
        blob = np.ascontiguousarray(array, dtype=_DTYPE_TAGS[tag]).tobytes()
        table.append({"name": name, "shape": list(array.shape), "dtype": tag})
        blobs.append(blob)
    header = json.dumps(
        {"kind": kind, "meta": meta, "tensors": table}, sort_keys=True
    ).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_VERSION_STRUCT.pack(VERSION))
        fh.write(_HEADER_LEN.pack(len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def read_container(path) -> tuple:
    """Validate and read a container; returns (kind, meta, {name: array})."""
    try:
        payload = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint: {exc}") from exc
    if len(payload) < len(MAGIC) + _VERSION_STRUCT.size + _HEADER_LEN.size:
        raise CheckpointMagicError("file too short to be a checkpoint")
    if payload[: len(MAGIC)] != MAGIC:
        raise CheckpointMagicError("bad magic bytes; not a checkpoint file")
    pos = len(MAGIC)
    (version,) = _VERSION_STRUCT.unpack_from(payload, pos)
    pos += _VERSION_STRUCT.size
    if version != VERSION:
        raise CheckpointVersionError(
            f"checkpoint version {version} not supported (expected {VERSION})")
    (header_len,) = _HEADER_LEN.unpack_from(payload, pos)
    pos += _HEADER_LEN.size
    if pos + header_len > len(payload):
        raise CheckpointTruncatedError("header extends past end of file")
    try:
        header = json.loads(payload[pos:pos + header_len].decode())
        kind = header["kind"]
        meta = header["meta"]
        table = header["tensors"]
    except (ValueError, KeyError) as exc:
        raise CheckpointError(f"malformed checkpoint header: {exc}") from exc
    pos += header_len

    tensors = {}
    for entry in table:
        try:
            shape = tuple(int(s) for s in entry["shape"])
            dtype = _DTYPE_TAGS[entry["dtype"]]
            name = entry["name"]
        except (KeyError, ValueError) as exc:
            raise CheckpointError(f"malformed tensor entry: {exc}") from exc
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * dtype.itemsize
        if pos + nbytes > len(payload):
            raise CheckpointTruncatedError(
                f"tensor {name!r} needs {nbytes} bytes past offset {pos}, "
                f"file has {len(payload)}")
        tensors[name] = np.frombuffer(
            payload, dtype=dtype, count=count, offset=pos).reshape(shape).copy()
        pos += nbytes
    return kind, meta, tensors


def _denoiser_tensor_list(params: DenoiserParams) -> list:
    named = []
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        named.append((f"w{i}", w))
        named.append((f"b{i}", b))
    return named


def save_checkpoint(obj, path, provenance: "dict | None" = None) -> None:
    """Persist a trained model or a policy bundle to one file."""
    if isinstance(obj, AmdmModel):
        meta = {
            "skeleton": obj.skeleton.to_json(),
            "fps": obj.fps,
            "schedule": obj.schedule.to_json(),
            "stats": obj.stats.to_json(),
            "denoiser": {
                "feature_dim": obj.denoiser.feature_dim,
                "hidden": obj.denoiser.hidden,
                "layers": len(obj.denoiser.weights),
                "embed_dim": obj.denoiser.embed_dim,
            },
            "provenance": provenance or {},
        }
        write_container(path, "amdm", meta, _denoiser_tensor_list(obj.denoiser))
        return
    from .control.policy import PolicyBundle

    if isinstance(obj, PolicyBundle):
        write_container(path, "policy", obj.checkpoint_meta(provenance),
                        obj.checkpoint_tensors())
        return
    raise TypeError(f"cannot checkpoint object of type {type(obj).__name__}")


def _rebuild_denoiser(spec: dict, tensors: dict) -> DenoiserParams:
    layers = int(spec["layers"])
    feature_dim = int(spec["feature_dim"])
    hidden = int(spec["hidden"])
    embed_dim = int(spec["embed_dim"])
    cond = feature_dim + embed_dim
    weights, biases = [], []
    for i in range(layers):
        in_width = (feature_dim if i == 0 else hidden) + cond
        out_width = feature_dim if i == layers - 1 else hidden
        try:
            w, b = tensors[f"w{i}"], tensors[f"b{i}"]
        except KeyError as exc:
            raise CheckpointError(f"missing tensor {exc} for layer {i}") from exc
        if w.shape != (in_width, out_width) or b.shape != (out_width,):
            raise CheckpointShapeError(
                f"layer {i}: tensor shapes {w.shape}/{b.shape} do not match "
                f"declared spec ({in_width}, {out_width})")
        weights.append(w)
        biases.append(b)
    return DenoiserParams(weights, biases, feature_dim, hidden, embed_dim)


def load_checkpoint(path):
    """Load whatever `save_checkpoint` wrote; the kind decides the type."""
    kind, meta, tensors = read_container(path)
    if kind == "amdm":
        try:
            schedule = NoiseSchedule.from_json(meta["schedule"])
            stats = NormalizationStats.from_json(meta["stats"])
            skeleton = SkeletonSpec.from_json(meta["skeleton"])
            fps = float(meta["fps"])
            denoiser = _rebuild_denoiser(meta["denoiser"], tensors)
        except CheckpointError:
            raise
        except (KeyError, ValueError, TypeError) as exc:
            raise CheckpointError(f"invalid model metadata: {exc}") from exc
        return AmdmModel(schedule, denoiser, stats, skeleton, fps)
    if kind == "policy":
        from .control.policy import PolicyBundle

        return PolicyBundle.from_checkpoint(meta, tensors)
    raise CheckpointError(f"unknown checkpoint kind {kind!r}")


def checkpoint_meta(path) -> tuple:
    """Peek at (kind, meta) without materializing tensors."""
    kind, meta, _ = read_container(path)
    return kind, meta
