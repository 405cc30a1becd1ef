"""Binary checkpoint format.

``LSNATT01`` magic, an unsigned 64-bit little-endian header length, a UTF-8
JSON header (architecture, metadata, per-layer shape/offset table), then the
raw little-endian IEEE-754 weight payload.
"""

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import (
    CheckpointHeaderError,
    CheckpointMagicError,
    CheckpointShapeError,
    CheckpointTruncatedError,
    CheckpointVersionError,
)
from .network import CamNet, NetConfig, build_network

MAGIC = b"LSNATT01"
FORMAT_VERSION = 1
_DTYPES = {"float32": "<f4", "float64": "<f8"}


@dataclass
class Checkpoint:
    net_config: NetConfig
    weights: dict  # name -> ndarray, in layer order
    metadata: dict = field(default_factory=dict)

    @property
    def dtype(self):
        return next(iter(self.weights.values())).dtype

    @classmethod
    def from_network(cls, net, metadata=None):
        return cls(net.config, {n: net.params[n].data.copy() for n in net.param_names()}, dict(metadata or {}))

    def to_network(self):
        """Rebuild the network; raises :class:`CheckpointShapeError` on a layout mismatch."""
        net = build_network(self.net_config, seed=0, dtype=self.dtype)
        expected = net.param_names()
        if list(self.weights) != expected:
            raise CheckpointShapeError(f"layer names {list(self.weights)} do not match architecture {expected}")
        for name in expected:
            w = self.weights[name]
            if w.shape != net.params[name].shape:
                raise CheckpointShapeError(
                    f"layer {name}: stored shape {w.shape}, architecture needs {net.params[name].shape}")
            net.params[name] = T.Tensor(w.copy(), requires_grad=True)
        return net


def encode(ckpt):
    dtype_name = str(ckpt.dtype)
    if dtype_name not in _DTYPES:
        raise CheckpointHeaderError(f"unsupported weight dtype {dtype_name}")
    layers, chunks, offset = [], [], 0
    for name, w in ckpt.weights.items():
        raw = np.ascontiguousarray(w, dtype=_DTYPES[dtype_name]).tobytes()
        layers.append({"name": name, "shape": list(w.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = {
        "format_version": FORMAT_VERSION,
        "architecture": ckpt.net_config.to_dict(),
        "dtype": dtype_name,
        "layers": layers,
        "payload_bytes": offset,
        "metadata": ckpt.metadata,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(hbytes)) + hbytes + b"".join(chunks)


def decode(buf):
    if len(buf) < len(MAGIC) or buf[:len(MAGIC)] != MAGIC:
        raise CheckpointMagicError(f"bad magic {bytes(buf[:len(MAGIC)])!r}, expected {MAGIC!r}")
    pos = len(MAGIC)
    if len(buf) < pos + 8:
        raise CheckpointTruncatedError("file ends inside the header length field")
    (hlen,) = struct.unpack("<Q", buf[pos:pos + 8])
    pos += 8
    if len(buf) < pos + hlen:
        raise CheckpointTruncatedError(f"header declares {hlen} bytes, only {len(buf) - pos} present")
    try:
        header = json.loads(buf[pos:pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointHeaderError(f"unreadable header: {exc}") from exc
    pos += hlen
    if not isinstance(header, dict):
        raise CheckpointHeaderError("header is not a JSON object")
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointVersionError(f"unsupported format_version {header.get('format_version')!r}")
    try:
        dtype = np.dtype(_DTYPES[header["dtype"]])
        layers = header["layers"]
        payload_bytes = int(header["payload_bytes"])
        config = NetConfig.from_dict(header["architecture"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointHeaderError(f"malformed header: {exc!r}") from exc

    payload = buf[pos:]
    if len(payload) < payload_bytes:
        raise CheckpointTruncatedError(
            f"payload truncated: header declares {payload_bytes} bytes "
            f"({payload_bytes // dtype.itemsize} weights), file has {len(payload)}")
    if len(payload) > payload_bytes:
        raise CheckpointShapeError(f"{len(payload) - payload_bytes} unexpected trailing bytes")

    weights = {}
    for layer in layers:
        shape = tuple(layer["shape"])
        count = int(np.prod(shape)) if shape else 1
        if count * dtype.itemsize != layer["nbytes"]:
            raise CheckpointShapeError(f"layer {layer['name']}: shape {shape} disagrees with {layer['nbytes']} bytes")
        start = layer["offset"]
        if start + layer["nbytes"] > payload_bytes:
            raise CheckpointTruncatedError(f"layer {layer['name']} runs past the payload")
        arr = np.frombuffer(payload[start:start + layer["nbytes"]], dtype=dtype).reshape(shape)
        weights[layer["name"]] = arr.astype(dtype.newbyteorder("="))
    ckpt = Checkpoint(config, weights, header.get("metadata", {}))
    ckpt.to_network()  # validates shapes against the architecture
    return ckpt


def checkpoint_save(ckpt, path):
    if isinstance(ckpt, CamNet):
        ckpt = Checkpoint.from_network(ckpt)
    Path(path).write_bytes(encode(ckpt))


def checkpoint_load(path):
    return decode(Path(path).read_bytes())
