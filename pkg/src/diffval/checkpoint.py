"""Binary checkpoint format.

All integers and floats are little-endian; arrays are raw float64 so
round-trips are bit-exact. A checkpoint file is a container of named
sections:

    magic ``DVCP`` | u16 version | u16 section count
    per section: u16 name length | name (utf-8) | u64 payload length | payload

Network sections use their own framed format (magic ``DMLP``):

    magic | u16 version | u32 input dim | u32 output dim
    u32 hidden count | u32 per hidden width | u32 layer count
    per layer: u8 has layer norm | u32 out | u32 in
               weight (out*in f64) | bias (out f64) | [gain | shift]

Noise schedules store only T and the beta table (alpha tables are
recomputed, which is deterministic). Normalizers store per-dimension
lo/hi. The ``meta`` section is UTF-8 JSON.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from .nn import Layer, MlpParams

CONTAINER_MAGIC = b"DVCP"
NETWORK_MAGIC = b"DMLP"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _write_array(buf: io.BytesIO, a: np.ndarray) -> None:
    buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def _read_array(buf: io.BytesIO, count: int) -> np.ndarray:
    raw = buf.read(8 * count)
    if len(raw) != 8 * count:
        raise CheckpointError("truncated array data")
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).copy()


def encode_network(params: MlpParams) -> bytes:
    buf = io.BytesIO()
    buf.write(NETWORK_MAGIC)
    buf.write(struct.pack("<HII", VERSION, params.input_dim, params.output_dim))
    buf.write(struct.pack("<I", len(params.hidden_dims)))
    for h in params.hidden_dims:
        buf.write(struct.pack("<I", h))
    buf.write(struct.pack("<I", len(params.layers)))
    for layer in params.layers:
        has_ln = layer.ln_gain is not None
        buf.write(struct.pack("<BII", int(has_ln), layer.out_dim, layer.in_dim))
        _write_array(buf, layer.weight)
        _write_array(buf, layer.bias)
        if has_ln:
            _write_array(buf, layer.ln_gain)
            _write_array(buf, layer.ln_shift)
    return buf.getvalue()


def decode_network(data: bytes) -> MlpParams:
    buf = io.BytesIO(data)
    if buf.read(4) != NETWORK_MAGIC:
        raise CheckpointError("bad network magic")
    version, input_dim, output_dim = struct.unpack("<HII", buf.read(10))
    if version != VERSION:
        raise CheckpointError(f"unsupported network version {version}")
    (n_hidden,) = struct.unpack("<I", buf.read(4))
    hidden = tuple(struct.unpack("<I", buf.read(4))[0] for _ in range(n_hidden))
    (n_layers,) = struct.unpack("<I", buf.read(4))
    layers = []
    for _ in range(n_layers):
        has_ln, out_dim, in_dim = struct.unpack("<BII", buf.read(9))
        w = _read_array(buf, out_dim * in_dim).reshape(out_dim, in_dim)
        b = _read_array(buf, out_dim)
        gain = shift = None
        if has_ln:
            gain = _read_array(buf, out_dim)
            shift = _read_array(buf, out_dim)
        layers.append(Layer(w, b, gain, shift))
    return MlpParams(input_dim, hidden, output_dim, layers)


def encode_schedule(T: int, beta: np.ndarray) -> bytes:
    buf = io.BytesIO()
    buf.write(struct.pack("<I", T))
    _write_array(buf, beta)
    return buf.getvalue()


def decode_schedule(data: bytes) -> tuple[int, np.ndarray]:
    buf = io.BytesIO(data)
    (T,) = struct.unpack("<I", buf.read(4))
    return T, _read_array(buf, T)


def encode_normalizer(lo: np.ndarray, hi: np.ndarray) -> bytes:
    buf = io.BytesIO()
    buf.write(struct.pack("<I", lo.shape[0]))
    _write_array(buf, lo)
    _write_array(buf, hi)
    return buf.getvalue()


def decode_normalizer(data: bytes) -> tuple[np.ndarray, np.ndarray]:
    buf = io.BytesIO(data)
    (dim,) = struct.unpack("<I", buf.read(4))
    return _read_array(buf, dim), _read_array(buf, dim)


def write_checkpoint(path: str | Path, sections: dict[str, bytes]) -> None:
    buf = io.BytesIO()
    buf.write(CONTAINER_MAGIC)
    buf.write(struct.pack("<HH", VERSION, len(sections)))
    for name, payload in sections.items():
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<H", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<Q", len(payload)))
        buf.write(payload)
    Path(path).write_bytes(buf.getvalue())


def read_checkpoint(path: str | Path) -> dict[str, bytes]:
    data = Path(path).read_bytes()
    buf = io.BytesIO(data)
    if buf.read(4) != CONTAINER_MAGIC:
        raise CheckpointError(f"{path}: bad checkpoint magic")
    version, n_sections = struct.unpack("<HH", buf.read(4))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    sections = {}
    for _ in range(n_sections):
        (name_len,) = struct.unpack("<H", buf.read(2))
        name = buf.read(name_len).decode("utf-8")
        (payload_len,) = struct.unpack("<Q", buf.read(8))
        payload = buf.read(payload_len)
        if len(payload) != payload_len:
            raise CheckpointError(f"{path}: truncated section {name}")
        sections[name] = payload
    return sections


def encode_meta(meta: dict) -> bytes:
    return json.dumps(meta, sort_keys=True).encode("utf-8")


def decode_meta(data: bytes) -> dict:
    return json.loads(data.decode("utf-8"))
