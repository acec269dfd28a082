"""Byte-exact model files for float and bit-packed networks.

Layout (all integers and reals little-endian, reals 32-bit IEEE):

    magic[8]      b"BCNNFP32" (float) or b"BCNNBIN1" (packed binarized)
    version u32   currently 1
    crc32 u32     zlib.crc32 of every byte after this field
    layer_count u32, input_channels u32, input_h u32, input_w u32
    layer records, one per architecture layer, in forward order:
        type u8                   1=conv 2=maxpool 3=fc 4=relu
        out,in,kh,kw,stride u32x5 (maxpool: 0,0,size,size,stride; relu: zeros)
        payload:
          float conv/fc:  out*in*kh*kw f32 weights (row-major out,in,kh,kw),
                          then out f32 biases
          packed conv/fc: per output kernel: alpha f32 + ceil(in*kh*kw/8)
                          sign bytes (MSB-first, 1=+1, zero padding),
                          then out f32 biases
          maxpool/relu:   none
    optional metadata record:
        marker u8 0xFF, iteration u64, seed u64 (two's complement),
        config_len u32, config JSON (UTF-8, sorted keys)

A hex-annotated example lives in docs/model_format.md. Loaders reject rather
than guess: bad magic, unknown version, checksum mismatch, truncation, dim/
payload disagreement, nonzero padding bits, and trailing bytes are all
distinct errors.
"""

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .layers import ConvLayerParams
from .network import LayerSpec, NetworkParams, NetworkSpec
from .packed import PackedKernel, PackedLayer, PackedNetwork

MAGIC_FLOAT = b"BCNNFP32"
MAGIC_PACKED = b"BCNNBIN1"
VERSION = 1
_TYPE_CODES = {"conv": 1, "maxpool": 2, "fc": 3, "relu": 4}
_TYPE_KINDS = {v: k for k, v in _TYPE_CODES.items()}
_META_MARKER = 0xFF


class ModelFormatError(ValueError):
    pass


@dataclass
class CheckpointMeta:
    iteration: int = 0
    seed: int = 0
    config: dict = field(default_factory=dict)


class _Reader:
    def __init__(self, data: bytes, pos: int = 0):
        self.data = data
        self.pos = pos

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise ModelFormatError(
                f"file truncated reading {what}: need {n} bytes at offset "
                f"{self.pos}, have {len(self.data) - self.pos}"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.take(8, what))[0]

    def f32s(self, count: int, what: str) -> np.ndarray:
        raw = self.take(4 * count, what)
        return np.frombuffer(raw, dtype="<f4").copy()

    @property
    def exhausted(self) -> bool:
        return self.pos == len(self.data)


def _spec_record_dims(spec: NetworkSpec):
    """(kind, out, in, kh, kw, stride) per layer, conv/fc dims from the chain."""
    kshapes = iter(spec.kernel_shapes())
    rows = []
    for layer in spec.layers:
        if layer.kind in ("conv", "fc"):
            rows.append((layer.kind, *next(kshapes)))
        elif layer.kind == "maxpool":
            rows.append(("maxpool", 0, 0, layer.size, layer.size, layer.stride))
        else:
            rows.append(("relu", 0, 0, 0, 0, 0))
    return rows


def _write_header(body: bytearray, spec: NetworkSpec):
    body += struct.pack(
        "<IIII", len(spec.layers), spec.in_channels, spec.input_hw[0], spec.input_hw[1]
    )


def _write_meta(body: bytearray, meta: CheckpointMeta):
    cfg = json.dumps(meta.config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body += struct.pack(
        "<BQQI",
        _META_MARKER,
        meta.iteration,
        meta.seed & 0xFFFFFFFFFFFFFFFF,
        len(cfg),
    )
    body += cfg


def _finish(path, magic: bytes, body: bytes) -> None:
    crc = zlib.crc32(body) & 0xFFFFFFFF
    Path(path).write_bytes(magic + struct.pack("<II", VERSION, crc) + body)


def save_float(params: NetworkParams, path, meta: CheckpointMeta | None = None) -> None:
    params.validate()
    body = bytearray()
    _write_header(body, params.spec)
    li = 0
    for kind, o, c, kh, kw, s in _spec_record_dims(params.spec):
        body += struct.pack("<BIIIII", _TYPE_CODES[kind], o, c, kh, kw, s)
        if kind in ("conv", "fc"):
            p = params.layers[li]
            body += p.weights.astype("<f4").tobytes()
            body += p.biases.astype("<f4").tobytes()
            li += 1
    if meta is not None:
        _write_meta(body, meta)
    _finish(path, MAGIC_FLOAT, body)


def save_packed(model: PackedNetwork, path, meta: CheckpointMeta | None = None) -> None:
    body = bytearray()
    _write_header(body, model.spec)
    li = 0
    for kind, o, c, kh, kw, s in _spec_record_dims(model.spec):
        body += struct.pack("<BIIIII", _TYPE_CODES[kind], o, c, kh, kw, s)
        if kind in ("conv", "fc"):
            layer = model.layers[li]
            if len(layer.kernels) != o:
                raise ModelFormatError(
                    f"layer {li}: {len(layer.kernels)} kernels but spec says {o}"
                )
            for pk in layer.kernels:
                if pk.shape != (c, kh, kw):
                    raise ModelFormatError(
                        f"layer {li}: kernel shape {pk.shape} but spec says {(c, kh, kw)}"
                    )
                body += struct.pack("<f", pk.alpha)
                body += pk.bits
            body += np.array([pk.bias for pk in layer.kernels], dtype="<f4").tobytes()
            li += 1
    if meta is not None:
        _write_meta(body, meta)
    _finish(path, MAGIC_PACKED, body)


def _read_file(path, expect_magic: bytes | None):
    data = Path(path).read_bytes()
    if len(data) < 16:
        raise ModelFormatError(f"file truncated: {len(data)} bytes is shorter than the header")
    magic = data[:8]
    if magic not in (MAGIC_FLOAT, MAGIC_PACKED):
        raise ModelFormatError(f"bad magic {magic!r}")
    if expect_magic is not None and magic != expect_magic:
        raise ModelFormatError(f"expected {expect_magic!r} model, found {magic!r}")
    version, crc = struct.unpack("<II", data[8:16])
    if version != VERSION:
        raise ModelFormatError(f"unsupported version {version}")
    body = data[16:]
    actual = zlib.crc32(body) & 0xFFFFFFFF
    if actual != crc:
        raise ModelFormatError(
            f"checksum mismatch: header says {crc:#010x}, body is {actual:#010x}"
        )
    return magic, _Reader(body)


def _read_spec(r: _Reader):
    layer_count = r.u32("layer count")
    in_c = r.u32("input channels")
    in_h = r.u32("input height")
    in_w = r.u32("input width")
    if not (1 <= in_c <= 4096 and 1 <= in_h <= 65536 and 1 <= in_w <= 65536):
        raise ModelFormatError(f"implausible input dims {in_c}x{in_h}x{in_w}")
    if layer_count > 4096:
        raise ModelFormatError(f"implausible layer count {layer_count}")
    return layer_count, in_c, (in_h, in_w)


def _record_header(r: _Reader, index: int):
    code = r.u8(f"layer {index} type")
    if code not in _TYPE_KINDS:
        raise ModelFormatError(f"layer {index}: unknown type code {code}")
    dims = tuple(r.u32(f"layer {index} dims") for _ in range(5))
    o, c, kh, kw, s = dims
    if code in (_TYPE_CODES["conv"], _TYPE_CODES["fc"]):
        if min(o, c, kh, kw, s) < 1 or o * c * kh * kw > 1 << 31:
            raise ModelFormatError(f"layer {index}: dim overflow {dims}")
    return _TYPE_KINDS[code], dims


def _read_meta(r: _Reader) -> CheckpointMeta | None:
    if r.exhausted:
        return None
    marker = r.u8("metadata marker")
    if marker != _META_MARKER:
        raise ModelFormatError(f"trailing bytes: expected metadata marker, got {marker:#x}")
    iteration = r.u64("metadata iteration")
    seed = r.u64("metadata seed")
    if seed >= 1 << 63:
        seed -= 1 << 64
    cfg_len = r.u32("metadata config length")
    cfg_raw = r.take(cfg_len, "metadata config")
    try:
        config = json.loads(cfg_raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"bad metadata config: {exc}") from exc
    if not r.exhausted:
        raise ModelFormatError(f"trailing bytes after metadata at offset {r.pos}")
    return CheckpointMeta(iteration, seed, config)


def _rebuild_spec(kinds_dims, in_c, input_hw) -> NetworkSpec:
    layers = []
    for kind, (o, c, kh, kw, s) in kinds_dims:
        if kind == "conv":
            if kh != kw:
                raise ModelFormatError(f"non-square conv kernel {kh}x{kw}")
            layers.append(LayerSpec("conv", size=kh, stride=s, features=o))
        elif kind == "fc":
            layers.append(LayerSpec("fc", features=o))
        elif kind == "maxpool":
            layers.append(LayerSpec("maxpool", size=kh, stride=s))
        else:
            layers.append(LayerSpec("relu"))
    spec = NetworkSpec(tuple(layers), in_c, input_hw)
    expected = spec.kernel_shapes()
    stored = [dims for kind, dims in kinds_dims if kind in ("conv", "fc")]
    for i, (exp, got) in enumerate(zip(expected, stored)):
        if tuple(exp) != tuple(got):
            raise ModelFormatError(
                f"parameterized layer {i}: stored dims {got} disagree with "
                f"architecture chain {exp}"
            )
    return spec


def load_float(path):
    """Read a float model; returns (NetworkParams, CheckpointMeta | None).

    Weights come back as float64 for the reference math; saving them again
    reproduces the file byte-for-byte.
    """
    _, r = _read_file(path, MAGIC_FLOAT)
    layer_count, in_c, input_hw = _read_spec(r)
    kinds_dims = []
    payloads = []
    for i in range(layer_count):
        kind, dims = _record_header(r, i)
        kinds_dims.append((kind, dims))
        if kind in ("conv", "fc"):
            o, c, kh, kw, s = dims
            w = r.f32s(o * c * kh * kw, f"layer {i} weights").reshape(o, c, kh, kw)
            b = r.f32s(o, f"layer {i} biases")
            payloads.append((w, b, s))
    meta = _read_meta(r)
    spec = _rebuild_spec(kinds_dims, in_c, input_hw)
    layers = [
        ConvLayerParams(w.astype(np.float64), b.astype(np.float64), s)
        for w, b, s in payloads
    ]
    return NetworkParams(spec, layers).validate(), meta


def load_packed(path):
    """Read a packed binarized model; returns (PackedNetwork, meta | None)."""
    _, r = _read_file(path, MAGIC_PACKED)
    layer_count, in_c, input_hw = _read_spec(r)
    kinds_dims = []
    payloads = []
    for i in range(layer_count):
        kind, dims = _record_header(r, i)
        kinds_dims.append((kind, dims))
        if kind in ("conv", "fc"):
            o, c, kh, kw, s = dims
            n = c * kh * kw
            nbytes = (n + 7) // 8
            kernels = []
            for k in range(o):
                alpha = struct.unpack("<f", r.take(4, f"layer {i} kernel {k} alpha"))[0]
                bits = r.take(nbytes, f"layer {i} kernel {k} sign bits")
                if n % 8:
                    pad = bits[-1] & ((1 << (8 - n % 8)) - 1)
                    if pad:
                        raise ModelFormatError(
                            f"layer {i} kernel {k}: nonzero padding bits {pad:#04x}"
                        )
                kernels.append((alpha, bits, (c, kh, kw)))
            biases = r.f32s(o, f"layer {i} biases")
            payloads.append((kernels, biases, s))
    meta = _read_meta(r)
    spec = _rebuild_spec(kinds_dims, in_c, input_hw)
    layers = []
    for kernels, biases, s in payloads:
        pks = [
            PackedKernel(np.float32(alpha), biases[k], bits, shape)
            for k, (alpha, bits, shape) in enumerate(kernels)
        ]
        layers.append(PackedLayer(pks, s))
    return PackedNetwork(spec, layers), meta


def model_kind(path) -> str:
    """Peek at the magic: "float" or "packed"."""
    magic, _ = _read_file(path, None)
    return "float" if magic == MAGIC_FLOAT else "packed"


def compression_report(float_path, bin_path) -> dict:
    """On-disk size ratio between a float model and its packed counterpart.

    Both files must load cleanly; the ratio is over full file sizes, so
    headers, alphas, and real biases all count against the ideal 32x.
    """
    load_float(float_path)
    load_packed(bin_path)
    float_bytes = Path(float_path).stat().st_size
    bin_bytes = Path(bin_path).stat().st_size
    return {
        "float_bytes": float_bytes,
        "bin_bytes": bin_bytes,
        "ratio": float_bytes / bin_bytes,
    }
