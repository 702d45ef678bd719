"""Shared regressor contract and the ``NBM1`` model file format.

File layout (all integers little-endian)::

    b"NBM1"
    u32   metadata length, then UTF-8 ``key=value`` lines (fixed key order)
    u64   payload length, then the family payload
    u32   CRC-32 of metadata bytes + payload bytes

Floats inside metadata are written as ``float.hex`` text; payload floats are
raw IEEE-754 float64, so a load/save round trip is lossless.
"""

from __future__ import annotations

import io
import struct
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from .scada_data import NormalizationParams

MAGIC = b"NBM1"
FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    def __init__(self, message, offset=None):
        self.offset = offset
        super().__init__(f"{message} (offset {offset})" if offset is not None else message)


class ModelVersionError(ModelFormatError):
    pass


@dataclass(frozen=True)
class ModelMetadata:
    family: str
    hyperparameters: dict = field(default_factory=dict)
    seed: int | None = None
    input_norm: NormalizationParams | None = None
    target_norm: NormalizationParams | None = None
    input_labels: tuple = ()
    target_labels: tuple = ()
    extra: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION


class Regressor:
    """Multi-target regressor working in normalised units.

    Subclasses set ``family`` and implement ``_predict`` (batch, already
    width-checked) plus the payload codec ``_write_payload``/``_read_payload``.
    """

    family: str = ""

    def __init__(self, input_count: int, target_count: int, metadata: ModelMetadata | None = None):
        self.input_count = int(input_count)
        self.target_count = int(target_count)
        self.metadata = metadata or ModelMetadata(self.family)

    def predict(self, X) -> np.ndarray:
        return predict_batch(self, X)

    def predict_row(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        return predict_batch(self, x[None, :])[0]

    def _predict(self, X):
        raise NotImplementedError

    def _write_payload(self, w: "BinaryWriter"):
        raise NotImplementedError

    @classmethod
    def _read_payload(cls, r: "BinaryReader", meta: ModelMetadata, k: int, n: int):
        raise NotImplementedError


def predict_batch(model: Regressor, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.input_count:
        raise ValueError(
            f"input width mismatch: model expects {model.input_count} columns, got shape {X.shape}"
        )
    if X.shape[0] == 0:
        return np.empty((0, model.target_count))
    return model._predict(X)


def attach_normalization(model: Regressor, input_norm, target_norm, **extra) -> Regressor:
    model.metadata = replace(
        model.metadata,
        input_norm=input_norm,
        target_norm=target_norm,
        input_labels=tuple(input_norm.labels),
        target_labels=tuple(target_norm.labels),
        extra={**model.metadata.extra, **extra},
    )
    return model


# --------------------------------------------------------------------------
# Binary primitives.
# --------------------------------------------------------------------------


class BinaryWriter:
    def __init__(self):
        self.buf = io.BytesIO()

    def u8(self, v):
        self.buf.write(struct.pack("<B", v))

    def u32(self, v):
        self.buf.write(struct.pack("<I", v))

    def f64(self, v):
        self.buf.write(struct.pack("<d", v))

    def text(self, s: str):
        b = s.encode("utf-8")
        self.u32(len(b))
        self.buf.write(b)

    def array(self, a):
        """Raw float64 values, row-major; the shape is the caller's business."""
        self.buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())

    def getvalue(self) -> bytes:
        return self.buf.getvalue()


class BinaryReader:
    def __init__(self, data: bytes, base_offset: int = 0):
        self.data = data
        self.pos = 0
        self.base = base_offset

    @property
    def offset(self):
        return self.base + self.pos

    def _take(self, n):
        if self.pos + n > len(self.data):
            raise ModelFormatError(f"truncated payload: wanted {n} bytes", self.offset)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self):
        return struct.unpack("<B", self._take(1))[0]

    def u32(self):
        return struct.unpack("<I", self._take(4))[0]

    def f64(self):
        return struct.unpack("<d", self._take(8))[0]

    def text(self):
        n = self.u32()
        try:
            return self._take(n).decode("utf-8")
        except UnicodeDecodeError:
            raise ModelFormatError("invalid UTF-8 text", self.offset) from None

    def array(self, *shape):
        count = int(np.prod(shape)) if shape else 1
        raw = self._take(8 * count)
        return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)

    def expect_end(self):
        if self.pos != len(self.data):
            raise ModelFormatError(
                f"{len(self.data) - self.pos} trailing bytes after payload", self.offset
            )


# --------------------------------------------------------------------------
# Metadata text block.
# --------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return float(v).hex()
    if isinstance(v, (list, tuple)):
        return ",".join(_fmt(x) for x in v)
    return str(v)


def _norm_lines(prefix, p: NormalizationParams):
    return [
        f"{prefix}.labels={','.join(p.labels)}",
        f"{prefix}.mean={_fmt(tuple(p.mean.tolist()))}",
        f"{prefix}.std={_fmt(tuple(p.std.tolist()))}",
        f"{prefix}.zero_variance={','.join('1' if z else '0' for z in p.zero_variance)}",
    ]


def encode_metadata(meta: ModelMetadata) -> bytes:
    lines = [f"format_version={meta.format_version}", f"family={meta.family}"]
    lines.append(f"seed={'' if meta.seed is None else int(meta.seed)}")
    lines.append(f"input_labels={','.join(meta.input_labels)}")
    lines.append(f"target_labels={','.join(meta.target_labels)}")
    for k in sorted(meta.hyperparameters):
        lines.append(f"hp.{k}={_tagged(meta.hyperparameters[k])}")
    for k in sorted(meta.extra):
        lines.append(f"extra.{k}={_tagged(meta.extra[k])}")
    if meta.input_norm is not None:
        lines += _norm_lines("input_norm", meta.input_norm)
    if meta.target_norm is not None:
        lines += _norm_lines("target_norm", meta.target_norm)
    for line in lines:
        if "\n" in line:
            raise ValueError(f"metadata value contains a newline: {line!r}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def _tagged(v) -> str:
    # Type tag keeps hyperparameter values exactly recoverable.
    if isinstance(v, bool):
        return f"b:{_fmt(v)}"
    if isinstance(v, (int, np.integer)):
        return f"i:{int(v)}"
    if isinstance(v, (float, np.floating)):
        return f"f:{float(v).hex()}"
    if isinstance(v, (list, tuple)):
        return "l:" + ";".join(_tagged(x) for x in v)
    return f"s:{v}"


def _untag(s: str):
    tag, _, body = s.partition(":")
    if tag == "b":
        return body == "true"
    if tag == "i":
        return int(body)
    if tag == "f":
        return float.fromhex(body)
    if tag == "l":
        return tuple(_untag(x) for x in body.split(";")) if body else ()
    if tag == "s":
        return body
    raise ValueError(f"unknown value tag {tag!r}")


def _split_list(s):
    return tuple(s.split(",")) if s else ()


def decode_metadata(data: bytes, offset: int) -> ModelMetadata:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError:
        raise ModelFormatError("metadata block is not UTF-8", offset) from None
    kv = {}
    for line in text.splitlines():
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ModelFormatError(f"malformed metadata line {line!r}", offset)
        kv[key] = value
    try:
        version = int(kv.get("format_version", ""))
    except ValueError:
        raise ModelFormatError("metadata lacks a format_version", offset) from None
    if version != FORMAT_VERSION:
        raise ModelVersionError(
            f"unsupported model format version {version} (this build reads {FORMAT_VERSION})",
            offset,
        )
    try:
        hp = {k[3:]: _untag(v) for k, v in kv.items() if k.startswith("hp.")}
        extra = {k[6:]: _untag(v) for k, v in kv.items() if k.startswith("extra.")}
        norms = {}
        for prefix in ("input_norm", "target_norm"):
            if f"{prefix}.mean" in kv:
                norms[prefix] = NormalizationParams(
                    [float.fromhex(x) for x in _split_list(kv[f"{prefix}.mean"])],
                    [float.fromhex(x) for x in _split_list(kv[f"{prefix}.std"])],
                    _split_list(kv[f"{prefix}.labels"]),
                    tuple(x == "1" for x in _split_list(kv[f"{prefix}.zero_variance"])),
                )
        return ModelMetadata(
            family=kv["family"],
            hyperparameters=hp,
            seed=int(kv["seed"]) if kv.get("seed") else None,
            input_norm=norms.get("input_norm"),
            target_norm=norms.get("target_norm"),
            input_labels=_split_list(kv.get("input_labels", "")),
            target_labels=_split_list(kv.get("target_labels", "")),
            extra=extra,
            format_version=version,
        )
    except (KeyError, ValueError) as exc:
        raise ModelFormatError(f"bad metadata: {exc}", offset) from None


# --------------------------------------------------------------------------
# Save / load.
# --------------------------------------------------------------------------

_REGISTRY: dict[str, type] = {}


def register_family(cls):
    _REGISTRY[cls.family] = cls
    return cls


def model_to_bytes(model: Regressor) -> bytes:
    meta = encode_metadata(model.metadata)
    w = BinaryWriter()
    w.u32(model.input_count)
    w.u32(model.target_count)
    model._write_payload(w)
    payload = w.getvalue()
    crc = zlib.crc32(meta + payload)
    return b"".join(
        [MAGIC, struct.pack("<I", len(meta)), meta, struct.pack("<Q", len(payload)), payload,
         struct.pack("<I", crc)]
    )


def model_from_bytes(data: bytes) -> Regressor:
    if len(data) < 4 or data[:4] != MAGIC:
        raise ModelFormatError("not an NBM1 model file (bad magic)", 0)
    r = BinaryReader(data)
    r.pos = 4
    meta_len = r.u32()
    meta_off = r.offset
    meta_bytes = r._take(meta_len)
    meta = decode_metadata(meta_bytes, meta_off)
    payload_len = struct.unpack("<Q", r._take(8))[0]
    payload_off = r.offset
    payload = r._take(payload_len)
    crc_off = r.offset
    crc = r.u32()
    if r.pos != len(data):
        raise ModelFormatError(f"{len(data) - r.pos} trailing bytes after checksum", r.offset)
    if zlib.crc32(meta_bytes + payload) != crc:
        raise ModelFormatError("checksum mismatch: corrupt metadata or payload", crc_off)
    cls = _REGISTRY.get(meta.family)
    if cls is None:
        raise ModelFormatError(f"unknown model family {meta.family!r}", meta_off)
    pr = BinaryReader(payload, payload_off)
    k, n = pr.u32(), pr.u32()
    model = cls._read_payload(pr, meta, k, n)
    pr.expect_end()
    if (model.input_count, model.target_count) != (k, n):
        raise ModelFormatError("payload dimensions disagree with header", payload_off)
    return model


def save_model(model: Regressor, sink) -> int:
    """Write ``model`` to a path or binary file object; returns bytes written."""
    if model.metadata.input_norm is None or model.metadata.target_norm is None:
        raise ValueError("model metadata lacks normalisation params; attach them before saving")
    data = model_to_bytes(model)
    if hasattr(sink, "write"):
        sink.write(data)
    else:
        with open(sink, "wb") as fh:
            fh.write(data)
    return len(data)


def load_model(source) -> Regressor:
    if hasattr(source, "read"):
        data = source.read()
    else:
        with open(source, "rb") as fh:
            data = fh.read()
    return model_from_bytes(data)
