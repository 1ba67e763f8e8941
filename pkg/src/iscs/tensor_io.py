"""Tensor container and PGM/PPM image I/O.

Container layout: an unsigned 64-bit little-endian header length H, then H
bytes of UTF-8 JSON mapping tensor names to ``{"dtype", "shape",
"data_offsets"}``, then the raw payload. Offsets are byte ranges relative to
the end of the header; tensor data is row-major little-endian. Supported
dtypes are F16, F32, F64. A ``"__metadata__"`` entry holding string-to-string
pairs is permitted; it is carried through but never treated as a tensor.

Images are binary PGM (P5, grayscale) and PPM (P6, RGB) with maxval 255.
``#`` comments are allowed between header tokens; exactly one whitespace byte
separates the maxval from the sample payload.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ImageFormatError, TensorFileError

_DTYPES = {
    "F16": np.dtype("<f2"),
    "F32": np.dtype("<f4"),
    "F64": np.dtype("<f8"),
}

_WHITESPACE = b" \t\r\n\x0b\x0c"


@dataclass(frozen=True)
class TensorEntry:
    """Header record for one tensor: dtype tag, shape, payload byte range."""

    dtype: str
    shape: tuple[int, ...]
    data_offsets: tuple[int, int]

    @property
    def element_count(self) -> int:
        n = 1
        for d in self.shape:
            n *= d
        return n

    @property
    def byte_count(self) -> int:
        return self.element_count * _DTYPES[self.dtype].itemsize


@dataclass
class TensorFile:
    """Parsed container: name -> entry, raw payload, pass-through metadata."""

    entries: dict[str, TensorEntry]
    payload: bytes
    metadata: dict[str, str] = field(default_factory=dict)

    def names(self) -> list[str]:
        return list(self.entries)

    def tensor_bytes(self, name: str) -> bytes:
        entry = self._entry(name)
        begin, end = entry.data_offsets
        return self.payload[begin:end]

    def tensor(self, name: str) -> np.ndarray:
        """Decode one tensor to a numpy array (native byte order preserved)."""
        entry = self._entry(name)
        raw = self.tensor_bytes(name)
        arr = np.frombuffer(raw, dtype=_DTYPES[entry.dtype])
        return arr.reshape(entry.shape)

    def _entry(self, name: str) -> TensorEntry:
        if name not in self.entries:
            raise TensorFileError(f"tensor {name!r} not present in container")
        return self.entries[name]


def _validate_entry(name: str, raw: object, payload_len: int) -> TensorEntry:
    if not isinstance(raw, dict):
        raise TensorFileError(f"tensor {name!r}: header entry is not an object")
    try:
        dtype = raw["dtype"]
        shape = raw["shape"]
        offsets = raw["data_offsets"]
    except (KeyError, TypeError) as exc:
        raise TensorFileError(f"tensor {name!r}: missing header field {exc}") from exc
    if dtype not in _DTYPES:
        raise TensorFileError(f"tensor {name!r}: unknown dtype {dtype!r}")
    if not isinstance(shape, list) or any(
        not isinstance(d, int) or isinstance(d, bool) for d in shape
    ):
        raise TensorFileError(f"tensor {name!r}: shape must be a list of ints")
    if any(d < 1 for d in shape):
        raise TensorFileError(f"tensor {name!r}: shape dims must be >= 1")
    if (
        not isinstance(offsets, list)
        or len(offsets) != 2
        or any(not isinstance(o, int) or isinstance(o, bool) for o in offsets)
    ):
        raise TensorFileError(f"tensor {name!r}: data_offsets must be [begin, end]")
    begin, end = offsets
    if begin < 0 or begin > end or end > payload_len:
        raise TensorFileError(
            f"tensor {name!r}: data_offsets [{begin}, {end}] out of bounds "
            f"for payload of {payload_len} bytes"
        )
    entry = TensorEntry(dtype=dtype, shape=tuple(shape), data_offsets=(begin, end))
    if end - begin != entry.byte_count:
        raise TensorFileError(
            f"tensor {name!r}: byte range holds {end - begin} bytes but shape "
            f"{entry.shape} of {dtype} needs {entry.byte_count}"
        )
    return entry


def parse_tensor_container(data: bytes) -> TensorFile:
    """Parse container bytes, validating header and offset geometry."""
    if len(data) < 8:
        raise TensorFileError("truncated file: missing 8-byte header length")
    (header_len,) = struct.unpack_from("<Q", data, 0)
    if 8 + header_len > len(data):
        raise TensorFileError(
            f"truncated file: header claims {header_len} bytes, "
            f"{len(data) - 8} available"
        )
    try:
        header = json.loads(data[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise TensorFileError(f"malformed JSON header: {exc}") from exc
    if not isinstance(header, dict):
        raise TensorFileError("malformed JSON header: top level is not an object")

    payload = data[8 + header_len :]
    metadata: dict[str, str] = {}
    entries: dict[str, TensorEntry] = {}
    for name, raw in header.items():
        if name == "__metadata__":
            if not isinstance(raw, dict) or any(
                not isinstance(k, str) or not isinstance(v, str)
                for k, v in raw.items()
            ):
                raise TensorFileError("__metadata__ must map strings to strings")
            metadata = dict(raw)
            continue
        entries[name] = _validate_entry(name, raw, len(payload))

    occupied = sorted(
        (e.data_offsets[0], e.data_offsets[1], name) for name, e in entries.items()
    )
    for (b0, e0, n0), (b1, e1, n1) in zip(occupied, occupied[1:]):
        if b1 < e0:
            raise TensorFileError(
                f"tensor {n1!r} byte range overlaps tensor {n0!r}"
            )
    return TensorFile(entries=entries, payload=payload, metadata=metadata)


def read_tensor_file(path: str) -> TensorFile:
    with open(path, "rb") as fh:
        data = fh.read()
    return parse_tensor_container(data)


def serialize_tensor_file(tf: TensorFile) -> bytes:
    """Canonical byte form: names sorted, payload packed tight in that order."""
    names = sorted(tf.entries)
    header: dict[str, object] = {}
    if tf.metadata:
        header["__metadata__"] = {k: tf.metadata[k] for k in sorted(tf.metadata)}
    chunks: list[bytes] = []
    cursor = 0
    for name in names:
        entry = tf.entries[name]
        raw = tf.tensor_bytes(name)
        header[name] = {
            "dtype": entry.dtype,
            "shape": list(entry.shape),
            "data_offsets": [cursor, cursor + len(raw)],
        }
        chunks.append(raw)
        cursor += len(raw)
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode(
        "utf-8"
    )
    return struct.pack("<Q", len(header_bytes)) + header_bytes + b"".join(chunks)


def write_tensor_file(tf: TensorFile, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_tensor_file(tf))


def build_tensor_file(
    arrays: dict[str, np.ndarray], metadata: dict[str, str] | None = None
) -> TensorFile:
    """Assemble a TensorFile from numpy arrays (float16/32/64 only)."""
    tag_by_kind = {2: "F16", 4: "F32", 8: "F64"}
    entries: dict[str, TensorEntry] = {}
    chunks: list[bytes] = []
    cursor = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        if arr.dtype.kind != "f" or arr.dtype.itemsize not in tag_by_kind:
            raise TensorFileError(f"tensor {name!r}: unsupported dtype {arr.dtype}")
        if any(d < 1 for d in arr.shape):
            raise TensorFileError(f"tensor {name!r}: shape dims must be >= 1")
        raw = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        entries[name] = TensorEntry(
            dtype=tag_by_kind[arr.dtype.itemsize],
            shape=tuple(arr.shape),
            data_offsets=(cursor, cursor + len(raw)),
        )
        chunks.append(raw)
        cursor += len(raw)
    return TensorFile(
        entries=entries, payload=b"".join(chunks), metadata=dict(metadata or {})
    )


@dataclass
class ConvKernelSet:
    """Convolution weights (C_out, C_in, K, K) and optional bias (C_out,)."""

    weights: np.ndarray
    bias: np.ndarray | None = None

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 4:
            raise ValueError(f"weights must have rank 4, got rank {w.ndim}")
        if w.shape[2] != w.shape[3]:
            raise ValueError(f"kernels must be square, got {w.shape[2]}x{w.shape[3]}")
        if min(w.shape) < 1:
            raise ValueError("weight dims must all be >= 1")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights contain non-finite values")
        object.__setattr__(self, "weights", w)
        if self.bias is not None:
            b = np.asarray(self.bias, dtype=np.float64)
            if b.ndim != 1 or b.shape[0] != w.shape[0]:
                raise ValueError(
                    f"bias must have shape ({w.shape[0]},), got {b.shape}"
                )
            if not np.all(np.isfinite(b)):
                raise ValueError("bias contains non-finite values")
            object.__setattr__(self, "bias", b)

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]


def extract_kernel_set(
    tf: TensorFile, weight_name: str, bias_name: str | None = None
) -> ConvKernelSet:
    """Pull one conv layer out of a container, promoted to float64.

    F16/F32 to F64 promotion is exact, so downstream scores do not depend on
    the stored precision beyond what the stored values themselves carry.
    """
    weights = tf.tensor(weight_name).astype(np.float64)
    bias = None
    if bias_name is not None:
        bias = tf.tensor(bias_name).astype(np.float64)
    try:
        return ConvKernelSet(weights=weights, bias=bias)
    except ValueError as exc:
        raise TensorFileError(f"tensor {weight_name!r}: {exc}") from exc


@dataclass
class Image:
    """8-bit image; samples are (h, w) for grayscale or (h, w, 3) for RGB."""

    width: int
    height: int
    channels: int
    samples: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.samples, dtype=np.uint8)
        expect = (self.height, self.width) if self.channels == 1 else (
            self.height,
            self.width,
            self.channels,
        )
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")
        if arr.shape != expect:
            raise ValueError(f"samples shape {arr.shape} != expected {expect}")
        object.__setattr__(self, "samples", arr)


def _header_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    # Tokens separated by whitespace; '#' starts a comment running to end of
    # line. Returns the tokens and the index of the byte after the last one.
    tokens: list[bytes] = []
    i = 0
    while len(tokens) < count:
        if i >= len(data):
            raise ImageFormatError("truncated image header")
        b = data[i]
        if b in _WHITESPACE:
            i += 1
            continue
        if b == 0x23:  # '#'
            while i < len(data) and data[i] not in b"\r\n":
                i += 1
            continue
        j = i
        while j < len(data) and data[j] not in _WHITESPACE and data[j] != 0x23:
            j += 1
        tokens.append(data[i:j])
        i = j
    return tokens, i


def parse_image(data: bytes) -> Image:
    tokens, end = _header_tokens(data, 4)
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise ImageFormatError(f"unsupported magic {magic!r} (want P5 or P6)")
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError as exc:
        raise ImageFormatError(f"non-numeric header token: {exc}") from exc
    if width < 1 or height < 1:
        raise ImageFormatError(f"bad dimensions {width}x{height}")
    if maxval != 255:
        raise ImageFormatError(f"maxval must be 255, got {maxval}")
    if end >= len(data) or data[end] not in _WHITESPACE:
        raise ImageFormatError("missing single whitespace byte after maxval")
    payload = data[end + 1 :]
    channels = 1 if magic == b"P5" else 3
    expected = width * height * channels
    if len(payload) < expected:
        raise ImageFormatError(
            f"truncated payload: {len(payload)} bytes, expected {expected}"
        )
    if len(payload) > expected:
        raise ImageFormatError(
            f"payload size mismatch: {len(payload)} bytes, expected {expected}"
        )
    arr = np.frombuffer(payload, dtype=np.uint8)
    shape = (height, width) if channels == 1 else (height, width, 3)
    return Image(
        width=width, height=height, channels=channels, samples=arr.reshape(shape)
    )


def read_image(path: str) -> Image:
    with open(path, "rb") as fh:
        return parse_image(fh.read())


def serialize_image(image: Image) -> bytes:
    magic = b"P5" if image.channels == 1 else b"P6"
    header = magic + b"\n%d %d\n255\n" % (image.width, image.height)
    return header + np.ascontiguousarray(image.samples).tobytes()


def write_image(image: Image, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_image(image))
