"""Entropy-coded bitstream container for the toy codec.

Layout (little-endian throughout):

    magic "ISCS" | version u16 | flags u16 | width u32 | height u32
    patch_size u8 | channels u16 | delta f32 | beta f32 | model_hash 8B
    [manifest_digest 8B | permutation u16 x C   -- only when FLAG_PERMUTED]
    (mu f32, sigma f32) x C in natural channel order
    payload bytes
    crc32 u32 over everything above

Symbols are coded channel-major (patches row-major inside a channel) with a
per-channel discretized-Gaussian frequency table quantized to a 16-bit total.
The bias channel is re-centered by the integer offset round(beta/delta) so its
residuals are zero; under FLAG_SCALAR_BIAS it is skipped entirely and decoders
rebuild it from the header scalars. Out-of-table values use two escape buckets
followed by a raw 32-bit value.

width/height are the pre-padding dimensions; the patch grid is their ceil
division by patch_size and decoders crop the synthesized canvas back down.
"""

from __future__ import annotations

import bisect
import math
import struct
import zlib
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .codec import (
    BIAS_CHANNEL,
    SYMBOL_MAX,
    SYMBOL_MIN,
    LatentBlock,
    ToyCodecModel,
    _quant_params32,
    encode_latents,
    image_to_float,
    pad_to_patch_grid,
    synthesize,
)
from .errors import IntegrityError
from .rangecoder import RangeDecoder, RangeEncoder
from .tensor_io import Image

MAGIC = b"ISCS"
STREAM_VERSION = 1
FLAG_SCALAR_BIAS = 1
FLAG_PERMUTED = 2

TABLE_TOTAL = 1 << 16
MAX_RADIUS = 8192
RAW_BITS = 32
RAW_OFFSET = 1 << 31

_FIXED = struct.Struct("<4sHHIIBHff")


def quantize_frequencies(probs: np.ndarray, total: int = TABLE_TOTAL) -> np.ndarray:
    """Integer frequencies summing to total, every bin >= 1.

    Largest-remainder rounding; if the floor-1 bumps overshoot, mass is taken
    back from the largest bins, which always have room to give.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("probs must be a non-empty 1-d array")
    if p.size > total:
        raise ValueError(f"{p.size} bins cannot all get >= 1 of {total}")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError("probs must be finite and >= 0")
    s = p.sum()
    p = np.full_like(p, 1.0 / p.size) if s <= 0 else p / s

    ideal = p * total
    f = np.floor(ideal).astype(np.int64)
    frac = ideal - f
    f = np.maximum(f, 1)
    excess = int(f.sum()) - total
    if excess > 0:
        for i in np.argsort(-f, kind="stable"):
            give = min(excess, int(f[i]) - 1)
            f[i] -= give
            excess -= give
            if excess == 0:
                break
    elif excess < 0:
        order = np.argsort(-frac, kind="stable")
        need = -excess
        take = order[:need]  # need < size is not guaranteed; wrap if not
        while take.size < need:
            take = np.concatenate([take, order[: need - take.size]])
        np.add.at(f, take, 1)
    if int(f.sum()) != total or f.min() < 1:
        raise AssertionError("frequency quantization failed")
    return f.astype(np.int64)


@dataclass(frozen=True)
class ChannelTable:
    """Coding table for one latent channel."""

    freqs: np.ndarray   # (2R+3,) int64, sums to TABLE_TOTAL
    cum: np.ndarray     # (2R+4,) exclusive prefix sums
    radius: int
    offset: int         # subtracted from symbols before coding
    scale: float        # sigma32 / delta32

    @property
    def bin_count(self) -> int:
        return int(self.freqs.size)

    def bin_of(self, d: int) -> int:
        """Table bin for residual d; escapes map to the edge buckets."""
        if d < -self.radius:
            return 0
        if d > self.radius:
            return self.bin_count - 1
        return d + self.radius + 1

    def residual_bits(self, residuals: np.ndarray) -> np.ndarray:
        """Ideal code length in bits for each residual under this table."""
        r = np.asarray(residuals, dtype=np.int64)
        bins = np.clip(r + self.radius + 1, 0, self.bin_count - 1)
        bins[r < -self.radius] = 0
        bins[r > self.radius] = self.bin_count - 1
        bits = -np.log2(self.freqs[bins] / TABLE_TOTAL)
        escaped = (r < -self.radius) | (r > self.radius)
        return bits + escaped * RAW_BITS


def build_channel_table(
    sigma32: float, delta32: float, offset: int = 0
) -> ChannelTable:
    d = float(delta32)
    if d == 0.0 or not math.isfinite(d):
        raise ValueError(f"invalid sigma/delta ratio {sigma32}/{d}")
    s = float(sigma32) / d
    if not (s > 0) or not math.isfinite(s):
        raise ValueError(f"invalid sigma/delta ratio {s}")
    radius = min(int(math.ceil(6.0 * s)) + 2, MAX_RADIUS)
    d = np.arange(-radius, radius + 1, dtype=np.float64)
    core = ndtr((d + 0.5) / s) - ndtr((d - 0.5) / s)
    tail_lo = float(ndtr((-radius - 0.5) / s))
    tail_hi = float(1.0 - ndtr((radius + 0.5) / s))
    probs = np.concatenate([[tail_lo], np.maximum(core, 0.0), [tail_hi]])
    freqs = quantize_frequencies(probs)
    cum = np.zeros(freqs.size + 1, dtype=np.int64)
    np.cumsum(freqs, out=cum[1:])
    return ChannelTable(
        freqs=freqs, cum=cum, radius=radius, offset=int(offset), scale=s
    )


def build_tables(
    model: ToyCodecModel,
    delta32: float | None = None,
    sigma32: np.ndarray | None = None,
    beta32: float | None = None,
) -> list[ChannelTable]:
    """One table per channel; header overrides may replace model params."""
    m_delta32, m_beta32, _ = _quant_params32(model)
    if delta32 is None:
        delta32 = m_delta32
    if beta32 is None:
        beta32 = m_beta32
    if sigma32 is None:
        sigma32 = np.float32(model.entropy_sigma).astype(np.float64)
    bias_offset = int(np.rint(beta32 / delta32))
    if abs(bias_offset) > (1 << 30):
        raise ValueError(
            "delta is too small relative to beta: the bias offset "
            f"{bias_offset} would overflow the raw escape range"
        )
    tables = []
    for c in range(model.channels):
        offset = bias_offset if c == BIAS_CHANNEL else 0
        tables.append(build_channel_table(float(sigma32[c]), delta32, offset))
    return tables


@dataclass(frozen=True)
class StreamHeader:
    version: int
    flags: int
    width: int
    height: int
    patch_size: int
    channels: int
    delta32: float
    beta32: float
    model_hash: bytes
    manifest_digest: bytes | None
    permutation: tuple[int, ...] | None
    mu32: np.ndarray
    sigma32: np.ndarray

    @property
    def scalar_bias(self) -> bool:
        return bool(self.flags & FLAG_SCALAR_BIAS)

    @property
    def permuted(self) -> bool:
        return bool(self.flags & FLAG_PERMUTED)

    @property
    def patch_grid(self) -> tuple[int, int]:
        p = self.patch_size
        return (-(-self.height // p), -(-self.width // p))


def pack_header(h: StreamHeader) -> bytes:
    parts = [
        _FIXED.pack(
            MAGIC,
            h.version,
            h.flags,
            h.width,
            h.height,
            h.patch_size,
            h.channels,
            h.delta32,
            h.beta32,
        ),
        h.model_hash,
    ]
    if h.permuted:
        digest = h.manifest_digest or bytes(8)
        perm = h.permutation or ()
        if len(perm) != h.channels:
            raise ValueError("permutation length must equal channel count")
        parts.append(digest)
        parts.append(struct.pack(f"<{h.channels}H", *perm))
    pairs = np.empty((h.channels, 2), dtype="<f4")
    pairs[:, 0] = h.mu32
    pairs[:, 1] = h.sigma32
    parts.append(pairs.tobytes())
    return b"".join(parts)


def unpack_header(data: bytes) -> tuple[StreamHeader, int]:
    """Parse the header at the front of data; returns (header, payload_start)."""

    def need(n: int, what: str) -> None:
        if len(data) < n:
            raise IntegrityError(f"truncated bitstream: {what}")

    need(_FIXED.size, "fixed header")
    magic, version, flags, width, height, p, channels, delta, beta = _FIXED.unpack(
        data[: _FIXED.size]
    )
    if magic != MAGIC:
        raise IntegrityError(f"bad magic {magic!r}")
    if version != STREAM_VERSION:
        raise IntegrityError(f"unsupported stream version {version}")
    if p == 0 or channels < 2 or width == 0 or height == 0:
        raise IntegrityError("degenerate header fields")
    pos = _FIXED.size
    need(pos + 8, "model hash")
    model_hash = data[pos : pos + 8]
    pos += 8
    digest = None
    perm = None
    if flags & FLAG_PERMUTED:
        need(pos + 8 + 2 * channels, "permutation block")
        digest = data[pos : pos + 8]
        pos += 8
        perm = struct.unpack(f"<{channels}H", data[pos : pos + 2 * channels])
        pos += 2 * channels
        if sorted(perm) != list(range(channels)):
            raise IntegrityError("stored permutation is not a bijection")
    need(pos + 8 * channels, "entropy parameter block")
    pairs = np.frombuffer(data[pos : pos + 8 * channels], dtype="<f4").reshape(
        channels, 2
    )
    pos += 8 * channels
    header = StreamHeader(
        version=version,
        flags=flags,
        width=width,
        height=height,
        patch_size=p,
        channels=channels,
        delta32=float(delta),
        beta32=float(beta),
        model_hash=model_hash,
        manifest_digest=digest,
        permutation=perm,
        mu32=pairs[:, 0].astype(np.float64),
        sigma32=pairs[:, 1].astype(np.float64),
    )
    return header, pos


@dataclass(frozen=True)
class RateReport:
    """Rate accounting for one encoded stream.

    channel_bits holds the ideal (table-probability) cost per channel in
    natural channel order; escapes and the scalar-bias 32-bit attribution are
    included. payload_bytes is what the range coder actually emitted.
    """

    width: int
    height: int
    channel_bits: np.ndarray
    channel_symbols: np.ndarray
    escape_counts: np.ndarray
    payload_bytes: int
    header_bytes: int
    scalar_bias: bool
    permuted: bool

    @property
    def pixel_count(self) -> int:
        return self.width * self.height

    @property
    def analytic_bits(self) -> float:
        return float(self.channel_bits.sum())

    @property
    def channel_bpp(self) -> np.ndarray:
        return self.channel_bits / self.pixel_count

    @property
    def analytic_bpp(self) -> float:
        return self.analytic_bits / self.pixel_count

    @property
    def actual_bpp(self) -> float:
        return 8.0 * self.payload_bytes / self.pixel_count

    @property
    def total_bytes(self) -> int:
        # header + payload + trailing crc32
        return self.header_bytes + self.payload_bytes + 4


def _encode_plane(
    enc: RangeEncoder, table: ChannelTable, symbols: np.ndarray
) -> int:
    """Encode one channel's symbols; returns the escape count."""
    cum = table.cum
    freqs = table.freqs
    radius = table.radius
    last = table.bin_count - 1
    escapes = 0
    for q in symbols.tolist():
        d = q - table.offset
        if -radius <= d <= radius:
            b = d + radius + 1
            enc.encode(int(cum[b]), int(freqs[b]), TABLE_TOTAL)
        else:
            b = 0 if d < -radius else last
            enc.encode(int(cum[b]), int(freqs[b]), TABLE_TOTAL)
            enc.encode_bits((d + RAW_OFFSET) & 0xFFFFFFFF, RAW_BITS)
            escapes += 1
    return escapes


def _decode_plane(
    dec: RangeDecoder, table: ChannelTable, count: int
) -> np.ndarray:
    cum_list = table.cum.tolist()
    freqs = table.freqs
    last = table.bin_count - 1
    radius = table.radius
    out = np.empty(count, dtype=np.int64)
    for i in range(count):
        f = dec.decode_freq(TABLE_TOTAL)
        b = bisect.bisect_right(cum_list, f) - 1
        dec.decode_update(int(cum_list[b]), int(freqs[b]), TABLE_TOTAL)
        if b == 0 or b == last:
            d = dec.decode_bits(RAW_BITS) - RAW_OFFSET
        else:
            d = b - 1 - radius
        out[i] = d + table.offset
    return np.clip(out, SYMBOL_MIN, SYMBOL_MAX)


def encode_image(
    model: ToyCodecModel,
    image: Image | np.ndarray,
    scalar_bias: bool = False,
    permutation: tuple[int, ...] | list[int] | None = None,
    manifest_digest: bytes | None = None,
) -> tuple[bytes, RateReport]:
    """Encode a grayscale image; returns (stream bytes, rate report)."""
    pixels = image_to_float(image)
    height, width = pixels.shape
    padded = pad_to_patch_grid(pixels, model.patch_size)
    latents = encode_latents(model, padded)
    q = latents.symbols
    n_patches = q.shape[0] * q.shape[1]

    delta32, beta32, mu32 = _quant_params32(model)
    sigma32 = np.float32(model.entropy_sigma).astype(np.float64)
    tables = build_tables(model)

    order = list(range(model.channels))
    flags = 0
    if permutation is not None:
        perm = [int(c) for c in permutation]
        if sorted(perm) != list(range(model.channels)):
            raise ValueError("permutation must be a bijection over channels")
        order = perm
        flags |= FLAG_PERMUTED
    if scalar_bias:
        flags |= FLAG_SCALAR_BIAS

    enc = RangeEncoder()
    channel_bits = np.zeros(model.channels)
    channel_symbols = np.zeros(model.channels, dtype=np.int64)
    escape_counts = np.zeros(model.channels, dtype=np.int64)
    for c in order:
        if scalar_bias and c == BIAS_CHANNEL:
            # Not coded: one header scalar stands in for the whole plane.
            channel_bits[c] = 32.0
            continue
        table = tables[c]
        plane = q[:, :, c].ravel()
        escape_counts[c] = _encode_plane(enc, table, plane)
        channel_symbols[c] = n_patches
        channel_bits[c] = float(
            table.residual_bits(plane.astype(np.int64) - table.offset).sum()
        )
    payload = enc.finish()

    header = StreamHeader(
        version=STREAM_VERSION,
        flags=flags,
        width=width,
        height=height,
        patch_size=model.patch_size,
        channels=model.channels,
        delta32=delta32,
        beta32=beta32,
        model_hash=model.model_hash,
        manifest_digest=manifest_digest if flags & FLAG_PERMUTED else None,
        permutation=tuple(order) if flags & FLAG_PERMUTED else None,
        mu32=mu32,
        sigma32=sigma32,
    )
    head = pack_header(header)
    body = head + payload
    stream = body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    report = RateReport(
        width=width,
        height=height,
        channel_bits=channel_bits,
        channel_symbols=channel_symbols,
        escape_counts=escape_counts,
        payload_bytes=len(payload),
        header_bytes=len(head),
        scalar_bias=scalar_bias,
        permuted=bool(flags & FLAG_PERMUTED),
    )
    return stream, report


def decode_image(
    data: bytes,
    model: ToyCodecModel,
    expected_manifest_digest: bytes | None = None,
) -> tuple[Image, StreamHeader]:
    """Decode a stream produced by encode_image. Verifies CRC and identity."""
    if len(data) < _FIXED.size + 4:
        raise IntegrityError("truncated bitstream: too short for any stream")
    (stored_crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) & 0xFFFFFFFF != stored_crc:
        raise IntegrityError("crc mismatch: stream is corrupt")
    header, pos = unpack_header(data[:-4])
    payload = data[pos:-4]

    if header.model_hash != model.model_hash:
        raise IntegrityError(
            "model hash mismatch: stream was encoded with a different model"
        )
    if header.patch_size != model.patch_size or header.channels != model.channels:
        raise IntegrityError("header geometry contradicts the model")
    if header.permuted and expected_manifest_digest is not None:
        if header.manifest_digest != expected_manifest_digest:
            raise IntegrityError("manifest digest mismatch")

    work = model
    if float(np.float32(model.delta)) != header.delta32:
        work = model.with_delta(float(header.delta32))

    tables = build_tables(
        work,
        delta32=header.delta32,
        sigma32=header.sigma32,
        beta32=header.beta32,
    )
    py, px = header.patch_grid
    n_patches = py * px
    order = list(header.permutation) if header.permuted else list(
        range(header.channels)
    )

    q = np.empty((py, px, header.channels), dtype=np.int32)
    dec = RangeDecoder(payload)
    for c in order:
        if header.scalar_bias and c == BIAS_CHANNEL:
            continue
        plane = _decode_plane(dec, tables[c], n_patches)
        q[:, :, c] = plane.reshape(py, px)
    if header.scalar_bias:
        q[:, :, BIAS_CHANNEL] = tables[BIAS_CHANNEL].offset

    recon = synthesize(LatentBlock(symbols=q), work)
    samples = recon.samples[: header.height, : header.width]
    image = Image(
        width=header.width,
        height=header.height,
        channels=1,
        samples=np.ascontiguousarray(samples),
    )
    return image, header
