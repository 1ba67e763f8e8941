"""Byte-oriented range coder: 64-bit low, 32-bit range, carry-less output.

Classic construction: the encoder keeps the active interval as (low, range)
with range renormalized byte-wise whenever it drops below 2^24. Carries from
interval additions are absorbed before emission by holding back one cache
byte plus a run of 0xFF bytes, so emitted bytes never need fixing up. The
decoder mirrors the arithmetic exactly; cumulative frequency totals must not
exceed 2^16 so the scaled range never collapses to zero.

Symbol API: encode(cum, freq, total) narrows the interval to
[cum/total, (cum+freq)/total); decode_freq(total) returns a value f with
cum <= f < cum + freq for the encoded symbol, after which decode_update
must be called with that symbol's (cum, freq, total).
"""

from __future__ import annotations

TOP = 1 << 24
MASK32 = 0xFFFFFFFF
MAX_TOTAL = 1 << 16


class RangeEncoder:
    def __init__(self) -> None:
        self._low = 0
        self._range = MASK32
        self._cache = 0
        self._cache_size = 1
        self._out = bytearray()
        self._finished = False

    def encode(self, cum: int, freq: int, total: int) -> None:
        if not (0 < freq and 0 <= cum and cum + freq <= total <= MAX_TOTAL):
            raise ValueError(f"bad coder step cum={cum} freq={freq} total={total}")
        r = self._range // total
        self._low += r * cum
        self._range = r * freq
        while self._range < TOP:
            self._shift_low()
            self._range = (self._range << 8) & MASK32

    def encode_bits(self, value: int, nbits: int) -> None:
        """Raw bits at exactly nbits cost, most significant 16-bit limb first."""
        while nbits > 16:
            nbits -= 16
            self.encode((value >> nbits) & 0xFFFF, 1, 1 << 16)
        if nbits:
            self.encode(value & ((1 << nbits) - 1), 1, 1 << nbits)

    def _shift_low(self) -> None:
        # Emit the pending byte once the top byte of low can no longer change;
        # a carry (bit 32) propagates into the cache and the 0xFF run.
        if self._low < 0xFF000000 or self._low > MASK32:
            carry = self._low >> 32
            out = self._out
            out.append((self._cache + carry) & 0xFF)
            for _ in range(self._cache_size - 1):
                out.append((0xFF + carry) & 0xFF)
            self._cache_size = 0
            self._cache = (self._low >> 24) & 0xFF
        self._cache_size += 1
        self._low = (self._low << 8) & MASK32

    def finish(self) -> bytes:
        if not self._finished:
            for _ in range(5):
                self._shift_low()
            self._finished = True
        return bytes(self._out)


class RangeDecoder:
    def __init__(self, data: bytes) -> None:
        self._data = data
        self._pos = 0
        self._range = MASK32
        self._code = 0
        # The first byte is the encoder's initial zero cache; it shifts
        # straight through the 32-bit code window.
        for _ in range(5):
            self._code = ((self._code << 8) | self._next_byte()) & MASK32
        self._r = 0

    def _next_byte(self) -> int:
        if self._pos < len(self._data):
            b = self._data[self._pos]
            self._pos += 1
            return b
        return 0

    def decode_freq(self, total: int) -> int:
        self._r = self._range // total
        f = self._code // self._r
        return total - 1 if f >= total else f

    def decode_update(self, cum: int, freq: int, total: int) -> None:
        self._code -= self._r * cum
        self._range = self._r * freq
        while self._range < TOP:
            self._code = ((self._code << 8) | self._next_byte()) & MASK32
            self._range = (self._range << 8) & MASK32

    def decode_bits(self, nbits: int) -> int:
        value = 0
        while nbits > 16:
            nbits -= 16
            limb = self.decode_freq(1 << 16)
            self.decode_update(limb, 1, 1 << 16)
            value = (value << 16) | limb
        if nbits:
            limb = self.decode_freq(1 << nbits)
            self.decode_update(limb, 1, 1 << nbits)
            value = (value << nbits) | limb
        return value
