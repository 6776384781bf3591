"""Bit I/O, Exp-Golomb codes and an adaptive binary arithmetic coder."""

from __future__ import annotations

PROB_BITS = 16
PROB_ONE = 1 << PROB_BITS
COUNT_LIMIT = 1024
_TOP = 1 << 24
_MASK32 = 0xFFFFFFFF


class ContextModel:
    """Adaptive estimate of P(bit = 0) from halved symbol counts."""

    __slots__ = ("c0", "c1")

    def __init__(self):
        self.c0 = 1
        self.c1 = 1

    @property
    def p0(self) -> int:
        """P(0) scaled to ``PROB_BITS``, clamped strictly inside (0, 1)."""
        p = (self.c0 << PROB_BITS) // (self.c0 + self.c1)
        return min(max(p, 1), PROB_ONE - 1)

    def update(self, bit: int):
        if bit:
            self.c1 += 1
        else:
            self.c0 += 1
        if self.c0 + self.c1 > COUNT_LIMIT:
            self.c0 = (self.c0 + 1) >> 1
            self.c1 = (self.c1 + 1) >> 1


def contexts(n: int) -> list:
    return [ContextModel() for _ in range(n)]


class CoderClosedError(RuntimeError):
    pass


class ArithmeticEncoder:
    """Binary range coder with carry propagation (32-bit low/range)."""

    def __init__(self):
        self.low = 0
        self.range = _MASK32
        self.cache = 0
        self.cache_size = 1
        self.out = bytearray()
        self.closed = False

    def _shift_low(self):
        low = self.low
        if low < 0xFF000000 or low > _MASK32:
            carry = low >> 32
            temp = self.cache
            while True:
                self.out.append((temp + carry) & 0xFF)
                temp = 0xFF
                self.cache_size -= 1
                if not self.cache_size:
                    break
            self.cache = (low >> 24) & 0xFF
        self.cache_size += 1
        self.low = (low << 8) & _MASK32

    def encode_bit(self, ctx: ContextModel, bit: int):
        if self.closed:
            raise CoderClosedError("write after flush")
        c0, c1 = ctx.c0, ctx.c1
        p0 = (c0 << PROB_BITS) // (c0 + c1)
        p0 = 1 if p0 < 1 else (PROB_ONE - 1 if p0 >= PROB_ONE else p0)
        bound = (self.range >> PROB_BITS) * p0
        if bit:
            self.low += bound
            self.range -= bound
            c1 += 1
        else:
            self.range = bound
            c0 += 1
        if c0 + c1 > COUNT_LIMIT:
            c0 = (c0 + 1) >> 1
            c1 = (c1 + 1) >> 1
        ctx.c0, ctx.c1 = c0, c1
        while self.range < _TOP:
            self.range <<= 8
            self._shift_low()

    def encode_bypass(self, bit: int):
        if self.closed:
            raise CoderClosedError("write after flush")
        self.range >>= 1
        if bit:
            self.low += self.range
        while self.range < _TOP:
            self.range <<= 8
            self._shift_low()

    def encode_bits(self, value: int, n: int):
        """``n`` equiprobable bits, most significant first."""
        for i in range(n - 1, -1, -1):
            self.encode_bypass((value >> i) & 1)

    def encode_uint(self, ctxs, value: int):
        """Exp-Golomb order 0 with an adaptive unary prefix."""
        w = value + 1
        nb = w.bit_length() - 1
        last = len(ctxs) - 1
        for i in range(nb):
            self.encode_bit(ctxs[min(i, last)], 1)
        self.encode_bit(ctxs[min(nb, last)], 0)
        self.encode_bits(w - (1 << nb), nb)

    def encode_sint(self, ctxs, value: int):
        """Signed integer; ``ctxs`` needs at least 3 models (zero, sign, magnitude...)."""
        self.encode_bit(ctxs[0], value != 0)
        if value:
            self.encode_bit(ctxs[1], value < 0)
            self.encode_uint(ctxs[2:], abs(value) - 1)

    def flush(self) -> bytes:
        if not self.closed:
            for _ in range(5):
                self._shift_low()
            self.closed = True
        return bytes(self.out)


class ArithmeticDecoder:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0
        self.range = _MASK32
        self.code = 0
        for _ in range(5):
            self.code = (self.code << 8) | self._next_byte()
        self.code &= _MASK32

    def _next_byte(self) -> int:
        if self.pos < len(self.data):
            b = self.data[self.pos]
        else:
            b = 0
        self.pos += 1
        return b

    def decode_bit(self, ctx: ContextModel) -> int:
        c0, c1 = ctx.c0, ctx.c1
        p0 = (c0 << PROB_BITS) // (c0 + c1)
        p0 = 1 if p0 < 1 else (PROB_ONE - 1 if p0 >= PROB_ONE else p0)
        bound = (self.range >> PROB_BITS) * p0
        if self.code < bound:
            self.range = bound
            bit = 0
            c0 += 1
        else:
            self.code -= bound
            self.range -= bound
            bit = 1
            c1 += 1
        if c0 + c1 > COUNT_LIMIT:
            c0 = (c0 + 1) >> 1
            c1 = (c1 + 1) >> 1
        ctx.c0, ctx.c1 = c0, c1
        while self.range < _TOP:
            self.range <<= 8
            self.code = ((self.code << 8) | self._next_byte()) & _MASK32
        return bit

    def decode_bypass(self) -> int:
        self.range >>= 1
        if self.code >= self.range:
            self.code -= self.range
            bit = 1
        else:
            bit = 0
        while self.range < _TOP:
            self.range <<= 8
            self.code = ((self.code << 8) | self._next_byte()) & _MASK32
        return bit

    def decode_bits(self, n: int) -> int:
        v = 0
        for _ in range(n):
            v = (v << 1) | self.decode_bypass()
        return v

    def decode_uint(self, ctxs) -> int:
        last = len(ctxs) - 1
        nb = 0
        while self.decode_bit(ctxs[min(nb, last)]):
            nb += 1
            if nb > 64:
                raise ValueError("corrupt stream: unbounded prefix")
        return (1 << nb) + self.decode_bits(nb) - 1

    def decode_sint(self, ctxs) -> int:
        if not self.decode_bit(ctxs[0]):
            return 0
        neg = self.decode_bit(ctxs[1])
        mag = self.decode_uint(ctxs[2:]) + 1
        return -mag if neg else mag


# -- plain bit I/O -----------------------------------------------------------

class BitWriter:
    def __init__(self):
        self._buf = bytearray()
        self._acc = 0
        self._n = 0

    def write_bit(self, bit: int):
        self._acc = (self._acc << 1) | (1 if bit else 0)
        self._n += 1
        if self._n == 8:
            self._buf.append(self._acc)
            self._acc = 0
            self._n = 0

    def write_bits(self, value: int, n: int):
        for i in range(n - 1, -1, -1):
            self.write_bit((value >> i) & 1)

    def write_exp_golomb(self, value: int, k: int = 0):
        for b in exp_golomb_bits(value, k):
            self.write_bit(b)

    @property
    def bit_length(self) -> int:
        return 8 * len(self._buf) + self._n

    def getvalue(self) -> bytes:
        """Bytes written so far, last byte zero-padded."""
        if self._n:
            return bytes(self._buf) + bytes([self._acc << (8 - self._n)])
        return bytes(self._buf)


class BitReader:
    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0

    def read_bit(self) -> int:
        byte, off = divmod(self._pos, 8)
        if byte >= len(self._data):
            raise EOFError("read past end of bit stream")
        self._pos += 1
        return (self._data[byte] >> (7 - off)) & 1

    def read_bits(self, n: int) -> int:
        v = 0
        for _ in range(n):
            v = (v << 1) | self.read_bit()
        return v

    def read_exp_golomb(self, k: int = 0) -> int:
        return exp_golomb_decode(self.read_bit, k)


def exp_golomb_bits(value: int, k: int = 0) -> list:
    """Order-``k`` Exp-Golomb codeword as a list of bits."""
    if value < 0:
        raise ValueError("Exp-Golomb codes need value >= 0")
    w = value + (1 << k)
    nbits = w.bit_length()
    prefix = nbits - k - 1
    return [0] * prefix + [(w >> i) & 1 for i in range(nbits - 1, -1, -1)]


def exp_golomb_decode(read_bit, k: int = 0) -> int:
    zeros = 0
    while read_bit() == 0:
        zeros += 1
    w = 1
    for _ in range(zeros + k):
        w = (w << 1) | read_bit()
    return w - (1 << k)
