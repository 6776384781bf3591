import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pointcodec.entropy import (
    ArithmeticDecoder,
    ArithmeticEncoder,
    BitReader,
    BitWriter,
    CoderClosedError,
    contexts,
    exp_golomb_bits,
    exp_golomb_decode,
)


def code_bits(bits, ctx_of=lambda i: 0, n_ctx=1):
    enc = ArithmeticEncoder()
    ctx = contexts(n_ctx)
    for i, b in enumerate(bits):
        enc.encode_bit(ctx[ctx_of(i)], b)
    data = enc.flush()
    dec = ArithmeticDecoder(data)
    ctx = contexts(n_ctx)
    out = [dec.decode_bit(ctx[ctx_of(i)]) for i in range(len(bits))]
    return data, out


def test_random_bits_round_trip():
    bits = np.random.default_rng(0).integers(0, 2, 10_000).tolist()
    _, out = code_bits(bits)
    assert out == bits


def test_all_zero_stream_is_small():
    data, out = code_bits([0] * 1024)
    assert out == [0] * 1024
    assert len(data) < 64


def test_alternating_bits_two_contexts():
    bits = [i % 2 for i in range(1024)]
    data, out = code_bits(bits, lambda i: i % 2, 2)
    assert out == bits
    assert len(data) < 32


@pytest.mark.parametrize("p", [0.1, 0.3, 0.5])
def test_bernoulli_within_five_percent_of_entropy(p):
    n = 100_000
    bits = (np.random.default_rng(int(p * 10)).random(n) < p).astype(int).tolist()
    data, out = code_bits(bits)
    assert out == bits
    h = -(p * math.log2(p) + (1 - p) * math.log2(1 - p))
    assert abs(8 * len(data) - n * h) <= 0.05 * n * h


def test_exp_golomb_canonical():
    assert exp_golomb_bits(0, 0) == [1]
    assert exp_golomb_bits(3, 0) == [0, 0, 1, 0, 0]


@pytest.mark.parametrize("k", [0, 1, 2])
def test_exp_golomb_exhaustive(k):
    w = BitWriter()
    for v in range(4096):
        w.write_exp_golomb(v, k)
    r = BitReader(w.getvalue())
    assert [r.read_exp_golomb(k) for _ in range(4096)] == list(range(4096))
    for v in (0, 1, 7, 4095):
        bits = iter(exp_golomb_bits(v, k))
        assert exp_golomb_decode(lambda: next(bits), k) == v


def test_bit_reader_eof():
    r = BitReader(b"\x80")
    assert r.read_bits(8) == 0x80
    with pytest.raises(EOFError):
        r.read_bit()


def test_closed_encoder_rejects_writes():
    enc = ArithmeticEncoder()
    enc.flush()
    with pytest.raises(CoderClosedError):
        enc.encode_bypass(1)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["bit", "bypass", "uint", "sint", "bits"]),
                          st.integers(0, 7), st.integers(-5000, 5000))))
def test_mixed_symbol_streams(ops):
    enc = ArithmeticEncoder()
    ctx = contexts(8)
    uctx = contexts(24)
    expect = []
    for kind, c, v in ops:
        if kind == "bit":
            enc.encode_bit(ctx[c], v & 1)
            expect.append(v & 1)
        elif kind == "bypass":
            enc.encode_bypass(v & 1)
            expect.append(v & 1)
        elif kind == "uint":
            enc.encode_uint(uctx, abs(v))
            expect.append(abs(v))
        elif kind == "sint":
            enc.encode_sint(uctx, v)
            expect.append(v)
        else:
            enc.encode_bits(abs(v), 13)
            expect.append(abs(v))
    dec = ArithmeticDecoder(enc.flush())
    ctx = contexts(8)
    uctx = contexts(24)
    got = []
    for kind, c, v in ops:
        if kind == "bit":
            got.append(dec.decode_bit(ctx[c]))
        elif kind == "bypass":
            got.append(dec.decode_bypass())
        elif kind == "uint":
            got.append(dec.decode_uint(uctx))
        elif kind == "sint":
            got.append(dec.decode_sint(uctx))
        else:
            got.append(dec.decode_bits(13))
    assert got == expect
