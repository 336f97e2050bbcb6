"""Bit-exact serialization of the four downlink encodings.

Payload layouts (fixed here; the byte order is big-endian throughout):

    A1  one indicator bit per constraint row, gamma_i = 1 iff row i is
        active, packed most-significant-bit-first into ceil(q/8) bytes.
    A2  the A1 bit block, then the lower triangle of the Gram inverse
        (row-major, diagonal included): q_A(q_A+1)/2 reals.
    A3  the stacked input sequence: mN reals.
    A4  K (m*n), b (m), T (q*n), d (q), row-major, in that order.

Reals travel as IEEE 754 binary16 (16 bits each, round-to-nearest-even);
values outside the binary16 range raise EncodingRangeError rather than
saturating, since a silently clipped gain would destabilize the loop.
``bit_length`` counts semantic payload bits only -- byte-alignment padding
of the bit block and all framing overhead are excluded.

A ``precision="double"`` mode carries the same payloads as float64 for
simulator-fidelity experiments; ``bit_length`` still reports the 16-bit
semantic count, which is the quantity the cost model compares.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .costmodel import BITS_PER_REAL
from .errors import EncodingRangeError, FramingError, RankDeficient
from ._linalg import gauss_jordan_inverse
from .problem import CondensedQp
from .region import ActiveSet, Region

__all__ = [
    "Half",
    "WireMessage",
    "gram_inverse",
    "encode_a1", "decode_a1",
    "encode_a2", "decode_a2",
    "encode_a3", "decode_a3",
    "encode_a4", "decode_a4",
    "encode", "decode",
]

HALF_MAX = 65504.0


@dataclass(frozen=True)
class Half:
    """One IEEE 754 binary16 value, stored as its 16-bit pattern."""

    bits: int

    def __post_init__(self):
        if not (0 <= self.bits <= 0xFFFF):
            raise ValueError(f"half bits out of range: {self.bits:#x}")

    @classmethod
    def from_float(cls, value: float, context: str = "value") -> "Half":
        """Round-to-nearest-even conversion; out-of-range input is an error."""
        if not np.isfinite(value):
            raise EncodingRangeError(f"{context} is not finite: {value!r}")
        try:
            packed = struct.pack(">e", value)
        except OverflowError:
            raise EncodingRangeError(
                f"{context} = {value!r} overflows binary16 (|x| <= {HALF_MAX})"
            ) from None
        bits = struct.unpack(">H", packed)[0]
        if bits & 0x7FFF == 0x7C00:  # rounded up to infinity
            raise EncodingRangeError(
                f"{context} = {value!r} rounds beyond binary16 range"
            )
        return cls(bits=bits)

    def to_float(self) -> float:
        return struct.unpack(">e", struct.pack(">H", self.bits))[0]


@dataclass(frozen=True)
class WireMessage:
    """One encoded downlink payload.

    ``bit_length`` is the semantic bit count (16 bits per real plus one bit
    per indicator), independent of the codec precision actually used.
    """

    variant: str
    payload: bytes
    bit_length: int
    precision: str = "half"


def _pack_reals(values, precision: str, context: str) -> bytes:
    vals = np.asarray(values, dtype=float).reshape(-1)
    if precision == "half":
        out = bytearray()
        for i, v in enumerate(vals):
            out += struct.pack(">H", Half.from_float(float(v), f"{context}[{i}]").bits)
        return bytes(out)
    if precision == "double":
        bad = np.flatnonzero(~np.isfinite(vals))
        if bad.size:
            raise EncodingRangeError(f"{context}[{bad[0]}] is not finite")
        return struct.pack(f">{vals.size}d", *vals)
    raise ValueError(f"unknown precision {precision!r}")


def _unpack_reals(payload: bytes, count: int, precision: str, context: str) -> np.ndarray:
    size = 2 if precision == "half" else 8
    need = count * size
    if len(payload) != need:
        raise FramingError(f"{context}: expected {need} bytes, got {len(payload)}")
    fmt = ">%d%s" % (count, "e" if precision == "half" else "d")
    return np.array(struct.unpack(fmt, payload), dtype=float)


def _pack_bits(aset: ActiveSet) -> bytes:
    out = bytearray((aset.q + 7) // 8)
    for i in aset.indices:  # 1-based, MSB-first
        out[(i - 1) // 8] |= 0x80 >> ((i - 1) % 8)
    return bytes(out)


def _unpack_bits(payload: bytes, q: int) -> ActiveSet:
    need = (q + 7) // 8
    if len(payload) < need:
        raise FramingError(f"bit block needs {need} bytes, got {len(payload)}")
    idx = [
        i + 1
        for i in range(q)
        if payload[i // 8] & (0x80 >> (i % 8))
    ]
    pad = payload[need - 1] & ((1 << (8 * need - q)) - 1) if q % 8 else 0
    if pad:
        raise FramingError("nonzero padding bits in indicator block")
    return ActiveSet(indices=tuple(idx), q=q)


def gram_inverse(qp: CondensedQp, aset: ActiveSet) -> np.ndarray:
    """Inverse of the active-row Gram matrix G_A H^{-1} G_A' (central side).

    Two Newton refinement passes sharpen the explicit inverse, and the
    result is only shipped if its residual certifies it: an inverse of a
    near-singular Gram matrix would silently corrupt the remote law, so it
    is refused (RankDeficient) and the caller must fall back.  The central
    node's work is outside the local-node cost accounting.
    """
    act = aset.zero_based
    if act.size == 0:
        return np.zeros((0, 0))
    GA = qp.G[act]
    gram = GA @ qp.Hinv @ GA.T
    inv = gauss_jordan_inverse(gram)
    eye = np.eye(len(act))
    for _ in range(2):
        inv = inv @ (2.0 * eye - gram @ inv)
    # the wire format carries the lower triangle, so what ships is the
    # symmetrized matrix; certify that object, not the raw inverse
    inv = 0.5 * (inv + inv.T)
    resid = np.max(np.abs(gram @ inv - eye))
    if resid > 1e-8:
        raise RankDeficient(
            f"gram inverse not certifiable (residual {resid:.3e}); "
            "the active rows are too close to dependent"
        )
    return inv


def encode_a1(aset: ActiveSet) -> WireMessage:
    """q indicator bits, MSB-first."""
    return WireMessage(variant="A1", payload=_pack_bits(aset), bit_length=aset.q)


def decode_a1(msg: WireMessage, q: int) -> ActiveSet:
    if msg.variant != "A1":
        raise FramingError(f"expected A1 message, got {msg.variant}")
    if len(msg.payload) != (q + 7) // 8:
        raise FramingError(f"A1 payload must be {(q + 7) // 8} bytes, got {len(msg.payload)}")
    return _unpack_bits(msg.payload, q)


def _triangle(mat: np.ndarray) -> np.ndarray:
    s = mat.shape[0]
    return np.concatenate([mat[i, : i + 1] for i in range(s)]) if s else np.zeros(0)


def _from_triangle(vals: np.ndarray, s: int) -> np.ndarray:
    M = np.zeros((s, s))
    pos = 0
    for i in range(s):
        M[i, : i + 1] = vals[pos : pos + i + 1]
        pos += i + 1
    return M + np.tril(M, -1).T


def encode_a2(aset: ActiveSet, gram_inv: np.ndarray, precision: str = "half") -> WireMessage:
    """Indicator bits plus the lower triangle of the symmetric Gram inverse."""
    qa = len(aset)
    gram_inv = np.asarray(gram_inv, dtype=float)
    if gram_inv.shape != (qa, qa):
        raise ValueError(f"gram inverse must be {qa}x{qa}, got {gram_inv.shape}")
    payload = _pack_bits(aset) + _pack_reals(_triangle(gram_inv), precision, "gram_inv")
    bits = BITS_PER_REAL * (qa * (qa + 1) // 2) + aset.q
    return WireMessage(variant="A2", payload=payload, bit_length=bits, precision=precision)


def decode_a2(msg: WireMessage, q: int, precision: str | None = None) -> tuple[ActiveSet, np.ndarray]:
    if msg.variant != "A2":
        raise FramingError(f"expected A2 message, got {msg.variant}")
    precision = precision or msg.precision
    head = (q + 7) // 8
    if len(msg.payload) < head:
        raise FramingError("A2 payload shorter than its indicator block")
    aset = _unpack_bits(msg.payload[:head], q)
    qa = len(aset)
    tri = _unpack_reals(msg.payload[head:], qa * (qa + 1) // 2, precision, "gram_inv")
    return aset, _from_triangle(tri, qa)


def encode_a3(u_star: np.ndarray, precision: str = "half") -> WireMessage:
    """The full optimal input sequence, one real per entry."""
    vals = np.asarray(u_star, dtype=float).reshape(-1)
    return WireMessage(
        variant="A3",
        payload=_pack_reals(vals, precision, "u_star"),
        bit_length=BITS_PER_REAL * vals.size,
        precision=precision,
    )


def decode_a3(msg: WireMessage, mN: int, precision: str | None = None) -> np.ndarray:
    if msg.variant != "A3":
        raise FramingError(f"expected A3 message, got {msg.variant}")
    return _unpack_reals(msg.payload, mN, precision or msg.precision, "u_star")


def encode_a4(region: Region, precision: str = "half") -> WireMessage:
    """K, b, T, d row-major in that order."""
    m, n = region.K.shape
    q = region.T.shape[0]
    payload = (
        _pack_reals(region.K, precision, "K")
        + _pack_reals(region.b, precision, "b")
        + _pack_reals(region.T, precision, "T")
        + _pack_reals(region.d, precision, "d")
    )
    bits = BITS_PER_REAL * (m * n + m + q * n + q)
    return WireMessage(variant="A4", payload=payload, bit_length=bits, precision=precision)


def decode_a4(msg: WireMessage, n: int, m: int, q: int, precision: str | None = None) -> Region:
    if msg.variant != "A4":
        raise FramingError(f"expected A4 message, got {msg.variant}")
    precision = precision or msg.precision
    size = 2 if precision == "half" else 8
    counts = [m * n, m, q * n, q]
    if len(msg.payload) != size * sum(counts):
        raise FramingError(
            f"A4 payload must be {size * sum(counts)} bytes, got {len(msg.payload)}"
        )
    parts = []
    pos = 0
    for c in counts:
        parts.append(_unpack_reals(msg.payload[pos : pos + c * size], c, precision, "A4"))
        pos += c * size
    K = parts[0].reshape(m, n)
    b = parts[1]
    T = parts[2].reshape(q, n)
    d = parts[3]
    return Region(K=K, b=b, T=T, d=d)


def encode(variant: str, *, aset=None, gram_inv=None, u_star=None, region=None,
           precision: str = "half") -> WireMessage:
    """Uniform dispatcher over the four encoders."""
    if variant == "A1":
        return encode_a1(aset)
    if variant == "A2":
        return encode_a2(aset, gram_inv, precision)
    if variant == "A3":
        return encode_a3(u_star, precision)
    if variant == "A4":
        return encode_a4(region, precision)
    raise ValueError(f"unknown variant {variant!r}")


def message_from_payload(variant: str, payload: bytes, q: int,
                         precision: str = "half") -> WireMessage:
    """Rebuild a WireMessage around a received payload.

    The semantic bit count is fully determined by the payload length: one
    bit per constraint row in the indicator block plus 16 bits per real,
    whatever width the codec actually used.
    """
    size = 2 if precision == "half" else 8
    head = (q + 7) // 8
    if variant == "A1":
        reals = 0
        bits = q
    elif variant == "A2":
        body = len(payload) - head
        if body < 0 or body % size:
            raise FramingError("A2 payload length inconsistent with real width")
        bits = BITS_PER_REAL * (body // size) + q
    else:
        if len(payload) % size:
            raise FramingError(f"{variant} payload length not a multiple of {size}")
        bits = BITS_PER_REAL * (len(payload) // size)
    return WireMessage(variant=variant, payload=payload, bit_length=bits,
                       precision=precision)


def decode(msg: WireMessage, qp_dims: tuple[int, int, int, int], precision: str | None = None):
    """Uniform dispatcher over the four decoders, returning the variant object."""
    n, m, N, q = qp_dims
    if msg.variant == "A1":
        return decode_a1(msg, q)
    if msg.variant == "A2":
        return decode_a2(msg, q, precision)
    if msg.variant == "A3":
        return decode_a3(msg, m * N, precision)
    if msg.variant == "A4":
        return decode_a4(msg, n, m, q, precision)
    raise FramingError(f"unknown variant {msg.variant!r}")
