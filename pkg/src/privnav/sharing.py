"""Additive (mod 2^64) and XOR secret sharing, with a bit-exact wire format.

All P shares are needed to reconstruct; any P-1 of them are uniformly
distributed independent of the secret.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import reduce

import numpy as np

from .errors import ConfigError, ProtocolError
from .ring import RING_DTYPE, FixedConfig, FixedVec, as_ring, ring_add, ring_sub
from .rng import RingRNG

MAX_PARTIES = 16


@dataclass(frozen=True)
class PartyConfig:
    n_parties: int = 2
    rng_seed: int | None = 0

    def __post_init__(self):
        check_parties(self.n_parties)


def check_parties(P: int) -> int:
    if not isinstance(P, (int, np.integer)) or P < 2:
        raise ConfigError(f"need at least 2 parties, got {P!r}")
    if P > MAX_PARTIES:
        raise ConfigError(f"at most {MAX_PARTIES} parties are supported, got {P}")
    return int(P)


@dataclass
class ArithShare:
    party_id: int
    payload: np.ndarray
    session_id: str = ""
    n_parties: int = 2
    frac_bits: int = 16

    @property
    def shape(self):
        return self.payload.shape


@dataclass
class BinShare:
    party_id: int
    bits: np.ndarray
    width: int = 64
    session_id: str = ""
    n_parties: int = 2

    @property
    def shape(self):
        return self.bits.shape


def _split_additive(secret: np.ndarray, P: int, rng: RingRNG) -> list[np.ndarray]:
    others = [rng.ring(secret.shape) for _ in range(P - 1)]
    last = secret
    for o in others:
        last = ring_sub(last, o)
    return others + [last]


def _width_mask(width: int) -> np.uint64:
    return np.uint64((1 << width) - 1)


def share_arith(secret, P: int, rng: RingRNG, session_id: str = "") -> list[ArithShare]:
    """Split ``secret`` (a FixedVec or ring array) into P additive shares.

    The first P-1 shares are uniform; the last closes the sum.
    """
    P = check_parties(P)
    if isinstance(secret, FixedVec):
        elems, frac = secret.elems, secret.cfg.frac_bits
    else:
        elems, frac = as_ring(secret), 16
    parts = _split_additive(elems, P, rng)
    return [ArithShare(p, parts[p], session_id, P, frac) for p in range(P)]


def _check_complete(shares, kind: str):
    if not shares:
        raise ProtocolError(f"no {kind} shares given")
    P = shares[0].n_parties
    ids = sorted(s.party_id for s in shares)
    if ids != list(range(P)):
        raise ProtocolError(f"{kind} reconstruction needs parties 0..{P - 1}, got {ids}")
    if len({s.session_id for s in shares}) != 1:
        raise ProtocolError(f"{kind} shares come from different sessions")
    if len({s.shape for s in shares}) != 1:
        raise ProtocolError(f"{kind} shares disagree on shape")


def reconstruct_arith(shares: list[ArithShare]) -> FixedVec:
    _check_complete(shares, "arithmetic")
    if len({s.frac_bits for s in shares}) != 1:
        raise ProtocolError("arithmetic shares disagree on frac_bits")
    total = reduce(ring_add, (s.payload for s in shares))
    return FixedVec(total, FixedConfig(shares[0].frac_bits))


def share_bin(secret, P: int, rng: RingRNG, width: int = 64, session_id: str = "") -> list[BinShare]:
    P = check_parties(P)
    bits = secret.elems if isinstance(secret, FixedVec) else as_ring(secret)
    mask = _width_mask(width)
    others = [rng.ring(bits.shape) & mask for _ in range(P - 1)]
    last = reduce(np.bitwise_xor, others, bits & mask)
    parts = others + [last]
    return [BinShare(p, parts[p], width, session_id, P) for p in range(P)]


def reconstruct_bin(shares: list[BinShare]) -> np.ndarray:
    _check_complete(shares, "binary")
    if len({s.width for s in shares}) != 1:
        raise ProtocolError("binary shares disagree on width")
    return reduce(np.bitwise_xor, (s.bits for s in shares))


# -- wire format ------------------------------------------------------------
#
# header (little-endian):
#   magic "PNSH" | u16 version | u8 kind (0 arith, 1 bin) | u8 frac_bits or width
#   u16 party_id | u16 n_parties | u16 len(session_id) | u8 ndim | session_id utf-8
#   ndim x u64 dims
# payload: prod(dims) x u64 little-endian words

SHARE_MAGIC = b"PNSH"
SHARE_VERSION = 1
_HEAD = struct.Struct("<4sHBBHHHB")
KIND_ARITH = 0
KIND_BIN = 1


def pack_words(kind: int, aux: int, party_id: int, n_parties: int, session_id: str, words: np.ndarray,
               magic: bytes = SHARE_MAGIC) -> bytes:
    sid = session_id.encode()
    head = _HEAD.pack(magic, SHARE_VERSION, kind, aux, party_id, n_parties, len(sid), words.ndim)
    dims = struct.pack(f"<{words.ndim}Q", *words.shape)
    return head + sid + dims + np.ascontiguousarray(words, dtype="<u8").tobytes()


def unpack_words(buf: bytes, offset: int = 0, magic: bytes = SHARE_MAGIC):
    """Parse one record; returns (kind, aux, party_id, n_parties, session_id, words, next_offset)."""
    if len(buf) - offset < _HEAD.size:
        raise ProtocolError("truncated share header")
    mg, ver, kind, aux, pid, P, slen, ndim = _HEAD.unpack_from(buf, offset)
    if mg != magic:
        raise ProtocolError(f"bad magic {mg!r}")
    if ver != SHARE_VERSION:
        raise ProtocolError(f"unsupported share format version {ver}")
    pos = offset + _HEAD.size
    if len(buf) - pos < slen + 8 * ndim:
        raise ProtocolError("truncated share header")
    sid = buf[pos:pos + slen].decode()
    pos += slen
    dims = struct.unpack_from(f"<{ndim}Q", buf, pos)
    pos += 8 * ndim
    n = int(np.prod(dims, dtype=np.int64))
    if len(buf) - pos < 8 * n:
        raise ProtocolError("truncated share payload")
    words = np.frombuffer(buf, dtype="<u8", count=n, offset=pos).astype(RING_DTYPE).reshape(dims)
    return kind, aux, pid, P, sid, words, pos + 8 * n


def dump_share(share: ArithShare | BinShare) -> bytes:
    if isinstance(share, ArithShare):
        return pack_words(KIND_ARITH, share.frac_bits, share.party_id, share.n_parties, share.session_id,
                          share.payload)
    return pack_words(KIND_BIN, share.width, share.party_id, share.n_parties, share.session_id, share.bits)


def load_share(buf: bytes) -> ArithShare | BinShare:
    kind, aux, pid, P, sid, words, end = unpack_words(buf)
    if end != len(buf):
        raise ProtocolError("trailing bytes after share record")
    if kind == KIND_ARITH:
        return ArithShare(pid, words, sid, P, aux)
    if kind == KIND_BIN:
        return BinShare(pid, words, aux, sid, P)
    raise ProtocolError(f"unknown share kind {kind}")
