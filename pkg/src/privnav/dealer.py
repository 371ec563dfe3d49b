"""Trusted-dealer correlated randomness.

The dealer runs before any input is shared.  It hands every party its slice of
Beaver triples (elementwise and matrix-shaped), XOR triples, daBits and
truncation pairs.  Each object is single use.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigError, ProtocolError
from .layers import Conv, Flatten, LayerSpec, Linear, ReLU
from .ring import TRUNC_MASK_BITS, FixedConfig, ring_matmul, ring_mul, ring_sub
from .rng import RingRNG
from .sharing import check_parties, pack_words, unpack_words

ADDER_BITS = 63  # carries computed per 64-bit ripple-carry pass (the top carry is dropped)

_uid = itertools.count()


def _additive(secret: np.ndarray, P: int, rng: RingRNG) -> tuple[np.ndarray, ...]:
    parts = [rng.ring(secret.shape) for _ in range(P - 1)]
    last = secret
    for s in parts:
        last = ring_sub(last, s)
    return tuple(parts) + (last,)


def _xor_split(secret: np.ndarray, P: int, rng: RingRNG, mask=None) -> tuple[np.ndarray, ...]:
    parts = [rng.ring(secret.shape) for _ in range(P - 1)]
    if mask is not None:
        parts = [s & np.uint64(mask) for s in parts]
    last = secret.copy()
    for s in parts:
        last ^= s
    return tuple(parts) + (last,)


class _SingleUse:
    def __post_init__(self):
        self.uid = next(_uid)
        self.used = False

    def consume(self, what: str):
        if self.used:
            raise ProtocolError(f"{what} #{self.uid} was already consumed")
        self.used = True


@dataclass(eq=False)
class BeaverTriple(_SingleUse):
    """Per-party shares of a, b and c = a*b (elementwise) or c = a@b (matmul)."""

    a: tuple[np.ndarray, ...]
    b: tuple[np.ndarray, ...]
    c: tuple[np.ndarray, ...]
    matmul: bool = False

    def __post_init__(self):
        _SingleUse.__post_init__(self)


def unpack_bits(words: np.ndarray, n: int) -> np.ndarray:
    """First ``n`` bits of LSB-first packed words, as a uint8 0/1 vector."""
    return np.unpackbits(np.ascontiguousarray(words, dtype="<u8").view(np.uint8), bitorder="little")[:n]


def pack_bits(bits: np.ndarray) -> np.ndarray:
    """Inverse of ``unpack_bits``; the last word is zero-padded."""
    bits = np.asarray(bits, dtype=np.uint8)
    pad = (-len(bits)) % 64
    if pad:
        bits = np.concatenate([bits, np.zeros(pad, np.uint8)])
    return np.packbits(bits, bitorder="little").view("<u8").astype(np.uint64)


@dataclass(eq=False)
class BinTriple(_SingleUse):
    """``bits`` independent single-bit AND triples, packed LSB-first into uint64 words per party.

    A w-bit AND over n elements consumes n*w of them; element i uses bits [i*w, (i+1)*w).
    """

    a: tuple[np.ndarray, ...]
    b: tuple[np.ndarray, ...]
    c: tuple[np.ndarray, ...]
    bits: int = 0

    def __post_init__(self):
        _SingleUse.__post_init__(self)

    def elements(self, width: int) -> tuple[tuple[np.ndarray, ...], ...]:
        """(a, b, c) per party as ``bits // width`` words of ``width`` bits each."""
        if width < 1 or width > 64 or self.bits % width:
            raise ProtocolError(f"cannot split {self.bits} triple bits into {width}-bit elements")
        n = self.bits // width
        if width == 64:
            return tuple(tuple(w[:n] for w in part) for part in (self.a, self.b, self.c))
        weights = np.uint64(1) << np.arange(width, dtype=np.uint64)

        def conv(w):
            bits = unpack_bits(w, self.bits).astype(np.uint64)
            return bits if width == 1 else (bits.reshape(n, width) * weights).sum(axis=1, dtype=np.uint64)

        return tuple(tuple(conv(w) for w in part) for part in (self.a, self.b, self.c))


@dataclass(eq=False)
class DaBit(_SingleUse):
    """A random bit shared both by XOR (``r_bin``) and additively (``r_arith``)."""

    r_bin: tuple[np.ndarray, ...]
    r_arith: tuple[np.ndarray, ...]

    def __post_init__(self):
        _SingleUse.__post_init__(self)


@dataclass(eq=False)
class TruncPair(_SingleUse):
    """Additive shares of a mask r < 2^TRUNC_MASK_BITS and of r >> frac_bits."""

    r: tuple[np.ndarray, ...]
    r_hi: tuple[np.ndarray, ...]

    def __post_init__(self):
        _SingleUse.__post_init__(self)


@dataclass
class Budget:
    """Counts of correlated randomness, in scalar elements except for matmul shapes."""

    beaver: int = 0
    matmul: tuple = ()  # sequence of ((m, k), (k, n))
    bin_and: int = 0
    dabit: int = 0
    trunc: int = 0

    def __add__(self, other: "Budget") -> "Budget":
        return Budget(self.beaver + other.beaver, tuple(self.matmul) + tuple(other.matmul),
                      self.bin_and + other.bin_and, self.dabit + other.dabit, self.trunc + other.trunc)

    def scaled(self, k: int) -> "Budget":
        return Budget(self.beaver * k, tuple(self.matmul) * k, self.bin_and * k, self.dabit * k, self.trunc * k)

    def as_dict(self) -> dict:
        return {"beaver": self.beaver, "matmul": [list(map(list, s)) for s in self.matmul],
                "bin_and": self.bin_and, "dabit": self.dabit, "trunc": self.trunc}

    def is_empty(self) -> bool:
        return not (self.beaver or self.matmul or self.bin_and or self.dabit or self.trunc)


class Dealer:
    def __init__(self, n_parties: int, rng: RingRNG, cfg: FixedConfig = FixedConfig()):
        self.P = check_parties(n_parties)
        self.rng = rng
        self.cfg = cfg

    def beaver(self, n: int) -> BeaverTriple:
        a, b = self.rng.ring((n,)), self.rng.ring((n,))
        c = ring_mul(a, b)
        return BeaverTriple(*(_additive(v, self.P, self.rng) for v in (a, b, c)))

    def matmul_triple(self, left: tuple[int, int], right: tuple[int, int]) -> BeaverTriple:
        if left[1] != right[0]:
            raise ConfigError(f"matmul triple shapes do not conform: {left} x {right}")
        a, b = self.rng.ring(tuple(left)), self.rng.ring(tuple(right))
        c = ring_matmul(a, b)
        return BeaverTriple(*(_additive(v, self.P, self.rng) for v in (a, b, c)), matmul=True)

    def bin_triple(self, n: int) -> BinTriple:
        """``n`` single-bit AND triples (packed)."""
        words = -(-n // 64)
        a, b = self.rng.ring((words,)), self.rng.ring((words,))
        if n % 64:
            tail = np.uint64((1 << (n % 64)) - 1)
            a[-1] &= tail
            b[-1] &= tail
        return BinTriple(*(_xor_split(v, self.P, self.rng) for v in (a, b, a & b)), bits=n)

    def dabit(self, n: int) -> DaBit:
        r = self.rng.bits((n,))
        return DaBit(_xor_split(r, self.P, self.rng, mask=1), _additive(r, self.P, self.rng))

    def trunc_pair(self, n: int) -> TruncPair:
        r = self.rng.below_pow2(TRUNC_MASK_BITS, (n,))
        r_hi = r >> np.uint64(self.cfg.frac_bits)
        return TruncPair(_additive(r, self.P, self.rng), _additive(r_hi, self.P, self.rng))

    def deal(self, budget: Budget) -> "Pools":
        return Pools(
            beaver=self.beaver(budget.beaver),
            matmul=[self.matmul_triple(tuple(l), tuple(r)) for l, r in budget.matmul],
            bin_and=self.bin_triple(budget.bin_and),
            dabit=self.dabit(budget.dabit),
            trunc=self.trunc_pair(budget.trunc),
            budget=budget,
        )


def deal_triples(kind: str, shape, count: int, P: int, rng: RingRNG,
                 cfg: FixedConfig = FixedConfig()) -> Iterator:
    """Yield ``count`` independent objects of ``kind``.

    kind is one of "beaver", "matmul", "bin", "dabit", "trunc"; ``shape`` is the
    element count for flat kinds or ((m, k), (k, n)) for "matmul".
    """
    if count < 0:
        raise ConfigError("count must be non-negative")
    dealer = Dealer(P, rng, cfg)
    make = {
        "beaver": lambda: dealer.beaver(int(np.prod(shape))),
        "matmul": lambda: dealer.matmul_triple(*shape),
        "bin": lambda: dealer.bin_triple(int(np.prod(shape))),
        "dabit": lambda: dealer.dabit(int(np.prod(shape))),
        "trunc": lambda: dealer.trunc_pair(int(np.prod(shape))),
    }
    if kind not in make:
        raise ConfigError(f"unknown randomness kind {kind!r}")
    for _ in range(count):
        yield make[kind]()


def _slice(parts: tuple[np.ndarray, ...], lo: int, hi: int) -> tuple[np.ndarray, ...]:
    return tuple(p[lo:hi] for p in parts)


@dataclass
class Pools:
    """Dealt randomness for one session, consumed front to back.

    Cursors advance in lockstep for all parties: every ``take_*`` hands each
    party its slice of the same objects.
    """

    beaver: BeaverTriple
    matmul: list
    bin_and: BinTriple
    dabit: DaBit
    trunc: TruncPair
    budget: Budget = field(default_factory=Budget)
    cursors: dict = field(default_factory=lambda: {"beaver": 0, "matmul": 0, "bin_and": 0, "dabit": 0, "trunc": 0})

    def _advance(self, kind: str, n: int, total: int, phase: str) -> tuple[int, int]:
        lo = self.cursors[kind]
        if lo + n > total:
            raise ProtocolError(f"{kind} pool exhausted during {phase or 'unnamed phase'}: "
                                f"need {n}, {total - lo} left")
        self.cursors[kind] = lo + n
        return lo, lo + n

    def take_beaver(self, n: int, phase: str = "") -> BeaverTriple:
        lo, hi = self._advance("beaver", n, self.budget.beaver, phase)
        return BeaverTriple(*(_slice(p, lo, hi) for p in (self.beaver.a, self.beaver.b, self.beaver.c)))

    def take_matmul(self, left, right, phase: str = "") -> BeaverTriple:
        i, _ = self._advance("matmul", 1, len(self.matmul), phase)
        t = self.matmul[i]
        if t.a[0].shape != tuple(left) or t.b[0].shape != tuple(right):
            raise ProtocolError(f"matmul triple #{i} has shape {t.a[0].shape}x{t.b[0].shape}, "
                                f"{phase} needs {tuple(left)}x{tuple(right)}")
        return t

    def take_bin(self, n: int, phase: str = "") -> BinTriple:
        """``n`` single-bit AND triples."""
        lo, hi = self._advance("bin_and", n, self.budget.bin_and, phase)
        parts = (self.bin_and.a, self.bin_and.b, self.bin_and.c)
        if lo % 64 == 0 and hi % 64 == 0:
            return BinTriple(*(_slice(p, lo // 64, hi // 64) for p in parts), bits=n)
        w0, w1 = lo // 64, -(-hi // 64)
        off = lo - 64 * w0

        def cut(w):
            return pack_bits(unpack_bits(w[w0:w1], 64 * (w1 - w0))[off:off + n])

        return BinTriple(*(tuple(cut(w) for w in p) for p in parts), bits=n)

    def take_dabit(self, n: int, phase: str = "") -> DaBit:
        lo, hi = self._advance("dabit", n, self.budget.dabit, phase)
        return DaBit(_slice(self.dabit.r_bin, lo, hi), _slice(self.dabit.r_arith, lo, hi))

    def take_trunc(self, n: int, phase: str = "") -> TruncPair:
        lo, hi = self._advance("trunc", n, self.budget.trunc, phase)
        return TruncPair(_slice(self.trunc.r, lo, hi), _slice(self.trunc.r_hi, lo, hi))

    def consumed(self) -> Budget:
        c = self.cursors
        return Budget(c["beaver"], tuple(self.budget.matmul[:c["matmul"]]), c["bin_and"], c["dabit"], c["trunc"])


# -- budget ----------------------------------------------------------------

def relu_budget(n: int, P: int) -> Budget:
    return ltz_budget(n, P) + Budget(beaver=n)


def ltz_budget(n: int, P: int) -> Budget:
    return Budget(bin_and=(P - 1) * n * ADDER_BITS, dabit=n)


def argmax_budget(rows: int, width: int, P: int) -> Budget:
    steps = max(width - 1, 0)
    return (ltz_budget(rows, P) + Budget(beaver=2 * rows)).scaled(steps)


def budget_estimate(circuit: Sequence[LayerSpec], P: int, batch: int = 1, shared_weights: bool = False,
                    argmax: bool = False) -> Budget:
    """Exact randomness consumed by one secure forward pass over ``circuit``.

    Linear layers with public weights need only truncation pairs; with shared
    weights they also take one matrix triple.  ReLU costs one sign test (a
    ripple-carry A2B plus a daBit) and one elementwise triple per element.
    """
    check_parties(P)
    total = Budget()
    width = None
    for layer in circuit:
        if isinstance(layer, Linear):
            if width is not None and width != layer.in_features:
                raise ConfigError(f"layer expects {layer.in_features} inputs, got {width}")
            width = layer.out_features
            if shared_weights:
                total = total + Budget(matmul=(((batch, layer.in_features), (layer.in_features, width)),))
            total = total + Budget(trunc=batch * width)
        elif isinstance(layer, ReLU):
            if width is None:
                raise ConfigError("ReLU before any Linear layer has unknown width")
            total = total + relu_budget(batch * width, P)
        elif isinstance(layer, Flatten):
            continue
        elif isinstance(layer, Conv):
            raise ConfigError("convolutions are evaluated locally and have no secure budget")
        else:
            raise ConfigError(f"unsupported layer {layer!r}")
    if argmax and width:
        total = total + argmax_budget(batch, width, P)
    return total


# -- pool dump/load ---------------------------------------------------------

POOL_MAGIC = b"PNDL"
_POOL_PARTS = (
    ("beaver.a", lambda p: p.beaver.a), ("beaver.b", lambda p: p.beaver.b), ("beaver.c", lambda p: p.beaver.c),
    ("bin.a", lambda p: p.bin_and.a), ("bin.b", lambda p: p.bin_and.b), ("bin.c", lambda p: p.bin_and.c),
    ("dabit.bin", lambda p: p.dabit.r_bin), ("dabit.arith", lambda p: p.dabit.r_arith),
    ("trunc.r", lambda p: p.trunc.r), ("trunc.hi", lambda p: p.trunc.r_hi),
)


def dump_pools(pools: Pools, frac_bits: int = 16) -> bytes:
    """Serialize dealt pools as a sequence of share records (one per part and party)."""
    P = len(pools.beaver.a)
    out = []
    for name, get in _POOL_PARTS:
        for p, words in enumerate(get(pools)):
            out.append(pack_words(0, frac_bits, p, P, name, words, magic=POOL_MAGIC))
    for i, t in enumerate(pools.matmul):
        for tag, parts in (("a", t.a), ("b", t.b), ("c", t.c)):
            for p, words in enumerate(parts):
                out.append(pack_words(0, frac_bits, p, P, f"matmul.{i}.{tag}", words, magic=POOL_MAGIC))
    for p in range(P):
        out.append(pack_words(0, frac_bits, p, P, "bin.bits", np.array([pools.bin_and.bits], np.uint64),
                              magic=POOL_MAGIC))
    return b"".join(out)


def load_pools(buf: bytes) -> Pools:
    parts: dict[str, dict[int, np.ndarray]] = {}
    pos, P = 0, None
    while pos < len(buf):
        _, _, pid, n_parties, name, words, pos = unpack_words(buf, pos, magic=POOL_MAGIC)
        P = n_parties
        parts.setdefault(name, {})[pid] = words

    def get(name):
        d = parts.get(name)
        if d is None or sorted(d) != list(range(P)):
            raise ProtocolError(f"pool dump is missing {name}")
        return tuple(d[p] for p in range(P))

    matmul = []
    i = 0
    while f"matmul.{i}.a" in parts:
        matmul.append(BeaverTriple(get(f"matmul.{i}.a"), get(f"matmul.{i}.b"), get(f"matmul.{i}.c"), matmul=True))
        i += 1
    beaver = BeaverTriple(get("beaver.a"), get("beaver.b"), get("beaver.c"))
    bin_and = BinTriple(get("bin.a"), get("bin.b"), get("bin.c"), bits=int(get("bin.bits")[0][0]))
    dabit = DaBit(get("dabit.bin"), get("dabit.arith"))
    trunc = TruncPair(get("trunc.r"), get("trunc.hi"))
    budget = Budget(len(beaver.a[0]), tuple((t.a[0].shape, t.b[0].shape) for t in matmul),
                    bin_and.bits, len(dabit.r_bin[0]), len(trunc.r[0]))
    return Pools(beaver, matmul, bin_and, dabit, trunc, budget)
