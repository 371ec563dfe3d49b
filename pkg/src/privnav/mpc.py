"""Secure computation among P semi-honest parties over additive shares.

Every shared value is a tuple holding one array per party; party ``p`` only
ever touches index ``p`` of it.  Interaction happens exclusively through
:class:`~privnav.transport.Transport` openings, one round each.  Correlated
randomness comes from a trusted dealer that runs at the start of every session,
before any input of that session is shared.
"""
from __future__ import annotations

from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from .dealer import ADDER_BITS, BeaverTriple, BinTriple, Budget, Dealer, Pools
from .errors import ProtocolError
from .ring import (
    DEFAULT_FIXED,
    RING_DTYPE,
    TRUNC_BOUND_BITS,
    FixedConfig,
    as_ring,
    encode_fixed,
    ring_add,
    ring_matmul,
    ring_mul,
    ring_neg,
    ring_sub,
)
from .rng import RingRNG
from .sharing import ArithShare, BinShare, check_parties
from .transport import Transport

_ONE = np.uint64(1)
_ZERO = np.uint64(0)


class AShared:
    """Additively shared ring tensor; ``shares[p]`` lives at party p."""

    __slots__ = ("shares",)

    def __init__(self, shares):
        self.shares = tuple(shares)

    @property
    def shape(self):
        return self.shares[0].shape

    @property
    def size(self) -> int:
        return self.shares[0].size

    def __getitem__(self, idx) -> "AShared":
        return AShared(s[idx] for s in self.shares)

    def reshape(self, *shape) -> "AShared":
        return AShared(s.reshape(*shape) for s in self.shares)

    def to_shares(self, session_id: str = "", frac_bits: int = 16) -> list[ArithShare]:
        P = len(self.shares)
        return [ArithShare(p, s, session_id, P, frac_bits) for p, s in enumerate(self.shares)]


class BShared:
    """XOR-shared bit patterns of ``width`` bits per element."""

    __slots__ = ("shares", "width")

    def __init__(self, shares, width: int = 64):
        self.shares = tuple(shares)
        self.width = width

    @property
    def shape(self):
        return self.shares[0].shape

    @property
    def size(self) -> int:
        return self.shares[0].size

    def to_shares(self, session_id: str = "") -> list[BinShare]:
        P = len(self.shares)
        return [BinShare(p, s, self.width, session_id, P) for p, s in enumerate(self.shares)]


@dataclass
class Party:
    id: int
    rng: RingRNG


def stack(values: list[AShared], axis: int = 0) -> AShared:
    P = len(values[0].shares)
    return AShared(np.stack([v.shares[p] for v in values], axis=axis) for p in range(P))


def concat(values: list[AShared], axis: int = -1) -> AShared:
    P = len(values[0].shares)
    return AShared(np.concatenate([v.shares[p] for v in values], axis=axis) for p in range(P))


class Engine:
    """Runs secure operations for P parties.

    ``threaded=True`` executes each party's local step on its own worker thread;
    outputs and transcripts are identical to the default sequential schedule.
    """

    def __init__(self, n_parties: int, cfg: FixedConfig = DEFAULT_FIXED, seed: int | None = 0,
                 threaded: bool = False, record: bool = False):
        self.P = check_parties(n_parties)
        self.cfg = cfg
        self.parties = [Party(p, RingRNG(seed, f"party{p}")) for p in range(self.P)]
        self.dealer = Dealer(self.P, RingRNG(seed, "dealer"), cfg)
        self.transport = Transport(self.P, record=record)
        self._executor = ThreadPoolExecutor(self.P) if threaded else None
        self.pools: Pools | None = None
        self.session = 0
        self._ops: list[str] = []
        self.stats: dict[str, list[int]] = defaultdict(lambda: [0, 0, 0, 0])  # calls, rounds, msgs, bytes

    # -- lifecycle ----------------------------------------------------------

    def close(self):
        if self._executor is not None:
            self._executor.shutdown()
            self._executor = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def begin(self, budget: Budget):
        """Deal the randomness for one session.  Inputs can be shared only afterwards."""
        if self.pools is not None:
            raise ProtocolError("a session is already open; dealing must precede input sharing")
        self.pools = self.dealer.deal(budget)
        self.session += 1

    def end(self):
        if self.pools is None:
            raise ProtocolError("no open session")
        pools, self.pools = self.pools, None
        used = pools.consumed()
        if used != pools.budget:
            raise ProtocolError(f"session {self.session} consumed {used.as_dict()} "
                                f"but {pools.budget.as_dict()} was dealt")

    @contextmanager
    def session_scope(self, budget: Budget):
        self.begin(budget)
        try:
            yield self
        except BaseException:
            self.pools = None
            raise
        self.end()

    @property
    def session_id(self) -> str:
        return f"session-{self.session}"

    def _require_session(self, what: str) -> Pools:
        if self.pools is None:
            raise ProtocolError(f"{what} requires an open session (deal randomness first)")
        return self.pools

    # -- plumbing -----------------------------------------------------------

    @property
    def phase(self) -> str:
        return "/".join(self._ops)

    @contextmanager
    def _op(self, name: str):
        self._ops.append(name)
        saved = self.transport.op
        self.transport.op = self.phase
        r0, m0, b0 = self.transport.totals()
        try:
            yield
        finally:
            r1, m1, b1 = self.transport.totals()
            st = self.stats[name]
            st[0] += 1
            st[1] += r1 - r0
            st[2] += m1 - m0
            st[3] += b1 - b0
            self._ops.pop()
            self.transport.op = saved

    def op_stats(self, name: str) -> dict:
        calls, rounds, msgs, nbytes = self.stats[name]
        return {"calls": calls, "rounds": rounds, "messages": msgs, "bytes": nbytes}

    def reset_stats(self):
        self.stats.clear()

    def _map(self, fn) -> list:
        if self._executor is None:
            return [fn(p) for p in range(self.P)]
        return list(self._executor.map(fn, range(self.P)))

    def _local(self, fn, *values) -> list:
        return self._map(lambda p: fn(p, *(v.shares[p] for v in values)))

    def _open(self, vals: list[np.ndarray], tag: str, combine) -> np.ndarray:
        """Every party sends its piece to every other party and combines what it receives."""
        P, tr = self.P, self.transport
        for p in range(P):
            for q in range(P):
                if q != p:
                    tr.send(p, q, tag, vals[p])

        def gather(p):
            acc = vals[p]
            for q in range(P):
                if q != p:
                    acc = combine(acc, tr.recv(p, q, tag))
            return acc

        outs = self._map(gather)
        tr.close_round()
        for o in outs[1:]:
            if not np.array_equal(o, outs[0]):
                raise ProtocolError(f"parties disagree on opened value {tag!r}")
        return outs[0]

    def _open_arith(self, vals, tag):
        return self._open(vals, tag, ring_add)

    def _open_bits(self, vals, tag):
        return self._open(vals, tag, np.bitwise_xor)

    @staticmethod
    def _same_shape(*values):
        shapes = {v.shape for v in values}
        if len(shapes) != 1:
            raise ProtocolError(f"shape mismatch: {sorted(shapes)}")

    # -- input / output -----------------------------------------------------

    def share(self, secret, owner: int = 0) -> AShared:
        """``owner`` splits a ring tensor and sends one share to each other party."""
        self._require_session("sharing an input")
        if not 0 <= owner < self.P:
            raise ProtocolError(f"no party {owner}")
        with self._op("share"):
            secret = as_ring(np.asarray(secret))
            rng = self.parties[owner].rng
            parts = [rng.ring(secret.shape) for _ in range(self.P - 1)]
            own = secret
            for s in parts:
                own = ring_sub(own, s)
            others = [q for q in range(self.P) if q != owner]
            for q, s in zip(others, parts):
                self.transport.send(owner, q, "input", s)
            shares = [None] * self.P
            shares[owner] = own
            for q in others:
                shares[q] = self.transport.recv(q, owner, "input")
            self.transport.close_round()
        return AShared(shares)

    def share_real(self, x, owner: int = 0) -> AShared:
        return self.share(encode_fixed(x, self.cfg), owner)

    def from_shares(self, shares: list[ArithShare]) -> AShared:
        ordered = sorted(shares, key=lambda s: s.party_id)
        if [s.party_id for s in ordered] != list(range(self.P)):
            raise ProtocolError("need exactly one share per party")
        return AShared(s.payload for s in ordered)

    def reveal(self, x: AShared) -> np.ndarray:
        with self._op("reveal"):
            return self._open_arith(list(x.shares), "reveal")

    def reveal_real(self, x: AShared) -> np.ndarray:
        from .ring import decode_fixed

        return decode_fixed(self.reveal(x), self.cfg)

    def reveal_bits(self, x: BShared) -> np.ndarray:
        with self._op("reveal"):
            return self._open_bits(list(x.shares), "reveal")

    # -- linear ops (local) -------------------------------------------------

    def add(self, x: AShared, y: AShared) -> AShared:
        self._same_shape(x, y)
        with self._op("add"):
            return AShared(self._local(lambda p, a, b: ring_add(a, b), x, y))

    def sub(self, x: AShared, y: AShared) -> AShared:
        self._same_shape(x, y)
        with self._op("sub"):
            return AShared(self._local(lambda p, a, b: ring_sub(a, b), x, y))

    def neg(self, x: AShared) -> AShared:
        return AShared(self._local(lambda p, a: ring_neg(a), x))

    def add_public(self, x: AShared, c) -> AShared:
        c = as_ring(np.asarray(c))
        with self._op("add_public"):
            return AShared(self._local(lambda p, a: ring_add(a, c) if p == 0 else a + _ZERO, x))

    def sub_from_public(self, c, x: AShared) -> AShared:
        """c - x for public c."""
        c = as_ring(np.asarray(c))
        return AShared(self._local(lambda p, a: ring_sub(c, a) if p == 0 else ring_neg(a), x))

    def mul_public(self, x: AShared, c) -> AShared:
        """Multiply by a public ring value (no rescaling)."""
        c = as_ring(np.asarray(c))
        with self._op("mul_public"):
            return AShared(self._local(lambda p, a: ring_mul(a, c), x))

    def mul_public_fixed(self, x: AShared, c) -> AShared:
        """Multiply by a public real and rescale."""
        return self.truncate(self.mul_public(x, encode_fixed(c, self.cfg)))

    # -- multiplication -----------------------------------------------------

    def mul(self, x: AShared, y: AShared, triple: BeaverTriple | None = None) -> AShared:
        """Beaver multiplication mod 2^64 (no rescaling): one opening of (x-a, y-b)."""
        self._same_shape(x, y)
        with self._op("mul"):
            n, shape = x.size, x.shape
            if triple is None:
                triple = self._require_session("mul").take_beaver(n, self.phase)
            if triple.matmul or triple.a[0].shape != (n,):
                raise ProtocolError(f"triple of shape {triple.a[0].shape} cannot multiply {n} elements")
            triple.consume("beaver triple")
            a, b, c = triple.a, triple.b, triple.c
            masked = self._map(lambda p: np.concatenate([ring_sub(x.shares[p].reshape(-1), a[p]),
                                                         ring_sub(y.shares[p].reshape(-1), b[p])]))
            opened = self._open_arith(masked, "beaver")
            eps, sig = opened[:n], opened[n:]

            def finish(p):
                z = ring_add(ring_add(c[p], ring_mul(eps, b[p])), ring_mul(a[p], sig))
                if p == 0:
                    z = ring_add(z, ring_mul(eps, sig))
                return z.reshape(shape)

            return AShared(self._map(finish))

    def truncate(self, x: AShared) -> AShared:
        """Divide by 2^frac_bits using a dealt (r, r >> f) pair; result within +1 ulp of floor.

        Requires |signed(x)| < 2^TRUNC_BOUND_BITS.
        """
        with self._op("trunc"):
            n, shape, f = x.size, x.shape, self.cfg.frac_bits
            pair = self._require_session("truncate").take_trunc(n, self.phase)
            pair.consume("truncation pair")
            offset = np.uint64(1 << TRUNC_BOUND_BITS)
            masked = self._map(lambda p: ring_add(x.shares[p].reshape(-1),
                                                  ring_add(pair.r[p], offset) if p == 0 else pair.r[p]))
            opened = self._open_arith(masked, "trunc")
            top = ring_sub(opened >> np.uint64(f), np.uint64(1 << (TRUNC_BOUND_BITS - f)))
            return AShared(self._map(
                lambda p: (ring_sub(top, pair.r_hi[p]) if p == 0 else ring_neg(pair.r_hi[p])).reshape(shape)))

    def mul_fixed(self, x: AShared, y: AShared) -> AShared:
        return self.truncate(self.mul(x, y))

    def matmul_public(self, x: AShared, w: np.ndarray, bias: np.ndarray | None = None) -> AShared:
        """x (m,k) shared times public encoded w (k,n), plus public encoded bias, rescaled.

        The product is a local linear combination; only the rescale interacts.
        """
        w = as_ring(w)
        if x.shape[-1] != w.shape[0]:
            raise ProtocolError(f"shape mismatch: {x.shape} @ {w.shape}")
        with self._op("matmul"):
            shifted = None if bias is None else as_ring(bias) << np.uint64(self.cfg.frac_bits)

            def local(p, a):
                z = ring_matmul(a, w)
                if p == 0 and shifted is not None:
                    z = ring_add(z, shifted)
                return z

            return self.truncate(AShared(self._local(local, x)))

    def matmul(self, x: AShared, w: AShared, triple: BeaverTriple | None = None,
               rescale: bool = True) -> AShared:
        """Product of two shared matrices with one matrix triple: open X-A and W-B."""
        if len(x.shape) != 2 or len(w.shape) != 2 or x.shape[1] != w.shape[0]:
            raise ProtocolError(f"shape mismatch: {x.shape} @ {w.shape}")
        with self._op("matmul"):
            if triple is None:
                triple = self._require_session("matmul").take_matmul(x.shape, w.shape, self.phase)
            if not triple.matmul or triple.a[0].shape != x.shape or triple.b[0].shape != w.shape:
                raise ProtocolError("matrix triple does not match operand shapes")
            triple.consume("matrix triple")
            a, b, c = triple.a, triple.b, triple.c
            nx = x.size
            masked = self._map(lambda p: np.concatenate([ring_sub(x.shares[p], a[p]).reshape(-1),
                                                         ring_sub(w.shares[p], b[p]).reshape(-1)]))
            opened = self._open_arith(masked, "beaver-matmul")
            e, f = opened[:nx].reshape(x.shape), opened[nx:].reshape(w.shape)

            def finish(p):
                z = ring_add(ring_add(c[p], ring_matmul(e, b[p])), ring_matmul(a[p], f))
                if p == 0:
                    z = ring_add(z, ring_matmul(e, f))
                return z

            z = AShared(self._map(finish))
            return self.truncate(z) if rescale else z

    # -- binary ops ---------------------------------------------------------

    def share_bits(self, secret, owner: int = 0, width: int = 64) -> BShared:
        self._require_session("sharing an input")
        with self._op("share"):
            secret = as_ring(np.asarray(secret))
            mask = np.uint64((1 << width) - 1) if width < 64 else np.uint64(0xFFFFFFFFFFFFFFFF)
            rng = self.parties[owner].rng
            parts = [rng.ring(secret.shape) & mask for _ in range(self.P - 1)]
            own = secret & mask
            for s in parts:
                own = own ^ s
            others = [q for q in range(self.P) if q != owner]
            for q, s in zip(others, parts):
                self.transport.send(owner, q, "input", s)
            shares = [None] * self.P
            shares[owner] = own
            for q in others:
                shares[q] = self.transport.recv(q, owner, "input")
            self.transport.close_round()
        return BShared(shares, width)

    def xor(self, x: BShared, y: BShared) -> BShared:
        self._same_shape(x, y)
        with self._op("xor"):
            return BShared(self._local(lambda p, a, b: a ^ b, x, y), max(x.width, y.width))

    def and_(self, x: BShared, y: BShared, triple: BinTriple | None = None) -> BShared:
        """Bitwise AND with one XOR triple: open x^a and y^b."""
        self._same_shape(x, y)
        width = max(x.width, y.width)
        with self._op("and"):
            z = self._and_words(list(x.shares), list(y.shares), triple, width)
            return BShared(z, width)

    def _and_words(self, xs, ys, triple, width):
        shape = xs[0].shape
        n = xs[0].size
        if triple is None:
            triple = self._require_session("and").take_bin(n * width, self.phase)
        if triple.bits != n * width:
            raise ProtocolError(f"binary triple of {triple.bits} bits cannot AND {n} x {width}-bit elements")
        triple.consume("binary triple")
        a, b, c = triple.elements(width)
        wire = np.uint8 if width <= 8 else np.uint64
        masked = self._map(lambda p: np.concatenate([xs[p].reshape(-1) ^ a[p],
                                                     ys[p].reshape(-1) ^ b[p]]).astype(wire))
        opened = self._open_bits(masked, "beaver-and").astype(np.uint64)
        eps, sig = opened[:n], opened[n:]

        def finish(p):
            z = c[p] ^ (eps & b[p]) ^ (a[p] & sig)
            if p == 0:
                z = z ^ (eps & sig)
            return z.reshape(shape)

        return self._map(finish)

    def add_bits(self, x: BShared, y: BShared) -> BShared:
        """64-bit ripple-carry addition of two XOR-shared words (carry out of bit 63 dropped).

        carry[i+1] = carry[i] ^ ((x[i] ^ carry[i]) & (y[i] ^ carry[i])): one AND round per bit.
        """
        self._same_shape(x, y)
        with self._op("adder"):
            xs, ys = list(x.shares), list(y.shares)
            carry = [np.zeros(x.shape, dtype=RING_DTYPE) for _ in range(self.P)]
            carry_word = [np.zeros(x.shape, dtype=RING_DTYPE) for _ in range(self.P)]
            for i in range(ADDER_BITS):
                sh = np.uint64(i)
                u = self._map(lambda p: ((xs[p] >> sh) & _ONE) ^ carry[p])
                v = self._map(lambda p: ((ys[p] >> sh) & _ONE) ^ carry[p])
                t = self._and_words(u, v, None, 1)
                carry = self._map(lambda p: carry[p] ^ t[p])
                up = np.uint64(i + 1)
                carry_word = self._map(lambda p: carry_word[p] | (carry[p] << up))
            return BShared(self._map(lambda p: xs[p] ^ ys[p] ^ carry_word[p]), 64)

    def a2b(self, x: AShared) -> BShared:
        """Arithmetic to XOR sharing.

        Party p's additive share is itself a valid XOR sharing in which every
        other party holds zero; the P such sharings are summed with P-1 adders.
        """
        with self._op("a2b"):
            def own(q):
                return BShared(self._map(lambda p: x.shares[p] if p == q else np.zeros(x.shape, RING_DTYPE)))

            acc = own(0)
            for q in range(1, self.P):
                acc = self.add_bits(acc, own(q))
            return acc

    def ltz(self, x: AShared) -> AShared:
        """Additive sharing of [signed(x) < 0] via the top bit and a daBit."""
        with self._op("ltz"):
            bits = self.a2b(x)
            n, shape = x.size, x.shape
            dabit = self._require_session("ltz").take_dabit(n, self.phase)
            dabit.consume("daBit")
            top = np.uint64(63)
            masked = self._map(lambda p: (((bits.shares[p].reshape(-1) >> top) & _ONE) ^ dabit.r_bin[p])
                               .astype(np.uint8))
            m = self._open_bits(masked, "dabit").astype(np.uint64)
            flip = ring_sub(np.uint64(1), m << _ONE)  # 1 - 2m

            def finish(p):
                z = ring_mul(dabit.r_arith[p], flip)
                if p == 0:
                    z = ring_add(z, m)
                return z.reshape(shape)

            return AShared(self._map(finish))

    def relu(self, x: AShared, return_mask: bool = False):
        """x * [x >= 0]; the multiply by a 0/1 sharing needs no rescale."""
        with self._op("relu"):
            keep = self.sub_from_public(np.uint64(1), self.ltz(x))
            y = self.mul(x, keep)
        return (y, keep) if return_mask else y

    def select(self, bit: AShared, u: AShared, v: AShared) -> AShared:
        """v + bit * (u - v) for a shared 0/1 ``bit``."""
        return self.add(v, self.mul(bit, self.sub(u, v)))

    def argmax_reveal(self, logits: AShared) -> np.ndarray:
        """Index of the largest entry along the last axis; only the index is opened.

        A sequential tournament keeps a shared running (max, index); a later
        entry replaces the running max only when strictly larger, so ties go to
        the lower index.
        """
        with self._op("argmax"):
            single = len(logits.shape) == 1
            L = logits.reshape(1, -1) if single else logits
            rows, width = L.shape
            best = L[:, 0]
            idx = AShared(np.zeros(rows, RING_DTYPE) for _ in range(self.P))
            for j in range(1, width):
                cand = L[:, j]
                take = self.ltz(self.sub(best, cand))
                diffs = stack([self.sub(cand, best), self.sub_from_public(np.uint64(j), idx)])
                moved = self.mul(stack([take, take]), diffs)
                best = self.add(best, moved[0])
                idx = self.add(idx, moved[1])
            out = self.reveal(idx).astype(np.int64)
        return int(out[0]) if single else out
