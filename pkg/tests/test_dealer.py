import numpy as np
import pytest

from privnav.dealer import (ADDER_BITS, BinTriple, Budget, Dealer, budget_estimate, deal_triples, dump_pools,
                            load_pools, pack_bits, relu_budget, unpack_bits)
from privnav.errors import ConfigError, ProtocolError
from privnav.layers import Conv, Linear, ReLU
from privnav.mpc import Engine
from privnav.ring import ring_add, ring_matmul, ring_mul, ring_sub
from privnav.rng import RingRNG


def _sum(parts):
    out = parts[0]
    for p in parts[1:]:
        out = ring_add(out, p)
    return out


def _xor(parts):
    out = parts[0].copy()
    for p in parts[1:]:
        out ^= p
    return out


@pytest.mark.parametrize("P", [2, 5])
def test_arith_triples_reconstruct(P):
    t = Dealer(P, RingRNG(0, "d")).beaver(10_000)
    np.testing.assert_array_equal(_sum(t.c), ring_mul(_sum(t.a), _sum(t.b)))


def test_matmul_triple_reconstructs():
    t = Dealer(3, RingRNG(0, "d")).matmul_triple((4, 6), (6, 2))
    assert t.matmul
    np.testing.assert_array_equal(_sum(t.c), ring_matmul(_sum(t.a), _sum(t.b)))
    with pytest.raises(ConfigError):
        Dealer(2, RingRNG(0, "d")).matmul_triple((4, 6), (5, 2))


@pytest.mark.parametrize("n", [1, 63, 64, 1000])
def test_bin_triples_exhaustive(n):
    t = Dealer(4, RingRNG(n, "d")).bin_triple(n)
    a, b, c = _xor(t.a), _xor(t.b), _xor(t.c)
    np.testing.assert_array_equal(c, a & b)
    abits, cbits = unpack_bits(a, n), unpack_bits(c, n)
    assert len(abits) == n and set(np.unique(cbits)) <= {0, 1}


def test_bin_triple_elements_views():
    t = Dealer(2, RingRNG(1, "d")).bin_triple(128)
    a64, _, c64 = t.elements(64)
    assert a64[0].shape == (2,)
    a1, b1, c1 = t.elements(1)
    np.testing.assert_array_equal(_xor(c1), _xor(a1) & _xor(b1))
    a8, b8, c8 = t.elements(8)
    assert a8[0].shape == (16,) and int(_xor(a8).max()) < 256
    np.testing.assert_array_equal(_xor(c8), _xor(a8) & _xor(b8))
    with pytest.raises(ProtocolError):
        t.elements(7)


def test_pack_unpack_bits_roundtrip(rng):
    bits = rng.integers(0, 2, 200).astype(np.uint8)
    np.testing.assert_array_equal(unpack_bits(pack_bits(bits), 200), bits)


def test_dabits_agree():
    d = Dealer(5, RingRNG(0, "d")).dabit(10_000)
    rb, ra = _xor(d.r_bin), _sum(d.r_arith)
    assert set(np.unique(rb).tolist()) <= {0, 1}
    np.testing.assert_array_equal(rb, ra)


def test_trunc_pairs_relation():
    t = Dealer(3, RingRNG(0, "d")).trunc_pair(5000)
    r, hi = _sum(t.r), _sum(t.r_hi)
    np.testing.assert_array_equal(hi, r >> np.uint64(16))
    assert int(r.max()) < 2 ** 63


def test_deal_triples_stream():
    got = list(deal_triples("beaver", (3,), 4, 2, RingRNG(0, "s")))
    assert len(got) == 4
    assert len({t.uid for t in got}) == 4
    with pytest.raises(ConfigError):
        list(deal_triples("nope", (3,), 1, 2, RingRNG(0, "s")))


def test_budget_examples():
    assert budget_estimate([], 2).is_empty()
    b = budget_estimate([Linear(288, 128)], 2, batch=7, shared_weights=True)
    assert b.matmul == (((7, 288), (288, 128)),) and b.trunc == 7 * 128 and b.beaver == 0
    assert budget_estimate([Linear(288, 128)], 2, batch=7).matmul == ()
    for P in (2, 5):
        r = relu_budget(10, P)
        assert (r.bin_and, r.dabit, r.beaver) == ((P - 1) * 10 * ADDER_BITS, 10, 10)
    with pytest.raises(ConfigError):
        budget_estimate([Conv(3, 6, 5, 2)], 2)
    with pytest.raises(ConfigError):
        budget_estimate([Linear(4, 3), Linear(5, 2)], 2)


@pytest.mark.parametrize("P", [2, 5])
def test_relu_budget_matches_instrumented_consumption(P):
    e = Engine(P, seed=1)
    n = 13
    with e.session_scope(relu_budget(n, P)):
        x = e.share_real(np.linspace(-3, 3, n))
        e.relu(x)
        used = e.pools.consumed()
    assert used == relu_budget(n, P)


def test_engine_rejects_over_or_under_dealt_sessions():
    e = Engine(2, seed=0)
    with pytest.raises(ProtocolError, match="consumed"):
        with e.session_scope(relu_budget(4, 2) + Budget(beaver=1)):
            e.relu(e.share_real(np.ones(4)))
    e2 = Engine(2, seed=0)
    with pytest.raises(ProtocolError, match="exhausted during relu/mul"):
        with e2.session_scope(relu_budget(4, 2) + Budget(beaver=-1)):
            e2.relu(e2.share_real(np.ones(4)))


def test_triple_reuse_is_rejected():
    e = Engine(2, seed=0)
    t = Dealer(2, RingRNG(0, "d")).beaver(3)
    with e.session_scope(Budget()):
        x, y = e.share(np.arange(3, dtype=np.uint64)), e.share(np.arange(3, dtype=np.uint64))
        e.mul(x, y, triple=t)
        with pytest.raises(ProtocolError, match="already consumed"):
            e.mul(x, y, triple=t)
    bt = Dealer(2, RingRNG(0, "d")).bin_triple(64 * 3)
    with e.session_scope(Budget()):
        bx = e.share_bits(np.arange(3, dtype=np.uint64))
        e.and_(bx, bx, triple=bt)
        with pytest.raises(ProtocolError):
            e.and_(bx, bx, triple=bt)


def test_dealing_must_precede_inputs():
    e = Engine(2, seed=0)
    with pytest.raises(ProtocolError, match="open session"):
        e.share(np.zeros(2, np.uint64))
    e.begin(Budget())
    with pytest.raises(ProtocolError, match="already open"):
        e.begin(Budget())


def test_pool_dump_load_roundtrip():
    budget = Budget(beaver=5, matmul=(((2, 3), (3, 4)),), bin_and=130, dabit=7, trunc=9)
    pools = Dealer(3, RingRNG(4, "dump")).deal(budget)
    back = load_pools(dump_pools(pools))
    assert back.budget == budget
    for name in ("beaver", "bin_and"):
        for part in ("a", "b", "c"):
            for x, y in zip(getattr(getattr(pools, name), part), getattr(getattr(back, name), part)):
                np.testing.assert_array_equal(x, y)
    np.testing.assert_array_equal(back.matmul[0].c[2], pools.matmul[0].c[2])
    np.testing.assert_array_equal(back.trunc.r_hi[1], pools.trunc.r_hi[1])
    np.testing.assert_array_equal(back.dabit.r_arith[0], pools.dabit.r_arith[0])
    with pytest.raises(ProtocolError):
        load_pools(dump_pools(pools)[:-200])


def test_take_bin_unaligned_slices_are_consistent():
    pools = Dealer(2, RingRNG(0, "u")).deal(Budget(bin_and=300))
    full = Dealer(2, RingRNG(0, "u")).deal(Budget(bin_and=300)).bin_and
    parts = [pools.take_bin(n) for n in (5, 70, 64, 161)]
    got = np.concatenate([unpack_bits(_xor(p.c), p.bits) for p in parts])
    np.testing.assert_array_equal(got, unpack_bits(_xor(full.c), 300))
    with pytest.raises(ProtocolError, match="bin_and pool exhausted"):
        pools.take_bin(1, "test")
