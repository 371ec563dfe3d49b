import json

import numpy as np
import pytest

from privnav.dataset import (EpisodeRecord, detour_fraction, env_seed_for, gen_dataset, gen_split, read_records,
                             record_for, replay, write_records)
from privnav.world import REACHED_GOAL, START, classify_detour, generate_world


@pytest.fixture(scope="module")
def full_train():
    return gen_split(15_000, 0, "train")


def test_balance_at_full_size(full_train):
    assert 0.49 <= detour_fraction(full_train) <= 0.51
    assert len(full_train) == 15_000


def test_every_label_sequence_replays(full_train):
    for r in full_train:
        states, outcome = replay(r)
        assert outcome == REACHED_GOAL and len(states) == len(r.actions)
        assert r.start == START and r.actions[-1] == 0


def test_splits_are_disjoint():
    train, test = gen_dataset(400, 200, seed=5)
    assert not {r.env_seed for r in train} & {r.env_seed for r in test}
    assert {r.split for r in train} == {"train"} and {r.split for r in test} == {"test"}
    # seed ranges are disjoint by construction, not by luck
    assert env_seed_for(5, "train", 0, 0) != env_seed_for(5, "test", 0, 0)
    with pytest.raises(ValueError):
        env_seed_for(0, "train", 1 << 28, 0)


def test_records_match_regenerated_worlds():
    for r in gen_split(50, 2, "test"):
        w = generate_world(r.env_seed)
        assert r.world() == w
        assert r.detour_required == classify_detour(w)
        assert record_for(w, r.split, r.index) == r


def test_jsonl_roundtrip_and_bytes(tmp_path):
    recs = gen_split(40, 1, "train")
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_records(a, recs)
    write_records(b, gen_split(40, 1, "train"))
    assert a.read_bytes() == b.read_bytes()
    assert read_records(a) == recs
    first = json.loads(a.read_text().splitlines()[0])
    assert {"env_seed", "layout_id", "start", "goal", "obstacles", "actions", "detour_required"} <= set(first)


def test_record_version_checked():
    line = gen_split(1, 0, "train")[0].to_json().replace('"version":1', '"version":9')
    with pytest.raises(ValueError):
        EpisodeRecord.from_json(line)


def test_alternating_strata():
    recs = gen_split(20, 3, "test")
    assert [r.detour_required for r in recs] == [i % 2 == 0 for i in range(20)]


def test_deterministic_start_regime():
    recs = gen_split(30, 4, "test", random_start=False)
    assert {r.facing for r in recs} == {"E"}
    assert np.isclose(detour_fraction(recs), 0.5)
