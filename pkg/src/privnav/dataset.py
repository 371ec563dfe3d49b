"""Episode records: balanced detour/no-detour worlds with BFS action labels.

Records are JSON lines with explicit field names; images are never stored and
are re-rendered from the world fields.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .world import (
    MOVED,
    REACHED_GOAL,
    START,
    Obstacle,
    WorldState,
    bfs_shortest,
    classify_detour,
    generate_world,
    step,
)

RECORD_VERSION = 1
SPLITS = {"train": 0, "test": 1}
_ATTEMPT_BITS = 8
_INDEX_BITS = 28


@dataclass(frozen=True)
class EpisodeRecord:
    env_seed: int
    layout_id: int
    start: tuple[int, int]
    facing: str
    goal: tuple[int, int]
    obstacles: tuple[Obstacle, ...]
    actions: tuple[int, ...]
    detour_required: bool
    split: str = "train"
    index: int = 0

    def world(self) -> WorldState:
        return WorldState(self.layout_id, tuple(self.start), self.facing, tuple(self.goal),
                          tuple(self.obstacles), self.env_seed)

    def to_json(self) -> str:
        return json.dumps({
            "version": RECORD_VERSION,
            "split": self.split,
            "index": self.index,
            "env_seed": self.env_seed,
            "layout_id": self.layout_id,
            "start": list(self.start),
            "facing": self.facing,
            "goal": list(self.goal),
            "obstacles": [{"cell": list(o.cell), "shape": o.shape, "color": o.color} for o in self.obstacles],
            "actions": list(self.actions),
            "detour_required": self.detour_required,
        }, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "EpisodeRecord":
        d = json.loads(line)
        if d.get("version") != RECORD_VERSION:
            raise ValueError(f"unsupported record version {d.get('version')!r}")
        return cls(
            env_seed=int(d["env_seed"]),
            layout_id=int(d["layout_id"]),
            start=tuple(d["start"]),
            facing=d["facing"],
            goal=tuple(d["goal"]),
            obstacles=tuple(Obstacle(tuple(o["cell"]), o["shape"], int(o["color"])) for o in d["obstacles"]),
            actions=tuple(int(a) for a in d["actions"]),
            detour_required=bool(d["detour_required"]),
            split=d["split"],
            index=int(d["index"]),
        )


def env_seed_for(seed: int, split: str, index: int, attempt: int) -> int:
    """Seed ranges are disjoint between splits by construction."""
    if index >= 1 << _INDEX_BITS or attempt >= 1 << _ATTEMPT_BITS:
        raise ValueError("index or attempt out of range")
    return (int(seed) << 40) | (SPLITS[split] << 36) | (index << _ATTEMPT_BITS) | attempt


def record_for(world: WorldState, split: str, index: int) -> EpisodeRecord:
    actions = bfs_shortest(world.layout, world.agent, world.goal, world.obstacles)
    return EpisodeRecord(world.seed, world.layout_id, world.agent, world.facing, world.goal, world.obstacles,
                         tuple(actions), classify_detour(world), split, index)


def balanced_world(seed: int, split: str, index: int, random_start: bool = True) -> WorldState:
    """Rejection-sample the world for ``index`` until its detour flag is index % 2 == 0."""
    want = index % 2 == 0
    for attempt in range(1 << _ATTEMPT_BITS):
        w = generate_world(env_seed_for(seed, split, index, attempt), random_start)
        if classify_detour(w) == want:
            return w
    raise RuntimeError(f"no world with detour={want} for {split}[{index}]")


def gen_split(n: int, seed: int, split: str, random_start: bool = True) -> list[EpisodeRecord]:
    return [record_for(balanced_world(seed, split, i, random_start), split, i) for i in range(n)]


def gen_dataset(n_train: int = 15000, n_test: int = 2250, seed: int = 0,
                random_start: bool = True) -> tuple[list[EpisodeRecord], list[EpisodeRecord]]:
    return gen_split(n_train, seed, "train", random_start), gen_split(n_test, seed, "test", random_start)


def write_records(path: Path, records: Iterable[EpisodeRecord]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


def read_records(path: Path) -> list[EpisodeRecord]:
    with open(path, encoding="utf-8") as fh:
        return [EpisodeRecord.from_json(ln) for ln in fh if ln.strip()]


def replay(record: EpisodeRecord) -> tuple[list[WorldState], str]:
    """States visited while following the recorded actions (teacher forcing) and the final outcome."""
    w = record.world()
    states = []
    outcome = MOVED
    for a in record.actions:
        states.append(w)
        w, outcome = step(w, a)
        if outcome != MOVED:
            break
    return states, outcome


def detour_fraction(records: list[EpisodeRecord]) -> float:
    return float(np.mean([r.detour_required for r in records])) if records else 0.0


def _check(record: EpisodeRecord):
    assert tuple(record.start) == START
    states, outcome = replay(record)
    assert outcome == REACHED_GOAL and len(states) == len(record.actions)
