"""Obstacle World: a 5x5 grid of roads with hidden obstacles on the border lanes.

Cell codes in the agent's map: 0 wall, 1 road, 2 agent, 3 goal (an agent
standing on its goal shows only the goal code).  Actions: 0 stop, 1 N, 2 S,
3 E, 4 W.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources

import numpy as np

GRID = 5
WALL, ROAD, AGENT, GOAL = 0, 1, 2, 3
STOP, NORTH, SOUTH, EAST, WEST = range(5)
ACTION_NAMES = ("stop", "N", "S", "E", "W")
MOVES = {NORTH: (-1, 0), SOUTH: (1, 0), EAST: (0, 1), WEST: (0, -1)}
FACING_ACTION = {"N": NORTH, "S": SOUTH, "E": EAST, "W": WEST}
ACTION_FACING = {v: k for k, v in FACING_ACTION.items()}
START = (0, 0)
SHAPES = ("box", "ball", "cone")
N_COLORS = 6
CONE_PROB = 0.1
MAX_OBSTACLES = 3
MAX_STEPS = 20
LAYOUT_FORMAT_VERSION = 1
_MAX_TRIES = 64

Cell = tuple[int, int]

MOVED, CRASH_WALL, CRASH_OBSTACLE, REACHED_GOAL, STOPPED = (
    "moved", "crash_wall", "crash_obstacle", "reached_goal", "stopped")


def parse_layouts(text: str) -> list[np.ndarray]:
    lines = [ln.strip() for ln in text.splitlines()]
    header = next((ln for ln in lines if ln.startswith("#") and "format version" in ln), None)
    if header is not None and int(header.rsplit(" ", 1)[-1]) != LAYOUT_FORMAT_VERSION:
        raise ValueError(f"unsupported layout file: {header}")
    grids, rows = [], None
    for ln in lines:
        if not ln or ln.startswith("#"):
            continue
        if ln.startswith("layout"):
            if rows is not None:
                grids.append(rows)
            rows = []
            continue
        rows.append([int(ch) for ch in ln])
    if rows is not None:
        grids.append(rows)
    out = [np.array(g, dtype=np.int8) for g in grids]
    for i, g in enumerate(out):
        if g.shape != (GRID, GRID):
            raise ValueError(f"layout {i} is {g.shape}, expected {GRID}x{GRID}")
    return out


@lru_cache(maxsize=1)
def layouts() -> tuple[np.ndarray, ...]:
    text = resources.files("privnav").joinpath("data/layouts.txt").read_text()
    grids = parse_layouts(text)
    for g in grids:
        g.setflags(write=False)
    return tuple(grids)


def border_cells() -> list[Cell]:
    return [(r, c) for r in range(GRID) for c in range(GRID) if r in (0, GRID - 1) or c in (0, GRID - 1)]


@dataclass(frozen=True)
class Obstacle:
    cell: Cell
    shape: str = "box"
    color: int = 0


@dataclass(frozen=True)
class WorldState:
    layout_id: int
    agent: Cell
    facing: str
    goal: Cell
    obstacles: tuple[Obstacle, ...] = ()
    seed: int | None = None
    step_count: int = 0

    @property
    def layout(self) -> np.ndarray:
        return layouts()[self.layout_id]

    @property
    def obstacle_cells(self) -> frozenset:
        return frozenset(o.cell for o in self.obstacles)

    def map_grid(self) -> np.ndarray:
        m = self.layout.astype(np.int64).copy()
        m[self.goal] = GOAL
        if self.agent != self.goal:
            m[self.agent] = AGENT
        return m


def in_grid(cell: Cell) -> bool:
    return 0 <= cell[0] < GRID and 0 <= cell[1] < GRID


def is_road(grid: np.ndarray, cell: Cell) -> bool:
    return in_grid(cell) and grid[cell] != WALL


def neighbor(cell: Cell, action: int) -> Cell:
    dr, dc = MOVES[action]
    return cell[0] + dr, cell[1] + dc


def distance_field(grid: np.ndarray, goal: Cell, blocked=frozenset()) -> np.ndarray:
    """BFS hop distance to ``goal`` over road cells avoiding ``blocked``; -1 if unreachable."""
    dist = np.full((GRID, GRID), -1, dtype=np.int64)
    if not is_road(grid, goal) or goal in blocked:
        return dist
    dist[goal] = 0
    q = deque([goal])
    while q:
        cur = q.popleft()
        for a in (NORTH, SOUTH, EAST, WEST):
            nb = neighbor(cur, a)
            if is_road(grid, nb) and nb not in blocked and dist[nb] < 0:
                dist[nb] = dist[cur] + 1
                q.append(nb)
    return dist


def bfs_shortest(grid: np.ndarray, start: Cell, goal: Cell, obstacles=None) -> list[int] | None:
    """A shortest 4-connected path as actions ending in stop, or None if unreachable.

    Distances come from a BFS rooted at the goal; from each cell the first action
    in N, S, E, W order that decreases the distance is taken, so the action at a
    cell depends only on (cell, goal, obstacles) and never on the history.
    """
    blocked = frozenset(_cells(obstacles))
    dist = distance_field(grid, goal, blocked)
    if start in blocked or dist[start] < 0:
        return None
    path, cur = [], start
    while cur != goal:
        for a in (NORTH, SOUTH, EAST, WEST):
            nb = neighbor(cur, a)
            if in_grid(nb) and dist[nb] == dist[cur] - 1 and dist[nb] >= 0:
                path.append(a)
                cur = nb
                break
    return path + [STOP]


def _cells(obstacles) -> list[Cell]:
    if obstacles is None:
        return []
    return [o.cell if isinstance(o, Obstacle) else tuple(o) for o in obstacles]


def best_action(world: WorldState) -> int:
    """The oracle's next action with full knowledge of the obstacles."""
    path = bfs_shortest(world.layout, world.agent, world.goal, world.obstacles)
    return STOP if path is None else path[0]


def optimal_length(world: WorldState, from_cell: Cell | None = None) -> int | None:
    path = bfs_shortest(world.layout, from_cell or world.agent, world.goal, world.obstacles)
    return None if path is None else len(path) - 1


def classify_detour(world: WorldState) -> bool:
    """True iff the obstacles make the shortest route from the start strictly longer."""
    with_obs = bfs_shortest(world.layout, START, world.goal, world.obstacles)
    free = bfs_shortest(world.layout, START, world.goal)
    if with_obs is None or free is None:
        raise ValueError("world is not solvable")
    return len(with_obs) > len(free)


def step(world: WorldState, action: int) -> tuple[WorldState, str]:
    """World update for one action.  Every outcome except ``moved`` ends the episode."""
    if action not in (STOP, NORTH, SOUTH, EAST, WEST):
        raise ValueError(f"action must be in 0..4, got {action!r}")
    counted = replace(world, step_count=world.step_count + 1)
    if action == STOP:
        return counted, REACHED_GOAL if world.agent == world.goal else STOPPED
    nb = neighbor(world.agent, action)
    if not is_road(world.layout, nb):
        return counted, CRASH_WALL
    if nb in world.obstacle_cells:
        return counted, CRASH_OBSTACLE
    return replace(counted, agent=nb, facing=ACTION_FACING[action]), MOVED


def generate_world(seed: int, random_start: bool = True) -> WorldState:
    """Deterministic world for ``seed``: layout, 1-3 border obstacles, reachable goal.

    The agent starts at the top-left corner facing east or south (east only when
    ``random_start`` is False).  Draws that leave no reachable goal are retried;
    after a bounded number of retries the generator is reseeded from the seed.
    """
    grids = layouts()
    ss = np.random.SeedSequence(int(seed))
    while True:
        rng = np.random.default_rng(ss)
        for _ in range(_MAX_TRIES):
            layout_id = int(rng.integers(len(grids)))
            grid = grids[layout_id]
            facing = "E" if rng.integers(2) == 0 else "S"
            if not random_start:
                facing = "E"
            n_obs = int(rng.integers(1, MAX_OBSTACLES + 1))
            cands = [c for c in border_cells() if c != START and grid[c] != WALL]
            picks = rng.choice(len(cands), size=n_obs, replace=False)
            obstacles = []
            for i in sorted(int(k) for k in picks):
                shape = "cone" if rng.random() < CONE_PROB else SHAPES[int(rng.integers(2))]
                obstacles.append(Obstacle(cands[i], shape, int(rng.integers(N_COLORS))))
            blocked = frozenset(o.cell for o in obstacles)
            dist = distance_field(grid, START, blocked)
            goals = [(r, c) for r in range(GRID) for c in range(GRID) if dist[r, c] > 0]
            if not goals:
                continue
            goal = goals[int(rng.integers(len(goals)))]
            return WorldState(layout_id, START, facing, goal, tuple(obstacles), int(seed))
        ss = ss.spawn(1)[0]


def solvable(world: WorldState) -> bool:
    return bfs_shortest(world.layout, world.agent, world.goal, world.obstacles) is not None
