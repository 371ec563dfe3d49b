from pathlib import Path

import numpy as np
import pytest

from privnav.render import (AGENT_CAMERA, CORNER_CAMERAS, N_CAMERAS, lane_cells, obstacle_box, render, render_all,
                            render_u8)
from privnav.world import (CRASH_OBSTACLE, CRASH_WALL, EAST, GRID, MOVED, NORTH, REACHED_GOAL, SOUTH, START, STOP,
                           STOPPED, WEST, Obstacle, WorldState, bfs_shortest, border_cells, classify_detour,
                           generate_world, is_road, layouts, neighbor, optimal_length, parse_layouts, solvable, step)

GOLDEN = Path(__file__).parent / "golden" / "empty_lanes.npz"


def exhaustive_shortest(grid, start, goal, blocked):
    """Every simple path by DFS; the shortest one, ties broken by action order."""
    best = None

    def rec(cur, visited, path):
        nonlocal best
        if cur == goal:
            key = (len(path), tuple(path))
            if best is None or key < best:
                best = key
            return
        for a in (NORTH, SOUTH, EAST, WEST):
            nb = neighbor(cur, a)
            if is_road(grid, nb) and nb not in blocked and nb not in visited:
                visited.add(nb)
                path.append(a)
                rec(nb, visited, path)
                path.pop()
                visited.discard(nb)

    if start in blocked:
        return None
    rec(start, {start}, [])
    return None if best is None else list(best[1]) + [STOP]


def _road(grid):
    return [(r, c) for r in range(GRID) for c in range(GRID) if grid[r, c]]


# -- layouts ---------------------------------------------------------------------

def test_twelve_connected_layouts():
    grids = layouts()
    assert len(grids) == 12
    assert len({g.tobytes() for g in grids}) == 12
    for g in grids:
        roads = _road(g)
        reach = {START}
        frontier = [START]
        while frontier:
            cur = frontier.pop()
            for a in (NORTH, SOUTH, EAST, WEST):
                nb = neighbor(cur, a)
                if is_road(g, nb) and nb not in reach:
                    reach.add(nb)
                    frontier.append(nb)
        assert reach == set(roads)
        assert all(g[c] for c in border_cells())


def test_layout_parser_rejects_bad_grids():
    with pytest.raises(ValueError):
        parse_layouts("layout 0\n111\n111\n")
    with pytest.raises(ValueError):
        parse_layouts("# obstacle-world layouts, format version 2\nlayout 0\n" + "11111\n" * 5)


# -- BFS oracle --------------------------------------------------------------

def test_bfs_examples():
    g0, g1 = layouts()[0], layouts()[1]
    assert bfs_shortest(g0, (2, 0), (2, 0)) == [STOP]
    assert bfs_shortest(g0, (0, 0), (0, 4)) == [EAST] * 4 + [STOP]
    blocked = [(0, 2)]
    detour = bfs_shortest(g1, (0, 0), (0, 4), blocked)
    assert len(detour) - 1 == 8
    assert detour == exhaustive_shortest(g1, (0, 0), (0, 4), set(blocked))
    assert len(bfs_shortest(g0, (0, 0), (0, 4), blocked)) - 1 == 12  # the plain ring goes all the way round


def test_bfs_unreachable():
    g = layouts()[0]
    assert bfs_shortest(g, (0, 0), (2, 4), [(0, 1), (1, 0)]) is None
    assert bfs_shortest(g, (0, 0), (1, 1)) is None  # goal on a wall


@pytest.mark.parametrize("layout_id", range(12))
def test_bfs_matches_exhaustive_search(layout_id):
    grid = layouts()[layout_id]
    rng = np.random.default_rng(layout_id)
    roads = _road(grid)
    border = [c for c in border_cells() if grid[c]]
    for _ in range(1000):
        k = int(rng.integers(0, 4))
        blocked = {border[i] for i in rng.choice(len(border), size=k, replace=False)}
        start = roads[int(rng.integers(len(roads)))]
        goal = roads[int(rng.integers(len(roads)))]
        got = bfs_shortest(grid, start, goal, [Obstacle(c) for c in blocked])
        assert got == exhaustive_shortest(grid, start, goal, blocked)


def test_bfs_path_replays():
    for seed in range(300):
        w = generate_world(seed)
        path = bfs_shortest(w.layout, w.agent, w.goal, w.obstacles)
        for a in path[:-1]:
            w, out = step(w, a)
            assert out == MOVED
        assert step(w, path[-1])[1] == REACHED_GOAL


# -- detour classification -------------------------------------------------

def test_classify_detour_examples():
    free = WorldState(1, START, "E", (0, 4), (Obstacle((4, 0)),))
    blocked = WorldState(1, START, "E", (0, 4), (Obstacle((0, 2)),))
    assert classify_detour(free) is False
    assert classify_detour(blocked) is True


def test_classify_detour_matches_definition():
    for seed in range(1000):
        w = generate_world(seed + 50_000)
        with_obs = optimal_length(w, START)
        plain = len(bfs_shortest(w.layout, START, w.goal)) - 1
        assert classify_detour(w) == (with_obs > plain)


# -- dynamics -------------------------------------------------------------------

def test_step_outcomes():
    w = WorldState(0, START, "E", (0, 1), (Obstacle((1, 0)),))
    assert step(w, WEST)[1] == CRASH_WALL
    assert step(w, NORTH)[1] == CRASH_WALL
    assert step(w, SOUTH)[1] == CRASH_OBSTACLE
    assert step(w, STOP)[1] == STOPPED
    moved, out = step(w, EAST)
    assert out == MOVED and moved.agent == (0, 1) and moved.facing == "E" and moved.step_count == 1
    assert step(moved, STOP)[1] == REACHED_GOAL
    inner = WorldState(0, (1, 0), "S", (4, 4))
    assert step(inner, EAST)[1] == CRASH_WALL
    with pytest.raises(ValueError):
        step(w, 5)


def test_step_is_pure():
    w = generate_world(3)
    path = bfs_shortest(w.layout, w.agent, w.goal, w.obstacles)

    def run():
        s, traj = w, []
        for a in path:
            s, out = step(s, a)
            traj.append((s, out))
        return traj

    assert run() == run()


def test_map_grid_codes():
    w = WorldState(0, (0, 2), "E", (4, 4))
    m = w.map_grid()
    assert m[0, 2] == 2 and m[4, 4] == 3 and m[1, 1] == 0 and m[0, 0] == 1
    assert WorldState(0, (4, 4), "E", (4, 4)).map_grid()[4, 4] == 3


# -- generator ----------------------------------------------------------------

def test_generator_statistics():
    counts = np.zeros(4, int)
    cones = total = 0
    facings = set()
    for seed in range(10_000):
        w = generate_world(seed)
        assert solvable(w)
        assert w.agent == START and w.goal != START
        cells = [o.cell for o in w.obstacles]
        assert len(set(cells)) == len(cells)
        for o in w.obstacles:
            assert o.cell in border_cells() and o.cell not in (START, w.goal) and w.layout[o.cell]
        counts[len(w.obstacles)] += 1
        cones += sum(o.shape == "cone" for o in w.obstacles)
        total += len(w.obstacles)
        facings.add(w.facing)
    assert counts[0] == 0 and (counts[1:] > 2000).all()
    assert abs(cones / total - 0.10) <= 0.02
    assert facings == {"E", "S"}


def test_generator_deterministic():
    assert generate_world(77) == generate_world(77)
    assert generate_world(77, random_start=False).facing == "E"
    assert any(generate_world(s) != generate_world(s + 1) for s in range(5))


# -- rendering --------------------------------------------------------------------

def test_golden_empty_lanes():
    golden = np.load(GOLDEN)
    assert len(golden.files) == 12 * N_CAMERAS
    for layout_id in range(12):
        w = WorldState(layout_id, START, "E", (4, 4))
        for cam in range(N_CAMERAS):
            np.testing.assert_array_equal(render_u8(w, cam), golden[f"layout{layout_id}_cam{cam}"])


def test_render_shape_range_and_determinism():
    w = generate_world(11)
    img = render(w, 0)
    assert img.shape == (3, 45, 60) and img.min() >= 0 and img.max() <= 1
    np.testing.assert_array_equal(render_all(w), render_all(generate_world(11)))
    assert render_all(w).shape == (5, 3, 45, 60)
    with pytest.raises(ValueError):
        render_u8(w, 5)


def test_obstacle_locality_and_coverage():
    """Each legal obstacle cell shows up in some corner camera, and only inside its band's box."""
    for layout_id in range(12):
        base = WorldState(layout_id, START, "E", (4, 4))
        empty = [render_u8(base, c) for c in range(N_CAMERAS)]
        for cell in border_cells():
            if cell == START or not base.layout[cell]:
                continue
            for shape in ("box", "ball", "cone"):
                w = WorldState(layout_id, START, "E", (4, 4), (Obstacle(cell, shape, 2),))
                seen = 0
                for cam in range(N_CAMERAS):
                    diff = (render_u8(w, cam) != empty[cam]).any(axis=0)
                    cells, _, _ = lane_cells(w, cam)
                    if cell not in cells:
                        assert not diff.any()
                        continue
                    r0, r1, c0, c1 = obstacle_box(cells.index(cell))
                    outside = diff.copy()
                    outside[r0:r1, c0:c1] = False
                    assert diff.any() and not outside.any()
                    seen += 1
                assert seen >= 1


def test_corner_lanes_cover_border():
    lanes = set()
    for origin, (dr, dc) in CORNER_CAMERAS:
        lanes.update((origin[0] + d * dr, origin[1] + d * dc) for d in range(GRID))
    assert lanes == set(border_cells())


def test_agent_view_faces_forward():
    w = WorldState(0, START, "E", (4, 4), (Obstacle((0, 2), "box", 0),))
    east = render_u8(w, AGENT_CAMERA)
    south = render_u8(WorldState(0, START, "S", (4, 4), w.obstacles), AGENT_CAMERA)
    clear = render_u8(WorldState(0, START, "E", (4, 4)), AGENT_CAMERA)
    assert (east != clear).any()
    np.testing.assert_array_equal(south, render_u8(WorldState(0, START, "S", (4, 4)), AGENT_CAMERA))
