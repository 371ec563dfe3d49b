"""Deterministic synthetic rasterizer for the corner cameras and the agent view.

Each view looks down one lane of up to five cells.  Cell ``d`` occupies its own
horizontal floor band (nearer cells are taller and wider), so obstacles never
overlap across cells and each is drawn only inside its band's bounding box.
Side regions of a band show whether the perpendicular neighbour is road
(opening) or wall; a non-road lane cell closes the view with an end wall.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from .world import GRID, WorldState, in_grid, is_road

H, W = 45, 60
CHANNELS = 3
HORIZON = 13
# Row edges of the depth bands, nearest first: band d spans [BAND_EDGES[d+1], BAND_EDGES[d]).
BAND_EDGES = (45, 33, 25, 20, 16, 13)
DEPTH = 5
N_CAMERAS = 4
AGENT_CAMERA = 4

# Corner cameras: (origin cell, facing); cell d of the lane is origin + d * facing.
CORNER_CAMERAS = (
    ((0, 0), (0, 1)),
    ((0, GRID - 1), (1, 0)),
    ((GRID - 1, GRID - 1), (0, -1)),
    ((GRID - 1, 0), (-1, 0)),
)
_FACING_VEC = {"N": (-1, 0), "S": (1, 0), "E": (0, 1), "W": (0, -1)}

SKY = (200, 210, 225)
PALETTE = (
    (220, 40, 40),
    (40, 180, 60),
    (40, 70, 220),
    (230, 210, 40),
    (200, 50, 200),
    (40, 200, 210),
)


def _shade(rgb, d, step):
    return tuple(max(0, v - step * d) for v in rgb)


def _floor_color(d):
    return _shade((150, 150, 150), d, 16)


def _wall_color(d):
    return _shade((170, 140, 110), d, 14)


def _opening_color(d):
    return _shade((80, 105, 80), d, 8)


def _end_wall_color(d):
    return _shade((120, 100, 80), d, 10)


@lru_cache(maxsize=None)
def _masks():
    rows = np.arange(H)[:, None] + 0.5
    cols = np.arange(W)[None, :] + 0.5
    half = 2.0 + (rows - HORIZON) * (28.0 / (H - HORIZON))
    floor = np.abs(cols - W / 2) < half
    out = []
    for d in range(DEPTH):
        lo, hi = BAND_EDGES[d + 1], BAND_EDGES[d]
        band = (rows >= lo) & (rows < hi) & np.ones_like(cols, dtype=bool)
        out.append({
            "floor": band & floor,
            "left": band & ~floor & (cols < W / 2),
            "right": band & ~floor & (cols > W / 2),
            "end": (rows >= HORIZON) & (rows < hi) & np.ones_like(cols, dtype=bool),
        })
    return out


def obstacle_box(d: int) -> tuple[int, int, int, int]:
    """(row0, row1, col0, col1) of the primitive drawn for an obstacle in band d."""
    lo, hi = BAND_EDGES[d + 1], BAND_EDGES[d]
    mid = (lo + hi) / 2
    half = 2.0 + (mid - HORIZON) * (28.0 / (H - HORIZON))
    w = max(3, int(round(1.2 * half)))
    c0 = W // 2 - w // 2
    return lo, hi, c0, c0 + w


@lru_cache(maxsize=None)
def _shape_mask(d: int, shape: str) -> np.ndarray:
    r0, r1, c0, c1 = obstacle_box(d)
    rr, cc = np.mgrid[r0:r1, c0:c1].astype(np.float64) + 0.5
    h, w = r1 - r0, c1 - c0
    if shape == "box":
        m = np.ones((h, w), dtype=bool)
    elif shape == "ball":
        cy, cx = r0 + h / 2, c0 + w / 2
        m = ((rr - cy) / (h / 2)) ** 2 + ((cc - cx) / (w / 2)) ** 2 <= 1.0
    elif shape == "cone":
        frac = (rr - r0) / h  # 0 at apex row, 1 at base
        m = np.abs(cc - (c0 + w / 2)) <= frac * w / 2 + 0.5
    else:
        raise ValueError(f"unknown obstacle shape {shape!r}")
    full = np.zeros((H, W), dtype=bool)
    full[r0:r1, c0:c1] = m
    full.setflags(write=False)
    return full


def lane_cells(world: WorldState, camera_id: int):
    """(cells along the view, left/right side direction vectors) for a camera."""
    if camera_id == AGENT_CAMERA:
        dr, dc = _FACING_VEC[world.facing]
        origin = (world.agent[0] + dr, world.agent[1] + dc)
    elif 0 <= camera_id < N_CAMERAS:
        origin, (dr, dc) = CORNER_CAMERAS[camera_id]
    else:
        raise ValueError(f"camera_id must be in 0..4, got {camera_id}")
    cells = [(origin[0] + d * dr, origin[1] + d * dc) for d in range(DEPTH)]
    left = (-dc, dr)
    right = (dc, -dr)
    return cells, left, right


def render_u8(world: WorldState, camera_id: int) -> np.ndarray:
    """uint8 image of shape (3, 45, 60)."""
    grid = world.layout
    img = np.empty((H, W, CHANNELS), dtype=np.uint8)
    img[:] = SKY
    masks = _masks()
    cells, left, right = lane_cells(world, camera_id)
    obstacles = {o.cell: o for o in world.obstacles}
    for d, cell in enumerate(cells):
        m = masks[d]
        if not is_road(grid, cell):
            img[m["end"]] = _end_wall_color(d)
            break
        img[m["floor"]] = _floor_color(d)
        for side, key in ((left, "left"), (right, "right")):
            nb = (cell[0] + side[0], cell[1] + side[1])
            img[m[key]] = _opening_color(d) if is_road(grid, nb) else _wall_color(d)
    for d, cell in enumerate(cells):
        if not in_grid(cell) or not is_road(grid, cell):
            break
        ob = obstacles.get(cell)
        if ob is not None:
            img[_shape_mask(d, ob.shape)] = PALETTE[ob.color]
    return np.ascontiguousarray(img.transpose(2, 0, 1))


def render(world: WorldState, camera_id: int) -> np.ndarray:
    """Float image in [0, 1], shape (3, 45, 60)."""
    return render_u8(world, camera_id).astype(np.float64) / 255.0


def render_all(world: WorldState) -> np.ndarray:
    """Corner cameras 0..3 followed by the agent view: uint8 (5, 3, 45, 60)."""
    return np.stack([render_u8(world, c) for c in range(N_CAMERAS + 1)])
