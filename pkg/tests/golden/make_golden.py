"""Regenerate the empty-lane golden images (run only after a deliberate renderer change)."""
from pathlib import Path

import numpy as np

from privnav.render import N_CAMERAS, render_u8
from privnav.world import START, WorldState, layouts

OUT = Path(__file__).with_name("empty_lanes.npz")


def empty_world(layout_id):
    return WorldState(layout_id, START, "E", (4, 4))


def main():
    images = {f"layout{l}_cam{c}": render_u8(empty_world(l), c)
              for l in range(len(layouts())) for c in range(N_CAMERAS)}
    np.savez_compressed(OUT, **images)


if __name__ == "__main__":
    main()
