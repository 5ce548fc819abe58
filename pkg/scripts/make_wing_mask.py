"""Regenerate the bundled wing-like test object ``src/qsi/data/wing.pgm``."""

from pathlib import Path

import numpy as np

from qsi.io import write_pgm
from qsi.scenes import wing_mask
from qsi.simulator import PixelGrid

OUT = Path(__file__).resolve().parents[1] / "src" / "qsi" / "data" / "wing.pgm"


def main():
    mask = wing_mask(PixelGrid(128, 128))
    levels = np.rint(mask.t * 255).astype(np.int64)
    write_pgm(OUT, levels, 255, ["qsi wing-like test object"], binary=True)
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
