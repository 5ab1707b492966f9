"""Regenerate src/needletrap/data/synthetic_scan.csv.

Twelve separations over 50-800 um, axial frequencies from the series model
at Q = 4.85 e and U0 = 9 V, 1 % multiplicative Gaussian noise, fixed seed.
"""

import numpy as np

from needletrap import io
from needletrap.fitting import synthetic_scan

SEED = 20240
CHARGE_E = 4.85
U0 = 9.0


def main():
    cfg = io.load_config(io.DATA_DIR / "needle_trap.yaml")
    d = np.linspace(50, 800, 12) * io.UM
    scan = synthetic_scan(cfg.trap, cfg.particle.mass, CHARGE_E * io.ELEMENTARY_CHARGE, U0, d,
                          noise=0.01, seed=SEED)
    io.write_scan(io.DATA_DIR / "synthetic_scan.csv", scan)


if __name__ == "__main__":
    main()
