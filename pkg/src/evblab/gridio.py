"""Plain-text and PGM serialization for angular metric grids.

All writers are deterministic: fixed float formatting, fixed key order.
"""

from __future__ import annotations

import numpy as np


def write_csv_matrix(path, matrix: np.ndarray, header: str | None = None) -> None:
    """One row of comma-separated values per theta_s bin."""
    m = np.asarray(matrix, dtype=float)
    lines = []
    if header:
        lines.append("# " + header)
    for row in m:
        lines.append(",".join(format(v, ".12g") for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_csv_matrix(path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            rows.append([float(v) for v in line.split(",")])
    return np.asarray(rows)


def write_pgm(path, matrix: np.ndarray, vmax: float = 1.0) -> None:
    """8-bit binary PGM heatmap; values clipped to [0, vmax], NaN -> 0."""
    m = np.asarray(matrix, dtype=float)
    m = np.nan_to_num(m, nan=0.0)
    scaled = np.clip(m / vmax, 0.0, 1.0)
    pixels = np.rint(scaled * 255).astype(np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(pixels.tobytes())
