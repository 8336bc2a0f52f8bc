"""Output files: legacy VTK snapshots, CSV history and the timing table."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..geometry import bars_to_array, projected_density_2d, signed_distance
from ..mesh import QuadMesh, circumradius

VTK_QUAD = 9

HISTORY_FIELDS = ("iter", "objective", "constraint", "max_dz", "n_cells", "t_adapt",
                  "t_solve", "t_sens", "volume_fraction", "compliance", "max_stress_ratio")


def dominant_alpha(mesh: QuadMesh, bars, penalty=3.0):
    """Size variable of the bar with the largest effective density at each centroid (0 in void)."""
    z = bars_to_array(bars)
    d = signed_distance(mesh.centroids, z)
    rho_hat = z[None, :, 5] ** penalty * projected_density_2d(d, circumradius(mesh.cell_h)[:, None])
    k = np.argmax(rho_hat, axis=1)
    return np.where(rho_hat.max(axis=1) > 0, z[k, 5], 0.0)


def write_vtk(path, mesh: QuadMesh, cell_data: dict, title="gpamr mesh"):
    """Legacy ASCII unstructured grid of quads with per-cell scalar fields."""
    path = Path(path)
    xy = mesh.node_coords
    conn = mesh.cell_nodes
    lines = ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {len(xy)} double"]
    lines += [f"{x:.17g} {y:.17g} 0" for x, y in xy]
    lines.append(f"CELLS {len(conn)} {5 * len(conn)}")
    lines += ["4 " + " ".join(map(str, row)) for row in conn]
    lines.append(f"CELL_TYPES {len(conn)}")
    lines += [str(VTK_QUAD)] * len(conn)
    lines.append(f"CELL_DATA {len(conn)}")
    for name, values in cell_data.items():
        values = np.asarray(values, dtype=float).ravel()
        if values.shape != (len(conn),):
            raise ValueError(f"cell field {name!r} has {values.size} values for {len(conn)} cells")
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [f"{v:.9g}" for v in values]
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write VTK file {path}: {exc}") from exc
    return path


def read_vtk_cell_count(path):
    with open(path) as fh:
        for line in fh:
            if line.startswith("CELLS"):
                return int(line.split()[1])
    raise ValueError(f"{path}: no CELLS section")


class HistoryWriter:
    """Appends one CSV row per iteration; the header is written on creation."""

    def __init__(self, path, append=False):
        self.path = Path(path)
        new = not (append and self.path.exists())
        try:
            self._fh = open(self.path, "a" if not new else "w", newline="")
        except OSError as exc:
            raise OSError(f"cannot open history file {self.path}: {exc}") from exc
        self._writer = csv.DictWriter(self._fh, fieldnames=HISTORY_FIELDS, extrasaction="ignore")
        if new:
            self._writer.writeheader()

    def write(self, row):
        self._writer.writerow({k: row.get(k, "") for k in HISTORY_FIELDS})
        self._fh.flush()

    def close(self):
        self._fh.close()


def read_history(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def format_timing_table(report: dict) -> str:
    """Text table with one row per task: mean seconds per iteration, share, elements touched."""
    rows = report["tasks"]
    total = report["total"]
    out = [f"{'task':<22}{'s/iter':>12}{'share %':>10}{'elements':>12}"]
    for name, r in rows.items():
        share = 100.0 * r["seconds"] / total["seconds"] if total["seconds"] > 0 else 0.0
        out.append(f"{name:<22}{r['seconds']:>12.4f}{share:>10.1f}{r['elements']:>12.0f}")
    out.append(f"{'total':<22}{total['seconds']:>12.4f}{100.0:>10.1f}{'':>12}")
    return "\n".join(out)
