"""Built-in benchmark problems: the half MBB beam and the 2D L-bracket."""
from __future__ import annotations


def crossed_bars(x0, y0, width, height, nx, ny, bar_width, alpha):
    """A grid of ``nx`` x ``ny`` panels, each holding an X of two diagonal bars."""
    dx, dy = width / nx, height / ny
    out = []
    for j in range(ny):
        for i in range(nx):
            xa, ya = x0 + i * dx, y0 + j * dy
            xb, yb = xa + dx, ya + dy
            out.append({"p0": [xa, ya], "p1": [xb, yb], "width": bar_width, "alpha": alpha})
            out.append({"p0": [xa, yb], "p1": [xb, ya], "width": bar_width, "alpha": alpha})
    return out


def mbb():
    """Right half of the MBB beam: 20 x 5, load at the top of the symmetry plane."""
    return {
        "name": "mbb",
        "problem": "compliance",
        "volume_limit": 0.3,
        "envelope": {"type": "rectangle", "width": 20.0, "height": 5.0},
        "supports": [
            {"box": [0.0, 0.0, 0.0, 5.0], "components": ["x"]},  # symmetry plane
            {"box": [20.0, 20.0, 0.0, 0.0], "components": ["y"]},  # roller
        ],
        "loads": [{"type": "point", "point": [0.0, 5.0], "force": [0.0, -10.0]}],
        "projection": {"penalty": 3.0, "ks": 100.0, "rho_min": 1.0e-4},
        "amr": {"h_coarse": 0.25, "n_levels": 2, "rho_threshold": 0.9, "band_factor": 2.0},
        # closer asymptotes damp the period-two oscillation that move 0.05 and asymin 0.01 settle into
        "optimizer": {"move": 0.03, "asymin": 0.002, "c": 10.0, "max_iters": 300},
        "bounds": {"width": [0.25, 1.5], "alpha": [0.0, 1.0]},
        "components": crossed_bars(0.0, 0.0, 20.0, 5.0, 6, 1, 0.5, 0.5),
        "output": {"dir": "out/mbb", "vtk_every": 10},
    }


def lbracket():
    """L-bracket: 100 x 100 with the top-right 60 x 60 removed, top edge clamped."""
    return {
        "name": "lbracket",
        "problem": "stress",
        "stress": {"limit": 2.4, "ks": 30.0, "relaxation": 0.5},
        "envelope": {"type": "l_shape", "outer": [100.0, 100.0], "cut": [60.0, 60.0]},
        "supports": [{"box": [0.0, 40.0, 100.0, 100.0], "components": ["x", "y"]}],
        "loads": [{"type": "edge", "box": [100.0, 100.0, 34.0, 40.0], "force": [0.0, -3.0]}],
        "projection": {"penalty": 3.0, "ks": 40.0, "rho_min": 1.0e-4},
        "amr": {"h_coarse": 2.0, "n_levels": 1, "rho_threshold": 0.9, "band_factor": 2.0,
                "frozen_fine": [[98.0, 100.0, 34.0, 40.0]]},
        # plain MMA steps drive the volume to zero here; the conservative variant does not
        "optimizer": {"move": 0.015, "c": 10.0, "max_iters": 200, "conservative": True},
        "bounds": {"width": [2.0, 12.0], "alpha": [0.0, 1.0]},
        # crossed bars spanning the clamp and the loaded edge, fully present
        "components": (crossed_bars(0.0, 30.0, 40.0, 70.0, 1, 2, 6.0, 1.0)
                       + crossed_bars(0.0, 0.0, 100.0, 40.0, 4, 1, 6.0, 1.0)),
        "output": {"dir": "out/lbracket", "vtk_every": 10},
    }


PRESETS = {"mbb": mbb, "lbracket": lbracket}
