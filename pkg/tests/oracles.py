"""Independent reference computations used by the tests.

Nothing here imports the package's projection or FEM code: each oracle is a
brute-force or textbook evaluation of the same quantity.
"""
from __future__ import annotations

import numpy as np
from scipy.stats import qmc


def _sobol(dim, m, seed=0):
    return qmc.Sobol(dim, scramble=True, seed=seed).random_base2(m)


def disc_fraction_mc(d, R, m=20, seed=0):
    """Fraction of the disc of radius R (center at signed distance d from a
    straight boundary, outward positive) lying on the inner side. Quasi Monte
    Carlo on 2**m points of the bounding square."""
    p = (2.0 * _sobol(2, m, seed) - 1.0) * R
    inside_disc = np.einsum("ij,ij->i", p, p) <= R * R
    # the boundary is the line s = -d along the first axis; the component is s < -d
    inner = p[:, 0] < -d
    return float(np.count_nonzero(inside_disc & inner) / np.count_nonzero(inside_disc))


def ball_fraction_mc(d, R, m=20, seed=0):
    p = (2.0 * _sobol(3, m, seed) - 1.0) * R
    inside = np.einsum("ij,ij->i", p, p) <= R * R
    inner = p[:, 0] < -d
    return float(np.count_nonzero(inside & inner) / np.count_nonzero(inside))


def stadium_signed_distance_bruteforce(x, p0, p1, w, n=200_000):
    """Signed distance to a stadium by dense sampling of its boundary."""
    p0, p1, x = (np.asarray(v, dtype=float) for v in (p0, p1, x))
    e = p1 - p0
    L = np.linalg.norm(e)
    t_hat = e / L
    nrm = np.array([-t_hat[1], t_hat[0]])
    r = w / 2
    s = np.linspace(0, 1, n)
    sides = np.concatenate([p0 + s[:, None] * e + r * nrm, p0 + s[:, None] * e - r * nrm])
    ang = np.linspace(0, 2 * np.pi, n)
    circ = np.column_stack([np.cos(ang), np.sin(ang)]) * r
    pts = np.concatenate([sides, p0 + circ, p1 + circ])
    dist = np.min(np.linalg.norm(pts - x, axis=1))
    # inside test from the exact segment distance (sign only)
    t = np.clip((x - p0) @ e / (L * L), 0, 1)
    inside = np.linalg.norm(x - (p0 + t * e)) < r
    return -dist if inside else dist


def ks_mpmath(values, k):
    import mpmath as mp
    mp.mp.dps = 50
    vals = [mp.mpf(float(v)) for v in values]
    return float(mp.log(sum(mp.e ** (k * v) for v in vals) / len(vals)) / k)


def q4_stiffness_bruteforce(h, E, nu, n_gauss=4):
    """Plane-stress Q4 stiffness with an independent shape-function derivation."""
    D = E / (1 - nu**2) * np.array([[1, nu, 0], [nu, 1, 0], [0, 0, (1 - nu) / 2]])
    gp, gw = np.polynomial.legendre.leggauss(n_gauss)
    corners = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=float)
    K = np.zeros((8, 8))
    J = h / 2.0
    for xi, wx in zip(gp, gw):
        for eta, wy in zip(gp, gw):
            dN = np.array([[c[0] * (1 + c[1] * eta) / 4, c[1] * (1 + c[0] * xi) / 4] for c in corners]) / J
            B = np.zeros((3, 8))
            B[0, 0::2] = dN[:, 0]
            B[1, 1::2] = dN[:, 1]
            B[2, 0::2] = dN[:, 1]
            B[2, 1::2] = dN[:, 0]
            K += B.T @ D @ B * wx * wy * J * J
    return K


def cantilever_beam_compliance(L, H, E, P):
    """Euler-Bernoulli tip-load cantilever compliance P*delta (unit thickness)."""
    I = H**3 / 12.0
    return P * P * L**3 / (3 * E * I)
