"""Quadrature on edges, convex polygonal faces, and star-shaped cells.

Faces are fan-triangulated around their barycenter and cells are split
into tetrahedra with apex at the cell barycenter.  Triangle and tet rules
are collapsed Gauss-Legendre products (Duffy transform), which are exact
for polynomials up to the requested degree and have positive weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss


@dataclass(frozen=True)
class QuadRule:
    points: np.ndarray   # (n, d) physical coordinates
    weights: np.ndarray  # (n,)
    exactness_degree: int

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Contract sampled values (n, ...) against the weights."""
        return np.tensordot(self.weights, values, axes=(0, 0))


def gauss01(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points/weights on [0, 1]."""
    x, w = leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def edge_rule(p0: np.ndarray, p1: np.ndarray, degree: int) -> QuadRule:
    """Gauss rule along the segment p0 -> p1, exact to ``degree``."""
    n = max((degree + 2) // 2, 1)
    t, w = gauss01(n)
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    pts = p0[None, :] + t[:, None] * (p1 - p0)[None, :]
    length = np.linalg.norm(p1 - p0)
    return QuadRule(pts, w * length, degree)


def triangle_rule(v0, v1, v2, degree: int) -> QuadRule:
    """Collapsed-product rule on one triangle, exact to ``degree``.

    With the Duffy map (u, v) -> (u, v(1-u)) a degree-d integrand plus the
    (1-u) Jacobian has u-degree <= d+1 and v-degree <= d.
    """
    nu = max((degree + 3) // 2, 1)
    nv = max((degree + 2) // 2, 1)
    u, wu = gauss01(nu)
    v, wv = gauss01(nv)
    U, V = np.meshgrid(u, v, indexing="ij")
    W = np.outer(wu, wv)
    xi = U.ravel()
    eta = (V * (1.0 - U)).ravel()
    jac = (W * (1.0 - U)).ravel()
    v0 = np.asarray(v0, dtype=float)
    e1 = np.asarray(v1, dtype=float) - v0
    e2 = np.asarray(v2, dtype=float) - v0
    pts = v0[None, :] + xi[:, None] * e1[None, :] + eta[:, None] * e2[None, :]
    if v0.shape[0] == 2:
        area2 = abs(e1[0] * e2[1] - e1[1] * e2[0])
    else:
        area2 = np.linalg.norm(np.cross(e1, e2))
    return QuadRule(pts, jac * area2, degree)


def polygon_rule(vertices: np.ndarray, center: np.ndarray, degree: int) -> QuadRule:
    """Fan triangulation of a convex polygon around an interior point."""
    vertices = np.asarray(vertices, dtype=float)
    pts, wts = [], []
    n = vertices.shape[0]
    for i in range(n):
        rule = triangle_rule(center, vertices[i], vertices[(i + 1) % n], degree)
        pts.append(rule.points)
        wts.append(rule.weights)
    return QuadRule(np.vstack(pts), np.concatenate(wts), degree)


def tet_rule(v0, v1, v2, v3, degree: int) -> QuadRule:
    """Collapsed-product rule on one tetrahedron, exact to ``degree``."""
    nu = max((degree + 4) // 2, 1)
    nv = max((degree + 3) // 2, 1)
    nw = max((degree + 2) // 2, 1)
    u, wu = gauss01(nu)
    v, wv = gauss01(nv)
    w, ww = gauss01(nw)
    U, V, W = np.meshgrid(u, v, w, indexing="ij")
    WT = wu[:, None, None] * wv[None, :, None] * ww[None, None, :]
    xi = U.ravel()
    eta = (V * (1.0 - U)).ravel()
    zeta = (W * (1.0 - U) * (1.0 - V)).ravel()
    jac = (WT * (1.0 - U) ** 2 * (1.0 - V)).ravel()
    v0 = np.asarray(v0, dtype=float)
    E = np.stack([np.asarray(p, dtype=float) - v0 for p in (v1, v2, v3)], axis=1)
    pts = v0[None, :] + np.column_stack([xi, eta, zeta]) @ E.T
    vol6 = np.linalg.det(E)
    return QuadRule(pts, jac * abs(vol6), degree), vol6 / 6.0


def cell_rule_from_fan(fan_tets: list[tuple[np.ndarray, ...]], degree: int) -> QuadRule:
    """Assemble a cell rule from apex tetrahedra; rejects inverted tets.

    Each tet is (apex, face_center, v_i, v_{i+1}) ordered so its signed
    volume is positive for a star-shaped cell; a non-positive volume means
    the decomposition (and hence the cell) is invalid.
    """
    pts, wts = [], []
    for tet in fan_tets:
        rule, vol = tet_rule(*tet, degree)
        if vol <= 0.0:
            raise ValueError(
                f"negative tetrahedron volume {vol:.3e}: cell is not "
                "star-shaped with respect to its barycenter")
        pts.append(rule.points)
        wts.append(rule.weights)
    return QuadRule(np.vstack(pts), np.concatenate(wts), degree)
