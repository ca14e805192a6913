#!/usr/bin/env python3
"""Generate a Voronoi tessellation of the unit cube in vemjson format.

Seeds are mirrored across all six walls so that the Voronoi cells of the
interior seeds are exactly clipped to [0,1]^3.  A few Lloyd iterations
(centroidal smoothing) improve cell quality.  This is the external
workflow that produced the committed test meshes:

    python tools/make_voronoi_mesh.py --seeds 27 --lloyd 4 \
        --rng-seed 20240611 --out tests/data/voronoi27.json
"""

from __future__ import annotations

import argparse
import sys

import numpy as np
from scipy.spatial import Voronoi

sys.path.insert(0, "src")

from polymag.mesh import build_mesh, save_mesh  # noqa: E402


def mirrored(points: np.ndarray) -> np.ndarray:
    blocks = [points]
    for axis in range(3):
        for wall in (0.0, 1.0):
            m = points.copy()
            m[:, axis] = 2 * wall - m[:, axis]
            blocks.append(m)
    return np.vstack(blocks)


def cell_polyhedra(points: np.ndarray):
    """Faces of the clipped Voronoi cell of each interior seed.

    Returns (vertices, faces, cells) in vemjson conventions.  Each ridge
    between seeds i < j is stored once, oriented with the normal pointing
    from i to j; cell i references it positively, cell j negatively.
    """
    n = points.shape[0]
    vor = Voronoi(mirrored(points))
    vkeep: dict[int, int] = {}
    vertices: list[np.ndarray] = []
    faces: list[list[int]] = []
    cell_faces: list[list[int]] = [[] for _ in range(n)]

    def vertex_id(i: int) -> int:
        if i not in vkeep:
            vkeep[i] = len(vertices)
            vertices.append(vor.vertices[i])
        return vkeep[i]

    for (a, b), ridge in zip(vor.ridge_points, vor.ridge_vertices):
        if min(a, b) >= n:
            continue  # between two mirror seeds
        if -1 in ridge:
            raise RuntimeError("unbounded ridge on an interior seed")
        i, j = (a, b) if a < b else (b, a)
        loop = order_ridge(vor.vertices[ridge], points_of(vor, i),
                           points_of(vor, j))
        face = [vertex_id(ridge[k]) for k in loop]
        fid = len(faces) + 1
        faces.append(face)
        cell_faces[i].append(fid)
        if j < n:
            cell_faces[j].append(-fid)
    return np.array(vertices), faces, cell_faces


def points_of(vor: Voronoi, i: int) -> np.ndarray:
    return vor.points[i]


def order_ridge(ridge_pts: np.ndarray, pi: np.ndarray, pj: np.ndarray):
    """Order ridge vertices CCW around the i->j axis."""
    normal = pj - pi
    normal = normal / np.linalg.norm(normal)
    center = ridge_pts.mean(axis=0)
    ref = ridge_pts[0] - center
    ref -= np.dot(ref, normal) * normal
    ref /= np.linalg.norm(ref)
    other = np.cross(normal, ref)
    d = ridge_pts - center
    ang = np.arctan2(d @ other, d @ ref)
    return np.argsort(ang)


def lloyd_step(points: np.ndarray) -> np.ndarray:
    vertices, faces, cells = cell_polyhedra(points)
    mesh = build_mesh(vertices, faces, cells)
    return np.array([c.barycenter for c in mesh.cells])


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=27)
    ap.add_argument("--lloyd", type=int, default=4)
    ap.add_argument("--rng-seed", type=int, default=20240611)
    ap.add_argument("--out", required=True)
    args = ap.parse_args()

    rng = np.random.default_rng(args.rng_seed)
    pts = rng.uniform(0.08, 0.92, size=(args.seeds, 3))
    for _ in range(args.lloyd):
        pts = lloyd_step(pts)
    vertices, faces, cells = cell_polyhedra(pts)
    mesh = build_mesh(vertices, faces, cells)
    save_mesh(mesh, args.out)
    vol = sum(c.volume for c in mesh.cells)
    print(f"wrote {args.out}: {len(mesh.cells)} cells, "
          f"{len(mesh.faces)} faces, {len(mesh.edges)} edges, "
          f"total volume {vol:.12f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
