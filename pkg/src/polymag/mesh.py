"""Immutable polyhedral mesh model with canonical orientations.

Conventions:
  * edges run from the lower to the higher global vertex index and carry
    that unit tangent;
  * face loops are stored counter-clockwise when seen from the stored
    normal side, and the normal follows the loop by the right-hand rule;
  * cells list signed face indices, the sign being +1 when the stored
    normal points out of the cell.

Faces must be planar and convex; violations are construction errors.
Quality degradation (short edges, flat cells) is only reported.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from .quadrature import polygon_rule

PLANARITY_TOL = 1e-9       # relative to the face diameter
COLLINEARITY_TOL = 1e-8    # radians, for merging edges into one line
CONVEXITY_TOL = 1e-12      # relative cross-product slack


class MeshError(ValueError):
    """Raised for invalid mesh files or inconsistent connectivity."""


@dataclass(frozen=True)
class Edge:
    verts: tuple[int, int]        # (low, high) global vertex ids
    tangent: np.ndarray           # unit, low -> high
    midpoint: np.ndarray
    length: float


@dataclass(frozen=True)
class Face:
    loop: tuple[int, ...]         # vertex ids, CCW seen from the normal
    edges: tuple[int, ...]        # edge ids along the loop
    edge_signs: tuple[int, ...]   # +1 if the loop follows the canonical tangent
    normal: np.ndarray
    barycenter: np.ndarray        # area centroid
    area: float
    diameter: float
    frame_u: np.ndarray           # in-plane orthonormal frame (u, v, normal)
    frame_v: np.ndarray
    eta: int                      # straight lines covering the boundary
    boundary: bool = False

    def to_local(self, pts: np.ndarray) -> np.ndarray:
        """Physical 3D points -> scaled in-plane coordinates."""
        d = np.atleast_2d(pts) - self.barycenter
        return np.column_stack([d @ self.frame_u, d @ self.frame_v]) / self.diameter

    def to_physical(self, loc: np.ndarray) -> np.ndarray:
        loc = np.atleast_2d(loc) * self.diameter
        return (self.barycenter + np.outer(loc[:, 0], self.frame_u)
                + np.outer(loc[:, 1], self.frame_v))

    def tangent_components(self, vecs: np.ndarray) -> np.ndarray:
        """3D vectors -> 2D components in the (u, v) frame."""
        vecs = np.atleast_2d(vecs)
        return np.column_stack([vecs @ self.frame_u, vecs @ self.frame_v])


@dataclass(frozen=True)
class Cell:
    faces: tuple[int, ...]
    face_signs: tuple[int, ...]   # +1 when the stored normal is outward
    verts: tuple[int, ...]
    edges: tuple[int, ...]
    barycenter: np.ndarray        # volume centroid
    volume: float
    diameter: float


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray
    edges: tuple[Edge, ...]
    faces: tuple[Face, ...]
    cells: tuple[Cell, ...]
    mesh_size: float              # mean cell diameter

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    def boundary_faces(self) -> list[int]:
        return [i for i, f in enumerate(self.faces) if f.boundary]

    def boundary_edges(self) -> set[int]:
        out: set[int] = set()
        for f in self.faces:
            if f.boundary:
                out.update(f.edges)
        return out

    def boundary_vertices(self) -> set[int]:
        out: set[int] = set()
        for f in self.faces:
            if f.boundary:
                out.update(f.loop)
        return out


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

def build_mesh(vertices: np.ndarray,
               face_loops: list[list[int]],
               cell_faces: list[list[int]]) -> Mesh:
    """Validate raw connectivity and derive all geometric metadata.

    ``cell_faces`` holds signed 1-based face indices, positive when the
    stored face normal points out of the cell.
    """
    vertices = np.asarray(vertices, dtype=float)
    if vertices.ndim != 2 or vertices.shape[1] != 3:
        raise MeshError("vertices must be an (n, 3) array")
    nv = vertices.shape[0]

    edge_index: dict[tuple[int, int], int] = {}
    edges: list[Edge] = []

    def edge_id(a: int, b: int) -> tuple[int, int]:
        key = (min(a, b), max(a, b))
        if key not in edge_index:
            p0, p1 = vertices[key[0]], vertices[key[1]]
            length = float(np.linalg.norm(p1 - p0))
            if length == 0.0:
                raise MeshError(f"zero-length edge between vertices {key}")
            edge_index[key] = len(edges)
            edges.append(Edge(key, (p1 - p0) / length, 0.5 * (p0 + p1), length))
        return edge_index[key], 1 if a < b else -1

    faces: list[Face] = []
    for fid, loop in enumerate(face_loops):
        faces.append(_build_face(fid, loop, vertices, edge_id, nv))

    face_use: list[list[int]] = [[] for _ in faces]
    cells: list[Cell] = []
    for cid, signed in enumerate(cell_faces):
        cells.append(_build_cell(cid, signed, faces, edges, vertices, face_use))

    for fid, users in enumerate(face_use):
        if len(users) == 0:
            raise MeshError(f"face {fid} belongs to no cell")
        if len(users) > 2:
            raise MeshError(f"face {fid} belongs to {len(users)} cells")

    faces = [dataclasses.replace(f, boundary=(len(face_use[i]) == 1))
             for i, f in enumerate(faces)]

    mesh_size = float(np.mean([c.diameter for c in cells]))
    return Mesh(vertices, tuple(edges), tuple(faces), tuple(cells), mesh_size)


def _build_face(fid, loop, vertices, edge_id, nv) -> Face:
    loop = [int(v) for v in loop]
    if len(loop) < 3:
        raise MeshError(f"face {fid} has fewer than 3 vertices")
    if any(v < 0 or v >= nv for v in loop):
        raise MeshError(f"face {fid} references a vertex out of range")
    if len(set(loop)) != len(loop):
        raise MeshError(f"face {fid} repeats a vertex")
    pts = vertices[loop]

    # Newell normal follows the stored loop by the right-hand rule.
    normal = np.zeros(3)
    for i in range(len(loop)):
        a, b = pts[i], pts[(i + 1) % len(loop)]
        normal += np.cross(a, b)
    nrm = np.linalg.norm(normal)
    if nrm == 0.0:
        raise MeshError(f"face {fid} is degenerate (zero area)")
    normal = normal / nrm

    centroid0 = pts.mean(axis=0)
    diam = float(max(np.linalg.norm(pts[i] - pts[j])
                     for i in range(len(loop)) for j in range(i + 1, len(loop))))
    dev = float(np.max(np.abs((pts - centroid0) @ normal)))
    if dev > PLANARITY_TOL * diam:
        raise MeshError(
            f"face {fid} is not planar: deviation {dev:.3e} exceeds "
            f"{PLANARITY_TOL:.1e} * diameter")

    # convexity: consecutive edge cross products must not turn backwards
    dirs = [pts[(i + 1) % len(loop)] - pts[i] for i in range(len(loop))]
    for i in range(len(loop)):
        turn = np.dot(np.cross(dirs[i], dirs[(i + 1) % len(loop)]), normal)
        scale = np.linalg.norm(dirs[i]) * np.linalg.norm(dirs[(i + 1) % len(loop)])
        if turn < -CONVEXITY_TOL * scale - 1e-30:
            raise MeshError(f"face {fid} is not convex at vertex "
                            f"{loop[(i + 1) % len(loop)]}")

    # area centroid from the fan around the vertex average
    area = 0.0
    centroid = np.zeros(3)
    for i in range(len(loop)):
        a, b = pts[i], pts[(i + 1) % len(loop)]
        tri2 = np.dot(np.cross(a - centroid0, b - centroid0), normal)
        area += 0.5 * tri2
        centroid += (tri2 / 6.0) * (a + b + centroid0)
    if area <= 0.0:
        raise MeshError(f"face {fid} has non-positive area")
    centroid /= area

    u = dirs[0] - np.dot(dirs[0], normal) * normal
    u /= np.linalg.norm(u)
    v = np.cross(normal, u)

    eids, esigns = [], []
    for i in range(len(loop)):
        eid, sign = edge_id(loop[i], loop[(i + 1) % len(loop)])
        eids.append(eid)
        esigns.append(sign)

    eta = _count_lines(dirs)
    return Face(tuple(loop), tuple(eids), tuple(esigns), normal, centroid,
                float(area), diam, u, v, eta)


def _count_lines(dirs: list[np.ndarray]) -> int:
    """Distinct supporting lines of the boundary, merging collinear
    consecutive edges (they share a vertex, so parallel means collinear)."""
    n = len(dirs)
    breaks = 0
    for i in range(n):
        a = dirs[i] / np.linalg.norm(dirs[i])
        b = dirs[(i + 1) % n] / np.linalg.norm(dirs[(i + 1) % n])
        if np.linalg.norm(np.cross(a, b)) > COLLINEARITY_TOL:
            breaks += 1
    return breaks if breaks > 0 else 1


def _build_cell(cid, signed, faces, edges, vertices, face_use) -> Cell:
    if len(signed) < 4:
        raise MeshError(f"cell {cid} has fewer than 4 faces")
    fids, signs = [], []
    for s in signed:
        s = int(s)
        if s == 0 or abs(s) > len(faces):
            raise MeshError(f"cell {cid} references face index {s} out of range")
        fids.append(abs(s) - 1)
        signs.append(1 if s > 0 else -1)
    if len(set(fids)) != len(fids):
        raise MeshError(f"cell {cid} repeats a face")

    # closed oriented surface: every edge is traversed once in each
    # direction over the outward-adjusted loops
    traversal: dict[int, int] = {}
    count: dict[int, int] = {}
    for fid, sign in zip(fids, signs):
        f = faces[fid]
        for eid, esign in zip(f.edges, f.edge_signs):
            traversal[eid] = traversal.get(eid, 0) + esign * sign
            count[eid] = count.get(eid, 0) + 1
    bad = [e for e, c in count.items() if c != 2 or traversal[e] != 0]
    if bad:
        raise MeshError(f"open cell {cid}: edges {sorted(bad)[:4]} are not "
                        "matched by two opposite face traversals")

    cverts = sorted({v for fid in fids for v in faces[fid].loop})
    cedges = sorted(count.keys())
    euler = len(cverts) - len(cedges) + len(fids)
    if euler != 2:
        raise MeshError(f"cell {cid} violates the Euler relation "
                        f"(V-E+F = {euler}, expected 2)")

    volume = 0.0
    for fid, sign in zip(fids, signs):
        f = faces[fid]
        volume += sign * np.dot(f.barycenter, f.normal) * f.area / 3.0
    if volume <= 0.0:
        raise MeshError(f"cell {cid} has non-positive volume {volume:.3e}")

    moment = np.zeros(3)
    for fid, sign in zip(fids, signs):
        f = faces[fid]
        rule = polygon_rule(vertices[list(f.loop)], f.barycenter, 2)
        moment += sign * 0.5 * f.normal * (rule.weights @ rule.points**2)
    centroid = moment / volume

    pts = vertices[cverts]
    diam = float(max(np.linalg.norm(pts[i] - pts[j])
                     for i in range(len(cverts)) for j in range(i + 1, len(cverts))))
    for fid in fids:
        face_use[fid].append(cid)
    return Cell(tuple(fids), tuple(signs), tuple(cverts), tuple(cedges),
                centroid, float(volume), diam)


# ---------------------------------------------------------------------------
# vemjson format
# ---------------------------------------------------------------------------

def load_mesh(path: str) -> Mesh:
    """Read a vemjson file: vertices, CCW face loops, signed 1-based cells."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise MeshError(f"cannot parse mesh file {path}: {exc}") from exc
    for key in ("vertices", "faces", "cells"):
        if key not in data:
            raise MeshError(f"mesh file {path} lacks the '{key}' key")
    return build_mesh(np.asarray(data["vertices"], dtype=float),
                      data["faces"], data["cells"])


def save_mesh(mesh: Mesh, path: str) -> None:
    """Write vemjson; floats use repr so reloads are bit-identical."""
    doc = {
        "vertices": [[float(x) for x in v] for v in mesh.vertices],
        "faces": [list(f.loop) for f in mesh.faces],
        "cells": [[int(s * (f + 1)) for f, s in zip(c.faces, c.face_signs)]
                  for c in mesh.cells],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------

def gen_cube_mesh(n: int) -> Mesh:
    """n^3 axis-aligned cubes tiling the unit cube."""
    return gen_graded_cube_mesh(n, [[1.0] * n] * 3)


def gen_graded_cube_mesh(n: int, ratios) -> Mesh:
    """Box cells with per-axis spacings proportional to ``ratios``.

    ``ratios`` holds three positive length-n sequences; each axis is
    normalized to span [0, 1].
    """
    if n < 1:
        raise MeshError("n must be >= 1")
    coords = []
    for axis in range(3):
        r = np.asarray(ratios[axis], dtype=float)
        if r.shape != (n,) or np.any(r <= 0):
            raise MeshError("ratios must be positive and of length n per axis")
        c = np.concatenate([[0.0], np.cumsum(r)])
        coords.append(c / c[-1])
    xs, ys, zs = coords

    def vid(i, j, k):
        return (i * (n + 1) + j) * (n + 1) + k

    vertices = np.array([[xs[i], ys[j], zs[k]]
                         for i in range(n + 1)
                         for j in range(n + 1)
                         for k in range(n + 1)])

    faces: list[list[int]] = []
    findex: dict[tuple, int] = {}

    def add_face(key, loop):
        findex[key] = len(faces)
        faces.append(loop)

    # x-normal faces: loop CCW seen from +x
    for i in range(n + 1):
        for j in range(n):
            for k in range(n):
                add_face(("x", i, j, k),
                         [vid(i, j, k), vid(i, j + 1, k),
                          vid(i, j + 1, k + 1), vid(i, j, k + 1)])
    for j in range(n + 1):
        for i in range(n):
            for k in range(n):
                add_face(("y", i, j, k),
                         [vid(i, j, k), vid(i, j, k + 1),
                          vid(i + 1, j, k + 1), vid(i + 1, j, k)])
    for k in range(n + 1):
        for i in range(n):
            for j in range(n):
                add_face(("z", i, j, k),
                         [vid(i, j, k), vid(i + 1, j, k),
                          vid(i + 1, j + 1, k), vid(i, j + 1, k)])

    cells = []
    for i in range(n):
        for j in range(n):
            for k in range(n):
                cells.append([
                    -(findex[("x", i, j, k)] + 1), findex[("x", i + 1, j, k)] + 1,
                    -(findex[("y", i, j, k)] + 1), findex[("y", i, j + 1, k)] + 1,
                    -(findex[("z", i, j, k)] + 1), findex[("z", i, j, k + 1)] + 1,
                ])
    return build_mesh(vertices, faces, cells)


# ---------------------------------------------------------------------------
# quality
# ---------------------------------------------------------------------------

@dataclass
class QualityReport:
    cell_star: np.ndarray    # star-shapedness radius estimate / h_P
    face_inradius: np.ndarray  # per face, inradius / h_P of the parent cell
    edge_ratio: np.ndarray   # per cell, shortest edge / h_P
    gamma: float
    flagged: list[str] = field(default_factory=list)

    def rows(self):
        yield ("metric", "entity", "value")
        for i, v in enumerate(self.cell_star):
            yield ("cell_star", str(i), f"{v:.6g}")
        for i, v in enumerate(self.face_inradius):
            yield ("face_inradius", str(i), f"{v:.6g}")
        for i, v in enumerate(self.edge_ratio):
            yield ("cell_min_edge", str(i), f"{v:.6g}")
        yield ("gamma", "global", f"{self.gamma:.6g}")


def check_quality(mesh: Mesh, gamma: float = 0.1) -> QualityReport:
    """Estimate the regularity constant; violations are reported, not fatal.

    Convex entities are their own star-shapedness kernel, so the ball
    radius is the inradius (distance from the barycenter to the boundary).
    """
    cell_star = np.zeros(len(mesh.cells))
    edge_ratio = np.zeros(len(mesh.cells))
    face_inr = np.full(len(mesh.faces), np.inf)
    flagged = []
    for cid, cell in enumerate(mesh.cells):
        r = np.inf
        for fid, sign in zip(cell.faces, cell.face_signs):
            f = mesh.faces[fid]
            dist = sign * np.dot(f.barycenter - cell.barycenter, f.normal)
            r = min(r, dist)
        cell_star[cid] = max(r, 0.0) / cell.diameter
        if cell_star[cid] < gamma:
            flagged.append(f"cell {cid}: star radius {cell_star[cid]:.3g} < gamma")
        emin = min(mesh.edges[e].length for e in cell.edges)
        edge_ratio[cid] = emin / cell.diameter
        if edge_ratio[cid] < gamma:
            flagged.append(f"cell {cid}: min edge {edge_ratio[cid]:.3g} < gamma")
        for fid in cell.faces:
            f = mesh.faces[fid]
            rf = _face_inradius(mesh, f) / cell.diameter
            face_inr[fid] = min(face_inr[fid], rf)
            if rf < gamma:
                flagged.append(f"face {fid}: inradius {rf:.3g} < gamma")
    gamma_est = float(min(cell_star.min(initial=np.inf),
                          face_inr.min(initial=np.inf),
                          edge_ratio.min(initial=np.inf)))
    return QualityReport(cell_star, face_inr, edge_ratio, gamma_est, flagged)


def _face_inradius(mesh: Mesh, f: Face) -> float:
    loc = f.to_local(mesh.vertices[list(f.loop)]) * f.diameter
    r = np.inf
    n = loc.shape[0]
    for i in range(n):
        a, b = loc[i], loc[(i + 1) % n]
        d = b - a
        nrm = np.linalg.norm(d)
        r = min(r, abs(d[0] * (-a[1]) - d[1] * (-a[0])) / nrm)
    return float(r)
