"""Local 3D virtual element spaces on polyhedral cells.

Per cell P and order k the solver uses four spaces: the nodal space of
order k+1, the edge space of order k, the face space of order k-1 (normal
traces in P_{k-1} per face), and piecewise P_{k-1} volume data.  All of
them are handled through DOFs; faces carry the 2D spaces of
``face_space`` (serendipity ones in serendipity mode).

Cell DOF scalings mirror the face conventions; interior moments are
normalized by the cell volume and use coordinates scaled by the cell
diameter:

  * interior x-moments      (1/|P|) int_P (v.xhat) m_a
  * interior curl moments   (1/|P|) int_P (h_P curl v).(xhat ^ c_i)
  * interior grad moments   (1/|P|) int_P (w.(h_P grad m_a))
  * nodal interior moments  (1/|P|) int_P q m_a
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import polyspace as ps
from .face_space import (EdgeFaceOperators, FaceContext, NodalFaceOperators,
                         _gram_1d, build_face_space)
from .mesh import Mesh
from .quadrature import cell_rule_from_fan, edge_rule


class FaceBank:
    """Per-mesh cache of face contexts and operators (faces are shared
    between the two adjacent cells)."""

    def __init__(self, mesh: Mesh, k: int):
        self.mesh = mesh
        self.k = k
        self._ctx: dict[int, FaceContext] = {}
        self._eops: dict[tuple, EdgeFaceOperators] = {}
        self._nops: dict[tuple, NodalFaceOperators] = {}

    def ctx(self, fid: int) -> FaceContext:
        if fid not in self._ctx:
            self._ctx[fid] = FaceContext(self.mesh, fid, self.k)
        return self._ctx[fid]

    def edge_ops(self, fid: int, mode: str) -> EdgeFaceOperators:
        key = (fid, mode)
        if key not in self._eops:
            space = build_face_space(self.mesh, fid, self.k, "edge", mode,
                                     ctx=self.ctx(fid))
            self._eops[key] = EdgeFaceOperators(space)
        return self._eops[key]

    def nodal_ops(self, fid: int, mode: str) -> NodalFaceOperators:
        key = (fid, mode)
        if key not in self._nops:
            space = build_face_space(self.mesh, fid, self.k, "nodal", mode,
                                     ctx=self.ctx(fid))
            self._nops[key] = NodalFaceOperators(space)
        return self._nops[key]


@dataclass
class CellLayout:
    """Ordered DOF layout of one cell space (edge/nodal/face/volume kind)."""

    kind: str
    ndofs: int
    slices: dict
    descriptors: list

    def block(self, *key) -> slice:
        return self.slices[key]


class CellSpaces:
    """DOF layouts and computable operators of the local spaces on a cell."""

    def __init__(self, mesh: Mesh, cid: int, k: int, mode: str = "serendipity",
                 bank: FaceBank | None = None, quad_degree: int | None = None):
        if k < 1:
            raise ValueError("order k must be >= 1")
        self.mesh = mesh
        self.cid = cid
        self.k = k
        self.mode = mode
        self.cell = mesh.cells[cid]
        self.bank = bank or FaceBank(mesh, k)
        self.quad_degree = quad_degree or (2 * k + 4)
        self._build_quadrature()
        self._cache: dict = {}

    # -- geometry and integration ------------------------------------------

    def _build_quadrature(self):
        mesh, cell = self.mesh, self.cell
        tets = []
        for fid, sign in zip(cell.faces, cell.face_signs):
            f = mesh.faces[fid]
            pts = mesh.vertices[list(f.loop)]
            loop = pts if sign > 0 else pts[::-1]
            n = loop.shape[0]
            for i in range(n):
                tets.append((cell.barycenter, f.barycenter,
                             loop[i], loop[(i + 1) % n]))
        self.quad = cell_rule_from_fan(tets, self.quad_degree)
        self.loc = (self.quad.points - cell.barycenter) / cell.diameter
        self.w = self.quad.weights

    def to_local(self, pts: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(pts) - self.cell.barycenter) / self.cell.diameter

    def exps(self, degree: int) -> np.ndarray:
        return ps.monomial_exponents(3, degree)

    def mono_vals(self, degree: int) -> np.ndarray:
        key = ("vals", degree)
        if key not in self._cache:
            self._cache[key] = ps.eval_monomials(self.exps(degree), self.loc)
        return self._cache[key]

    def gram(self, da: int, db: int) -> np.ndarray:
        key = ("gram", da, db)
        if key not in self._cache:
            self._cache[key] = self.mono_vals(da).T @ \
                (self.w[:, None] * self.mono_vals(db))
        return self._cache[key]

    @cached_property
    def cross_fields(self) -> np.ndarray:
        """Independent basis of xhat ^ (P_k)^3, columns in (P_{k+1})^3."""
        fields, _ = ps.cross_family_basis(self.k)
        return fields

    @property
    def n_cross(self) -> int:
        return self.cross_fields.shape[1]

    def face_moment_degree(self, fid: int) -> int:
        if self.mode == "standard":
            return self.k
        return self.k + 1 - self.mesh.faces[fid].eta

    # -- layouts -------------------------------------------------------------

    def _face_counts(self, fid: int) -> tuple[int, int]:
        nx = ps.dim_full(2, self.face_moment_degree(fid))
        nrot = ps.poly_dim(2, self.k - 1, "zero-mean")
        return nx, nrot

    @cached_property
    def edge_layout(self) -> CellLayout:
        k = self.k
        slices, desc = {}, []
        off = 0
        for eid in self.cell.edges:
            slices[("edge", eid)] = slice(off, off + k + 1)
            desc += [("edge", eid, j) for j in range(k + 1)]
            off += k + 1
        for fid in self.cell.faces:
            nx, nrot = self._face_counts(fid)
            slices[("facex", fid)] = slice(off, off + nx)
            desc += [("facex", fid, j) for j in range(nx)]
            off += nx
            slices[("facerot", fid)] = slice(off, off + nrot)
            desc += [("facerot", fid, j) for j in range(nrot)]
            off += nrot
        nx3 = ps.dim_full(3, k - 1)
        slices[("intx",)] = slice(off, off + nx3)
        desc += [("cell", self.cid, j) for j in range(nx3)]
        off += nx3
        slices[("cross",)] = slice(off, off + self.n_cross)
        desc += [("cell", self.cid, nx3 + j) for j in range(self.n_cross)]
        off += self.n_cross
        return CellLayout("edge", off, slices, desc)

    @cached_property
    def nodal_layout(self) -> CellLayout:
        k = self.k
        slices, desc = {}, []
        off = 0
        for vid in self.cell.verts:
            slices[("vertex", vid)] = slice(off, off + 1)
            desc += [("vertex", vid, 0)]
            off += 1
        for eid in self.cell.edges:
            slices[("edge", eid)] = slice(off, off + k)
            desc += [("edge", eid, j) for j in range(k)]
            off += k
        for fid in self.cell.faces:
            nx, _ = self._face_counts(fid)
            slices[("facex", fid)] = slice(off, off + nx)
            desc += [("facex", fid, j) for j in range(nx)]
            off += nx
        nk1 = ps.dim_full(3, k - 1)
        slices[("int",)] = slice(off, off + nk1)
        desc += [("cell", self.cid, j) for j in range(nk1)]
        off += nk1
        return CellLayout("nodal", off, slices, desc)

    @cached_property
    def face_layout(self) -> CellLayout:
        k = self.k
        slices, desc = {}, []
        off = 0
        nf = ps.dim_full(2, k - 1)
        for fid in self.cell.faces:
            slices[("facen", fid)] = slice(off, off + nf)
            desc += [("facen", fid, j) for j in range(nf)]
            off += nf
        ngrad = max(ps.dim_full(3, k - 1) - 1, 0)
        slices[("intgrad",)] = slice(off, off + ngrad)
        desc += [("cell", self.cid, j) for j in range(ngrad)]
        off += ngrad
        slices[("cross",)] = slice(off, off + self.n_cross)
        desc += [("cell", self.cid, ngrad + j) for j in range(self.n_cross)]
        off += self.n_cross
        return CellLayout("face", off, slices, desc)

    @cached_property
    def volume_layout(self) -> CellLayout:
        n = ps.dim_full(3, self.k - 1)
        return CellLayout("volume", n, {("int",): slice(0, n)},
                          [("cell", self.cid, j) for j in range(n)])

    # -- extraction of face-space DOF subvectors ------------------------------

    def face_selector(self, fid: int, kind: str) -> np.ndarray:
        """Index array mapping cell DOFs to the face space's DOF layout."""
        f = self.mesh.faces[fid]
        fspace = (self.bank.edge_ops(fid, self.mode).space if kind == "edge"
                  else self.bank.nodal_ops(fid, self.mode).space)
        layout = self.edge_layout if kind == "edge" else self.nodal_layout
        sel = np.zeros(fspace.ndofs, dtype=int)
        if kind == "nodal":
            for i, vid in enumerate(fspace.ctx.face.loop):
                sel[i] = layout.block("vertex", vid).start
        for pos, eid in enumerate(f.edges):
            blk = fspace.edge_block(pos)
            cblk = layout.block("edge", eid)
            sel[blk] = np.arange(cblk.start, cblk.stop)
        mblk = fspace.moment_block
        cblk = layout.block("facex", fid)
        sel[mblk] = np.arange(cblk.start, cblk.stop)
        if kind == "edge" and fspace.n_rot_dofs:
            rblk = fspace.rot_block
            cblk = layout.block("facerot", fid)
            sel[rblk] = np.arange(cblk.start, cblk.stop)
        return sel

    # -- polynomial restriction helpers ---------------------------------------

    def _face_points_local(self, fid: int) -> np.ndarray:
        return self.to_local(self.bank.ctx(fid).quad.points)

    def restrict_scalar(self, coeffs: np.ndarray, deg: int, fid: int) -> np.ndarray:
        """Cell-scaled 3D polynomial -> 2D coefficients on the face."""
        fctx = self.bank.ctx(fid)
        vals = ps.eval_monomials(self.exps(deg), self._face_points_local(fid)) \
            @ coeffs
        rhs = fctx.mono_vals(deg).T @ (fctx.w * vals)
        return np.linalg.solve(fctx.gram(deg, deg), rhs)

    def restrict_tangential(self, coeffs: np.ndarray, deg: int,
                            fid: int) -> np.ndarray:
        """Cell-scaled 3D vector polynomial -> tangential 2D coefficients."""
        fctx = self.bank.ctx(fid)
        f = fctx.face
        n3 = ps.dim_full(3, deg)
        vals = ps.eval_monomials(self.exps(deg), self._face_points_local(fid))
        comp = coeffs.reshape(3, n3)
        V = vals @ comp.T  # (npts, 3)
        t1 = V @ f.frame_u
        t2 = V @ f.frame_v
        G = fctx.gram(deg, deg)
        M = fctx.mono_vals(deg)
        return np.concatenate([
            np.linalg.solve(G, M.T @ (fctx.w * t1)),
            np.linalg.solve(G, M.T @ (fctx.w * t2))])

    def eval_vec(self, coeffs: np.ndarray, deg: int,
                 pts_loc: np.ndarray) -> np.ndarray:
        n3 = ps.dim_full(3, deg)
        vals = ps.eval_monomials(self.exps(deg), pts_loc)
        return vals @ coeffs.reshape(3, n3).T


class CellOperators:
    """Projectors, DOF-level differential operators, and products."""

    def __init__(self, spaces: CellSpaces):
        self.cs = spaces
        self.mesh = spaces.mesh
        self.cell = spaces.cell
        self.k = spaces.k
        self.mode = spaces.mode

    # face machinery shortcuts ------------------------------------------------

    def _eops(self, fid):
        return self.cs.bank.edge_ops(fid, self.mode)

    def _nops(self, fid):
        return self.cs.bank.nodal_ops(fid, self.mode)

    def _face_rot_map(self, fid: int) -> np.ndarray:
        """Cell edge-DOFs -> scaled-rot coefficients on the face."""
        ops = self._eops(fid)
        sel = self.cs.face_selector(fid, "edge")
        M = np.zeros((ps.dim_full(2, self.k - 1), self.cs.edge_layout.ndofs))
        M[:, sel] = ops.rot_matrix @ ops.extension
        return M

    def _face_moment_map(self, fid: int, s: int) -> np.ndarray:
        """Cell edge-DOFs -> [int_f v.Phi] over the (P_s)^2 face basis."""
        ops = self._eops(fid)
        sel = self.cs.face_selector(fid, "edge")
        M = np.zeros((2 * ps.dim_full(2, s), self.cs.edge_layout.ndofs))
        M[:, sel] = ops.moment_matrix(s) @ ops.extension
        return M

    # -- L2 projection of the edge space ---------------------------------------

    @cached_property
    def pi0_edge(self) -> np.ndarray:
        """Edge-kind cell DOFs -> (P_k)^3 coefficients of the projection."""
        cs, k = self.cs, self.k
        cell = self.cell
        n3 = ps.dim_full(3, k)
        layout = cs.edge_layout
        rows = np.zeros((3 * n3, layout.ndofs))
        ints = layout.block("intx",)
        cross = layout.block("cross",)
        fmaps = {fid: self._face_moment_map(fid, k + 1)
                 for fid in cell.faces}
        for i in range(3 * n3):
            target = np.zeros(3 * n3)
            target[i] = 1.0
            cq, cz, _, _ = ps.decompose_3d_cross(target, k)
            W = ps.xcross_matrix(k) @ cq  # coefficients in (P_{k+1})^3
            cW = ps.expand_in_cross_family(cs.cross_fields, W)
            row = np.zeros(layout.ndofs)
            row[cross] += cell.volume * cW
            row[ints] += cell.volume * cz
            for fid, sign in zip(cell.faces, cell.face_signs):
                nW = self._n_cross_W(fid, W)
                coeffs2 = cs.restrict_tangential(nW, k + 1, fid)
                row += cell.diameter * sign * (coeffs2 @ fmaps[fid])
            rows[i] = row
        G = np.kron(np.eye(3), cs.gram(k, k))
        return np.linalg.solve(G, rows)

    def _n_cross_W(self, fid: int, W: np.ndarray) -> np.ndarray:
        """Coefficients of n_f ^ W for a (P_{k+1})^3 field W."""
        n = self.mesh.faces[fid].normal
        m = ps.dim_full(3, self.k + 1)
        Wc = W.reshape(3, m)
        out = np.empty_like(Wc)
        out[0] = n[1] * Wc[2] - n[2] * Wc[1]
        out[1] = n[2] * Wc[0] - n[0] * Wc[2]
        out[2] = n[0] * Wc[1] - n[1] * Wc[0]
        return out.ravel()

    # -- polynomial DOFs --------------------------------------------------------

    @cached_property
    def edge_poly_dofs(self) -> np.ndarray:
        """Edge-kind cell DOFs of every (P_k)^3 basis field."""
        return self.edge_poly_dofs_of_degree(self.k)

    def edge_poly_dofs_of_degree(self, s: int) -> np.ndarray:
        cs, k = self.cs, self.k
        cell, mesh = self.cell, self.mesh
        layout = cs.edge_layout
        n3 = ps.dim_full(3, s)
        D = np.zeros((layout.ndofs, 3 * n3))
        exps = cs.exps(s)
        # edge moments
        for eid in cell.edges:
            e = mesh.edges[eid]
            p0 = mesh.vertices[e.verts[0]]
            p1 = mesh.vertices[e.verts[1]]
            rule = edge_rule(p0, p1, 2 * k + 4 + s)
            tau = ((rule.points - e.midpoint) @ e.tangent) / e.length
            loc = cs.to_local(rule.points)
            vals = ps.eval_monomials(exps, loc)
            vt = np.hstack([vals * e.tangent[0], vals * e.tangent[1],
                            vals * e.tangent[2]])
            powers = np.column_stack([tau**j for j in range(k + 1)])
            D[layout.block("edge", eid)] = \
                powers.T @ (rule.weights[:, None] * vt) / e.length
        # face moments
        curlM = ps.curl3d_matrix(s)
        for fid in cell.faces:
            fctx = cs.bank.ctx(fid)
            f = fctx.face
            ploc = cs._face_points_local(fid)
            vals = ps.eval_monomials(exps, ploc)
            V = [np.hstack([vals * f.frame_u[c] for c in range(3)]),
                 np.hstack([vals * f.frame_v[c] for c in range(3)])]
            # components along the face frame; xhat_f = local face coords
            floc = fctx.loc
            nx = layout.block("facex", fid)
            mdeg = cs.face_moment_degree(fid)
            if mdeg >= 0:
                mv = fctx.mono_vals(mdeg)
                integ = mv.T @ (fctx.w[:, None] *
                                (V[0] * floc[:, 0:1] + V[1] * floc[:, 1:2]))
                D[nx] = integ / f.area
            nrot = layout.block("facerot", fid)
            if nrot.stop > nrot.start:
                vals1 = ps.eval_monomials(cs.exps(s - 1), ploc)
                curl_comp = [vals1 @ curlM[c * ps.dim_full(3, s - 1):
                                           (c + 1) * ps.dim_full(3, s - 1), :]
                             for c in range(3)]
                curl_n = sum(curl_comp[c] * f.normal[c] for c in range(3)) \
                    / cell.diameter  # physical curl values
                means = fctx.means(k - 1)
                m0 = fctx.mono_vals(k - 1)[:, 1:] - means[1:][None, :]
                D[nrot] = f.diameter * (m0.T @ (fctx.w[:, None] * curl_n)) \
                    / f.area
        # interior moments
        vals = cs.mono_vals(s)
        mk1 = cs.mono_vals(k - 1)
        xdot = np.hstack([vals * cs.loc[:, c:c + 1] for c in range(3)])
        D[layout.block("intx",)] = mk1.T @ (cs.w[:, None] * xdot) / cell.volume
        # curl moments against the cross family (scaled curl = h_P curl)
        vals1 = ps.eval_monomials(cs.exps(s - 1), cs.loc)
        n1 = ps.dim_full(3, s - 1)
        m = ps.dim_full(3, k + 1)
        CF = cs.cross_fields.reshape(3, m, cs.n_cross)
        Xv = ps.eval_monomials(cs.exps(k + 1), cs.loc)
        rowsc = np.zeros((cs.n_cross, 3 * n3))
        for c in range(3):
            cl = vals1 @ curlM[c * n1:(c + 1) * n1, :]
            rowsc += (Xv @ CF[c]).T @ (cs.w[:, None] * cl)
        D[layout.block("cross",)] = rowsc / cell.volume
        return D

    @cached_property
    def nodal_poly_dofs(self) -> np.ndarray:
        """Nodal-kind cell DOFs of every P_{k+1} basis polynomial."""
        cs, k = self.cs, self.k
        cell, mesh = self.cell, self.mesh
        layout = cs.nodal_layout
        n1 = ps.dim_full(3, k + 1)
        exps = cs.exps(k + 1)
        D = np.zeros((layout.ndofs, n1))
        locv = cs.to_local(mesh.vertices[list(cell.verts)])
        for i, vid in enumerate(cell.verts):
            D[layout.block("vertex", vid)] = \
                ps.eval_monomials(exps, locv[i:i + 1])
        for eid in cell.edges:
            e = mesh.edges[eid]
            rule = edge_rule(mesh.vertices[e.verts[0]],
                             mesh.vertices[e.verts[1]], 2 * k + 6)
            tau = ((rule.points - e.midpoint) @ e.tangent) / e.length
            vals = ps.eval_monomials(exps, cs.to_local(rule.points))
            powers = np.column_stack([tau**j for j in range(k)])
            D[layout.block("edge", eid)] = \
                powers.T @ (rule.weights[:, None] * vals) / e.length
        gradM = ps.grad_matrix(3, k + 1).reshape(3, -1, n1)
        for fid in cell.faces:
            fctx = cs.bank.ctx(fid)
            f = fctx.face
            mdeg = cs.face_moment_degree(fid)
            if mdeg < 0:
                continue
            ploc = cs._face_points_local(fid)
            gk = ps.eval_monomials(cs.exps(k), ploc)
            gvals = [gk @ gradM[c] for c in range(3)]  # scaled-by-h_P grads
            xf = fctx.quad.points - f.barycenter
            gx = sum(gvals[c] * xf[:, c:c + 1] for c in range(3)) \
                / cell.diameter  # grad q . x_f, physical
            mv = fctx.mono_vals(mdeg)
            D[layout.block("facex", fid)] = mv.T @ (fctx.w[:, None] * gx) / f.area
        vals = cs.mono_vals(k + 1)
        D[layout.block("int",)] = \
            cs.mono_vals(k - 1).T @ (cs.w[:, None] * vals) / cell.volume
        return D

    @cached_property
    def face_poly_dofs(self) -> np.ndarray:
        """Face-kind cell DOFs of every (P_{k-1})^3 basis field."""
        return self.face_poly_dofs_of_degree(self.k - 1)

    def face_poly_dofs_of_degree(self, s: int) -> np.ndarray:
        cs, k = self.cs, self.k
        cell = self.cell
        layout = cs.face_layout
        n3 = ps.dim_full(3, s)
        exps = cs.exps(s)
        D = np.zeros((layout.ndofs, 3 * n3))
        for fid in cell.faces:
            fctx = cs.bank.ctx(fid)
            f = fctx.face
            vals = ps.eval_monomials(exps, cs._face_points_local(fid))
            Vn = np.hstack([vals * f.normal[c] for c in range(3)])
            D[layout.block("facen", fid)] = \
                fctx.mono_vals(k - 1).T @ (fctx.w[:, None] * Vn) / f.area
        vals = cs.mono_vals(s)
        blk = layout.block("intgrad",)
        if blk.stop > blk.start:
            # int w . grad-hat m_a for nonconstant m_a in P_{k-1}
            gradM = ps.grad_matrix(3, k - 1).reshape(3, -1, ps.dim_full(3, k - 1))
            gk = ps.eval_monomials(cs.exps(k - 2), cs.loc)
            rows = np.zeros((blk.stop - blk.start, 3 * n3))
            for c in range(3):
                gv = gk @ gradM[c][:, 1:]  # (npts, ngrad)
                rows[:, c * n3:(c + 1) * n3] = gv.T @ (cs.w[:, None] * vals)
            D[blk] = rows / cell.volume
        # int w . (xhat ^ c_i), componentwise
        m = ps.dim_full(3, k + 1)
        CF = cs.cross_fields.reshape(3, m, cs.n_cross)
        Xv = ps.eval_monomials(cs.exps(k + 1), cs.loc)
        rows = np.zeros((cs.n_cross, 3 * n3))
        for c in range(3):
            cross_c = Xv @ CF[c]
            rows[:, c * n3:(c + 1) * n3] = cross_c.T @ (cs.w[:, None] * vals)
        D[layout.block("cross",)] = rows / cell.volume
        return D

    # -- DOF-level differential operators -----------------------------------------

    @cached_property
    def grad_dof(self) -> np.ndarray:
        """Nodal cell DOFs -> edge cell DOFs of the gradient."""
        cs, k = self.cs, self.k
        cell, mesh = self.cell, self.mesh
        nly, ely = cs.nodal_layout, cs.edge_layout
        G = np.zeros((ely.ndofs, nly.ndofs))
        hi = np.array([0.5**i for i in range(k + 2)])
        lo = np.array([(-0.5)**i for i in range(k + 2)])
        solver_cache = {}
        for eid in cell.edges:
            e = mesh.edges[eid]
            # trace coefficients from endpoint values + k moments
            n = k + 2
            if n not in solver_cache:
                M = np.zeros((n, n))
                M[0] = lo
                M[1] = hi
                M[2:] = _gram_1d(n)[:k, :]
                solver_cache[n] = np.linalg.inv(M)
            tr = np.zeros((n, nly.ndofs))
            data = np.zeros((n, nly.ndofs))
            data[0, nly.block("vertex", e.verts[0]).start] = 1.0
            data[1, nly.block("vertex", e.verts[1]).start] = 1.0
            eb = nly.block("edge", eid)
            for j in range(k):
                data[2 + j, eb.start + j] = 1.0
            tr = solver_cache[n] @ data
            hi_val = hi @ tr
            lo_val = lo @ tr
            blk = ely.block("edge", eid)
            for j in range(k + 1):
                row = hi_val * 0.5**j - lo_val * (-0.5)**j
                if j >= 1:
                    row = row.copy()
                    row[eb.start + (j - 1)] -= j
                G[blk.start + j] = row / e.length
        for fid in cell.faces:
            f = mesh.faces[fid]
            nx, _ = cs._face_counts(fid)
            if nx:
                gblk = ely.block("facex", fid)
                nblk = nly.block("facex", fid)
                G[gblk, nblk] = np.eye(nx) / f.diameter
        # interior x-moments by parts
        intx = ely.block("intx",)
        nk1 = ps.dim_full(3, k - 1)
        deg3 = cs.exps(k - 1).sum(axis=1)
        nint = nly.block("int",)
        for a in range(nk1):
            row = np.zeros(nly.ndofs)
            row[nint.start + a] = -(3.0 + deg3[a]) * cell.volume
            for fid, sign in zip(cell.faces, cell.face_signs):
                fctx = cs.bank.ctx(fid)
                f = fctx.face
                cf = float((f.barycenter - cell.barycenter) @ f.normal)
                restr = cs.restrict_scalar(
                    np.eye(nk1)[a], k - 1, fid)  # m_a|_f in P_{k-1}(f)
                nops = self._nops(fid)
                sel = cs.face_selector(fid, "nodal")
                piq = np.zeros((ps.dim_full(2, k), nly.ndofs))
                piq[:, sel] = nops.pi0_matrix @ nops.extension
                pair = fctx.gram(k, k - 1) @ restr
                row += sign * cf * (pair @ piq)
            G[intx.start + a] = row / (cell.diameter * cell.volume)
        return G

    @cached_property
    def curl_dof(self) -> np.ndarray:
        """Edge cell DOFs -> face cell DOFs of the curl."""
        cs, k = self.cs, self.k
        cell = self.cell
        ely, fly = cs.edge_layout, cs.face_layout
        C = np.zeros((fly.ndofs, ely.ndofs))
        rotmaps = {fid: self._face_rot_map(fid) for fid in cell.faces}
        for fid in cell.faces:
            fctx = cs.bank.ctx(fid)
            f = fctx.face
            blk = fly.block("facen", fid)
            C[blk] = fctx.gram(k - 1, k - 1) @ rotmaps[fid] \
                / (f.diameter * f.area)
        gblk = fly.block("intgrad",)
        if gblk.stop > gblk.start:
            nk1 = ps.dim_full(3, k - 1)
            for a in range(1, nk1):
                row = np.zeros(ely.ndofs)
                for fid, sign in zip(cell.faces, cell.face_signs):
                    fctx = cs.bank.ctx(fid)
                    f = fctx.face
                    restr = cs.restrict_scalar(np.eye(nk1)[a], k - 1, fid)
                    pair = fctx.gram(k - 1, k - 1) @ restr
                    row += sign * (pair @ rotmaps[fid]) / f.diameter
                C[gblk.start + a - 1] = row * cell.diameter / cell.volume
        cblk = fly.block("cross",)
        C[cblk, ely.block("cross",)] = np.eye(cs.n_cross) / cell.diameter
        return C

    @cached_property
    def div_dof(self) -> np.ndarray:
        """Face cell DOFs -> volume moments of the divergence."""
        cs, k = self.cs, self.k
        cell = self.cell
        fly = cs.face_layout
        nk1 = ps.dim_full(3, k - 1)
        rows = np.zeros((nk1, fly.ndofs))
        gblk = fly.block("intgrad",)
        for a in range(nk1):
            row = np.zeros(fly.ndofs)
            if a >= 1:
                row[gblk.start + a - 1] -= cell.volume / cell.diameter
            for fid, sign in zip(cell.faces, cell.face_signs):
                fctx = cs.bank.ctx(fid)
                f = fctx.face
                restr = cs.restrict_scalar(np.eye(nk1)[a], k - 1, fid)
                pair = fctx.gram(k - 1, k - 1) @ restr  # (nf,)
                blk = fly.block("facen", fid)
                wcoef = np.linalg.solve(fctx.gram(k - 1, k - 1),
                                        np.eye(blk.stop - blk.start)) * f.area
                row[blk] += sign * (pair @ wcoef)
            rows[a] = row / cell.volume
        return rows

    def div_coeff_matrix(self) -> np.ndarray:
        """Face cell DOFs -> P_{k-1} coefficients of the divergence."""
        return np.linalg.solve(self.cs.gram(self.k - 1, self.k - 1),
                               self.div_dof * self.cell.volume)

    # -- face-space projection ------------------------------------------------

    def pi0_face(self, s: int) -> np.ndarray:
        """Face cell DOFs -> (P_s)^3 coefficients, s <= k+1."""
        if s > self.k + 1:
            raise ValueError("face-space projection available up to k+1")
        key = ("pi0f", s)
        if key not in self.cs._cache:
            self.cs._cache[key] = self._build_pi0_face(s)
        return self.cs._cache[key]

    def _build_pi0_face(self, s: int) -> np.ndarray:
        cs, k = self.cs, self.k
        cell = self.cell
        fly = cs.face_layout
        n3 = ps.dim_full(3, s)
        rows = np.zeros((3 * n3, fly.ndofs))
        divmat = self.div_coeff_matrix()
        wtraces = {}
        for fid in cell.faces:
            fctx = cs.bank.ctx(fid)
            blk = fly.block("facen", fid)
            T = np.zeros((ps.dim_full(2, k - 1), fly.ndofs))
            T[:, blk] = np.linalg.solve(fctx.gram(k - 1, k - 1),
                                        np.eye(blk.stop - blk.start)) \
                * fctx.face.area
            wtraces[fid] = T
        for i in range(3 * n3):
            target = np.zeros(3 * n3)
            target[i] = 1.0
            cpsi, cr, _, _ = ps.decompose_3d_grad(target, s)
            psi = np.concatenate([[0.0], cpsi])  # potential in P_{s+1}
            row = np.zeros(fly.ndofs)
            # int w . grad-hat psi = h [ -int (div w) psi + sum_f sign (w.n, psi)_f ]
            row -= cell.diameter * (psi @ cs.gram(k - 1, s + 1).T @ divmat)
            for fid, sign in zip(cell.faces, cell.face_signs):
                fctx = cs.bank.ctx(fid)
                restr = cs.restrict_scalar(psi, s + 1, fid)
                fpair = fctx.gram(k - 1, s + 1) @ restr
                row += cell.diameter * sign * (fpair @ wtraces[fid])
            # int w . (xhat ^ R), expanded over the cross family
            XR = ps.xcross_matrix(s - 1) @ cr  # lives in (P_s)^3
            m = ps.dim_full(3, k + 1)
            pad = np.zeros(3 * m)
            for c in range(3):
                pad[c * m:c * m + n3] = XR[c * n3:(c + 1) * n3]
            cw = ps.expand_in_cross_family(cs.cross_fields, pad)
            row[fly.block("cross",)] += cell.volume * cw
            rows[i] = row
        G = np.kron(np.eye(3), cs.gram(s, s))
        return np.linalg.solve(G, rows)

    # -- local products -----------------------------------------------------------

    def edge_product(self, mu_vals: np.ndarray | float = 1.0) -> np.ndarray:
        """Stabilized mu-weighted product on the edge space.

        mu_vals holds the permeability at the cell quadrature points (or a
        constant).  Consistency: [v, p]_M = int mu Pi0 v . p for poly p.
        """
        cs, k = self.cs, self.k
        mu = np.asarray(mu_vals, dtype=float)
        if mu.ndim == 0:
            mu = np.full(cs.w.shape, float(mu))
        mu0 = float(mu.min())
        vals = cs.mono_vals(k)
        Gmu = vals.T @ ((cs.w * mu)[:, None] * vals)
        Gmu3 = np.kron(np.eye(3), Gmu)
        P = self.pi0_edge
        S = np.eye(cs.edge_layout.ndofs) - self.edge_poly_dofs @ P
        return P.T @ Gmu3 @ P + mu0 * self.cell.volume * (S.T @ S)

    def face_product(self, variant: str = "cheap") -> np.ndarray:
        """SPD product on the face space: DOF-euclidean or projector-based."""
        cs, k = self.cs, self.k
        if variant == "cheap":
            return self.cell.volume * np.eye(cs.face_layout.ndofs)
        if variant != "full":
            raise ValueError(f"unknown face product variant {variant!r}")
        P = self.pi0_face(k + 1)
        G = np.kron(np.eye(3), cs.gram(k + 1, k + 1))
        M = P.T @ G @ P
        fly = cs.face_layout
        for fid in self.cell.faces:
            fctx = cs.bank.ctx(fid)
            f = fctx.face
            n2 = ps.dim_full(2, k + 1)
            blk = fly.block("facen", fid)
            tr_w = np.zeros((n2, fly.ndofs))
            tr_w[:ps.dim_full(2, k - 1), blk] = \
                np.linalg.solve(fctx.gram(k - 1, k - 1),
                                np.eye(blk.stop - blk.start)) * f.area
            # normal trace of the projected polynomial on this face
            Pn = self._normal_trace_rows(fid, P, k + 1)
            D = tr_w - Pn
            M += self.cell.diameter * (D.T @ fctx.gram(k + 1, k + 1) @ D)
        return M

    def _normal_trace_rows(self, fid: int, P: np.ndarray, s: int) -> np.ndarray:
        """DOFs -> 2D coefficients of (Pi w . n_f)|_f."""
        cs = self.cs
        fctx = cs.bank.ctx(fid)
        f = fctx.face
        n3 = ps.dim_full(3, s)
        vals = ps.eval_monomials(cs.exps(s), cs._face_points_local(fid))
        Vn = np.hstack([vals * f.normal[c] for c in range(3)])  # (npts, 3 n3)
        fit = np.linalg.solve(fctx.gram(s, s),
                              fctx.mono_vals(s).T @ (fctx.w[:, None] * Vn))
        return fit @ P

    # -- nodal projection ----------------------------------------------------------

    @cached_property
    def pi0_nodal(self) -> np.ndarray:
        """Nodal cell DOFs -> P_{k-1} coefficients of the projection."""
        cs, k = self.cs, self.k
        blk = cs.nodal_layout.block("int",)
        rows = np.zeros((ps.dim_full(3, k - 1), cs.nodal_layout.ndofs))
        rows[:, blk] = self.cell.volume * np.eye(ps.dim_full(3, k - 1))
        return np.linalg.solve(cs.gram(k - 1, k - 1), rows)
