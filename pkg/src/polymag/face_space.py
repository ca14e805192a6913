"""Local 2D virtual element spaces on mesh faces.

Two families live on each face f:

  * the edge space of order k: tangential traces in P_k per edge, rot in
    P_{k-1}(f), div in P_k(f);
  * the nodal space of order k+1: P_{k+1} traces per edge, Laplacian in
    P_k(f).

Functions are accessed only through their degrees of freedom.  In
serendipity mode the interior moments above degree beta = k+1-eta are
synthesized from a boundary-driven projector instead of being stored.

All in-plane polynomial work happens in the scaled frame coordinates of
the face (see Face.to_local); DOFs are normalized so that O(1) fields
have O(1) DOF values:

  * edge moments       (1/|e|) int_e (v.t) tau^j ds
  * x-moments          (1/|f|) int_f (v.xhat) m_a df
  * rot moments        (1/|f|) int_f (h_f rot v) m0_a df
  * nodal face moments (1/|f|) int_f (grad q . x_f) m_a df
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import polyspace as ps
from .mesh import Face, Mesh
from .quadrature import edge_rule, polygon_rule


class UnisolvenceError(RuntimeError):
    """A projector system lost rank; the face cannot carry the space."""


def _gram_1d(n: int) -> np.ndarray:
    """G[i,j] = int_{-1/2}^{1/2} tau^(i+j) dtau, exact."""
    G = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            p = i + j
            G[i, j] = 0.0 if p % 2 else 2.0 * 0.5 ** (p + 1) / (p + 1)
    return G


def _tau_powers(tau: np.ndarray, n: int) -> np.ndarray:
    return np.column_stack([tau**j for j in range(n)])


class FaceContext:
    """Geometry, quadrature, and Gram matrices shared by both face spaces."""

    def __init__(self, mesh: Mesh, fid: int, k: int):
        self.mesh = mesh
        self.fid = fid
        self.k = k
        self.face: Face = mesh.faces[fid]
        self.quad = polygon_rule(mesh.vertices[list(self.face.loop)],
                                 self.face.barycenter, 2 * k + 8)
        self.loc = self.face.to_local(self.quad.points)
        self.w = self.quad.weights
        self._edge_rules: dict = {}
        self._cache: dict = {}

    def exps(self, degree: int) -> np.ndarray:
        return ps.monomial_exponents(2, degree)

    def mono_vals(self, degree: int) -> np.ndarray:
        """(npts, dim P_degree) monomial values at the face quadrature."""
        key = ("vals", degree)
        if key not in self._cache:
            self._cache[key] = ps.eval_monomials(self.exps(degree), self.loc)
        return self._cache[key]

    def gram(self, da: int, db: int) -> np.ndarray:
        key = ("gram", da, db)
        if key not in self._cache:
            A = self.mono_vals(da)
            B = self.mono_vals(db)
            self._cache[key] = A.T @ (self.w[:, None] * B)
        return self._cache[key]

    def means(self, degree: int) -> np.ndarray:
        """Entity averages of the monomials, for zero-mean corrections."""
        return self.w @ self.mono_vals(degree) / self.face.area

    def edge_data(self, eid: int, degree: int | None = None):
        """Quadrature along one boundary edge in canonical orientation.

        Returns (tau, weights, loc2d, t_loc): tau is the canonical edge
        parameter in [-1/2, 1/2], weights carry the physical ds, loc2d the
        scaled frame coordinates, t_loc the canonical tangent in frame
        components.
        """
        deg = 2 * self.k + 8 if degree is None else degree
        key = (eid, deg)
        if key not in self._edge_rules:
            e = self.mesh.edges[eid]
            p0 = self.mesh.vertices[e.verts[0]]
            p1 = self.mesh.vertices[e.verts[1]]
            rule = edge_rule(p0, p1, deg)
            tau = ((rule.points - e.midpoint) @ e.tangent) / e.length
            loc = self.face.to_local(rule.points)
            t_loc = self.face.tangent_components(e.tangent[None, :])[0]
            self._edge_rules[key] = (tau, rule.weights, loc, t_loc)
        return self._edge_rules[key]

    def edge_trace_inverse(self, n: int) -> np.ndarray:
        """Map n scaled moments of a P_{n-1}(e) trace to tau-coefficients."""
        key = ("tri", n)
        if key not in self._cache:
            self._cache[key] = np.linalg.inv(_gram_1d(n))
        return self._cache[key]

    def nodal_trace_solver(self) -> np.ndarray:
        """Map [q(lo), q(hi), k moments] to P_{k+1}(e) tau-coefficients."""
        key = "nodal_trace"
        if key not in self._cache:
            k = self.k
            n = k + 2
            M = np.zeros((n, n))
            M[0] = [(-0.5) ** i for i in range(n)]
            M[1] = [(0.5) ** i for i in range(n)]
            M[2:] = _gram_1d(n)[:k, :]
            self._cache[key] = np.linalg.inv(M)
        return self._cache[key]


# ---------------------------------------------------------------------------
# DOF layouts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FaceSpace:
    """DOF layout of one local face space.

    kind is 'edge' or 'nodal'; mode is 'standard' or 'serendipity'.  The
    x-moment (resp. gradient-moment) block runs to degree k in standard
    mode and to beta = k+1-eta in serendipity mode.
    """

    ctx: FaceContext
    kind: str
    mode: str

    @property
    def k(self) -> int:
        return self.ctx.k

    @property
    def eta(self) -> int:
        return self.ctx.face.eta

    @property
    def beta(self) -> int:
        return self.k + 1 - self.eta

    @property
    def moment_degree(self) -> int:
        return self.k if self.mode == "standard" else self.beta

    @property
    def n_vertex_dofs(self) -> int:
        return len(self.ctx.face.loop) if self.kind == "nodal" else 0

    @property
    def n_edge_dofs(self) -> int:
        per = (self.k + 1) if self.kind == "edge" else self.k
        return per * len(self.ctx.face.edges)

    @property
    def n_moment_dofs(self) -> int:
        return ps.dim_full(2, self.moment_degree)

    @property
    def n_rot_dofs(self) -> int:
        if self.kind != "edge":
            return 0
        return ps.poly_dim(2, self.k - 1, "zero-mean")

    @property
    def ndofs(self) -> int:
        return (self.n_vertex_dofs + self.n_edge_dofs + self.n_moment_dofs
                + self.n_rot_dofs)

    def edge_block(self, pos: int) -> slice:
        """DOFs of the pos-th edge of the face loop."""
        per = (self.k + 1) if self.kind == "edge" else self.k
        start = self.n_vertex_dofs + pos * per
        return slice(start, start + per)

    @property
    def moment_block(self) -> slice:
        start = self.n_vertex_dofs + self.n_edge_dofs
        return slice(start, start + self.n_moment_dofs)

    @property
    def rot_block(self) -> slice:
        start = self.n_vertex_dofs + self.n_edge_dofs + self.n_moment_dofs
        return slice(start, start + self.n_rot_dofs)

    def descriptors(self):
        """(entity_kind, entity_id, local_index) per DOF, layout order."""
        f = self.ctx.face
        out = []
        if self.kind == "nodal":
            out += [("vertex", v, 0) for v in f.loop]
        per = (self.k + 1) if self.kind == "edge" else self.k
        for eid in f.edges:
            out += [("edge", eid, j) for j in range(per)]
        out += [("face", self.ctx.fid, j) for j in range(self.n_moment_dofs)]
        out += [("face", self.ctx.fid, self.n_moment_dofs + j)
                for j in range(self.n_rot_dofs)]
        return out


def build_face_space(mesh: Mesh, fid: int, k: int, kind: str,
                     mode: str = "standard",
                     ctx: FaceContext | None = None) -> FaceSpace:
    if k < 1:
        raise ValueError("order k must be >= 1")
    if kind not in ("edge", "nodal"):
        raise ValueError(f"unknown kind {kind!r}")
    if mode not in ("standard", "serendipity"):
        raise ValueError(f"unknown mode {mode!r}")
    return FaceSpace(ctx or FaceContext(mesh, fid, k), kind, mode)


# ---------------------------------------------------------------------------
# edge-kind operators
# ---------------------------------------------------------------------------

class EdgeFaceOperators:
    """Computable maps out of the DOFs of the edge-kind face space.

    Matrices act on *standard* DOF vectors unless noted; ``extension``
    turns serendipity vectors into standard ones first.
    """

    def __init__(self, space: FaceSpace):
        if space.kind != "edge":
            raise ValueError("edge-kind space expected")
        self.space = space
        self.ctx = space.ctx
        self.std = space if space.mode == "standard" else \
            FaceSpace(space.ctx, "edge", "standard")

    def _edge_tangent_values(self, pos: int):
        """(values, tau, wts): trace values of v.t_can at edge quadrature,
        as a (npts, k+1) matrix acting on the edge DOF block."""
        ctx, k = self.ctx, self.space.k
        eid = ctx.face.edges[pos]
        tau, wts, loc, t_loc = ctx.edge_data(eid)
        trv = _tau_powers(tau, k + 1) @ ctx.edge_trace_inverse(k + 1)
        return trv, tau, wts, loc, t_loc

    # -- rot recovery -------------------------------------------------------

    @cached_property
    def rot_matrix(self) -> np.ndarray:
        """Standard DOFs -> coefficients of h_f * rot v in P_{k-1}(f).

        The mean comes from the Stokes circulation, higher moments from
        the rot DOFs.
        """
        ctx, k = self.ctx, self.space.k
        f = ctx.face
        nk1 = ps.dim_full(2, k - 1)
        stokes = np.zeros(self.std.ndofs)
        for pos, (eid, esign) in enumerate(zip(f.edges, f.edge_signs)):
            stokes[self.std.edge_block(pos).start] += \
                esign * ctx.mesh.edges[eid].length
        stokes *= f.diameter  # int_f (h rot v) = h * circulation
        means = ctx.means(k - 1)
        B = np.zeros((nk1, self.std.ndofs))
        B[0] = stokes
        for a in range(1, nk1):
            B[a] = means[a] * stokes
            B[a, self.std.rot_block.start + (a - 1)] += f.area
        return np.linalg.solve(ctx.gram(k - 1, k - 1), B)

    def rot_from_dofs(self, dofs: np.ndarray) -> np.ndarray:
        """Physical rot v in P_{k-1}(f) coefficients, from mode DOFs."""
        std = self.extension @ np.asarray(dofs, dtype=float)
        return (self.rot_matrix @ std) / self.ctx.face.diameter

    # -- moment functionals and L2 projections --------------------------------

    def moment_matrix(self, s: int) -> np.ndarray:
        """Standard DOFs -> [int_f v . Phi_i] over the (P_s)^2 basis.

        Splits Phi = brot(q) + xhat w in scaled coordinates, then
        int v.Phi = int (h rot v) q - h sum_e sign int_e (v.t) q + |f| d_x.w.
        """
        if s > self.space.k + 1:
            raise ValueError("moments are computable only up to degree k+1")
        key = ("mom", s)
        if key not in self.ctx._cache:
            self.ctx._cache[key] = self._build_moment_matrix(s)
        return self.ctx._cache[key]

    def _build_moment_matrix(self, s: int) -> np.ndarray:
        ctx, k = self.ctx, self.space.k
        f = ctx.face
        n_s = ps.dim_full(2, s)
        nq = ps.dim_full(2, s + 1)
        # decompose all basis fields at once
        qpots = np.zeros((nq, 2 * n_s))
        wparts = np.zeros((ps.dim_full(2, s - 1), 2 * n_s))
        for i in range(2 * n_s):
            target = np.zeros(2 * n_s)
            target[i] = 1.0
            cq, cw, _, _ = ps.decompose_2d_rot(target, s)
            qpots[1:, i] = cq
            wparts[:, i] = cw
        rows = np.zeros((2 * n_s, self.std.ndofs))
        # volume rot term
        rows += (self.rot_matrix.T @ ctx.gram(k - 1, s + 1) @ qpots).T
        # boundary terms
        qexp = ctx.exps(s + 1)
        for pos, (eid, esign) in enumerate(zip(f.edges, f.edge_signs)):
            trv, tau, wts, loc, _ = self._edge_tangent_values(pos)
            qvals = ps.eval_monomials(qexp, loc) @ qpots  # (npts, 2 n_s)
            blk = self.std.edge_block(pos)
            rows[:, blk] += -f.diameter * esign * (qvals.T @ (wts[:, None] * trv))
        # x-moment term; P_{s-1} monomials are a prefix of the P_k block
        mb = self.std.moment_block
        rows[:, mb.start:mb.start + wparts.shape[0]] += f.area * wparts.T
        return rows

    def pi0_matrix(self, s: int) -> np.ndarray:
        """Standard DOFs -> coefficients of the L2 projection on (P_s)^2."""
        G = np.kron(np.eye(2), self.ctx.gram(s, s))
        return np.linalg.solve(G, self.moment_matrix(s))

    def pi0(self, dofs: np.ndarray, s: int | None = None) -> np.ndarray:
        s = self.space.k + 1 if s is None else s
        return self.pi0_matrix(s) @ (self.extension @ np.asarray(dofs, float))

    # -- polynomial DOFs -------------------------------------------------------

    @cached_property
    def poly_dofs(self) -> np.ndarray:
        """Standard DOF values of every (P_k)^2 basis field."""
        return self.poly_dofs_of_degree(self.space.k)

    def poly_dofs_of_degree(self, s: int) -> np.ndarray:
        """Standard DOFs of (P_s)^2 basis fields, (ndofs, 2 dim P_s)."""
        ctx, k = self.ctx, self.space.k
        f = ctx.face
        n_s = ps.dim_full(2, s)
        exps = ctx.exps(s)
        D = np.zeros((self.std.ndofs, 2 * n_s))
        for pos, eid in enumerate(f.edges):
            e = ctx.mesh.edges[eid]
            tau, wts, loc, t_loc = ctx.edge_data(eid)
            vals = ps.eval_monomials(exps, loc)
            vt = np.hstack([vals * t_loc[0], vals * t_loc[1]])
            D[self.std.edge_block(pos), :] = \
                _tau_powers(tau, k + 1).T @ (wts[:, None] * vt) / e.length
        vals = ctx.mono_vals(s)
        xv = np.hstack([vals * ctx.loc[:, 0:1], vals * ctx.loc[:, 1:2]])
        D[self.std.moment_block, :] = \
            ctx.mono_vals(k).T @ (ctx.w[:, None] * xv) / f.area
        if self.std.n_rot_dofs:
            # scaled rot equals h * physical rot, matching the DOF scaling
            rotvals = ctx.mono_vals(s - 1) @ ps.rot2d_matrix(s)
            means = ctx.means(k - 1)
            m0 = ctx.mono_vals(k - 1)[:, 1:] - means[1:][None, :]
            D[self.std.rot_block, :] = m0.T @ (ctx.w[:, None] * rotvals) / f.area
        return D

    # -- serendipity projector and extension -----------------------------------

    @cached_property
    def serendipity(self) -> np.ndarray:
        """Serendipity DOFs -> (P_k)^2 coefficients of the projector."""
        L, R = self._serendipity_system()
        rank = np.linalg.matrix_rank(L, tol=1e-10 * max(np.linalg.norm(L), 1))
        if rank < 2 * ps.dim_full(2, self.space.k):
            raise UnisolvenceError(
                f"edge serendipity system on face {self.ctx.fid} has rank "
                f"{rank} < {2 * ps.dim_full(2, self.space.k)}")
        sol, *_ = np.linalg.lstsq(L, R, rcond=None)
        return sol

    def _serendipity_system(self):
        ctx, k = self.ctx, self.space.k
        f = ctx.face
        space = self.space if self.space.mode == "serendipity" else \
            FaceSpace(ctx, "edge", "serendipity")
        n_k = ps.dim_full(2, k)
        npoly = 2 * n_k
        n_k1 = ps.dim_full(2, k + 1)
        nb = ps.dim_full(2, space.beta)
        ncond = (n_k1 - 1) + 1 + space.n_rot_dofs + nb
        L = np.zeros((ncond, npoly))
        R = np.zeros((ncond, space.ndofs))
        exps_k = ctx.exps(k)
        gradM = ps.grad_matrix(2, k + 1).reshape(2, -1, n_k1)
        r1 = slice(0, n_k1 - 1)
        # (1) tangential trace against gradients of P_{k+1} (constant dropped)
        for pos, eid in enumerate(f.edges):
            trv, tau, wts, loc, t_loc = self._edge_tangent_values(pos)
            gk = ps.eval_monomials(ctx.exps(k), loc)
            gpt = (gk @ gradM[0] * t_loc[0] + gk @ gradM[1] * t_loc[1]) \
                / f.diameter  # (npts, n_k1), physical d p / dt
            vals = ps.eval_monomials(exps_k, loc)
            vt = np.hstack([vals * t_loc[0], vals * t_loc[1]])
            L[r1] += gpt[:, 1:].T @ (wts[:, None] * vt)
            R[r1, space.edge_block(pos)] += gpt[:, 1:].T @ (wts[:, None] * trv)
        r = n_k1 - 1
        # (2) mean circulation
        for pos, (eid, esign) in enumerate(zip(f.edges, f.edge_signs)):
            e = ctx.mesh.edges[eid]
            tau, wts, loc, t_loc = ctx.edge_data(eid)
            vals = ps.eval_monomials(exps_k, loc)
            vt = np.hstack([vals * t_loc[0], vals * t_loc[1]])
            L[r] += esign * (wts @ vt)
            R[r, space.edge_block(pos).start] += esign * e.length
        r += 1
        # (3) rot moments against zero-mean P_{k-1}, h-scaled on both sides
        if space.n_rot_dofs:
            rotvals = ctx.mono_vals(k - 1) @ ps.rot2d_matrix(k)
            means = ctx.means(k - 1)
            m0 = ctx.mono_vals(k - 1)[:, 1:] - means[1:][None, :]
            L[r:r + space.n_rot_dofs] = m0.T @ (ctx.w[:, None] * rotvals)
            R[r:r + space.n_rot_dofs, space.rot_block] = \
                f.area * np.eye(space.n_rot_dofs)
            r += space.n_rot_dofs
        # (4) x-moments up to beta
        if nb > 0:
            vals = ctx.mono_vals(k)
            xv = np.hstack([vals * ctx.loc[:, 0:1], vals * ctx.loc[:, 1:2]])
            L[r:r + nb] = ctx.mono_vals(space.beta).T @ (ctx.w[:, None] * xv)
            R[r:r + nb, space.moment_block] = f.area * np.eye(nb)
        return L, R

    @cached_property
    def extension(self) -> np.ndarray:
        """Mode DOFs -> standard DOFs; missing x-moments come from Pi_S."""
        if self.space.mode == "standard":
            return np.eye(self.std.ndofs)
        ctx, k = self.ctx, self.space.k
        space = self.space
        E = np.zeros((self.std.ndofs, space.ndofs))
        for pos in range(len(ctx.face.edges)):
            E[self.std.edge_block(pos), space.edge_block(pos)] = np.eye(k + 1)
        if space.n_rot_dofs:
            E[self.std.rot_block, space.rot_block] = np.eye(space.n_rot_dofs)
        nb = space.n_moment_dofs
        start = self.std.moment_block.start
        if nb > 0:
            E[start:start + nb, space.moment_block] = np.eye(nb)
        vals = ctx.mono_vals(k)
        xv = np.hstack([vals * ctx.loc[:, 0:1], vals * ctx.loc[:, 1:2]])
        Xm = ctx.mono_vals(k).T @ (ctx.w[:, None] * xv) / ctx.face.area
        E[start + nb:start + self.std.n_moment_dofs, :] = \
            (Xm @ self.serendipity)[nb:, :]
        return E

    # -- scalar products ---------------------------------------------------------

    @cached_property
    def product_escbd(self) -> np.ndarray:
        """Product from the Pi_{k+1} + boundary-tangential-trace norm
        (the default face inner product), on standard DOFs."""
        ctx, k = self.ctx, self.space.k
        f = ctx.face
        P = self.pi0_matrix(k + 1)
        G = np.kron(np.eye(2), ctx.gram(k + 1, k + 1))
        M = P.T @ G @ P
        exps = ctx.exps(k + 1)
        Tinv1 = ctx.edge_trace_inverse(k + 2)
        G1 = _gram_1d(k + 2)
        for pos, eid in enumerate(f.edges):
            e = ctx.mesh.edges[eid]
            tau, wts, loc, t_loc = ctx.edge_data(eid)
            vals = ps.eval_monomials(exps, loc)
            vt = np.hstack([vals * t_loc[0], vals * t_loc[1]])
            mom = _tau_powers(tau, k + 2).T @ (wts[:, None] * vt) / e.length
            tr_pi = Tinv1 @ mom @ P
            tr_v = np.zeros((k + 2, self.std.ndofs))
            tr_v[:k + 1, self.std.edge_block(pos)] = ctx.edge_trace_inverse(k + 1)
            Dtr = tr_v - tr_pi
            M += f.diameter * e.length * (Dtr.T @ G1 @ Dtr)
        return M

    @cached_property
    def product_dofi(self) -> np.ndarray:
        """Product from the Pi_k norm plus the DOF-euclidean stabilizer."""
        ctx, k = self.ctx, self.space.k
        P = self.pi0_matrix(k)
        G = np.kron(np.eye(2), ctx.gram(k, k))
        S = np.eye(self.std.ndofs) - self.poly_dofs @ P
        return P.T @ G @ P + ctx.face.area * (S.T @ S)


# ---------------------------------------------------------------------------
# nodal-kind operators
# ---------------------------------------------------------------------------

class NodalFaceOperators:
    """Computable maps out of the DOFs of the nodal-kind face space."""

    def __init__(self, space: FaceSpace):
        if space.kind != "nodal":
            raise ValueError("nodal-kind space expected")
        self.space = space
        self.ctx = space.ctx
        self.std = space if space.mode == "standard" else \
            FaceSpace(space.ctx, "nodal", "standard")

    def _edge_trace_rows(self, space: FaceSpace, pos: int) -> np.ndarray:
        """DOFs -> tau-coefficients of the trace on the pos-th loop edge."""
        ctx, k = self.ctx, self.space.k
        f = ctx.face
        eid = f.edges[pos]
        e = ctx.mesh.edges[eid]
        vpos = {v: i for i, v in enumerate(f.loop)}
        data = np.zeros((k + 2, space.ndofs))
        data[0, vpos[e.verts[0]]] = 1.0
        data[1, vpos[e.verts[1]]] = 1.0
        blk = space.edge_block(pos)
        for j in range(k):
            data[2 + j, blk.start + j] = 1.0
        return ctx.nodal_trace_solver() @ data

    def _xdotgrad(self) -> np.ndarray:
        """x.grad in scaled coordinates, P_{k+1} -> P_{k+1} coefficients."""
        k = self.space.k
        return sum(ps.shift_matrix(2, k, c) @ ps.deriv_matrix(2, k + 1, c)
                   for c in range(2))

    @cached_property
    def serendipity(self) -> np.ndarray:
        """Serendipity DOFs -> P_{k+1} coefficients of the nodal projector."""
        L, R = self._serendipity_system()
        rank = np.linalg.matrix_rank(L, tol=1e-10 * max(np.linalg.norm(L), 1))
        if rank < ps.dim_full(2, self.space.k + 1):
            raise UnisolvenceError(
                f"nodal serendipity system on face {self.ctx.fid} has rank "
                f"{rank} < {ps.dim_full(2, self.space.k + 1)}")
        sol, *_ = np.linalg.lstsq(L, R, rcond=None)
        return sol

    def _serendipity_system(self):
        ctx, k = self.ctx, self.space.k
        f = ctx.face
        space = self.space if self.space.mode == "serendipity" else \
            FaceSpace(ctx, "nodal", "serendipity")
        npoly = ps.dim_full(2, k + 1)
        nb = ps.dim_full(2, space.beta)
        ncond = (npoly - 1) + 1 + nb
        L = np.zeros((ncond, npoly))
        R = np.zeros((ncond, space.ndofs))
        gradM = ps.grad_matrix(2, k + 1).reshape(2, -1, npoly)
        r1 = slice(0, npoly - 1)
        for pos, eid in enumerate(f.edges):
            e = ctx.mesh.edges[eid]
            tau, wts, loc, t_loc = ctx.edge_data(eid)
            gk = ps.eval_monomials(ctx.exps(k), loc)
            gpt = (gk @ gradM[0] * t_loc[0] + gk @ gradM[1] * t_loc[1]) \
                / f.diameter
            # d/ds of the trace from the tau-coefficients
            tr = self._edge_trace_rows(space, pos)
            dcoef = np.zeros((k + 1, space.ndofs))
            for j in range(1, k + 2):
                dcoef[j - 1] = j * tr[j] / e.length
            dq = _tau_powers(tau, k + 1) @ dcoef
            L[r1] += gpt[:, 1:].T @ (wts[:, None] * gpt)
            R[r1] += gpt[:, 1:].T @ (wts[:, None] * dq)
        r = npoly - 1
        # weighted boundary mean: int (x_f.n) q
        exps1 = ctx.exps(k + 1)
        for pos, (eid, esign) in enumerate(zip(f.edges, f.edge_signs)):
            tau, wts, loc, t_loc = ctx.edge_data(eid)
            t_loop = esign * t_loc
            n_loc = np.array([t_loop[1], -t_loop[0]])  # outward for CCW loops
            xn = (loc @ n_loc) * f.diameter
            qvals = _tau_powers(tau, k + 2) @ self._edge_trace_rows(space, pos)
            R[r] += qvals.T @ (wts * xn)
            L[r] += ps.eval_monomials(exps1, loc).T @ (wts * xn)
        r += 1
        if nb > 0:
            vals1 = ctx.mono_vals(k + 1)
            L[r:r + nb] = ctx.mono_vals(space.beta).T @ \
                (ctx.w[:, None] * (vals1 @ self._xdotgrad().T))
            R[r:r + nb, space.moment_block] = f.area * np.eye(nb)
        return L, R

    @cached_property
    def extension(self) -> np.ndarray:
        """Mode DOFs -> standard DOFs (identity in standard mode)."""
        if self.space.mode == "standard":
            return np.eye(self.std.ndofs)
        ctx, k = self.ctx, self.space.k
        space = self.space
        E = np.zeros((self.std.ndofs, space.ndofs))
        nvert = space.n_vertex_dofs
        E[:nvert, :nvert] = np.eye(nvert)
        for pos in range(len(ctx.face.edges)):
            E[self.std.edge_block(pos), space.edge_block(pos)] = np.eye(k)
        nb = space.n_moment_dofs
        start = self.std.moment_block.start
        if nb > 0:
            E[start:start + nb, space.moment_block] = np.eye(nb)
        vals1 = ctx.mono_vals(k + 1)
        Gm = ctx.mono_vals(k).T @ \
            (ctx.w[:, None] * (vals1 @ self._xdotgrad().T)) / ctx.face.area
        E[start + nb:start + self.std.n_moment_dofs, :] = \
            (Gm @ self.serendipity)[nb:, :]
        return E

    @cached_property
    def pi0_matrix(self) -> np.ndarray:
        """Standard DOFs -> coefficients of the L2(f) projection on P_k(f).

        Uses int q p = -int grad q . (x_f w) + int_bd q (x_f.n) w with
        div(x_f w) = p, solvable degree by degree since centered monomials
        are homogeneous.
        """
        ctx, k = self.ctx, self.space.k
        f = ctx.face
        nk = ps.dim_full(2, k)
        deg = ctx.exps(k).sum(axis=1)
        rows = np.zeros((nk, self.std.ndofs))
        trs = [self._edge_trace_rows(self.std, pos)
               for pos in range(len(f.edges))]
        for a in range(nk):
            scale = 1.0 / (2.0 + deg[a])
            row = np.zeros(self.std.ndofs)
            row[self.std.moment_block.start + a] = -f.area * scale
            for pos, (eid, esign) in enumerate(zip(f.edges, f.edge_signs)):
                tau, wts, loc, t_loc = ctx.edge_data(eid)
                t_loop = esign * t_loc
                n_loc = np.array([t_loop[1], -t_loop[0]])
                xn = (loc @ n_loc) * f.diameter
                wv = ps.eval_monomials(ctx.exps(k), loc)[:, a] * scale
                qvals = _tau_powers(tau, k + 2) @ trs[pos]
                row += qvals.T @ (wts * xn * wv)
            rows[a] = row
        return np.linalg.solve(ctx.gram(k, k), rows)

    @cached_property
    def poly_dofs(self) -> np.ndarray:
        """Standard DOF values of every P_{k+1} basis polynomial."""
        ctx, k = self.ctx, self.space.k
        f = ctx.face
        exps1 = ctx.exps(k + 1)
        D = np.zeros((self.std.ndofs, ps.dim_full(2, k + 1)))
        locv = f.to_local(ctx.mesh.vertices[list(f.loop)])
        D[:len(f.loop)] = ps.eval_monomials(exps1, locv)
        for pos, eid in enumerate(f.edges):
            e = ctx.mesh.edges[eid]
            tau, wts, loc, _ = ctx.edge_data(eid)
            vals = ps.eval_monomials(exps1, loc)
            D[self.std.edge_block(pos)] = \
                _tau_powers(tau, k).T @ (wts[:, None] * vals) / e.length
        vals1 = ctx.mono_vals(k + 1)
        D[self.std.moment_block] = ctx.mono_vals(k).T @ \
            (ctx.w[:, None] * (vals1 @ self._xdotgrad().T)) / f.area
        return D


def grad_dof_matrix_2d(nodal: NodalFaceOperators,
                       edge: EdgeFaceOperators) -> np.ndarray:
    """Nodal DOFs -> edge-space DOFs of the tangential gradient.

    Both spaces must share the face and mode.  Edge moments integrate by
    parts along each edge; x-moments are rescaled nodal face moments; the
    rot block of a gradient vanishes.
    """
    ctx = nodal.ctx
    k = nodal.space.k
    f = ctx.face
    nsp, esp = nodal.space, edge.space
    if nsp.mode != esp.mode:
        raise ValueError("nodal and edge spaces must share the mode")
    G = np.zeros((esp.ndofs, nsp.ndofs))
    hi_pows = np.array([0.5**i for i in range(k + 2)])
    lo_pows = np.array([(-0.5)**i for i in range(k + 2)])
    for pos, eid in enumerate(f.edges):
        e = ctx.mesh.edges[eid]
        tr = nodal._edge_trace_rows(nsp, pos)
        hi_val = hi_pows @ tr
        lo_val = lo_pows @ tr
        blk = esp.edge_block(pos)
        for j in range(k + 1):
            row = hi_val * 0.5**j - lo_val * (-0.5)**j
            if j >= 1:
                row = row.copy()
                row[nsp.edge_block(pos).start + (j - 1)] -= j
            G[blk.start + j] = row / e.length
    nb = esp.n_moment_dofs
    if nb > 0:
        start = esp.moment_block.start
        G[start:start + nb, nsp.moment_block] = np.eye(nb) / f.diameter
    return G
