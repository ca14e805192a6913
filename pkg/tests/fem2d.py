"""Conforming FE oracle for the face spaces, used only by tests.

The virtual functions have no closed form.  This module resolves them on
a sub-triangulated face with P4 Lagrange elements by solving the defining
conditions directly:

  * edge kind: rot v is a known polynomial, so v = w + grad(phi) with a
    polynomial particular field w; phi solves a Poisson problem whose
    polynomial right-hand side (the unknown divergence) is pinned by the
    x-moment DOFs, with Dirichlet data integrated from the tangential
    traces;
  * nodal kind: q solves Laplace(q) = g with g in P_k pinned by the
    gradient moments, boundary traces taken from the DOFs.

Everything is set up in the scaled frame coordinates of the face; for
k <= 3 the boundary data is representable exactly by the P4 trace space,
so the only oracle error is the interior FE error of the Poisson solves.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from polymag import polyspace as ps
from polymag.face_space import _tau_powers
from polymag.quadrature import gauss01, triangle_rule

P_ORDER = 4


def _ref_nodes(order: int) -> np.ndarray:
    pts = []
    for i in range(order + 1):
        for j in range(order + 1 - i):
            pts.append((i / order, j / order))
    return np.array(pts)


class _RefElement:
    def __init__(self, order: int = P_ORDER):
        self.order = order
        self.nodes = _ref_nodes(order)
        self.exps = ps.monomial_exponents(2, order)
        self.Vinv = np.linalg.inv(ps.eval_monomials(self.exps, self.nodes))

    def eval(self, pts: np.ndarray) -> np.ndarray:
        return ps.eval_monomials(self.exps, pts) @ self.Vinv

    def grad(self, pts: np.ndarray):
        lo = ps.eval_monomials(ps.monomial_exponents(2, self.order - 1), pts)
        dx = lo @ ps.deriv_matrix(2, self.order, 0) @ self.Vinv
        dy = lo @ ps.deriv_matrix(2, self.order, 1) @ self.Vinv
        return dx, dy


_REF = _RefElement()


def _split4(tri: np.ndarray):
    a, b, c = tri
    ab, bc, ca = 0.5 * (a + b), 0.5 * (b + c), 0.5 * (c + a)
    return [np.array([a, ab, ca]), np.array([ab, b, bc]),
            np.array([ca, bc, c]), np.array([ab, bc, ca])]


class FaceTriangulation:
    """Fan triangulation of the face polygon (local coords) + refinements."""

    def __init__(self, ctx, refine: int = 3):
        self.ctx = ctx
        loop = list(ctx.face.loop)
        base = ctx.face.to_local(ctx.mesh.vertices[loop])
        tris = []
        nv = len(loop)
        for i in range(nv):
            tris.append(np.array([[0.0, 0.0], base[i], base[(i + 1) % nv]]))
        for _ in range(refine):
            tris = [t for tri in tris for t in _split4(tri)]
        self.tris = np.array(tris)
        self._number_nodes()
        self._setup_quadrature()

    def _number_nodes(self):
        lam = _ref_nodes(_REF.order)
        coords: dict = {}
        conn = np.zeros((len(self.tris), lam.shape[0]), dtype=int)
        for t, tri in enumerate(self.tris):
            pts = (1 - lam[:, 0:1] - lam[:, 1:2]) * tri[0] \
                + lam[:, 0:1] * tri[1] + lam[:, 1:2] * tri[2]
            for i, p in enumerate(pts):
                key = (round(p[0], 10), round(p[1], 10))
                if key not in coords:
                    coords[key] = (len(coords), p)
                conn[t, i] = coords[key][0]
        self.nodes = np.array([p for _, p in coords.values()])
        self.conn = conn

    def _setup_quadrature(self):
        rule = triangle_rule(np.zeros(2), np.array([1.0, 0.0]),
                             np.array([0.0, 1.0]), 2 * _REF.order + 2)
        self.ref_pts = rule.points
        self.ref_w = rule.weights  # integrates over the unit triangle
        self.shp = _REF.eval(rule.points)
        self.gl1, self.gl2 = _REF.grad(rule.points)
        A = self.tris[:, 1] - self.tris[:, 0]
        B = self.tris[:, 2] - self.tris[:, 0]
        self.det = A[:, 0] * B[:, 1] - A[:, 1] * B[:, 0]
        self.inv = np.stack([
            np.stack([B[:, 1], -B[:, 0]], axis=1),
            np.stack([-A[:, 1], A[:, 0]], axis=1)], axis=1) / \
            self.det[:, None, None]

    def tri_weights(self, t: int) -> np.ndarray:
        # reference weights sum to 1/2; |det| is twice the triangle area
        return self.ref_w * abs(self.det[t])

    def quad_points(self, t: int) -> np.ndarray:
        tri = self.tris[t]
        return tri[0] + self.ref_pts @ np.stack([tri[1] - tri[0],
                                                 tri[2] - tri[0]])

    def phys_grads(self, t: int):
        J = self.inv[t]
        gx = self.gl1 * J[0, 0] + self.gl2 * J[1, 0]
        gy = self.gl1 * J[0, 1] + self.gl2 * J[1, 1]
        return gx, gy

    def boundary_nodes(self) -> np.ndarray:
        base = self.ctx.face.to_local(
            self.ctx.mesh.vertices[list(self.ctx.face.loop)])
        nv = base.shape[0]
        onb = np.zeros(len(self.nodes), dtype=bool)
        for i in range(nv):
            a, b = base[i], base[(i + 1) % nv]
            d = b - a
            nrm = np.linalg.norm(d)
            off = self.nodes - a
            cross = np.abs(off[:, 0] * d[1] - off[:, 1] * d[0]) / nrm
            tpar = (off @ d) / nrm**2
            onb |= (cross < 1e-9) & (tpar > -1e-9) & (tpar < 1 + 1e-9)
        return np.where(onb)[0]

    def stiffness(self) -> sp.csr_matrix:
        n = len(self.nodes)
        nloc = self.shp.shape[1]
        rows, cols, vals = [], [], []
        for t in range(len(self.tris)):
            gx, gy = self.phys_grads(t)
            w = self.tri_weights(t)
            K = gx.T @ (w[:, None] * gx) + gy.T @ (w[:, None] * gy)
            idx = self.conn[t]
            rows.append(np.repeat(idx, nloc))
            cols.append(np.tile(idx, nloc))
            vals.append(K.ravel())
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n))

    def load_rows(self, funcs) -> np.ndarray:
        """Rows int shape_i * g(pts) for each scalar g."""
        out = np.zeros((len(funcs), len(self.nodes)))
        for t in range(len(self.tris)):
            pts = self.quad_points(t)
            w = self.tri_weights(t)
            idx = self.conn[t]
            for r, g in enumerate(funcs):
                out[r, idx] += self.shp.T @ (w * g(pts))
        return out

    def grad_moment_rows(self, funcs) -> np.ndarray:
        """Rows int grad(shape_i) . F(pts) for each vector field F."""
        out = np.zeros((len(funcs), len(self.nodes)))
        for t in range(len(self.tris)):
            pts = self.quad_points(t)
            gx, gy = self.phys_grads(t)
            w = self.tri_weights(t)
            idx = self.conn[t]
            for r, F in enumerate(funcs):
                fv = F(pts)
                out[r, idx] += gx.T @ (w * fv[:, 0]) + gy.T @ (w * fv[:, 1])
        return out

    def locate(self, pts: np.ndarray):
        pts = np.atleast_2d(pts)
        d = pts[:, None, :] - self.tris[None, :, 0, :]
        l1 = self.inv[None, :, 0, 0] * d[:, :, 0] + self.inv[None, :, 0, 1] * d[:, :, 1]
        l2 = self.inv[None, :, 1, 0] * d[:, :, 0] + self.inv[None, :, 1, 1] * d[:, :, 1]
        score = np.minimum(np.minimum(l1, l2), 1 - l1 - l2)
        tidx = np.argmax(score, axis=1)
        take = np.arange(len(pts))
        return tidx, np.column_stack([l1[take, tidx], l2[take, tidx]])

    def eval(self, nodal: np.ndarray, pts: np.ndarray) -> np.ndarray:
        tidx, lam = self.locate(pts)
        shp = _REF.eval(lam)
        return np.einsum("pi,pi->p", shp, np.asarray(nodal)[self.conn[tidx]])

    def eval_grad(self, nodal: np.ndarray, pts: np.ndarray) -> np.ndarray:
        tidx, lam = self.locate(pts)
        gl1, gl2 = _REF.grad(lam)
        coef = np.asarray(nodal)[self.conn[tidx]]
        g1 = np.einsum("pi,pi->p", gl1, coef)
        g2 = np.einsum("pi,pi->p", gl2, coef)
        J = self.inv[tidx]
        return np.column_stack([g1 * J[:, 0, 0] + g2 * J[:, 1, 0],
                                g1 * J[:, 0, 1] + g2 * J[:, 1, 1]])


# ---------------------------------------------------------------------------
# edge-kind oracle
# ---------------------------------------------------------------------------

class EdgeFaceOracle:
    """Resolve an edge-kind face function from its standard DOFs."""

    def __init__(self, ops, refine: int = 3):
        self.ops = ops
        self.ctx = ops.ctx
        self.k = ops.space.k
        self.tri = FaceTriangulation(self.ctx, refine)
        self.exps_k = ps.monomial_exponents(2, self.k)
        self.nk = ps.dim_full(2, self.k)
        self._factorize()

    def _factorize(self):
        tri = self.tri
        K = tri.stiffness()
        self.bnodes = tri.boundary_nodes()
        self.inner = np.setdiff1d(np.arange(len(tri.nodes)), self.bnodes)
        nk = self.nk
        self.load = tri.load_rows([
            (lambda pts, a=a: ps.eval_monomials(self.exps_k, pts)[:, a])
            for a in range(nk)])
        self.grows = tri.grad_moment_rows([
            (lambda pts, a=a: ps.eval_monomials(self.exps_k, pts)[:, a:a + 1]
             * pts) for a in range(nk)])
        A11 = K[np.ix_(self.inner, self.inner)]
        A12 = self.load[:, self.inner].T
        A21 = self.grows[:, self.inner]
        self.K = K
        self.sys = spla.splu(sp.bmat(
            [[A11, sp.csr_matrix(A12)],
             [sp.csr_matrix(A21), sp.csr_matrix((nk, nk))]]).tocsc())

    def _edge_traces(self, dofs):
        Tinv = self.ctx.edge_trace_inverse(self.k + 1)
        return [Tinv @ dofs[self.ops.std.edge_block(pos)]
                for pos in range(len(self.ctx.face.edges))]

    def _rot_coeffs(self, dofs):
        """Scaled-rot coefficients from circulation and the rot DOFs."""
        ctx, k = self.ctx, self.k
        f = ctx.face
        circ = sum(esign * ctx.mesh.edges[eid].length
                   * dofs[self.ops.std.edge_block(pos).start]
                   for pos, (eid, esign) in enumerate(zip(f.edges, f.edge_signs)))
        rhs = np.zeros(ps.dim_full(2, k - 1))
        rhs[0] = f.diameter * circ
        means = ctx.means(k - 1)
        for a in range(1, len(rhs)):
            rhs[a] = f.area * dofs[self.ops.std.rot_block.start + a - 1] \
                + means[a] * rhs[0]
        return np.linalg.solve(ctx.gram(k - 1, k - 1), rhs)

    def _particular(self, rho):
        """w2 in P_k with scaled rot of (0, w2) equal to rho."""
        k = self.k
        idx = {tuple(e): i for i, e in enumerate(self.exps_k)}
        w2 = np.zeros(self.nk)
        for c, (a, b) in zip(rho, ps.monomial_exponents(2, k - 1)):
            w2[idx[(a + 1, b)]] += c / (a + 1)
        return w2

    def _boundary_values(self, dofs, traces, w2):
        """Dirichlet data: integrate (v - w).t along the loop."""
        ctx, k = self.ctx, self.k
        f = ctx.face
        base = f.to_local(ctx.mesh.vertices[list(f.loop)])
        nv = base.shape[0]
        vert_phi = [0.0]
        for pos in range(nv):
            eid, esign = f.edges[pos], f.edge_signs[pos]
            tau, wts, loc, t_loc = ctx.edge_data(eid)
            vt = _tau_powers(tau, k + 1) @ traces[pos]
            wt = (ps.eval_monomials(self.exps_k, loc) @ w2) * t_loc[1]
            vert_phi.append(vert_phi[-1]
                            + esign * np.sum(wts * (vt - wt)) / f.diameter)
        vert_phi = np.array(vert_phi[:-1])
        gx, gw = gauss01(k + 4)
        phi_b = np.zeros(len(self.bnodes))
        for i, p in enumerate(self.tri.nodes[self.bnodes]):
            pos, s = self._loop_position(p, base)
            eid = f.edges[pos]
            e = ctx.mesh.edges[eid]
            a, b = base[pos], base[(pos + 1) % nv]
            pts_loc = a + np.outer(gx * s, b - a)
            phys = f.to_physical(pts_loc)
            tau = ((phys - e.midpoint) @ e.tangent) / e.length
            t_loc = f.tangent_components(e.tangent[None, :])[0]
            vt = _tau_powers(tau, k + 1) @ traces[pos]
            wt = (ps.eval_monomials(self.exps_k, pts_loc) @ w2) * t_loc[1]
            dloop = (b - a) / np.linalg.norm(b - a)
            orient = np.sign(dloop @ t_loc)
            seg_len = np.linalg.norm(b - a) * s  # already in scaled coords
            phi_b[i] = vert_phi[pos] + (gw @ ((vt - wt) * orient)) * seg_len
        return phi_b

    @staticmethod
    def _loop_position(p, base):
        nv = base.shape[0]
        best = (0, 0.0, np.inf)
        for pos in range(nv):
            a, b = base[pos], base[(pos + 1) % nv]
            d = b - a
            t = np.clip(((p - a) @ d) / (d @ d), 0.0, 1.0)
            dist = np.linalg.norm(a + t * d - p)
            if dist < best[2]:
                best = (pos, t, dist)
        return best[0], best[1]

    def solve(self, dofs):
        ctx, k = self.ctx, self.k
        f = ctx.face
        tri = self.tri
        dofs = np.asarray(dofs, dtype=float)
        rho = self._rot_coeffs(dofs)
        w2 = self._particular(rho)
        phi_b = self._boundary_values(dofs, self._edge_traces(dofs), w2)
        dw2 = ps.deriv_matrix(2, k, 1) @ w2
        divw_rows = tri.load_rows([
            lambda pts: ps.eval_monomials(
                ps.monomial_exponents(2, k - 1), pts) @ dw2])[0]
        rhs1 = -(self.K[np.ix_(self.inner, self.bnodes)] @ phi_b) \
            + divw_rows[self.inner]
        wmom = np.zeros(self.nk)
        for t in range(len(tri.tris)):
            pts = tri.quad_points(t)
            w = tri.tri_weights(t)
            wv = ps.eval_monomials(self.exps_k, pts) @ w2
            wmom += ps.eval_monomials(self.exps_k, pts).T @ (w * wv * pts[:, 1])
        target = dofs[self.ops.std.moment_block] * f.area / f.diameter**2 - wmom
        rhs2 = target - self.grows @ self._full(phi_b)
        sol = self.sys.solve(np.concatenate([rhs1, rhs2]))
        phi = self._full(phi_b)
        phi[self.inner] = sol[:len(self.inner)]
        return {"phi": phi, "w2": w2, "delta": sol[len(self.inner):]}

    def _full(self, phi_b):
        phi = np.zeros(len(self.tri.nodes))
        phi[self.bnodes] = phi_b
        return phi

    # -- outputs -----------------------------------------------------------

    def eval(self, state, pts_loc) -> np.ndarray:
        """Frame components of v at local points."""
        g = self.tri.eval_grad(state["phi"], pts_loc)
        wv = ps.eval_monomials(self.exps_k, np.atleast_2d(pts_loc)) @ state["w2"]
        return np.column_stack([g[:, 0], g[:, 1] + wv])

    def _eval_on_tri(self, state, t):
        tri = self.tri
        gx, gy = tri.phys_grads(t)
        coef = state["phi"][tri.conn[t]]
        wv = ps.eval_monomials(self.exps_k, tri.quad_points(t)) @ state["w2"]
        return np.column_stack([gx @ coef, gy @ coef + wv])

    def moments(self, state, s: int) -> np.ndarray:
        """[int_f v . Phi_i] over the (P_s)^2 basis, physical measure."""
        tri = self.tri
        n_s = ps.dim_full(2, s)
        exps = ps.monomial_exponents(2, s)
        out = np.zeros(2 * n_s)
        for t in range(len(tri.tris)):
            w = tri.tri_weights(t)
            v = self._eval_on_tri(state, t)
            mv = ps.eval_monomials(exps, tri.quad_points(t))
            out[:n_s] += mv.T @ (w * v[:, 0])
            out[n_s:] += mv.T @ (w * v[:, 1])
        return out * self.ctx.face.diameter**2

    def pi0(self, state, s: int) -> np.ndarray:
        G = np.kron(np.eye(2), self.ctx.gram(s, s))
        return np.linalg.solve(G, self.moments(state, s))

    def rot(self, state) -> np.ndarray:
        """Physical-rot coefficients implied by the resolved state."""
        return np.linalg.solve(
            self.ctx.gram(self.k - 1, self.k - 1),
            self._rot_rhs(state)) / self.ctx.face.diameter

    def _rot_rhs(self, state):
        # rot is rho by construction; report it back through quadrature
        tri = self.tri
        nk1 = ps.dim_full(2, self.k - 1)
        exps = ps.monomial_exponents(2, self.k - 1)
        drho = ps.deriv_matrix(2, self.k, 0) @ state["w2"]
        out = np.zeros(nk1)
        for t in range(len(tri.tris)):
            w = tri.tri_weights(t)
            pts = tri.quad_points(t)
            rv = ps.eval_monomials(exps, pts) @ drho
            out += ps.eval_monomials(exps, pts).T @ (w * rv)
        return out * self.ctx.face.diameter**2  # physical measure

    def mass_matrix(self) -> np.ndarray:
        """L2(f) Gram of the DOF-dual basis functions."""
        n = self.ops.std.ndofs
        states = [self.solve(np.eye(n)[i]) for i in range(n)]
        M = np.zeros((n, n))
        for t in range(len(self.tri.tris)):
            w = self.tri.tri_weights(t)
            V = np.stack([self._eval_on_tri(s, t) for s in states])
            M += np.einsum("ipc,p,jpc->ij", V, w, V)
        return M * self.ctx.face.diameter**2


# ---------------------------------------------------------------------------
# nodal-kind oracle
# ---------------------------------------------------------------------------

class NodalFaceOracle:
    """Resolve a nodal-kind face function from its standard DOFs."""

    def __init__(self, ops, refine: int = 3):
        self.ops = ops
        self.ctx = ops.ctx
        self.k = ops.space.k
        self.tri = FaceTriangulation(self.ctx, refine)
        self.nk = ps.dim_full(2, self.k)
        self.exps_k = ps.monomial_exponents(2, self.k)
        self._factorize()

    def _factorize(self):
        tri = self.tri
        K = tri.stiffness()
        self.bnodes = tri.boundary_nodes()
        self.inner = np.setdiff1d(np.arange(len(tri.nodes)), self.bnodes)
        self.load = tri.load_rows([
            (lambda pts, a=a: ps.eval_monomials(self.exps_k, pts)[:, a])
            for a in range(self.nk)])
        self.grows = tri.grad_moment_rows([
            (lambda pts, a=a: ps.eval_monomials(self.exps_k, pts)[:, a:a + 1]
             * pts) for a in range(self.nk)])
        A11 = K[np.ix_(self.inner, self.inner)]
        self.K = K
        self.sys = spla.splu(sp.bmat(
            [[A11, sp.csr_matrix(self.load[:, self.inner].T)],
             [sp.csr_matrix(self.grows[:, self.inner]),
              sp.csr_matrix((self.nk, self.nk))]]).tocsc())

    def _boundary_values(self, dofs):
        """Trace values at boundary nodes from vertex/edge DOFs."""
        ctx, k = self.ctx, self.k
        f = ctx.face
        base = f.to_local(ctx.mesh.vertices[list(f.loop)])
        vals = np.zeros(len(self.bnodes))
        for i, p in enumerate(self.tri.nodes[self.bnodes]):
            pos, s = EdgeFaceOracle._loop_position(p, base)
            tr = self.ops._edge_trace_rows(self.ops.std, pos) @ dofs
            eid = f.edges[pos]
            e = ctx.mesh.edges[eid]
            a, b = base[pos], base[(pos + 1) % len(base)]
            pt = f.to_physical((a + s * (b - a))[None, :])[0]
            tau = ((pt - e.midpoint) @ e.tangent) / e.length
            vals[i] = np.array([tau**j for j in range(k + 2)]) @ tr
        return vals

    def solve(self, dofs):
        dofs = np.asarray(dofs, dtype=float)
        q_b = self._boundary_values(dofs)
        rhs1 = -(self.K[np.ix_(self.inner, self.bnodes)] @ q_b)
        # gradient moments: |f| d_a / h^2 in scaled measure
        f = self.ctx.face
        target = dofs[self.ops.std.moment_block] * f.area / f.diameter**2
        full = np.zeros(len(self.tri.nodes))
        full[self.bnodes] = q_b
        rhs2 = target - self.grows @ full
        sol = self.sys.solve(np.concatenate([rhs1, rhs2]))
        q = full
        q[self.inner] = sol[:len(self.inner)]
        return {"q": q, "g": sol[len(self.inner):]}

    def eval(self, state, pts_loc) -> np.ndarray:
        return self.tri.eval(state["q"], pts_loc)

    def eval_grad_scaled(self, state, pts_loc) -> np.ndarray:
        """Gradient in scaled coordinates (h * physical gradient)."""
        return self.tri.eval_grad(state["q"], pts_loc)

    def moments(self, state, s: int) -> np.ndarray:
        """[int_f q m_a] over the P_s basis, physical measure."""
        tri = self.tri
        exps = ps.monomial_exponents(2, s)
        out = np.zeros(exps.shape[0])
        for t in range(len(tri.tris)):
            w = tri.tri_weights(t)
            qv = tri.shp @ state["q"][tri.conn[t]]
            out += ps.eval_monomials(exps, tri.quad_points(t)).T @ (w * qv)
        return out * self.ctx.face.diameter**2

    def pi0(self, state, s: int) -> np.ndarray:
        return np.linalg.solve(self.ctx.gram(s, s), self.moments(state, s))

    def mass_matrix(self) -> np.ndarray:
        n = self.ops.std.ndofs
        states = [self.solve(np.eye(n)[i]) for i in range(n)]
        M = np.zeros((n, n))
        for t in range(len(self.tri.tris)):
            w = self.tri.tri_weights(t)
            Q = np.stack([tri_q for tri_q in
                          (self.tri.shp @ s["q"][self.tri.conn[t]]
                           for s in states)])
            M += np.einsum("ip,p,jp->ij", Q, w, Q)
        return M * self.ctx.face.diameter**2
