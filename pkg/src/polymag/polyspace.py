"""Exact polynomial algebra in scaled, centered coordinates.

Every polynomial space used by the solver is spanned by monomials
``((x - center) / scale)^alpha`` on its carrier entity (edge, face, or
cell).  Centering and scaling keep Gram matrices well conditioned for the
moderate orders targeted here (k <= 4).  Differential operators and the
classical vector decompositions are realized as exact coefficient-level
matrices; nothing in this module is numerical beyond dense linear algebra
on small systems.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg


def dim_full(dim: int, degree: int) -> int:
    """Dimension of the full polynomial space of total degree <= degree."""
    if degree < 0:
        return 0
    return math.comb(degree + dim, dim)


def dim_homogeneous(dim: int, degree: int) -> int:
    if degree < 0:
        return 0
    return math.comb(degree + dim - 1, dim - 1)


def poly_dim(dim: int, degree: int, kind: str = "full", low: int | None = None) -> int:
    """Dimension of a polynomial space of the given kind.

    ``kind`` is one of ``full``, ``homogeneous``, ``zero-mean`` or
    ``beta-window``; the window kind spans the homogeneous slices of
    degree s with ``low < s <= degree``.
    """
    if degree < -1:
        raise ValueError(f"degree must be >= -1, got {degree}")
    if kind == "full":
        return dim_full(dim, degree)
    if kind == "homogeneous":
        return dim_homogeneous(dim, degree)
    if kind == "zero-mean":
        return max(dim_full(dim, degree) - 1, 0)
    if kind == "beta-window":
        if low is None:
            raise ValueError("beta-window kind needs the lower degree")
        return dim_full(dim, degree) - dim_full(dim, low)
    raise ValueError(f"unknown kind {kind!r}")


def monomial_exponents(dim: int, degree: int) -> np.ndarray:
    """Exponent table of the monomial basis, ordered by total degree
    then reverse-lexicographically (x before y before z)."""
    if degree < 0:
        return np.zeros((0, dim), dtype=int)
    rows = []
    for total in range(degree + 1):
        rows.extend(_homogeneous_exponents(dim, total))
    return np.array(rows, dtype=int).reshape(-1, dim)


def _homogeneous_exponents(dim: int, total: int) -> list[tuple[int, ...]]:
    if dim == 1:
        return [(total,)]
    out = []
    for first in range(total, -1, -1):
        for rest in _homogeneous_exponents(dim - 1, total - first):
            out.append((first,) + rest)
    return out


def eval_monomials(exps: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Evaluate monomials at scaled points; returns (npts, nbasis)."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    npts = pts.shape[0]
    out = np.ones((npts, exps.shape[0]))
    for c in range(exps.shape[1]):
        col = pts[:, c]
        maxp = int(exps[:, c].max(initial=0))
        powers = np.ones((npts, maxp + 1))
        for p in range(1, maxp + 1):
            powers[:, p] = powers[:, p - 1] * col
        out *= powers[:, exps[:, c]]
    return out


@dataclass(frozen=True)
class PolyBasis:
    """Monomial basis of one polynomial space on an entity.

    ``center`` and ``scale`` define the affine normalization; ``kind``
    selects full / homogeneous / zero-mean / beta-window sub-bases.  For
    the zero-mean kind the caller supplies per-monomial entity means so
    that basis functions integrate to zero.
    """

    dim: int
    degree: int
    kind: str = "full"
    center: tuple[float, ...] = ()
    scale: float = 1.0
    low: int = -1

    def __post_init__(self):
        if self.degree < -1:
            raise ValueError("degree must be >= -1")

    @property
    def exponents(self) -> np.ndarray:
        exps = monomial_exponents(self.dim, self.degree)
        if self.kind == "full":
            return exps
        deg = exps.sum(axis=1)
        if self.kind == "homogeneous":
            return exps[deg == self.degree]
        if self.kind == "zero-mean":
            return exps[deg >= 1]
        if self.kind == "beta-window":
            return exps[deg > self.low]
        raise ValueError(f"unknown kind {self.kind!r}")

    @property
    def size(self) -> int:
        return self.exponents.shape[0]

    def localize(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        center = np.asarray(self.center if self.center else [0.0] * self.dim)
        return (pts - center) / self.scale

    def eval(self, pts: np.ndarray, means: np.ndarray | None = None) -> np.ndarray:
        """Values at physical points, (npts, size).  ``means`` holds the
        entity averages subtracted for the zero-mean kind."""
        vals = eval_monomials(self.exponents, self.localize(pts))
        if self.kind == "zero-mean":
            if means is None:
                raise ValueError("zero-mean basis needs entity means")
            vals = vals - means[None, :]
        return vals


@dataclass
class PolyCoeffs:
    """Coefficients of a (possibly vector-valued) polynomial.

    Vector components are stacked component-major: coefficient ``c * n + i``
    multiplies monomial ``i`` in component ``c``.
    """

    basis: PolyBasis
    coeffs: np.ndarray
    ncomp: int = 1

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.size != self.basis.size * self.ncomp:
            raise ValueError("coefficient length does not match basis size")

    def eval(self, pts: np.ndarray) -> np.ndarray:
        vals = self.basis.eval(pts)
        comps = self.coeffs.reshape(self.ncomp, -1)
        out = vals @ comps.T
        return out[:, 0] if self.ncomp == 1 else out


# ---------------------------------------------------------------------------
# coefficient-level differential operators (in scaled coordinates)
# ---------------------------------------------------------------------------

_index_cache: dict[tuple[int, int], dict[tuple[int, ...], int]] = {}


def _index_of(dim: int, degree: int) -> dict[tuple[int, ...], int]:
    key = (dim, degree)
    if key not in _index_cache:
        exps = monomial_exponents(dim, degree)
        _index_cache[key] = {tuple(e): i for i, e in enumerate(exps)}
    return _index_cache[key]


def deriv_matrix(dim: int, degree: int, axis: int) -> np.ndarray:
    """d/d(xi_axis) on P_degree -> P_{degree-1}, scaled coordinates."""
    src = monomial_exponents(dim, degree)
    dst_index = _index_of(dim, degree - 1)
    D = np.zeros((dim_full(dim, degree - 1), dim_full(dim, degree)))
    for j, e in enumerate(src):
        if e[axis] == 0:
            continue
        tgt = list(e)
        tgt[axis] -= 1
        D[dst_index[tuple(tgt)], j] = e[axis]
    return D


def shift_matrix(dim: int, degree: int, axis: int) -> np.ndarray:
    """Multiplication by xi_axis: P_degree -> P_{degree+1}."""
    src = monomial_exponents(dim, degree)
    dst_index = _index_of(dim, degree + 1)
    X = np.zeros((dim_full(dim, degree + 1), dim_full(dim, degree)))
    for j, e in enumerate(src):
        tgt = list(e)
        tgt[axis] += 1
        X[dst_index[tuple(tgt)], j] = 1.0
    return X


def grad_matrix(dim: int, degree: int) -> np.ndarray:
    """P_degree -> (P_{degree-1})^dim."""
    return np.vstack([deriv_matrix(dim, degree, c) for c in range(dim)])


def div_matrix(dim: int, degree: int) -> np.ndarray:
    """(P_degree)^dim -> P_{degree-1}."""
    return np.hstack([deriv_matrix(dim, degree, c) for c in range(dim)])


def rot2d_matrix(degree: int) -> np.ndarray:
    """rot v = d(v2)/dx - d(v1)/dy on (P_degree)^2 -> P_{degree-1}."""
    Dx = deriv_matrix(2, degree, 0)
    Dy = deriv_matrix(2, degree, 1)
    return np.hstack([-Dy, Dx])


def brot2d_matrix(degree: int) -> np.ndarray:
    """brot q = (dq/dy, -dq/dx) on P_degree -> (P_{degree-1})^2."""
    Dx = deriv_matrix(2, degree, 0)
    Dy = deriv_matrix(2, degree, 1)
    return np.vstack([Dy, -Dx])


def curl3d_matrix(degree: int) -> np.ndarray:
    """(P_degree)^3 -> (P_{degree-1})^3 componentwise curl."""
    n1 = dim_full(3, degree - 1)
    n = dim_full(3, degree)
    D = [deriv_matrix(3, degree, c) for c in range(3)]
    C = np.zeros((3 * n1, 3 * n))
    # (curl v)_0 = d v3/dy - d v2/dz, etc.
    C[0:n1, n : 2 * n] = -D[2]
    C[0:n1, 2 * n : 3 * n] = D[1]
    C[n1 : 2 * n1, 0:n] = D[2]
    C[n1 : 2 * n1, 2 * n : 3 * n] = -D[0]
    C[2 * n1 : 3 * n1, 0:n] = -D[1]
    C[2 * n1 : 3 * n1, n : 2 * n] = D[0]
    return C


def xvec_matrix(dim: int, degree: int) -> np.ndarray:
    """q -> xi * q, P_degree -> (P_{degree+1})^dim."""
    return np.vstack([shift_matrix(dim, degree, c) for c in range(dim)])


def xperp_matrix(degree: int) -> np.ndarray:
    """q -> (-eta, xi) q, P_degree -> (P_{degree+1})^2."""
    X = shift_matrix(2, degree, 0)
    Y = shift_matrix(2, degree, 1)
    return np.vstack([-Y, X])


def xcross_matrix(degree: int) -> np.ndarray:
    """q -> xi ^ q (cross product), (P_degree)^3 -> (P_{degree+1})^3."""
    n = dim_full(3, degree)
    m = dim_full(3, degree + 1)
    X = [shift_matrix(3, degree, c) for c in range(3)]
    M = np.zeros((3 * m, 3 * n))
    # (x ^ q)_0 = x1 q2 - x2 q1 (0-based axes: y q_z - z q_y)
    M[0:m, n : 2 * n] = -X[2]
    M[0:m, 2 * n : 3 * n] = X[1]
    M[m : 2 * m, 0:n] = X[2]
    M[m : 2 * m, 2 * n : 3 * n] = -X[0]
    M[2 * m : 3 * m, 0:n] = -X[1]
    M[2 * m : 3 * m, n : 2 * n] = X[0]
    return M


_DIFF_OPS = {
    "grad": (lambda dim, deg: grad_matrix(dim, deg), 1, None),
    "div": (lambda dim, deg: div_matrix(dim, deg), None, 1),
    "rot2d": (lambda dim, deg: rot2d_matrix(deg), 2, 1),
    "brot2d": (lambda dim, deg: brot2d_matrix(deg), 1, 2),
    "curl3d": (lambda dim, deg: curl3d_matrix(deg), 3, 3),
}


def apply_diff(op: str, p: PolyCoeffs) -> PolyCoeffs:
    """Coefficient-level differentiation; the physical derivative picks up
    a 1/scale factor from the chain rule."""
    if op not in _DIFF_OPS:
        raise ValueError(f"unknown operator {op!r}")
    make, ncomp_in, ncomp_out = _DIFF_OPS[op]
    if op == "grad":
        ncomp_in, ncomp_out = 1, p.basis.dim
    if op == "div":
        ncomp_in = p.basis.dim
    if ncomp_in is not None and p.ncomp != ncomp_in:
        raise ValueError(f"{op} expects {ncomp_in} components, got {p.ncomp}")
    M = make(p.basis.dim, p.basis.degree)
    out_basis = PolyBasis(p.basis.dim, max(p.basis.degree - 1, -1),
                          center=p.basis.center, scale=p.basis.scale)
    coeffs = (M @ p.coeffs) / p.basis.scale
    return PolyCoeffs(out_basis, coeffs, ncomp=ncomp_out or 1)


# ---------------------------------------------------------------------------
# vector polynomial decompositions
# ---------------------------------------------------------------------------

RANK_RTOL = 1e-10  # singular values below RANK_RTOL * sigma_max count as zero


def _lstsq_split(gens_a: np.ndarray, gens_b: np.ndarray, target: np.ndarray):
    """Split ``target`` over two generator families by least squares.

    Returns (coeffs_a, coeffs_b, part_a, part_b) with part_a + part_b
    reproducing the target; raises if the families do not span it.
    """
    G = np.hstack([gens_a, gens_b])
    sol, *_ = np.linalg.lstsq(G, target, rcond=None)
    na = gens_a.shape[1]
    part_a = gens_a @ sol[:na]
    part_b = gens_b @ sol[na:]
    resid = np.linalg.norm(G @ sol - target)
    scale = max(np.linalg.norm(target), 1.0)
    if resid > 1e-9 * scale:
        raise np.linalg.LinAlgError(
            f"decomposition residual {resid:.3e} exceeds tolerance")
    return sol[:na], sol[na:], part_a, part_b


def decompose_2d_rot(target: np.ndarray, s: int):
    """(P_s)^2 = brot(P_{s+1}) (+) x P_{s-1}; returns potentials and parts.

    ``target`` holds component-major coefficients on (P_s)^2.  The first
    potential lives in P_{s+1} with the constant dropped, the second in
    P_{s-1}; to recover the full P_{s+1} potential prepend a zero.
    """
    A = brot2d_matrix(s + 1)[:, 1:]
    B = xvec_matrix(2, s - 1)
    return _lstsq_split(A, B, target)


def decompose_2d_grad(target: np.ndarray, s: int):
    """(P_s)^2 = grad(P_{s+1}) (+) xperp P_{s-1}."""
    A = grad_matrix(2, s + 1)[:, 1:]
    B = xperp_matrix(s - 1)
    return _lstsq_split(A, B, target)


def decompose_3d_curl(target: np.ndarray, s: int):
    """(P_s)^3 = curl((P_{s+1})^3) (+) x P_{s-1}."""
    A = curl3d_matrix(s + 1)
    B = xvec_matrix(3, s - 1)
    return _lstsq_split(A, B, target)


def decompose_3d_grad(target: np.ndarray, s: int):
    """(P_s)^3 = grad(P_{s+1}) (+) x ^ (P_{s-1})^3."""
    A = grad_matrix(3, s + 1)[:, 1:]
    B = xcross_matrix(s - 1)
    return _lstsq_split(A, B, target)


def decompose_3d_cross(target: np.ndarray, s: int):
    """(P_s)^3 = curl(x ^ (P_s)^3) (+) x P_{s-1} (scaled coordinates)."""
    A = curl3d_matrix(s + 1) @ xcross_matrix(s)
    B = xvec_matrix(3, s - 1)
    return _lstsq_split(A, B, target)


def decompose_vec(p: PolyCoeffs, which: str):
    """Named decompositions of vector polynomials; returns the two summands."""
    table = {
        "2d-rot": (decompose_2d_rot, 2),
        "2d-grad": (decompose_2d_grad, 2),
        "3d-curl": (decompose_3d_curl, 3),
        "3d-grad": (decompose_3d_grad, 3),
        "3d-cross": (decompose_3d_cross, 3),
    }
    if which not in table:
        raise ValueError(f"unknown decomposition {which!r}")
    fn, ncomp = table[which]
    if p.ncomp != ncomp:
        raise ValueError(f"{which} expects {ncomp} components")
    _, _, part_a, part_b = fn(p.coeffs, p.basis.degree)
    return (PolyCoeffs(p.basis, part_a, ncomp=ncomp),
            PolyCoeffs(p.basis, part_b, ncomp=ncomp))


def cross_family_basis(s: int) -> tuple[np.ndarray, np.ndarray]:
    """Independent spanning set of { x ^ p : p in (P_s)^3 }.

    Returns ``(fields, picks)`` where ``fields`` columns are coefficient
    vectors in (P_{s+1})^3 and ``picks`` indexes the generating monomials
    that were kept.  The span has dimension 3 dim P_s - dim P_{s-1}.
    """
    gens = xcross_matrix(s)
    q, r, piv = scipy.linalg.qr(gens, pivoting=True, mode="economic")
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > RANK_RTOL * diag.max())) if diag.size else 0
    picks = np.sort(piv[:rank])
    return gens[:, picks], picks


def expand_in_cross_family(fields: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Coefficients of ``target`` (in (P_{s+1})^3) on the cross-family set."""
    sol, res, *_ = np.linalg.lstsq(fields, target, rcond=None)
    resid = np.linalg.norm(fields @ sol - target)
    if resid > 1e-8 * max(np.linalg.norm(target), 1.0):
        raise np.linalg.LinAlgError("target not in the cross family span")
    return sol
