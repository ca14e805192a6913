import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polymag import polyspace as ps


def test_poly_dims():
    assert ps.poly_dim(3, 1) == 4
    assert ps.poly_dim(2, -1) == 0
    assert ps.poly_dim(2, 2, "zero-mean") == 5
    assert ps.poly_dim(2, 3) == 10
    assert ps.poly_dim(3, 2) == 10
    assert ps.poly_dim(2, 2, "homogeneous") == 3
    assert ps.poly_dim(2, 3, "beta-window", low=1) == 10 - 3


def test_exponent_order_deterministic():
    exps = ps.monomial_exponents(2, 2)
    assert exps.tolist() == [[0, 0], [1, 0], [0, 1], [2, 0], [1, 1], [0, 2]]


def test_grad_of_constant_is_zero():
    basis = ps.PolyBasis(3, 2)
    coeffs = np.zeros(basis.size)
    coeffs[0] = 4.2
    g = ps.apply_diff("grad", ps.PolyCoeffs(basis, coeffs))
    assert np.allclose(g.coeffs, 0.0)


def test_rot2d_of_spin_field():
    # v = (-eta, xi) has rot = 2
    basis = ps.PolyBasis(2, 1)
    vec = np.zeros(2 * basis.size)
    vec[2] = -1.0   # component 0: -eta
    vec[basis.size + 1] = 1.0  # component 1: xi
    r = ps.apply_diff("rot2d", ps.PolyCoeffs(basis, vec, ncomp=2))
    assert r.coeffs[0] == pytest.approx(2.0)


def test_curl_of_grad_is_zero():
    rng = np.random.default_rng(7)
    basis = ps.PolyBasis(3, 3)
    q = ps.PolyCoeffs(basis, rng.standard_normal(basis.size))
    g = ps.apply_diff("grad", q)
    c = ps.apply_diff("curl3d", g)
    assert np.allclose(c.coeffs, 0.0, atol=1e-13)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 4), st.integers(0, 2), st.integers(1, 3))
def test_derivative_matches_finite_differences(degree, axis, dim):
    rng = np.random.default_rng(degree * 10 + axis + dim)
    if axis >= dim:
        axis = dim - 1
    basis = ps.PolyBasis(dim, degree)
    coeffs = rng.standard_normal(basis.size)
    p = ps.PolyCoeffs(basis, coeffs)
    d = ps.PolyCoeffs(ps.PolyBasis(dim, degree - 1),
                      ps.deriv_matrix(dim, degree, axis) @ coeffs)
    pts = rng.uniform(-0.4, 0.4, size=(6, dim))
    h = 1e-6
    shift = np.zeros(dim)
    shift[axis] = h
    fd = (p.eval(pts + shift) - p.eval(pts - shift)) / (2 * h)
    exact = d.eval(pts)
    assert np.allclose(fd, exact, rtol=1e-6, atol=1e-6)


@pytest.mark.parametrize("which,ncomp,s", [
    ("2d-rot", 2, 2), ("2d-grad", 2, 2), ("3d-curl", 3, 2),
    ("3d-grad", 3, 2), ("3d-cross", 3, 2),
])
def test_decompositions_resum_and_are_disjoint(which, ncomp, s):
    rng = np.random.default_rng(hash(which) % 2**32)
    dim = 2 if which.startswith("2d") else 3
    basis = ps.PolyBasis(dim, s)
    target = rng.standard_normal(ncomp * basis.size)
    p = ps.PolyCoeffs(basis, target, ncomp=ncomp)
    a, b = ps.decompose_vec(p, which)
    assert np.allclose(a.coeffs + b.coeffs, target, rtol=1e-12, atol=1e-12)
    # each summand projects to zero on the other family
    fn = {"2d-rot": ps.decompose_2d_rot, "2d-grad": ps.decompose_2d_grad,
          "3d-curl": ps.decompose_3d_curl, "3d-grad": ps.decompose_3d_grad,
          "3d-cross": ps.decompose_3d_cross}[which]
    _, _, a2, b2 = fn(a.coeffs, s)
    assert np.linalg.norm(b2) < 1e-10 * max(np.linalg.norm(target), 1)
    _, _, a3, b3 = fn(b.coeffs, s)
    assert np.linalg.norm(a3) < 1e-10 * max(np.linalg.norm(target), 1)


def test_decompose_linear_x_field():
    # v = (xi, eta) = x * 1: pure x-part
    basis = ps.PolyBasis(2, 1)
    vec = np.zeros(2 * basis.size)
    vec[1] = 1.0
    vec[basis.size + 2] = 1.0
    ca, cb, pa, pb = ps.decompose_2d_rot(vec, 1)
    assert np.linalg.norm(pa) < 1e-12
    assert np.allclose(pb, vec)


def test_decompose_brot_field():
    # brot of (xi^2+eta^2)/2 = (eta, -xi): pure rot part
    basis = ps.PolyBasis(2, 1)
    vec = np.zeros(2 * basis.size)
    vec[2] = 1.0
    vec[basis.size + 1] = -1.0
    ca, cb, pa, pb = ps.decompose_2d_rot(vec, 1)
    assert np.linalg.norm(pb) < 1e-12
    assert np.allclose(pa, vec)


@pytest.mark.parametrize("s,expected", [(0, 3), (1, 11), (2, 26), (3, 50), (4, 85)])
def test_cross_family_size(s, expected):
    fields, picks = ps.cross_family_basis(s)
    assert fields.shape[1] == expected
    assert expected == 3 * ps.dim_full(3, s) - ps.dim_full(3, s - 1)
    # rank oracle: Gram of the full generating set has the same rank
    gens = ps.xcross_matrix(s)
    sv = np.linalg.svd(gens, compute_uv=False)
    assert int((sv > 1e-10 * sv[0]).sum()) == expected


def test_expand_in_cross_family():
    rng = np.random.default_rng(3)
    fields, _ = ps.cross_family_basis(1)
    q = rng.standard_normal(3 * ps.dim_full(3, 1))
    target = ps.xcross_matrix(1) @ q
    coef = ps.expand_in_cross_family(fields, target)
    assert np.allclose(fields @ coef, target, atol=1e-12)
