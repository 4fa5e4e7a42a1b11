import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st
from scipy.special import lpmv, spherical_jn, spherical_yn

from axiscatter.body_operator import (ModalSystem, apply_forward, OperatorCache, OperatorError,
                                      assemble_modal_matrix, build_modal_system, factorize,
                                      load_operator, materialize, near_panel_rule, operator_key,
                                      save_operator)
from axiscatter.geometry import Ellipsoid, Starfish, build_curve_quadrature, tensor_grid
from axiscatter.kernels import KernelSpec, combined_kernel


@pytest.fixture(scope="module")
def sphere_quad():
    return build_curve_quadrature(Ellipsoid(1.0, 1.0), 8, 10)


@pytest.fixture(scope="module")
def small_op():
    q = build_curve_quadrature(Ellipsoid(0.5, 1.0), 6, 8)
    spec = KernelSpec.helmholtz(3.0)
    return q, factorize(build_modal_system(q, spec, 31), operator_key(q, spec, 31))


def sphere_eigenvalue(spec, l):
    if spec.kappa == 0:
        return (l + 1) / (2 * l + 1) + (spec.coupling - 1) / (2 * l + 1)
    k = spec.kappa
    j = spherical_jn(l, k)
    h = j + 1j * spherical_yn(l, k)
    hp = spherical_jn(l, k, True) + 1j * spherical_yn(l, k, True)
    return 1j * k * k * j * hp + 1 + spec.coupling * 1j * k * j * h


@pytest.mark.parametrize("spec", [KernelSpec.laplace(), KernelSpec.helmholtz(2.0)])
def test_sphere_spherical_harmonics_are_eigenvectors(sphere_quad, spec):
    ms = build_modal_system(sphere_quad, spec, 21)
    for p in (0, 1, 4):
        for l in (p, p + 2, p + 5):
            f = lpmv(p, l, sphere_quad.z)
            lam = sphere_eigenvalue(spec, l)
            err = np.abs(ms.mode(p) @ f - lam * f).max() / np.abs(f).max()
            assert err < 1e-9, (p, l, err)


def test_double_layer_gauss_identity(sphere_quad):
    # (1/2 I + D) 1 = 0 on a closed surface: the double layer of 1 is -1/2 there
    ms = build_modal_system(sphere_quad, KernelSpec.laplace(0.0), 21)
    assert np.abs(ms.mode(0) @ np.ones(sphere_quad.n)).max() < 1e-9
    ones = np.ones(sphere_quad.n * 21)
    assert np.abs(apply_forward(ms, ones)).max() < 1e-9
    assert np.abs(materialize(ms) @ ones).max() < 1e-9


def test_combined_operator_on_constant(sphere_quad):
    op = factorize(build_modal_system(sphere_quad, KernelSpec.laplace(), 21))
    ones = np.ones(op.n)
    assert np.abs(op.apply_forward(ones) - 1).max() < 1e-9


def test_mode_symmetry(sphere_quad):
    spec = KernelSpec.helmholtz(np.pi)
    a = assemble_modal_matrix(sphere_quad, spec, 3, 21)
    b = assemble_modal_matrix(sphere_quad, spec, -3, 21)
    assert np.abs(a - b).max() <= 1e-12 * np.abs(a).max()


def test_high_modes_decay(sphere_quad):
    ms = build_modal_system(sphere_quad, KernelSpec.laplace(), 21)
    I = 0.5 * np.eye(sphere_quad.n)
    assert np.linalg.norm(ms.mode(ms.P) - I) <= np.linalg.norm(ms.mode(1) - I)
    assert np.all(np.isfinite(ms.matrices))


def test_mode_out_of_range(sphere_quad):
    with pytest.raises(OperatorError):
        assemble_modal_matrix(sphere_quad, KernelSpec.laplace(), 11, 21)
    with pytest.raises(OperatorError):
        build_modal_system(sphere_quad, KernelSpec.laplace(), 20)


def test_zero_kernel_gives_half_identity(sphere_quad):
    n = sphere_quad.n
    mats = np.broadcast_to(0.5 * np.eye(n), (6, n, n)).astype(complex)
    op = factorize(ModalSystem(sphere_quad, KernelSpec.laplace(), 11, mats))
    w = np.random.default_rng(0).standard_normal(op.n) + 0j
    assert np.abs(op.apply_inverse(w) - 2 * w).max() < 1e-14
    assert np.abs(op.apply_forward(w) - 0.5 * w).max() < 1e-14


def test_singular_mode_rejected(sphere_quad):
    n = sphere_quad.n
    mats = np.zeros((3, n, n), complex)
    with pytest.raises(OperatorError):
        factorize(ModalSystem(sphere_quad, KernelSpec.laplace(), 5, mats))


def test_modal_solve_matches_dense(sphere_quad):
    ms = build_modal_system(sphere_quad, KernelSpec.laplace(), 21)
    op = factorize(ms)
    rng = np.random.default_rng(1)
    b = rng.standard_normal(op.n_gamma) + 1j * rng.standard_normal(op.n_gamma)
    for p in range(op.P + 1):
        x = sla.lu_solve((op.lu[p], op.piv[p]), b)
        ref = np.linalg.solve(ms.mode(p), b)
        assert np.abs(x - ref).max() <= 1e-12 * np.abs(ref).max()


def test_sphere_condition_numbers():
    q = build_curve_quadrature(Ellipsoid(1.0, 1.0), 6, 10)
    op = factorize(build_modal_system(q, KernelSpec.helmholtz(np.pi), 21))
    assert op.cond.max() < 1e3


def test_inverse_against_dense_lu(small_op):
    q, op = small_op
    assert op.n <= 2000
    A = materialize(op)
    rng = np.random.default_rng(2)
    w = rng.standard_normal((op.n, 3)) + 1j * rng.standard_normal((op.n, 3))
    ref = sla.lu_solve(sla.lu_factor(A), w)
    assert np.abs(op.apply_inverse(w) - ref).max() <= 1e-9 * np.abs(ref).max()
    assert np.abs(op.apply_forward(w) - A @ w).max() <= 1e-12 * np.abs(A @ w).max()


def test_materialized_matrix_is_block_diagonal_in_fourier(small_op):
    _, op = small_op
    A = materialize(op)
    N, ng = op.n_fourier, op.n_gamma
    F = np.kron(np.fft.fft(np.eye(N)), np.eye(ng))
    Ah = (F @ A @ np.linalg.inv(F)).reshape(N, ng, N, ng)
    mask = np.eye(N, dtype=bool)[:, None, :, None] * np.ones((1, ng, 1, ng), bool)
    off = np.linalg.norm(Ah[~np.broadcast_to(mask, Ah.shape)])
    assert off <= 1e-12 * np.linalg.norm(Ah)


def test_far_entries_match_3d_kernel(small_op):
    # entries between well-separated panels are plain kernel times weight
    q, op = small_op
    A = materialize(op)
    g = tensor_grid(q, op.n_fourier)
    i = 0                      # node on the first panel, near the south pole
    js = np.where(q.panel >= 4)[0]
    N, ng = op.n_fourier, op.n_gamma
    rows = [b * ng + j for b in range(N) for j in js]
    ref = combined_kernel(g.points[i], g.points[rows], g.normals[rows], op.spec) * g.weights[rows]
    assert np.abs(A[i, rows] - ref).max() <= 1e-8 * np.abs(ref).max()


def test_rotation_equivariance(small_op):
    _, op = small_op
    rng = np.random.default_rng(3)
    w = rng.standard_normal(op.n) + 1j * rng.standard_normal(op.n)
    shift = lambda v: np.roll(v.reshape(op.n_fourier, op.n_gamma), 1, axis=0).ravel()  # noqa: E731
    assert np.abs(op.apply_inverse(shift(w)) - shift(op.apply_inverse(w))).max() < 1e-12


def test_constant_in_azimuth_engages_mode_zero(small_op):
    q, op = small_op
    prof = np.linspace(1, 2, op.n_gamma) + 0j
    out = op.apply_forward(np.tile(prof, op.n_fourier)).reshape(op.n_fourier, op.n_gamma)
    assert np.abs(out - op.matrices[0] @ prof).max() < 1e-12


def test_single_fourier_mode(small_op):
    q, op = small_op
    p = 4
    theta = 2 * np.pi * np.arange(op.n_fourier) / op.n_fourier
    prof = np.cos(q.t) + 0.5j
    w = np.outer(np.exp(1j * p * theta), prof).ravel()
    out = op.apply_forward(w).reshape(op.n_fourier, op.n_gamma)
    ref = np.outer(np.exp(1j * p * theta), op.matrices[p] @ prof)
    assert np.abs(out - ref).max() < 1e-12


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1))
def test_inverse_of_forward_is_identity(small_op, seed):
    _, op = small_op
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(op.n) + 1j * rng.standard_normal(op.n)
    assert np.abs(op.apply_inverse(op.apply_forward(w)) - w).max() <= 1e-11 * np.abs(w).max()


def test_length_mismatch(small_op):
    _, op = small_op
    with pytest.raises(OperatorError):
        op.apply_inverse(np.ones(op.n + 1))


def test_near_panel_rule_integrates_log_and_polynomials():
    a, b, c = 0.2, 0.9, 0.45
    t, w = near_panel_rule(a, b, c)
    assert abs(w.sum() - (b - a)) < 1e-13
    assert abs(np.sum(w * t ** 5) - (b ** 6 - a ** 6) / 6) < 1e-13
    exact = (b - c) * np.log(b - c) - (b - c) + (c - a) * np.log(c - a) - (c - a)
    assert abs(np.sum(w * np.log(np.abs(t - c))) - exact) < 1e-11


def test_cache_roundtrip(tmp_path, small_op):
    _, op = small_op
    path = tmp_path / "op.axop"
    save_operator(op, path)
    back = load_operator(path)
    assert back.key == op.key and back.spec == op.spec
    assert np.array_equal(back.matrices, op.matrices)
    assert np.array_equal(back.lu, op.lu) and np.array_equal(back.piv, op.piv)
    w = np.arange(op.n) * (1 + 1j)
    assert np.array_equal(back.apply_inverse(w), op.apply_inverse(w))


def test_cache_rejects_garbage(tmp_path, small_op):
    bad = tmp_path / "bad.axop"
    bad.write_bytes(b"not an operator")
    with pytest.raises(OperatorError):
        load_operator(bad)
    _, op = small_op
    good = tmp_path / "v.axop"
    save_operator(op, good)
    raw = bytearray(good.read_bytes())
    raw[8] = 99                 # version field
    good.write_bytes(bytes(raw))
    with pytest.raises(OperatorError):
        load_operator(good)


def test_operator_cache_shares_and_persists(tmp_path):
    q = build_curve_quadrature(Starfish(), 4, 6)
    spec = KernelSpec.laplace()
    c1 = OperatorCache(tmp_path)
    a = c1.get(q, spec, 9)
    b = c1.get(q, spec, 9)
    assert a is b and c1.builds == 1 and c1.hits == 1
    c2 = OperatorCache(tmp_path)
    d = c2.get(q, spec, 9)
    assert c2.builds == 0 and np.array_equal(d.lu, a.lu)
    assert len(c2.entries()) == 1
    assert c2.clear() == 1 and c2.entries() == []
