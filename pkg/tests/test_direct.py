import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from axiscatter import direct
from axiscatter.kernels import KernelSpec, combined_kernel

IMPLS = ["python"] + (["compiled"] if direct.BACKEND == "compiled" else [])


def naive(targets, sources, normals, charge, spec, tids=None, sids=None):
    out = np.zeros(len(targets), complex)
    for i, x in enumerate(targets):
        for j, y in enumerate(sources):
            if tids is not None and tids[i] == sids[j]:
                continue
            out[i] += combined_kernel(x, y, normals[j], spec) * charge[j]
    return out


def cloud(seed, n, m):
    rng = np.random.default_rng(seed)
    t = rng.uniform(-1, 1, (n, 3))
    s = rng.uniform(-1, 1, (m, 3)) + np.array([3.0, 0, 0])
    nrm = rng.standard_normal((m, 3))
    nrm /= np.linalg.norm(nrm, axis=1)[:, None]
    q = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    return t, s, nrm, q


@pytest.mark.parametrize("impl", IMPLS)
@pytest.mark.parametrize("spec", [KernelSpec.laplace(), KernelSpec.helmholtz(2.5)])
def test_direct_sum_matches_naive(impl, spec):
    t, s, n, q = cloud(0, 17, 23)
    got = direct.direct_sum(t, s, n, q, spec.kappa, spec.coupling, impl=impl)
    ref = naive(t, s, n, q, spec)
    assert np.abs(got - ref).max() <= 1e-14 * np.abs(ref).max()


@pytest.mark.parametrize("impl", IMPLS)
def test_same_body_pairs_skipped(impl):
    rng = np.random.default_rng(1)
    pts = rng.uniform(-1, 1, (30, 3))
    nrm = np.tile([0.0, 0.0, 1.0], (30, 1))
    ids = np.repeat([0, 1, 2], 10)
    q = rng.standard_normal(30) + 0j
    spec = KernelSpec.helmholtz(1.0)
    got = direct.direct_sum(pts, pts, nrm, q, spec.kappa, spec.coupling, ids, ids, impl=impl)
    ref = naive(pts, pts, nrm, q, spec, ids, ids)
    assert np.abs(got - ref).max() <= 1e-13 * np.abs(ref).max()


@pytest.mark.parametrize("impl", IMPLS)
def test_dense_block(impl):
    t, s, n, q = cloud(2, 7, 9)
    spec = KernelSpec.helmholtz(4.0)
    M = direct.dense_block(t, s, n, spec.kappa, spec.coupling, impl=impl)
    ref = np.array([[combined_kernel(x, y, nn, spec) for y, nn in zip(s, n)] for x in t])
    assert np.abs(M - ref).max() <= 1e-14 * np.abs(ref).max()


def test_block_of_charges():
    t, s, n, _ = cloud(3, 5, 8)
    Q = np.random.default_rng(3).standard_normal((8, 3)) + 0j
    out = direct.direct_sum(t, s, n, Q, 1.0, 1j)
    for c in range(3):
        assert np.allclose(out[:, c], direct.direct_sum(t, s, n, Q[:, c], 1.0, 1j), rtol=0, atol=1e-15)


def test_backends_agree_bitwise_enough():
    if direct.BACKEND != "compiled":
        pytest.skip("compiled extension not built")
    t, s, n, q = cloud(4, 200, 300)
    a = direct.direct_sum(t, s, n, q, 3.0, 3j, impl="compiled")
    b = direct.direct_sum(t, s, n, q, 3.0, 3j, impl="python")
    assert np.abs(a - b).max() <= 1e-14 * np.abs(b).max()


def test_threads_do_not_change_result():
    t, s, n, q = cloud(5, 100, 100)
    direct.set_threads(1)
    a = direct.direct_sum(t, s, n, q, 2.0, 2j)
    direct.set_threads(3)
    b = direct.direct_sum(t, s, n, q, 2.0, 2j)
    direct.set_threads(1)
    assert np.array_equal(a, b)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10 ** 6), a=st.complex_numbers(max_magnitude=10, allow_nan=False,
                                                         allow_infinity=False))
def test_linear_in_charge(seed, a):
    t, s, n, q = cloud(seed, 6, 6)
    f = direct.direct_sum(t, s, n, q, 1.5, 1.5j)
    g = direct.direct_sum(t, s, n, a * q, 1.5, 1.5j)
    assert np.abs(g - a * f).max() <= 1e-12 * (abs(a) * np.abs(f).max() + 1e-300)
