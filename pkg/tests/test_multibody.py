import warnings

import numpy as np
import pytest

from axiscatter.body_operator import OperatorCache
from axiscatter.geometry import Ellipsoid, RigidMotion
from axiscatter.kernels import KernelSpec, combined_kernel
from axiscatter.multibody import (GmresConfig, SceneError, SeparationWarning, apply_B, apply_D,
                                  apply_D_inverse, apply_full, materialize_full, offdiag_entry,
                                  solve)
from axiscatter.scenes import BodySpec, Resolution, build_scene, layout_for_gap, surface_gap

RES = Resolution(4, 6, 11)


def spheres(offsets, spec=KernelSpec.laplace(), cache=None, res=RES):
    bodies = [BodySpec(Ellipsoid(1.0, 1.0), RigidMotion(translation=tuple(o)), res) for o in offsets]
    return build_scene(bodies, spec, cache or OperatorCache())


def test_apply_B_matches_materialized(two_body_scene, rng):
    sc = two_body_scene
    assert sc.N <= 4000
    B = materialize_full(sc)
    for p in range(sc.m):
        B[sc.block(p), sc.block(p)] = 0
    s = rng.standard_normal(sc.N) + 1j * rng.standard_normal(sc.N)
    ref = B @ s
    assert np.abs(apply_B(sc, s) - ref).max() <= 1e-13 * np.abs(ref).max()


def test_apply_full_matches_materialized(two_body_scene, rng):
    sc = two_body_scene
    s = rng.standard_normal(sc.N) + 0j
    A = materialize_full(sc)
    assert np.abs(apply_full(sc, s) - A @ s).max() <= 1e-12 * np.abs(A @ s).max()
    assert np.abs(apply_D(sc, apply_D_inverse(sc, s)) - s).max() < 1e-11


def test_single_entry_definition(two_body_scene):
    sc = two_body_scene
    g0, g1 = sc.bodies[0].grid, sc.bodies[1].grid
    i, j = 7, 123
    ref = combined_kernel(g0.points[i], g1.points[j], g1.normals[j], sc.spec) * g1.weights[j]
    assert offdiag_entry(sc, 0, i, 1, j) == ref
    with pytest.raises(SceneError):
        offdiag_entry(sc, 0, i, 0, j)


def test_indicator_column(two_body_scene):
    sc = two_body_scene
    j = 50
    e = np.zeros(sc.N, complex)
    e[sc.offsets[1] + j] = 1
    out = apply_B(sc, e)
    assert np.all(out[sc.block(1)] == 0)
    g1 = sc.bodies[1].grid
    ref = combined_kernel(sc.bodies[0].grid.points, g1.points[j], g1.normals[j], sc.spec) * g1.weights[j]
    assert np.abs(out[sc.block(0)] - ref).max() <= 1e-14 * np.abs(ref).max()


def test_single_body_B_is_zero(sphere_scene):
    s = np.ones(sphere_scene.N)
    assert np.all(apply_B(sphere_scene, s) == 0)


def test_swapping_bodies_permutes_blocks():
    cache = OperatorCache()
    a = spheres([(0, 0, 0), (3, 1, 0)], cache=cache)
    b = spheres([(3, 1, 0), (0, 0, 0)], cache=cache)
    Ma, Mb = materialize_full(a), materialize_full(b)
    n = a.sizes[0]
    assert np.abs(Ma[:n, n:] - Mb[n:, :n]).max() < 1e-15
    assert np.abs(Ma[n:, :n] - Mb[:n, n:]).max() < 1e-15


def test_far_field_decay():
    cache = OperatorCache()
    norms = []
    for d in (20.0, 40.0):
        sc = spheres([(0, 0, 0), (d, 0, 0)], cache=cache)
        M = materialize_full(sc)
        n = sc.sizes[0]
        norms.append((np.linalg.norm(M[:n, n:]), np.linalg.norm(M[:n, :n])))
    assert norms[0][0] < 0.05 * norms[0][1]
    assert abs(norms[0][0] / norms[1][0] - 2) < 0.1      # ~1/d


def test_overlap_and_separation_checks():
    with pytest.raises(SceneError):
        spheres([(0, 0, 0), (0, 0, 0)])
    with pytest.warns(SeparationWarning):
        spheres([(0, 0, 0), (2.05, 0, 0)])


def test_vector_length_checked(sphere_scene):
    with pytest.raises(SceneError):
        apply_B(sphere_scene, np.ones(sphere_scene.N + 1))


def test_single_body_one_iteration(sphere_scene, rng):
    v = rng.standard_normal(sphere_scene.N) + 0j
    sigma, rep = solve(sphere_scene, v)
    assert rep.iterations == 1 and rep.converged
    assert np.abs(sigma + sphere_scene.bodies[0].op.apply_inverse(v)).max() < 1e-12


def test_preconditioned_and_plain_solves_agree(two_body_scene, rng):
    sc = two_body_scene
    v = rng.standard_normal(sc.N) + 0j
    s1, r1 = solve(sc, v, GmresConfig(tol=1e-12))
    s2, r2 = solve(sc, v, GmresConfig(tol=1e-12, precondition=False))
    assert r1.converged and r2.converged
    assert r1.iterations <= r2.iterations
    assert np.abs(s1 - s2).max() <= 1e-9 * np.abs(s1).max()
    assert np.linalg.norm(apply_full(sc, s1) + v) <= 1e-10 * np.linalg.norm(v)
    assert r1.residual == "preconditioned" and r2.residual == "unpreconditioned"


def test_laplace_preconditioning_parity():
    sc = spheres([(0, 0, 0), (4, 0, 0)])
    v = np.random.default_rng(0).standard_normal(sc.N) + 0j
    _, r1 = solve(sc, v)
    _, r2 = solve(sc, v, GmresConfig(precondition=False))
    assert r1.iterations <= r2.iterations


def test_gmres_config_validation():
    with pytest.raises(SceneError):
        GmresConfig(tol=0)
    with pytest.raises(SceneError):
        GmresConfig(max_iter=0)


def test_layout_achieves_gap():
    curves = [Ellipsoid(0.5, 1.0)] * 4
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        motions = layout_for_gap(curves, 0.2, np.random.default_rng(0))
    assert abs(surface_gap(curves, motions) - 0.2) < 2e-3
