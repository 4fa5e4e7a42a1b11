"""Per-body skeletonization and the compressed multi-body system.

Each body's off-diagonal interactions are compressed with one interpolative
decomposition against a proxy sphere, so that every block satisfies
``A_pq ~= U_p A_pq[I_p, I_q] V_q*`` with ``U_p[I_p] = V_p[I_p] = I``.  The
reduced system ``s + S B s = -v~`` couples only skeleton nodes, and ``B`` on
skeletons is a literal submatrix of the original, applied by direct summation.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import qr, solve_triangular

from . import direct
from .gmres import gmres
from .kernels import KernelSpec, phi
from .multibody import GmresConfig, Scene, SceneError, SolveReport

__all__ = ["SkeletonError", "ProxySurface", "SkeletonData", "ReducedSystem", "fibonacci_sphere",
           "proxy_surface", "build_incoming_matrix", "build_outgoing_matrix", "randomized_id",
           "skeletonize_body", "skeletonize_scene", "form_reduced_system", "apply_B_reduced",
           "solve_reduced", "reconstruct_density"]

log = logging.getLogger(__name__)

INTERP_CAP = 2.0
OVERSAMPLE = 10


class SkeletonError(ValueError):
    """Bad precision, proxy geometry or dimensions."""


def fibonacci_sphere(n: int) -> np.ndarray:
    """``n`` near-uniform unit vectors on a golden-angle spiral."""
    k = np.arange(n) + 0.5
    z = 1 - 2 * k / n
    th = np.pi * (1 + 5 ** 0.5) * k
    s = np.sqrt(1 - z * z)
    return np.column_stack([s * np.cos(th), s * np.sin(th), z])


@dataclass(frozen=True)
class ProxySurface:
    center: np.ndarray
    radius: float
    points: np.ndarray
    normals: np.ndarray

    @property
    def n(self) -> int:
        return len(self.points)


def proxy_surface(points: np.ndarray, n_proxy: int, radius: Optional[float] = None,
                  c_prox: float = 1.75, center: Optional[np.ndarray] = None) -> ProxySurface:
    """Spiral point set on a sphere around a body's nodes.

    The default radius is ``c_prox`` times the circumradius about ``center``
    (the node centroid unless given).
    """
    c = points.mean(axis=0) if center is None else np.asarray(center, float)
    rc = float(np.linalg.norm(points - c, axis=1).max())
    R = c_prox * rc if radius is None else float(radius)
    if R <= rc:
        raise SkeletonError(f"proxy radius {R:.4g} does not enclose the body (circumradius {rc:.4g})")
    u = fibonacci_sphere(int(n_proxy))
    return ProxySurface(c, R, c + R * u, u)


def _dphi_dn(x, y, ny, kappa):
    """Normal derivative in ``y`` of ``phi(x, y)``: field of a dipole at ``y``."""
    d = x[:, None, :] - y[None, :, :]
    R = np.sqrt(np.einsum("ijk,ijk->ij", d, d))
    nd = np.einsum("ijk,jk->ij", d, ny)
    return np.exp(1j * kappa * R) * (1 - 1j * kappa * R) * nd / (4 * np.pi * R ** 3)


def build_incoming_matrix(points: np.ndarray, proxy: ProxySurface, spec: KernelSpec) -> np.ndarray:
    """Fields at body nodes from monopoles and dipoles on the proxy sphere (``n x 2 n_proxy``)."""
    if np.linalg.norm(points - proxy.center, axis=1).max() >= proxy.radius:
        raise SkeletonError("proxy sphere intersects the body")
    k = spec.kappa
    mono = phi(points[:, None, :], proxy.points[None, :, :], k)
    dip = _dphi_dn(points, proxy.points, proxy.normals, k)
    return np.hstack([mono, dip])


def build_outgoing_matrix(points, normals, weights, proxy: ProxySurface, spec: KernelSpec) -> np.ndarray:
    """Fields on the proxy sphere from each weighted body node (``n_proxy x n``)."""
    K = direct.dense_block(proxy.points, points, normals, spec.kappa, spec.coupling)
    return K * weights[None, :]


def _interp_coeffs(R: np.ndarray, k: int) -> np.ndarray:
    return solve_triangular(R[:k, :k], R[:k, k:], lower=False, check_finite=False)


def randomized_id(M: np.ndarray, eps: float, rng: Optional[np.random.Generator] = None,
                  power_iters: int = 0, k_guess: int = 20, cap: float = INTERP_CAP,
                  check: float = 10.0):
    """Row interpolative decomposition ``M ~= X M[idx]`` with ``X[idx] = I``.

    A Gaussian sketch ``Y = M Omega`` (grown until its numerical rank is at
    least ``OVERSAMPLE`` below its width) is column-pivoted QR factorised; rank
    is the number of ``|R_ii| > eps |R_00|``.  Strong rank-revealing swaps keep
    every interpolation coefficient at most ``cap`` in modulus.  The rank is
    increased until ``||M - X M[idx]||_F <= check * eps * ||M||_F``.

    Returns ``(k, idx, X)``.
    """
    if not 0 < eps < 1:
        raise SkeletonError("precision must lie in (0, 1)")
    M = np.asarray(M)
    if not np.all(np.isfinite(M)):
        raise SkeletonError("matrix has non-finite entries")
    rng = rng if rng is not None else np.random.default_rng(0)
    n, m = M.shape
    normM = np.linalg.norm(M)
    if normM == 0:
        return 0, np.zeros(0, int), np.zeros((n, 0), M.dtype)
    cplx = np.iscomplexobj(M)
    ell = min(m, max(k_guess, 1) + OVERSAMPLE)
    while True:
        k, idx, X, err = _id_from_sketch(M, normM, eps, rng, power_iters, ell, cap, check, cplx)
        if err <= check * eps:
            return k, idx, X
        if ell >= min(m, n):
            log.warning("ID stopped at full sketch rank %d with error %.2e", k, err)
            return k, idx, X
        # verification failed with the whole sketch in use: widen it
        ell = min(m, 2 * ell)


def _id_from_sketch(M, normM, eps, rng, power_iters, ell, cap, check, cplx):
    n, m = M.shape
    while True:
        Om = rng.standard_normal((m, ell))
        if cplx:
            Om = Om + 1j * rng.standard_normal((m, ell))
        Y = M @ Om
        for _ in range(power_iters):
            Y, _ = np.linalg.qr(Y)
            Y = M @ (M.conj().T @ Y)
        _, R, perm = qr(Y.T, mode="economic", pivoting=True)
        d = np.abs(np.diag(R))
        k = int(np.count_nonzero(d > eps * d[0]))
        if k + OVERSAMPLE <= ell or ell >= m:
            break
        ell = min(m, 2 * ell)
    k = max(k, 1)
    Yt = Y.T
    while True:
        perm, R = _strong_swaps(Yt, perm, R, k, cap)
        idx = perm[:k]
        X = np.zeros((n, k), M.dtype if cplx else float)
        X[idx] = np.eye(k)
        X[perm[k:]] = _interp_coeffs(R, k).T
        err = np.linalg.norm(M - X @ M[idx]) / normM
        if err <= check * eps or k >= min(n, ell):
            return k, idx, X, err
        k += max(1, k // 10)
        k = min(k, n, ell)


def _strong_swaps(Yt: np.ndarray, perm: np.ndarray, R: np.ndarray, k: int, cap: float,
                  max_swaps: int = 200):
    """Swap skeleton and residual columns until all ``|R11^{-1} R12| <= cap``."""
    perm = perm.copy()
    ncol = Yt.shape[1]
    if k >= ncol:
        return perm, R
    for _ in range(max_swaps):
        T = _interp_coeffs(R, k)
        if T.size == 0:
            break
        i, j = np.unravel_index(np.argmax(np.abs(T)), T.shape)
        if abs(T[i, j]) <= cap:
            break
        perm[[i, k + j]] = perm[[k + j, i]]
        R = np.linalg.qr(Yt[:, perm], mode="r")
    return perm, R


@dataclass(frozen=True)
class SkeletonData:
    """Rank, skeleton indices (body-local) and interpolation matrices of one body."""

    rank: int
    index: np.ndarray
    U: np.ndarray
    V: np.ndarray
    eps: float
    proxy_radius: float
    n_proxy: int

    @property
    def n(self) -> int:
        return self.U.shape[0]


def _proxy_radius(scene: Scene, p: int, c_prox: float) -> float:
    """``c_prox`` circumradii, pushed out towards the nearest other body when possible.

    A larger sphere sees fewer incoming fields and therefore gives a smaller
    skeleton; it must still exclude every node of every other body.
    """
    g = scene.bodies[p].grid
    c = g.points.mean(axis=0)
    rc = float(np.linalg.norm(g.points - c, axis=1).max())
    base = c_prox * rc
    others = np.flatnonzero(scene.ids != p)
    if others.size == 0:
        return base
    dmin = float(np.linalg.norm(scene.points[others] - c, axis=1).min())
    if base >= dmin:
        fallback = 0.5 * (rc + dmin)
        log.warning("body %d: proxy radius %.3g reaches a neighbour; using %.3g", p, base, fallback)
        return fallback
    return max(base, 0.9 * dmin)


def skeletonize_body(scene: Scene, p: int, eps: float, rng: Optional[np.random.Generator] = None,
                     c_prox: float = 1.75, n_proxy: Optional[int] = None,
                     radius: Optional[float] = None, k_guess: int = 50) -> SkeletonData:
    """Shared-index ID of ``[incoming, outgoing^T]`` for body ``p``."""
    g = scene.bodies[p].grid
    spec = scene.spec
    rng = rng if rng is not None else np.random.default_rng(p)
    R = _proxy_radius(scene, p, c_prox) if radius is None else radius
    npx = max(200, 4 * k_guess) if n_proxy is None else int(n_proxy)
    power = 1 if spec.equation == "helmholtz" else 0
    while True:
        proxy = proxy_surface(g.points, npx, R)
        Min = build_incoming_matrix(g.points, proxy, spec)
        Mout = build_outgoing_matrix(g.points, g.normals, g.weights, proxy, spec).T
        C = np.hstack([Min / np.linalg.norm(Min), Mout / np.linalg.norm(Mout)])
        k, idx, X = randomized_id(C, eps, rng, power_iters=power, k_guess=k_guess)
        if 3 * k <= npx or npx >= 4 * g.n:
            break
        log.info("body %d: rank %d saturates %d proxy points; enlarging", p, k, npx)
        npx = max(2 * npx, 4 * k)
        k_guess = k
    return SkeletonData(k, np.asarray(idx), X, X.conj(), eps, float(R), npx)


def skeletonize_scene(scene: Scene, eps: float, seed: int = 0, **kw) -> list[SkeletonData]:
    rng = np.random.default_rng(seed)
    return [skeletonize_body(scene, p, eps, rng, **kw) for p in range(scene.m)]


@dataclass
class ReducedSystem:
    scene: Scene
    skeletons: list
    S: list
    offsets: np.ndarray
    points: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    ids: np.ndarray
    global_index: np.ndarray
    t_pre: float = 0.0

    @property
    def N_compressed(self) -> int:
        return int(self.offsets[-1])

    def block(self, p: int) -> slice:
        return slice(int(self.offsets[p]), int(self.offsets[p + 1]))

    def reduce_rhs(self, v) -> np.ndarray:
        """``v~_p = V_p* A_pp^{-1} v_p`` for every body."""
        v = self.scene.check_vector(v)
        out = np.empty(self.N_compressed, complex)
        for p, (b, sk) in enumerate(zip(self.scene.bodies, self.skeletons)):
            out[self.block(p)] = sk.V.conj().T @ b.op.apply_inverse(v[self.scene.block(p)])
        return out


def form_reduced_system(scene: Scene, skeletons: Sequence[SkeletonData]) -> ReducedSystem:
    """``S_p = V_p* A_pp^{-1} U_p`` via the FFT inverse, plus skeleton node data."""
    if len(skeletons) != scene.m:
        raise SkeletonError("one skeleton per body required")
    t0 = time.perf_counter()
    S = []
    for p, (b, sk) in enumerate(zip(scene.bodies, skeletons)):
        if sk.n != b.grid.n:
            raise SkeletonError(f"skeleton of body {p} has {sk.n} rows, body has {b.grid.n} nodes")
        S.append(sk.V.conj().T @ b.op.apply_inverse(sk.U))
    ks = np.array([sk.rank for sk in skeletons])
    offsets = np.concatenate([[0], np.cumsum(ks)])
    gidx = np.concatenate([scene.offsets[p] + sk.index for p, sk in enumerate(skeletons)]).astype(int)
    return ReducedSystem(scene, list(skeletons), S, offsets, scene.points[gidx], scene.normals[gidx],
                         scene.weights[gidx], scene.ids[gidx], gidx, time.perf_counter() - t0)


def apply_B_reduced(red: ReducedSystem, s) -> np.ndarray:
    """``B~ s``: the off-diagonal system restricted to skeleton rows and columns."""
    sc = red.scene
    return direct.direct_sum(red.points, red.points, red.normals, red.weights * s,
                             sc.spec.kappa, sc.spec.coupling, red.ids, red.ids)


def _apply_S(red: ReducedSystem, s) -> np.ndarray:
    out = np.empty_like(s)
    for p, Sp in enumerate(red.S):
        out[red.block(p)] = Sp @ s[red.block(p)]
    return out


def solve_reduced(red: ReducedSystem, rhs, cfg: GmresConfig = GmresConfig()):
    """GMRES on ``s + S B~ s = -v~``; ``rhs`` is the full boundary data ``v``."""
    t0 = time.perf_counter()
    vt = red.reduce_rhs(rhs)
    if red.scene.m == 1:
        matvec = lambda s: s  # noqa: E731
    else:
        matvec = lambda s: s + _apply_S(red, apply_B_reduced(red, s))  # noqa: E731
    res = gmres(matvec, -vt, tol=cfg.tol, max_iter=cfg.max_iter, restart=cfg.restart)
    sc = red.scene
    report = SolveReport(res.iterations, res.history, sc.t_pre + red.t_pre,
                         time.perf_counter() - t0, red.N_compressed,
                         [sk.rank for sk in red.skeletons], sc.m, res.converged, res.stagnated,
                         True, "reduced")
    return res.x, report


def reconstruct_density(red: ReducedSystem, s, rhs) -> np.ndarray:
    """Full density ``sigma_p = -A_pp^{-1} (v_p + U_p (B~ s)_p)``."""
    sc = red.scene
    v = sc.check_vector(rhs)
    s = np.asarray(s, complex)
    if s.shape != (red.N_compressed,):
        raise SkeletonError("reduced density has the wrong length")
    Bs = apply_B_reduced(red, s) if sc.m > 1 else np.zeros_like(s)
    sigma = np.empty(sc.N, complex)
    for p, (b, sk) in enumerate(zip(sc.bodies, red.skeletons)):
        sl = sc.block(p)
        sigma[sl] = -b.op.apply_inverse(v[sl] + sk.U @ Bs[red.block(p)])
    return sigma
