"""Multi-body system ``(D + B) sigma = -v`` and its block-diagonally preconditioned solve.

``D`` holds one corrected single-body operator per body and is applied (or
inverted) mode by mode.  ``B`` couples different bodies through the plain
quadrature rule, which is accurate because the kernel is smooth between
disjoint bodies, and is applied by direct summation.
"""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from . import direct
from .body_operator import BodyOperator
from .geometry import BodyGrid
from .gmres import gmres
from .kernels import KernelSpec, combined_kernel

__all__ = ["SceneError", "Body", "Scene", "GmresConfig", "SolveReport", "offdiag_entry",
           "apply_B", "apply_D", "apply_D_inverse", "apply_full", "materialize_full", "solve"]

log = logging.getLogger(__name__)


class SceneError(ValueError):
    """Invalid scene, index or vector length."""


class SeparationWarning(UserWarning):
    """Bodies closer than twice the local node spacing."""


@dataclass(frozen=True)
class Body:
    grid: BodyGrid
    op: BodyOperator


@dataclass
class Scene:
    """Bodies, kernel and precomputed pairwise node distances."""

    bodies: list
    spec: KernelSpec
    t_pre: float = 0.0
    min_distance: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.bodies:
            raise SceneError("a scene needs at least one body")
        for b in self.bodies:
            if b.op.n_gamma != b.grid.n_gamma or b.op.n_fourier != b.grid.n_fourier:
                raise SceneError("operator resolution does not match its grid")
            if b.op.spec != self.spec:
                raise SceneError("operator kernel does not match the scene kernel")
        m = len(self.bodies)
        self.min_distance = np.full((m, m), np.inf)
        trees = [cKDTree(b.grid.points) for b in self.bodies]
        for p in range(m):
            for q in range(p + 1, m):
                d = float(trees[q].query(self.bodies[p].grid.points, k=1)[0].min())
                self.min_distance[p, q] = self.min_distance[q, p] = d
                if d <= 0:
                    raise SceneError(f"bodies {p} and {q} overlap")
                h = 2.0 * max(self.bodies[p].grid.spacing(), self.bodies[q].grid.spacing())
                if d < h:
                    warnings.warn(f"bodies {p} and {q} are {d:.3g} apart, under twice the node "
                                  f"spacing {h / 2:.3g}; off-diagonal quadrature may be inaccurate",
                                  SeparationWarning, stacklevel=2)
        self.sizes = np.array([b.grid.n for b in self.bodies])
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)])
        self.points = np.concatenate([b.grid.points for b in self.bodies])
        self.normals = np.concatenate([b.grid.normals for b in self.bodies])
        self.weights = np.concatenate([b.grid.weights for b in self.bodies])
        self.ids = np.repeat(np.arange(m), self.sizes)

    @property
    def m(self) -> int:
        return len(self.bodies)

    @property
    def N(self) -> int:
        return int(self.offsets[-1])

    def block(self, p: int) -> slice:
        return slice(int(self.offsets[p]), int(self.offsets[p + 1]))

    def check_vector(self, v) -> np.ndarray:
        v = np.asarray(v, complex)
        if v.shape[0] != self.N:
            raise SceneError(f"vector length {v.shape[0]} != N = {self.N}")
        return v


@dataclass(frozen=True)
class GmresConfig:
    tol: float = 1e-9
    max_iter: int = 500
    restart: Optional[int] = None
    precondition: bool = True

    def __post_init__(self):
        if not 0 < self.tol < 1:
            raise SceneError("GMRES tolerance must lie in (0, 1)")
        if self.max_iter < 1:
            raise SceneError("max_iter must be >= 1")
        if self.restart is not None and self.restart < 1:
            raise SceneError("restart must be >= 1")


@dataclass
class SolveReport:
    iterations: int
    history: list
    t_pre: float
    t_solve: float
    N: int
    n: list
    m: int
    converged: bool
    stagnated: bool
    preconditioned: bool
    residual: str = "preconditioned"
    error: Optional[float] = None

    def as_dict(self) -> dict:
        return {
            "iterations": self.iterations, "residual_history": [float(h) for h in self.history],
            "t_pre": self.t_pre, "t_solve": self.t_solve, "N": self.N, "n": list(map(int, self.n)),
            "m": self.m, "converged": self.converged, "stagnated": self.stagnated,
            "preconditioned": self.preconditioned, "residual_kind": self.residual,
            "rel_inf_error": self.error,
        }


def offdiag_entry(scene: Scene, p: int, i: int, q: int, j: int) -> complex:
    """``G(x_i, x_j) w_j`` for node ``i`` of body ``p`` and node ``j`` of body ``q != p``."""
    if p == q:
        raise SceneError("offdiag_entry needs two different bodies")
    bp, bq = scene.bodies[p].grid, scene.bodies[q].grid
    if not (0 <= i < bp.n and 0 <= j < bq.n):
        raise SceneError("node index out of range")
    return complex(combined_kernel(bp.points[i], bq.points[j], bq.normals[j], scene.spec)
                   * bq.weights[j])


def apply_B(scene: Scene, sigma) -> np.ndarray:
    """Off-diagonal interactions by direct summation over all other bodies."""
    sigma = scene.check_vector(sigma)
    if scene.m == 1:
        return np.zeros_like(sigma)
    w = scene.weights if sigma.ndim == 1 else scene.weights[:, None]
    return direct.direct_sum(scene.points, scene.points, scene.normals, w * sigma,
                             scene.spec.kappa, scene.spec.coupling, scene.ids, scene.ids)


def _blockwise(scene: Scene, sigma, inverse: bool) -> np.ndarray:
    sigma = scene.check_vector(sigma)
    out = np.empty_like(sigma)
    for p, b in enumerate(scene.bodies):
        sl = scene.block(p)
        out[sl] = b.op.apply_inverse(sigma[sl]) if inverse else b.op.apply_forward(sigma[sl])
    return out


def apply_D(scene: Scene, sigma) -> np.ndarray:
    return _blockwise(scene, sigma, inverse=False)


def apply_D_inverse(scene: Scene, sigma) -> np.ndarray:
    return _blockwise(scene, sigma, inverse=True)


def apply_full(scene: Scene, sigma) -> np.ndarray:
    """``(D + B) sigma``."""
    return apply_D(scene, sigma) + apply_B(scene, sigma)


def materialize_full(scene: Scene) -> np.ndarray:
    """Dense ``N x N`` system matrix for small scenes (testing only)."""
    from .body_operator import materialize
    A = direct.dense_block(scene.points, scene.points, scene.normals, scene.spec.kappa,
                           scene.spec.coupling) if scene.m > 1 else np.zeros((scene.N, scene.N), complex)
    A = A * scene.weights[None, :]
    for p, b in enumerate(scene.bodies):
        sl = scene.block(p)
        A[sl, sl] = materialize(b.op)
    return A


def solve(scene: Scene, rhs, cfg: GmresConfig = GmresConfig()):
    """Solve ``(D + B) sigma = -v`` for boundary data ``v``.

    With preconditioning GMRES runs on ``sigma + D^{-1} B sigma = -D^{-1} v``
    and the reported residuals are those of the preconditioned system.
    """
    v = scene.check_vector(rhs)
    t0 = time.perf_counter()
    if cfg.precondition:
        b = -apply_D_inverse(scene, v)
        matvec = lambda s: s + apply_D_inverse(scene, apply_B(scene, s))  # noqa: E731
    else:
        b = -v
        matvec = lambda s: apply_full(scene, s)  # noqa: E731
    res = gmres(matvec, b, tol=cfg.tol, max_iter=cfg.max_iter, restart=cfg.restart)
    t_solve = time.perf_counter() - t0
    if not res.converged:
        log.warning("GMRES stopped after %d iterations at residual %.3e", res.iterations,
                    res.history[-1])
    report = SolveReport(res.iterations, res.history, scene.t_pre, t_solve, scene.N,
                         [b_.grid.n for b_ in scene.bodies], scene.m, res.converged,
                         res.stagnated, cfg.precondition,
                         "preconditioned" if cfg.precondition else "unpreconditioned")
    return res.x, report
