"""Scene construction: shared per-shape operators, rigid placements, lattice layouts."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.spatial import cKDTree

from .body_operator import OperatorCache
from .geometry import (GeneratingCurve, RigidMotion, build_curve_quadrature, polar_grading,
                       tensor_grid)
from .kernels import KernelSpec
from .multibody import Body, Scene

__all__ = ["Resolution", "BodySpec", "build_scene", "lattice_positions", "layout_for_gap",
           "surface_gap"]


@dataclass(frozen=True)
class Resolution:
    """Panels along the generating curve, Gauss order, azimuthal nodes."""

    r_panels: int = 10
    order: int = 10
    n_fourier: int = 41
    grading: Optional[str] = None


@dataclass(frozen=True)
class BodySpec:
    curve: GeneratingCurve
    motion: RigidMotion
    resolution: Resolution = Resolution()


def build_scene(bodies: Sequence[BodySpec], spec: KernelSpec,
                cache: Optional[OperatorCache] = None) -> Scene:
    """Grids plus factorised operators; identical shapes share one operator."""
    cache = cache if cache is not None else OperatorCache()
    t0 = time.perf_counter()
    built = []
    for k, b in enumerate(bodies):
        res = b.resolution
        grading = polar_grading if res.grading == "polar" else None
        quad = build_curve_quadrature(b.curve, res.r_panels, res.order, grading)
        op = cache.get(quad, spec, res.n_fourier)
        built.append(Body(tensor_grid(quad, res.n_fourier, b.motion, body_id=k), op))
    return Scene(built, spec, t_pre=time.perf_counter() - t0)


def lattice_positions(count: int, dims: Optional[Sequence[int]] = None) -> np.ndarray:
    """Integer lattice sites (centred at the origin) for ``count`` bodies."""
    if dims is None:
        side = int(np.ceil(count ** (1 / 3) - 1e-9))
        dims = (side, side, side)
        # drop empty layers
        while (dims[2] - 1) * dims[0] * dims[1] >= count:
            dims = (dims[0], dims[1], dims[2] - 1)
    ijk = np.stack(np.meshgrid(*[np.arange(d) for d in dims], indexing="ij"), -1).reshape(-1, 3)
    ijk = ijk[:count].astype(float)
    return ijk - ijk.mean(axis=0)


def _surface_samples(curve: GeneratingCurve, motion: RigidMotion, n_t: int = 160,
                     n_theta: int = 96) -> np.ndarray:
    _, r, z, _, _ = curve.sample(n_t)
    th = 2 * np.pi * np.arange(n_theta) / n_theta
    pts = np.stack([np.multiply.outer(np.cos(th), r), np.multiply.outer(np.sin(th), r),
                    np.broadcast_to(z, (n_theta, r.size))], -1).reshape(-1, 3)
    return motion.apply(pts)


def surface_gap(curves: Sequence[GeneratingCurve], motions: Sequence[RigidMotion]) -> float:
    """Smallest distance between densely sampled surfaces of distinct bodies."""
    local = [_surface_samples(c, RigidMotion(m.quaternion)) for c, m in zip(curves, motions)]
    pts = [p + np.asarray(m.translation) for p, m in zip(local, motions)]
    best = np.inf
    for p in range(len(pts)):
        tree = cKDTree(pts[p])
        for q in range(p + 1, len(pts)):
            best = min(best, float(tree.query(pts[q], k=1)[0].min()))
    return best


def layout_for_gap(curves: Sequence[GeneratingCurve], gap: float, rng: np.random.Generator,
                   dims: Optional[Sequence[int]] = None, random_orientation: bool = True
                   ) -> list[RigidMotion]:
    """Random orientations on a cubic lattice whose pitch gives the requested minimum gap."""
    n = len(curves)
    rots = [RigidMotion.random(rng) if random_orientation else RigidMotion.identity()
            for _ in range(n)]
    sites = lattice_positions(n, dims)
    if n == 1:
        return rots
    local = [_surface_samples(c, r) for c, r in zip(curves, rots)]
    trees = [cKDTree(p) for p in local]
    radii = np.array([np.linalg.norm(p, axis=1).max() for p in local])
    pairs = [(p, q) for p in range(n) for q in range(p + 1, n)
             if np.linalg.norm(sites[q] - sites[p]) < 1.8]

    def gap_at(pitch):
        best = np.inf
        for p, q in pairs:
            shift = pitch * (sites[q] - sites[p])
            if np.linalg.norm(shift) - radii[p] - radii[q] >= best:
                continue
            best = min(best, float(trees[p].query(local[q] + shift, k=1)[0].min()))
        return best - gap

    diam = 2 * radii.max()
    # at pitch == gap the bodies must overlap; at diam + gap they cannot touch
    pitch = brentq(gap_at, gap, diam + gap, xtol=1e-8 * diam)
    return [RigidMotion(r.quaternion, tuple(pitch * s)) for r, s in zip(rots, sites)]
