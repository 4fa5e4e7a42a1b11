"""Scattered-field evaluation and the point-source verification problem."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from . import direct
from .kernels import phi
from .multibody import Scene, SceneError

__all__ = ["IncidentField", "TargetSet", "point_sources", "plane_wave", "sphere_targets",
           "evaluate_field", "dirichlet_data", "exact_field", "rel_inf_error", "MarginWarning"]


class MarginWarning(UserWarning):
    """Evaluation point closer to a surface than the requested margin."""


@dataclass(frozen=True)
class IncidentField:
    """Interior point sources (``kind="sources"``) or a plane wave."""

    kind: str
    sources: Optional[np.ndarray] = None
    strengths: Optional[np.ndarray] = None
    direction: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind == "sources":
            s = np.atleast_2d(np.asarray(self.sources, float))
            q = np.ones(len(s), complex) if self.strengths is None else np.asarray(self.strengths, complex)
            if s.shape[1] != 3 or q.shape != (len(s),):
                raise SceneError("sources must be (k, 3) with k strengths")
            object.__setattr__(self, "sources", s)
            object.__setattr__(self, "strengths", q)
        elif self.kind == "plane_wave":
            d = np.asarray(self.direction, float)
            if d.shape != (3,) or not np.isclose(np.linalg.norm(d), 1.0):
                raise SceneError("plane-wave direction must be a unit 3-vector")
            object.__setattr__(self, "direction", d)
        else:
            raise SceneError(f"unknown incident field kind {self.kind!r}")

    def as_dict(self) -> dict:
        if self.kind == "sources":
            return {"kind": "sources", "sources": self.sources.tolist(),
                    "strengths": [[z.real, z.imag] for z in self.strengths]}
        return {"kind": "plane_wave", "direction": self.direction.tolist()}


def _inside(scene: Scene, p: int, x: np.ndarray) -> np.ndarray:
    g = scene.bodies[p].grid
    local = g.motion.inverse_apply(np.atleast_2d(x))
    r = np.hypot(local[:, 0], local[:, 1])
    return g.quad.curve.contains(r, local[:, 2])


def point_sources(scene: Scene, rng: np.random.Generator, strength: complex = 1.0) -> IncidentField:
    """One source per body, uniform in a ball of half the inscribed-disc radius.

    The ball is centred on the inscribed disc rotated to a random azimuth, so
    it lies inside the body for axis-anchored and ring-shaped bodies alike.
    """
    pts = []
    for p, b in enumerate(scene.bodies):
        rc, zc, rad = b.grid.quad.curve.interior_disc()
        th = rng.uniform(0, 2 * np.pi)
        centre = np.array([rc * np.cos(th), rc * np.sin(th), zc])
        u = rng.standard_normal(3)
        u *= 0.5 * rad * rng.uniform() ** (1 / 3) / np.linalg.norm(u)
        x = b.grid.motion.apply((centre + u)[None])[0]
        if not _inside(scene, p, x)[0]:
            raise SceneError(f"verification source for body {p} fell outside the body")
        pts.append(x)
    return IncidentField("sources", np.array(pts), np.full(len(pts), strength, complex))


def plane_wave(direction) -> IncidentField:
    d = np.asarray(direction, float)
    return IncidentField("plane_wave", direction=d / np.linalg.norm(d))


@dataclass(frozen=True)
class TargetSet:
    points: np.ndarray
    margin: float
    degraded: bool = False


def sphere_targets(scene: Scene, n: int, rng: np.random.Generator, factor: float = 3.0,
                   margin: Optional[float] = None) -> TargetSet:
    """``n`` random points on a sphere enclosing the scene, ``factor`` times its radius."""
    c = scene.points.mean(axis=0)
    R = np.linalg.norm(scene.points - c, axis=1).max()
    u = rng.standard_normal((n, 3))
    u /= np.linalg.norm(u, axis=1)[:, None]
    return check_targets(scene, c + factor * R * u, margin)


def check_targets(scene: Scene, points, margin: Optional[float] = None) -> TargetSet:
    """Flag targets closer than ``margin`` (default two node spacings) to any surface node."""
    pts = np.atleast_2d(np.asarray(points, float))
    if margin is None:
        margin = 2.0 * max(b.grid.spacing() for b in scene.bodies)
    d = cKDTree(scene.points).query(pts, k=1)[0]
    degraded = bool(np.any(d < margin))
    if degraded:
        warnings.warn(f"{int(np.sum(d < margin))} target(s) within {margin:.3g} of a surface; "
                      "field values there are inaccurate", MarginWarning, stacklevel=2)
    return TargetSet(pts, float(margin), degraded)


def evaluate_field(scene: Scene, sigma, targets) -> np.ndarray:
    """``u(x) = sum_i G(x, x_i) sigma_i w_i`` at each target."""
    pts = targets.points if isinstance(targets, TargetSet) else np.atleast_2d(np.asarray(targets, float))
    sigma = scene.check_vector(sigma)
    return direct.direct_sum(pts, scene.points, scene.normals, scene.weights * sigma,
                             scene.spec.kappa, scene.spec.coupling)


def _source_field(incident: IncidentField, x: np.ndarray, kappa: float) -> np.ndarray:
    if incident.kind == "plane_wave":
        return np.exp(1j * kappa * (x @ incident.direction))
    out = np.zeros(len(x), complex)
    for y, q in zip(incident.sources, incident.strengths):
        out += q * phi(x, y, kappa)
    return out


def dirichlet_data(incident: IncidentField, scene: Scene) -> np.ndarray:
    """Boundary data ``v`` at every node of the scene."""
    if incident.kind == "sources":
        for y in incident.sources:
            if not any(_inside(scene, p, y)[0] for p in range(scene.m)):
                raise SceneError(f"source {y.tolist()} is not inside any body")
    return _source_field(incident, scene.points, scene.spec.kappa)


def exact_field(incident: IncidentField, scene: Scene, targets) -> np.ndarray:
    """Exterior solution for point-source data: ``u = -sum_s q_s phi(x, y_s)``.

    The solver enforces ``u = -v`` on the surfaces, and the negated source
    field is the unique radiating solution with that trace.
    """
    if incident.kind != "sources":
        raise SceneError("an exact exterior field is only known for interior point sources")
    pts = targets.points if isinstance(targets, TargetSet) else np.atleast_2d(np.asarray(targets, float))
    return -_source_field(incident, pts, scene.spec.kappa)


def rel_inf_error(u_approx, u_exact) -> float:
    """``max |u_approx - u_exact| / max |u_exact|``."""
    a, e = np.asarray(u_approx), np.asarray(u_exact)
    if a.shape != e.shape:
        raise ValueError("length mismatch")
    scale = np.abs(e).max() if e.size else 0.0
    if scale == 0:
        raise ValueError("exact field has zero norm")
    return float(np.abs(a - e).max() / scale)
