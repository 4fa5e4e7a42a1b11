"""Generating curves, panel quadrature on the curve, and tensor-product surface grids.

A body is a surface of revolution about the local z-axis.  Its generating
curve lives in the half-plane ``r >= 0`` and is either *axis-anchored* (both
endpoints on the axis, meeting it at a right angle) or a *closed loop* that
stays away from the axis (a torus-like body).

Node ordering on a :class:`BodyGrid` is curve-major: node ``a * n_gamma + i``
sits at curve node ``i`` and azimuthal angle ``2 pi a / n_fourier``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import CubicSpline
from scipy.spatial.transform import Rotation

__all__ = [
    "polar_grading",
    "GeometryError",
    "GeneratingCurve",
    "Ellipsoid",
    "Bowl",
    "Starfish",
    "SampledCurve",
    "CurveQuadrature",
    "RigidMotion",
    "BodyGrid",
    "shape_catalog",
    "build_curve_quadrature",
    "tensor_grid",
]


_GL16 = leggauss(16)


class GeometryError(ValueError):
    """Raised for invalid curves, quadrature parameters or grids."""


def _frozen(a) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# Generating curves
# ---------------------------------------------------------------------------
class GeneratingCurve:
    """Base class: a C^2 curve t in [0, t_max] -> (r(t), z(t)) with r >= 0.

    Subclasses implement :meth:`evaluate` returning ``(r, z, dr, dz)``.
    """

    kind: str = "abstract"
    closed: bool = False  # closed loop (periodic) vs axis-anchored
    t_max: float = np.pi

    def evaluate(self, t):
        raise NotImplementedError

    def params(self) -> dict:
        raise NotImplementedError

    def interior_disc(self) -> tuple[float, float, float]:
        """Centre (r, z) and radius of a disc inside the cross-section."""
        raise NotImplementedError

    # -- derived quantities -------------------------------------------------
    @property
    def natural_breaks(self) -> tuple[float, ...]:
        return ()

    def key(self) -> str:
        """Stable hash of the curve definition, used for operator caching."""
        blob = json.dumps({"kind": self.kind, "params": self.params()},
                          sort_keys=True, default=float)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def sample(self, n: int = 2001):
        t = np.linspace(0.0, self.t_max, n)
        return (t,) + tuple(self.evaluate(t))

    @cached_property
    def orientation(self) -> float:
        """+1 if the curve (closed along the axis if needed) runs counter-clockwise in (r, z)."""
        t, r, z, dr, dz = self.sample(4001)
        area = np.trapezoid(r * dz, t)
        return 1.0 if area > 0 else -1.0

    def normals(self, dr, dz):
        speed = np.hypot(dr, dz)
        s = self.orientation
        return s * dz / speed, -s * dr / speed

    def chord(self, t, tau):
        """``(r(t) - r(tau), z(t) - z(tau))`` without cancellation for close parameters.

        Short chords are integrated from the derivative with 16-point Gauss;
        long ones are plain differences.
        """
        t, tau = np.broadcast_arrays(np.asarray(t, float), np.asarray(tau, float))
        r1, z1, _, _ = self.evaluate(t)
        r0, z0, _, _ = self.evaluate(tau)
        cr, cz = np.asarray(r1 - r0, float), np.asarray(z1 - z0, float)
        short = np.abs(t - tau) < 1e-3 * self.t_max
        if np.any(short):
            x, w = _GL16
            h = 0.5 * (t[short] - tau[short])
            m = 0.5 * (t[short] + tau[short])
            _, _, dr, dz = self.evaluate(m[:, None] + h[:, None] * x)
            cr[short] = h * (dr @ w)
            cz[short] = h * (dz @ w)
        return cr, cz

    def circumradius(self) -> float:
        _, r, z, _, _ = self.sample(4001)
        return float(np.sqrt(r * r + z * z).max())

    def validate(self) -> None:
        t, r, z, dr, dz = self.sample(4001)
        if np.any(r < -1e-14):
            i = int(np.argmin(r))
            raise GeometryError(f"{self.kind}: r(t) < 0 at t={t[i]:.6g}")
        speed = np.hypot(dr, dz)
        if np.any(speed <= 1e-12 * max(speed.max(), 1.0)):
            i = int(np.argmin(speed))
            raise GeometryError(f"{self.kind}: degenerate speed at t={t[i]:.6g}")
        if not self.closed:
            if abs(r[0]) > 1e-12 or abs(r[-1]) > 1e-12:
                raise GeometryError(f"{self.kind}: axis-anchored curve must start and end on the axis")

    def polygon(self, n: int = 4001) -> np.ndarray:
        """Closed polygon in the (x, z) plane; axis-anchored curves are mirrored."""
        _, r, z, _, _ = self.sample(n)
        if self.closed:
            return np.column_stack([r, z])
        return np.column_stack([np.concatenate([r, -r[::-1]]),
                                np.concatenate([z, z[::-1]])])

    def contains(self, r, z) -> np.ndarray:
        """Even-odd ray test of half-plane points against the cross-section."""
        poly = self.polygon()
        r = np.atleast_1d(np.asarray(r, float))
        z = np.atleast_1d(np.asarray(z, float))
        x0, z0 = poly[:-1, 0], poly[:-1, 1]
        x1, z1 = poly[1:, 0], poly[1:, 1]
        inside = np.zeros(r.shape, bool)
        for k in range(r.size):
            crosses = (z0 > z[k]) != (z1 > z[k])
            with np.errstate(divide="ignore", invalid="ignore"):
                xc = x0 + (z[k] - z0) * (x1 - x0) / (z1 - z0)
            inside[k] = np.count_nonzero(crosses & (xc > r[k])) % 2 == 1
        return inside


@dataclass(frozen=True)
class Ellipsoid(GeneratingCurve):
    """Spheroid with equatorial semi-axis ``a`` and polar semi-axis ``c``."""

    a: float = 0.5
    c: float = 1.0
    kind = "ellipsoid"
    closed = False
    t_max = np.pi

    def __post_init__(self):
        if self.a <= 0 or self.c <= 0:
            raise GeometryError("ellipsoid semi-axes must be positive")

    def evaluate(self, t):
        t = np.asarray(t, float)
        return (self.a * np.sin(t), self.c * np.cos(t),
                self.a * np.cos(t), -self.c * np.sin(t))

    def params(self):
        return {"a": self.a, "c": self.c}

    def interior_disc(self):
        return 0.0, 0.0, min(self.a, self.c)


@dataclass(frozen=True)
class Bowl(GeneratingCurve):
    """Thick spherical cup, open towards +z.

    The cross-section is a lens in (polar angle, radius) coordinates:
    ``alpha(u) = pi - (pi - opening) sin u`` and ``rho(u) = R + h cos u`` for
    ``u`` in [0, pi].  The wall is thickest (``2h``) at the bottom and tapers to a
    rounded rim at polar angle ``opening``.  The surface is C-infinity.
    """

    radius: float = 0.75
    half_thickness: float = 0.25
    opening: float = 1.0
    kind = "bowl"
    closed = False
    t_max = np.pi

    def __post_init__(self):
        if self.half_thickness <= 0:
            raise GeometryError("bowl thickness must be positive")
        if self.half_thickness >= self.radius:
            raise GeometryError("bowl half-thickness must be smaller than its radius")
        if not 0.0 < self.opening < np.pi:
            raise GeometryError("bowl opening angle must lie in (0, pi)")

    def evaluate(self, t):
        t = np.asarray(t, float)
        A = np.pi - self.opening
        phi = A * np.sin(t)
        dphi = A * np.cos(t)
        rho = self.radius + self.half_thickness * np.cos(t)
        drho = -self.half_thickness * np.sin(t)
        r = rho * np.sin(phi)
        z = -rho * np.cos(phi)
        dr = drho * np.sin(phi) + rho * np.cos(phi) * dphi
        dz = -drho * np.cos(phi) + rho * np.sin(phi) * dphi
        return r, z, dr, dz

    def params(self):
        return {"radius": self.radius, "half_thickness": self.half_thickness,
                "opening": self.opening}

    def interior_disc(self):
        return 0.0, -self.radius, self.half_thickness


@dataclass(frozen=True)
class Starfish(GeneratingCurve):
    """Ring body whose cross-section is a starfish ``rho0 (1 + amp cos(lobes t))``."""

    base_radius: float = 0.3
    amplitude: float = 0.3
    lobes: int = 5
    offset: float = 0.65
    kind = "starfish"
    closed = True
    t_max = 2 * np.pi

    def __post_init__(self):
        if int(self.lobes) != self.lobes or self.lobes < 3:
            raise GeometryError("starfish needs at least 3 lobes")
        if not 0 <= self.amplitude < 1:
            raise GeometryError("starfish amplitude must lie in [0, 1)")
        if self.base_radius <= 0:
            raise GeometryError("starfish base radius must be positive")
        if self.offset <= self.base_radius * (1 + self.amplitude):
            raise GeometryError("starfish offset must keep the loop off the axis")

    def evaluate(self, t):
        t = np.asarray(t, float)
        L = self.lobes
        rho = self.base_radius * (1 + self.amplitude * np.cos(L * t))
        drho = -self.base_radius * self.amplitude * L * np.sin(L * t)
        c, s = np.cos(t), np.sin(t)
        return (self.offset + rho * c, rho * s,
                drho * c - rho * s, drho * s + rho * c)

    def params(self):
        return {"base_radius": self.base_radius, "amplitude": self.amplitude,
                "lobes": self.lobes, "offset": self.offset}

    def interior_disc(self):
        return self.offset, 0.0, self.base_radius * (1 - self.amplitude)


class SampledCurve(GeneratingCurve):
    """User-supplied curve reconstructed with a periodic cubic spline.

    Axis-anchored samples (first and last point on the axis) are mirrored
    across the axis before fitting so the surface stays smooth at the poles.
    """

    kind = "custom"

    def __init__(self, r: Sequence[float], z: Sequence[float], closed: bool = False):
        r = np.asarray(r, float)
        z = np.asarray(z, float)
        if r.shape != z.shape or r.size < 4:
            raise GeometryError("custom curve needs at least 4 matching (r, z) samples")
        self.closed = bool(closed)
        self._r, self._z = r, z
        if self.closed:
            if np.hypot(r[0] - r[-1], z[0] - z[-1]) > 1e-12:
                r = np.append(r, r[0])
                z = np.append(z, z[0])
            xr, xz = r, z
        else:
            if abs(r[0]) > 1e-12 or abs(r[-1]) > 1e-12:
                raise GeometryError("axis-anchored custom curve must start and end at r = 0")
            xr = np.concatenate([r, -r[-2::-1]])
            xz = np.concatenate([z, z[-2::-1]])
        seg = np.hypot(np.diff(xr), np.diff(xz))
        if np.any(seg <= 0):
            raise GeometryError("custom curve has repeated samples")
        s = np.concatenate([[0.0], np.cumsum(seg)])
        self._spl_r = CubicSpline(s, xr, bc_type="periodic")
        self._spl_z = CubicSpline(s, xz, bc_type="periodic")
        self.t_max = float(s[-1]) if self.closed else float(s[r.size - 1])

    def evaluate(self, t):
        t = np.asarray(t, float)
        return (self._spl_r(t), self._spl_z(t), self._spl_r(t, 1), self._spl_z(t, 1))

    def params(self):
        return {"r": self._r.tolist(), "z": self._z.tolist(), "closed": self.closed}

    def interior_disc(self):
        # crude: largest disc around the sample centroid that stays inside
        _, r, z, _, _ = self.sample(2001)
        poly = self.polygon(2001)
        c = np.array([poly[:, 0].mean(), poly[:, 1].mean()])
        if not self.closed:
            c[0] = 0.0
        rad = np.min(np.hypot(poly[:, 0] - c[0], poly[:, 1] - c[1]))
        return float(c[0]), float(c[1]), float(rad)


def shape_catalog(kind: str, params: Optional[dict] = None) -> GeneratingCurve:
    """Build one of the built-in curves (or a sampled one) from a parameter dict."""
    params = dict(params or {})
    builders = {
        "ellipsoid": Ellipsoid,
        "sphere": lambda radius=1.0: Ellipsoid(a=radius, c=radius),
        "bowl": Bowl,
        "starfish": Starfish,
        "torus": lambda major=1.0, minor=0.3: Starfish(base_radius=minor, amplitude=0.0,
                                                       lobes=3, offset=major),
        "custom": SampledCurve,
    }
    if kind not in builders:
        raise GeometryError(f"unknown shape kind {kind!r}")
    try:
        curve = builders[kind](**params)
    except TypeError as exc:
        raise GeometryError(f"bad parameters for {kind}: {exc}") from None
    curve.validate()
    return curve


# ---------------------------------------------------------------------------
# Curve quadrature
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class CurveQuadrature:
    """Composite Gauss-Legendre rule on a generating curve.

    ``weights`` are parameter-space weights; ``weights * speed`` integrates
    arclength and ``weights * speed * r`` (times 2 pi) integrates surface area.
    """

    curve: GeneratingCurve
    order: int
    breaks: np.ndarray
    t: np.ndarray
    weights: np.ndarray
    r: np.ndarray
    z: np.ndarray
    dr: np.ndarray
    dz: np.ndarray
    speed: np.ndarray
    nr: np.ndarray
    nz: np.ndarray
    panel: np.ndarray

    @property
    def n(self) -> int:
        return self.t.size

    @property
    def n_panels(self) -> int:
        return self.breaks.size - 1

    @property
    def jacobian(self) -> np.ndarray:
        """r |gamma'|: surface measure per unit parameter per unit angle."""
        return self.r * self.speed

    def panel_nodes(self, k: int) -> np.ndarray:
        return np.arange(k * self.order, (k + 1) * self.order)

    def neighbours(self, k: int) -> list[int]:
        """Panel k and its adjacent panels (wrapping for closed loops)."""
        m = self.n_panels
        out = [k]
        for j in (k - 1, k + 1):
            if self.curve.closed:
                j %= m
            if 0 <= j < m and j not in out:
                out.append(j)
        return out

    def arclength(self) -> float:
        return float(np.sum(self.weights * self.speed))

    def key(self) -> str:
        h = hashlib.sha256()
        h.update(self.curve.key().encode())
        h.update(np.ascontiguousarray(self.breaks).tobytes())
        h.update(str(self.order).encode())
        return h.hexdigest()[:16]


def polar_grading(u, strength: float = 0.5):
    """Monotone map of [0, 1] that shrinks panels near both ends by ``1 - strength``."""
    u = np.asarray(u, float)
    return u - strength * np.sin(2 * np.pi * u) / (2 * np.pi)


def build_curve_quadrature(curve: GeneratingCurve, r_panels: int, p: int,
                           grading: Optional[Callable[[np.ndarray], np.ndarray]] = None
                           ) -> CurveQuadrature:
    """Split the parameter interval into ``r_panels`` panels with ``p`` Gauss nodes each.

    ``grading`` optionally maps [0, 1] monotonically onto itself to cluster
    panels (e.g. towards the poles).
    """
    if int(r_panels) != r_panels or r_panels < 1:
        raise GeometryError("r_panels must be a positive integer")
    if int(p) != p or p < 2:
        raise GeometryError("Gauss order p must be at least 2")
    r_panels, p = int(r_panels), int(p)
    u = np.linspace(0.0, 1.0, r_panels + 1)
    if grading is not None:
        u = np.asarray(grading(u), float)
        if abs(u[0]) > 1e-14 or abs(u[-1] - 1) > 1e-14 or np.any(np.diff(u) <= 0):
            raise GeometryError("grading map must be increasing from 0 to 1")
    breaks = curve.t_max * u
    x, w = leggauss(p)
    a, b = breaks[:-1, None], breaks[1:, None]
    t = (0.5 * (b - a) * x + 0.5 * (a + b)).ravel()
    wt = (0.5 * (b - a) * w).ravel()
    r, z, dr, dz = curve.evaluate(t)
    speed = np.hypot(dr, dz)
    bad = speed <= 1e-12 * max(float(speed.max()), 1.0)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise GeometryError(f"degenerate curve speed at t={t[i]:.6g} (node {i})")
    nr, nz = curve.normals(dr, dz)
    panel = np.repeat(np.arange(r_panels), p)
    return CurveQuadrature(curve, p, _frozen(breaks), _frozen(t), _frozen(wt), _frozen(r),
                           _frozen(z), _frozen(dr), _frozen(dz), _frozen(speed),
                           _frozen(nr), _frozen(nz), _frozen(panel))


# ---------------------------------------------------------------------------
# Rigid motions and surface grids
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class RigidMotion:
    """Rotation (unit quaternion, scalar-last) followed by a translation."""

    quaternion: tuple = (0.0, 0.0, 0.0, 1.0)
    translation: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        q = np.asarray(self.quaternion, float)
        if q.shape != (4,) or not np.isfinite(q).all() or np.linalg.norm(q) == 0:
            raise GeometryError("quaternion must be 4 finite numbers")
        q = q / np.linalg.norm(q)
        object.__setattr__(self, "quaternion", tuple(float(v) for v in q))
        t = np.asarray(self.translation, float)
        if t.shape != (3,):
            raise GeometryError("translation must be a 3-vector")
        object.__setattr__(self, "translation", tuple(float(v) for v in t))

    @classmethod
    def identity(cls) -> "RigidMotion":
        return cls()

    @classmethod
    def from_axis_angle(cls, axis, angle: float, translation=(0.0, 0.0, 0.0)) -> "RigidMotion":
        axis = np.asarray(axis, float)
        axis = axis / np.linalg.norm(axis)
        return cls(tuple(Rotation.from_rotvec(angle * axis).as_quat()), tuple(translation))

    @classmethod
    def random(cls, rng: np.random.Generator, translation=(0.0, 0.0, 0.0)) -> "RigidMotion":
        return cls(tuple(Rotation.random(random_state=rng).as_quat()), tuple(translation))

    @property
    def matrix(self) -> np.ndarray:
        return Rotation.from_quat(self.quaternion).as_matrix()

    def apply(self, points: np.ndarray) -> np.ndarray:
        return points @ self.matrix.T + np.asarray(self.translation)

    def apply_vectors(self, vecs: np.ndarray) -> np.ndarray:
        return vecs @ self.matrix.T

    def compose(self, other: "RigidMotion") -> "RigidMotion":
        """``self`` after ``other``."""
        R = self.matrix @ other.matrix
        t = self.matrix @ np.asarray(other.translation) + np.asarray(self.translation)
        return RigidMotion(tuple(Rotation.from_matrix(R).as_quat()), tuple(t))

    def inverse_apply(self, points: np.ndarray) -> np.ndarray:
        return (points - np.asarray(self.translation)) @ self.matrix


@dataclass(frozen=True)
class BodyGrid:
    """Tensor-product node set on one body, in scene coordinates."""

    quad: CurveQuadrature
    n_fourier: int
    motion: RigidMotion
    points: np.ndarray
    weights: np.ndarray
    normals: np.ndarray
    body_id: int = 0

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def n_gamma(self) -> int:
        return self.quad.n

    @property
    def center(self) -> np.ndarray:
        return np.asarray(self.motion.translation)

    @property
    def circumradius(self) -> float:
        return float(np.linalg.norm(self.points - self.center, axis=1).max())

    @property
    def area(self) -> float:
        return float(self.weights.sum())

    def spacing(self) -> float:
        """Largest distance between neighbouring nodes (curve or azimuth)."""
        q = self.quad
        dcurve = np.hypot(np.diff(q.r), np.diff(q.z)).max() if q.n > 1 else 0.0
        dphi = 2 * np.pi * q.r.max() / self.n_fourier
        return float(max(dcurve, dphi))


def tensor_grid(cq: CurveQuadrature, n_fourier: int,
                motion: Optional[RigidMotion] = None, body_id: int = 0) -> BodyGrid:
    """Rotate the curve rule around the axis with ``n_fourier`` equispaced angles."""
    if int(n_fourier) != n_fourier or n_fourier < 4 or n_fourier % 2 == 0:
        raise GeometryError("N_F must be an odd integer >= 5")
    n_fourier = int(n_fourier)
    motion = motion or RigidMotion.identity()
    theta = 2 * np.pi * np.arange(n_fourier) / n_fourier
    c, s = np.cos(theta)[:, None], np.sin(theta)[:, None]
    local = np.stack([cq.r[None, :] * c, cq.r[None, :] * s,
                      np.broadcast_to(cq.z, (n_fourier, cq.n))], axis=-1).reshape(-1, 3)
    nloc = np.stack([cq.nr[None, :] * c, cq.nr[None, :] * s,
                     np.broadcast_to(cq.nz, (n_fourier, cq.n))], axis=-1).reshape(-1, 3)
    w = np.broadcast_to(cq.weights * cq.jacobian * (2 * np.pi / n_fourier),
                        (n_fourier, cq.n)).ravel()
    return BodyGrid(cq, n_fourier, motion, _frozen(motion.apply(local)), _frozen(w.copy()),
                    _frozen(motion.apply_vectors(nloc)), body_id)
