"""Free-space kernels and their azimuthal Fourier modes.

The combined-field kernel used everywhere is

    G(x, x') = dphi/dn(x') + eta * phi,   phi = exp(i k |x - x'|) / (4 pi |x - x'|)

with ``eta = i k`` for Helmholtz and ``eta = 1`` for Laplace (``k = 0``).

Modal kernels: with the target at azimuth 0 and the source at azimuth
``-psi`` the kernel depends on ``psi`` only through ``cos psi``, and

    G_p(r, z, r', z') = (2 pi)^(-1/2) * int_0^{2 pi} G(psi) exp(-i p psi) dpsi.

Internally we mostly work with ``k_p = sqrt(2 pi) G_p`` (the plain azimuthal
integral), which is what multiplies the curve quadrature weights.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.polynomial.legendre import leggauss

__all__ = [
    "KernelError",
    "KernelSpec",
    "ModalKernelTable",
    "phi",
    "combined_kernel",
    "modal_kernels",
    "azimuthal_integrand",
    "modal_fft",
    "modal_graded",
    "modal_batch",
]

FOUR_PI = 4.0 * np.pi
SQRT_2PI = np.sqrt(2.0 * np.pi)
AXIS_TOL = 1e-13
M_MAX = 2 ** 16
FFT_TOL = 1e-12
FFT_MIN_SEPARATION = 1.0 / 16.0
_GL12 = leggauss(12)


class KernelError(ValueError):
    """Invalid kernel input (coincident points, negative radius, bad spec)."""


@dataclass(frozen=True)
class KernelSpec:
    """Equation type, wave number and single-layer coupling coefficient."""

    equation: str = "laplace"
    kappa: float = 0.0
    coupling: Optional[complex] = None

    def __post_init__(self):
        if self.equation not in ("laplace", "helmholtz"):
            raise KernelError(f"unknown equation {self.equation!r}")
        k = float(self.kappa)
        if not np.isfinite(k) or k < 0:
            raise KernelError("wave number must be finite and non-negative")
        if self.equation == "helmholtz" and k == 0:
            raise KernelError("helmholtz with kappa = 0: use the laplace equation")
        if self.equation == "laplace" and k != 0:
            raise KernelError("laplace kernel takes kappa = 0")
        object.__setattr__(self, "kappa", k)
        if self.coupling is None:
            eta = 1j * k if self.equation == "helmholtz" else 1.0
            object.__setattr__(self, "coupling", complex(eta))
        else:
            object.__setattr__(self, "coupling", complex(self.coupling))

    @classmethod
    def laplace(cls, coupling: complex = 1.0) -> "KernelSpec":
        return cls("laplace", 0.0, coupling)

    @classmethod
    def helmholtz(cls, kappa: float, coupling: Optional[complex] = None) -> "KernelSpec":
        return cls("helmholtz", kappa, coupling)

    def as_dict(self) -> dict:
        return {"equation": self.equation, "kappa": self.kappa,
                "coupling": [self.coupling.real, self.coupling.imag]}


def phi(x, xp, kappa: float = 0.0):
    """Free-space fundamental solution ``exp(i k R) / (4 pi R)``."""
    d = np.asarray(x, float) - np.asarray(xp, float)
    R = np.sqrt(np.sum(d * d, axis=-1))
    if np.any(R == 0):
        raise KernelError("phi evaluated at coincident points")
    if kappa == 0:
        return 1.0 / (FOUR_PI * R) + 0j
    return np.exp(1j * kappa * R) / (FOUR_PI * R)


def combined_kernel(x, xp, nxp, spec: KernelSpec):
    """``dphi/dn(x') + eta phi`` for targets ``x`` and sources ``x'`` with normals ``n(x')``."""
    x = np.asarray(x, float)
    xp = np.asarray(xp, float)
    d = x - xp
    R2 = np.sum(d * d, axis=-1)
    if np.any(R2 == 0):
        raise KernelError("kernel evaluated at coincident points")
    R = np.sqrt(R2)
    ndot = np.sum(np.asarray(nxp, float) * d, axis=-1)
    k = spec.kappa
    return np.exp(1j * k * R) * (ndot * (1 - 1j * k * R) + spec.coupling * R2) / (FOUR_PI * R2 * R)


# ---------------------------------------------------------------------------
# Azimuthal integrand and modal kernels
# ---------------------------------------------------------------------------
def azimuthal_integrand(psi, r, z, rs, zs, nrs, nzs, spec: KernelSpec, chord=None):
    """Kernel between target (r, 0, z) and a source rotated by ``-psi``.

    Written with ``sin^2(psi/2)`` so nearly coincident points keep full
    relative accuracy.  All arguments broadcast.  ``chord`` optionally gives
    ``(r - rs, z - zs)`` computed without cancellation, which matters for the
    double-layer numerator when both points lie on the same curve.
    """
    s2 = np.sin(0.5 * psi) ** 2
    if chord is None:
        dr, dz = r - rs, z - zs
    else:
        dr, dz = chord
    R2 = dr * dr + dz * dz + 4.0 * r * rs * s2
    R = np.sqrt(R2)
    ndot = nrs * dr - 2.0 * nrs * r * s2 + nzs * dz
    k = spec.kappa
    if k == 0:
        return (ndot + spec.coupling * R2) / (FOUR_PI * R2 * R)
    return np.exp(1j * k * R) * (ndot * (1 - 1j * k * R) + spec.coupling * R2) / (FOUR_PI * R2 * R)


def normalized_separation(r, z, rs, zs):
    d = np.hypot(np.asarray(r) - rs, np.asarray(z) - zs)
    return d / (np.asarray(r) + rs + d)


def _fft_length(P: int, delta) -> np.ndarray:
    need = np.maximum(2 * P + 2, np.ceil(64.0 / np.maximum(delta, 1e-300)))
    need = np.minimum(need, M_MAX // 2)
    return (2 ** np.ceil(np.log2(np.maximum(need, 8)))).astype(np.int64)


def modal_fft(r, z, rs, zs, nrs, nzs, spec: KernelSpec, P: int, tol: float = FFT_TOL,
              chunk: int = 1 << 21):
    """Azimuthal integrals ``k_p``, p = 0..P, by equispaced sampling and FFT.

    The sample count starts at ``max(2P+2, 64/delta)`` (rounded up to a power
    of two) and is doubled until two successive results agree to ``tol``
    relative; it is capped at 2^16.  Returns ``(k, M, accuracy)`` where ``M``
    is the finer of the two compared sample counts.
    """
    r, z, rs, zs, nrs, nzs = np.broadcast_arrays(*(np.asarray(a, float).ravel()
                                                    for a in (r, z, rs, zs, nrs, nzs)))
    n = r.size
    out = np.zeros((n, P + 1), complex)
    Mused = np.zeros(n, np.int64)
    acc = np.zeros(n)
    axis = r * rs < AXIS_TOL * AXIS_TOL
    if np.any(axis):
        g0 = azimuthal_integrand(0.0, r[axis], z[axis], rs[axis], zs[axis], nrs[axis], nzs[axis], spec)
        out[axis, 0] = 2 * np.pi * g0
        Mused[axis] = 1
    todo = np.flatnonzero(~axis)
    M = _fft_length(P, normalized_separation(r[todo], z[todo], rs[todo], zs[todo]))
    while todo.size:
        still = []
        still_M = []
        for Mval in np.unique(M):
            sel = todo[M == Mval]
            psi = 2 * np.pi * np.arange(2 * Mval) / (2 * Mval)
            step = max(1, chunk // (2 * int(Mval)))
            for c0 in range(0, sel.size, step):
                idx = sel[c0:c0 + step]
                g = azimuthal_integrand(psi[None, :], r[idx, None], z[idx, None], rs[idx, None],
                                        zs[idx, None], nrs[idx, None], nzs[idx, None], spec)
                fine = np.fft.fft(g, axis=1)[:, :P + 1] * (np.pi / Mval)
                coarse = np.fft.fft(g[:, ::2], axis=1)[:, :P + 1] * (2 * np.pi / Mval)
                scale = np.abs(fine).max(axis=1)
                err = np.abs(fine - coarse).max(axis=1) / np.where(scale > 0, scale, 1.0)
                out[idx] = fine
                Mused[idx] = 2 * Mval
                acc[idx] = err
                bad = (err > tol) & (2 * Mval < M_MAX)
                still.append(idx[bad])
                still_M.append(np.full(np.count_nonzero(bad), 2 * Mval))
        todo = np.concatenate(still) if still else np.zeros(0, int)
        M = np.concatenate(still_M) if still_M else np.zeros(0, int)
    return out, Mused, acc


def graded_psi_rule(s_min: float, P: int, width: float = np.pi / 8):
    """Gauss rule on [0, pi], dyadically refined towards psi = 0 from scale ``s_min``.

    Returns nodes and weights that already include the factor 2 of the even
    extension, so ``sum(w * g(psi) * cos(p psi))`` approximates ``k_p``.
    """
    x, w = _GL12
    brk = [0.0]
    if s_min < width:
        b = max(s_min, 1e-300)
        while b < width:
            brk.append(b)
            b *= 2.0
    start = brk[-1]
    m = max(1, int(np.ceil((np.pi - start) / width)))
    brk.extend(np.linspace(start, np.pi, m + 1)[1:])
    brk = np.asarray(brk)
    a, b = brk[:-1, None], brk[1:, None]
    nodes = (0.5 * (b - a) * x + 0.5 * (a + b)).ravel()
    weights = (0.5 * (b - a) * w).ravel() * 2.0
    return nodes, weights


def _psi_width(P: int, kappa: float, rmax: float) -> float:
    return min(np.pi / 8, 6.0 / (P + 1 + 2.0 * kappa * rmax))


def modal_graded(r, z, rs, zs, nrs, nzs, spec: KernelSpec, P: int, chunk: int = 1 << 21,
                 chord=None):
    """Azimuthal integrals ``k_p`` by a Gauss rule graded towards the kernel peak.

    Used for nearly coincident points, where equispaced sampling would need
    ``O(1/separation)`` points.  One rule (graded to the smallest peak width in
    the batch) serves the whole batch.
    """
    r, z, rs, zs, nrs, nzs = np.broadcast_arrays(*(np.asarray(a, float).ravel()
                                                    for a in (r, z, rs, zs, nrs, nzs)))
    n = r.size
    out = np.zeros((n, P + 1), complex)
    if n == 0:
        return out
    cr, cz = _chord(r, z, rs, zs, chord)
    if np.any((cr == 0) & (cz == 0)):
        raise KernelError("modal kernel requested at coincident points")
    axis = r * rs < AXIS_TOL * AXIS_TOL
    if np.any(axis):
        g0 = azimuthal_integrand(0.0, r[axis], z[axis], rs[axis], zs[axis], nrs[axis], nzs[axis], spec,
                                 (cr[axis], cz[axis]))
        out[axis, 0] = 2 * np.pi * g0
    idx = np.flatnonzero(~axis)
    if idx.size == 0:
        return out
    d = np.hypot(cr[idx], cz[idx])
    s = d / np.sqrt(r[idx] * rs[idx])
    rmax = float(max(r[idx].max(), rs[idx].max()))
    nodes, weights = graded_psi_rule(float(s.min()), P, _psi_width(P, spec.kappa, rmax))
    basis = np.cos(np.outer(nodes, np.arange(P + 1))) * weights[:, None]
    step = max(1, chunk // nodes.size)
    for c0 in range(0, idx.size, step):
        j = idx[c0:c0 + step]
        g = azimuthal_integrand(nodes[None, :], r[j, None], z[j, None], rs[j, None],
                                zs[j, None], nrs[j, None], nzs[j, None], spec,
                                (cr[j, None], cz[j, None]))
        out[j] = g @ basis
    return out


def _chord(r, z, rs, zs, chord):
    if chord is None:
        return r - rs, z - zs
    cr, cz = (np.broadcast_to(np.asarray(c, float).ravel(), r.shape) for c in chord)
    return cr, cz


def modal_batch(r, z, rs, zs, nrs, nzs, spec: KernelSpec, P: int, chord=None):
    """``k_p`` for many point pairs: FFT where well separated, graded rule otherwise.

    ``chord = (r - rs, z - zs)`` may be supplied for nearly coincident pairs
    on one curve (see :func:`azimuthal_integrand`).
    """
    r, z, rs, zs, nrs, nzs = np.broadcast_arrays(*(np.asarray(a, float).ravel()
                                                    for a in (r, z, rs, zs, nrs, nzs)))
    out = np.empty((r.size, P + 1), complex)
    if r.size == 0:
        return out
    cr, cz = _chord(r, z, rs, zs, chord)
    d = np.hypot(cr, cz)
    delta = d / (r + rs + d)
    far = delta >= FFT_MIN_SEPARATION
    if np.any(far):
        out[far] = modal_fft(r[far], z[far], rs[far], zs[far], nrs[far], nzs[far], spec, P)[0]
    near = np.flatnonzero(~far)
    if near.size:
        # group by peak width so one very close pair does not refine the whole batch
        s = d[near] / np.sqrt(np.maximum(r[near] * rs[near], 1e-300))
        band = np.floor(np.log2(np.maximum(s, 1e-300)) / 4.0)
        for b in np.unique(band):
            sel = near[band == b]
            out[sel] = modal_graded(r[sel], z[sel], rs[sel], zs[sel], nrs[sel], nzs[sel], spec, P,
                                    chord=(cr[sel], cz[sel]))
    return out


@dataclass(frozen=True)
class ModalKernelTable:
    """Modal values ``G_p`` for p = -P..P (index ``p + P``) plus provenance."""

    values: np.ndarray
    P: int
    samples: int
    accuracy: float
    method: str

    def __getitem__(self, p: int) -> complex:
        if abs(p) > self.P:
            raise IndexError(p)
        return self.values[p + self.P]

    @property
    def modes(self) -> np.ndarray:
        return np.arange(-self.P, self.P + 1)

    def reconstruct(self, psi) -> np.ndarray:
        """Sum the truncated series back into the azimuthal kernel at angle ``psi``."""
        psi = np.asarray(psi, float)
        return np.exp(1j * np.multiply.outer(psi, self.modes)) @ self.values / SQRT_2PI


def modal_kernels(target, source, source_normal, spec: KernelSpec, P: int,
                  method: str = "auto") -> ModalKernelTable:
    """Fourier modes of the combined kernel between two half-plane points.

    ``target`` and ``source`` are ``(r, z)``; ``source_normal`` is the unit
    normal ``(n_r, n_z)`` of the generating curve at the source.
    """
    r, z = map(float, target)
    rs, zs = map(float, source)
    nrs, nzs = map(float, source_normal)
    if r < 0 or rs < 0:
        raise KernelError("radial coordinates must be non-negative")
    if r == rs and z == zs:
        raise KernelError("modal kernel requested at coincident points")
    if P < 0:
        raise KernelError("P must be non-negative")
    delta = float(normalized_separation(r, z, rs, zs))
    if method == "auto":
        method = "fft" if delta >= FFT_MIN_SEPARATION else "graded"
    if r * rs < AXIS_TOL * AXIS_TOL:
        k = np.zeros(P + 1, complex)
        k[0] = 2 * np.pi * azimuthal_integrand(0.0, r, z, rs, zs, nrs, nzs, spec)
        samples, acc, method = 1, 0.0, "axis"
    elif method == "fft":
        k, M, a = modal_fft(r, z, rs, zs, nrs, nzs, spec, P)
        k, samples, acc = k[0], int(M[0]), float(a[0])
    elif method == "graded":
        k = modal_graded(r, z, rs, zs, nrs, nzs, spec, P)[0]
        # compare against a rule graded four times finer
        s = np.hypot(r - rs, z - zs) / np.sqrt(r * rs)
        nodes, w = graded_psi_rule(s / 16, P, _psi_width(P, spec.kappa, max(r, rs)) / 2)
        g = azimuthal_integrand(nodes, r, z, rs, zs, nrs, nzs, spec)
        k2 = (g * w) @ np.cos(np.outer(nodes, np.arange(P + 1)))
        scale = np.abs(k2).max()
        acc = float(np.abs(k2 - k).max() / scale) if scale > 0 else 0.0
        samples = nodes.size
        k = k2
    else:
        raise KernelError(f"unknown method {method!r}")
    full = np.concatenate([k[:0:-1], k]) / SQRT_2PI
    return ModalKernelTable(full, int(P), int(samples), acc, method)
