"""Per-body Nystrom operator, block-diagonalised by the azimuthal DFT.

For a body with ``n_gamma`` curve nodes and ``N_F = 2P + 1`` azimuthal nodes
the ``n x n`` single-body matrix is ``A = F* diag(A_p) F`` where each modal
matrix ``A_p`` is ``n_gamma x n_gamma``:

    A_p[i, j] = 1/2 delta_ij + k_p(y_i, y_j) * J_j * q_j        (far panels)
    A_p[i, j] = 1/2 delta_ij + int_near L_j(t) J(t) k_p(y_i, y(t)) dt   (near panels)

``k_p`` is the azimuthal integral of the kernel, ``J = r |gamma'|`` and the
near-panel integrals (own panel and its neighbours) use a dyadically graded
Gauss rule against the Lagrange basis of the panel, which handles the
logarithmic singularity of ``k_p``.

Mode ``-p`` equals mode ``p``, so only ``p = 0..P`` is stored.
"""
from __future__ import annotations

import io
import json
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from numpy.polynomial.legendre import leggauss, legvander
from scipy.linalg import lu_factor, lu_solve

from .geometry import CurveQuadrature
from .kernels import KernelSpec, modal_batch

__all__ = [
    "OperatorError",
    "ModalSystem",
    "BodyOperator",
    "near_panel_rule",
    "assemble_modal_matrices",
    "assemble_modal_matrix",
    "build_modal_system",
    "factorize",
    "apply_forward",
    "apply_inverse",
    "materialize",
    "save_operator",
    "load_operator",
    "OperatorCache",
]

log = logging.getLogger(__name__)

CORRECTION_LEVELS = 40
CORRECTION_TOL = 1e-12
CLOSE_FACTOR = 2.0
_GL = leggauss(12)
COND_LIMIT = 1e12


class OperatorError(ValueError):
    """Bad mode index, vector length or a numerically singular mode."""


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------
def near_panel_rule(a: float, b: float, c: float, levels: int = CORRECTION_LEVELS,
                    tol: float = CORRECTION_TOL):
    """Gauss rule on [a, b] graded dyadically towards the point ``c``.

    If ``c`` lies inside the panel both sides are refined down to
    ``tol * (b - a)`` (at most ``levels`` halvings, never below a few ulps of
    ``c``).  If it lies outside, the
    near end is refined until pieces are no longer than their distance to ``c``.
    """
    h = b - a
    pts = [a, b]
    if a < c < b:
        pts.append(c)
        floor = max(tol * h, 1e-11 * max(abs(c), 1.0))
        for side in (c - a, b - c):
            k = int(min(levels, max(1, np.ceil(np.log2(side / floor)))))
            sgn = -1.0 if side == c - a else 1.0
            pts.extend(c + sgn * side * 0.5 ** np.arange(1, k + 1))
    else:
        e, sgn = (a, 1.0) if c <= a else (b, -1.0)
        dist = abs(c - e)
        k = 1
        while h * 0.5 ** k > dist and k <= levels:
            pts.append(e + sgn * h * 0.5 ** k)
            k += 1
    brk = np.unique(np.asarray(pts))
    x, w = _GL
    lo, hi = brk[:-1, None], brk[1:, None]
    return (0.5 * (hi - lo) * x + 0.5 * (hi + lo)).ravel(), (0.5 * (hi - lo) * w).ravel()


def _lagrange_matrix(quad: CurveQuadrature, k: int, tau: np.ndarray) -> np.ndarray:
    a, b = quad.breaks[k], quad.breaks[k + 1]
    xg, _ = leggauss(quad.order)
    xt = (2.0 * tau - a - b) / (b - a)
    V = legvander(xg, quad.order - 1)
    return np.linalg.solve(V.T, legvander(xt, quad.order - 1).T).T


def _nearest_image(quad: CurveQuadrature, k: int, t: float) -> float:
    a, b = quad.breaks[k], quad.breaks[k + 1]
    if not quad.curve.closed:
        return t
    T = quad.curve.t_max
    cands = np.array([t - T, t, t + T])
    dist = np.maximum(a - cands, 0) + np.maximum(cands - b, 0)
    return float(cands[np.argmin(dist)])


def _panel_lengths(quad: CurveQuadrature) -> np.ndarray:
    return np.bincount(quad.panel, weights=quad.weights * quad.speed, minlength=quad.n_panels)


def _close_panels(quad: CurveQuadrature) -> list[dict]:
    """Per target: special panels mapped to their singular point (or None).

    Own and adjacent panels get the dyadic rule towards the target parameter.
    Other panels closer than ``CLOSE_FACTOR`` panel lengths get an upsampled
    rule, because plain Gauss loses accuracy there on strongly curved curves.
    """
    L = _panel_lengths(quad)
    out = []
    for i in range(quad.n):
        d = np.hypot(quad.r - quad.r[i], quad.z - quad.z[i])
        dmin = np.full(quad.n_panels, np.inf)
        np.minimum.at(dmin, quad.panel, d)
        special = {k: _nearest_image(quad, k, float(quad.t[i]))
                   for k in quad.neighbours(int(quad.panel[i]))}
        for k in np.flatnonzero(dmin < CLOSE_FACTOR * L):
            special.setdefault(int(k), None)
        out.append({k: (c, dmin[k] / L[k]) for k, c in special.items()})
    return out


def upsampled_panel_rule(a: float, b: float, ratio: float):
    """Composite 12-point Gauss on [a, b]; finer when the target is closer (``ratio = d / L``)."""
    m = int(min(64, 2 ** np.ceil(np.log2(max(1.0, 4.0 / max(ratio, 1e-3))))))
    brk = np.linspace(a, b, m + 1)
    x, w = _GL
    lo, hi = brk[:-1, None], brk[1:, None]
    return (0.5 * (hi - lo) * x + 0.5 * (hi + lo)).ravel(), (0.5 * (hi - lo) * w).ravel()


def assemble_modal_matrices(quad: CurveQuadrature, spec: KernelSpec, P: int) -> np.ndarray:
    """All modal matrices ``A_p`` for p = 0..P, shape ``(P+1, n_gamma, n_gamma)``."""
    n = quad.n
    A = np.zeros((P + 1, n, n), complex)
    special = _close_panels(quad)
    near = np.zeros((n, n), bool)
    for i in range(n):
        for k in special[i]:
            near[i, quad.panel_nodes(k)] = True

    # well-separated panels: plain quadrature with modal kernels
    ii, jj = np.nonzero(~near)
    if ii.size:
        kv = modal_batch(quad.r[ii], quad.z[ii], quad.r[jj], quad.z[jj], quad.nr[jj], quad.nz[jj],
                         spec, P)
        A[:, ii, jj] = (kv * (quad.jacobian[jj] * quad.weights[jj])[:, None]).T

    # nearby panels: product integration against the Lagrange basis
    curve = quad.curve
    for i in range(n):
        taus, omegas, owners, cs = [], [], [], []
        for k, (c, ratio) in special[i].items():
            a, b = quad.breaks[k], quad.breaks[k + 1]
            if c is None:
                tau, om = upsampled_panel_rule(a, b, ratio)
                c = float(quad.t[i])
            else:
                tau, om = near_panel_rule(a, b, c)
            taus.append(tau)
            omegas.append(om)
            owners.append(k)
            cs.append(np.full(tau.size, c))
        tau_all = np.concatenate(taus)
        r, z, dr, dz = curve.evaluate(tau_all)
        speed = np.hypot(dr, dz)
        nr, nz = curve.normals(dr, dz)
        kv = modal_batch(quad.r[i], quad.z[i], r, z, nr, nz, spec, P,
                         chord=curve.chord(np.concatenate(cs), tau_all))
        jac = r * speed
        start = 0
        for k, tau, om in zip(owners, taus, omegas):
            sl = slice(start, start + tau.size)
            start += tau.size
            L = _lagrange_matrix(quad, k, tau)
            W = (L * (om * jac[sl])[:, None]).T @ kv[sl]
            A[:, i, quad.panel_nodes(k)] = W.T
    A[:, np.arange(n), np.arange(n)] += 0.5
    if not np.all(np.isfinite(A)):
        bad = np.argwhere(~np.isfinite(A))[0]
        raise OperatorError(f"non-finite modal entry for mode {bad[0]}, nodes ({bad[1]}, {bad[2]})")
    return A


def assemble_modal_matrix(quad: CurveQuadrature, spec: KernelSpec, p: int, n_fourier: int) -> np.ndarray:
    """Single modal matrix ``A_p``; ``|p|`` must not exceed ``(N_F - 1) / 2``."""
    P = (n_fourier - 1) // 2
    if abs(p) > P:
        raise OperatorError(f"mode {p} outside [-{P}, {P}]")
    return assemble_modal_matrices(quad, spec, abs(p))[abs(p)]


@dataclass(frozen=True)
class ModalSystem:
    """Modal matrices of one body for p = 0..P."""

    quad: CurveQuadrature
    spec: KernelSpec
    n_fourier: int
    matrices: np.ndarray

    @property
    def P(self) -> int:
        return (self.n_fourier - 1) // 2

    @property
    def n_gamma(self) -> int:
        return self.quad.n

    def mode(self, p: int) -> np.ndarray:
        if abs(p) > self.P:
            raise OperatorError(f"mode {p} outside [-{self.P}, {self.P}]")
        return self.matrices[abs(p)]


def build_modal_system(quad: CurveQuadrature, spec: KernelSpec, n_fourier: int) -> ModalSystem:
    if n_fourier % 2 == 0 or n_fourier < 5:
        raise OperatorError("N_F must be odd and >= 5")
    P = (n_fourier - 1) // 2
    return ModalSystem(quad, spec, int(n_fourier), assemble_modal_matrices(quad, spec, P))


# ---------------------------------------------------------------------------
# Factorised operator
# ---------------------------------------------------------------------------
@dataclass
class BodyOperator:
    """Modal matrices plus one LU factorisation per mode ``p >= 0``."""

    n_gamma: int
    n_fourier: int
    spec: KernelSpec
    matrices: np.ndarray
    lu: np.ndarray
    piv: np.ndarray
    cond: np.ndarray
    key: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def P(self) -> int:
        return (self.n_fourier - 1) // 2

    @property
    def n(self) -> int:
        return self.n_gamma * self.n_fourier

    def _mode_rows(self):
        N = self.n_fourier
        for p in range(self.P + 1):
            yield p, ([0] if p == 0 else [p, N - p])

    def _apply(self, w: np.ndarray, inverse: bool) -> np.ndarray:
        w = np.asarray(w)
        if w.shape[0] != self.n:
            raise OperatorError(f"vector length {w.shape[0]} != body size {self.n}")
        vec = w.ndim == 1
        W = w.reshape(self.n_fourier, self.n_gamma, -1)
        C = np.fft.fft(W, axis=0)
        out = np.empty_like(C)
        ncol = C.shape[2]
        for p, rows in self._mode_rows():
            blk = C[rows].transpose(1, 0, 2).reshape(self.n_gamma, -1)
            if inverse:
                res = lu_solve((self.lu[p], self.piv[p]), blk)
            else:
                res = self.matrices[p] @ blk
            out[rows] = res.reshape(self.n_gamma, len(rows), ncol).transpose(1, 0, 2)
        res = np.fft.ifft(out, axis=0).reshape(self.n, ncol)
        return res[:, 0] if vec else res

    def apply_inverse(self, w: np.ndarray) -> np.ndarray:
        """``F* diag(A_p^{-1}) F w`` for a vector or a block of column vectors."""
        return self._apply(w, inverse=True)

    def apply_forward(self, w: np.ndarray) -> np.ndarray:
        """``F* diag(A_p) F w``."""
        return self._apply(w, inverse=False)


def factorize(ms: ModalSystem, key: str = "") -> BodyOperator:
    """LU-factorise every mode; raises if a mode is numerically singular."""
    mats = ms.matrices
    if not np.all(np.isfinite(mats)):
        raise OperatorError("modal matrices contain non-finite entries")
    lus = np.empty_like(mats)
    pivs = np.empty(mats.shape[:2], np.int32)
    cond = np.empty(mats.shape[0])
    for p in range(mats.shape[0]):
        cond[p] = np.linalg.cond(mats[p])
        if not np.isfinite(cond[p]) or cond[p] > COND_LIMIT:
            raise OperatorError(f"mode {p} is numerically singular (condition {cond[p]:.3e})")
        lus[p], pivs[p] = lu_factor(mats[p], check_finite=False)
    return BodyOperator(ms.n_gamma, ms.n_fourier, ms.spec, mats, lus, pivs, cond, key)


def apply_inverse(op: BodyOperator, w: np.ndarray) -> np.ndarray:
    return op.apply_inverse(w)


def apply_forward(op, w: np.ndarray) -> np.ndarray:
    if isinstance(op, ModalSystem):
        op = BodyOperator(op.n_gamma, op.n_fourier, op.spec, op.matrices, op.matrices,
                          np.zeros(op.matrices.shape[:2], np.int32), np.zeros(op.P + 1))
    return op.apply_forward(w)


def materialize(op) -> np.ndarray:
    """Dense ``n x n`` single-body matrix, summed mode by mode (no FFT).

    Entry ((a, i), (b, j)) = (1/N_F) sum_p A_p[i, j] exp(i p (theta_a - theta_b)).
    """
    mats = op.matrices
    N = op.n_fourier
    P = (N - 1) // 2
    ng = mats.shape[1]
    delta = 2 * np.pi * np.arange(N) / N
    blocks = np.zeros((N, ng, ng), complex)
    for p in range(-P, P + 1):
        blocks += np.exp(1j * p * delta)[:, None, None] * mats[abs(p)][None]
    blocks /= N
    a = np.arange(N)
    diff = (a[:, None] - a[None, :]) % N
    return blocks[diff].transpose(0, 2, 1, 3).reshape(N * ng, N * ng)


# ---------------------------------------------------------------------------
# Binary cache
# ---------------------------------------------------------------------------
MAGIC = b"AXSCBOP\x00"
FORMAT_VERSION = 1


def operator_key(quad: CurveQuadrature, spec: KernelSpec, n_fourier: int) -> str:
    c = spec.coupling
    return (f"{quad.key()}-{spec.equation}-k{spec.kappa!r}-eta{c.real!r},{c.imag!r}"
            f"-ng{quad.n}-nf{n_fourier}")


def save_operator(op: BodyOperator, path) -> None:
    """Single-file little-endian dump: magic, version, JSON header, raw arrays."""
    header = {
        "key": op.key, "n_gamma": op.n_gamma, "n_fourier": op.n_fourier,
        "spec": op.spec.as_dict(), "cond": op.cond.tolist(), "meta": op.meta,
        "arrays": ["matrices:<c16", "lu:<c16", "piv:<i4"],
    }
    hb = json.dumps(header, sort_keys=True).encode()
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", FORMAT_VERSION, len(hb)))
        f.write(hb)
        f.write(np.ascontiguousarray(op.matrices, "<c16").tobytes())
        f.write(np.ascontiguousarray(op.lu, "<c16").tobytes())
        f.write(np.ascontiguousarray(op.piv, "<i4").tobytes())
    os.replace(tmp, path)


def load_operator(path) -> BodyOperator:
    with open(path, "rb") as f:
        if f.read(8) != MAGIC:
            raise OperatorError(f"{path}: not an operator cache file")
        version, hlen = struct.unpack("<II", f.read(8))
        if version != FORMAT_VERSION:
            raise OperatorError(f"{path}: cache version {version} != {FORMAT_VERSION}")
        h = json.loads(f.read(hlen))
        ng, N = h["n_gamma"], h["n_fourier"]
        P1 = (N - 1) // 2 + 1
        nm = P1 * ng * ng
        mats = np.frombuffer(f.read(16 * nm), "<c16").reshape(P1, ng, ng).astype(complex)
        lu = np.frombuffer(f.read(16 * nm), "<c16").reshape(P1, ng, ng).astype(complex)
        piv = np.frombuffer(f.read(4 * P1 * ng), "<i4").reshape(P1, ng).astype(np.int32)
    s = h["spec"]
    spec = KernelSpec(s["equation"], s["kappa"], complex(*s["coupling"]))
    return BodyOperator(ng, N, spec, mats, lu, piv, np.asarray(h["cond"]), h["key"], h.get("meta", {}))


class OperatorCache:
    """In-memory plus optional on-disk cache of factorised body operators."""

    def __init__(self, directory: Optional[os.PathLike] = None):
        self.directory = Path(directory) if directory else None
        self._mem: dict[str, BodyOperator] = {}
        self.hits = 0
        self.builds = 0

    def _path(self, key: str) -> Optional[Path]:
        if self.directory is None:
            return None
        import hashlib
        return self.directory / (hashlib.sha256(key.encode()).hexdigest()[:24] + ".axop")

    def get(self, quad: CurveQuadrature, spec: KernelSpec, n_fourier: int) -> BodyOperator:
        key = operator_key(quad, spec, n_fourier)
        if key in self._mem:
            self.hits += 1
            return self._mem[key]
        path = self._path(key)
        if path is not None and path.exists():
            op = load_operator(path)
            if op.key == key:
                self.hits += 1
                self._mem[key] = op
                return op
        op = factorize(build_modal_system(quad, spec, n_fourier), key)
        self.builds += 1
        self._mem[key] = op
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            save_operator(op, path)
        return op

    def entries(self) -> list[dict]:
        if self.directory is None or not self.directory.exists():
            return []
        out = []
        for p in sorted(self.directory.glob("*.axop")):
            try:
                op = load_operator(p)
                out.append({"file": p.name, "key": op.key, "bytes": p.stat().st_size})
            except OperatorError as exc:
                out.append({"file": p.name, "error": str(exc)})
        return out

    def clear(self) -> int:
        self._mem.clear()
        if self.directory is None or not self.directory.exists():
            return 0
        n = 0
        for p in self.directory.glob("*.axop"):
            p.unlink()
            n += 1
        return n
