"""Pure numpy fallback for the direct-summation kernels in ``_direct.pyx``."""
import numpy as np

FOUR_PI = 4.0 * np.pi
_CHUNK = 1 << 20


def _block(targets, sources, normals, kappa, coupling):
    d = targets[:, None, :] - sources[None, :, :]
    R2 = np.einsum("ijk,ijk->ij", d, d)
    R = np.sqrt(R2)
    nd = np.einsum("ijk,jk->ij", d, normals)
    val = (nd * (1 - 1j * kappa * R) + coupling * R2) / (FOUR_PI * R2 * R)
    if kappa != 0.0:
        val *= np.exp(1j * kappa * R)
    return val


def direct_sum(targets, tgt_ids, sources, normals, src_ids, charge, kappa, coupling,
               num_threads=1):
    m, n = targets.shape[0], sources.shape[0]
    out = np.zeros(m, complex)
    step = max(1, _CHUNK // max(n, 1))
    for a in range(0, m, step):
        b = min(m, a + step)
        with np.errstate(divide="ignore", invalid="ignore"):
            K = _block(targets[a:b], sources, normals, kappa, coupling)
        K[tgt_ids[a:b, None] == src_ids[None, :]] = 0.0
        out[a:b] = K @ charge
    return out


def dense_block(targets, sources, normals, kappa, coupling, num_threads=1):
    return _block(targets, sources, normals, kappa, coupling)
