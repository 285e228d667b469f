"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment
variable ``GATEBATH_DISABLE_NUMBA`` is unset or ``0``.  Both paths take the
same arguments and agree to round-off; ``tests/test_kernels.py`` checks this
and ``benchmarks/bench_kernels.py`` times them against each other.
"""
from __future__ import annotations

import os

import numpy as np

_DISABLE = os.environ.get("GATEBATH_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")

try:  # pragma: no cover - import guard
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def kraus_apply_numpy(ops, rho):
    """Return sum_k K rho K^dagger for a stack of operators ``ops`` (k, d, d)."""
    return np.einsum("kij,jl,kml->im", ops, rho, ops.conj(), optimize=False)


def _heom_rhs_numpy(rho, H, gsum, narr, plus_p, minus_p, comm_mask, low_mask, term_mask):
    padded = np.concatenate([rho, np.zeros((1,) + rho.shape[1:], dtype=rho.dtype)])
    out = -1j * (np.matmul(H, rho) - np.matmul(rho, H))
    out -= (gsum[:, None, None] + term_mask[None, :, :]) * rho
    for m in range(plus_p.shape[1]):
        out += (-1j * comm_mask[m])[None] * padded[plus_p[:, m]]
        out += (-1j * narr[:, m])[:, None, None] * low_mask[m][None] * padded[minus_p[:, m]]
    return out


def heom_rk4_numpy(rho, h, nsub, H, gsum, narr, plus, minus, comm_mask, low_mask, term_mask):
    """Advance the ADO stack ``rho`` by ``nsub`` RK4 steps of size ``h``."""
    nado = rho.shape[0]
    plus_p = np.where(plus < 0, nado, plus)
    minus_p = np.where(minus < 0, nado, minus)
    args = (H, gsum, narr, plus_p, minus_p, comm_mask, low_mask, term_mask)
    y = rho.copy()
    for _ in range(nsub):
        k1 = _heom_rhs_numpy(y, *args)
        k2 = _heom_rhs_numpy(y + 0.5 * h * k1, *args)
        k3 = _heom_rhs_numpy(y + 0.5 * h * k2, *args)
        k4 = _heom_rhs_numpy(y + h * k3, *args)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return y


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def kraus_apply_numba(ops, rho):
        nk, d, _ = ops.shape
        out = np.zeros((d, d), dtype=np.complex128)
        tmp = np.empty((d, d), dtype=np.complex128)
        for k in range(nk):
            for i in range(d):
                for l in range(d):
                    acc = 0j
                    for j in range(d):
                        acc += ops[k, i, j] * rho[j, l]
                    tmp[i, l] = acc
            for i in range(d):
                for m in range(d):
                    acc = 0j
                    for l in range(d):
                        acc += tmp[i, l] * np.conj(ops[k, m, l])
                    out[i, m] += acc
        return out

    @njit(cache=True)
    def _heom_rhs_numba(rho, out, H, gsum, narr, plus, minus, comm_mask, low_mask, term_mask):
        nado, n, _ = rho.shape
        nmodes = plus.shape[1]
        for a_idx in range(nado):
            for a in range(n):
                for b in range(n):
                    acc = 0j
                    for q in range(n):
                        acc += H[a, q] * rho[a_idx, q, b] - rho[a_idx, a, q] * H[q, b]
                    val = -1j * acc - (gsum[a_idx] + term_mask[a, b]) * rho[a_idx, a, b]
                    for m in range(nmodes):
                        p = plus[a_idx, m]
                        if p >= 0:
                            val += -1j * comm_mask[m, a, b] * rho[p, a, b]
                        q = minus[a_idx, m]
                        if q >= 0:
                            val += -1j * narr[a_idx, m] * low_mask[m, a, b] * rho[q, a, b]
                    out[a_idx, a, b] = val

    @njit(cache=True)
    def heom_rk4_numba(rho, h, nsub, H, gsum, narr, plus, minus, comm_mask, low_mask, term_mask):
        y = rho.copy()
        k1 = np.empty_like(y)
        k2 = np.empty_like(y)
        k3 = np.empty_like(y)
        k4 = np.empty_like(y)
        tmp = np.empty_like(y)
        half = 0.5 * h
        yf = y.reshape(-1)
        tf = tmp.reshape(-1)
        f1 = k1.reshape(-1)
        f2 = k2.reshape(-1)
        f3 = k3.reshape(-1)
        f4 = k4.reshape(-1)
        size = yf.shape[0]
        for _ in range(nsub):
            _heom_rhs_numba(y, k1, H, gsum, narr, plus, minus, comm_mask, low_mask, term_mask)
            for i in range(size):
                tf[i] = yf[i] + half * f1[i]
            _heom_rhs_numba(tmp, k2, H, gsum, narr, plus, minus, comm_mask, low_mask, term_mask)
            for i in range(size):
                tf[i] = yf[i] + half * f2[i]
            _heom_rhs_numba(tmp, k3, H, gsum, narr, plus, minus, comm_mask, low_mask, term_mask)
            for i in range(size):
                tf[i] = yf[i] + h * f3[i]
            _heom_rhs_numba(tmp, k4, H, gsum, narr, plus, minus, comm_mask, low_mask, term_mask)
            for i in range(size):
                yf[i] += (h / 6.0) * (f1[i] + 2.0 * f2[i] + 2.0 * f3[i] + f4[i])
        return y

    IMPLEMENTATIONS = {
        "numpy": {"kraus_apply": kraus_apply_numpy, "heom_rk4": heom_rk4_numpy},
        "numba": {"kraus_apply": kraus_apply_numba, "heom_rk4": heom_rk4_numba},
    }
else:  # pragma: no cover
    IMPLEMENTATIONS = {
        "numpy": {"kraus_apply": kraus_apply_numpy, "heom_rk4": heom_rk4_numpy},
    }


BACKEND = "numba" if (HAVE_NUMBA and not _DISABLE) else "numpy"

kraus_apply = IMPLEMENTATIONS[BACKEND]["kraus_apply"]
heom_rk4 = IMPLEMENTATIONS[BACKEND]["heom_rk4"]
