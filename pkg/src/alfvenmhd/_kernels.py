"""Compiled pointwise kernels (periodic tricubic interpolation)."""

import os

import numba

if "NUMBA_THREADING_LAYER" not in os.environ:
    numba.config.THREADING_LAYER = "workqueue"

import numpy as np


def apply_thread_cap() -> int:
    """Cap numba's thread pool at ALFVEN_THREADS (when set); return the count in use."""
    value = os.environ.get("ALFVEN_THREADS")
    if value:
        numba.set_num_threads(max(1, min(int(value), numba.config.NUMBA_NUM_THREADS)))
    return numba.get_num_threads()


apply_thread_cap()


@numba.njit(cache=True, inline="always")
def _weights(s):
    # cubic Lagrange weights for nodes -1, 0, 1, 2
    w0 = -s * (s - 1.0) * (s - 2.0) / 6.0
    w1 = (s + 1.0) * (s - 1.0) * (s - 2.0) / 2.0
    w2 = -(s + 1.0) * s * (s - 2.0) / 2.0
    w3 = (s + 1.0) * s * (s - 1.0) / 6.0
    return w0, w1, w2, w3


@numba.njit(cache=True, parallel=True)
def tricubic_periodic(fields, idx):
    """Interpolate ``fields`` (F, n, n, n) at fractional grid indices ``idx`` (3, N)."""
    nf = fields.shape[0]
    n1, n2, n3 = fields.shape[1], fields.shape[2], fields.shape[3]
    npts = idx.shape[1]
    out = np.empty((nf, npts))
    for p in numba.prange(npts):
        f1 = np.floor(idx[0, p])
        f2 = np.floor(idx[1, p])
        f3 = np.floor(idx[2, p])
        a = _weights(idx[0, p] - f1)
        b = _weights(idx[1, p] - f2)
        c = _weights(idx[2, p] - f3)
        i0 = (int(f1) - 1) % n1
        j0 = (int(f2) - 1) % n2
        k0 = (int(f3) - 1) % n3
        ii = np.empty(4, np.int64)
        jj = np.empty(4, np.int64)
        kk = np.empty(4, np.int64)
        for d in range(4):
            ii[d] = i0 + d if i0 + d < n1 else i0 + d - n1
            jj[d] = j0 + d if j0 + d < n2 else j0 + d - n2
            kk[d] = k0 + d if k0 + d < n3 else k0 + d - n3
        for f in range(nf):
            acc = 0.0
            for di in range(4):
                accj = 0.0
                for dj in range(4):
                    row = fields[f, ii[di], jj[dj]]
                    accj += b[dj] * (c[0] * row[kk[0]] + c[1] * row[kk[1]]
                                     + c[2] * row[kk[2]] + c[3] * row[kk[3]])
                acc += a[di] * accj
            out[f, p] = acc
    return out
