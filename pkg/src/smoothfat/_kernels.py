"""Hot numeric kernels: 3x3 same-padding convolution, 2x2 mean pooling, l-inf projection.

Every kernel has a numba ``@njit`` implementation and a pure-numpy fallback.
The numba path is used when numba imports cleanly and ``SMOOTHFAT_NUMBA`` is
not set to ``0``. Set ``SMOOTHFAT_NUMBA=0`` to force the numpy path (useful for
debugging and for the comparison benchmark).
"""

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

try:
    import numba
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("SMOOTHFAT_NUMBA", "1") != "0"

if HAVE_NUMBA:
    # try OpenMP before TBB: old TBB builds only warn and get skipped anyway
    if "NUMBA_THREADING_LAYER" not in os.environ:
        numba.config.THREADING_LAYER_PRIORITY = ["omp", "tbb", "workqueue"]
    _threads = os.environ.get("SMOOTHFAT_THREADS")
    if _threads:
        numba.set_num_threads(max(1, min(int(_threads), numba.config.NUMBA_NUM_THREADS)))


# ---------------------------------------------------------------------------
# numpy reference path
# ---------------------------------------------------------------------------

def _windows(x):
    # [N, C, H, W] -> [N, C, H, W, 3, 3] view over the zero-padded input
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    return sliding_window_view(xp, (3, 3), axis=(2, 3))


def conv3x3_forward_np(x, w, b):
    n, c, h, wd = x.shape
    f = w.shape[0]
    cols = _windows(x).transpose(0, 1, 4, 5, 2, 3).reshape(n, c * 9, h * wd)
    # one gemm per sample (stacked matmul), matching the numba path's batch invariance
    out = np.matmul(w.reshape(f, c * 9), cols)
    out += b[:, None]
    return out.reshape(n, f, h, wd)


def conv3x3_backward_input_np(g, w):
    n, f, h, wd = g.shape
    c = w.shape[1]
    # transposed convolution = convolution with the spatially flipped, channel-swapped kernel
    wf = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    return conv3x3_forward_np(g, wf, np.zeros(c, dtype=g.dtype))


def conv3x3_backward_weight_np(g, x):
    n, f, h, wd = g.shape
    c = x.shape[1]
    cols = _windows(x).transpose(0, 2, 3, 1, 4, 5).reshape(n * h * wd, c * 9)
    g2 = g.transpose(0, 2, 3, 1).reshape(n * h * wd, f)
    dw = (g2.T @ cols).reshape(f, c, 3, 3)
    db = g.sum(axis=(0, 2, 3))
    return dw, db


def meanpool2_forward_np(x):
    n, c, h, w = x.shape
    return x.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


def meanpool2_backward_np(g):
    return np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * g.dtype.type(0.25)


def project_np(x, delta, xi):
    d = np.clip(delta, -xi, xi)
    return np.clip(x + d, 0.0, 1.0) - x


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def _im2col_nb(x, i, cols):
        # cols[k, r * W + s] = padded x[i, ci, r + di, s + dj], k = ci * 9 + di * 3 + dj
        c, h, wd = x.shape[1], x.shape[2], x.shape[3]
        for ci in range(c):
            for di in range(3):
                for dj in range(3):
                    k = ci * 9 + di * 3 + dj
                    for r in range(max(0, 1 - di), min(h, h + 1 - di)):
                        for s in range(max(0, 1 - dj), min(wd, wd + 1 - dj)):
                            cols[k, r * wd + s] = x[i, ci, r + di - 1, s + dj - 1]

    @njit(cache=True, parallel=True)
    def _conv3x3_forward_nb(x, w, b):
        n, c, h, wd = x.shape
        f = w.shape[0]
        wm = np.ascontiguousarray(w.reshape(f, c * 9))
        out = np.empty((n, f, h * wd), dtype=x.dtype)
        for i in prange(n):
            cols = np.zeros((c * 9, h * wd), dtype=x.dtype)
            _im2col_nb(x, i, cols)
            res = np.dot(wm, cols)
            for o in range(f):
                for p in range(h * wd):
                    out[i, o, p] = res[o, p] + b[o]
        return out.reshape(n, f, h, wd)

    @njit(cache=True, parallel=True)
    def _conv3x3_backward_input_nb(g, w):
        n, f, h, wd = g.shape
        c = w.shape[1]
        wt = np.ascontiguousarray(w.reshape(f, c * 9).T)
        dx = np.zeros((n, c, h, wd), dtype=g.dtype)
        for i in prange(n):
            cols = np.dot(wt, np.ascontiguousarray(g[i].reshape(f, h * wd)))
            for ci in range(c):
                for di in range(3):
                    for dj in range(3):
                        k = ci * 9 + di * 3 + dj
                        for r in range(max(0, 1 - di), min(h, h + 1 - di)):
                            for s in range(max(0, 1 - dj), min(wd, wd + 1 - dj)):
                                dx[i, ci, r + di - 1, s + dj - 1] += cols[k, r * wd + s]
        return dx

    @njit(cache=True)
    def _conv3x3_backward_weight_nb(g, x):
        n, f, h, wd = g.shape
        c = x.shape[1]
        # float64 accumulators; samples are reduced in order so results are reproducible
        dw = np.zeros((f, c * 9))
        db = np.zeros(f)
        cols = np.zeros((c * 9, h * wd), dtype=x.dtype)
        for i in range(n):
            _im2col_nb(x, i, cols)
            gm = np.ascontiguousarray(g[i].reshape(f, h * wd))
            dw += np.dot(gm, cols.T)
            for o in range(f):
                db[o] += gm[o].sum()
        return dw.reshape(f, c, 3, 3).astype(x.dtype), db.astype(x.dtype)

    @njit(cache=True)
    def _meanpool2_forward_nb(x):
        n, c, h, w = x.shape
        out = np.empty((n, c, h // 2, w // 2), dtype=x.dtype)
        q = x.dtype.type(0.25)
        for i in range(n):
            for ci in range(c):
                for r in range(h // 2):
                    for s in range(w // 2):
                        out[i, ci, r, s] = q * (
                            x[i, ci, 2 * r, 2 * s] + x[i, ci, 2 * r, 2 * s + 1]
                            + x[i, ci, 2 * r + 1, 2 * s] + x[i, ci, 2 * r + 1, 2 * s + 1]
                        )
        return out

    @njit(cache=True)
    def _meanpool2_backward_nb(g):
        n, c, h, w = g.shape
        out = np.empty((n, c, 2 * h, 2 * w), dtype=g.dtype)
        q = g.dtype.type(0.25)
        for i in range(n):
            for ci in range(c):
                for r in range(h):
                    for s in range(w):
                        v = q * g[i, ci, r, s]
                        out[i, ci, 2 * r, 2 * s] = v
                        out[i, ci, 2 * r, 2 * s + 1] = v
                        out[i, ci, 2 * r + 1, 2 * s] = v
                        out[i, ci, 2 * r + 1, 2 * s + 1] = v
        return out

    @njit(cache=True)
    def _project_nb(x, delta, xi):
        xf = x.ravel()
        df = delta.ravel()
        out = np.empty_like(df)
        for k in range(df.size):
            d = min(max(df[k], -xi), xi)
            v = min(max(xf[k] + d, 0.0), 1.0)
            out[k] = v - xf[k]
        return out.reshape(delta.shape)


def _f(a):
    return np.ascontiguousarray(a)


def conv3x3_forward(x, w, b):
    """Same-padded 3x3 stride-1 convolution. ``x`` is NCHW, ``w`` is [F, C, 3, 3]."""
    if USE_NUMBA:
        return _conv3x3_forward_nb(_f(x), _f(w), _f(b))
    return conv3x3_forward_np(x, w, b)


def conv3x3_backward_input(g, w):
    if USE_NUMBA:
        return _conv3x3_backward_input_nb(_f(g), _f(w))
    return conv3x3_backward_input_np(g, w)


def conv3x3_backward_weight(g, x):
    if USE_NUMBA:
        return _conv3x3_backward_weight_nb(_f(g), _f(x))
    return conv3x3_backward_weight_np(g, x)


def meanpool2_forward(x):
    if USE_NUMBA:
        return _meanpool2_forward_nb(_f(x))
    return meanpool2_forward_np(x)


def meanpool2_backward(g):
    if USE_NUMBA:
        return _meanpool2_backward_nb(_f(g))
    return meanpool2_backward_np(g)


def project(x, delta, xi):
    """Clamp ``delta`` into the xi-ball, then so that ``x + delta`` lies in [0, 1]."""
    if USE_NUMBA:
        x = _f(x)
        delta = _f(delta).astype(x.dtype, copy=False)
        return _project_nb(x, delta, x.dtype.type(xi))
    return project_np(x, delta.astype(x.dtype, copy=False), x.dtype.type(xi))
