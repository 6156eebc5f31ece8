"""Sample-loop kernels for Gaussian cone moments.

Every kernel exists twice: a numba ``@njit`` version that fuses the whole
per-sample computation into one pass, and a chunked pure-numpy version.
Set ``SIMPLEXCODE_DISABLE_NUMBA=1`` to force the numpy path (also used when
numba is not importable). Both paths return identical tuples::

    (count, s_w, s_ww, s_y, s_yy, s_yw, s_2)

where, per sample (or antithetic pair) ``k``, ``w_k`` is the probability
weight, ``y_k`` the first-moment contribution and ``S2_k`` the second-moment
contribution; ``s_*`` are their sums (``s_yy`` is the (n, n) sum of ``y y^T``,
``s_yw`` componentwise).
"""

import math
import os
import warnings

import numpy as np

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_CHUNK = 1 << 16


def _env_disabled():
    return os.environ.get("SIMPLEXCODE_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}


try:
    import numba
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in CI
    HAVE_NUMBA = False
    warnings.warn("numba not importable; using the numpy kernels")

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


USE_NUMBA = HAVE_NUMBA and not _env_disabled()


def backend_name():
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _line_interval(base, d, sigma, normals):
    """Interval (lo, hi) of t with normals @ (base + sigma*t*d) > 0; empty -> lo >= hi."""
    lo = -np.inf
    hi = np.inf
    m, n = normals.shape
    for j in range(m):
        a = 0.0
        b = 0.0
        for k in range(n):
            a += normals[j, k] * base[k]
            b += normals[j, k] * d[k]
        b *= sigma
        if b > 0.0:
            r = -a / b
            if r > lo:
                lo = r
        elif b < 0.0:
            r = -a / b
            if r < hi:
                hi = r
        elif a <= 0.0:
            return 0.0, 0.0
    return lo, hi


@njit(cache=True, nogil=True)
def _trunc_moments(lo, hi):
    """Return (P, E[T 1], E[T^2 1]) for T ~ N(0,1) restricted to (lo, hi)."""
    if not hi > lo:
        return 0.0, 0.0, 0.0
    if lo > 0.0:
        w = 0.5 * math.erfc(lo / _SQRT2) - 0.5 * math.erfc(hi / _SQRT2)
    else:
        w = 0.5 * math.erfc(-hi / _SQRT2) - 0.5 * math.erfc(-lo / _SQRT2)
    plo = 0.0
    lplo = 0.0
    if lo > -np.inf:
        plo = _INV_SQRT_2PI * math.exp(-0.5 * lo * lo)
        lplo = lo * plo
    phi_ = 0.0
    hphi = 0.0
    if hi < np.inf:
        phi_ = _INV_SQRT_2PI * math.exp(-0.5 * hi * hi)
        hphi = hi * phi_
    return w, plo - phi_, w + lplo - hphi


@njit(cache=True, nogil=True)
def _plain_accumulate_nb(Z, c, sigma, normals):
    N, n = Z.shape
    m = normals.shape[0]
    s_y = np.zeros(n)
    s_2 = np.zeros((n, n))
    x = np.empty(n)
    count = 0
    for i in range(N):
        for k in range(n):
            x[k] = c[k] + sigma * Z[i, k]
        inside = True
        for j in range(m):
            a = 0.0
            for k in range(n):
                a += normals[j, k] * x[k]
            if not a > 0.0:
                inside = False
                break
        if inside:
            count += 1
            for k in range(n):
                s_y[k] += x[k]
                for l in range(k, n):
                    s_2[k, l] += x[k] * x[l]
    for k in range(n):
        for l in range(k):
            s_2[k, l] = s_2[l, k]
    return N, float(count), float(count), s_y, s_2.copy(), s_y.copy(), s_2


@njit(cache=True, nogil=True)
def _plain_weights_nb(Z, c, sigma, normals):
    N, n = Z.shape
    m = normals.shape[0]
    out = np.zeros(N)
    for i in range(N):
        inside = True
        for j in range(m):
            a = 0.0
            for k in range(n):
                a += normals[j, k] * (c[k] + sigma * Z[i, k])
            if not a > 0.0:
                inside = False
                break
        if inside:
            out[i] = 1.0
    return out


@njit(cache=True, nogil=True)
def _line_accumulate_nb(Z, c, sigma, normals, d):
    N, n = Z.shape
    s_w = 0.0
    s_ww = 0.0
    s_y = np.zeros(n)
    s_yy = np.zeros((n, n))
    s_yw = np.zeros(n)
    s_2 = np.zeros((n, n))
    zp = np.empty(n)
    base = np.empty(n)
    y = np.empty(n)
    for i in range(N):
        t0 = 0.0
        for k in range(n):
            t0 += Z[i, k] * d[k]
        for k in range(n):
            zp[k] = Z[i, k] - t0 * d[k]
        w_pair = 0.0
        for k in range(n):
            y[k] = 0.0
        for sgn in (1.0, -1.0):
            for k in range(n):
                base[k] = c[k] + sgn * sigma * zp[k]
            lo, hi = _line_interval(base, d, sigma, normals)
            w, m1, m2 = _trunc_moments(lo, hi)
            if w == 0.0 and m1 == 0.0:
                continue
            w_pair += 0.5 * w
            for k in range(n):
                y[k] += 0.5 * (base[k] * w + sigma * d[k] * m1)
                for l in range(k, n):
                    s_2[k, l] += 0.5 * (
                        base[k] * base[l] * w
                        + sigma * (base[k] * d[l] + d[k] * base[l]) * m1
                        + sigma * sigma * d[k] * d[l] * m2
                    )
        s_w += w_pair
        s_ww += w_pair * w_pair
        for k in range(n):
            s_y[k] += y[k]
            for l in range(n):
                s_yy[k, l] += y[k] * y[l]
            s_yw[k] += y[k] * w_pair
    for k in range(n):
        for l in range(k):
            s_2[k, l] = s_2[l, k]
    return N, s_w, s_ww, s_y, s_yy, s_yw, s_2


@njit(cache=True, nogil=True)
def _line_weights_nb(Z, c, sigma, normals, d):
    N, n = Z.shape
    out = np.zeros(N)
    zp = np.empty(n)
    base = np.empty(n)
    for i in range(N):
        t0 = 0.0
        for k in range(n):
            t0 += Z[i, k] * d[k]
        for k in range(n):
            zp[k] = Z[i, k] - t0 * d[k]
        acc = 0.0
        for sgn in (1.0, -1.0):
            for k in range(n):
                base[k] = c[k] + sgn * sigma * zp[k]
            lo, hi = _line_interval(base, d, sigma, normals)
            w, m1, m2 = _trunc_moments(lo, hi)
            acc += 0.5 * w
        out[i] = acc
    return out


@njit(cache=True, nogil=True)
def _membership_nb(X, normals):
    N, n = X.shape
    m = normals.shape[0]
    out = np.ones((N, m), dtype=np.bool_)
    for i in range(N):
        for j in range(m):
            a = 0.0
            for k in range(n):
                a += normals[j, k] * X[i, k]
            out[i, j] = a > 0.0
    return out


# ---------------------------------------------------------------------------
# numpy fallbacks
# ---------------------------------------------------------------------------


def _ndtr_interval(lo, hi):
    from scipy.special import ndtr

    w = np.where(lo > 0.0, ndtr(-lo) - ndtr(-hi), ndtr(hi) - ndtr(lo))
    return np.where(hi > lo, w, 0.0)


def _line_interval_np(base, d, sigma, normals):
    a = base @ normals.T
    b = sigma * (normals @ d)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = -a / b
    pos = b > 0.0
    neg = b < 0.0
    zero = ~(pos | neg)
    lo = np.max(np.where(pos, r, -np.inf), axis=1, initial=-np.inf)
    hi = np.min(np.where(neg, r, np.inf), axis=1, initial=np.inf)
    blocked = np.any(zero & (a <= 0.0), axis=1)
    lo = np.where(blocked, 0.0, lo)
    hi = np.where(blocked, 0.0, hi)
    return lo, hi


def _trunc_moments_np(lo, hi):
    ok = hi > lo
    w = _ndtr_interval(lo, hi)
    with np.errstate(invalid="ignore", over="ignore"):
        plo = np.where(np.isfinite(lo), _INV_SQRT_2PI * np.exp(-0.5 * lo * lo), 0.0)
        phi_ = np.where(np.isfinite(hi), _INV_SQRT_2PI * np.exp(-0.5 * hi * hi), 0.0)
        lplo = np.where(np.isfinite(lo), lo * plo, 0.0)
        hphi = np.where(np.isfinite(hi), hi * phi_, 0.0)
    m1 = np.where(ok, plo - phi_, 0.0)
    m2 = np.where(ok, w + lplo - hphi, 0.0)
    return w, m1, m2


def _plain_accumulate_np(Z, c, sigma, normals):
    N, n = Z.shape
    count = 0.0
    s_y = np.zeros(n)
    s_2 = np.zeros((n, n))
    for start in range(0, N, _CHUNK):
        X = c + sigma * Z[start:start + _CHUNK]
        inside = np.all(X @ normals.T > 0.0, axis=1) if normals.shape[0] else np.ones(len(X), bool)
        Xi = X[inside]
        count += float(inside.sum())
        s_y += Xi.sum(axis=0)
        s_2 += Xi.T @ Xi
    return N, count, count, s_y, s_2.copy(), s_y.copy(), s_2


def _plain_weights_np(Z, c, sigma, normals):
    X = c + sigma * Z
    if normals.shape[0] == 0:
        return np.ones(len(Z))
    return np.all(X @ normals.T > 0.0, axis=1).astype(float)


def _line_accumulate_np(Z, c, sigma, normals, d):
    N, n = Z.shape
    s_w = s_ww = 0.0
    s_y = np.zeros(n)
    s_yy = np.zeros((n, n))
    s_yw = np.zeros(n)
    s_2 = np.zeros((n, n))
    for start in range(0, N, _CHUNK):
        Zc = Z[start:start + _CHUNK]
        zp = Zc - np.outer(Zc @ d, d)
        wp = np.zeros(len(Zc))
        yp = np.zeros((len(Zc), n))
        for sgn in (1.0, -1.0):
            base = c + sgn * sigma * zp
            lo, hi = _line_interval_np(base, d, sigma, normals)
            w, m1, m2 = _trunc_moments_np(lo, hi)
            wp += 0.5 * w
            yp += 0.5 * (base * w[:, None] + sigma * m1[:, None] * d)
            bd = (base * m1[:, None]).sum(axis=0)
            s_2 += 0.5 * ((base * w[:, None]).T @ base
                          + sigma * (np.outer(bd, d) + np.outer(d, bd))
                          + sigma * sigma * m2.sum() * np.outer(d, d))
        s_w += wp.sum()
        s_ww += (wp * wp).sum()
        s_y += yp.sum(axis=0)
        s_yy += yp.T @ yp
        s_yw += (yp * wp[:, None]).sum(axis=0)
    return N, s_w, s_ww, s_y, s_yy, s_yw, s_2


def _line_weights_np(Z, c, sigma, normals, d):
    zp = Z - np.outer(Z @ d, d)
    out = np.zeros(len(Z))
    for sgn in (1.0, -1.0):
        lo, hi = _line_interval_np(c + sgn * sigma * zp, d, sigma, normals)
        out += 0.5 * _ndtr_interval(lo, hi)
    return out


def _membership_np(X, normals):
    return X @ normals.T > 0.0


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

_NUMBA = {
    "plain_accumulate": _plain_accumulate_nb,
    "plain_weights": _plain_weights_nb,
    "line_accumulate": _line_accumulate_nb,
    "line_weights": _line_weights_nb,
    "membership": _membership_nb,
}
_NUMPY = {
    "plain_accumulate": _plain_accumulate_np,
    "plain_weights": _plain_weights_np,
    "line_accumulate": _line_accumulate_np,
    "line_weights": _line_weights_np,
    "membership": _membership_np,
}


def kernel(name, backend=None):
    """Look up a kernel by name for ``backend`` ('numba', 'numpy' or the active default)."""
    backend = backend or backend_name()
    if backend == "numba" and HAVE_NUMBA:
        return _NUMBA[name]
    return _NUMPY[name]


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def plain_accumulate(Z, c, sigma, normals, backend=None):
    return kernel("plain_accumulate", backend)(_f64(Z), _f64(c), float(sigma), _f64(normals))


def plain_weights(Z, c, sigma, normals, backend=None):
    return kernel("plain_weights", backend)(_f64(Z), _f64(c), float(sigma), _f64(normals))


def line_accumulate(Z, c, sigma, normals, d, backend=None):
    return kernel("line_accumulate", backend)(_f64(Z), _f64(c), float(sigma), _f64(normals), _f64(d))


def line_weights(Z, c, sigma, normals, d, backend=None):
    return kernel("line_weights", backend)(_f64(Z), _f64(c), float(sigma), _f64(normals), _f64(d))


def membership(X, normals, backend=None):
    """Boolean matrix ``[k, j] = <normals[j], X[k]> > 0``."""
    return kernel("membership", backend)(_f64(X), _f64(normals))
