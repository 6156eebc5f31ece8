"""Gaussian measure and truncated moments of simplicial cones.

A Gaussian ``g_c ~ N(c, sigma^2 I)`` is pushed through a region given by its
inward facet normals. Estimators:

``plain_mc`` / ``crn_mc``
    indicator Monte Carlo on ``x = c + sigma z``. Single-region calls are
    identical; in multi-cell objectives ``plain_mc`` gives every cell its
    own substream while ``crn_mc`` shares one stream.
``conditional_mc``
    same normal stream, but the component of ``z`` along a direction ``d``
    (``c`` itself when nonzero) is integrated out exactly and the remaining
    tangential part is used in antithetic pairs ``±z_perp``. Unbiased,
    smooth in ``c``, and far less noisy. Shares the stream like ``crn_mc``.
``exact_1d`` / ``wedge_2d``
    closed form on a ray, and 1-D angular quadrature on a planar wedge.
    Oracles only.

Sample streams are generated in fixed-size blocks; block ``k`` is seeded with
``seed ^ splitmix64(k)`` so any prefix of the stream is reproducible and
blocks can be filled by independent workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.special import ndtr

from . import _accel
from .errors import MethodDimMismatch, TooFewAcceptedSamples
from .geometry import SimplicialCone

METHODS = ("plain_mc", "crn_mc", "conditional_mc", "exact_1d", "wedge_2d")
MC_METHODS = ("plain_mc", "crn_mc", "conditional_mc")
MIN_ACCEPTED = 10
BLOCK = 1 << 16
WEDGE_PANELS = 10_000

_MASK64 = (1 << 64) - 1


def splitmix64(k: int) -> int:
    z = (int(k) + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, k: int) -> int:
    """Seed for worker / block / substream ``k``."""
    return (int(seed) & _MASK64) ^ splitmix64(k)


def _normal_block(seed, k, rows, dim):
    rng = np.random.Generator(np.random.PCG64(derive_seed(seed, k)))
    return rng.standard_normal((rows, dim))


def normal_stream(seed: int, samples: int, dim: int, workers: int = 1) -> np.ndarray:
    """Read-only ``(samples, dim)`` standard-normal array indexed by sample ordinal."""
    return _normal_stream_cached(int(seed), int(samples), int(dim), int(workers))


@lru_cache(maxsize=6)
def _normal_stream_cached(seed, samples, dim, workers):
    nblocks = -(-samples // BLOCK)
    out = np.empty((samples, dim))

    def fill(k):
        lo = k * BLOCK
        hi = min(samples, lo + BLOCK)
        out[lo:hi] = _normal_block(seed, k, BLOCK, dim)[: hi - lo]

    if workers > 1 and nblocks > 1:
        with ThreadPoolExecutor(workers) as ex:
            list(ex.map(fill, range(nblocks)))
    else:
        for k in range(nblocks):
            fill(k)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class GaussianChannel:
    sigma: float
    dim: int

    def __post_init__(self):
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ValueError("sigma must be positive and finite")
        if int(self.dim) < 1:
            raise ValueError("dim must be >= 1")


@dataclass(frozen=True)
class EstimatorConfig:
    """Sample budget, seed and method shared by every stochastic estimate."""

    samples: int = 200_000
    seed: int = 0
    method: str = "conditional_mc"
    rel_tol: float = 1e-3
    workers: int = 1

    def __post_init__(self):
        if int(self.samples) < 1:
            raise ValueError("samples must be >= 1")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be > 0")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")

    @property
    def stochastic(self) -> bool:
        return self.method in MC_METHODS

    def with_(self, **kw) -> "EstimatorConfig":
        return replace(self, **kw)

    def stream(self, dim, substream: Optional[int] = None):
        seed = self.seed if substream is None else derive_seed(self.seed, 1_000_003 + substream)
        return normal_stream(seed, self.samples, dim, self.workers)


@dataclass(frozen=True)
class ConeMoments:
    """Gaussian measure of a region with conditional mean and covariance.

    ``mean``/``covariance`` are ``None`` when not requested; ``mean_stderr``
    holds componentwise standard errors of the conditional mean.
    """

    measure: float
    std_error: float
    mean: Optional[np.ndarray] = None
    covariance: Optional[np.ndarray] = None
    mean_stderr: Optional[np.ndarray] = None
    accepted: float = 0.0
    samples: int = 0
    # sampling covariance of ``mean`` (delta method on the ratio estimator)
    mean_error_cov: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def tangential_stderr(self):
        """Std error of the component of ``mean`` orthogonal to itself."""
        if self.mean is None or self.mean_error_cov is None:
            return None
        u = self.mean / np.linalg.norm(self.mean)
        S = self.mean_error_cov
        return float(np.sqrt(max(np.trace(S) - u @ S @ u, 0.0)))


def cone_frame(cone: SimplicialCone) -> np.ndarray:
    """Orthonormal frame attached to a cone: Gram-Schmidt of its generators in order.

    ``cone_frame(cone.rotated(R)) == R @ cone_frame(cone)``, so draws expressed
    in this frame make estimates exactly rotation equivariant.
    """
    Q, R = np.linalg.qr(cone.generators.T)
    s = np.sign(np.diag(R))
    s[s == 0] = 1.0
    return Q * s


def framed_samples(Z, cone: SimplicialCone) -> np.ndarray:
    """Rows ``Q z`` for the cone frame ``Q``; still i.i.d. standard normal."""
    return Z @ cone_frame(cone).T


def region_normals(region):
    """Facet normals of a cone, or a raw ``(m, n)`` normal array (m may be 0)."""
    if isinstance(region, SimplicialCone):
        return region.normals
    N = np.asarray(region, dtype=np.float64)
    if N.ndim != 2:
        raise ValueError("region must be a SimplicialCone or an (m, n) normal array")
    return N


def _line_direction(c, normals):
    nc = np.linalg.norm(c)
    if nc > 0.0:
        return c / nc
    if normals.shape[0]:
        s = normals.sum(axis=0)
        if np.linalg.norm(s) > 0:
            return s / np.linalg.norm(s)
    d = np.zeros(len(c))
    d[0] = 1.0
    return d


def _summarise(acc, need_moments):
    N, s_w, s_ww, s_y, s_yy, s_yw, s_2 = acc
    N = int(N)
    p = s_w / N
    var_w = max(s_ww / N - p * p, 0.0)
    se = math.sqrt(var_w / N)
    mean = cov = mse = S = None
    if need_moments and s_w > 0:
        mean = s_y / s_w
        cov = s_2 / s_w - np.outer(mean, mean)
        cov = 0.5 * (cov + cov.T)
        # ratio estimator: Cov(y - mean*w) / (N p^2)
        cross = np.outer(s_yw, mean)
        S = (s_yy - cross - cross.T + np.outer(mean, mean) * s_ww) / N
        S = 0.5 * (S + S.T) / (N * p * p)
        mse = np.sqrt(np.maximum(np.diag(S), 0.0))
    return p, se, mean, cov, mse, S


def moments_from_samples(
    Z, region, c, sigma, method="conditional_mc", need_moments=True, backend=None, direction=None
):
    """Moments of ``N(c, sigma^2 I)`` over ``region`` using the explicit normal draws ``Z``.

    ``direction`` pins the line of exact integration for ``conditional_mc``
    (default ``c / |c|``); holding it fixed makes the estimate smooth in ``c``.
    """
    normals = region_normals(region)
    c = np.asarray(c, dtype=np.float64)
    if method == "conditional_mc":
        d = _line_direction(c, normals) if direction is None else np.asarray(direction, dtype=np.float64)
        acc = _accel.line_accumulate(Z, c, sigma, normals, d, backend=backend)
    else:
        acc = _accel.plain_accumulate(Z, c, sigma, normals, backend=backend)
    # conditional_mc: expected accepted count N*p
    accepted = float(acc[1])
    p, se, mean, cov, mse, S = _summarise(acc, need_moments)
    return ConeMoments(p, se, mean, cov, mse, accepted, int(acc[0]), S)


def weights_from_samples(Z, region, c, sigma, method="conditional_mc", backend=None):
    """Per-sample probability weights (indicator or line-integrated pair average)."""
    normals = region_normals(region)
    c = np.asarray(c, dtype=np.float64)
    if method == "conditional_mc":
        return _accel.line_weights(Z, c, sigma, normals, _line_direction(c, normals), backend=backend)
    return _accel.plain_weights(Z, c, sigma, normals, backend=backend)


# -- deterministic references --------------------------------------------------


def _exact_1d(region, c, sigma):
    normals = region_normals(region)
    if normals.shape[1] != 1:
        raise MethodDimMismatch("exact_1d requires n = 1")
    c = float(np.asarray(c).reshape(-1)[0])
    signs = np.sign(normals[:, 0])
    if np.any(signs == 0):
        raise ValueError("degenerate 1-D normal")
    if normals.shape[0] == 0:
        return ConeMoments(1.0, 0.0, np.array([c]), np.array([[sigma ** 2]]), np.zeros(1))
    if np.all(signs > 0) or np.all(signs < 0):
        s = signs[0]
    else:
        return ConeMoments(0.0, 0.0)
    # truncated normal of s*X with X ~ N(c, sigma^2) on (0, inf)
    alpha = -s * c / sigma
    q = float(ndtr(-alpha))
    if q == 0.0:
        return ConeMoments(0.0, 0.0)
    lam = math.exp(-0.5 * alpha * alpha) / math.sqrt(2 * math.pi) / q
    m = s * c + sigma * lam
    var = sigma * sigma * (1.0 + alpha * lam - lam * lam)
    return ConeMoments(q, 0.0, np.array([s * m]), np.array([[var]]), np.zeros(1))


def _radial_moment(k, a, sigma):
    """``int_0^inf r^k exp(-(r-a)^2 / (2 sigma^2)) dr`` vectorised over ``a``."""
    l = -a / sigma
    q = ndtr(-l)
    ph = np.exp(-0.5 * l * l) / math.sqrt(2 * math.pi)
    # E[T^m 1{T > l}] for T ~ N(0, 1)
    tm = [q, ph, l * ph + q, (l * l + 2.0) * ph, (l ** 3 + 3 * l) * ph + 3 * q]
    total = np.zeros_like(a)
    for m in range(k + 1):
        total = total + math.comb(k, m) * a ** (k - m) * sigma ** m * tm[m]
    return sigma * math.sqrt(2 * math.pi) * total


def _wedge_2d(region, c, sigma, panels=WEDGE_PANELS):
    if not isinstance(region, SimplicialCone) or region.dim != 2:
        raise MethodDimMismatch("wedge_2d requires a planar SimplicialCone")
    c = np.asarray(c, dtype=np.float64)
    g0, g1 = region.generators
    a0 = math.atan2(g0[1], g0[0])
    span = math.atan2(g0[0] * g1[1] - g0[1] * g1[0], g0 @ g1)
    # composite Simpson over the wedge angle
    t = np.linspace(0.0, span, 2 * panels + 1)
    wts = np.ones_like(t)
    wts[1:-1:2] = 4.0
    wts[2:-1:2] = 2.0
    wts *= abs(span) / (6.0 * panels)
    th = a0 + t
    U = np.stack([np.cos(th), np.sin(th)], axis=1)
    a = U @ c
    b2 = np.maximum(c @ c - a * a, 0.0)
    pref = np.exp(-0.5 * b2 / sigma ** 2) / (2 * math.pi * sigma ** 2)
    m1 = pref * _radial_moment(1, a, sigma)
    m2 = pref * _radial_moment(2, a, sigma)
    m3 = pref * _radial_moment(3, a, sigma)
    p = float(np.sum(wts * m1))
    if p <= 0.0:
        return ConeMoments(0.0, 0.0)
    mean = (wts * m2) @ U / p
    second = (U * (wts * m3)[:, None]).T @ U / p
    cov = second - np.outer(mean, mean)
    return ConeMoments(p, 0.0, mean, 0.5 * (cov + cov.T), np.zeros(2))


# -- public estimators -----------------------------------------------------------


def cone_moments(region, c, chan: GaussianChannel, cfg: EstimatorConfig, need_moments=True, samples=None):
    """Single-pass measure / mean / covariance estimate.

    ``samples`` overrides the configured stream (used for frozen or rotated draws).
    """
    c = np.asarray(c, dtype=np.float64)
    if cfg.method == "exact_1d":
        return _exact_1d(region, c, chan.sigma)
    if cfg.method == "wedge_2d":
        return _wedge_2d(region, c, chan.sigma)
    Z = cfg.stream(len(c)) if samples is None else samples
    return moments_from_samples(Z, region, c, chan.sigma, cfg.method, need_moments)


def cone_measure(cone, c, chan: GaussianChannel, cfg: EstimatorConfig) -> ConeMoments:
    """Estimate ``P{g_c in cone}``; mean and covariance are left empty."""
    m = cone_moments(cone, c, chan, cfg, need_moments=False)
    return replace(m, mean=None, covariance=None, mean_stderr=None, mean_error_cov=None)


def _require_accepted(m: ConeMoments, cfg):
    if cfg.stochastic and (m.accepted < MIN_ACCEPTED or m.mean is None):
        raise TooFewAcceptedSamples(f"only {m.accepted:.0f} samples landed in the region")
    if m.mean is None:
        raise TooFewAcceptedSamples("region has zero Gaussian measure")


def cone_conditional_mean(cone, c, chan, cfg) -> ConeMoments:
    """``E[g_c | g_c in cone]`` (covariance is computed in the same pass)."""
    m = cone_moments(cone, c, chan, cfg)
    _require_accepted(m, cfg)
    return m


def cone_conditional_cov(cone, c, chan, cfg) -> ConeMoments:
    """``cov(g_c | g_c in cone)``, symmetrised."""
    m = cone_moments(cone, c, chan, cfg)
    _require_accepted(m, cfg)
    return m


def crn_compare(cone_a, c_a, cone_b, c_b, chan, cfg, return_stderr=False):
    """``P{g_cA in A} - P{g_cB in B}`` on one shared normal stream.

    With ``return_stderr`` returns ``(difference, std_error)`` where the error
    comes from the per-sample paired differences.
    """
    method = "crn_mc" if cfg.method in ("plain_mc", "crn_mc") else cfg.method
    if method not in MC_METHODS:
        a = cone_measure(cone_a, c_a, chan, cfg).measure
        b = cone_measure(cone_b, c_b, chan, cfg).measure
        return (a - b, 0.0) if return_stderr else a - b
    Z = cfg.stream(len(np.asarray(c_a)))
    diff = weights_from_samples(Z, cone_a, c_a, chan.sigma, method) - weights_from_samples(
        Z, cone_b, c_b, chan.sigma, method
    )
    est = float(diff.mean())
    if return_stderr:
        return est, float(diff.std(ddof=1) / math.sqrt(len(diff))) if len(diff) > 1 else 0.0
    return est
