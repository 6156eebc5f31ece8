"""Gaussian centroids of spherical simplices by fixed-point iteration.

The centroid of a cone ``D`` maximises ``P{N(c, sigma^2 I) in D}`` over unit
``c``. Stationarity forces ``c = f(c) = h(c) / |h(c)|`` with
``h(c) = E[g_c | g_c in D]``. Its Jacobian factorises as
``(1/|h|) (I - u u^T) * cov(g_c | D) / sigma^2`` with ``u = h/|h|``; the
covariance is dominated by ``sigma^2 I`` for convex ``D`` and ``|h| > 1``, so
the map contracts and the centroid is unique.

All stochastic iterations reuse one frozen normal stream, which turns the
estimated map into a deterministic one whose convergence can be checked
exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _accel
from .errors import ConeNotInHalfSpace, NonConvergence, SingularFrame, StartOutsideCone
from .gaussian import EstimatorConfig, GaussianChannel, cone_moments, derive_seed, moments_from_samples
from .geometry import RANK_RTOL, SimplicialCone, random_interior_point

DEFAULT_TOL = 1e-6


@dataclass(frozen=True)
class CentroidResult:
    centroid: np.ndarray
    iterations: int
    residual: float
    converged: bool
    # delta-method spread of the estimated fixed point; 0 for exact methods
    uncertainty: float = 0.0
    contraction: float = float("nan")
    tol: float = float("nan")


class _FrozenMap:
    """``c -> E[g_c | D]`` evaluated on one fixed sample stream."""

    def __init__(self, cone, chan, cfg, samples=None):
        self.cone = cone
        self.chan = chan
        self.cfg = cfg
        if not cfg.stochastic:
            self.Z = None
        else:
            self.Z = cfg.stream(cone.dim) if samples is None else samples

    def moments(self, c, direction=None):
        if direction is not None and self.cfg.method == "conditional_mc":
            return moments_from_samples(self.Z, self.cone, c, self.chan.sigma, direction=direction)
        return cone_moments(self.cone, c, self.chan, self.cfg, samples=self.Z)

    def __call__(self, c, direction=None):
        m = self.moments(c, direction)
        if m.mean is None:
            raise StartOutsideCone("iterate left the support of the cone")
        return m.mean / np.linalg.norm(m.mean), m


def _tangential_jacobian(m, sigma):
    h = m.mean
    nh = np.linalg.norm(h)
    u = h / nh
    P = np.eye(len(h)) - np.outer(u, u)
    return P @ m.covariance / (sigma * sigma) / nh


def _check_interior(cone, c, err=StartOutsideCone):
    c = np.asarray(c, dtype=np.float64)
    if abs(np.linalg.norm(c) - 1.0) > 1e-9:
        raise ValueError("expected a unit vector")
    if not cone.contains(c)[0]:
        raise err("point is not strictly inside the cone")
    return c


def centroid_fixed_point(
    cone: SimplicialCone,
    chan: GaussianChannel,
    cfg: EstimatorConfig,
    start=None,
    max_iter: int = 200,
    tol: Optional[float] = None,
    raise_on_failure: bool = True,
    samples: Optional[np.ndarray] = None,
) -> CentroidResult:
    """Iterate ``c <- normalize(E[g_c | g_c in cone])`` from ``start``.

    ``start`` defaults to the cone centre. The frozen stream makes the map
    deterministic, so ``tol`` (default 1e-6) bounds the step residual of that
    map; the sampling error of the fixed point itself is reported separately
    as ``uncertainty``.
    Raises :class:`NonConvergence` (carrying the partial result) when the
    budget runs out, unless ``raise_on_failure`` is False. ``samples``
    replaces the configured normal stream.
    """
    c = cone.center if start is None else _check_interior(cone, start)
    fmap = _FrozenMap(cone, chan, cfg, samples)
    tol = DEFAULT_TOL if tol is None else float(tol)
    if tol <= 0:
        raise ValueError("tol must be positive")
    residual = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        c_new, _ = fmap(c)
        residual = float(np.linalg.norm(c_new - c))
        c = c_new
        if residual < tol:
            break
    converged = residual < tol
    # spread of the fixed point: map noise amplified by 1 / (1 - contraction)
    m = fmap.moments(c)
    L = float(np.linalg.norm(_tangential_jacobian(m, chan.sigma), 2)) if m.covariance is not None else float("nan")
    unc = 0.0
    if cfg.stochastic and m.mean is not None:
        se_f = (m.tangential_stderr or 0.0) / np.linalg.norm(m.mean)
        unc = se_f / max(1.0 - L, 1e-3)
    result = CentroidResult(c, it, residual, converged, unc, L, tol)
    if not converged and raise_on_failure:
        raise NonConvergence(
            f"centroid iteration stopped after {it} steps with residual {residual:.3g} >= {tol:.3g}",
            result=result,
        )
    return result


@dataclass(frozen=True)
class AdaptedFrame:
    """Linear frame whose first axis is ``c`` and whose others are projected generators.

    ``A_inv`` has rows ``(c, P v_2, ..., P v_n)`` with ``P = I - c c^T``;
    ``u(x) = A_inv (x - c) / sigma`` and ``x(u) = sigma A u + c``.
    """

    c: np.ndarray
    A_inv: np.ndarray
    A: np.ndarray
    projector: np.ndarray

    def u(self, x, sigma=1.0):
        return (np.asarray(x) - self.c) @ self.A_inv.T / sigma

    def x(self, u, sigma=1.0):
        return sigma * np.asarray(u) @ self.A.T + self.c

    def gram(self):
        return self.A.T @ self.A


def adapted_frame(c, generators) -> AdaptedFrame:
    c = np.asarray(c, dtype=np.float64)
    G = np.asarray(generators, dtype=np.float64)
    if abs(np.linalg.norm(c) - 1.0) > 1e-9:
        raise ValueError("c must be a unit vector")
    P = np.eye(len(c)) - np.outer(c, c)
    A_inv = np.vstack([c[None, :], G[1:] @ P])
    s = np.linalg.svd(A_inv, compute_uv=False)
    if s[-1] <= RANK_RTOL * s[0]:
        raise SingularFrame("projected generators are linearly dependent")
    return AdaptedFrame(c, A_inv, np.linalg.inv(A_inv), P)


def _mean_norm_reflection(cone, c, sigma, Z):
    """Pairs ``x± = c + sigma (z_perp ± |z_c| c)``; per pair ``|z_c| (1_D(x+) - 1_D(x-)) >= 0``."""
    zc = Z @ c
    zp = Z - np.outer(zc, c)
    up = c + sigma * (zp + np.outer(np.abs(zc), c))
    dn = c + sigma * (zp - np.outer(np.abs(zc), c))
    zero = np.zeros(len(c))
    ip = _accel.plain_weights(up, zero, 1.0, cone.normals)
    im = _accel.plain_weights(dn, zero, 1.0, cone.normals)
    a = np.abs(zc) * (ip - im)
    b = 0.5 * (ip + im)
    A, B = a.mean(), b.mean()
    val = 1.0 + sigma * A / B
    r = a - (A / B) * b
    se = sigma * r.std(ddof=1) / (math.sqrt(len(a)) * B)
    return float(val), float(se)


def mean_norm_check(cone: SimplicialCone, c, chan: GaussianChannel, cfg: EstimatorConfig, return_stderr=False):
    """Estimate ``<c, E[g_c | g_c in cone]>``; it exceeds 1 for interior unit ``c``.

    Monte Carlo estimates are nonnegative sample by sample: ``conditional_mc``
    integrates the ``c``-component exactly (the excess is the mean of
    ``phi(lower limit)``), the indicator methods pair each draw with its
    mirror image across the hyperplane through ``c`` orthogonal to ``c``.
    """
    c = _check_interior(cone, c, err=ValueError)
    if cone.half_space_certificate() is None:
        raise ConeNotInHalfSpace("no half-space certificate for this cone")
    if cfg.method in ("plain_mc", "crn_mc"):
        val, se = _mean_norm_reflection(cone, c, chan.sigma, cfg.stream(cone.dim))
    else:
        m = cone_moments(cone, c, chan, cfg)
        val = float(c @ m.mean)
        se = float(np.sqrt(max(c @ m.mean_error_cov @ c, 0.0))) if m.mean_error_cov is not None else 0.0
    return (val, se) if return_stderr else val


@dataclass(frozen=True)
class ContractionReport:
    mean_norm: float
    lipschitz_estimate: float
    jacobian_spectral_bound: float
    passed: bool
    jacobian_norm: float = float("nan")
    fd_discrepancy: float = float("nan")
    pairs: int = 0
    details: dict = field(default_factory=dict, repr=False)


def _tangent_basis(c):
    _, _, vt = np.linalg.svd(c[None, :])
    return vt[1:]


def contraction_certificate(
    cone: SimplicialCone,
    chan: GaussianChannel,
    cfg: EstimatorConfig,
    trials: int = 20,
    fd_points: int = 3,
    fd_step: float = 1e-3,
) -> ContractionReport:
    """Empirical contraction evidence for the centroid map of ``cone``.

    (a) worst ratio ``|f(c) - f(c')| / |c - c'|`` over ``trials`` random interior
    pairs on the frozen stream; (b) worst ``lambda_max(cov) / (sigma^2 |h|)``
    over every evaluated point, the product bound on the Jacobian; plus the
    smallest ``|h|`` seen. Central differences of the frozen map are compared
    with the analytic Jacobian at ``fd_points`` points; ``fd_discrepancy`` is
    the worst absolute error of a Jacobian-vector product with a unit tangent.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    sigma = chan.sigma
    rng = np.random.default_rng(derive_seed(cfg.seed, 0xC0DE))
    fmap = _FrozenMap(cone, chan, cfg)
    lip = 0.0
    min_h = math.inf
    max_bound = 0.0
    max_jnorm = 0.0
    fd_worst = 0.0
    evaluated = []
    for t in range(trials):
        c1 = random_interior_point(rng, cone)
        c2 = random_interior_point(rng, cone)
        f1, m1 = fmap(c1)
        f2, m2 = fmap(c2)
        for c, m in ((c1, m1), (c2, m2)):
            nh = float(np.linalg.norm(m.mean))
            min_h = min(min_h, nh)
            lam = float(np.linalg.eigvalsh(m.covariance)[-1])
            max_bound = max(max_bound, lam / (sigma * sigma) / nh)
            max_jnorm = max(max_jnorm, float(np.linalg.norm(_tangential_jacobian(m, sigma), 2)))
            evaluated.append(c)
        d = float(np.linalg.norm(c1 - c2))
        if d > 1e-9:
            lip = max(lip, float(np.linalg.norm(f1 - f2)) / d)
    for c in evaluated[:fd_points]:
        if cone.dim < 2:
            break
        # line direction pinned at c so the frozen map is smooth across the stencil
        _, m = fmap(c, direction=c)
        J = _tangential_jacobian(m, sigma)
        for t_dir in _tangent_basis(c):
            cp = c + fd_step * t_dir
            cm = c - fd_step * t_dir
            fp, _ = fmap(cp / np.linalg.norm(cp), direction=c)
            fm, _ = fmap(cm / np.linalg.norm(cm), direction=c)
            fd = (fp - fm) / (2.0 * fd_step)
            an = J @ t_dir
            fd_worst = max(fd_worst, float(np.linalg.norm(fd - an)))
    passed = bool(min_h > 1.0 and lip < 1.0 and max_bound < 1.0)
    return ContractionReport(
        mean_norm=min_h,
        lipschitz_estimate=lip,
        jacobian_spectral_bound=max_bound,
        passed=passed,
        jacobian_norm=max_jnorm,
        fd_discrepancy=fd_worst,
        pairs=trials,
    )
