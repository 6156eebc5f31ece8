"""Numerical checks of the injectivity argument for the marginal centroid map.

Two simplicial cones ``D`` and ``D'`` share all generators except the first.
Their facet normals satisfy ``e_1 = e'_1`` and, for every other index ``i``, a
three-term relation ``e_1 + lam_i e_i + lam'_i e'_i = 0`` with
``lam_i lam'_i < 0``. The sign pattern splits the indices into ``J``
(``lam_i > 0``) and its complement, which yields set identities for
``D & D'``, ``D - D'`` and ``D' - D`` and sign conditions on their Gaussian
conditional means ``i``, ``t`` and ``t'``. Everything here samples those
objects and reports violations with the offending data attached.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from . import _accel
from .centroid import centroid_fixed_point
from .errors import LinearDependence, OppositeSides, TuplesIdentical
from .gaussian import EstimatorConfig, GaussianChannel, derive_seed
from .geometry import RANK_RTOL, SimplicialCone, _well_conditioned, facet_normals, null_vector, random_unit_vectors

COPLANARITY_TOL = 1e-8
SHARED_NORMAL_TOL = 1e-10
EMPTY_REGION_HITS = 10
REGION_SAMPLES = 1_000_000
INCLUSION_SAMPLES = 100_000
INCLUSION_SIGMA = 3.0
# points closer than this to a facet hyperplane are skipped by the inclusion check
BOUNDARY_BAND = 1e-9
N_SE = 3.0


@dataclass(frozen=True)
class FacetSystem:
    """Facet normals of two cones that differ in their first generator.

    ``lambdas[i] = (1, lam_i, lam'_i)``; row 0 is ``(1, nan, nan)``. ``J`` and
    ``J_bar`` hold 0-based indices from ``1..n-1``.
    """

    generators: np.ndarray
    generators_prime: np.ndarray
    e: np.ndarray
    e_prime: np.ndarray
    lambdas: np.ndarray
    J: tuple
    J_bar: tuple
    coplanarity_residual: np.ndarray
    shared_index: int = 0

    @property
    def dim(self) -> int:
        return self.e.shape[1]

    @property
    def cone(self) -> SimplicialCone:
        return SimplicialCone(self.generators)

    @property
    def cone_prime(self) -> SimplicialCone:
        return SimplicialCone(self.generators_prime)

    def invariant_failures(self) -> List[str]:
        out = []
        if np.linalg.norm(self.e[0] - self.e_prime[0]) > SHARED_NORMAL_TOL:
            out.append("shared normal")
        for i in range(1, self.dim):
            if not self.coplanarity_residual[i] < COPLANARITY_TOL:
                out.append(f"coplanarity {i}")
            if not self.lambdas[i, 1] * self.lambdas[i, 2] < 0:
                out.append(f"opposite signs {i}")
        V = self.generators
        if np.any(np.einsum("ij,ij->i", self.e, V) <= 0) or np.any(np.einsum("ij,ij->i", self.e_prime[1:], V[1:]) <= 0):
            out.append("orientation")
        return out


def facet_system(generators, generators_prime) -> FacetSystem:
    """Normals, lambda triples and index partition for two ``n``-tuples.

    Raises :class:`TuplesIdentical` when the first generators coincide,
    :class:`LinearDependence` when either tuple is singular and
    :class:`OppositeSides` when the two first generators sit on opposite sides
    of the hyperplane spanned by the shared ones (the shared normals would
    then point in opposite directions).
    """
    V = np.asarray(generators, dtype=np.float64)
    Vp = np.asarray(generators_prime, dtype=np.float64)
    if V.shape != Vp.shape or V.ndim != 2 or V.shape[0] != V.shape[1]:
        raise ValueError("expected two (n, n) generator arrays")
    n = V.shape[0]
    if n < 2:
        raise ValueError("need n >= 2")
    if not np.array_equal(V[1:], Vp[1:]):
        raise ValueError("tuples must agree on every generator but the first")
    if np.allclose(V[0], Vp[0], rtol=0.0, atol=1e-12):
        raise TuplesIdentical("first generators coincide")
    if not (_well_conditioned(V) and _well_conditioned(Vp)):
        raise LinearDependence("a generator tuple is linearly dependent")
    e = facet_normals(V)
    ep = facet_normals(Vp)
    if e[0] @ ep[0] < 0:
        raise OppositeSides("first generators lie on opposite sides of the shared facet")
    lambdas = np.full((n, 3), np.nan)
    lambdas[:, 0] = 1.0
    resid = np.zeros(n)
    J, Jb = [], []
    for i in range(1, n):
        A = np.column_stack([e[i], ep[i]])
        sol, *_ = np.linalg.lstsq(A, -e[0], rcond=None)
        lambdas[i, 1:] = sol
        resid[i] = float(np.linalg.norm(e[0] + A @ sol))
        (J if sol[0] > 0 else Jb).append(i)
    return FacetSystem(V, Vp, e, ep, lambdas, tuple(J), tuple(Jb), resid)


def _k_member(X, e1, ei):
    return (X @ e1 > 0) & (X @ ei > 0)


def _intersect(X, e1, normals, idx):
    # empty intersection over idx is the half space H_1
    ok = X @ e1 > 0
    for i in idx:
        ok &= X @ normals[i] > 0
    return ok


@dataclass(frozen=True)
class CheckReport:
    name: str
    passed: bool
    checks: Dict[str, bool] = field(default_factory=dict)
    margins: Dict[str, float] = field(default_factory=dict)
    counterexample: Optional[dict] = None
    notes: Dict[str, object] = field(default_factory=dict)

    def failed_checks(self):
        return [k for k, ok in self.checks.items() if not ok]

    def to_dict(self):
        return {
            "name": self.name,
            "passed": bool(self.passed),
            "checks": {k: bool(v) for k, v in self.checks.items()},
            "margins": {k: _jsonable(v) for k, v in self.margins.items()},
            "counterexample": self.counterexample,
            "notes": {k: _jsonable(v) for k, v in self.notes.items()},
        }


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, float)):
        return None if not math.isfinite(float(x)) else float(x)
    if isinstance(x, (np.integer, np.bool_)):
        return x.item()
    return x


def verify_inclusions(fs: FacetSystem, cfg: EstimatorConfig, samples: int = INCLUSION_SAMPLES) -> CheckReport:
    """Membership identities for intersection and both set differences.

    Points come from an isotropic Gaussian of scale 3 around the normalised
    generator sum of ``D``.
    """
    rng = np.random.default_rng(derive_seed(cfg.seed, 0x1C1))
    center = fs.cone.center
    X = center + INCLUSION_SIGMA * rng.standard_normal((samples, fs.dim))
    band = np.min(np.abs(X @ np.vstack([fs.e, fs.e_prime[1:]]).T), axis=1) < BOUNDARY_BAND
    X = X[~band]
    e1 = fs.e[0]
    inD = _intersect(X, e1, fs.e, range(1, fs.dim))
    inDp = _intersect(X, e1, fs.e_prime, range(1, fs.dim))
    KJ = _intersect(X, e1, fs.e, fs.J)
    KJb = _intersect(X, e1, fs.e_prime, fs.J_bar)
    bad = {
        "intersection": (inD & inDp) != (KJ & KJb),
        "difference": (inD & ~inDp) & ~(KJ & ~KJb),
        "difference_prime": (inDp & ~inD) & ~(KJb & ~KJ),
    }
    checks = {k: not bool(v.any()) for k, v in bad.items()}
    cex = None
    for k, v in bad.items():
        if v.any():
            cex = {"check": k, "point": X[np.argmax(v)].tolist()}
            break
    notes = {
        "samples": int(len(X)),
        "boundary_skipped": int(band.sum()),
        "hits_intersection": int((inD & inDp).sum()),
        "hits_difference": int((inD & ~inDp).sum()),
        "hits_difference_prime": int((inDp & ~inD).sum()),
    }
    return CheckReport("inclusions", all(checks.values()), checks, {}, cex, notes)


@dataclass(frozen=True)
class RegionMoments:
    """Conditional means over ``D & D'``, ``D - D'`` and ``D' - D`` at one centre.

    An empty region (fewer than 10 hits) gets a zero mean and zero covariance.
    """

    i_vec: np.ndarray
    t_vec: np.ndarray
    t_prime_vec: np.ndarray
    masses: np.ndarray
    counts: np.ndarray
    covariances: tuple
    whole_mass: float
    whole_mean: np.ndarray
    samples: int

    @property
    def empty(self):
        return tuple(bool(k < EMPTY_REGION_HITS) for k in self.counts)

    def projection_se(self, region: int, direction) -> float:
        """Std error of ``<direction, mean>`` for region 0 (I), 1 (D-D') or 2 (D'-D)."""
        k = self.counts[region]
        if k < 2:
            return math.inf
        d = np.asarray(direction)
        return float(math.sqrt(max(d @ self.covariances[region] @ d, 0.0) / k))

    def decomposition_error(self):
        """``|m(D) mean(D) - m(I) i - m(D-D') t|`` and its std error scale."""
        lhs = self.whole_mass * self.whole_mean
        rhs = self.masses[0] * self.i_vec + self.masses[1] * self.t_vec
        return float(np.linalg.norm(lhs - rhs))


def region_moments(fs: FacetSystem, c, sigma: float, cfg: EstimatorConfig, samples: int = REGION_SAMPLES) -> RegionMoments:
    c = np.asarray(c, dtype=np.float64)
    Z = cfg.with_(samples=samples).stream(fs.dim, substream=0x2E6)
    X = c + sigma * Z
    inD = _accel.membership(X, fs.e).all(axis=1)
    inDp = _accel.membership(X, fs.e_prime).all(axis=1)
    regions = (inD & inDp, inD & ~inDp, inDp & ~inD)
    means, covs, counts = [], [], []
    for r in regions:
        k = int(r.sum())
        counts.append(k)
        if k < EMPTY_REGION_HITS:
            means.append(np.zeros(fs.dim))
            covs.append(np.zeros((fs.dim, fs.dim)))
            continue
        Y = X[r]
        means.append(Y.mean(axis=0))
        covs.append(np.cov(Y, rowvar=False).reshape(fs.dim, fs.dim))
    counts = np.array(counts)
    kD = int(inD.sum())
    whole = X[inD].mean(axis=0) if kD else np.zeros(fs.dim)
    masses = np.where(counts >= EMPTY_REGION_HITS, counts / samples, 0.0)
    return RegionMoments(means[0], means[1], means[2], masses, counts, tuple(covs), kD / samples, whole, samples)


def _angle_and_se(a, b, mom: RegionMoments, ra: int, rb: int):
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    ang = float(np.arccos(np.clip(a @ b / (na * nb), -1.0, 1.0)))
    # tangential spread of each direction, in the plane of the two vectors
    ua, ub = a / na, b / nb
    ta = ub - (ub @ ua) * ua
    tb = ua - (ua @ ub) * ub
    sa = mom.projection_se(ra, ta / np.linalg.norm(ta)) / na if np.linalg.norm(ta) > 0 else 0.0
    sb = mom.projection_se(rb, tb / np.linalg.norm(tb)) / nb if np.linalg.norm(tb) > 0 else 0.0
    return ang, math.hypot(sa, sb)


def verify_sign_conditions(fs: FacetSystem, moments: RegionMoments, coplanar_tol: float = 1e-6) -> CheckReport:
    """Sign conditions on ``i``, ``t``, ``t'`` plus the two dependence claims.

    A condition fails only when it is contradicted by more than three std
    errors; margins are ``value / std_error``. Claims whose hypothesis does not
    hold on this instance are skipped and listed in ``notes``.
    """
    e, ep = fs.e, fs.e_prime
    iv, tv, tpv = moments.i_vec, moments.t_vec, moments.t_prime_vec
    emptyI, emptyT, emptyTp = moments.empty
    checks: Dict[str, bool] = {}
    margins: Dict[str, float] = {}
    skipped = []

    def positive(tag, region, vec, normal):
        val = float(normal @ vec)
        se = moments.projection_se(region, normal)
        margins[tag] = val / se if se > 0 else math.copysign(math.inf, val)
        return not (val < -N_SE * se) and not (se == 0 and val <= 0)

    def some_nonpositive(tag, region, vec, normals, idx):
        if not idx:
            skipped.append(tag)
            return True
        vals = [(float(normals[i] @ vec), moments.projection_se(region, normals[i])) for i in idx]
        k = int(np.argmin([v for v, _ in vals]))
        val, se = vals[k]
        margins[tag] = -val / se if se > 0 else math.copysign(math.inf, -val)
        return not (val > N_SE * se)

    if emptyI:
        skipped.append("intersection")
    else:
        checks["intersection_J"] = all(positive(f"i.e{j}", 0, iv, e[j]) for j in fs.J) if fs.J else True
        checks["intersection_Jbar"] = all(positive(f"i.e'{j}", 0, iv, ep[j]) for j in fs.J_bar) if fs.J_bar else True
    if emptyT:
        skipped.append("difference")
    else:
        checks["difference_J"] = all(positive(f"t.e{j}", 1, tv, e[j]) for j in fs.J) if fs.J else True
        checks["difference_exists"] = some_nonpositive("t.e'_min", 1, tv, ep, fs.J_bar)
    if emptyTp:
        skipped.append("difference_prime")
    else:
        checks["difference_prime_Jbar"] = (
            all(positive(f"t'.e'{j}", 2, tpv, ep[j]) for j in fs.J_bar) if fs.J_bar else True
        )
        checks["difference_prime_exists"] = some_nonpositive("t'.e_min", 2, tpv, e, fs.J)

    # one difference empty: i must not be collinear with the other mean
    if not emptyI and (emptyT ^ emptyTp):
        other, r = (tpv, 2) if emptyT else (tv, 1)
        ang, se = _angle_and_se(iv, other, moments, 0, r)
        margins["noncollinear"] = ang / se if se > 0 else math.inf
        checks["noncollinear"] = ang > N_SE * se
    elif emptyT and emptyTp:
        skipped.append("noncollinear")

    notes = {"J": list(fs.J), "J_bar": list(fs.J_bar), "counts": moments.counts}
    if not (emptyI or emptyT or emptyTp):
        B = np.column_stack([tv, tpv])
        coef, *_ = np.linalg.lstsq(B, iv, rcond=None)
        resid = float(np.linalg.norm(iv - B @ coef) / np.linalg.norm(iv))
        notes["coplanarity"] = resid
        notes["alpha"] = coef
        if resid < coplanar_tol:
            a, ap = float(coef[0]), float(coef[1])
            checks["positive_combination"] = a > 0 and ap > 0
            gI, gT, gTp = moments.masses
            lhs = (gI * a + gT) / (gI * ap) if ap != 0 else math.inf
            rhs = gI * a / (gI * ap + gTp) if (gI * ap + gTp) != 0 else math.inf
            margins["ratio_gap"] = lhs - rhs
            checks["ratio_strict"] = lhs > rhs
        else:
            skipped.append("positive_combination")
    notes["skipped"] = skipped
    passed = all(checks.values())
    cex = None
    if not passed:
        cex = {
            "failed": [k for k, v in checks.items() if not v],
            "i": iv.tolist(),
            "t": tv.tolist(),
            "t_prime": tpv.tolist(),
        }
    return CheckReport("sign_conditions", passed, checks, margins, cex, notes)


@dataclass(frozen=True)
class InjectivityReport:
    centroid: np.ndarray
    centroid_prime: np.ndarray
    separation: float
    uncertainty: float
    passed: bool

    def to_dict(self):
        return {
            "centroid": self.centroid.tolist(),
            "centroid_prime": self.centroid_prime.tolist(),
            "separation": self.separation,
            "uncertainty": self.uncertainty,
            "passed": self.passed,
        }


def injectivity_probe(
    v_common, v1, v1_prime, chan: GaussianChannel, cfg: EstimatorConfig, tol: float = 1e-6, max_iter: int = 500
) -> InjectivityReport:
    """Centroids of ``cone(v1, v_common)`` and ``cone(v1', v_common)`` and their chordal separation.

    Passes when the separation exceeds three combined centroid uncertainties.
    Identical inputs are allowed and give separation 0 (a failing control).
    """
    Vc = np.asarray(v_common, dtype=np.float64).reshape(-1, len(v1))
    v1 = np.asarray(v1, dtype=np.float64)
    v1p = np.asarray(v1_prime, dtype=np.float64)
    u = null_vector(Vc) if len(Vc) else np.ones(1)
    if (u @ v1) * (u @ v1p) <= 0:
        raise OppositeSides("v1 and v1' are not in the same open half space")
    D = SimplicialCone(np.vstack([v1, Vc]))
    Dp = SimplicialCone(np.vstack([v1p, Vc]))
    r = centroid_fixed_point(D, chan, cfg, max_iter=max_iter, tol=tol)
    rp = centroid_fixed_point(Dp, chan, cfg, max_iter=max_iter, tol=tol)
    sep = float(np.linalg.norm(r.centroid - rp.centroid))
    # solver residual adds at most tol / (1 - L) per centroid
    unc = math.hypot(r.uncertainty, rp.uncertainty) + tol / max(1.0 - max(r.contraction, rp.contraction), 1e-3)
    return InjectivityReport(r.centroid, rp.centroid, sep, float(unc), bool(sep > N_SE * unc))


def random_instance(rng, n: int, min_separation_deg: float = 15.0, max_tries: int = 10_000):
    """Shared generators plus two distinct first generators on the same side of their span."""
    for _ in range(max_tries):
        Vc = random_unit_vectors(rng, n - 1, n)
        u = null_vector(Vc) if n > 1 else np.ones(1)
        v1, v1p = random_unit_vectors(rng, 2, n)
        v1 = v1 if v1 @ u > 0 else -v1
        v1p = v1p if v1p @ u > 0 else -v1p
        if np.degrees(np.arccos(np.clip(v1 @ v1p, -1, 1))) < min_separation_deg:
            continue
        V = np.vstack([v1, Vc])
        Vp = np.vstack([v1p, Vc])
        if _well_conditioned(V, RANK_RTOL) and _well_conditioned(Vp, RANK_RTOL):
            return Vc, v1, v1p
    raise RuntimeError("could not draw an instance")


@dataclass(frozen=True)
class InstanceReport:
    dim: int
    sigma: float
    facet_failures: List[str]
    inclusions: CheckReport
    signs: CheckReport
    injectivity: InjectivityReport
    decomposition_error: float
    # (v_common, v1, v1') so a failing instance can be replayed
    instance: tuple = field(default=(), repr=False)

    @property
    def passed(self) -> bool:
        return (
            not self.facet_failures
            and self.inclusions.passed
            and self.signs.passed
            and self.injectivity.passed
        )

    def failing_check(self) -> Optional[str]:
        if self.facet_failures:
            return "facet_system: " + ", ".join(self.facet_failures)
        if not self.inclusions.passed:
            return "verify_inclusions: " + ", ".join(self.inclusions.failed_checks())
        if not self.signs.passed:
            return "verify_sign_conditions: " + ", ".join(self.signs.failed_checks())
        if not self.injectivity.passed:
            return "injectivity_probe"
        return None

    def to_dict(self):
        return {
            "dim": self.dim,
            "sigma": self.sigma,
            "passed": self.passed,
            "facet_failures": self.facet_failures,
            "inclusions": self.inclusions.to_dict(),
            "sign_conditions": self.signs.to_dict(),
            "injectivity": self.injectivity.to_dict(),
            "decomposition_error": self.decomposition_error,
            "instance": {
                "v_common": np.asarray(self.instance[0]).tolist() if self.instance else None,
                "v1": np.asarray(self.instance[1]).tolist() if self.instance else None,
                "v1_prime": np.asarray(self.instance[2]).tolist() if self.instance else None,
            },
        }


def check_instance(
    v_common,
    v1,
    v1_prime,
    chan: GaussianChannel,
    cfg: EstimatorConfig,
    region_samples: int = REGION_SAMPLES,
    inclusion_samples: int = INCLUSION_SAMPLES,
) -> InstanceReport:
    """Run the whole chain on one instance; sign conditions use the centroid of ``D``."""
    Vc = np.asarray(v_common).reshape(-1, len(v1))
    fs = facet_system(np.vstack([v1, Vc]), np.vstack([v1_prime, Vc]))
    inc = verify_inclusions(fs, cfg, inclusion_samples)
    inj = injectivity_probe(Vc, v1, v1_prime, chan, cfg)
    mom = region_moments(fs, inj.centroid, chan.sigma, cfg, region_samples)
    signs = verify_sign_conditions(fs, mom)
    return InstanceReport(
        chan.dim, chan.sigma, fs.invariant_failures(), inc, signs, inj, mom.decomposition_error(),
        (Vc.copy(), np.asarray(v1, dtype=np.float64), np.asarray(v1_prime, dtype=np.float64)),
    )
