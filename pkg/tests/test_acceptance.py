"""End-to-end acceptance runs at their stated tolerances.

Each test prints one ``ACCEPTANCE k PASS|FAIL`` line. Run alone with
``pytest tests/test_acceptance.py -s`` to see only these lines.
"""

import io
import json
import time
from collections import Counter

import numpy as np
import pytest
from scipy import stats

from simplexcode.centroid import centroid_fixed_point, contraction_certificate
from simplexcode.cli import main
from simplexcode.gaussian import EstimatorConfig, GaussianChannel, cone_conditional_cov, derive_seed
from simplexcode.geometry import (
    bisector_residual,
    optimal_vertices,
    perturb_codebook,
    random_codebook,
    random_cone,
    random_interior_point,
    regular_simplex,
    shared_column_disagreement,
)
from simplexcode.optimizer import evaluate_Q, optimize, q_difference
from simplexcode.proofchecks import check_instance, random_instance

pytestmark = pytest.mark.acceptance


@pytest.fixture
def report(capsys):
    def emit(k, name, passed, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {k} {'PASS' if passed else 'FAIL'} {name}: {detail}")

    return emit


def test_1_antipodal_baseline(report):
    t0 = time.perf_counter()
    buf = io.StringIO()
    code = main(["eval", "--regular", "1", "--sigma", "1", "--samples", "1000000", "--seed", "20240611"], out=buf)
    dt = time.perf_counter() - t0
    q = json.loads(buf.getvalue())["results"][0]["Q"]
    err = abs(q - stats.norm.cdf(1.0))
    ok = code == 0 and err < 1e-3 and dt < 5.0
    report(1, "antipodal baseline", ok, f"Q={q:.6f} |Q-Phi(1)|={err:.2e} time={dt:.2f}s")
    assert ok


def test_2_centroid_equilibrium(report):
    worst_err, worst_it, fails = 0.0, 0, 0
    for n in (2, 3):
        w = regular_simplex(n)
        cells = optimal_vertices(w)
        for sigma in (0.5, 1.0, 2.0):
            chan = GaussianChannel(sigma, n)
            cfg = EstimatorConfig(samples=200_000, seed=derive_seed(2, 10 * n + int(4 * sigma)))
            rng = np.random.default_rng(derive_seed(2, n))
            for i in range(n + 1):
                cone = cells.cell(i)
                for _ in range(10 if i == 0 else 2):
                    r = centroid_fixed_point(cone, chan, cfg, start=random_interior_point(rng, cone), max_iter=100,
                                             raise_on_failure=False)
                    err = float(np.linalg.norm(r.centroid - w.words[i]))
                    worst_err = max(worst_err, err)
                    worst_it = max(worst_it, r.iterations)
                    fails += not (r.converged and err < 1e-3 and r.iterations <= 100)
    ok = fails == 0
    report(2, "centroid equilibrium", ok, f"worst chordal error={worst_err:.2e} worst iterations={worst_it} failures={fails}")
    assert ok


def test_3_contraction_certificate(report):
    t0 = time.perf_counter()
    worst_lip, min_norm, fails = 0.0, np.inf, 0
    for n in (2, 3):
        for sigma in (0.5, 1.0, 2.0):
            rng = np.random.default_rng(derive_seed(3, 10 * n + int(4 * sigma)))
            chan = GaussianChannel(sigma, n)
            for k in range(50):
                cone = random_cone(rng, n)
                rep = contraction_certificate(cone, chan, EstimatorConfig(samples=50_000, seed=k), trials=10)
                worst_lip = max(worst_lip, rep.lipschitz_estimate)
                min_norm = min(min_norm, rep.mean_norm)
                fails += not (rep.lipschitz_estimate < 1.0 and rep.mean_norm > 1.0)
    dt = time.perf_counter() - t0
    ok = fails == 0 and dt < 300
    report(3, "contraction certificate", ok,
           f"300 cones, worst lipschitz={worst_lip:.3f} min mean_norm={min_norm:.4f} failures={fails} time={dt:.0f}s")
    assert ok


def test_4_convergence_to_regularity(report):
    rng = np.random.default_rng(derive_seed(4, 0))
    chan = GaussianChannel(1.0, 3)
    finals, rounds, fails = [], [], 0
    for k in range(20):
        start = perturb_codebook(rng, regular_simplex(3), 10.0)
        tr = optimize(start, chan, EstimatorConfig(samples=100_000, seed=derive_seed(4, k + 1)), max_iter=200)
        finals.append(tr.regularity[-1])
        rounds.append(len(tr.iterates) - 1)
        fails += not (tr.terminated_by != "invalid_pair" and tr.regularity[-1] < 5e-3 and tr.monotone(2.0))
    ok = fails == 0
    report(4, "convergence to regularity", ok,
           f"20 runs, worst final regularity={max(finals):.2e} max rounds={max(rounds)} failures={fails}")
    assert ok


def test_5_regular_beats_random(report):
    lines, ok = [], True
    for n in (2, 3):
        for sigma in (0.5, 1.0):
            chan = GaussianChannel(sigma, n)
            cfg = EstimatorConfig(samples=50_000, seed=derive_seed(5, n))
            q_reg = evaluate_Q(regular_simplex(n), chan, cfg)
            rng = np.random.default_rng(derive_seed(5, 10 * n + int(2 * sigma)))
            gaps, worst_z = [], np.inf
            for _ in range(100):
                g, se = q_difference(q_reg, evaluate_Q(random_codebook(rng, n), chan, cfg))
                gaps.append(g)
                worst_z = min(worst_z, g / se if se > 0 else np.inf)
                ok &= g >= -2 * se
            ok &= float(np.mean(gaps)) > 0
            lines.append(f"n={n} sigma={sigma}: mean gap={np.mean(gaps):.4f} min gap/se={worst_z:.1f}")
    report(5, "regular simplex beats random codebooks", ok, "; ".join(lines))
    assert ok


def test_6_geometry_exactness(report):
    worst_shared = worst_reflect = 0.0
    for n in (2, 3, 4):
        rng = np.random.default_rng(derive_seed(6, n))
        for _ in range(200):
            w = random_codebook(rng, n)
            worst_shared = max(worst_shared, shared_column_disagreement(w))
            worst_reflect = max(worst_reflect, bisector_residual(w, optimal_vertices(w)))
    ok = worst_shared < 1e-10 and worst_reflect < 1e-10
    report(6, "geometry exactness", ok, f"shared-column={worst_shared:.1e} reflection={worst_reflect:.1e}")
    assert ok


def test_7_proof_ingredient_suite(report):
    t0 = time.perf_counter()
    sigmas = (0.5, 1.0, 2.0)
    failures = Counter()
    first = None
    total = 0
    for n, count in ((2, 334), (3, 333), (4, 333)):
        rng = np.random.default_rng(derive_seed(7, n))
        for k in range(count):
            sigma = sigmas[k % 3]
            inst = random_instance(rng, n)
            r = check_instance(*inst, GaussianChannel(sigma, n), EstimatorConfig(samples=50_000, seed=derive_seed(7, 1000 * n + k)),
                               region_samples=200_000, inclusion_samples=100_000)
            total += 1
            if not r.passed:
                failures[(n, r.failing_check())] += 1
                if first is None:
                    first = (n, sigma, k, r.failing_check())
    dt = time.perf_counter() - t0
    n_fail = sum(failures.values())
    ok = n_fail == 0
    detail = f"{total} instances, {n_fail} counterexamples, time={dt:.0f}s"
    if failures:
        detail += "; by (n, check): " + ", ".join(f"n={n} {c}: {m}" for (n, c), m in sorted(failures.items()))
        detail += f"; first at n={first[0]} sigma={first[1]} trial={first[2]}"
    report(7, "proof-ingredient suite", ok, detail)
    assert ok, detail


def test_8_covariance_domination(report):
    rng = np.random.default_rng(derive_seed(8, 0))
    worst = 0.0
    for k in range(100):
        n = (2, 3, 4)[k % 3]
        sigma = (0.5, 1.0, 2.0)[(k // 3) % 3]
        cone = random_cone(rng, n)
        c = random_interior_point(rng, cone)
        m = cone_conditional_cov(cone, c, GaussianChannel(sigma, n), EstimatorConfig(samples=200_000, seed=k))
        worst = max(worst, float(np.linalg.eigvalsh(m.covariance)[-1]) / sigma ** 2)
    ok = worst <= 1.02
    report(8, "covariance domination", ok, f"100 triples, worst lambda_max/sigma^2={worst:.4f}")
    assert ok
