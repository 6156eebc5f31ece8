"""Alternating optimisation of codewords and decision cones.

Each round rebuilds the nearest-neighbour cones of the current codebook
(``v_step``) and then moves every codeword to the Gaussian centroid of its
cone (``w_step``). Both steps can only increase the relaxed objective, so the
average probability of correct decoding climbs until an equilibrium.

Every cell ``i`` draws from its own substream ``i`` of the configured seed, in
both evaluation and centroid solves, and reads those draws in a frame attached
to its cone. Two codebooks of the same dimension therefore share common random
numbers cell by cell, a whole run is a deterministic function of the seed, and
rotating the start rotates the entire run (no drift along rotations of an
equilibrium).
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy.linalg import orthogonal_procrustes

from .centroid import centroid_fixed_point
from .errors import InvalidPair, NonConvergence
from .gaussian import EstimatorConfig, GaussianChannel, cone_measure, framed_samples, weights_from_samples
from .geometry import (
    Codebook,
    VertexTuple,
    max_chordal_step,
    optimal_vertices,
    regularity,
    validate_pair,
)

SAMPLE_RETRY_FACTOR = 4
# Q differences below this are summation rounding, not a decrease
MONOTONE_FLOOR = 1e-12


@dataclass(frozen=True)
class ObjectiveEstimate:
    value: float
    per_cell: np.ndarray
    std_error: float
    per_cell_stderr: np.ndarray = field(default=None, repr=False)
    # (n+1, N) per-sample cell weights; kept for paired differences
    weights: Optional[np.ndarray] = field(default=None, repr=False, compare=False)


def _cell_probabilities(w: Codebook, v: VertexTuple, chan: GaussianChannel, cfg: EstimatorConfig):
    m = len(w)
    if not cfg.stochastic:
        ests = [cone_measure(v.cell(i), w.words[i], chan, cfg) for i in range(m)]
        p = np.array([e.measure for e in ests])
        return ObjectiveEstimate(float(p.mean()), p, 0.0, np.zeros(m))
    Wt = np.empty((m, cfg.samples))
    for i in range(m):
        cone = v.cell(i)
        Z = framed_samples(cfg.stream(w.dim, substream=i), cone)
        Wt[i] = weights_from_samples(Z, cone, w.words[i], chan.sigma, cfg.method)
    p = Wt.mean(axis=1)
    se = Wt.std(axis=1, ddof=1) / math.sqrt(cfg.samples)
    total_se = float(np.sqrt(np.sum(se ** 2)) / m)
    return ObjectiveEstimate(float(p.mean()), p, total_se, se, Wt)


def evaluate_Q(w: Codebook, chan: GaussianChannel, cfg: EstimatorConfig) -> ObjectiveEstimate:
    """Average probability of correct decoding with nearest-neighbour cones."""
    return _cell_probabilities(w, optimal_vertices(w), chan, cfg)


def evaluate_Q_relaxed(w: Codebook, v: VertexTuple, chan: GaussianChannel, cfg: EstimatorConfig) -> ObjectiveEstimate:
    """Same average, but word ``i`` is decoded on the cone spanned by ``v`` without ``v_i``."""
    val = validate_pair(w, v)
    if not val.valid:
        raise InvalidPair("invalid pair: " + ", ".join(val.failures()), validity=val)
    return _cell_probabilities(w, v, chan, cfg)


def q_difference(a: ObjectiveEstimate, b: ObjectiveEstimate) -> Tuple[float, float]:
    """``a - b`` and its paired standard error.

    Both estimates must come from the same configuration so sample ``k`` of
    cell ``i`` used the same normal draw in each.
    """
    diff = a.value - b.value
    if a.weights is None or b.weights is None:
        return diff, float(math.hypot(a.std_error, b.std_error))
    if a.weights.shape != b.weights.shape:
        raise ValueError("estimates were not produced on matching streams")
    D = a.weights - b.weights
    se = D.std(axis=1, ddof=1) / math.sqrt(D.shape[1])
    return float(diff), float(np.sqrt(np.sum(se ** 2)) / D.shape[0])


def v_step(w: Codebook) -> VertexTuple:
    v = optimal_vertices(w)
    val = validate_pair(w, v)
    if not val.valid:
        raise InvalidPair("nearest-neighbour cones invalid: " + ", ".join(val.failures()), validity=val)
    return v


def _solve_cell(v, i, chan, cfg, start, max_iter, tol):
    cone = v.cell(i)
    if start is not None and not cone.contains(start)[0]:
        start = None
    Z = framed_samples(cfg.stream(v.dim, substream=i), cone) if cfg.stochastic else None
    try:
        return centroid_fixed_point(cone, chan, cfg, start=start, max_iter=max_iter, tol=tol, samples=Z).centroid
    except NonConvergence as exc:
        raise NonConvergence(f"cell {i}: {exc}", result=exc.result, cell=i) from exc


def w_step(
    v: VertexTuple,
    chan: GaussianChannel,
    cfg: EstimatorConfig,
    start: Optional[Codebook] = None,
    max_iter: int = 200,
    tol: Optional[float] = None,
) -> Codebook:
    """Gaussian centroid of every cone of ``v``; ``start`` warm-starts each cell.

    If noise pushes a centroid onto a cone boundary the step is redone once
    with four times the samples before giving up with :class:`InvalidPair`.
    """
    m = len(v)
    for attempt in range(2):
        c = cfg if attempt == 0 else cfg.with_(samples=cfg.samples * SAMPLE_RETRY_FACTOR)
        starts = [None] * m if start is None else list(start.words)
        args = [(v, i, chan, c, starts[i], max_iter, tol) for i in range(m)]
        if c.workers > 1:
            with ThreadPoolExecutor(max_workers=c.workers) as ex:
                words = list(ex.map(lambda a: _solve_cell(*a), args))
        else:
            words = [_solve_cell(*a) for a in args]
        w = Codebook.from_vectors(np.array(words))
        val = validate_pair(w, v)
        if val.valid:
            return w
    raise InvalidPair("centroid step left a cone: " + ", ".join(val.failures()), validity=val)


@dataclass
class OptimizerTrace:
    iterates: List[Tuple[Codebook, VertexTuple, ObjectiveEstimate]] = field(default_factory=list)
    regularity: List[float] = field(default_factory=list)
    steps: List[float] = field(default_factory=list)
    # (Q_k - Q_{k-1}, paired std error); first entry is (nan, nan)
    q_steps: List[Tuple[float, float]] = field(default_factory=list)
    terminated_by: str = "max_iter"
    error: Optional[str] = None

    @property
    def final(self) -> Codebook:
        return self.iterates[-1][0]

    @property
    def objective(self) -> np.ndarray:
        return np.array([it[2].value for it in self.iterates])

    def monotone(self, n_se: float = 2.0, floor: float = MONOTONE_FLOOR) -> bool:
        """Every recorded step lost at most ``n_se`` paired std errors of Q (plus a rounding floor)."""
        return all(not (d < -n_se * se - floor) for d, se in self.q_steps[1:])

    def rows(self):
        for k, (w, v, q) in enumerate(self.iterates):
            yield {
                "iter": k,
                "Q": q.value,
                "Q_stderr": q.std_error,
                "regularity": self.regularity[k],
                "max_step": self.steps[k],
            }

    def write_csv(self, path_or_file):
        cols = ["iter", "Q", "Q_stderr", "regularity", "max_step"]
        own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
        fh = open(path_or_file, "w", newline="") if own else path_or_file
        try:
            wr = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
            wr.writeheader()
            for row in self.rows():
                wr.writerow({k: (repr(float(x)) if k != "iter" else x) for k, x in row.items()})
        finally:
            if own:
                fh.close()


def optimize(
    start: Codebook,
    chan: GaussianChannel,
    cfg: EstimatorConfig,
    max_iter: int = 200,
    tol: float = 1e-5,
    centroid_tol: Optional[float] = None,
    callback: Optional[Callable[[int, OptimizerTrace], None]] = None,
    align: bool = True,
) -> OptimizerTrace:
    """Alternate ``v_step`` and ``w_step`` from ``start``.

    Stops when no codeword moves by ``tol`` or more (chordal distance), after
    ``max_iter`` rounds, or when a pair turns invalid; the trace keeps every
    iterate either way. Iterate 0 is ``start`` itself.

    With ``align`` each new codebook is rotated onto its predecessor
    (orthogonal Procrustes) before the step is measured. The objective and
    the regularity metric are rotation invariant, but sampling noise can make
    an equilibrium spin rigidly by a tiny constant angle per round, which
    would otherwise keep the step above ``tol`` forever.
    """
    if start.dim != chan.dim:
        raise ValueError("channel and codebook dimensions differ")
    trace = OptimizerTrace()
    w = start
    v = v_step(w)
    q = evaluate_Q(w, chan, cfg)
    trace.iterates.append((w, v, q))
    trace.regularity.append(regularity(w))
    trace.steps.append(float("nan"))
    trace.q_steps.append((float("nan"), float("nan")))
    ctol = tol / 10.0 if centroid_tol is None else centroid_tol
    for k in range(1, max_iter + 1):
        try:
            w_new = w_step(v, chan, cfg, start=w, tol=ctol)
            if align:
                R, _ = orthogonal_procrustes(w_new.words, w.words)
                w_new = Codebook.from_vectors(w_new.words @ R)
            v_new = v_step(w_new)
        except InvalidPair as exc:
            trace.terminated_by = "invalid_pair"
            trace.error = str(exc)
            trace.iterates[-1] = (w, v, _strip(q))
            return trace
        q_new = evaluate_Q(w_new, chan, cfg)
        step = max_chordal_step(w_new, w)
        trace.iterates.append((w_new, v_new, q_new))
        trace.regularity.append(regularity(w_new))
        trace.steps.append(step)
        trace.q_steps.append(q_difference(q_new, q))
        # drop the per-sample weights of the superseded iterate
        trace.iterates[-2] = (w, v, _strip(q))
        w, v, q = w_new, v_new, q_new
        if callback is not None:
            callback(k, trace)
        if step < tol:
            trace.terminated_by = "converged"
            break
    trace.iterates[-1] = (w, v, _strip(q))
    return trace


def _strip(q: ObjectiveEstimate) -> ObjectiveEstimate:
    return ObjectiveEstimate(q.value, q.per_cell, q.std_error, q.per_cell_stderr, None)
