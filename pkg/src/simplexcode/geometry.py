"""Exact linear-algebraic constructions for spherical codebooks.

Codebooks are ``n+1`` unit vectors in R^n. Their optimal (nearest-neighbour)
decision regions are simplicial cones whose generators, the *vertices*, come
from column-normalising the inverse of the codeword-difference matrices.
Nothing in this module samples; stochastic error lives in
:mod:`simplexcode.gaussian`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import AffinelyDependent, DegenerateFacet, LinearDependence

NORM_TOL = 1e-12
# Smallest singular value must exceed RANK_RTOL times the largest.
RANK_RTOL = 1e-8


def _frozen(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def _check_unit_rows(a, what):
    if a.ndim != 2 or a.shape[0] != a.shape[1] + 1:
        raise ValueError(f"{what} must have shape (n+1, n), got {a.shape}")
    if a.shape[1] < 1:
        raise ValueError(f"{what} needs dimension n >= 1")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{what} has non-finite entries")
    norms = np.linalg.norm(a, axis=1)
    if np.max(np.abs(norms - 1.0)) > NORM_TOL:
        raise ValueError(f"{what} rows must have unit norm (max deviation {np.max(np.abs(norms - 1.0)):.3g})")


def _well_conditioned(M, rtol=RANK_RTOL):
    if M.shape[0] == 0:
        return True
    s = np.linalg.svd(M, compute_uv=False)
    return s[-1] > rtol * s[0] and s.size == M.shape[1]


def difference_matrix(points, i):
    """Rows ``points[i] - points[j]`` for ``j != i`` in increasing ``j``."""
    others = np.delete(points, i, axis=0)
    return points[i] - others


def affinely_independent(points, rtol=RANK_RTOL):
    """Rank test on every difference matrix ``W_i``."""
    return all(_well_conditioned(difference_matrix(points, i), rtol) for i in range(len(points)))


@dataclass(frozen=True)
class Codebook:
    """Ordered tuple of ``n+1`` distinct unit codewords in R^n (rows of ``words``)."""

    words: np.ndarray

    def __post_init__(self):
        w = _frozen(self.words)
        _check_unit_rows(w, "codebook")
        for i in range(len(w)):
            for j in range(i):
                if np.array_equal(w[i], w[j]):
                    raise ValueError(f"codewords {j} and {i} coincide")
        object.__setattr__(self, "words", w)

    @classmethod
    def from_vectors(cls, vectors):
        """Build a codebook after normalising each row."""
        v = np.asarray(vectors, dtype=np.float64)
        return cls(v / np.linalg.norm(v, axis=1, keepdims=True))

    @property
    def dim(self) -> int:
        return self.words.shape[1]

    def __len__(self):
        return len(self.words)

    def __getitem__(self, i):
        return self.words[i]

    def affinely_independent(self, rtol=RANK_RTOL) -> bool:
        return affinely_independent(self.words, rtol)

    def __eq__(self, other):
        return isinstance(other, Codebook) and np.array_equal(self.words, other.words)

    def __hash__(self):
        return hash(self.words.tobytes())


@dataclass(frozen=True)
class VertexTuple:
    """Ordered tuple of ``n+1`` unit vertices; cell ``i`` is the cone of all but ``vertices[i]``."""

    vertices: np.ndarray

    def __post_init__(self):
        v = _frozen(self.vertices)
        _check_unit_rows(v, "vertex tuple")
        object.__setattr__(self, "vertices", v)

    @classmethod
    def from_vectors(cls, vectors):
        v = np.asarray(vectors, dtype=np.float64)
        return cls(v / np.linalg.norm(v, axis=1, keepdims=True))

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    def __len__(self):
        return len(self.vertices)

    def __getitem__(self, i):
        return self.vertices[i]

    def without(self, *idx):
        """Vertices with the given indices removed (``V∖i`` or ``V∖i,∖j``)."""
        return np.delete(self.vertices, list(idx), axis=0)

    def cell(self, i) -> "SimplicialCone":
        return SimplicialCone(self.without(i))

    def cells(self):
        return [self.cell(i) for i in range(len(self))]

    def affinely_independent(self, rtol=RANK_RTOL) -> bool:
        return affinely_independent(self.vertices, rtol)

    def __eq__(self, other):
        return isinstance(other, VertexTuple) and np.array_equal(self.vertices, other.vertices)

    def __hash__(self):
        return hash(self.vertices.tobytes())


def null_vector(rows):
    """Unit vector orthogonal to the ``k = n-1`` rows of ``rows`` (shape (k, n)).

    Taken as the right singular vector of least singular value. Raises
    :class:`DegenerateFacet` when the rows are rank deficient.
    """
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    n = rows.shape[1]
    if rows.shape[0] == 0:
        if n != 1:
            raise DegenerateFacet("empty facet only spans a hyperplane in dimension 1")
        return np.ones(1)
    if rows.shape[0] != n - 1:
        raise ValueError(f"need n-1 = {n - 1} spanning vectors, got {rows.shape[0]}")
    _, s, vt = np.linalg.svd(rows)
    if s[-1] <= RANK_RTOL * s[0]:
        raise DegenerateFacet("facet-spanning vectors are linearly dependent")
    return vt[-1]


def facet_normals(generators):
    """Inward unit facet normals of the cone spanned by the rows of ``generators``.

    Row ``j`` is orthogonal to every generator except ``generators[j]`` and
    oriented so that ``<e_j, v_j> > 0``.
    """
    G = np.asarray(generators, dtype=np.float64)
    n = G.shape[1]
    E = np.empty_like(G)
    for j in range(n):
        e = null_vector(np.delete(G, j, axis=0))
        s = e @ G[j]
        if abs(s) <= RANK_RTOL:
            raise LinearDependence(f"generator {j} lies in the span of the others")
        E[j] = e if s > 0 else -e
    return E


@dataclass(frozen=True)
class SimplicialCone:
    """Open cone ``{sum_j a_j v_j : a > 0}`` over ``n`` independent unit generators."""

    generators: np.ndarray
    normals: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        G = _frozen(self.generators)
        if G.ndim != 2 or G.shape[0] != G.shape[1]:
            raise ValueError(f"a simplicial cone needs n generators in R^n, got shape {G.shape}")
        if not _well_conditioned(G):
            raise LinearDependence("cone generators are linearly dependent")
        object.__setattr__(self, "generators", G)
        object.__setattr__(self, "normals", _frozen(facet_normals(G)))

    @property
    def dim(self) -> int:
        return self.generators.shape[1]

    @cached_property
    def center(self):
        """Normalised generator sum; strictly interior by construction."""
        s = self.generators.sum(axis=0)
        return s / np.linalg.norm(s)

    def barycentric(self, X):
        """Coordinates ``a`` with ``x = sum_j a_j v_j`` for each row of ``X``."""
        X = np.atleast_2d(X)
        return np.linalg.solve(self.generators.T, X.T).T

    def contains(self, X):
        """Strict membership by facet normals (all ``<e_j, x> > 0``)."""
        X = np.atleast_2d(X)
        return np.all(X @ self.normals.T > 0.0, axis=1)

    def contains_barycentric(self, X):
        """Strict membership by barycentric coordinates (all ``a_j > 0``)."""
        return np.all(self.barycentric(X) > 0.0, axis=1)

    def half_space_certificate(self):
        """Unit vector with positive inner product against every generator, or None.

        Uses the normalised sum of facet normals, which works for any
        simplicial cone since ``<sum_k e_k, v_j> = <e_j, v_j>``.
        """
        s = self.normals.sum(axis=0)
        nrm = np.linalg.norm(s)
        if nrm == 0.0:
            return None
        s = s / nrm
        if np.all(self.generators @ s > 0.0):
            return s
        return None

    def rotated(self, R):
        return SimplicialCone(self.generators @ np.asarray(R).T)


@dataclass(frozen=True)
class PairValidity:
    codebook: Codebook
    vertices: VertexTuple
    containment: np.ndarray
    cells_independent: np.ndarray
    words_independent: bool
    vertices_independent: bool

    @property
    def valid(self) -> bool:
        return bool(
            self.words_independent
            and self.vertices_independent
            and np.all(self.containment)
            and np.all(self.cells_independent)
        )

    def failures(self):
        """Human-readable list of the failed flags."""
        out = []
        if not self.words_independent:
            out.append("codebook affine independence")
        if not self.vertices_independent:
            out.append("vertex affine independence")
        for i, ok in enumerate(self.cells_independent):
            if not ok:
                out.append(f"cell {i} independence")
        for i, ok in enumerate(self.containment):
            if not ok:
                out.append(f"containment of word {i}")
        return out


def regular_simplex(n: int) -> Codebook:
    """``n+1`` unit vectors with pairwise inner product ``-1/n``, centred at the origin.

    Built from the Helmert basis of the hyperplane orthogonal to ``(1,...,1)``
    in R^{n+1}, so entries are exact up to a handful of roundings.
    """
    n = int(n)
    if n < 1:
        raise ValueError("regular simplex needs n >= 1")
    H = np.zeros((n, n + 1))
    for k in range(1, n + 1):
        H[k - 1, :k] = 1.0
        H[k - 1, k] = -k
        H[k - 1] /= np.sqrt(k * (k + 1.0))
    W = H.T * np.sqrt((n + 1.0) / n)
    W /= np.linalg.norm(W, axis=1, keepdims=True)
    return Codebook(W)


def cell_columns(w: Codebook):
    """Normalised columns of every ``W_i^{-1}``.

    Returns a list whose entry ``i`` is an ``(n+1, n)`` array: row ``j`` is the
    normalised column of ``W_i^{-1}`` belonging to codeword ``j`` (row ``i`` is NaN).
    """
    words = w.words
    m, n = words.shape
    out = []
    for i in range(m):
        Wi = difference_matrix(words, i)
        if not _well_conditioned(Wi):
            raise AffinelyDependent(f"difference matrix W_{i} is rank deficient")
        inv = np.linalg.solve(Wi, np.eye(n))
        cols = inv / np.linalg.norm(inv, axis=0, keepdims=True)
        full = np.full((m, n), np.nan)
        full[np.arange(m) != i] = cols.T
        out.append(full)
    return out


def shared_column_disagreement(w: Codebook) -> float:
    """Largest entrywise gap between the normalised columns shared by two cells."""
    cols = cell_columns(w)
    worst = 0.0
    m = len(cols)
    for i in range(m):
        for k in range(i + 1, m):
            shared = [j for j in range(m) if j not in (i, k)]
            if shared:
                worst = max(worst, float(np.max(np.abs(cols[i][shared] - cols[k][shared]))))
    return worst


def optimal_vertices(w: Codebook) -> VertexTuple:
    """Vertices ``V*(W)`` of the nearest-neighbour decision cones.

    Vertex ``j`` is opposite codeword ``j``: it is the normalised column of
    ``W_i^{-1}`` associated with ``j`` (for any ``i != j``), so cell ``i`` is the
    cone generated by all vertices except ``v_i``.
    """
    cols = cell_columns(w)
    m = len(cols)
    V = np.empty((m, w.dim))
    for j in range(m):
        V[j] = cols[1 if j == 0 else 0][j]
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    return VertexTuple(V)


def reflect_across_facet(x, v_common):
    """Reflect ``x`` across the hyperplane through 0 spanned by the rows of ``v_common``."""
    u = null_vector(v_common)
    x = np.asarray(x, dtype=np.float64)
    return x - 2.0 * np.multiply.outer(x @ u, u) if x.ndim > 1 else x - 2.0 * (x @ u) * u


def bisector_residual(w: Codebook, v: VertexTuple) -> float:
    """Largest ``|reflect(w_i) - w_j|`` across the facet shared by cells ``i`` and ``j``."""
    worst = 0.0
    for i in range(len(w)):
        for j in range(i + 1, len(w)):
            common = v.without(i, j)
            if len(common) == 0:
                r = -w.words[i]
            else:
                r = reflect_across_facet(w.words[i], common)
            worst = max(worst, float(np.linalg.norm(r - w.words[j])))
    return worst


def validate_pair(w: Codebook, v: VertexTuple) -> PairValidity:
    if w.dim != v.dim:
        raise ValueError("codebook and vertex tuple dimensions differ")
    m = len(w)
    containment = np.zeros(m, dtype=bool)
    independent = np.zeros(m, dtype=bool)
    for i in range(m):
        G = v.without(i)
        if not _well_conditioned(G):
            continue
        independent[i] = True
        a = np.linalg.solve(G.T, w.words[i])
        containment[i] = bool(np.all(a > 0.0))
    return PairValidity(
        codebook=w,
        vertices=v,
        containment=containment,
        cells_independent=independent,
        words_independent=w.affinely_independent(),
        vertices_independent=v.affinely_independent(),
    )


def regularity(w) -> float:
    """``max_{i != j} |<w_i, w_j> + 1/n|``; zero exactly on regular simplices."""
    W = w.words if isinstance(w, Codebook) else np.asarray(w)
    n = W.shape[1]
    G = W @ W.T + 1.0 / n
    np.fill_diagonal(G, 0.0)
    return float(np.max(np.abs(G)))


def max_chordal_step(a, b) -> float:
    A = a.words if isinstance(a, Codebook) else np.asarray(a)
    B = b.words if isinstance(b, Codebook) else np.asarray(b)
    return float(np.max(np.linalg.norm(A - B, axis=1)))


# -- random instances ---------------------------------------------------------


def random_unit_vectors(rng, count, n):
    X = rng.standard_normal((count, n))
    return X / np.linalg.norm(X, axis=1, keepdims=True)


def random_rotation(rng, n):
    """Haar-distributed orthogonal matrix (QR with sign correction)."""
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    return Q * np.sign(np.diag(R))


def random_codebook(rng, n, rtol=RANK_RTOL, max_tries=10_000) -> Codebook:
    """Uniform directions on the sphere, rejected until affinely independent and pair-valid."""
    for _ in range(max_tries):
        try:
            w = Codebook(random_unit_vectors(rng, n + 1, n))
        except ValueError:
            continue
        if not w.affinely_independent(rtol):
            continue
        v = optimal_vertices(w)
        if validate_pair(w, v).valid and v.affinely_independent(rtol):
            return w
    raise RuntimeError("could not draw a valid random codebook")


def random_cone(rng, n, rtol=RANK_RTOL) -> SimplicialCone:
    """A random decision cell of a random valid codebook."""
    w = random_codebook(rng, n, rtol)
    v = optimal_vertices(w)
    return v.cell(int(rng.integers(n + 1)))


def random_interior_point(rng, cone: SimplicialCone):
    """Unit vector from flat-Dirichlet barycentric weights."""
    a = rng.dirichlet(np.ones(cone.dim))
    x = a @ cone.generators
    return x / np.linalg.norm(x)


def perturb_codebook(rng, w: Codebook, max_angle_deg: float) -> Codebook:
    """Rotate each word by an angle uniform in ``[0, max_angle_deg]`` toward a random tangent direction."""
    W = w.words.copy()
    for i, x in enumerate(W):
        t = rng.standard_normal(w.dim)
        t -= (t @ x) * x
        nt = np.linalg.norm(t)
        if nt == 0.0:
            continue
        theta = np.deg2rad(rng.uniform(0.0, max_angle_deg))
        W[i] = np.cos(theta) * x + np.sin(theta) * t / nt
    return Codebook.from_vectors(W)
