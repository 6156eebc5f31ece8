"""JSON documents for codebooks and vertex tuples.

Schema::

    {"dim": n, "words": [[...], ...], "vertices": [[...], ...]}

``vertices`` is optional. Floats are written with ``repr`` precision so a
document re-ingests bit for bit.
"""

from __future__ import annotations

import json
from typing import Optional, Tuple

import numpy as np

from .geometry import Codebook, VertexTuple


class SchemaError(ValueError):
    """Document does not follow the codebook schema."""


def codebook_to_dict(w: Codebook, v: Optional[VertexTuple] = None) -> dict:
    doc = {"dim": w.dim, "words": w.words.tolist()}
    if v is not None:
        doc["vertices"] = v.vertices.tolist()
    return doc


def _matrix(doc, key, n):
    try:
        M = np.array(doc[key], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{key!r} must be a list of numeric rows") from exc
    if M.ndim != 2 or M.shape != (n + 1, n):
        raise SchemaError(f"{key!r} must have shape ({n + 1}, {n}), got {M.shape}")
    if not np.all(np.isfinite(M)):
        raise SchemaError(f"{key!r} has non-finite entries")
    return M


def codebook_from_dict(doc) -> Tuple[Codebook, Optional[VertexTuple]]:
    """Parse a codebook document; geometric checks raise the geometry errors."""
    if not isinstance(doc, dict) or "words" not in doc:
        raise SchemaError("expected an object with a 'words' entry")
    words = doc["words"]
    n = doc.get("dim", len(words[0]) if isinstance(words, list) and words and isinstance(words[0], list) else None)
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise SchemaError("'dim' must be a positive integer")
    w = Codebook(_matrix(doc, "words", n))
    v = VertexTuple(_matrix(doc, "vertices", n)) if doc.get("vertices") is not None else None
    return w, v


def dumps_codebook(w: Codebook, v: Optional[VertexTuple] = None) -> str:
    return json.dumps(codebook_to_dict(w, v), indent=2)


def loads_codebook(text: str):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"not valid JSON: {exc}") from exc
    return codebook_from_dict(doc)


def save_codebook(path, w: Codebook, v: Optional[VertexTuple] = None):
    with open(path, "w") as fh:
        fh.write(dumps_codebook(w, v) + "\n")


def load_codebook(path):
    with open(path) as fh:
        return loads_codebook(fh.read())
