"""Vector operations: temporal pooling, normalization, cosine similarity and
prompt-ensemble aggregation.

All functions are pure and operate on float64 internally unless the caller
passes float32 arrays explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from mobmod.labels import validate_label

NORM_EPS = 1e-8

POOLING_MODES = ("mean", "max")


class NormalizedVector(NamedTuple):
    """Unit-norm vector plus a flag for the ||v|| < eps degenerate case."""

    values: np.ndarray
    degenerate: bool


@dataclass(frozen=True)
class ClassTextEmbedding:
    """Per-class text representation ensembled from one or more templates."""

    class_label: str
    values: np.ndarray  # unit norm, 512-d
    n_templates: int


def temporal_pool(frame_vectors: Sequence[np.ndarray], mode: str = "mean") -> np.ndarray:
    """Aggregate per-frame vectors into a single video vector.

    Mean pooling is the default; it commutes with any linear projection
    applied afterwards. Frame order does not affect the result.
    """
    if mode not in POOLING_MODES:
        raise ValueError(f"unknown pooling mode {mode!r}; allowed: {', '.join(POOLING_MODES)}")
    vectors = [np.asarray(v) for v in frame_vectors]
    if not vectors:
        raise ValueError("temporal_pool requires at least one frame vector")
    dims = {v.shape for v in vectors}
    if len(dims) != 1 or vectors[0].ndim != 1:
        raise ValueError(f"frame vectors must share one 1-d shape, got {sorted(map(str, dims))}")
    stacked = np.stack(vectors)
    if mode == "mean":
        return stacked.mean(axis=0)
    return stacked.max(axis=0)


def l2_normalize(v: np.ndarray) -> NormalizedVector:
    """Return v / max(||v||, eps) and whether the norm guard fired."""
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    return NormalizedVector(v / max(norm, NORM_EPS), norm < NORM_EPS)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.dot(l2_normalize(a).values, l2_normalize(b).values))


def ensemble_class_embedding(
    template_embeddings: Iterable[np.ndarray], class_label: str
) -> ClassTextEmbedding:
    """Normalize each template embedding, average, renormalize.

    The standard prompt-ensembling rule; summation order is the (fixed)
    iteration order of the input.
    """
    validate_label(class_label)
    normalized = [l2_normalize(e).values for e in template_embeddings]
    if not normalized:
        raise ValueError("ensemble_class_embedding requires at least one embedding")
    mean = np.stack(normalized).mean(axis=0)
    return ClassTextEmbedding(class_label, l2_normalize(mean).values, len(normalized))
