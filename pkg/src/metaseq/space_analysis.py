"""Embedding-space probes: metaphor/literal cosine separation, orthogonal
alignment between two embedding spaces, 2-D PCA projection, and Pearson
correlation.

Matrices are token-major throughout: one row per token occurrence. The
orthogonal alignment therefore factors E.T @ B (a d x d product), whose
SVD gives the closed-form rotation minimizing the Frobenius distance
between the rotated source rows and the target rows.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    AlignmentError,
    DegeneracyError,
    DimensionError,
    NumericError,
    ParameterError,
)
from .linguistic_features import cosine
from .tensor_core import RngStream
from .train_eval import METAPHOR, SentenceRecord

ORTHOGONALITY_TOL = 1e-8


# ---------------------------------------------------------------------------
# Metaphor/literal word pairs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Occurrence:
    sentence_index: int
    token_index: int


@dataclass(frozen=True)
class WordPair:
    word: str
    metaphor: Occurrence
    literal: Occurrence


@dataclass
class WordPairSet:
    pairs: list[WordPair]
    seed: int

    def __len__(self) -> int:
        return len(self.pairs)


def build_pairs(sentences: Sequence[SentenceRecord], seed: int = 0) -> WordPairSet:
    """One (metaphoric, literal) occurrence pair per dual-labelled surface form.

    Only target tokens participate. When a form occurs several times under
    one label, a seeded draw picks the occurrence.
    """
    met: dict[str, list[Occurrence]] = {}
    lit: dict[str, list[Occurrence]] = {}
    for s_idx, sent in enumerate(sentences):
        for t_idx, tok in enumerate(sent.tokens):
            if not tok.target:
                continue
            bucket = met if tok.label == METAPHOR else lit
            bucket.setdefault(tok.text, []).append(Occurrence(s_idx, t_idx))
    rng = RngStream(seed, stream_id=7919)
    pairs = []
    for word in sorted(set(met) & set(lit)):
        m_occ = met[word][rng.choice(len(met[word]))]
        l_occ = lit[word][rng.choice(len(lit[word]))]
        pairs.append(WordPair(word, m_occ, l_occ))
    return WordPairSet(pairs, seed)


def _resolve(layer, occ: Occurrence) -> np.ndarray:
    mat = layer.matrix(occ.sentence_index)   # raises AlignmentError if absent
    if occ.token_index >= mat.shape[0]:
        raise AlignmentError(
            f"token {occ.token_index} out of range for sentence "
            f"{occ.sentence_index} ({mat.shape[0]} tokens)")
    return mat[occ.token_index]


def avg_pair_cosine(pair_set: WordPairSet, layer) -> float:
    """Mean cosine between the two occurrences of every pair (lower = the
    layer separates the senses better)."""
    if not pair_set.pairs:
        raise DegeneracyError("word-pair set is empty")
    total = 0.0
    for pair in pair_set.pairs:
        total += cosine(_resolve(layer, pair.metaphor), _resolve(layer, pair.literal))
    return total / len(pair_set.pairs)


# ---------------------------------------------------------------------------
# Orthogonal alignment
# ---------------------------------------------------------------------------

def svd(matrix) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Singular value decomposition M = U diag(S) Vt with the usual
    orthonormality and ordering guarantees."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError(f"svd expects a matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericError("svd input contains non-finite entries")
    try:
        u, s, vt = np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"svd did not converge: {exc}") from None
    return u, s, vt


@dataclass(frozen=True)
class AlignmentResult:
    rotation: np.ndarray          # (d, d) orthogonal map applied to source rows
    rotated: np.ndarray           # source rows after rotation, (n, d)
    avg_l2: float
    orthogonality_residual: float


def avg_l2(e_rows, b_rows) -> float:
    """Mean Euclidean distance between corresponding rows."""
    e = np.asarray(e_rows, dtype=np.float64)
    b = np.asarray(b_rows, dtype=np.float64)
    if e.shape != b.shape or e.ndim != 2:
        raise DimensionError(f"avg_l2: shapes differ, {e.shape} vs {b.shape}")
    return float(np.mean(np.linalg.norm(e - b, axis=1)))


def procrustes_align(b_rows, e_rows) -> AlignmentResult:
    """Best orthogonal map of token-major B onto token-major E.

    With rows as tokens, W = U Vt for U S Vt = svd(E.T @ B); the rotated
    source is B @ W.T, and the summary is the mean per-row distance to E.
    """
    b = np.asarray(b_rows, dtype=np.float64)
    e = np.asarray(e_rows, dtype=np.float64)
    if b.shape != e.shape or b.ndim != 2:
        raise DimensionError(f"procrustes_align: shapes differ, {b.shape} vs {e.shape}")
    u, _, vt = svd(e.T @ b)
    w = u @ vt
    residual = float(np.linalg.norm(w @ w.T - np.eye(w.shape[0])))
    if residual >= ORTHOGONALITY_TOL:
        raise NumericError(f"rotation lost orthogonality (residual {residual:.3e})")
    rotated = b @ w.T
    return AlignmentResult(w, rotated, avg_l2(e, rotated), residual)


def random_orthogonal(dim: int, rng: RngStream) -> np.ndarray:
    """Haar-distributed orthogonal matrix (rotations and reflections)."""
    q, r = np.linalg.qr(rng.normal((dim, dim)))
    return q * np.sign(np.diag(r))


# ---------------------------------------------------------------------------
# PCA projection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PcaProjection:
    mean: np.ndarray              # (d,)
    axes: np.ndarray              # (2, d), orthonormal rows
    points: np.ndarray            # (n, 2)
    explained_variance: tuple[float, float]


def pca_2d(data) -> PcaProjection:
    """Project rows onto the top-2 principal axes of the centered data.

    Axis signs are fixed so each axis's largest-magnitude component is
    positive, making outputs reproducible.
    """
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"pca_2d expects a matrix, got shape {x.shape}")
    n, d = x.shape
    if n < 3:
        raise ParameterError(f"pca_2d needs at least 3 rows, got {n}")
    if d < 2:
        raise ParameterError(f"pca_2d needs at least 2 columns, got {d}")
    mean = x.mean(axis=0)
    centered = x - mean
    _, s, vt = svd(centered)
    total = float((s * s).sum())
    if total == 0.0:
        raise DegeneracyError("all rows identical: no variance to project")
    axes = vt[:2].copy()
    for i in range(2):
        peak = np.argmax(np.abs(axes[i]))
        if axes[i, peak] < 0:
            axes[i] = -axes[i]
    points = centered @ axes.T
    ratios = (float(s[0] ** 2 / total), float(s[1] ** 2 / total))
    return PcaProjection(mean, axes, points, ratios)


# ---------------------------------------------------------------------------
# Correlation
# ---------------------------------------------------------------------------

def pearson_r(x, y) -> float:
    """Sample Pearson correlation coefficient."""
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.ndim != 1 or xa.shape != ya.shape:
        raise DimensionError(f"pearson_r: shapes differ, {xa.shape} vs {ya.shape}")
    if xa.size < 2:
        raise ParameterError("pearson_r needs at least 2 points")
    dx = xa - xa.mean()
    dy = ya - ya.mean()
    sx = float(np.sqrt((dx * dx).sum()))
    sy = float(np.sqrt((dy * dy).sum()))
    if sx == 0.0 or sy == 0.0:
        raise DegeneracyError("zero variance in one of the series")
    return float((dx * dy).sum() / (sx * sy))
