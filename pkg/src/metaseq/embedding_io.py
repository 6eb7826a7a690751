"""Embedding loaders and the multi-channel input block.

Static vectors arrive as whitespace text (one token per line); contextual
per-layer vectors arrive as little-endian binary files. Channel matrices
for one sentence are stacked into a (channel, position, dimension) block
whose channel order is recorded explicitly so ablations stay unambiguous.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Mapping, Sequence

import numpy as np

from . import tensor_core as tc
from .errors import (
    AlignmentError,
    DimensionError,
    FormatError,
    ParseError,
    RangeError,
    TruncatedError,
)

CONTEXTUAL_MAGIC = b"CEMB"
CONTEXTUAL_VERSION = 1


# ---------------------------------------------------------------------------
# Static word vectors
# ---------------------------------------------------------------------------

class StaticEmbeddingTable:
    """Token -> fixed-width vector map; absent tokens read as zeros."""

    def __init__(self, dimension: int, entries: dict[str, np.ndarray]):
        self.dimension = int(dimension)
        self.entries = entries
        self._zero = np.zeros(self.dimension)

    def __contains__(self, token: str) -> bool:
        return token in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def vector(self, token: str) -> np.ndarray:
        return self.entries.get(token, self._zero)


def load_static_text(path) -> StaticEmbeddingTable:
    """Parse `token v1 ... vd` lines; the first line fixes the dimension."""
    entries: dict[str, np.ndarray] = {}
    dimension = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split(" ")
            token, values = parts[0], parts[1:]
            if dimension is None:
                if not values:
                    raise ParseError(f"line {lineno}: no vector values")
                dimension = len(values)
            if len(values) != dimension:
                raise ParseError(
                    f"line {lineno}: expected {dimension} values, got {len(values)}")
            try:
                vec = np.array([float(v) for v in values])
            except ValueError as exc:
                raise ParseError(f"line {lineno}: non-numeric field ({exc})") from None
            if token not in entries:  # duplicates keep the first occurrence
                entries[token] = vec
    if dimension is None:
        raise ParseError("empty embedding file")
    return StaticEmbeddingTable(dimension, entries)


# ---------------------------------------------------------------------------
# Contextual layer files
# ---------------------------------------------------------------------------

@dataclass
class ContextualLayerFile:
    """Per-sentence token vectors extracted from one layer of a frozen encoder."""

    layer_index: int
    dimension: int
    sentences: dict[int, np.ndarray]  # sentence index -> float32 (tokens, dim)

    def __len__(self) -> int:
        return len(self.sentences)

    def matrix(self, sentence_index: int) -> np.ndarray:
        """Float64 view of one sentence; raises if the sentence is absent."""
        try:
            return self.sentences[sentence_index].astype(np.float64)
        except KeyError:
            raise AlignmentError(
                f"sentence {sentence_index} not present in layer {self.layer_index} file"
            ) from None

    def all_rows(self) -> np.ndarray:
        """Every token vector, sentences in index order, as one (N, dim) array."""
        if not self.sentences:
            return np.zeros((0, self.dimension))
        mats = [self.sentences[i] for i in sorted(self.sentences)]
        return np.concatenate(mats, axis=0).astype(np.float64)


def write_contextual(path, layer_index: int, dimension: int,
                     sentences: Mapping[int, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(CONTEXTUAL_MAGIC)
        fh.write(struct.pack("<IIII", CONTEXTUAL_VERSION, layer_index,
                             dimension, len(sentences)))
        for idx in sorted(sentences):
            mat = np.ascontiguousarray(sentences[idx], dtype="<f4")
            if mat.ndim != 2 or mat.shape[1] != dimension:
                raise DimensionError(
                    f"sentence {idx}: expected (tokens, {dimension}), got {mat.shape}")
            fh.write(struct.pack("<II", idx, mat.shape[0]))
            fh.write(mat.tobytes())


def _read_exact(fh: BinaryIO, count: int, what: str) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise TruncatedError(f"file ended while reading {what}")
    return data


def load_contextual(path) -> ContextualLayerFile:
    """Read a contextual layer file, validating header and payload sizes."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != CONTEXTUAL_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {CONTEXTUAL_MAGIC!r}")
        version, layer_index, dimension, count = struct.unpack(
            "<IIII", _read_exact(fh, 16, "header"))
        if version != CONTEXTUAL_VERSION:
            raise FormatError(f"unsupported version {version}")
        if dimension < 1:
            raise FormatError(f"non-positive dimension {dimension}")
        sentences: dict[int, np.ndarray] = {}
        for _ in range(count):
            idx, tokens = struct.unpack("<II", _read_exact(fh, 8, "sentence header"))
            if idx in sentences:
                raise FormatError(f"duplicate sentence index {idx}")
            payload = _read_exact(fh, 4 * tokens * dimension,
                                  f"sentence {idx} payload")
            mat = np.frombuffer(payload, dtype="<f4").reshape(tokens, dimension)
            sentences[idx] = mat.copy()
        trailing = fh.read(1)
        if trailing:
            raise FormatError("trailing bytes after declared sentences")
    return ContextualLayerFile(layer_index, dimension, sentences)


# ---------------------------------------------------------------------------
# Channel assembly
# ---------------------------------------------------------------------------

@dataclass
class ChannelStack:
    """The (channel, position, dimension) input block with its channel order."""

    tensor: tc.Tensor
    order: tuple[str, ...]

    @property
    def channels(self) -> int:
        return self.tensor.shape[0]

    @property
    def length(self) -> int:
        return self.tensor.shape[1]

    @property
    def dimension(self) -> int:
        return self.tensor.shape[2]

    def unstack(self) -> list[np.ndarray]:
        return [self.tensor.data[i].copy() for i in range(self.channels)]


def stack_channels(matrices: Sequence, order: Sequence[str]) -> ChannelStack:
    """Stack per-channel (length, dim) matrices; all shapes must agree."""
    if not matrices:
        raise DimensionError("stack_channels needs at least one channel")
    if len(order) != len(matrices):
        raise DimensionError(
            f"{len(order)} channel names for {len(matrices)} matrices")
    tensors = [m if isinstance(m, tc.Tensor) else tc.Tensor(m) for m in matrices]
    shape = tensors[0].shape
    for name, t in zip(order, tensors):
        if t.data.ndim != 2 or t.shape != shape:
            raise DimensionError(
                f"channel {name}: shape {t.shape} does not match {shape}")
    return ChannelStack(tc.stack_mats(tensors), tuple(order))


def project_static(vector, w: tc.Tensor, b: tc.Tensor) -> tc.Tensor:
    """Affine map of one static vector into the unified dimension.

    ``w`` is (out_dim, in_dim) and ``b`` is (out_dim,); both are trainable,
    so the result participates in backward.
    """
    v = tc.as_tensor(vector)
    if v.data.ndim != 1:
        raise DimensionError(f"expected a vector, got shape {v.shape}")
    if w.data.ndim != 2 or w.shape[1] != v.shape[0] or b.shape != (w.shape[0],):
        raise DimensionError(
            f"projection shapes disagree: W {w.shape}, b {b.shape}, input {v.shape}")
    return tc.add(tc.matvec(w, v), b)


def build_gpa(static_vector: np.ndarray, pos_one_hot: np.ndarray,
              abstractness: float) -> np.ndarray:
    """Concatenate static vector, PoS one-hot and abstractness score, in that order."""
    if not 0.0 <= abstractness <= 1.0:
        raise RangeError(f"abstractness {abstractness} outside [0, 1]")
    return np.concatenate([
        np.asarray(static_vector, dtype=np.float64).ravel(),
        np.asarray(pos_one_hot, dtype=np.float64).ravel(),
        [float(abstractness)],
    ])


class ChannelProvider:
    """Builds raw per-channel matrices for one sentence.

    The static channel "G" yields rows of static vectors, optionally
    extended with PoS one-hots and abstractness scores; the projection to
    the unified dimension happens inside the model, where its weights are
    trainable. Contextual channels come straight from layer files, keyed
    by the sentence's position in the dataset.
    """

    def __init__(self, order: Sequence[str],
                 static_table: StaticEmbeddingTable | None = None,
                 layer_files: Mapping[str, ContextualLayerFile] | None = None,
                 pos_vocab=None, abstractness_scorer=None):
        self.order = tuple(order)
        self.static_table = static_table
        self.layer_files = dict(layer_files or {})
        self.pos_vocab = pos_vocab
        self.abstractness_scorer = abstractness_scorer
        for name in self.order:
            if name == "G":
                if static_table is None:
                    raise DimensionError("channel G requested but no static table given")
            elif name not in self.layer_files:
                raise DimensionError(f"channel {name} requested but no layer file given")

    def _static_row(self, token) -> np.ndarray:
        vec = np.asarray(self.static_table.vector(token.text), dtype=np.float64)
        if self.pos_vocab is not None and self.abstractness_scorer is not None:
            return build_gpa(vec, self.pos_vocab.one_hot(token.pos),
                             self.abstractness_scorer.score(token.text))
        if self.pos_vocab is not None:
            return np.concatenate([vec, self.pos_vocab.one_hot(token.pos)])
        if self.abstractness_scorer is not None:
            return np.concatenate([vec, [self.abstractness_scorer.score(token.text)]])
        return vec

    def channels(self, sentence, index: int) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        n = len(sentence.tokens)
        for name in self.order:
            if name == "G":
                out[name] = np.stack([self._static_row(t) for t in sentence.tokens])
            else:
                mat = self.layer_files[name].matrix(index)
                if mat.shape[0] != n:
                    raise AlignmentError(
                        f"sentence {sentence.sentence_id}: {mat.shape[0]} rows in "
                        f"channel {name} for {n} tokens")
                out[name] = mat
        return out
