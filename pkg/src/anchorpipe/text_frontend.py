"""Sentence -> ordered word vectors: tokenization and word2vec-text embeddings."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np

from .core import EmptyInputError, FormatError

# characters stripped from token edges; interior punctuation is kept
STRIP_CHARS = ".,!?;:\"'()"

Token = str


def tokenize(text: str) -> List[Token]:
    """Whitespace split, strip edge punctuation, lowercase, drop empties."""
    tokens = []
    for piece in text.split():
        word = piece.strip(STRIP_CHARS).lower()
        if word:
            tokens.append(word)
    if not tokens:
        raise EmptyInputError(f"no tokens left after tokenizing {text!r}")
    return tokens


def _oov_vector(fallback_seed: int, word: str, dim: int) -> np.ndarray:
    # sha256 keyed by (seed, word) so the same word maps to the same vector
    # on every platform and run
    digest = hashlib.sha256(f"{fallback_seed}:{word}".encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    vec = rng.standard_normal(dim)
    vec /= np.linalg.norm(vec)
    return vec.astype(np.float32)


@dataclass
class EmbeddingTable:
    """word -> dim-length vector map with a deterministic OOV fallback.

    Vocabulary vectors come from a word2vec text file (or are installed
    programmatically); out-of-vocabulary words get a unit-norm pseudorandom
    vector derived from (fallback_seed, word).
    """

    dim: int
    entries: Dict[str, np.ndarray] = field(default_factory=dict)
    fallback_seed: int = 0

    def __post_init__(self):
        for word, vec in self.entries.items():
            if vec.shape != (self.dim,):
                raise FormatError(
                    f"vector for {word!r} has length {vec.shape[0]}, expected {self.dim}"
                )

    def lookup(self, word: Token) -> np.ndarray:
        vec = self.entries.get(word)
        if vec is None:
            vec = _oov_vector(self.fallback_seed, word, self.dim)
        return vec

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class EmbeddedSentence:
    """Tokens with their aligned embedding matrix (len(tokens), dim)."""

    tokens: tuple
    vectors: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        vecs = np.asarray(self.vectors, dtype=np.float32)
        if len(self.tokens) < 1:
            raise EmptyInputError("embedded sentence must contain at least one token")
        if vecs.ndim != 2 or vecs.shape[0] != len(self.tokens):
            raise FormatError(
                f"vectors shape {vecs.shape} does not align with {len(self.tokens)} tokens"
            )
        vecs.flags.writeable = False
        object.__setattr__(self, "vectors", vecs)

    def __len__(self) -> int:
        return len(self.tokens)


def embed(tokens: Sequence[Token], table: EmbeddingTable) -> EmbeddedSentence:
    if not tokens:
        raise EmptyInputError("cannot embed an empty token list")
    vectors = np.stack([table.lookup(t) for t in tokens])
    return EmbeddedSentence(tuple(tokens), vectors)


def load_word2vec_text(path, fallback_seed: int = 0) -> EmbeddingTable:
    """Parse the plain-text word2vec format: header "V D", then V rows "word v1 .. vD"."""
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise FormatError(f"{path}: empty embedding file")
    header = lines[0].split()
    if len(header) != 2:
        raise FormatError(f"{path}:1: header must be 'VOCAB DIM', got {lines[0]!r}")
    try:
        vocab, dim = int(header[0]), int(header[1])
    except ValueError as e:
        raise FormatError(f"{path}:1: non-integer header {lines[0]!r}") from e
    if vocab < 0 or dim < 1:
        raise FormatError(f"{path}:1: invalid header values vocab={vocab} dim={dim}")

    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != vocab:
        raise FormatError(
            f"{path}: header declares {vocab} words but body has {len(body)} rows"
        )
    entries: Dict[str, np.ndarray] = {}
    for i, line in enumerate(body, start=2):
        parts = line.split()
        if len(parts) != dim + 1:
            raise FormatError(
                f"{path}:{i}: expected word + {dim} values, got {len(parts) - 1} values"
            )
        word = parts[0]
        try:
            vec = np.array([float(x) for x in parts[1:]], dtype=np.float32)
        except ValueError as e:
            raise FormatError(f"{path}:{i}: unparseable float") from e
        if not np.isfinite(vec).all():
            raise FormatError(f"{path}:{i}: non-finite vector component")
        entries[word] = vec
    return EmbeddingTable(dim=dim, entries=entries, fallback_seed=fallback_seed)


def save_word2vec_text(table: EmbeddingTable, path) -> None:
    """Write the table in the text format; 9 significant digits round-trip float32."""
    path = Path(path)
    rows = [f"{len(table.entries)} {table.dim}"]
    for word, vec in table.entries.items():
        rows.append(word + " " + " ".join(f"{float(x):.9g}" for x in vec))
    path.write_text("\n".join(rows) + "\n", encoding="utf-8", newline="\n")
