"""
Embedders behind the IEmbedder contract plus vector-file IO.
HashEmbedder is a deterministic signed feature-hashing encoder over words and character trigrams;
PrecomputedEmbedder serves vectors produced elsewhere (e.g. a trained bi-encoder).
"""

import hashlib
import logging
import math
import struct
from functools import lru_cache
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from models import RESERVED_MARKERS, MentionRef, TokenSequence
from services.base import (
    DataValidationError, DimensionMismatchError, DuplicateIdError, MissingInputError, ParseError,
    UnknownEntityError,
)
from services.interfaces import IEmbedder

logger = logging.getLogger(__name__)

BINARY_MAGIC = b"NEDVEC1\n"
_MARKERS = frozenset(RESERVED_MARKERS)


def _features(token: str) -> List[str]:
    folded = token.casefold()
    padded = f"#{folded}#"
    return [f"w:{folded}", *(f"g:{padded[i:i + 3]}" for i in range(len(padded) - 2))]


def feature_hash(feature: str, seed: int) -> int:
    """Seeded 64-bit hash (keyed BLAKE2b)"""
    key = (seed % (1 << 64)).to_bytes(8, "little")
    digest = hashlib.blake2b(feature.encode("utf-8"), digest_size=8, key=key).digest()
    return int.from_bytes(digest, "little")


@lru_cache(maxsize=1 << 16)
def _token_features(token: str, dim: int, seed: int) -> Tuple[Tuple[int, ...], Tuple[float, ...]]:
    hashes = [feature_hash(feature, seed) for feature in _features(token)]
    return tuple(h % dim for h in hashes), tuple(1.0 if h % 2 == 0 else -1.0 for h in hashes)


def hash_embed_tokens(tokens: Iterable[str], dim: int, seed: int) -> np.ndarray:
    """
    Signed feature hashing of words and character trigrams, L2-normalized

    Markers are skipped. Each feature hash h adds +1 to bucket h mod dim when h is even,
    -1 when it is odd.
    """
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    buckets = []
    signs = []
    for token in tokens:
        if token in _MARKERS:
            continue
        token_buckets, token_signs = _token_features(token, dim, seed)
        buckets.extend(token_buckets)
        signs.extend(token_signs)

    vector = np.zeros(dim, dtype=np.float64)
    if buckets:
        np.add.at(vector, np.asarray(buckets, dtype=np.int64), np.asarray(signs))
    norm = np.linalg.norm(vector)
    if norm > 0:
        vector /= norm
    return vector


def hash_embed(seq: TokenSequence, dim: int, seed: int) -> np.ndarray:
    return hash_embed_tokens(seq.tokens, dim, seed)


class HashEmbedder(IEmbedder):
    """Reference embedder; context and entity sides share one hashing space"""

    def __init__(self, dim: int = 256, seed: int = 13):
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        self._dim = dim
        self.seed = seed

    @property
    def dim(self) -> int:
        return self._dim

    def embed_context(self, seq: TokenSequence, mention_ref: Optional[MentionRef] = None) -> np.ndarray:
        return hash_embed(seq, self._dim, self.seed)

    def embed_entity(self, seq: TokenSequence, entity_id: Optional[str] = None) -> np.ndarray:
        return hash_embed(seq, self._dim, self.seed)


class PrecomputedEmbedder(IEmbedder):
    """Looks vectors up by entity id and by mention key (doc_id:group_index:mention_index)"""

    def __init__(self, entity_vectors: Dict[str, np.ndarray], context_vectors: Optional[Dict[str, np.ndarray]] = None):
        if not entity_vectors:
            raise DataValidationError("precomputed embedder needs at least one entity vector")
        self.entity_vectors = entity_vectors
        self.context_vectors = context_vectors or {}
        self._dim = len(next(iter(entity_vectors.values())))
        if self.context_vectors:
            context_dim = len(next(iter(self.context_vectors.values())))
            if context_dim != self._dim:
                raise DimensionMismatchError(f"context vectors have dim {context_dim}, entity vectors {self._dim}")

    @property
    def dim(self) -> int:
        return self._dim

    def embed_entity_id(self, entity_id: str) -> np.ndarray:
        vector = self.entity_vectors.get(entity_id)
        if vector is None:
            raise UnknownEntityError(entity_id, "entity vector file")
        return vector

    def embed_entity(self, seq: TokenSequence, entity_id: Optional[str] = None) -> np.ndarray:
        if entity_id is None:
            raise UnknownEntityError("<none>", "precomputed entity lookup requires an id")
        return self.embed_entity_id(entity_id)

    def embed_context(self, seq: TokenSequence, mention_ref: Optional[MentionRef] = None) -> np.ndarray:
        key = mention_ref.key if mention_ref else "<none>"
        vector = self.context_vectors.get(key)
        if vector is None:
            raise UnknownEntityError(key, "context vector file")
        return vector


def _check_row(entity_id: str, values: np.ndarray, row: int, vectors: Dict[str, np.ndarray], source: str):
    if not np.all(np.isfinite(values)):
        raise ParseError(f"non-finite value in vector '{entity_id}'", row, source)
    if entity_id in vectors:
        raise DuplicateIdError(entity_id, row)


def _load_text_vectors(path: Path) -> Dict[str, np.ndarray]:
    source = str(path)
    vectors: Dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as handle:
        header = handle.readline().strip()
        if not header.startswith("dim="):
            raise ParseError("first line must be 'dim=<n>'", 1, source)
        try:
            dim = int(header[4:])
        except ValueError as e:
            raise ParseError(f"bad dimension header {header!r}", 1, source) from e
        if dim < 1:
            raise ParseError(f"dimension must be positive, got {dim}", 1, source)
        for row, line in enumerate(handle, start=2):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            columns = line.split("\t")
            entity_id, fields = columns[0], columns[1:]
            if len(fields) != dim:
                raise DimensionMismatchError(f"{source}: line {row}: expected {dim} values, got {len(fields)}")
            try:
                values = np.array([float(f) for f in fields], dtype=np.float64)
            except ValueError as e:
                raise ParseError(f"non-numeric value in vector '{entity_id}'", row, source) from e
            _check_row(entity_id, values, row, vectors, source)
            vectors[entity_id] = values
    return vectors


def _load_binary_vectors(path: Path) -> Dict[str, np.ndarray]:
    source = str(path)
    data = path.read_bytes()
    offset = len(BINARY_MAGIC)
    try:
        dim, count = struct.unpack_from("<II", data, offset)
    except struct.error as e:
        raise ParseError(f"truncated binary header: {e}", None, source) from e
    if dim < 1:
        raise ParseError(f"dimension must be positive, got {dim}", None, source)
    offset += 8
    try:
        vectors: Dict[str, np.ndarray] = {}
        for row in range(1, count + 1):
            (id_length,) = struct.unpack_from("<H", data, offset)
            offset += 2
            entity_id = data[offset:offset + id_length].decode("utf-8")
            offset += id_length
            values = np.frombuffer(data, dtype="<f8", count=dim, offset=offset).astype(np.float64)
            offset += 8 * dim
            _check_row(entity_id, values, row, vectors, source)
            vectors[entity_id] = values
    except (struct.error, ValueError, UnicodeDecodeError) as e:
        raise ParseError(f"truncated or corrupt binary vector file: {e}", None, source) from e
    if offset != len(data):
        raise ParseError(f"{len(data) - offset} trailing bytes after {count} vectors", None, source)
    return vectors


def load_vectors(path: Path) -> Dict[str, np.ndarray]:
    """
    Load an id -> vector map from the text format or its binary variant

    Raises:
        MissingInputError: file absent
        DimensionMismatchError: row with the wrong number of values
        ParseError: NaN/Inf values or malformed rows
        DuplicateIdError: repeated id
    """
    path = Path(path)
    if not path.exists():
        raise MissingInputError("vectors", str(path))
    with open(path, "rb") as handle:
        is_binary = handle.read(len(BINARY_MAGIC)) == BINARY_MAGIC
    vectors = _load_binary_vectors(path) if is_binary else _load_text_vectors(path)
    logger.info(f"Loaded {len(vectors)} vectors from {path}")
    return vectors


def write_vectors(vectors: Dict[str, np.ndarray], path: Path, binary: bool = False) -> int:
    """Write vectors sorted by id; returns the number of rows"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ids = sorted(vectors)
    dims = {len(vectors[i]) for i in ids}
    if len(dims) > 1:
        raise DimensionMismatchError(f"cannot write vectors of mixed dimensions {sorted(dims)}")
    dim = dims.pop() if dims else 0
    for entity_id in ids:
        if not all(math.isfinite(v) for v in vectors[entity_id]):
            raise DataValidationError(f"non-finite value in vector '{entity_id}'")

    if binary:
        with open(path, "wb") as handle:
            handle.write(BINARY_MAGIC)
            handle.write(struct.pack("<II", dim, len(ids)))
            for entity_id in ids:
                encoded = entity_id.encode("utf-8")
                handle.write(struct.pack("<H", len(encoded)))
                handle.write(encoded)
                handle.write(np.asarray(vectors[entity_id], dtype="<f8").tobytes())
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(f"dim={dim}\n")
            for entity_id in ids:
                values = "\t".join(repr(float(v)) for v in vectors[entity_id])
                handle.write(f"{entity_id}\t{values}\n")
    return len(ids)
