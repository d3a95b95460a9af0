"""
Exact maximum-inner-product candidate retrieval.
The pool is held as one id-sorted matrix, so position order doubles as the id tie-break.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from models import Candidate, CandidateSet, MentionRef
from services.base import DataValidationError, DimensionMismatchError, ParseError, iter_json_lines
from utils.helpers import format_score, write_jsonl

logger = logging.getLogger(__name__)

Query = Tuple[MentionRef, np.ndarray]
NegativeQuery = Tuple[MentionRef, np.ndarray, str]


class CandidateIndex:
    """Immutable (entity_id, vector) pool"""

    def __init__(self, ids: List[str], matrix: np.ndarray, missing_ids: Optional[List[str]] = None):
        if len(ids) != matrix.shape[0]:
            raise DataValidationError(f"{len(ids)} ids for {matrix.shape[0]} vectors")
        if len(set(ids)) != len(ids):
            raise DataValidationError("candidate pool ids must be unique")
        if ids != sorted(ids):
            raise DataValidationError("candidate pool must be sorted by id")
        self.ids = list(ids)
        self.matrix = np.ascontiguousarray(matrix, dtype=np.float64)
        self.matrix.setflags(write=False)
        self.missing_ids = list(missing_ids or [])

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return len(self.ids)


def build_index(vectors: Dict[str, np.ndarray], pool_filter: Optional[Iterable[str]] = None) -> CandidateIndex:
    """
    Build an index over all vectors, or over vectors ∩ pool_filter

    Ids named in the filter but absent from the vectors are kept in `missing_ids`.
    """
    missing: List[str] = []
    if pool_filter is not None:
        wanted: Set[str] = set(pool_filter)
        missing = sorted(wanted - vectors.keys())
        ids = sorted(wanted & vectors.keys())
        if missing:
            logger.warning(f"{len(missing)} pool-filter ids have no vector (first: {missing[0]})")
    else:
        ids = sorted(vectors)
    if not ids:
        raise DataValidationError("candidate pool is empty")

    dims = {len(vectors[i]) for i in ids}
    if len(dims) != 1:
        raise DimensionMismatchError(f"pool vectors have mixed dimensions {sorted(dims)}")
    matrix = np.vstack([np.asarray(vectors[i], dtype=np.float64) for i in ids])
    logger.info(f"Built candidate index over {len(ids)} entities (dim {matrix.shape[1]})")
    return CandidateIndex(ids, matrix, missing)


def _shard_top(scores: np.ndarray, offset: int, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """Exact top-k positions of one shard, ordered by (-score, position); ties at the cut are kept"""
    n = scores.shape[0]
    if k < n:
        cut = np.partition(scores, n - k)[n - k]
        local = np.nonzero(scores >= cut)[0]
    else:
        local = np.arange(n)
    order = np.lexsort((local, -scores[local]))[:k]
    local = local[order]
    return local + offset, scores[local]


def top_k(index: CandidateIndex, query: np.ndarray, k: int = 10, mention_ref: Optional[MentionRef] = None,
          shards: int = 1) -> CandidateSet:
    """
    Exhaustive exact top-k by inner product, ordered by (-score, entity_id)

    With shards > 1 every contiguous shard contributes its own exact top-k before a merge,
    which gives the same result as a single scan.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (index.dim,):
        raise DimensionMismatchError(f"query has shape {query.shape}, index dim is {index.dim}")

    n = len(index)
    bounds = np.linspace(0, n, num=min(max(1, shards), n) + 1, dtype=np.int64)
    positions, scores = [], []
    for start, end in zip(bounds, bounds[1:]):
        shard_positions, shard_scores = _shard_top(index.matrix[start:end] @ query, int(start), k)
        positions.append(shard_positions)
        scores.append(shard_scores)
    positions = np.concatenate(positions)
    scores = np.concatenate(scores)
    order = np.lexsort((positions, -scores))[:k]

    candidates = [Candidate(index.ids[positions[i]], float(scores[i])) for i in order]
    return CandidateSet(mention_ref=mention_ref, candidates=candidates)


def top_k_batch(index: CandidateIndex, queries: Sequence[Query], k: int = 10, jobs: int = 1,
                shards: int = 1) -> List[CandidateSet]:
    """Retrieve for many queries; output order equals input order"""
    def retrieve(query: Query) -> CandidateSet:
        mention_ref, vector = query
        return top_k(index, vector, k, mention_ref=mention_ref, shards=shards)

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        return list(pool.map(retrieve, queries))


def mine_hard_negatives(index: CandidateIndex, queries: Sequence[NegativeQuery], n: int = 10,
                        jobs: int = 1) -> Dict[MentionRef, List[str]]:
    """Top-(n+1) retrieval minus the gold id, cut to n"""
    retrieved = top_k_batch(index, [(ref, vector) for ref, vector, _ in queries], k=n + 1, jobs=jobs)
    negatives = {}
    for (ref, _, gold_id), candidate_set in zip(queries, retrieved):
        negatives[ref] = [entity_id for entity_id in candidate_set.entity_ids if entity_id != gold_id][:n]
    return negatives


def recall_at_k(candidate_sets: Sequence[CandidateSet], gold: Dict[MentionRef, str], k: int) -> float:
    """Fraction of mentions whose gold id is among the first k candidates"""
    if not candidate_sets:
        raise DataValidationError("recall needs at least one candidate set")
    hits = 0
    for candidate_set in candidate_sets:
        gold_id = gold.get(candidate_set.mention_ref)
        if gold_id is None:
            label = candidate_set.mention_ref.key if candidate_set.mention_ref else "query"
            raise DataValidationError(f"no gold entity for mention {label}")
        if gold_id in candidate_set.entity_ids[:k]:
            hits += 1
    return hits / len(candidate_sets)


def write_candidates(candidate_sets: Iterable[CandidateSet], path: Path) -> int:
    records = (
        {
            "mention": cs.mention_ref.key,
            "candidates": [[c.entity_id, format_score(c.score)] for c in cs.candidates],
        }
        for cs in candidate_sets
    )
    return write_jsonl(Path(path), records)


def load_candidates(path: Path) -> List[CandidateSet]:
    """Read a candidate dump; candidates are re-sorted since rounding may create ties"""
    sets = []
    for line_number, record in iter_json_lines(path, "candidates"):
        try:
            ref = MentionRef.from_key(record["mention"])
            candidates = [Candidate(str(entity_id), float(score)) for entity_id, score in record["candidates"]]
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(f"malformed candidate record: {e}", line_number, str(path)) from e
        candidates.sort(key=lambda c: (-c.score, c.entity_id))
        sets.append(CandidateSet(mention_ref=ref, candidates=candidates))
    return sets


def write_negatives(negatives: Dict[MentionRef, List[str]], path: Path) -> int:
    records = ({"mention": ref.key, "negatives": negatives[ref]} for ref in sorted(negatives))
    return write_jsonl(Path(path), records)
