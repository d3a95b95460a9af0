"""
Candidate reranking: every (context, candidate) pair is scored by an IScorer and the
scores are turned into a probability distribution with a softmax.
"""

import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from models import ENT_DESC, CandidateSet, ContextWindow, KnowledgeBase, MentionRef, Prediction, Provenance, RerankResult, TokenSequence
from services.base import DataValidationError, MissingInputError, ParseError, UnknownEntityError
from services.embedders import hash_embed_tokens
from services.interfaces import IScorer
from services.knowledge_base import resolve_entity
from services.sequences import build_context_sequence, build_entity_sequence, build_pair_sequence

logger = logging.getLogger(__name__)


def softmax(scores: Sequence[float]) -> np.ndarray:
    """Max-shifted softmax"""
    values = np.asarray(scores, dtype=np.float64)
    if values.size == 0:
        raise ValueError("softmax of an empty score list")
    if not np.all(np.isfinite(values)):
        raise ValueError("softmax scores must be finite")
    shifted = np.exp(values - values.max())
    return shifted / shifted.sum()


def split_pair(pair: TokenSequence) -> Tuple[List[str], List[str]]:
    if pair.tokens.count(ENT_DESC) != 1:
        raise DataValidationError("pair sequence needs exactly one description marker")
    cut = pair.tokens.index(ENT_DESC)
    return pair.tokens[:cut], pair.tokens[cut + 1:]


class ReferenceScorer(IScorer):
    """Inner product of the hashed context side and the hashed entity side"""

    def __init__(self, dim: int = 256, seed: int = 13):
        self.dim = dim
        self.seed = seed

    def score(self, pair: TokenSequence, mention_ref: Optional[MentionRef] = None,
              entity_id: Optional[str] = None) -> float:
        context, entity = split_pair(pair)
        left = hash_embed_tokens(context, self.dim, self.seed)
        right = hash_embed_tokens(entity, self.dim, self.seed)
        return float(left @ right)


def load_scores(path: Path) -> Dict[Tuple[str, str], float]:
    """Tab-separated mention key, entity id, score"""
    path = Path(path)
    if not path.exists():
        raise MissingInputError("scores", str(path))
    scores: Dict[Tuple[str, str], float] = {}
    with open(path, encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            columns = line.rstrip("\n").split("\t")
            if len(columns) != 3:
                raise ParseError("expected mention, entity id and score columns", line_number, str(path))
            try:
                value = float(columns[2])
            except ValueError as e:
                raise ParseError(f"score {columns[2]!r} is not a number", line_number, str(path)) from e
            if not math.isfinite(value):
                raise ParseError("score must be finite", line_number, str(path))
            scores[(columns[0], columns[1])] = value
    logger.info(f"Loaded {len(scores)} precomputed pair scores from {path}")
    return scores


class ScoreFileScorer(IScorer):
    """Serves scores computed elsewhere, keyed by (mention key, entity id)"""

    def __init__(self, scores: Dict[Tuple[str, str], float]):
        self.scores = scores

    @classmethod
    def from_file(cls, path: Path) -> "ScoreFileScorer":
        return cls(load_scores(path))

    def score(self, pair: TokenSequence, mention_ref: Optional[MentionRef] = None,
              entity_id: Optional[str] = None) -> float:
        key = (mention_ref.key if mention_ref else "", entity_id or "")
        if key not in self.scores:
            raise UnknownEntityError(f"{key[0]}/{key[1]}", "score file")
        return self.scores[key]


def rerank(candidate_set: CandidateSet, window: ContextWindow, kb: KnowledgeBase, scorer: IScorer,
           pair_context_max: int = 128, entity_max: int = 128, types_word_limit: int = 30) -> RerankResult:
    """
    Score each candidate against the mention context and pick the softmax argmax

    Ties go to the lowest entity id. Entity titles include aliases.
    """
    if not candidate_set.candidates:
        raise DataValidationError(f"no candidates to rerank for {candidate_set.mention_ref}")
    mention_ref = candidate_set.mention_ref
    context = build_context_sequence(window, pair_context_max)

    ids = candidate_set.entity_ids
    scores = []
    for entity_id in ids:
        entity = resolve_entity(kb, entity_id, "candidate set")
        entity_seq = build_entity_sequence(entity, True, types_word_limit, entity_max)
        scores.append(scorer.score(build_pair_sequence(context, entity_seq), mention_ref, entity_id))

    probabilities = softmax(scores)
    best = min(range(len(ids)), key=lambda i: (-probabilities[i], ids[i]))
    prediction = Prediction(
        mention_ref=mention_ref,
        surface=" ".join(window.mention_words),
        entity_id=ids[best],
        probability=min(1.0, float(probabilities[best])),
        provenance=Provenance.MODEL,
    )
    return RerankResult(
        prediction=prediction,
        probabilities=[(entity_id, float(p)) for entity_id, p in zip(ids, probabilities)],
    )
