"""
Post-processing of model predictions: string-similarity backoff for low-confidence
predictions, then per-document synthesis of repeated mentions.
"""

import logging
from collections import Counter, defaultdict
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from rapidfuzz.distance import Levenshtein

from models import CandidateSet, KnowledgeBase, MentionRef, Prediction, Provenance, RerankResult
from services.base import ParseError, iter_json_lines
from services.knowledge_base import resolve_entity
from utils.helpers import fold_text, format_score, write_jsonl

logger = logging.getLogger(__name__)

Probabilities = Union[RerankResult, Sequence[Tuple[str, float]], Mapping[str, float]]


def string_similarity(a: str, b: str) -> float:
    """1 - levenshtein / longer length, over case-folded, whitespace-collapsed strings"""
    fa, fb = fold_text(a), fold_text(b)
    longest = max(len(fa), len(fb))
    if longest == 0:
        return 1.0
    return 1.0 - Levenshtein.distance(fa, fb) / longest


def _probability_map(probabilities: Probabilities) -> Dict[str, float]:
    if isinstance(probabilities, RerankResult):
        return dict(probabilities.probabilities)
    if isinstance(probabilities, Mapping):
        return dict(probabilities)
    return dict(probabilities)


def backoff(pred: Prediction, probabilities: Probabilities, candidate_set: CandidateSet, kb: KnowledgeBase,
            threshold: float) -> Prediction:
    """
    Replace a prediction below `threshold` with the textually closest candidate

    Closeness is the best similarity between the mention surface and any name of the
    candidate. Ties go to the higher model probability, then to the lower id.
    """
    if pred.probability >= threshold or not candidate_set.candidates:
        return pred
    model_probability = _probability_map(probabilities)

    def rank(entity_id: str):
        entity = resolve_entity(kb, entity_id, "candidate set")
        similarity = max(string_similarity(pred.surface, name) for name in entity.names)
        return -similarity, -model_probability.get(entity_id, 0.0), entity_id

    chosen = min(candidate_set.entity_ids, key=rank)
    return pred.model_copy(update={
        "entity_id": chosen,
        "probability": model_probability.get(chosen, 0.0),
        "provenance": Provenance.BACKOFF,
    })


def synthesize_document(predictions: Sequence[Prediction],
                        probabilities: Optional[Mapping[MentionRef, Probabilities]] = None) -> List[Prediction]:
    """
    Map every repeat of a mention (same case-folded surface) in one document to its modal entity

    Ties go to the larger summed probability, then to the lower id. When `probabilities` is
    given, a changed prediction takes the model probability of its new entity.
    """
    groups: Dict[str, List[int]] = defaultdict(list)
    for position, pred in enumerate(predictions):
        groups[fold_text(pred.surface)].append(position)

    result = list(predictions)
    for positions in groups.values():
        if len(positions) < 2:
            continue
        votes = Counter(predictions[p].entity_id for p in positions)
        mass: Dict[str, float] = defaultdict(float)
        for p in positions:
            mass[predictions[p].entity_id] += predictions[p].probability
        winner = min(votes, key=lambda entity_id: (-votes[entity_id], -mass[entity_id], entity_id))

        for p in positions:
            pred = predictions[p]
            if pred.entity_id == winner:
                continue
            update = {"entity_id": winner, "provenance": Provenance.SYNTHESIS}
            if probabilities is not None and pred.mention_ref in probabilities:
                update["probability"] = _probability_map(probabilities[pred.mention_ref]).get(winner, 0.0)
            result[p] = pred.model_copy(update=update)
    return result


def postprocess_predictions(predictions: Iterable[Prediction], rerank_results: Mapping[MentionRef, RerankResult],
                            candidate_sets: Mapping[MentionRef, CandidateSet], kb: KnowledgeBase, threshold: float,
                            use_backoff: bool = True, use_synthesis: bool = True) -> List[Prediction]:
    """Backoff, then synthesis per document; output sorted by mention_ref"""
    ordered = sorted(predictions, key=lambda p: p.mention_ref)
    if use_backoff:
        ordered = [
            backoff(p, rerank_results[p.mention_ref], candidate_sets[p.mention_ref], kb, threshold)
            for p in ordered
        ]
    if use_synthesis:
        by_document: Dict[str, List[Prediction]] = defaultdict(list)
        for pred in ordered:
            by_document[pred.mention_ref.doc_id].append(pred)
        ordered = [
            pred
            for doc_id in sorted(by_document)
            for pred in synthesize_document(by_document[doc_id], rerank_results)
        ]

    changed = Counter(p.provenance for p in ordered)
    logger.info(
        f"Post-processing at threshold {threshold}: {changed[Provenance.BACKOFF]} backoff, "
        f"{changed[Provenance.SYNTHESIS]} synthesis, {changed[Provenance.MODEL]} unchanged"
    )
    return ordered


def write_predictions(predictions: Iterable[Prediction], path: Path) -> int:
    records = (
        {
            "mention": p.mention_ref.key,
            "surface": p.surface,
            "entity_id": p.entity_id,
            "probability": format_score(p.probability),
            "provenance": p.provenance.value,
        }
        for p in predictions
    )
    return write_jsonl(Path(path), records)


def load_predictions(path: Path) -> List[Prediction]:
    predictions = []
    for line_number, record in iter_json_lines(path, "predictions"):
        try:
            predictions.append(Prediction(
                mention_ref=MentionRef.from_key(record["mention"]),
                surface=record.get("surface", ""),
                entity_id=record["entity_id"],
                probability=record["probability"],
                provenance=Provenance(record.get("provenance", Provenance.MODEL.value)),
            ))
        except (KeyError, ValueError) as e:
            raise ParseError(f"malformed prediction record: {e}", line_number, str(path)) from e
    return predictions
