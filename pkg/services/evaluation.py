"""
Accuracy, recall and subpopulation (slice) evaluation.
Slices are named predicates over a test mention, its gold entity, training statistics
and the knowledge base as it was before augmentation.
"""

import logging
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Set

import pandas as pd

from models import AnnotatedCorpus, CandidateSet, EvalReport, KnowledgeBase, MentionRef, Prediction, SliceRow, TrainStats
from services.base import ConfigError, DataValidationError
from services.candidate_index import recall_at_k
from services.knowledge_base import resolve_entity
from utils.helpers import fold_text

logger = logging.getLogger(__name__)

RARE_COUNT = 5
TOP_ENTITIES = 100


@dataclass(frozen=True)
class SliceSpec:
    """Named predicate(surface, gold_id, stats, pre_aug_kb) -> bool"""
    name: str
    predicate: Callable[[str, str, TrainStats, KnowledgeBase], bool]


def _limited_metadata(gold_id: str, kb: KnowledgeBase) -> bool:
    entity = resolve_entity(kb, gold_id, "pre-augmentation KB")
    return entity.description is None and len(entity.types) == 1


def _not_direct_match(surface: str, gold_id: str, kb: KnowledgeBase) -> bool:
    entity = resolve_entity(kb, gold_id, "pre-augmentation KB")
    return fold_text(surface) not in {fold_text(name) for name in entity.names}


def _unpopular(surface: str, gold_id: str, stats: TrainStats) -> bool:
    counts = stats.mention_to_entity_counts.get(fold_text(surface))
    if not counts:
        return False
    gold_count = counts.get(gold_id, 0)
    return any(count > gold_count for entity_id, count in counts.items() if entity_id != gold_id)


CANONICAL_SLICES: List[SliceSpec] = [
    SliceSpec("MultiWord", lambda s, g, st, kb: len(s.split()) > 1),
    SliceSpec("SingleWord", lambda s, g, st, kb: len(s.split()) == 1),
    SliceSpec("UnseenMention", lambda s, g, st, kb: fold_text(s) not in st.mention_surfaces),
    SliceSpec("UnseenEntity", lambda s, g, st, kb: g not in st.entity_count),
    SliceSpec("NotDirectMatch", lambda s, g, st, kb: _not_direct_match(s, g, kb)),
    SliceSpec("Top100", lambda s, g, st, kb: g in st.top100),
    SliceSpec("Unpopular", lambda s, g, st, kb: _unpopular(s, g, st)),
    SliceSpec("LimitedMetadata", lambda s, g, st, kb: _limited_metadata(g, kb)),
    SliceSpec("Rare&Limited", lambda s, g, st, kb: _limited_metadata(g, kb) and st.entity_count.get(g, 0) < RARE_COUNT),
    SliceSpec(
        "NeverSeen&Limited",
        lambda s, g, st, kb: _limited_metadata(g, kb) and g not in st.entity_count and g not in st.pretrain_entities,
    ),
]

REGISTERED_SLICES: Dict[str, SliceSpec] = {
    "NeverSeenPretrain&Limited": SliceSpec(
        "NeverSeenPretrain&Limited",
        lambda s, g, st, kb: _limited_metadata(g, kb) and g not in st.pretrain_entities,
    ),
}


def resolve_slices(names: Iterable[str]) -> List[SliceSpec]:
    """Look up registered extra slices by name"""
    specs = []
    for name in names:
        if name not in REGISTERED_SLICES:
            raise ConfigError(f"unknown slice '{name}'; registered: {sorted(REGISTERED_SLICES)}")
        specs.append(REGISTERED_SLICES[name])
    return specs


def _ordered_slices(extra: Sequence[SliceSpec]) -> List[SliceSpec]:
    canonical = {spec.name for spec in CANONICAL_SLICES}
    users = {spec.name: spec for spec in extra if spec.name not in canonical}
    return [*CANONICAL_SLICES, *(users[name] for name in sorted(users))]


def gold_from_corpus(corpus: AnnotatedCorpus) -> Dict[MentionRef, str]:
    return {ref: mention.gold_id for ref, _, mention in corpus.iter_mentions()}


def surfaces_from_corpus(corpus: AnnotatedCorpus) -> Dict[MentionRef, str]:
    """Annotated mention surfaces keyed by mention ref"""
    return {ref: mention.surface for ref, _, mention in corpus.iter_mentions()}


def _surface(surfaces: Dict[MentionRef, str], ref: MentionRef) -> str:
    surface = surfaces.get(ref, "")
    if not surface.strip():
        raise DataValidationError(f"no gold surface for mention {ref.key}")
    return surface


def _aligned(predictions: Sequence[Prediction], gold: Dict[MentionRef, str]):
    if not predictions:
        raise DataValidationError("no predictions to evaluate")
    refs = {p.mention_ref for p in predictions}
    if len(refs) != len(predictions):
        raise DataValidationError("predictions contain repeated mention refs")
    if refs != set(gold):
        missing = sorted(set(gold) - refs)[:3]
        extra = sorted(refs - set(gold))[:3]
        raise DataValidationError(
            f"predictions and gold are not aligned (missing {[r.key for r in missing]}, "
            f"unexpected {[r.key for r in extra]})"
        )


def accuracy(predictions: Sequence[Prediction], gold: Dict[MentionRef, str]) -> float:
    _aligned(predictions, gold)
    correct = sum(1 for p in predictions if p.entity_id == gold[p.mention_ref])
    return correct / len(predictions)


def build_train_stats(train: AnnotatedCorpus, pretrain: Optional[AnnotatedCorpus] = None) -> TrainStats:
    entity_count: Counter = Counter()
    surface_counts: Dict[str, Counter] = defaultdict(Counter)
    for _, _, mention in train.iter_mentions():
        entity_count[mention.gold_id] += 1
        surface_counts[fold_text(mention.surface)][mention.gold_id] += 1

    ranked = sorted(entity_count.items(), key=lambda item: (-item[1], item[0]))
    pretrain_entities: Set[str] = set()
    if pretrain is not None:
        pretrain_entities = {mention.gold_id for _, _, mention in pretrain.iter_mentions()}

    return TrainStats(
        entity_count=dict(entity_count),
        mention_surfaces=set(surface_counts),
        mention_to_entity_counts={surface: dict(counts) for surface, counts in surface_counts.items()},
        top100={entity_id for entity_id, _ in ranked[:TOP_ENTITIES]},
        pretrain_entities=pretrain_entities,
    )


def slice_membership(surface: str, gold_id: str, stats: TrainStats, pre_aug_kb: KnowledgeBase,
                     extra_slices: Sequence[SliceSpec] = ()) -> Set[str]:
    """
    Names of every slice the mention belongs to

    Raises:
        UnknownEntityError: gold id missing from the pre-augmentation KB
    """
    resolve_entity(pre_aug_kb, gold_id, "pre-augmentation KB")
    return {spec.name for spec in _ordered_slices(extra_slices) if spec.predicate(surface, gold_id, stats, pre_aug_kb)}


def slice_report(predictions: Sequence[Prediction], gold: Dict[MentionRef, str], surfaces: Dict[MentionRef, str],
                 stats: TrainStats, pre_aug_kb: KnowledgeBase, candidate_sets: Optional[Sequence[CandidateSet]] = None,
                 extra_slices: Sequence[SliceSpec] = ()) -> EvalReport:
    """Overall accuracy, optional recall@1/@10 and per-slice accuracy with support"""
    _aligned(predictions, gold)
    specs = _ordered_slices(extra_slices)
    support: Counter = Counter()
    correct: Counter = Counter()
    hits = 0
    for pred in sorted(predictions, key=lambda p: p.mention_ref):
        gold_id = gold[pred.mention_ref]
        is_correct = pred.entity_id == gold_id
        hits += int(is_correct)
        surface = _surface(surfaces, pred.mention_ref)
        for name in slice_membership(surface, gold_id, stats, pre_aug_kb, extra_slices):
            support[name] += 1
            correct[name] += int(is_correct)

    rows = [
        SliceRow(
            name=spec.name,
            support=support[spec.name],
            accuracy=correct[spec.name] / support[spec.name] if support[spec.name] else None,
        )
        for spec in specs
    ]
    recall_1 = recall_10 = None
    if candidate_sets is not None:
        recall_1 = recall_at_k(candidate_sets, gold, 1)
        recall_10 = recall_at_k(candidate_sets, gold, 10)
    report = EvalReport(
        mention_count=len(predictions),
        overall_accuracy=hits / len(predictions),
        recall_at_1=recall_1,
        recall_at_10=recall_10,
        rows=rows,
    )
    logger.info(f"Evaluated {report.mention_count} mentions: accuracy {report.overall_accuracy:.4f}")
    return report


def report_frame(report: EvalReport) -> pd.DataFrame:
    return pd.DataFrame(
        [{"slice": row.name, "support": row.support, "accuracy": row.accuracy} for row in report.rows],
        columns=["slice", "support", "accuracy"],
    )


def render_report_text(report: EvalReport) -> str:
    """Aligned-column table for humans"""
    lines = [
        f"mentions: {report.mention_count}",
        f"accuracy: {report.overall_accuracy:.4f}",
    ]
    if report.recall_at_1 is not None:
        lines.append(f"recall@1: {report.recall_at_1:.4f}")
    if report.recall_at_10 is not None:
        lines.append(f"recall@10: {report.recall_at_10:.4f}")
    frame = report_frame(report)
    frame["accuracy"] = frame["accuracy"].map(lambda v: "-" if pd.isna(v) else f"{v:.4f}")
    lines.append("")
    lines.append(frame.to_string(index=False))
    return "\n".join(lines) + "\n"


def membership_frame(predictions: Sequence[Prediction], gold: Dict[MentionRef, str], surfaces: Dict[MentionRef, str],
                     stats: TrainStats, pre_aug_kb: KnowledgeBase, extra_slices: Sequence[SliceSpec] = ()) -> pd.DataFrame:
    """One row per mention with a 0/1 column per slice"""
    _aligned(predictions, gold)
    names = [spec.name for spec in _ordered_slices(extra_slices)]
    records = []
    for pred in sorted(predictions, key=lambda p: p.mention_ref):
        gold_id = gold[pred.mention_ref]
        surface = _surface(surfaces, pred.mention_ref)
        members = slice_membership(surface, gold_id, stats, pre_aug_kb, extra_slices)
        record = {
            "mention": pred.mention_ref.key,
            "surface": surface,
            "gold_id": gold_id,
            "predicted_id": pred.entity_id,
            "correct": int(pred.entity_id == gold_id),
        }
        record.update({name: int(name in members) for name in names})
        records.append(record)
    return pd.DataFrame(records, columns=["mention", "surface", "gold_id", "predicted_id", "correct", *names])
