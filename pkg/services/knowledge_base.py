"""
Knowledge-base loading, cross-KB augmentation and integration metrics.
A source KB is augmented with the types and descriptions of its mapped counterparts in a target KB.
"""

import logging
import statistics
from collections import Counter
from pathlib import Path
from typing import Dict, Optional

from pydantic import ValidationError as PydanticValidationError

from models import AugmentationLift, CrossKbMapping, EntityRecord, KbStats, KnowledgeBase, MappingEntry
from services.base import (
    DataValidationError, DuplicateIdError, MissingInputError, ParseError, UnknownEntityError, iter_json_lines,
)
from utils.helpers import first_words, write_jsonl

logger = logging.getLogger(__name__)


def load_kb(path: Path, name: Optional[str] = None) -> KnowledgeBase:
    """
    Load a line-delimited KB file

    Args:
        path: File with one entity object per line
        name: KB label, defaults to the file stem

    Returns:
        KnowledgeBase with every record

    Raises:
        ParseError: malformed line (line number reported)
        DuplicateIdError: the same id on two lines
    """
    path = Path(path)
    entities: Dict[str, EntityRecord] = {}
    for line_number, record in iter_json_lines(path, "kb"):
        try:
            entity = EntityRecord.model_validate(record)
        except PydanticValidationError as e:
            raise ParseError(f"invalid entity record: {e.errors()[0]['msg']}", line_number, str(path)) from e
        if entity.id in entities:
            raise DuplicateIdError(entity.id, line_number)
        entities[entity.id] = entity
    logger.info(f"Loaded {len(entities)} entities from {path}")
    return KnowledgeBase(name=name or path.stem, entities=entities)


def write_kb(kb: KnowledgeBase, path: Path) -> int:
    """Write a KB file, entities sorted by id"""
    records = (
        kb.entities[entity_id].model_dump(mode="json", by_alias=True)
        for entity_id in sorted(kb.entities)
    )
    return write_jsonl(Path(path), records)


def resolve_entity(kb: KnowledgeBase, entity_id: str, context: str = "") -> EntityRecord:
    entity = kb.get(entity_id)
    if entity is None:
        raise UnknownEntityError(entity_id, context or kb.name)
    return entity


def load_mapping(path: Path) -> CrossKbMapping:
    """Load a line-delimited mapping file (source_id, target_id, target_types, target_description)"""
    path = Path(path)
    entries: Dict[str, MappingEntry] = {}
    for line_number, record in iter_json_lines(path, "mapping"):
        source_id = record.get("source_id")
        if not source_id:
            raise ParseError("mapping line has no source_id", line_number, str(path))
        if source_id in entries:
            raise DuplicateIdError(source_id, line_number)
        try:
            entries[source_id] = MappingEntry(
                target_id=record.get("target_id") or "",
                target_types=record.get("target_types") or [],
                target_description=record.get("target_description"),
            )
        except PydanticValidationError as e:
            raise ParseError(f"invalid mapping entry: {e.errors()[0]['msg']}", line_number, str(path)) from e
    logger.info(f"Loaded {len(entries)} mapping entries from {path}")
    return CrossKbMapping(entries=entries)


def load_gold_mapping(path: Path) -> Dict[str, str]:
    """Two-column tab-separated source_id, target_id"""
    path = Path(path)
    if not path.exists():
        raise MissingInputError("gold_mapping", str(path))
    gold: Dict[str, str] = {}
    with open(path, encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            columns = line.rstrip("\n").split("\t")
            if len(columns) != 2 or not columns[0] or not columns[1]:
                raise ParseError("expected two tab-separated columns", line_number, str(path))
            if columns[0] in gold:
                raise DuplicateIdError(columns[0], line_number)
            gold[columns[0]] = columns[1].strip()
    return gold


def _augment_entity(entity: EntityRecord, entry: MappingEntry, desc_word_limit: int) -> EntityRecord:
    types = list(dict.fromkeys([*entity.types, *entry.target_types]))
    description = entity.description
    if description is None and entry.target_description:
        description = first_words(entry.target_description, desc_word_limit) or None
    if types == entity.types and description == entity.description:
        return entity
    return entity.model_copy(update={"types": types, "description": description})


def apply_mapping(kb: KnowledgeBase, mapping: CrossKbMapping, desc_word_limit: int = 150) -> KnowledgeBase:
    """
    Augment types and descriptions of mapped entities

    Types are the original types followed by new target types (duplicates dropped).
    A description is only added when the entity has none: the first `desc_word_limit`
    whitespace words of the target description. Unmapped entities are left untouched.
    """
    entities = {}
    augmented = 0
    for entity_id, entity in kb.entities.items():
        entry = mapping.entries.get(entity_id)
        updated = _augment_entity(entity, entry, desc_word_limit) if entry else entity
        if updated is not entity:
            augmented += 1
        entities[entity_id] = updated
    logger.info(f"Augmented {augmented} of {len(kb)} entities in {kb.name}")
    return KnowledgeBase(name=kb.name, entities=entities)


def _require_gold(gold: Dict[str, str]):
    if not gold:
        raise DataValidationError("gold mapping is empty")


def mapping_accuracy(mapping: CrossKbMapping, gold: Dict[str, str]) -> float:
    """Fraction of gold keys whose mapped target equals the gold target; unmapped keys are misses"""
    _require_gold(gold)
    correct = 0
    for source_id, target_id in gold.items():
        entry = mapping.entries.get(source_id)
        if entry is not None and entry.target_id == target_id:
            correct += 1
    return correct / len(gold)


def integration_performance(mapping: CrossKbMapping, gold: Dict[str, str], target_kb: KnowledgeBase) -> float:
    """Fraction of gold keys whose predicted target shares at least one type with the gold target"""
    _require_gold(gold)
    hits = 0
    for source_id, target_id in gold.items():
        gold_types = set(resolve_entity(target_kb, target_id, "target KB (gold)").types)
        entry = mapping.entries.get(source_id)
        if entry is None:
            continue
        predicted = target_kb.get(entry.target_id)
        if predicted is not None and gold_types.intersection(predicted.types):
            hits += 1
    return hits / len(gold)


def kb_stats(kb: KnowledgeBase) -> KbStats:
    type_sizes = Counter(t for entity in kb.entities.values() for t in entity.types)
    median = float(statistics.median(type_sizes.values())) if type_sizes else None
    return KbStats(
        entity_count=len(kb),
        distinct_type_count=len(type_sizes),
        described_entity_count=sum(1 for e in kb.entities.values() if e.description is not None),
        median_entities_per_type=median,
    )


def augmentation_lift(before: KbStats, after: KbStats) -> AugmentationLift:
    """How much richer the augmented KB is"""
    type_factor = None
    if before.distinct_type_count:
        type_factor = after.distinct_type_count / before.distinct_type_count
    desc_factor = None
    if before.described_entity_count:
        desc_factor = after.described_entity_count / before.described_entity_count
    return AugmentationLift(
        type_increase_factor=type_factor,
        description_increase_factor=desc_factor,
        added_type_count=after.distinct_type_count - before.distinct_type_count,
        newly_described_count=after.described_entity_count - before.described_entity_count,
    )
