import json

import pytest

from conftest import entity, kb_of
from models import CrossKbMapping, MappingEntry
from services.base import DataValidationError, DuplicateIdError, MissingInputError, ParseError, UnknownEntityError
from services.knowledge_base import (
    apply_mapping, augmentation_lift, integration_performance, kb_stats, load_gold_mapping, load_kb, load_mapping,
    mapping_accuracy, resolve_entity, write_kb,
)


def write_lines(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


def test_load_kb_reads_every_record(tmp_path):
    path = write_lines(tmp_path / "kb.jsonl", [
        {"id": "C1", "name": "Asepsis", "types": ["Therapeutic or Preventive Procedure"]},
        {"id": "C2", "name": "Diabetic Foot Ulcer", "aliases": ["DFU", "DFU"], "types": ["Disease or Syndrome"]},
        {"id": "C3", "name": "Infection", "description": "  "},
    ])
    kb = load_kb(path)
    assert len(kb) == 3
    assert kb.name == "kb"
    assert kb.entities["C2"].aliases == ["DFU"]
    assert kb.entities["C3"].description is None
    assert kb.entities["C2"].names == ["Diabetic Foot Ulcer", "DFU"]


def test_load_kb_rejects_duplicate_ids(tmp_path):
    path = write_lines(tmp_path / "kb.jsonl", [{"id": "C1", "name": "A"}, {"id": "C1", "name": "B"}])
    with pytest.raises(DuplicateIdError) as info:
        load_kb(path)
    assert info.value.entity_id == "C1"
    assert info.value.line_number == 2


@pytest.mark.parametrize("line", [
    "not json",
    json.dumps({"id": "C1"}),
    json.dumps({"id": "C1", "name": "   "}),
    json.dumps({"id": "C1", "name": "Bad [SEP] name"}),
    json.dumps(["C1", "name"]),
])
def test_load_kb_reports_malformed_line(tmp_path, line):
    path = tmp_path / "kb.jsonl"
    path.write_text(json.dumps({"id": "C0", "name": "ok"}) + "\n" + line + "\n", encoding="utf-8")
    with pytest.raises(ParseError) as info:
        load_kb(path)
    assert info.value.line_number == 2


def test_load_kb_missing_file(tmp_path):
    with pytest.raises(MissingInputError):
        load_kb(tmp_path / "absent.jsonl")


def test_write_kb_round_trips_sorted(tmp_path, disease_kb):
    path = tmp_path / "out.jsonl"
    write_kb(disease_kb, path)
    ids = [json.loads(line)["id"] for line in path.read_text(encoding="utf-8").splitlines()]
    assert ids == sorted(disease_kb.entities)
    assert load_kb(path).entities == disease_kb.entities


def test_resolve_entity_unknown(disease_kb):
    with pytest.raises(UnknownEntityError) as info:
        resolve_entity(disease_kb, "C9999999")
    assert info.value.entity_id == "C9999999"


def test_apply_mapping_adds_target_types_and_keeps_existing_description():
    kb = kb_of(
        entity("C0011860", "Type 2 diabetes", types=["Disease or Syndrome"], description="Original text."),
        entity("C0000001", "Unmapped", types=["Finding"]),
    )
    mapping = CrossKbMapping(entries={
        "C0011860": MappingEntry(target_id="Q3025883", target_types=["endocrine system disease", "Disease or Syndrome"],
                                 target_description="long target description"),
    })
    augmented = apply_mapping(kb, mapping)
    assert augmented.entities["C0011860"].types == ["Disease or Syndrome", "endocrine system disease"]
    assert augmented.entities["C0011860"].description == "Original text."
    assert augmented.entities["C0000001"] == kb.entities["C0000001"]


def test_apply_mapping_truncates_new_descriptions():
    kb = kb_of(entity("C1", "Asepsis", types=["Procedure"]))
    words = " ".join(f"w{i}" for i in range(200))
    mapping = CrossKbMapping(entries={"C1": MappingEntry(target_id="Q1", target_description=words)})
    augmented = apply_mapping(kb, mapping, desc_word_limit=150)
    assert augmented.entities["C1"].description.split() == [f"w{i}" for i in range(150)]


def test_apply_mapping_is_idempotent(tmp_path):
    kb = kb_of(entity("C1", "A", types=["Disease or Syndrome"]), entity("C2", "B"))
    mapping = CrossKbMapping(entries={
        "C1": MappingEntry(target_id="Q1", target_types=["rare disease"], target_description="a rare one"),
        "C2": MappingEntry(target_id="Q2", target_types=["symptom"]),
    })
    once = apply_mapping(kb, mapping)
    twice = apply_mapping(once, mapping)
    write_kb(once, tmp_path / "once.jsonl")
    write_kb(twice, tmp_path / "twice.jsonl")
    assert (tmp_path / "once.jsonl").read_bytes() == (tmp_path / "twice.jsonl").read_bytes()


def test_load_mapping_and_gold(tmp_path):
    mapping_path = write_lines(tmp_path / "mapping.jsonl", [
        {"source_id": "C1", "target_id": "Q1", "target_types": ["a", "a", "b"]},
        {"source_id": "C2", "target_id": "Q2"},
    ])
    mapping = load_mapping(mapping_path)
    assert mapping.entries["C1"].target_types == ["a", "b"]
    assert mapping.entries["C2"].target_description is None

    gold_path = tmp_path / "gold.tsv"
    gold_path.write_text("C1\tQ1\n\nC2\tQ9\n", encoding="utf-8")
    assert load_gold_mapping(gold_path) == {"C1": "Q1", "C2": "Q9"}


def test_load_mapping_requires_target(tmp_path):
    path = write_lines(tmp_path / "mapping.jsonl", [{"source_id": "C1"}])
    with pytest.raises(ParseError):
        load_mapping(path)


def test_load_gold_mapping_rejects_bad_columns(tmp_path):
    path = tmp_path / "gold.tsv"
    path.write_text("C1\tQ1\nC2 Q2\n", encoding="utf-8")
    with pytest.raises(ParseError) as info:
        load_gold_mapping(path)
    assert info.value.line_number == 2


def test_mapping_accuracy_and_integration_performance():
    mapping = CrossKbMapping(entries={
        "C1": MappingEntry(target_id="Q1"),
        "C2": MappingEntry(target_id="Q5"),
        "C3": MappingEntry(target_id="Q7"),
    })
    gold = {"C1": "Q1", "C2": "Q2", "C3": "Q3", "C4": "Q4"}
    target = kb_of(
        entity("Q1", "one", types=["disease"]),
        entity("Q2", "two", types=["rare disease", "genetic disorder"]),
        entity("Q3", "three", types=["symptom"]),
        entity("Q4", "four", types=["cancer"]),
        entity("Q5", "five", types=["genetic disorder"]),
        entity("Q7", "seven", types=["medication"]),
    )
    assert mapping_accuracy(mapping, gold) == pytest.approx(0.25)
    # C1 exact, C2 shares "genetic disorder", C3 shares nothing, C4 unmapped
    assert integration_performance(mapping, gold, target) == pytest.approx(0.5)


def test_integration_performance_needs_gold_targets_in_target_kb():
    mapping = CrossKbMapping(entries={"C1": MappingEntry(target_id="Q1")})
    with pytest.raises(UnknownEntityError):
        integration_performance(mapping, {"C1": "Q404"}, kb_of(entity("Q1", "one")))


def test_empty_gold_is_rejected():
    with pytest.raises(DataValidationError):
        mapping_accuracy(CrossKbMapping(), {})


def test_kb_stats_and_lift():
    before = kb_of(
        entity("C1", "a", types=["T1"]),
        entity("C2", "b", types=["T1", "T2"], description="described"),
        entity("C3", "c", types=["T2"]),
    )
    after = kb_of(
        entity("C1", "a", types=["T1", "T3"], description="new"),
        entity("C2", "b", types=["T1", "T2"], description="described"),
        entity("C3", "c", types=["T2", "T4"]),
    )
    stats = kb_stats(before)
    assert stats.entity_count == 3
    assert stats.distinct_type_count == 2
    assert stats.described_entity_count == 1
    assert stats.median_entities_per_type == 2.0

    lift = augmentation_lift(stats, kb_stats(after))
    assert lift.type_increase_factor == pytest.approx(2.0)
    assert lift.description_increase_factor == pytest.approx(2.0)
    assert lift.added_type_count == 2
    assert lift.newly_described_count == 1


def test_lift_undefined_without_baseline():
    empty = kb_stats(kb_of(entity("C1", "a")))
    lift = augmentation_lift(empty, empty)
    assert lift.type_increase_factor is None
    assert lift.description_increase_factor is None
