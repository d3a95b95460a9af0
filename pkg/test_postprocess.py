import numpy as np
import pytest

from conftest import entity, kb_of
from models import Candidate, CandidateSet, MentionRef, Prediction, Provenance, RerankResult
from services.base import ParseError
from services.postprocess import (
    backoff, load_predictions, postprocess_predictions, string_similarity, synthesize_document, write_predictions,
)

SEPSIS_KB = kb_of(
    entity("E1", "Sepsis", types=["Disease or Syndrome"]),
    entity("E2", "Asepsis", types=["Therapeutic or Preventive Procedure"]),
    entity("E3", "Diabetic Foot Ulcer", ["DFU"]),
    entity("E4", "DF 118", ["dihydrocodeine"]),
)


def prediction(mention_index, surface, entity_id, probability, doc_id="d1", group_index=0,
               provenance=Provenance.MODEL):
    return Prediction(mention_ref=MentionRef(doc_id, group_index, mention_index), surface=surface,
                      entity_id=entity_id, probability=probability, provenance=provenance)


def candidates(ref, scored):
    ordered = sorted(scored.items(), key=lambda item: (-item[1], item[0]))
    return CandidateSet(mention_ref=ref, candidates=[Candidate(i, s) for i, s in ordered])


@pytest.mark.parametrize("a, b, expected", [
    ("Sepsis", "sepsis", 1.0),
    ("abc", "abd", 1 - 1 / 3),
    ("", "x", 0.0),
    ("", "", 1.0),
    ("sepsis", "Asepsis", 6 / 7),
    ("foot  ulcer", "Foot Ulcer", 1.0),
])
def test_string_similarity(a, b, expected):
    assert string_similarity(a, b) == pytest.approx(expected, abs=1e-9)


def edit_distance(a, b):
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            current.append(min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + (ca != cb)))
        previous = current
    return previous[-1]


def folded_similarity(a, b):
    fa, fb = " ".join(a.casefold().split()), " ".join(b.casefold().split())
    longest = max(len(fa), len(fb))
    return 1.0 if longest == 0 else 1.0 - edit_distance(fa, fb) / longest


def random_text(rng, alphabet, max_length):
    return "".join(rng.choice(list(alphabet), size=int(rng.integers(0, max_length + 1))))


def test_string_similarity_matches_edit_distance_oracle():
    rng = np.random.default_rng(5)
    alphabet = "abcdeAB  "
    for _ in range(1000):
        a = random_text(rng, alphabet, 64)
        if a and rng.random() < 0.5:
            chars = list(a)
            for _ in range(int(rng.integers(1, 6))):
                chars[int(rng.integers(len(chars)))] = str(rng.choice(list(alphabet)))
            b = "".join(chars)
        else:
            b = random_text(rng, alphabet, 64)
        assert abs(string_similarity(a, b) - folded_similarity(a, b)) <= 1e-12, (a, b)


def test_backoff_keeps_confident_prediction():
    pred = prediction(0, "sepsis", "E2", 0.60)
    cs = candidates(pred.mention_ref, {"E1": 0.5, "E2": 0.6})
    assert backoff(pred, {"E1": 0.4, "E2": 0.6}, cs, SEPSIS_KB, 0.55) == pred


def test_backoff_picks_textually_closest_candidate():
    pred = prediction(0, "sepsis", "E2", 0.40)
    cs = candidates(pred.mention_ref, {"E1": 0.5, "E2": 0.6})
    changed = backoff(pred, [("E2", 0.40), ("E1", 0.35)], cs, SEPSIS_KB, 0.45)
    assert changed.entity_id == "E1"
    assert changed.provenance == Provenance.BACKOFF
    assert changed.probability == pytest.approx(0.35)
    assert changed.mention_ref == pred.mention_ref


def test_backoff_matches_aliases():
    pred = prediction(0, "dfu", "E4", 0.2)
    cs = candidates(pred.mention_ref, {"E3": 0.1, "E4": 0.3})
    assert backoff(pred, {"E3": 0.1, "E4": 0.2}, cs, SEPSIS_KB, 0.5).entity_id == "E3"


def test_backoff_ties_prefer_model_probability_then_id():
    kb = kb_of(entity("A", "Ulcer"), entity("B", "Ulcer"), entity("C", "Asepsis"))
    pred = prediction(0, "ulcer", "C", 0.3)
    cs = candidates(pred.mention_ref, {"A": 0.1, "B": 0.2, "C": 0.3})
    assert backoff(pred, {"A": 0.2, "B": 0.3, "C": 0.5}, cs, kb, 0.9).entity_id == "B"
    assert backoff(pred, {"A": 0.25, "B": 0.25, "C": 0.5}, cs, kb, 0.9).entity_id == "A"


@pytest.mark.parametrize("probability", [0.0, 0.3, 0.999999])
def test_backoff_boundaries(probability):
    pred = prediction(0, "sepsis", "E2", probability)
    cs = candidates(pred.mention_ref, {"E1": 0.5, "E2": 0.6})
    probabilities = {"E1": 0.0, "E2": probability}
    assert backoff(pred, probabilities, cs, SEPSIS_KB, 0.0) == pred
    assert backoff(pred, probabilities, cs, SEPSIS_KB, 1.0).provenance == Provenance.BACKOFF


def test_backoff_at_threshold_one_leaves_certain_predictions():
    pred = prediction(0, "sepsis", "E2", 1.0)
    cs = candidates(pred.mention_ref, {"E1": 0.5, "E2": 0.6})
    assert backoff(pred, {"E2": 1.0}, cs, SEPSIS_KB, 1.0) == pred


def test_synthesis_maps_repeats_to_most_frequent_prediction():
    preds = [
        prediction(0, "DFU", "E3", 0.6),
        prediction(1, "DFU", "E3", 0.5),
        prediction(2, "dfu", "E4", 0.7),
    ]
    result = synthesize_document(preds, {preds[2].mention_ref: {"E3": 0.2, "E4": 0.7}})
    assert [p.entity_id for p in result] == ["E3", "E3", "E3"]
    assert result[0] == preds[0]
    assert result[2].provenance == Provenance.SYNTHESIS
    assert result[2].probability == pytest.approx(0.2)


def test_synthesis_without_probabilities_keeps_old_probability():
    preds = [prediction(0, "DFU", "E3", 0.6), prediction(1, "DFU", "E3", 0.5), prediction(2, "DFU", "E4", 0.7)]
    assert synthesize_document(preds)[2].probability == pytest.approx(0.7)


def test_synthesis_leaves_singletons_and_other_surfaces():
    preds = [prediction(0, "DFU", "E3", 0.6), prediction(1, "DFS", "E4", 0.6)]
    assert synthesize_document(preds) == preds


def test_synthesis_tie_goes_to_larger_probability_mass():
    preds = [
        prediction(0, "ulcer", "B", 0.5),
        prediction(1, "ulcer", "A", 0.4),
        prediction(2, "ulcer", "B", 0.8),
        prediction(3, "ulcer", "A", 0.5),
    ]
    result = synthesize_document(preds)
    assert {p.entity_id for p in result} == {"B"}
    assert [p.provenance for p in result] == [
        Provenance.MODEL, Provenance.SYNTHESIS, Provenance.MODEL, Provenance.SYNTHESIS,
    ]


def test_synthesis_full_tie_goes_to_lower_id():
    preds = [prediction(0, "ulcer", "B", 0.5), prediction(1, "ulcer", "A", 0.5)]
    assert {p.entity_id for p in synthesize_document(preds)} == {"A"}


def test_synthesis_is_idempotent():
    preds = [
        prediction(0, "DFU", "E3", 0.6), prediction(1, "DFU", "E4", 0.5), prediction(2, "DFU", "E4", 0.4),
        prediction(3, "sepsis", "E1", 0.9), prediction(4, "Sepsis", "E2", 0.95),
    ]
    once = synthesize_document(preds)
    assert synthesize_document(once) == once


def rerank_result(pred, probabilities):
    return RerankResult(prediction=pred, probabilities=list(probabilities.items()))


def test_postprocess_predictions_runs_backoff_then_synthesis():
    model = [
        prediction(2, "sepsis", "E2", 0.40),
        prediction(0, "sepsis", "E2", 0.40),
        prediction(1, "sepsis", "E1", 0.90),
        prediction(0, "Asepsis", "E2", 0.90, doc_id="d0"),
    ]
    results = {
        model[0].mention_ref: rerank_result(model[0], {"E2": 0.40, "E1": 0.30}),
        model[1].mention_ref: rerank_result(model[1], {"E2": 0.40, "E1": 0.35}),
        model[2].mention_ref: rerank_result(model[2], {"E1": 0.90, "E2": 0.10}),
        model[3].mention_ref: rerank_result(model[3], {"E2": 0.90, "E1": 0.10}),
    }
    sets = {ref: candidates(ref, dict(result.probabilities)) for ref, result in results.items()}

    final = postprocess_predictions(model, results, sets, SEPSIS_KB, threshold=0.55)
    assert [p.mention_ref.key for p in final] == ["d0:0:0", "d1:0:0", "d1:0:1", "d1:0:2"]
    assert [p.entity_id for p in final] == ["E2", "E1", "E1", "E1"]
    assert [p.provenance for p in final] == [
        Provenance.MODEL, Provenance.BACKOFF, Provenance.MODEL, Provenance.BACKOFF,
    ]
    assert final[1].probability == pytest.approx(0.35)

    synthesis_only = postprocess_predictions(model, results, sets, SEPSIS_KB, 0.55, use_backoff=False)
    assert [p.entity_id for p in synthesis_only] == ["E2", "E2", "E2", "E2"]
    assert synthesis_only[2].provenance == Provenance.SYNTHESIS
    assert synthesis_only[2].probability == pytest.approx(0.10)

    untouched = postprocess_predictions(model, results, sets, SEPSIS_KB, 0.55, use_backoff=False, use_synthesis=False)
    assert untouched == sorted(model, key=lambda p: p.mention_ref)


def test_prediction_file_round_trip(tmp_path):
    preds = [prediction(0, "DFU", "E3", 0.1234567891234), prediction(1, "sepsis", "E1", 0.5, provenance=Provenance.BACKOFF)]
    path = tmp_path / "predictions.jsonl"
    assert write_predictions(preds, path) == 2
    loaded = load_predictions(path)
    assert loaded[0].probability == 0.123456789
    assert loaded[1] == preds[1]


def test_load_predictions_rejects_bad_provenance(tmp_path):
    path = tmp_path / "predictions.jsonl"
    path.write_text('{"mention": "d:0:0", "entity_id": "E1", "probability": 0.5, "provenance": "guess"}\n',
                    encoding="utf-8")
    with pytest.raises(ParseError):
        load_predictions(path)


def test_backoff_thresholds_on_random_mentions():
    rng = np.random.default_rng(31)
    syllables = ["ka", "lo", "mi", "ra", "ven", "tor", "zel", "sep", "sis", "ul"]

    def coined(parts):
        return "".join(rng.choice(syllables, size=parts))

    kb = kb_of(*(
        entity(f"E{i:02d}", coined(int(rng.integers(1, 4))), [coined(2)] if rng.random() < 0.3 else None)
        for i in range(40)
    ))
    ids = sorted(kb.entities)

    for index in range(500):
        size = int(rng.integers(1, 11))
        chosen = [str(i) for i in rng.choice(ids, size=size, replace=False)]
        weights = rng.dirichlet(np.ones(size)) if size > 1 else np.array([1.0])
        probabilities = {entity_id: float(w) for entity_id, w in zip(chosen, weights)}
        model_id = min(chosen, key=lambda e: (-probabilities[e], e))
        if rng.random() < 0.5:
            surface = kb.entities[str(rng.choice(ids))].canonical_name.upper()
        else:
            surface = coined(int(rng.integers(1, 4)))
        pred = prediction(index, surface, model_id, probabilities[model_id])
        cs = candidates(pred.mention_ref, {entity_id: float(rng.random()) for entity_id in chosen})

        assert backoff(pred, probabilities, cs, kb, 0.0) == pred
        changed = backoff(pred, probabilities, cs, kb, 1.0)
        if pred.probability >= 1.0:
            assert changed == pred
            continue
        expected = min(chosen, key=lambda e: (
            -max(folded_similarity(surface, name) for name in kb.entities[e].names), -probabilities[e], e))
        assert changed.entity_id == expected
        assert changed.provenance == Provenance.BACKOFF
        assert changed.probability == pytest.approx(probabilities[expected])
