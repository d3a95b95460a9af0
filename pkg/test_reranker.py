import math
import string

import numpy as np
import pytest

from conftest import entity, kb_of
from models import ENT_DESC, Candidate, CandidateSet, ContextWindow, MentionRef, Provenance, SequenceKind, TokenSequence
from services.base import DataValidationError, ParseError, UnknownEntityError
from services.interfaces import IScorer
from services.reranker import ReferenceScorer, ScoreFileScorer, load_scores, rerank, softmax, split_pair
from services.sequences import build_context_sequence, build_entity_sequence, build_pair_sequence

REF = MentionRef("d1", 0, 0)
WINDOW = ContextWindow(left_words=["patients", "with"], mention_words=["DFU"], right_words=["healed"])


class TableScorer(IScorer):
    """Scores looked up by entity id, optionally transformed"""

    def __init__(self, table, transform=lambda s: s):
        self.table = table
        self.transform = transform

    def score(self, pair, mention_ref=None, entity_id=None):
        return self.transform(self.table[entity_id])


def candidate_set(*ids):
    return CandidateSet(mention_ref=REF, candidates=[Candidate(i, 1.0) for i in sorted(ids)])


def ten_entity_kb():
    return kb_of(*(entity(f"E{i}", f"entity {i}") for i in range(10)))


@pytest.mark.parametrize("scores, expected", [
    ([0.0, 0.0], [0.5, 0.5]),
    ([math.log(2), 0.0], [2 / 3, 1 / 3]),
    ([1000.0, 0.0], [1.0, 0.0]),
])
def test_softmax(scores, expected):
    probabilities = softmax(scores)
    assert probabilities == pytest.approx(expected, abs=1e-9)
    assert probabilities.sum() == pytest.approx(1.0, abs=1e-9)


def test_softmax_on_random_scores():
    rng = np.random.default_rng(17)
    for _ in range(1000):
        size = int(rng.integers(1, 51))
        scale = 10.0 ** float(rng.uniform(-3, 3))
        scores = rng.normal(scale=scale, size=size)
        probabilities = softmax(scores.tolist())
        assert np.isfinite(probabilities).all()
        assert ((probabilities >= 0.0) & (probabilities <= 1.0)).all()
        assert probabilities.sum() == pytest.approx(1.0, abs=1e-9)

        shift = float(rng.uniform(-1000.0, 1000.0))
        assert softmax((scores + shift).tolist()) == pytest.approx(probabilities, abs=1e-9)
        factor = float(rng.uniform(0.1, 10.0))
        assert int(np.argmax(softmax((factor * scores + shift).tolist()))) == int(np.argmax(scores))


@pytest.mark.parametrize("scores", [[], [1.0, float("nan")], [float("inf")]])
def test_softmax_rejects_bad_input(scores):
    with pytest.raises(ValueError):
        softmax(scores)


def test_single_candidate_has_probability_one():
    kb = kb_of(entity("E1", "Diabetic Foot Ulcer"))
    result = rerank(candidate_set("E1"), WINDOW, kb, TableScorer({"E1": -3.0}))
    assert result.prediction.entity_id == "E1"
    assert result.prediction.probability == pytest.approx(1.0)
    assert result.prediction.provenance == Provenance.MODEL
    assert result.prediction.surface == "DFU"
    assert result.prediction.mention_ref == REF


def test_identical_scores_pick_lowest_id():
    kb = ten_entity_kb()
    result = rerank(candidate_set(*kb.entities), WINDOW, kb, TableScorer({i: 0.7 for i in kb.entities}))
    assert result.prediction.entity_id == "E0"
    assert [p for _, p in result.probabilities] == pytest.approx([0.1] * 10)


def test_argmax_invariant_under_positive_affine_transforms():
    kb = ten_entity_kb()
    rng = np.random.default_rng(4)
    table = {entity_id: float(rng.normal()) for entity_id in kb.entities}
    cs = candidate_set(*kb.entities)
    base = rerank(cs, WINDOW, kb, TableScorer(table))
    shifted = rerank(cs, WINDOW, kb, TableScorer(table, lambda s: s + 17.0))
    scaled = rerank(cs, WINDOW, kb, TableScorer(table, lambda s: 3.0 * s - 2.0))
    assert shifted.prediction.entity_id == base.prediction.entity_id == scaled.prediction.entity_id
    assert [p for _, p in shifted.probabilities] == pytest.approx([p for _, p in base.probabilities], abs=1e-12)
    assert sum(p for _, p in scaled.probabilities) == pytest.approx(1.0, abs=1e-9)
    assert base.prediction.entity_id in cs.entity_ids


def test_rerank_result_probability_lookup():
    kb = ten_entity_kb()
    result = rerank(candidate_set("E1", "E2"), WINDOW, kb, TableScorer({"E1": math.log(3), "E2": 0.0}))
    assert result.prediction.entity_id == "E1"
    assert result.probability_of("E1") == pytest.approx(0.75)
    assert result.probability_of("E9") == 0.0


def test_rerank_errors():
    kb = ten_entity_kb()
    with pytest.raises(UnknownEntityError):
        rerank(candidate_set("E1", "X404"), WINDOW, kb, TableScorer({"E1": 1.0, "X404": 1.0}))
    with pytest.raises(DataValidationError):
        rerank(CandidateSet(mention_ref=REF), WINDOW, kb, TableScorer({}))


def test_reference_scorer_self_similarity_is_one():
    ctx = build_context_sequence(ContextWindow(mention_words=["foot", "ulcer"]))
    ent = build_entity_sequence(entity("E1", "Foot Ulcer"))
    assert ReferenceScorer().score(build_pair_sequence(ctx, ent)) == pytest.approx(1.0, abs=1e-9)


def test_reference_scorer_is_symmetric():
    left, right = ["severe", "foot", "ulcer"], ["diabetic", "ulcer", "wound"]
    pair = TokenSequence(tokens=[*left, ENT_DESC, *right], kind=SequenceKind.PAIR, max_len=16)
    swapped = TokenSequence(tokens=[*right, ENT_DESC, *left], kind=SequenceKind.PAIR, max_len=16)
    scorer = ReferenceScorer(dim=128, seed=3)
    assert scorer.score(pair) == pytest.approx(scorer.score(swapped), abs=1e-12)


def test_reference_scorer_unrelated_tokens_score_low():
    rng = np.random.default_rng(21)
    letters = np.array(list(string.ascii_lowercase))
    scorer = ReferenceScorer()

    def random_words():
        return ["".join(rng.choice(letters, size=8)) for _ in range(5)]

    scores = []
    for _ in range(100):
        pair = TokenSequence(tokens=[*random_words(), ENT_DESC, *random_words()], kind=SequenceKind.PAIR, max_len=11)
        scores.append(scorer.score(pair))
    # unrelated features still share buckets, which pulls cosines slightly above zero
    assert max(abs(s) for s in scores) < 0.5
    assert np.mean(scores) < 0.25


def test_split_pair_requires_description_marker():
    ctx = build_context_sequence(ContextWindow(mention_words=["x"]))
    with pytest.raises(DataValidationError):
        split_pair(ctx)


def test_score_file_scorer(tmp_path):
    path = tmp_path / "scores.tsv"
    path.write_text("d1:0:0\tE1\t2.5\nd1:0:0\tE2\t-1\n", encoding="utf-8")
    scorer = ScoreFileScorer.from_file(path)
    kb = ten_entity_kb()
    result = rerank(candidate_set("E1", "E2"), WINDOW, kb, scorer)
    assert result.prediction.entity_id == "E1"
    with pytest.raises(UnknownEntityError):
        rerank(candidate_set("E1", "E3"), WINDOW, kb, scorer)


@pytest.mark.parametrize("content, line", [
    ("d1:0:0\tE1\n", 1),
    ("d1:0:0\tE1\t1.0\nd1:0:0\tE2\tabc\n", 2),
    ("d1:0:0\tE1\tinf\n", 1),
])
def test_load_scores_errors(tmp_path, content, line):
    path = tmp_path / "scores.tsv"
    path.write_text(content, encoding="utf-8")
    with pytest.raises(ParseError) as info:
        load_scores(path)
    assert info.value.line_number == line
