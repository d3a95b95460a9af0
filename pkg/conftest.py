"""Shared pytest fixtures"""

from typing import Dict, List, Optional

import pytest

from models import EntityRecord, KnowledgeBase, MentionSpan, SentenceGroup
from services.factory import ServiceRegistry
from services.fixtures import make_fixture


def entity(entity_id: str, name: str, aliases: Optional[List[str]] = None, types: Optional[List[str]] = None,
           description: Optional[str] = None) -> EntityRecord:
    return EntityRecord(id=entity_id, name=name, aliases=aliases or [], types=types or [], description=description)


def kb_of(*records: EntityRecord, name: str = "kb") -> KnowledgeBase:
    return KnowledgeBase(name=name, entities={r.id: r for r in records})


def group(doc_id: str, group_index: int, text: str, spans: Dict[tuple, str]) -> SentenceGroup:
    """Group from whitespace text; spans maps (start_word, end_word) -> gold id"""
    words = text.split()
    mentions = [
        MentionSpan(start_word=s, end_word=e, surface=" ".join(words[s:e]), gold_id=gold)
        for (s, e), gold in sorted(spans.items())
    ]
    return SentenceGroup(doc_id=doc_id, group_index=group_index, words=words, mentions=mentions)


@pytest.fixture(autouse=True)
def clean_registry():
    ServiceRegistry.clear_registry()
    yield
    ServiceRegistry.clear_registry()


@pytest.fixture
def disease_kb() -> KnowledgeBase:
    return kb_of(
        entity("C0011849", "Diabetes Mellitus", ["DM"], ["Disease or Syndrome"]),
        entity("C0011860", "Diabetes Mellitus, Non-Insulin-Dependent", ["Type 2 diabetes"], ["Disease or Syndrome"],
               "A subclass of diabetes mellitus that is not insulin-responsive."),
        entity("C0015846", "Diabetic Foot Ulcer", ["DFU"], ["Disease or Syndrome"]),
        entity("C0003962", "Asepsis", [], ["Therapeutic or Preventive Procedure"]),
        entity("C0009450", "Communicable Diseases", ["Infection"], ["Disease or Syndrome"]),
    )


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory):
    """The bundled synthetic fixture, generated once per session"""
    directory = tmp_path_factory.mktemp("fixture")
    make_fixture(directory)
    return directory
