"""
Pydantic models for the entity disambiguation toolkit.
Knowledge-base records, corpora, token sequences, candidates, predictions, reports and pipeline configuration.
"""

import os
from enum import Enum
from typing import Any, Dict, List, Literal, NamedTuple, Optional, Set, Tuple

from pydantic import BaseModel, ConfigDict, Field, RootModel, field_validator, model_validator

# Marker spellings are part of the sequence file contract
CLS = "[CLS]"
SEP = "[SEP]"
ENT_START = "[ENT_START]"
ENT_END = "[ENT_END]"
ENT_DESC = "[ENT_DESC]"
RESERVED_MARKERS = (CLS, SEP, ENT_START, ENT_END, ENT_DESC)


def contains_marker(text: str) -> bool:
    return any(marker in text for marker in RESERVED_MARKERS)


# ---------------------------------------------------------------------------
# Knowledge base
# ---------------------------------------------------------------------------

class EntityRecord(BaseModel):
    """One KB concept"""
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    id: str = Field(min_length=1)
    canonical_name: str = Field(alias="name")
    aliases: List[str] = []
    types: List[str] = []
    description: Optional[str] = None
    source_vocab: Optional[str] = None

    @model_validator(mode="before")
    @classmethod
    def _normalize(cls, data):
        if not isinstance(data, dict):
            return data
        data = dict(data)
        name = data.get("canonical_name", data.get("name"))
        data["aliases"] = [a for a in dict.fromkeys(data.get("aliases") or []) if a != name]
        data["types"] = list(dict.fromkeys(data.get("types") or []))
        description = data.get("description")
        if description is not None and not description.strip():
            data["description"] = None
        return data

    @field_validator("canonical_name")
    @classmethod
    def _name_not_blank(cls, value: str) -> str:
        if not value.strip():
            raise ValueError("canonical name must be non-empty")
        return value

    @model_validator(mode="after")
    def _no_markers(self):
        fields = [self.canonical_name, *self.aliases, *self.types, self.description or ""]
        for value in fields:
            if contains_marker(value):
                raise ValueError(f"entity {self.id} contains a reserved marker token: {value!r}")
        return self

    @property
    def names(self) -> List[str]:
        """Canonical name followed by aliases"""
        return [self.canonical_name, *self.aliases]


class KnowledgeBase(BaseModel):
    """Immutable id -> EntityRecord catalog"""
    model_config = ConfigDict(frozen=True)

    name: str = "kb"
    entities: Dict[str, EntityRecord] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _keys_match_ids(self):
        for key, record in self.entities.items():
            if key != record.id:
                raise ValueError(f"entity stored under {key!r} has id {record.id!r}")
        return self

    def get(self, entity_id: str) -> Optional[EntityRecord]:
        return self.entities.get(entity_id)

    def __contains__(self, entity_id: str) -> bool:
        return entity_id in self.entities

    def __len__(self) -> int:
        return len(self.entities)


class MappingEntry(BaseModel):
    """Counterpart of one source entity in the target KB"""
    model_config = ConfigDict(frozen=True)

    target_id: str = Field(min_length=1)
    target_types: List[str] = []
    target_description: Optional[str] = None

    @field_validator("target_types")
    @classmethod
    def _dedupe_types(cls, value: List[str]) -> List[str]:
        return list(dict.fromkeys(value))


class CrossKbMapping(BaseModel):
    model_config = ConfigDict(frozen=True)

    entries: Dict[str, MappingEntry] = Field(default_factory=dict)


class KbStats(BaseModel):
    entity_count: int
    distinct_type_count: int
    described_entity_count: int
    median_entities_per_type: Optional[float] = None


class AugmentationLift(BaseModel):
    """Before/after comparison of an augmented KB"""
    type_increase_factor: Optional[float] = None
    description_increase_factor: Optional[float] = None
    added_type_count: int = 0
    newly_described_count: int = 0


class KbAugmentReport(BaseModel):
    before: KbStats
    after: KbStats
    lift: AugmentationLift
    mapping_accuracy: Optional[float] = None
    integration_performance: Optional[float] = None


# ---------------------------------------------------------------------------
# Corpora
# ---------------------------------------------------------------------------

class SplitLabel(str, Enum):
    TRAIN = "train"
    DEV = "dev"
    TEST = "test"
    PRETRAIN = "pretrain"


class RawMention(BaseModel):
    """Character-offset mention; more than one gold id marks a composite mention"""
    start_char: int = Field(ge=0)
    end_char: int
    gold_ids: List[str] = Field(min_length=1)
    sub_spans: Optional[List[Tuple[int, int]]] = None

    @model_validator(mode="after")
    def _ordered(self):
        if self.end_char <= self.start_char:
            raise ValueError(f"mention end {self.end_char} must exceed start {self.start_char}")
        return self


class RawDocument(BaseModel):
    doc_id: str = Field(min_length=1)
    text: str
    char_mentions: List[RawMention] = []

    @model_validator(mode="after")
    def _within_text(self):
        if contains_marker(self.text):
            raise ValueError(f"document {self.doc_id} contains a reserved marker token")
        for mention in self.char_mentions:
            if mention.end_char > len(self.text):
                raise ValueError(
                    f"document {self.doc_id}: mention [{mention.start_char},{mention.end_char}) "
                    f"exceeds text length {len(self.text)}"
                )
        return self


class DocMention(BaseModel):
    """Word span in document-global word indices"""
    model_config = ConfigDict(frozen=True)

    start_word: int = Field(ge=0)
    end_word: int
    gold_id: str


class DocumentWords(BaseModel):
    """Sentence word arrays of one document plus its aligned mentions"""
    doc_id: str
    sentences: List[List[str]]
    mentions: List[DocMention] = []
    dropped_invalid: int = 0


class MentionSpan(BaseModel):
    model_config = ConfigDict(frozen=True)

    start_word: int = Field(ge=0)
    end_word: int
    surface: str
    gold_id: str = Field(min_length=1)

    @model_validator(mode="after")
    def _ordered(self):
        if self.end_word <= self.start_word:
            raise ValueError(f"span [{self.start_word},{self.end_word}) is empty")
        return self

    @property
    def length(self) -> int:
        return self.end_word - self.start_word


class SentenceGroup(BaseModel):
    model_config = ConfigDict(frozen=True)

    doc_id: str = Field(min_length=1)
    group_index: int = Field(ge=0)
    words: List[str] = Field(min_length=1)
    mentions: List[MentionSpan] = []

    @model_validator(mode="after")
    def _spans_inside(self):
        for word in self.words:
            if contains_marker(word):
                raise ValueError(f"group {self.doc_id}/{self.group_index} contains a reserved marker token")
        for mention in self.mentions:
            if mention.end_word > len(self.words):
                raise ValueError(
                    f"group {self.doc_id}/{self.group_index}: span [{mention.start_word},{mention.end_word}) "
                    f"exceeds {len(self.words)} words"
                )
            expected = " ".join(self.words[mention.start_word:mention.end_word])
            if mention.surface != expected:
                raise ValueError(f"surface {mention.surface!r} does not match covered words {expected!r}")
        return self

    def to_record(self) -> dict:
        """File form: surfaces are implied by the words"""
        return {
            "doc_id": self.doc_id,
            "group_index": self.group_index,
            "words": list(self.words),
            "mentions": [
                {"start_word": m.start_word, "end_word": m.end_word, "gold_id": m.gold_id}
                for m in self.mentions
            ],
        }

    @classmethod
    def from_record(cls, record: dict) -> "SentenceGroup":
        words = record.get("words") or []
        mentions = [
            MentionSpan(
                start_word=m["start_word"],
                end_word=m["end_word"],
                surface=" ".join(words[m["start_word"]:m["end_word"]]),
                gold_id=m["gold_id"],
            )
            for m in record.get("mentions") or []
        ]
        return cls(doc_id=record["doc_id"], group_index=record["group_index"], words=words, mentions=mentions)


class MentionRef(NamedTuple):
    doc_id: str
    group_index: int
    mention_index: int

    @property
    def key(self) -> str:
        return f"{self.doc_id}:{self.group_index}:{self.mention_index}"

    @classmethod
    def from_key(cls, key: str) -> "MentionRef":
        """Inverse of `key`; doc ids may themselves contain colons"""
        doc_id, group_index, mention_index = key.rsplit(":", 2)
        return cls(doc_id, int(group_index), int(mention_index))


def _group_key(group) -> Tuple[str, int]:
    if isinstance(group, dict):
        return group["doc_id"], group["group_index"]
    return group.doc_id, group.group_index


class AnnotatedCorpus(BaseModel):
    """Sentence groups of one split, always ordered by (doc_id, group_index)"""
    model_config = ConfigDict(frozen=True)

    groups: List[SentenceGroup] = []
    split_label: SplitLabel = SplitLabel.TRAIN

    @model_validator(mode="before")
    @classmethod
    def _sort_groups(cls, data):
        if isinstance(data, dict) and data.get("groups"):
            data = dict(data)
            data["groups"] = sorted(data["groups"], key=_group_key)
        return data

    @model_validator(mode="after")
    def _unique_groups(self):
        seen: Set[Tuple[str, int]] = set()
        for group in self.groups:
            key = (group.doc_id, group.group_index)
            if key in seen:
                raise ValueError(f"duplicate sentence group {key}")
            seen.add(key)
        return self

    def iter_mentions(self):
        """Yield (MentionRef, group, mention) in corpus order"""
        for group in self.groups:
            for index, mention in enumerate(group.mentions):
                yield MentionRef(group.doc_id, group.group_index, index), group, mention

    @property
    def doc_ids(self) -> Set[str]:
        return {group.doc_id for group in self.groups}


class DropCounts(BaseModel):
    """Mentions removed per preprocessing rule"""
    invalid_span: int = 0
    composite_unsplit: int = 0
    cross_group: int = 0
    overlapping: int = 0
    unknown_entity: int = 0
    unlinkable: int = 0

    def merged(self, other: "DropCounts") -> "DropCounts":
        return DropCounts(**{name: getattr(self, name) + getattr(other, name) for name in DropCounts.model_fields})

    @property
    def total(self) -> int:
        return sum(getattr(self, name) for name in DropCounts.model_fields)


class AbbreviationExpansion(BaseModel):
    expanded_text: str
    pairs: List[Tuple[str, str]] = []
    # (start, end, long form) in original-text offsets, ascending
    replacements: List[Tuple[int, int, str]] = []


class AmbiguityStats(BaseModel):
    unique_mention_count: int
    ambiguous_mention_count: int
    ambiguous_fraction_of_unique_mentions: float
    min_ambiguity: Optional[float] = None
    median_ambiguity: Optional[float] = None
    max_ambiguity: Optional[float] = None


class CorpusStats(BaseModel):
    documents: int
    sentence_groups: int
    mentions: int
    unique_entities: int


class PreprocessSplitReport(BaseModel):
    documents_read: int
    drops: DropCounts
    dropped_total: int
    dedup_removed_groups: int = 0
    stats: CorpusStats


class SplitStatsReport(BaseModel):
    corpus: CorpusStats
    ambiguity: AmbiguityStats


# keyed by split label, in split order
PreprocessReport = RootModel[Dict[str, PreprocessSplitReport]]
StatsReport = RootModel[Dict[str, SplitStatsReport]]


# ---------------------------------------------------------------------------
# Sequences
# ---------------------------------------------------------------------------

class ContextWindow(BaseModel):
    model_config = ConfigDict(frozen=True)

    left_words: List[str] = []
    mention_words: List[str] = Field(min_length=1)
    right_words: List[str] = []
    window_len: int = Field(default=30, ge=0)

    @model_validator(mode="after")
    def _window_bounds(self):
        if len(self.left_words) > self.window_len or len(self.right_words) > self.window_len:
            raise ValueError(f"context sides exceed window length {self.window_len}")
        return self


class SequenceKind(str, Enum):
    CONTEXT = "context"
    ENTITY = "entity"
    PAIR = "pair"


class TokenSequence(BaseModel):
    """Whitespace words plus marker tokens fed to an embedder or scorer"""
    model_config = ConfigDict(frozen=True)

    tokens: List[str]
    kind: SequenceKind
    max_len: int = Field(ge=1)

    @model_validator(mode="after")
    def _markers(self):
        tokens = self.tokens
        if len(tokens) > self.max_len:
            raise ValueError(f"{self.kind.value} sequence of {len(tokens)} tokens exceeds max_len {self.max_len}")
        if self.kind == SequenceKind.CONTEXT:
            if tokens.count(ENT_START) != 1 or tokens.count(ENT_END) != 1:
                raise ValueError("context sequence needs exactly one mention start and end marker")
            if tokens.index(ENT_START) > tokens.index(ENT_END):
                raise ValueError("mention start marker must precede the end marker")
        elif self.kind == SequenceKind.ENTITY:
            if not tokens or tokens[0] != CLS or tokens.count(SEP) != 3:
                raise ValueError("entity sequence must be [CLS] title [SEP] types [SEP] desc [SEP]")
        elif tokens.count(ENT_DESC) != 1:
            raise ValueError("pair sequence needs exactly one description marker")
        return self

    def __len__(self) -> int:
        return len(self.tokens)


# ---------------------------------------------------------------------------
# Candidates and predictions
# ---------------------------------------------------------------------------

class Candidate(NamedTuple):
    entity_id: str
    score: float


class CandidateSet(BaseModel):
    model_config = ConfigDict(frozen=True)

    mention_ref: Optional[MentionRef] = None
    candidates: List[Candidate] = []

    @model_validator(mode="after")
    def _ordered(self):
        label = self.mention_ref.key if self.mention_ref else "query"
        ids = [c.entity_id for c in self.candidates]
        if len(ids) != len(set(ids)):
            raise ValueError(f"duplicate candidate ids for {label}")
        for prev, cur in zip(self.candidates, self.candidates[1:]):
            if (-prev.score, prev.entity_id) > (-cur.score, cur.entity_id):
                raise ValueError(f"candidates for {label} are not ordered by (-score, id)")
        return self

    @property
    def entity_ids(self) -> List[str]:
        return [c.entity_id for c in self.candidates]


class Provenance(str, Enum):
    MODEL = "model"
    BACKOFF = "backoff"
    SYNTHESIS = "synthesis"


class Prediction(BaseModel):
    model_config = ConfigDict(frozen=True)

    mention_ref: MentionRef
    surface: str
    entity_id: str
    probability: float = Field(ge=0.0, le=1.0)
    provenance: Provenance = Provenance.MODEL


class RerankResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    prediction: Prediction
    # (entity_id, probability) in candidate order
    probabilities: List[Tuple[str, float]]

    def probability_of(self, entity_id: str) -> float:
        return dict(self.probabilities).get(entity_id, 0.0)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

class TrainStats(BaseModel):
    entity_count: Dict[str, int] = {}
    mention_surfaces: Set[str] = set()
    mention_to_entity_counts: Dict[str, Dict[str, int]] = {}
    top100: Set[str] = set()
    pretrain_entities: Set[str] = set()


class SliceRow(BaseModel):
    name: str
    support: int
    accuracy: Optional[float] = None


class EvalReport(BaseModel):
    mention_count: int
    overall_accuracy: float
    recall_at_1: Optional[float] = None
    recall_at_10: Optional[float] = None
    rows: List[SliceRow] = []

    def row(self, name: str) -> Optional[SliceRow]:
        return next((r for r in self.rows if r.name == name), None)


class ThresholdSweep(BaseModel):
    rows: List[Tuple[float, float]]
    best_threshold: float
    best_accuracy: float


class IndexReport(BaseModel):
    pool_size: int
    dim: int
    missing_ids: List[str] = []


class RunManifest(BaseModel):
    """Config hash, file hashes and counts of one stage run; no timestamps"""
    stage: str
    config_sha256: str
    inputs: Dict[str, str] = {}
    outputs: Dict[str, str] = {}
    counts: Dict[str, Any] = {}


# ---------------------------------------------------------------------------
# Pipeline configuration
# ---------------------------------------------------------------------------

class Dataset(str, Enum):
    MM = "mm"
    BC5CDR = "bc5cdr"


DATASET_THRESHOLDS = {Dataset.MM: 0.55, Dataset.BC5CDR: 0.45}


class PathsConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kb: Optional[str] = None
    mapping: Optional[str] = None
    gold_mapping: Optional[str] = None
    target_kb: Optional[str] = None
    raw: Dict[str, str] = {}
    raw_format: Literal["jsonl", "pubtator"] = "jsonl"
    corpora: Dict[str, str] = {}
    entity_vectors: Optional[str] = None
    context_vectors: Optional[str] = None
    scores: Optional[str] = None
    pool_filter: Optional[str] = None
    output_dir: str = "output"


class ParamsConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    window_len: int = Field(default=30, ge=0)
    context_max: int = Field(default=64, ge=5)
    entity_max: int = Field(default=128, ge=5)
    pair_context_max: int = Field(default=128, ge=5)
    types_word_limit: int = Field(default=30, ge=1)
    k: int = Field(default=10, ge=1)
    threshold: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    group_size: int = Field(default=3, ge=1)
    downsample_threshold: int = Field(default=40, ge=1)
    desc_word_limit: int = Field(default=150, ge=1)
    embed_dim: int = Field(default=256, ge=1)
    embed_seed: int = 13
    negatives_n: int = Field(default=10, ge=1)
    shards: int = Field(default=1, ge=1)
    downsample_splits: List[SplitLabel] = [SplitLabel.PRETRAIN]
    extra_slices: List[str] = []


class TogglesConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    expand_abbreviations: bool = True
    drop_overlapping: bool = True
    drop_unknown_entities: bool = True
    dedup_pretrain: bool = True
    backoff: bool = True
    synthesis: bool = True
    progress: bool = False


class PipelineConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dataset: Dataset = Dataset.MM
    jobs: int = Field(default_factory=lambda: os.cpu_count() or 1, ge=1)
    link_split: SplitLabel = SplitLabel.TEST
    paths: PathsConfig = Field(default_factory=PathsConfig)
    params: ParamsConfig = Field(default_factory=ParamsConfig)
    toggles: TogglesConfig = Field(default_factory=TogglesConfig)

    @property
    def effective_threshold(self) -> float:
        if self.params.threshold is not None:
            return self.params.threshold
        return DATASET_THRESHOLDS[self.dataset]
