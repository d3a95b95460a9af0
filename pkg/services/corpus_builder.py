"""
Corpus preprocessing: abbreviation expansion, composite splitting, sentence segmentation,
character-to-word span conversion, sentence grouping, mention filters and downsampling.
"""

import logging
import re
import statistics
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

from models import (
    AmbiguityStats, AnnotatedCorpus, CorpusStats, DocMention, DocumentWords, DropCounts, KnowledgeBase,
    MentionSpan, RawDocument, RawMention, SentenceGroup, SplitLabel,
)
from services.abbreviations import expand_abbreviations, remap_char_span
from services.interfaces import ISentenceSegmenter
from utils.helpers import fold_text

logger = logging.getLogger(__name__)

WORD = re.compile(r"\S+")


class RegexSentenceSegmenter(ISentenceSegmenter):
    """Splits after sentence-final punctuation followed by whitespace and an uppercase letter or digit"""

    BOUNDARY = re.compile(r"[.!?](?=\s+[A-Z0-9])")

    def segment(self, text: str) -> List[Tuple[int, int]]:
        cuts = [0] + [m.end() for m in self.BOUNDARY.finditer(text)] + [len(text)]
        spans = []
        for start, end in zip(cuts, cuts[1:]):
            while start < end and text[start].isspace():
                start += 1
            while end > start and text[end - 1].isspace():
                end -= 1
            if start < end:
                spans.append((start, end))
        return spans


def segment_sentences(text: str) -> List[Tuple[int, int]]:
    return RegexSentenceSegmenter().segment(text)


def char_to_word_spans(doc: RawDocument, segmenter: Optional[ISentenceSegmenter] = None,
                       sentence_spans: Optional[List[Tuple[int, int]]] = None) -> DocumentWords:
    """
    Convert character mentions to document-global word spans

    A word is a maximal non-whitespace run inside a sentence. A mention survives only when
    its start is a word start and its end is a word end; others are counted as invalid.
    """
    if sentence_spans is None:
        sentence_spans = (segmenter or RegexSentenceSegmenter()).segment(doc.text)

    sentences: List[List[str]] = []
    word_at_start: Dict[int, int] = {}
    word_at_end: Dict[int, int] = {}
    index = 0
    for s_start, s_end in sentence_spans:
        words = []
        for match in WORD.finditer(doc.text, s_start, s_end):
            words.append(match.group())
            word_at_start[match.start()] = index
            word_at_end[match.end()] = index + 1
            index += 1
        if words:
            sentences.append(words)

    mentions = []
    invalid = 0
    for mention in doc.char_mentions:
        start_word = word_at_start.get(mention.start_char)
        end_word = word_at_end.get(mention.end_char)
        if len(mention.gold_ids) != 1 or start_word is None or end_word is None or end_word <= start_word:
            invalid += 1
            continue
        mentions.append(DocMention(start_word=start_word, end_word=end_word, gold_id=mention.gold_ids[0]))
    mentions.sort(key=lambda m: (m.start_word, m.end_word, m.gold_id))
    return DocumentWords(doc_id=doc.doc_id, sentences=sentences, mentions=mentions, dropped_invalid=invalid)


def split_composite(mention: RawMention,
                    sub_spans: Optional[List[Tuple[int, int]]] = None) -> Tuple[List[RawMention], bool]:
    """
    Split a composite mention into single-gold parts

    Returns:
        (mentions, dropped): single-gold mentions pass through; composites without usable
        sub-spans are dropped
    """
    if len(mention.gold_ids) == 1:
        return [mention], False
    spans = sub_spans if sub_spans is not None else mention.sub_spans
    if not spans:
        return [], True
    if len(spans) != len(mention.gold_ids):
        logger.warning(
            f"Composite mention [{mention.start_char},{mention.end_char}) has {len(mention.gold_ids)} ids "
            f"but {len(spans)} sub-spans; dropped"
        )
        return [], True
    parts = []
    for (start, end), gold_id in zip(spans, mention.gold_ids):
        if not (mention.start_char <= start < end <= mention.end_char):
            return [], True
        parts.append(RawMention(start_char=start, end_char=end, gold_ids=[gold_id]))
    return parts, False


def group_sentences(doc: DocumentWords, group_size: int = 3) -> Tuple[List[SentenceGroup], int]:
    """
    Group consecutive sentences into non-overlapping groups; the final partial group is kept

    Returns:
        (groups, crossing): mentions crossing a group boundary are dropped and counted
    """
    if group_size < 1:
        raise ValueError(f"group_size must be >= 1, got {group_size}")

    bounds = []  # (first word, end word) per group
    cursor = 0
    chunks = [doc.sentences[i:i + group_size] for i in range(0, len(doc.sentences), group_size)]
    for chunk in chunks:
        size = sum(len(sentence) for sentence in chunk)
        bounds.append((cursor, cursor + size))
        cursor += size

    per_group: Dict[int, List[DocMention]] = defaultdict(list)
    crossing = 0
    for mention in doc.mentions:
        home = next((g for g, (lo, hi) in enumerate(bounds) if lo <= mention.start_word < hi), None)
        if home is None or mention.end_word > bounds[home][1]:
            crossing += 1
            continue
        per_group[home].append(mention)

    groups = []
    for g, chunk in enumerate(chunks):
        words = [word for sentence in chunk for word in sentence]
        offset = bounds[g][0]
        spans = [
            MentionSpan(
                start_word=m.start_word - offset,
                end_word=m.end_word - offset,
                surface=" ".join(words[m.start_word - offset:m.end_word - offset]),
                gold_id=m.gold_id,
            )
            for m in per_group.get(g, [])
        ]
        groups.append(SentenceGroup(doc_id=doc.doc_id, group_index=g, words=words, mentions=spans))
    return groups, crossing


def drop_overlapping(mentions: Sequence[MentionSpan]) -> Tuple[List[MentionSpan], int]:
    """
    Greedy earliest-start scan; at equal start the longer span wins

    Touching spans ([0,2) and [2,4)) do not overlap.
    """
    ordered = sorted(mentions, key=lambda m: (m.start_word, -m.length, m.gold_id))
    kept: List[MentionSpan] = []
    reach = 0
    for mention in ordered:
        if kept and mention.start_word < reach:
            continue
        kept.append(mention)
        reach = max(reach, mention.end_word)
    return kept, len(ordered) - len(kept)


def _with_mentions(group: SentenceGroup, mentions: List[MentionSpan]) -> SentenceGroup:
    return SentenceGroup(doc_id=group.doc_id, group_index=group.group_index, words=group.words, mentions=mentions)


def downsample(corpus: AnnotatedCorpus, freq_threshold: int = 40) -> Tuple[AnnotatedCorpus, int]:
    """
    Remove groups whose entities are all frequent

    Occurrence counts (number of groups mentioning an entity) are computed once on the input.
    A group goes iff it has a mention and every distinct gold entity in it occurs in at least
    `freq_threshold` other groups.
    """
    group_entities = [{m.gold_id for m in group.mentions} for group in corpus.groups]
    occurrences = Counter(entity for entities in group_entities for entity in entities)

    kept = []
    for group, entities in zip(corpus.groups, group_entities):
        frequent = entities and all(occurrences[e] - 1 >= freq_threshold for e in entities)
        if not frequent:
            kept.append(group)
    removed = len(corpus.groups) - len(kept)
    logger.info(f"Downsampling removed {removed} of {len(corpus.groups)} groups (threshold {freq_threshold})")
    return AnnotatedCorpus(groups=kept, split_label=corpus.split_label), removed


def drop_unknown_entities(corpus: AnnotatedCorpus, kb: KnowledgeBase) -> Tuple[AnnotatedCorpus, int]:
    """Remove mentions whose gold id is not in the KB"""
    dropped = 0
    groups = []
    for group in corpus.groups:
        known = [m for m in group.mentions if m.gold_id in kb]
        dropped += len(group.mentions) - len(known)
        groups.append(group if len(known) == len(group.mentions) else _with_mentions(group, known))
    return AnnotatedCorpus(groups=groups, split_label=corpus.split_label), dropped


def dedup_against(corpus: AnnotatedCorpus, others: Iterable[AnnotatedCorpus]) -> Tuple[AnnotatedCorpus, int]:
    """Remove groups of documents that also appear (exact doc_id) in any other corpus"""
    taken: Set[str] = set()
    for other in others:
        taken |= other.doc_ids
    groups = [group for group in corpus.groups if group.doc_id not in taken]
    return AnnotatedCorpus(groups=groups, split_label=corpus.split_label), len(corpus.groups) - len(groups)


def ambiguity_stats(corpus: AnnotatedCorpus) -> AmbiguityStats:
    """Distinct gold entities per case-folded mention string"""
    entities_by_key: Dict[str, Set[str]] = defaultdict(set)
    for _, _, mention in corpus.iter_mentions():
        entities_by_key[fold_text(mention.surface)].add(mention.gold_id)

    ambiguous = sorted(len(ids) for ids in entities_by_key.values() if len(ids) >= 2)
    unique = len(entities_by_key)
    return AmbiguityStats(
        unique_mention_count=unique,
        ambiguous_mention_count=len(ambiguous),
        ambiguous_fraction_of_unique_mentions=len(ambiguous) / unique if unique else 0.0,
        min_ambiguity=float(ambiguous[0]) if ambiguous else None,
        median_ambiguity=float(statistics.median(ambiguous)) if ambiguous else None,
        max_ambiguity=float(ambiguous[-1]) if ambiguous else None,
    )


def corpus_stats(corpus: AnnotatedCorpus) -> CorpusStats:
    return CorpusStats(
        documents=len(corpus.doc_ids),
        sentence_groups=len(corpus.groups),
        mentions=sum(len(group.mentions) for group in corpus.groups),
        unique_entities=len({m.gold_id for group in corpus.groups for m in group.mentions}),
    )


@dataclass
class PreprocessOptions:
    """Per-rule switches for the preprocessing chain"""
    expand_abbreviations: bool = True
    drop_overlapping: bool = True
    group_size: int = 3
    segmenter: ISentenceSegmenter = field(default_factory=RegexSentenceSegmenter)


def _expanded(doc: RawDocument) -> RawDocument:
    expansion = expand_abbreviations(doc.text)
    if not expansion.replacements:
        return doc
    mentions = []
    for mention in doc.char_mentions:
        start, end = remap_char_span(mention.start_char, mention.end_char, expansion.replacements)
        sub_spans = None
        if mention.sub_spans:
            sub_spans = [remap_char_span(s, e, expansion.replacements) for s, e in mention.sub_spans]
        mentions.append(RawMention(start_char=start, end_char=end, gold_ids=mention.gold_ids, sub_spans=sub_spans))
    return RawDocument(doc_id=doc.doc_id, text=expansion.expanded_text, char_mentions=mentions)


def preprocess_document(doc: RawDocument, options: Optional[PreprocessOptions] = None) -> Tuple[List[SentenceGroup], DropCounts]:
    """Expand, split composites, segment, convert spans, group, filter overlaps"""
    options = options or PreprocessOptions()
    if options.expand_abbreviations:
        doc = _expanded(doc)

    single = []
    unsplit = 0
    for mention in doc.char_mentions:
        parts, dropped = split_composite(mention)
        unsplit += int(dropped)
        single.extend(parts)

    words = char_to_word_spans(
        RawDocument(doc_id=doc.doc_id, text=doc.text, char_mentions=single), segmenter=options.segmenter
    )
    groups, crossing = group_sentences(words, options.group_size)

    overlapping = 0
    if options.drop_overlapping:
        filtered = []
        for group in groups:
            kept, dropped = drop_overlapping(group.mentions)
            overlapping += dropped
            filtered.append(_with_mentions(group, kept) if dropped else group)
        groups = filtered

    counts = DropCounts(
        invalid_span=words.dropped_invalid,
        composite_unsplit=unsplit,
        cross_group=crossing,
        overlapping=overlapping,
    )
    return groups, counts


def preprocess_corpus(docs: Sequence[RawDocument], split: SplitLabel, options: Optional[PreprocessOptions] = None,
                      jobs: int = 1) -> Tuple[AnnotatedCorpus, DropCounts]:
    """Preprocess documents in parallel; output order is fixed by (doc_id, group_index)"""
    options = options or PreprocessOptions()
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        results = list(pool.map(lambda doc: preprocess_document(doc, options), docs))

    groups: List[SentenceGroup] = []
    totals = DropCounts()
    for doc_groups, counts in results:
        groups.extend(doc_groups)
        totals = totals.merged(counts)
    corpus = AnnotatedCorpus(groups=groups, split_label=split)
    logger.info(
        f"Preprocessed {len(docs)} {split.value} documents into {len(groups)} groups; "
        f"dropped {totals.total} mentions ({totals.model_dump()})"
    )
    return corpus, totals
