"""
Token sequence construction for context, entity and (context, entity) pair inputs.
A token is a whitespace word or one of the reserved marker strings.
"""

import logging
from typing import List

from models import (
    CLS, ENT_DESC, ENT_END, ENT_START, SEP, ContextWindow, EntityRecord, MentionSpan, SentenceGroup,
    SequenceKind, TokenSequence,
)
from services.base import SpanError

logger = logging.getLogger(__name__)

CONTEXT_MARKERS = 4  # [CLS] [ENT_START] [ENT_END] [SEP]
ENTITY_MARKERS = 4  # [CLS] [SEP] [SEP] [SEP]
TYPE_SEPARATOR = "; "


def extract_window(group: SentenceGroup, mention: MentionSpan, window_len: int = 30) -> ContextWindow:
    if mention.end_word > len(group.words) or mention.start_word >= mention.end_word:
        raise SpanError(
            f"span [{mention.start_word},{mention.end_word}) does not fit group "
            f"{group.doc_id}/{group.group_index} of {len(group.words)} words"
        )
    start, end = mention.start_word, mention.end_word
    return ContextWindow(
        left_words=group.words[max(0, start - window_len):start],
        mention_words=group.words[start:end],
        right_words=group.words[end:end + window_len],
        window_len=window_len,
    )


def build_context_sequence(window: ContextWindow, max_len: int = 64) -> TokenSequence:
    """
    [CLS] left [ENT_START] mention [ENT_END] right [SEP]

    Over-long sequences lose one word from the far left, then one from the far right, and so on.
    Markers and mention words are kept; when the mention alone does not fit, its tail is cut.
    """
    if max_len <= CONTEXT_MARKERS:
        raise ValueError(f"context max_len must exceed {CONTEXT_MARKERS}, got {max_len}")
    mention = list(window.mention_words)
    left = list(window.left_words)
    right = list(window.right_words)

    if len(mention) + CONTEXT_MARKERS > max_len:
        logger.warning(f"Mention of {len(mention)} words truncated to fit a {max_len}-token context")
        mention = mention[:max_len - CONTEXT_MARKERS]
        left, right = [], []

    budget = max_len - CONTEXT_MARKERS - len(mention)
    trim_left = True
    while len(left) + len(right) > budget:
        if (trim_left and left) or not right:
            left.pop(0)
        else:
            right.pop()
        trim_left = not trim_left

    tokens = [CLS, *left, ENT_START, *mention, ENT_END, *right, SEP]
    return TokenSequence(tokens=tokens, kind=SequenceKind.CONTEXT, max_len=max_len)


def entity_title(entity: EntityRecord, include_aliases: bool = False) -> str:
    if include_aliases:
        return TYPE_SEPARATOR.join(entity.names)
    return entity.canonical_name


def limit_types(types: List[str], word_limit: int) -> List[str]:
    """Drop whole types from the end until the joined list has at most `word_limit` words"""
    kept = list(types)
    while kept and len(TYPE_SEPARATOR.join(kept).split()) > word_limit:
        kept.pop()
    return kept


def build_entity_sequence(entity: EntityRecord, include_aliases_in_title: bool = False,
                          types_word_limit: int = 30, max_len: int = 128) -> TokenSequence:
    """
    [CLS] title [SEP] types [SEP] desc [SEP]

    Length is enforced by cutting the description first, then trailing types, then title
    words (at least one title word stays).
    """
    if max_len <= ENTITY_MARKERS:
        raise ValueError(f"entity max_len must exceed {ENTITY_MARKERS}, got {max_len}")
    room = max_len - ENTITY_MARKERS
    title = entity_title(entity, include_aliases_in_title).split()
    types = limit_types(entity.types, types_word_limit)
    description = entity.description.split() if entity.description else []

    def type_words() -> List[str]:
        return TYPE_SEPARATOR.join(types).split()

    description = description[:max(0, room - len(title) - len(type_words()))]
    while types and len(title) + len(type_words()) > room:
        types.pop()
    title = title[:max(1, room - len(type_words()))]

    tokens = [CLS, *title, SEP, *type_words(), SEP, *description, SEP]
    return TokenSequence(tokens=tokens, kind=SequenceKind.ENTITY, max_len=max_len)


def build_pair_sequence(ctx: TokenSequence, ent: TokenSequence) -> TokenSequence:
    """Context tokens, [ENT_DESC], then the entity tokens without their leading [CLS]"""
    if ctx.kind != SequenceKind.CONTEXT or ent.kind != SequenceKind.ENTITY:
        raise ValueError(f"pair needs a context and an entity sequence, got {ctx.kind.value}/{ent.kind.value}")
    return TokenSequence(
        tokens=[*ctx.tokens, ENT_DESC, *ent.tokens[1:]],
        kind=SequenceKind.PAIR,
        max_len=ctx.max_len + ent.max_len,
    )
