"""
Raw-corpus adapters and annotated-corpus file IO.
Native JSON lines and PubTator (MedMentions / BC5CDR style) inputs become RawDocuments.
"""

import logging
from pathlib import Path
from typing import Iterator, List, Optional, Tuple

from pydantic import ValidationError as PydanticValidationError

from models import AnnotatedCorpus, RawDocument, RawMention, SentenceGroup, SplitLabel
from services.base import DataValidationError, MissingInputError, ParseError, iter_json_lines
from utils.helpers import write_jsonl

logger = logging.getLogger(__name__)

UNLINKABLE_ID = "-1"
ID_PREFIXES = ("UMLS:", "MESH:")


def normalize_id(raw_id: str) -> str:
    """Strip vocabulary prefixes such as UMLS:C0001621"""
    raw_id = raw_id.strip()
    for prefix in ID_PREFIXES:
        if raw_id.startswith(prefix):
            return raw_id[len(prefix):]
    return raw_id


def _drop_unlinkable(doc: RawDocument) -> Tuple[RawDocument, int]:
    kept = [m for m in doc.char_mentions if UNLINKABLE_ID not in m.gold_ids]
    dropped = len(doc.char_mentions) - len(kept)
    if not dropped:
        return doc, 0
    return RawDocument(doc_id=doc.doc_id, text=doc.text, char_mentions=kept), dropped


def read_raw_jsonl(path: Path) -> Tuple[List[RawDocument], int]:
    """
    Read native RawDocument lines

    Returns:
        (documents, unlinkable): mentions whose gold ids contain -1 are dropped and counted
    """
    docs = []
    unlinkable = 0
    for line_number, record in iter_json_lines(path, "raw corpus"):
        try:
            doc = RawDocument.model_validate(record)
        except PydanticValidationError as e:
            raise ParseError(f"invalid raw document: {e.errors()[0]['msg']}", line_number, str(path)) from e
        doc, dropped = _drop_unlinkable(doc)
        unlinkable += dropped
        docs.append(doc)
    return docs, unlinkable


def _locate_sub_spans(text: str, start: int, end: int, surfaces: List[str]) -> Optional[List[Tuple[int, int]]]:
    """Find each sub surface left to right inside the mention text"""
    spans = []
    cursor = start
    for surface in surfaces:
        found = text.find(surface, cursor, end)
        if not surface or found == -1:
            return None
        spans.append((found, found + len(surface)))
        cursor = found + len(surface)
    return spans


def _pubtator_blocks(path: Path) -> Iterator[List[Tuple[int, str]]]:
    block: List[Tuple[int, str]] = []
    with open(path, encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                if block:
                    yield block
                    block = []
            else:
                block.append((line_number, line))
    if block:
        yield block


def _parse_pubtator_block(block: List[Tuple[int, str]], source: str) -> Tuple[RawDocument, int]:
    doc_id = None
    title, abstract = "", ""
    annotations = []
    for line_number, line in block:
        parts = line.split("|", 2)
        if len(parts) == 3 and parts[1] in ("t", "a") and "\t" not in parts[0]:
            doc_id = parts[0]
            if parts[1] == "t":
                title = parts[2]
            else:
                abstract = parts[2]
        else:
            columns = line.split("\t")
            if len(columns) == 4:
                continue  # relation line
            if len(columns) < 6:
                raise ParseError(f"expected at least 6 tab-separated columns, got {len(columns)}", line_number, source)
            annotations.append((line_number, columns))
    if doc_id is None:
        raise ParseError("document block has no title line", block[0][0], source)

    text = f"{title} {abstract}" if abstract else title
    mentions = []
    unlinkable = 0
    for line_number, columns in annotations:
        try:
            start, end = int(columns[1]), int(columns[2])
        except ValueError as e:
            raise ParseError("mention offsets are not integers", line_number, source) from e
        gold_ids = [normalize_id(i) for i in columns[5].split("|")]
        if UNLINKABLE_ID in gold_ids:
            unlinkable += 1
            continue
        sub_spans = None
        if len(gold_ids) > 1 and len(columns) > 6:
            sub_spans = _locate_sub_spans(text, start, end, columns[6].split("|"))
        try:
            mentions.append(RawMention(start_char=start, end_char=end, gold_ids=gold_ids, sub_spans=sub_spans))
        except PydanticValidationError as e:
            raise ParseError(f"invalid mention: {e.errors()[0]['msg']}", line_number, source) from e
        if text[start:end] != columns[3]:
            logger.debug(f"{source}:{line_number}: surface {columns[3]!r} differs from text {text[start:end]!r}")
    try:
        doc = RawDocument(doc_id=doc_id.strip(), text=text, char_mentions=mentions)
    except PydanticValidationError as e:
        raise ParseError(f"invalid document {doc_id}: {e.errors()[0]['msg']}", block[0][0], source) from e
    return doc, unlinkable


def read_pubtator(path: Path) -> Tuple[List[RawDocument], int]:
    """
    Read a PubTator file: `id|t|title`, `id|a|abstract`, then tab-separated annotations

    Text is title + " " + abstract, which is what the annotation offsets index into.
    Composite ids D1|D2 take their sub-span surfaces from the seventh column when present.
    """
    path = Path(path)
    if not path.exists():
        raise MissingInputError("raw corpus", str(path))
    docs = []
    unlinkable = 0
    for block in _pubtator_blocks(path):
        doc, dropped = _parse_pubtator_block(block, str(path))
        docs.append(doc)
        unlinkable += dropped
    logger.info(f"Read {len(docs)} PubTator documents from {path} ({unlinkable} unlinkable mentions)")
    return docs, unlinkable


def read_raw_documents(path: Path, raw_format: str = "jsonl") -> Tuple[List[RawDocument], int]:
    if raw_format == "pubtator":
        docs, unlinkable = read_pubtator(path)
    else:
        docs, unlinkable = read_raw_jsonl(path)
    seen = set()
    for doc in docs:
        if doc.doc_id in seen:
            raise DataValidationError(f"duplicate document id '{doc.doc_id}' in {path}")
        seen.add(doc.doc_id)
    return docs, unlinkable


def write_corpus(corpus: AnnotatedCorpus, path: Path) -> int:
    return write_jsonl(Path(path), (group.to_record() for group in corpus.groups))


def load_corpus(path: Path, split: SplitLabel = SplitLabel.TRAIN) -> AnnotatedCorpus:
    """
    Load a corpus file (one SentenceGroup per line)

    Raises:
        ParseError: malformed group, out-of-range span or reserved marker in the words
    """
    path = Path(path)
    groups = []
    for line_number, record in iter_json_lines(path, f"{split.value} corpus"):
        try:
            groups.append(SentenceGroup.from_record(record))
        except (KeyError, TypeError, IndexError) as e:
            raise ParseError(f"malformed sentence group: {e}", line_number, str(path)) from e
        except PydanticValidationError as e:
            raise ParseError(f"invalid sentence group: {e.errors()[0]['msg']}", line_number, str(path)) from e
    try:
        return AnnotatedCorpus(groups=groups, split_label=split)
    except PydanticValidationError as e:
        raise DataValidationError(f"{path}: {e.errors()[0]['msg']}") from e
