import hashlib
import json
import logging
import re
from pathlib import Path
from typing import Any, Dict, Iterable, List

from pydantic import BaseModel

logger = logging.getLogger(__name__)

WHITESPACE = re.compile(r"\s+")

def fold_text(text: str) -> str:
    """
    Case-fold and collapse whitespace runs to single spaces

    Args:
        text: Text to fold

    Returns:
        str: Folded text, stripped at both ends
    """
    if not text:
        return ""
    return WHITESPACE.sub(" ", text.casefold()).strip()

def first_words(text: str, limit: int) -> str:
    """
    Keep the first `limit` whitespace-delimited words of a text

    Args:
        text: Text to truncate
        limit: Maximum number of words kept

    Returns:
        str: Words joined by single spaces
    """
    if not text:
        return ""
    return " ".join(text.split()[:limit])

def format_score(value: float) -> float:
    """Round a real to 9 significant digits for artifact files"""
    return float(f"{value:.9g}")

def file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()

def text_sha256(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()

def write_jsonl(path: Path, records: Iterable[Dict[str, Any]]) -> int:
    """Write records one per line; returns the number written"""
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for record in records:
            handle.write(json.dumps(record, ensure_ascii=False))
            handle.write("\n")
            count += 1
    return count

def write_report(path: Path, report: BaseModel):
    """Pydantic report as indented JSON"""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(report.model_dump_json(indent=2))
        handle.write("\n")

def write_json(path: Path, payload: Dict[str, Any]):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        json.dump(payload, handle, ensure_ascii=False, indent=2, sort_keys=True)
        handle.write("\n")

def read_id_list(path: Path) -> List[str]:
    """One id per line; blank lines and surrounding whitespace ignored"""
    with open(path, encoding="utf-8") as handle:
        return [line.strip() for line in handle if line.strip()]
