"""
Abbreviation definition extraction (Schwartz & Hearst, 2003) and expansion.
Definitions of the form "long form (SF)" are found and later standalone uses of SF are replaced.
"""

import logging
import re
from typing import List, Optional, Tuple

from models import AbbreviationExpansion

logger = logging.getLogger(__name__)

Definition = Tuple[str, str, int, int]  # short, long, construct start, construct end


class SchwartzHearstExtractor:
    """Finds (short form, long form) pairs defined as `long form (SF)`"""

    PARENTHESIS = re.compile(r"\(([^()]*)\)")
    SENTENCE_END = re.compile(r"[.!?]\s")
    WORD = re.compile(r"\S+")
    MAX_SHORT_LENGTH = 10

    def is_valid_short_form(self, candidate: str) -> bool:
        if not 2 <= len(candidate) <= self.MAX_SHORT_LENGTH:
            return False
        if len(candidate.split()) > 2:
            return False
        if not any(char.isalpha() for char in candidate):
            return False
        return candidate[0].isalnum()

    @staticmethod
    def short_form_candidate(inside: str) -> str:
        """Text inside the parentheses, cut at the first ';' or ',' separator"""
        candidate = inside.strip()
        for separator in (";", ","):
            cut = candidate.find(separator)
            if cut != -1:
                candidate = candidate[:cut].strip()
        return candidate

    @staticmethod
    def best_long_form(short: str, window: str) -> Optional[int]:
        """
        Right-to-left character match of the short form inside the window

        Every alphanumeric character of the short form must be found, in order, scanning the
        window from the right; the first short-form character must start a word.

        Returns:
            Offset in `window` where the long form starts, or None when matching fails
        """
        short_lower = short.lower()
        window_lower = window.lower()
        s_index = len(short_lower) - 1
        l_index = len(window_lower) - 1
        while s_index >= 0:
            char = short_lower[s_index]
            if not char.isalnum():
                s_index -= 1
                continue
            while (l_index >= 0 and window_lower[l_index] != char) or (
                s_index == 0 and l_index > 0 and window_lower[l_index - 1].isalnum()
            ):
                l_index -= 1
            if l_index < 0:
                return None
            l_index -= 1
            s_index -= 1
        return window_lower.rfind(" ", 0, l_index + 1) + 1

    def _window_start(self, text: str, paren_start: int, word_limit: int) -> Optional[int]:
        """Start offset of the last `word_limit` words before the parenthesis, within its sentence"""
        sentence_start = 0
        for match in self.SENTENCE_END.finditer(text, 0, paren_start):
            sentence_start = match.end()
        words = list(self.WORD.finditer(text, sentence_start, paren_start))
        if not words:
            return None
        return words[-word_limit:][0].start()

    def extract(self, text: str) -> List[Definition]:
        """All first definitions in text order"""
        definitions: List[Definition] = []
        seen = set()
        for match in self.PARENTHESIS.finditer(text):
            short = self.short_form_candidate(match.group(1))
            if short in seen or not self.is_valid_short_form(short):
                continue
            word_limit = min(len(short) + 5, len(short) * 2)
            window_start = self._window_start(text, match.start(), word_limit)
            if window_start is None:
                continue
            window = text[window_start:match.start()].rstrip()
            offset = self.best_long_form(short, window)
            if offset is None:
                continue
            long_form = window[offset:].strip()
            if len(long_form) <= len(short) or len(long_form.split()) > word_limit:
                continue
            if long_form.count("(") != long_form.count(")"):
                continue
            seen.add(short)
            definitions.append((short, long_form, window_start + offset, match.end()))
        return definitions


def _standalone(short: str) -> re.Pattern:
    return re.compile(rf"(?<!\w){re.escape(short)}(?!\w)")


def expand_abbreviations(text: str, extractor: Optional[SchwartzHearstExtractor] = None) -> AbbreviationExpansion:
    """
    Replace every later standalone occurrence of a defined short form with its long form

    The defining "long form (SF)" construct itself is left unchanged, so offsets before the
    first replacement are preserved.
    """
    extractor = extractor or SchwartzHearstExtractor()
    definitions = extractor.extract(text)
    if not definitions:
        return AbbreviationExpansion(expanded_text=text)

    constructs = [(start, end) for _, _, start, end in definitions]

    def inside_construct(start: int, end: int) -> bool:
        return any(c_start <= start and end <= c_end for c_start, c_end in constructs)

    occurrences = []
    for short, long_form, _, construct_end in definitions:
        for match in _standalone(short).finditer(text, construct_end):
            if not inside_construct(match.start(), match.end()):
                occurrences.append((match.start(), match.end(), long_form))
    occurrences.sort(key=lambda item: (item[0], -(item[1] - item[0])))

    replacements: List[Tuple[int, int, str]] = []
    pieces = []
    cursor = 0
    for start, end, long_form in occurrences:
        if start < cursor:
            continue
        pieces.append(text[cursor:start])
        pieces.append(long_form)
        replacements.append((start, end, long_form))
        cursor = end
    pieces.append(text[cursor:])

    if replacements:
        logger.debug(f"Expanded {len(replacements)} abbreviation occurrences")
    return AbbreviationExpansion(
        expanded_text="".join(pieces),
        pairs=[(short, long_form) for short, long_form, _, _ in definitions],
        replacements=replacements,
    )


def remap_char_span(start: int, end: int, replacements: List[Tuple[int, int, str]]) -> Tuple[int, int]:
    """
    Move a span from original-text offsets to expanded-text offsets

    A boundary falling inside a replaced short form snaps to the edge of its replacement.
    """
    new_start = _remap(start, replacements, is_end=False)
    new_end = _remap(end, replacements, is_end=True)
    return new_start, new_end


def _remap(position: int, replacements: List[Tuple[int, int, str]], is_end: bool) -> int:
    offset = 0
    for r_start, r_end, long_form in replacements:
        delta = len(long_form) - (r_end - r_start)
        if r_end <= position:
            offset += delta
        elif r_start < position or (not is_end and r_start == position):
            return r_start + offset + (len(long_form) if is_end else 0)
        else:
            break
    return position + offset
