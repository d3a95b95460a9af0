import pytest

from services.abbreviations import SchwartzHearstExtractor, expand_abbreviations, remap_char_span

TEXT = "Patients with diabetic foot ulcer (DFU) were studied. Severe DFU healed slowly."


def test_extracts_long_form_from_preceding_words():
    definitions = SchwartzHearstExtractor().extract(TEXT)
    assert [(short, long_form) for short, long_form, _, _ in definitions] == [("DFU", "diabetic foot ulcer")]
    _, _, start, end = definitions[0]
    assert TEXT[start:end] == "diabetic foot ulcer (DFU)"


@pytest.mark.parametrize("text", [
    "We measured it (twice) in total.",
    "Levels were low (p) overall.",
    "Values (12) were recorded.",
    "No parentheses at all.",
])
def test_no_definition_found(text):
    assert SchwartzHearstExtractor().extract(text) == []


@pytest.mark.parametrize("candidate, valid", [
    ("DFU", True),
    ("T2DM", True),
    ("D", False),
    ("12", False),
    ("-AB", False),
    ("ABCDEFGHIJK", False),
    ("one two three", False),
])
def test_short_form_validity(candidate, valid):
    assert SchwartzHearstExtractor().is_valid_short_form(candidate) is valid


def test_short_form_cut_at_separator():
    assert SchwartzHearstExtractor.short_form_candidate(" DFU; see above ") == "DFU"
    assert SchwartzHearstExtractor.short_form_candidate("DFU, n=12") == "DFU"


def test_expansion_replaces_later_uses_only():
    expansion = expand_abbreviations(TEXT)
    assert expansion.expanded_text == (
        "Patients with diabetic foot ulcer (DFU) were studied. Severe diabetic foot ulcer healed slowly."
    )
    assert expansion.pairs == [("DFU", "diabetic foot ulcer")]
    later = TEXT.index("DFU healed")
    assert expansion.replacements == [(later, later + 3, "diabetic foot ulcer")]


def test_expansion_ignores_embedded_short_forms():
    text = "Patients with diabetic foot ulcer (DFU) were studied. The DFUs and xDFU stayed."
    assert expand_abbreviations(text).expanded_text == text


def test_expansion_without_definitions_is_identity():
    expansion = expand_abbreviations("Asepsis was maintained.")
    assert expansion.expanded_text == "Asepsis was maintained."
    assert expansion.replacements == []


def test_remap_char_span():
    expansion = expand_abbreviations(TEXT)
    replacements = expansion.replacements
    later = TEXT.index("DFU healed")
    delta = len("diabetic foot ulcer") - len("DFU")

    # before the replacement: unchanged
    assert remap_char_span(14, 33, replacements) == (14, 33)
    # the replaced short form covers the whole long form
    start, end = remap_char_span(later, later + 3, replacements)
    assert expansion.expanded_text[start:end] == "diabetic foot ulcer"
    # after the replacement: shifted
    healed = TEXT.index("healed")
    assert remap_char_span(healed, healed + 6, replacements) == (healed + delta, healed + 6 + delta)
    # a span that ends inside the short form snaps to the end of the long form
    start, end = remap_char_span(later, later + 2, replacements)
    assert expansion.expanded_text[start:end] == "diabetic foot ulcer"
