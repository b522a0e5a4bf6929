"""Sentence segmentation, tokenization, and per-language script filters.

The rules are deliberately small and deterministic: sentences split on
terminal punctuation or blank-line boundaries, tokens are maximal runs of
letters and digits (with language-dependent apostrophe joining), and every
token is lowercased. A word type is whatever this tokenizer emits as one
token. Script filtering never changes tokenization; it only decides which
tokens may become target words downstream.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from lexent.errors import LexentDataError


class UnsupportedLanguageError(LexentDataError):
    """Requested language code has no registry entry."""

    def __init__(self, code: str):
        supported = ", ".join(sorted(LANGUAGES))
        super().__init__(f"unsupported language {code!r}; supported codes: {supported}")
        self.code = code


@dataclass(frozen=True)
class Language:
    """Registry entry: inclusive Unicode codepoint ranges that count as the
    language's script, plus extra characters allowed inside a word."""

    code: str
    name: str
    script_ranges: tuple[tuple[int, int], ...]
    extra_chars: frozenset[str] = frozenset()

    def allows(self, ch: str) -> bool:
        if ch in self.extra_chars:
            return True
        point = ord(ch)
        return any(lo <= point <= hi for lo, hi in self.script_ranges)


# Letter blocks only: excludes digits and the multiply/divide signs that sit
# inside the Latin-1 supplement.
_LATIN = (
    (0x0041, 0x005A),
    (0x0061, 0x007A),
    (0x00C0, 0x00D6),
    (0x00D8, 0x00F6),
    (0x00F8, 0x024F),
    (0x1E00, 0x1EFF),
)
_CYRILLIC = ((0x0400, 0x04FF), (0x0500, 0x052F))
_GREEK = ((0x0370, 0x03FF), (0x1F00, 0x1FFF))
_APOSTROPHES = frozenset({"'", "’"})

LANGUAGES: dict[str, Language] = {
    lang.code: lang
    for lang in (
        Language("en", "English", _LATIN, _APOSTROPHES),
        Language("de", "German", _LATIN),
        Language("fi", "Finnish", _LATIN),
        Language("id", "Indonesian", _LATIN),
        Language("tr", "Turkish", _LATIN, _APOSTROPHES),
        Language("ru", "Russian", _CYRILLIC),
        Language("el", "Greek", _GREEK),
    )
}


def get_language(code: str) -> Language:
    try:
        return LANGUAGES[code]
    except KeyError:
        raise UnsupportedLanguageError(code) from None


_SENTENCE_BOUNDARY = re.compile(r"(?<=[.!?])\s+|\n+")
_TOKEN = re.compile(r"[^\W_]+(?:['’][^\W_]+)*", re.UNICODE)


def sentencize(text: str) -> list[str]:
    """Split on whitespace after terminal punctuation and on newlines."""
    return [part for part in (p.strip() for p in _SENTENCE_BOUNDARY.split(text)) if part]


def tokenize(sentence: str) -> list[str]:
    """Lowercased maximal runs of letters/digits, apostrophe-joined."""
    return [m.lower() for m in _TOKEN.findall(sentence)]


def in_script(word: str, language: Language) -> bool:
    """True when every character of the word belongs to the language's
    allowed script; such words may become target types downstream."""
    return bool(word) and all(language.allows(ch) for ch in word)


def sentencize_tokenize(text: str, language_code: str) -> list[list[str]]:
    """Raw text to one token list per sentence; validates the language even
    for empty input so a bad code fails fast."""
    get_language(language_code)
    return [tokens for tokens in (tokenize(s) for s in sentencize(text)) if tokens]
