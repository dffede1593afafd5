"""Deterministic word-level tokenizer with character fallback.

Text splits into letter runs, single digits, whitespace, and single
punctuation characters, so detokenization is exact concatenation. Words
missing from the vocabulary encode as their characters; every printable
ASCII character is always present, which makes coverage of the structured
text format total by construction.
"""

from __future__ import annotations

import re
import string
from dataclasses import dataclass
from typing import Iterable, Sequence

PAD, BOS, EOS, SUM, SEP = "<pad>", "<bos>", "<eos>", "<sum>", "<sep>"
RESERVED = (PAD, BOS, EOS, SUM, SEP)
PAD_ID, BOS_ID, EOS_ID, SUM_ID, SEP_ID = range(5)

_TOKEN_RE = re.compile(r"[A-Za-z]+|[0-9]|\n| |[^A-Za-z0-9\n ]")
_BASE_CHARS = tuple(sorted(set(string.printable)))


class VocabError(ValueError):
    pass


def tokenize_text(text: str) -> list[str]:
    """Split text into surface tokens; concatenating them restores the text."""
    return _TOKEN_RE.findall(text)


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]  # index = id; RESERVED occupy ids 0..4

    def __post_init__(self):
        if self.tokens[: len(RESERVED)] != RESERVED:
            raise VocabError("vocabulary must start with the reserved tokens")
        if len(set(self.tokens)) != len(self.tokens):
            raise VocabError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def lookup(self) -> dict[str, int]:
        cached = self.__dict__.get("_lookup")
        if cached is None:
            cached = {tok: i for i, tok in enumerate(self.tokens)}
            object.__setattr__(self, "_lookup", cached)
        return cached

    def encode(self, text: str) -> list[int]:
        lookup = self.lookup
        ids: list[int] = []
        for tok in tokenize_text(text):
            idx = lookup.get(tok)
            if idx is not None:
                ids.append(idx)
                continue
            for ch in tok:  # character fallback for unseen words
                cidx = lookup.get(ch)
                if cidx is None:
                    raise VocabError(f"character {ch!r} outside the vocabulary")
                ids.append(cidx)
        return ids

    def decode(self, ids: Iterable[int], stop_at_eos: bool = True) -> str:
        parts = []
        for i in ids:
            if i == EOS_ID and stop_at_eos:
                break
            if i < len(RESERVED):
                continue
            parts.append(self.tokens[i])
        return "".join(parts)


def build_vocab(corpus: Iterable[str]) -> Vocab:
    """Deterministic vocabulary over a text corpus.

    Contains the reserved ids, every printable ASCII character, and every
    surface token seen in the corpus, in sorted order.
    """
    seen: set[str] = set(_BASE_CHARS)
    for text in corpus:
        seen.update(tokenize_text(text))
    return Vocab(tokens=RESERVED + tuple(sorted(seen)))
