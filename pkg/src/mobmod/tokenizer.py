"""Byte-pair-encoding tokenizer producing fixed-length token-id sequences.

The vocabulary and ranked merge list come from plain text files (one token
per line; one space-separated merge pair per line). Encoding repeatedly
merges the adjacent symbol pair with the lowest merge rank, wraps the result
with start/end markers and pads to a fixed context length.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

log = logging.getLogger(__name__)

SOT_TOKEN = "<|startoftext|>"
EOT_TOKEN = "<|endoftext|>"
PAD_TOKEN = "<|pad|>"
WORD_END = "</w>"

DEFAULT_CONTEXT_LENGTH = 77


class UnknownTokenError(ValueError):
    """A symbol survived the merge loop but has no vocabulary id."""

    def __init__(self, symbol: str):
        super().__init__(f"symbol {symbol!r} is not in the vocabulary")
        self.symbol = symbol


@dataclass(frozen=True)
class Vocabulary:
    """Immutable token table plus ranked merges and special ids."""

    token_to_id: dict[str, int]
    merges: list[tuple[str, str]]  # rank = list position
    sot_id: int
    eot_id: int
    pad_id: int
    context_length: int = DEFAULT_CONTEXT_LENGTH

    @cached_property
    def merge_ranks(self) -> dict[tuple[str, str], int]:
        return {pair: rank for rank, pair in enumerate(self.merges)}

    @cached_property
    def uses_word_marker(self) -> bool:
        # Exported CLIP-style vocabularies mark word ends with "</w>"; toy
        # vocabularies without the marker tokenize bare characters.
        return any(WORD_END in token for token in self.token_to_id)

    def __post_init__(self):
        ids = set(self.token_to_id.values())
        if len(ids) != len(self.token_to_id):
            raise ValueError("vocabulary ids are not unique")
        for left, right in self.merges:
            if left + right not in self.token_to_id:
                raise ValueError(f"merge product {left + right!r} missing from vocabulary")
        specials = {self.sot_id, self.eot_id, self.pad_id}
        if len(specials) != 3 or not specials <= ids:
            raise ValueError("sot/eot/pad ids must be three distinct vocabulary ids")


@dataclass(frozen=True)
class TokenSequence:
    """Fixed-length id sequence: [sot, content..., eot, pad...]."""

    ids: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.ids)


def load_vocabulary(
    vocab_path: str | Path,
    merges_path: str | Path,
    *,
    sot_token: str = SOT_TOKEN,
    eot_token: str = EOT_TOKEN,
    pad_token: str = PAD_TOKEN,
    context_length: int = DEFAULT_CONTEXT_LENGTH,
) -> Vocabulary:
    """Load a vocabulary file (token per line, id = line index) and a merges
    file (space-separated pair per line, rank = line index).

    When the vocabulary has no dedicated pad token, id 0 is used for padding
    (the convention of exported CLIP vocabularies, which pad with zeros).
    """
    token_to_id: dict[str, int] = {}
    for line_no, line in enumerate(_read_lines(vocab_path), start=1):
        token = line.rstrip("\r\n")
        if not token:
            raise ValueError(f"{vocab_path}: empty token at line {line_no}")
        if token in token_to_id:
            raise ValueError(f"{vocab_path}: duplicate token {token!r} at line {line_no}")
        token_to_id[token] = line_no - 1

    merges: list[tuple[str, str]] = []
    for line_no, line in enumerate(_read_lines(merges_path), start=1):
        fields = line.rstrip("\r\n").split(" ")
        if len(fields) != 2 or not all(fields):
            raise ValueError(
                f"{merges_path}: line {line_no} must contain exactly two space-separated tokens"
            )
        merges.append((fields[0], fields[1]))

    for name, token in (("sot", sot_token), ("eot", eot_token)):
        if token not in token_to_id:
            raise ValueError(f"{vocab_path}: required {name} token {token!r} missing")
    if pad_token in token_to_id:
        pad_id = token_to_id[pad_token]
    else:
        pad_id = 0
        if pad_id in (token_to_id[sot_token], token_to_id[eot_token]):
            raise ValueError(
                f"{vocab_path}: no {pad_token!r} token and id 0 is a start/end marker"
            )

    vocab = Vocabulary(
        token_to_id=token_to_id,
        merges=merges,
        sot_id=token_to_id[sot_token],
        eot_id=token_to_id[eot_token],
        pad_id=pad_id,
        context_length=context_length,
    )
    log.info("loaded vocabulary: %d tokens, %d merges", len(token_to_id), len(merges))
    return vocab


def normalize_text(text: str) -> str:
    """Lowercase, collapse whitespace runs, strip."""
    return " ".join(text.lower().split())


def encode(text: str, vocab: Vocabulary) -> TokenSequence:
    """BPE-encode text into a fixed-length TokenSequence.

    Content longer than context_length - 2 is truncated from the end, keeping
    the start marker and the final end marker (class tokens appear early in
    every template, so the head matters most).
    """
    normalized = normalize_text(text)
    if not normalized:
        raise ValueError("text is empty after normalization")

    content: list[int] = []
    for word in normalized.split(" "):
        for symbol in _bpe_word(_word_symbols(word, vocab), vocab.merge_ranks):
            if symbol not in vocab.token_to_id:
                raise UnknownTokenError(symbol)
            content.append(vocab.token_to_id[symbol])

    budget = vocab.context_length - 2
    content = content[:budget]
    ids = [vocab.sot_id, *content, vocab.eot_id]
    ids.extend([vocab.pad_id] * (vocab.context_length - len(ids)))
    return TokenSequence(tuple(ids))


def _word_symbols(word: str, vocab: Vocabulary) -> list[str]:
    if vocab.uses_word_marker:
        return [*word[:-1], word[-1] + WORD_END]
    return list(word)


def _bpe_word(symbols: list[str], ranks: dict[tuple[str, str], int]) -> list[str]:
    """Repeatedly merge the adjacent pair with the lowest rank."""
    while len(symbols) > 1:
        pairs = set(zip(symbols, symbols[1:]))
        best = min(pairs, key=lambda p: ranks.get(p, float("inf")))
        if best not in ranks:
            break
        symbols = _merge_pair(symbols, best)
    return symbols


def _merge_pair(symbols: list[str], pair: tuple[str, str]) -> list[str]:
    """Merge every left-to-right occurrence of pair."""
    merged: list[str] = []
    i = 0
    while i < len(symbols):
        if i + 1 < len(symbols) and (symbols[i], symbols[i + 1]) == pair:
            merged.append(symbols[i] + symbols[i + 1])
            i += 2
        else:
            merged.append(symbols[i])
            i += 1
    return merged


def _read_lines(path: str | Path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return fh.readlines()
