"""Frequent token-pair mining over above-median prompt templates.

Per-template evaluation records become transactions of namespaced provenance
tokens; classic level-wise Apriori finds frequent 2-itemsets; surviving
clip x context pairs regenerate a candidate prompt set through the pair
formats.
"""

from __future__ import annotations

import logging
import statistics
from collections import Counter
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Sequence

from mobmod.prompts import CLIP_NS, CTX_NS, PromptError, PromptSet, TokenLists, generate_pair_templates

if TYPE_CHECKING:
    from mobmod.evaluation import EvalRecord

log = logging.getLogger(__name__)

DEFAULT_MIN_SUPPORT = 0.3


@dataclass(frozen=True)
class Transaction:
    items: frozenset[str]

    def __post_init__(self):
        if not self.items:
            raise ValueError("a transaction needs at least one item")


@dataclass(frozen=True)
class FrequentPair:
    pair: tuple[str, str]  # sorted, distinct
    support: float


def median(values: Sequence[float]) -> float:
    """Conventional median: middle order statistic, or the mean of the two
    middle ones for even counts."""
    if not values:
        raise ValueError("median of an empty sequence")
    return float(statistics.median(values))


def build_transactions(records: "Iterable[EvalRecord]") -> list[Transaction]:
    """One transaction per record strictly above the median accuracy.

    Ties at the median are excluded; if nothing clears it, returns an empty
    list with a warning rather than failing.
    """
    records = list(records)
    if not records:
        raise ValueError("build_transactions requires at least one record")
    cutoff = median([r.accuracy for r in records])
    transactions = [
        Transaction(frozenset(r.provenance_tokens))
        for r in records
        if r.accuracy > cutoff
    ]
    if not transactions:
        log.warning("no record exceeds the median accuracy %.6f; no transactions", cutoff)
    return transactions


def apriori_frequent_pairs(
    transactions: Sequence[Transaction], min_support: float = DEFAULT_MIN_SUPPORT
) -> list[FrequentPair]:
    """Classic Apriori restricted to itemsets of size 2.

    Support is the fraction of transactions containing both items. Candidate
    pairs are joined from frequent single items only (anti-monotonicity),
    then pruned by support. Output is sorted by support descending, then
    lexically.
    """
    if not 0 < min_support <= 1:
        raise ValueError(f"min_support must be in (0, 1], got {min_support}")
    if not transactions:
        raise ValueError("apriori_frequent_pairs requires at least one transaction")

    n = len(transactions)
    item_counts: Counter[str] = Counter()
    for t in transactions:
        item_counts.update(t.items)
    frequent_items = sorted(i for i, c in item_counts.items() if c / n >= min_support)

    pair_counts: Counter[tuple[str, str]] = Counter()
    candidates = set(combinations(frequent_items, 2))
    for t in transactions:
        present = sorted(t.items.intersection(frequent_items))
        for pair in combinations(present, 2):
            if pair in candidates:
                pair_counts[pair] += 1

    frequent = [
        FrequentPair(pair, count / n)
        for pair, count in pair_counts.items()
        if count / n >= min_support
    ]
    frequent.sort(key=lambda fp: (-fp.support, fp.pair))
    return frequent


def regenerate_from_pairs(pairs: Sequence[FrequentPair]) -> PromptSet:
    """Turn mined clip x context pairs back into pair-format templates.

    Pairs that are not exactly one "clip:" and one "ctx:" item are skipped
    with a warning.
    """
    token_pairs: list[tuple[str, str]] = []
    for fp in pairs:
        clips = [i[len(CLIP_NS):] for i in fp.pair if i.startswith(CLIP_NS)]
        ctxs = [i[len(CTX_NS):] for i in fp.pair if i.startswith(CTX_NS)]
        if len(clips) == 1 and len(ctxs) == 1:
            token_pairs.append((clips[0], ctxs[0]))
        else:
            log.warning("skipping non clip x context pair %s", fp.pair)
    if not token_pairs:
        raise PromptError("no clip x context pairs to regenerate templates from")
    return generate_pair_templates(
        TokenLists(clip_tokens=(), context_tokens=()), pairs=token_pairs, strategy="apriori"
    )


def write_pairs_file(pairs: Sequence[FrequentPair], path: str | Path) -> None:
    """Persist mined pairs as "item1 item2 support" lines."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for fp in pairs:
            fh.write(f"{fp.pair[0]} {fp.pair[1]} {fp.support:.6f}\n")


def load_pairs_file(path: str | Path) -> list[FrequentPair]:
    pairs: list[FrequentPair] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            if len(fields) != 3:
                raise ValueError(f"{path}: line {line_no} must be 'item1 item2 support'")
            a, b, support = fields[0], fields[1], float(fields[2])
            pairs.append(FrequentPair(tuple(sorted((a, b))), support))
    return pairs
