"""Apriori mining: median cutoff, transaction building, oracle equivalence
against brute-force 2-subset enumeration, and template regeneration."""

from __future__ import annotations

from itertools import combinations

import numpy as np
import pytest

from mobmod.apriori import (
    FrequentPair,
    Transaction,
    apriori_frequent_pairs,
    build_transactions,
    load_pairs_file,
    median,
    regenerate_from_pairs,
    write_pairs_file,
)
from mobmod.evaluation import EvalRecord
from mobmod.prompts import PromptError


def brute_force_pairs(transactions, min_support):
    """Oracle: enumerate every 2-subset of the item universe directly."""
    n = len(transactions)
    universe = sorted({i for t in transactions for i in t.items})
    out = []
    for pair in combinations(universe, 2):
        count = sum(1 for t in transactions if set(pair) <= t.items)
        if count / n >= min_support:
            out.append(FrequentPair(pair, count / n))
    out.sort(key=lambda fp: (-fp.support, fp.pair))
    return out


def record(tid, acc, tokens):
    return EvalRecord(tid, "pair", frozenset(tokens), acc, 10)


class TestMedian:
    def test_odd(self):
        assert median([0.62, 0.58, 0.70]) == pytest.approx(0.62)

    def test_even(self):
        assert median([0.5, 0.7]) == pytest.approx(0.6)

    def test_single(self):
        assert median([0.4]) == pytest.approx(0.4)

    def test_empty(self):
        with pytest.raises(ValueError):
            median([])


class TestBuildTransactions:
    def test_strictly_above_median(self):
        records = [
            record("t1", 0.62, {"clip:a", "ctx:x"}),
            record("t2", 0.58, {"clip:b", "ctx:x"}),
            record("t3", 0.70, {"clip:a", "ctx:y"}),
        ]
        transactions = build_transactions(records)
        assert len(transactions) == 1
        assert transactions[0].items == frozenset({"clip:a", "ctx:y"})

    def test_all_equal_gives_empty(self):
        records = [record(f"t{i}", 0.5, {"clip:a", f"ctx:{i}"}) for i in range(4)]
        assert build_transactions(records) == []

    def test_four_records_two_above(self):
        records = [
            record("t1", 0.5, {"clip:a"}),
            record("t2", 0.6, {"clip:b"}),
            record("t3", 0.7, {"clip:c"}),
            record("t4", 0.8, {"clip:d"}),
        ]
        assert len(build_transactions(records)) == 2


class TestAprioriFrequentPairs:
    def test_hand_traced_example(self):
        transactions = [
            Transaction(frozenset(s)) for s in ({"A", "B"}, {"A", "B"}, {"A", "C"}, {"B", "C"})
        ]
        result = apriori_frequent_pairs(transactions, 0.5)
        assert result == [FrequentPair(("A", "B"), 0.5)]

    def test_single_transaction_full_support(self):
        result = apriori_frequent_pairs([Transaction(frozenset({"A", "B"}))], 1.0)
        assert result == [FrequentPair(("A", "B"), 1.0)]

    def test_no_pair_clears_support(self):
        transactions = [Transaction(frozenset({"A", "B"})), Transaction(frozenset({"C", "D"}))]
        assert apriori_frequent_pairs(transactions, 0.6) == []

    def test_invalid_min_support(self):
        with pytest.raises(ValueError):
            apriori_frequent_pairs([Transaction(frozenset({"A"}))], 0.0)
        with pytest.raises(ValueError):
            apriori_frequent_pairs([Transaction(frozenset({"A"}))], 1.5)

    def test_matches_brute_force_100_seeded_trials(self):
        for trial in range(100):
            rng = np.random.default_rng(1000 + trial)
            n_items = int(rng.integers(2, 11))
            items = [f"i{k}" for k in range(n_items)]
            n_tx = int(rng.integers(1, 51))
            transactions = []
            for _ in range(n_tx):
                size = int(rng.integers(1, n_items + 1))
                chosen = rng.choice(items, size=size, replace=False)
                transactions.append(Transaction(frozenset(chosen.tolist())))
            min_support = float(rng.choice([0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]))
            assert apriori_frequent_pairs(transactions, min_support) == brute_force_pairs(
                transactions, min_support
            ), f"trial {trial}"

    def test_anti_monotonicity(self):
        rng = np.random.default_rng(5)
        transactions = [
            Transaction(frozenset(rng.choice([f"i{k}" for k in range(6)], size=3, replace=False)))
            for _ in range(30)
        ]
        n = len(transactions)
        for fp in apriori_frequent_pairs(transactions, 0.2):
            for item in fp.pair:
                single = sum(1 for t in transactions if item in t.items) / n
                assert single >= 0.2

    def test_transaction_order_invariance(self):
        rng = np.random.default_rng(6)
        transactions = [
            Transaction(frozenset(rng.choice(["a", "b", "c", "d"], size=2, replace=False)))
            for _ in range(20)
        ]
        baseline = apriori_frequent_pairs(transactions, 0.2)
        for seed in range(5):
            shuffled = list(transactions)
            np.random.default_rng(seed).shuffle(shuffled)
            assert apriori_frequent_pairs(shuffled, 0.2) == baseline


class TestRegenerate:
    def test_single_pair_three_templates(self):
        ps = regenerate_from_pairs([FrequentPair(("clip:image", "ctx:cartoon"), 0.5)])
        assert len(ps.templates) == 3
        assert all(t.strategy == "apriori" for t in ps.templates)

    def test_shared_context_dedup(self):
        ps = regenerate_from_pairs(
            [
                FrequentPair(("clip:image", "ctx:cartoon"), 0.6),
                FrequentPair(("clip:example", "ctx:cartoon"), 0.5),
            ]
        )
        assert len(ps.templates) == 5

    def test_non_clip_context_pair_skipped(self):
        with pytest.raises(PromptError):
            regenerate_from_pairs([FrequentPair(("ctx:cartoon", "ctx:comic"), 0.5)])


class TestPairsFile:
    def test_round_trip(self, tmp_path):
        pairs = [
            FrequentPair(("clip:image", "ctx:cartoon"), 0.75),
            FrequentPair(("clip:example", "ctx:comic"), 0.5),
        ]
        path = tmp_path / "pairs.txt"
        write_pairs_file(pairs, path)
        assert load_pairs_file(path) == pairs
