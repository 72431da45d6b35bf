"""Zero-shot and supervised evaluation runs, accuracy reports, and the CSV
schema consumed by the frequent-itemset selector.

Per-template accuracy evaluates each template as a singleton ensemble; the
whole-set row ensembles every template. Both are computed from one shared
cache of text and video embeddings, so there is no re-encoding drift between
them.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from mobmod.dataset import ManifestEntry, list_frame_files, load_frames, sample_frame_indices
from mobmod.embedding_ops import ClassTextEmbedding, ensemble_class_embedding, temporal_pool
from mobmod.labels import CLASS_ORDER
from mobmod.prompts import PromptSet, PromptTemplate, render
from mobmod.tokenizer import Vocabulary, encode
from mobmod.training import ProjectionLayer
from mobmod.zero_shot import classify

ENSEMBLE_ROW = "ensemble"

CSV_HEADER = ("template_id", "strategy", "tokens", "accuracy", "n_samples")


@dataclass(frozen=True)
class EvalRecord:
    """One per-template evaluation row; the Apriori transaction source."""

    template_id: str
    strategy: str
    provenance_tokens: frozenset[str]
    accuracy: float
    n_samples: int

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError(f"accuracy must be in [0, 1], got {self.accuracy}")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")


@dataclass
class ExperimentReport:
    mode: str  # "zero_shot" | "supervised"
    rows: dict[str, float]
    per_template: list[EvalRecord]
    config: dict = field(default_factory=dict)


@dataclass
class EvalConfig:
    frames_per_clip: int = 16
    pooling: str = "mean"
    logit_scale: float = 100.0
    threads: int = 1


def accuracy(predictions: Sequence[str], labels: Sequence[str]) -> float:
    if len(predictions) != len(labels):
        raise ValueError(f"length mismatch: {len(predictions)} predictions vs {len(labels)} labels")
    if not labels:
        raise ValueError("accuracy of an empty sample")
    return sum(p == t for p, t in zip(predictions, labels)) / len(labels)


def pooled_clip_vectors(
    entries: Sequence[ManifestEntry],
    backend,
    config: EvalConfig,
    *,
    space: str = "joint",
) -> tuple[list[str], list[str], list[np.ndarray]]:
    """Temporal-pooled per-clip vectors: 512-d "joint" embeddings for the
    zero-shot path, 768-d "feature" vectors for the projection path."""
    if space not in ("joint", "feature"):
        raise ValueError(f"unknown embedding space {space!r}")

    def one(entry: ManifestEntry) -> np.ndarray:
        n_frames = len(list_frame_files(entry))
        indices = sample_frame_indices(n_frames, config.frames_per_clip)
        frames = load_frames(entry, indices)
        features, joints = backend.encode_frames(frames)
        return temporal_pool(joints if space == "joint" else features, config.pooling)

    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            vectors = list(pool.map(one, entries))
    else:
        vectors = [one(e) for e in entries]
    return [e.id for e in entries], [e.label for e in entries], vectors


def run_zero_shot(
    entries: Sequence[ManifestEntry],
    prompt_set: PromptSet,
    backend,
    vocab: Vocabulary,
    config: EvalConfig | None = None,
    *,
    extra_config: dict | None = None,
) -> ExperimentReport:
    """Evaluate the test split without any trained layer (joint 512-d path)."""
    config = config or EvalConfig()
    test = [e for e in entries if e.split == "test"]
    if not test:
        raise ValueError("manifest has no test-split entries")
    _, labels, videos = pooled_clip_vectors(test, backend, config, space="joint")
    rows, per_template = _score_templates(videos, labels, prompt_set, backend, vocab, config)
    return ExperimentReport(
        mode="zero_shot",
        rows=rows,
        per_template=per_template,
        config={**asdict(config), **(extra_config or {})},
    )


def run_supervised(
    entries: Sequence[ManifestEntry],
    prompt_set: PromptSet,
    layer: ProjectionLayer,
    backend,
    vocab: Vocabulary,
    config: EvalConfig | None = None,
    *,
    training_metrics: list | None = None,
    extra_config: dict | None = None,
) -> ExperimentReport:
    """Evaluate the test split through the trained projection layer."""
    config = config or EvalConfig()
    test = [e for e in entries if e.split == "test"]
    if not test:
        raise ValueError("manifest has no test-split entries")
    _, labels, pooled = pooled_clip_vectors(test, backend, config, space="feature")
    projected = [layer.W.astype(np.float64) @ f + layer.b.astype(np.float64) for f in pooled]
    rows, per_template = _score_templates(projected, labels, prompt_set, backend, vocab, config)
    snapshot = {**asdict(config), **(extra_config or {})}
    if training_metrics is not None:
        snapshot["training_metrics"] = [asdict(m) for m in training_metrics]
    return ExperimentReport(
        mode="supervised", rows=rows, per_template=per_template, config=snapshot
    )


def _score_templates(
    videos: Sequence[np.ndarray],
    labels: Sequence[str],
    prompt_set: PromptSet,
    backend,
    vocab: Vocabulary,
    config: EvalConfig,
) -> tuple[dict[str, float], list[EvalRecord]]:
    routing = _routing(prompt_set)
    text_cache: dict[tuple[str, str], np.ndarray] = {}
    for template in prompt_set.templates:
        for label in _template_classes(template, routing):
            text_cache[(template.id, label)] = backend.encode_text(
                encode(render(template, label), vocab)
            )

    whole_set = _group_embeddings(prompt_set.templates, routing, text_cache)
    n = len(videos)

    per_template: list[EvalRecord] = []
    for template in prompt_set.templates:
        class_embs = _singleton_embeddings(template, routing, text_cache, whole_set)
        predictions = [classify(v, class_embs, config.logit_scale).predicted for v in videos]
        per_template.append(
            EvalRecord(
                template_id=template.id,
                strategy=template.strategy,
                provenance_tokens=template.provenance_tokens,
                accuracy=accuracy(predictions, labels),
                n_samples=n,
            )
        )

    rows: dict[str, float] = {}
    ensemble_preds = [classify(v, whole_set, config.logit_scale).predicted for v in videos]
    rows[ENSEMBLE_ROW] = accuracy(ensemble_preds, labels)
    strategies = []
    for t in prompt_set.templates:
        if t.strategy not in strategies:
            strategies.append(t.strategy)
    if len(strategies) > 1:
        for strategy in strategies:
            subset = [t for t in prompt_set.templates if t.strategy == strategy]
            group = _group_embeddings(subset, routing, text_cache)
            preds = [classify(v, group, config.logit_scale).predicted for v in videos]
            rows[strategy] = accuracy(preds, labels)
    return rows, per_template


def _routing(prompt_set: PromptSet) -> dict[str, str]:
    """template id -> owning class, for routed (feature-strategy) templates."""
    if prompt_set.per_class is None:
        return {}
    return {tid: label for label, tids in prompt_set.per_class.items() for tid in tids}


def _template_classes(template: PromptTemplate, routing: Mapping[str, str]) -> tuple[str, ...]:
    owner = routing.get(template.id)
    return (owner,) if owner else CLASS_ORDER


def _group_embeddings(
    templates: Sequence[PromptTemplate],
    routing: Mapping[str, str],
    text_cache: Mapping[tuple[str, str], np.ndarray],
) -> dict[str, ClassTextEmbedding]:
    result = {}
    for label in CLASS_ORDER:
        embeddings = [
            text_cache[(t.id, label)]
            for t in templates
            if routing.get(t.id) in (None, label)
        ]
        if not embeddings:
            raise ValueError(f"no templates contribute to class {label!r}")
        result[label] = ensemble_class_embedding(embeddings, label)
    return result


def _singleton_embeddings(
    template: PromptTemplate,
    routing: Mapping[str, str],
    text_cache: Mapping[tuple[str, str], np.ndarray],
    whole_set: Mapping[str, ClassTextEmbedding],
) -> dict[str, ClassTextEmbedding]:
    """Class embeddings for one template.

    A routed (class-specific) template supplies its own class; the opposite
    class falls back to the whole-set ensemble so the comparison stays
    two-sided.
    """
    owner = routing.get(template.id)
    result = {}
    for label in CLASS_ORDER:
        if owner is None or owner == label:
            result[label] = ensemble_class_embedding([text_cache[(template.id, label)]], label)
        else:
            result[label] = whole_set[label]
    return result


def emit_report(report: ExperimentReport, fmt: str, path: str | Path) -> None:
    """Write a report as CSV (per-template rows) or markdown (strategy table)."""
    if fmt == "csv":
        text = _to_csv(report)
    elif fmt == "markdown":
        text = _to_markdown(report)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _config_json(report: ExperimentReport) -> str:
    return json.dumps(report.config, sort_keys=True)


def _to_csv(report: ExperimentReport) -> str:
    buf = io.StringIO()
    buf.write(f"# mode: {report.mode}\n")
    buf.write(f"# config: {_config_json(report)}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for record in report.per_template:
        writer.writerow(
            [
                record.template_id,
                record.strategy,
                ";".join(sorted(record.provenance_tokens)),
                f"{record.accuracy:.6f}",
                record.n_samples,
            ]
        )
    return buf.getvalue()


def _to_markdown(report: ExperimentReport) -> str:
    columns = list(report.rows)
    lines = [
        f"# {report.mode} report",
        "",
        "| Model | " + " | ".join(columns) + " |",
        "| --- | " + " | ".join(["---"] * len(columns)) + " |",
        "| "
        + " | ".join([report.mode] + [f"{report.rows[c] * 100:.1f}" for c in columns])
        + " |",
        "",
        f"Config: `{_config_json(report)}`",
        "",
    ]
    return "\n".join(lines)


def load_eval_records(path: str | Path) -> list[EvalRecord]:
    """Parse a per-template CSV emitted by emit_report."""
    with open(path, encoding="utf-8", newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    reader = csv.reader(lines)
    try:
        header = tuple(next(reader))
    except StopIteration:
        raise ValueError(f"{path}: empty records file") from None
    if header != CSV_HEADER:
        raise ValueError(f"{path}: unexpected header {header}")
    records = []
    for row in reader:
        if len(row) != len(CSV_HEADER):
            raise ValueError(f"{path}: malformed row {row}")
        template_id, strategy, tokens, acc, n_samples = row
        provenance = frozenset(t for t in tokens.split(";") if t)
        records.append(
            EvalRecord(template_id, strategy, provenance, float(acc), int(n_samples))
        )
    return records
