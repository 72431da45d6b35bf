"""Zero-shot classification of video embeddings against prompt-ensembled
class text embeddings."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from mobmod.embedding_ops import ClassTextEmbedding, cosine_similarity, ensemble_class_embedding
from mobmod.labels import CLASS_ORDER
from mobmod.prompts import PromptSet, render
from mobmod.tokenizer import Vocabulary, encode

DEFAULT_LOGIT_SCALE = 100.0


@dataclass(frozen=True)
class ClassScores:
    similarity: dict[str, float]
    probability: dict[str, float]
    predicted: str


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    exps = np.exp(shifted)
    return exps / exps.sum()


def class_embeddings(
    prompt_set: PromptSet, backend, vocab: Vocabulary
) -> dict[str, ClassTextEmbedding]:
    """Render, encode and ensemble each class's templates.

    Feature-strategy sets route templates to their own class; every other
    strategy renders all templates with each class name.
    """
    if not prompt_set.templates:
        raise ValueError("prompt_set has no templates")
    result: dict[str, ClassTextEmbedding] = {}
    for label in CLASS_ORDER:
        templates = prompt_set.class_templates(label)
        embeddings = [backend.encode_text(encode(render(t, label), vocab)) for t in templates]
        result[label] = ensemble_class_embedding(embeddings, label)
    return result


def classify(
    video: np.ndarray,
    class_embs: Mapping[str, ClassTextEmbedding],
    logit_scale: float = DEFAULT_LOGIT_SCALE,
) -> ClassScores:
    """Cosine similarity per class, temperature-scaled softmax, argmax.

    Exact ties predict the first class in CLASS_ORDER. A zero logit scale
    degenerates to the uniform distribution by design.
    """
    video = np.asarray(video, dtype=np.float64)
    if video.ndim != 1 or video.shape[0] != 512:
        raise ValueError(f"video embedding must be 512-d, got shape {video.shape}")
    if logit_scale < 0:
        raise ValueError("logit_scale must be >= 0")
    sims = np.array([cosine_similarity(video, class_embs[c].values) for c in CLASS_ORDER])
    probs = softmax(logit_scale * sims)
    predicted = CLASS_ORDER[int(np.argmax(probs))]
    return ClassScores(
        similarity={c: float(s) for c, s in zip(CLASS_ORDER, sims)},
        probability={c: float(p) for c, p in zip(CLASS_ORDER, probs)},
        predicted=predicted,
    )
