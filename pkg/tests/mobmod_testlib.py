"""Shared test helpers: toy vocabularies and the synthetic frame dataset."""

from __future__ import annotations

import numpy as np
from PIL import Image

from mobmod.labels import BENIGN, MALICIOUS
from mobmod.tokenizer import EOT_TOKEN, PAD_TOKEN, SOT_TOKEN, Vocabulary

# A valid BPE merge list: every operand is a single character or the product
# of an earlier merge.
TOY_MERGES = [("a", "b"), ("c", "d"), ("ab", "c"), ("b", "c"), ("ab", "cd")]
TOY_TOKENS = ["a", "b", "c", "d", "ab", "cd", "abc", "bc", "abcd"]


def make_vocabulary(tokens: list[str], merges: list[tuple[str, str]], context_length: int = 77):
    """Vocabulary over explicit tokens plus the three specials appended."""
    ordered = list(tokens) + [SOT_TOKEN, EOT_TOKEN, PAD_TOKEN]
    token_to_id = {t: i for i, t in enumerate(ordered)}
    return Vocabulary(
        token_to_id=token_to_id,
        merges=list(merges),
        sot_id=token_to_id[SOT_TOKEN],
        eot_id=token_to_id[EOT_TOKEN],
        pad_id=token_to_id[PAD_TOKEN],
        context_length=context_length,
    )


def write_frame(path, rng, base: float, size: int = 16) -> None:
    pixels = np.clip(rng.normal(base, 0.08, size=(size, size, 3)), 0.0, 1.0)
    Image.fromarray((pixels * 255).astype(np.uint8)).save(path)


def build_manifest(root, n_train: int = 4, n_test: int = 4, frames: int = 5, seed: int = 9):
    """Write a small separable frame dataset plus its manifest CSV.

    Malicious clips are dark, benign clips bright, so the reference backend's
    histogram features separate the classes.
    """
    rng = np.random.default_rng(seed)
    rows = []
    specs = [("train", i) for i in range(n_train)] + [("test", i) for i in range(n_test)]
    for split, i in specs:
        label = MALICIOUS if i % 2 == 0 else BENIGN
        clip_id = f"{split}{i:02d}"
        clip_dir = root / "frames" / clip_id
        clip_dir.mkdir(parents=True)
        base = 0.2 if label == MALICIOUS else 0.8
        for f in range(frames):
            write_frame(clip_dir / f"frame_{f:03d}.png", rng, base)
        rows.append(f"{clip_id},frames/{clip_id},{label},{split}")
    manifest = root / "manifest.csv"
    manifest.write_text("id,frames_dir,label,split\n" + "\n".join(rows) + "\n", encoding="utf-8")
    return manifest
