"""Session fixture: a tiny random CLIP checkpoint saved with tokenizer files."""

from __future__ import annotations

import json

import pytest

from tiny_clip import TINY_MERGES, build_tiny_clip, tiny_vocab


@pytest.fixture(scope="session")
def tiny_checkpoint(tmp_path_factory):
    ckpt = tmp_path_factory.mktemp("tiny_clip")
    build_tiny_clip().save_pretrained(ckpt)
    vocab = tiny_vocab()
    (ckpt / "vocab.json").write_text(json.dumps(vocab), encoding="utf-8")
    merge_lines = ["#version: 0.2"] + [f"{a} {b}" for a, b in TINY_MERGES]
    (ckpt / "merges.txt").write_text("\n".join(merge_lines) + "\n", encoding="utf-8")
    return ckpt
