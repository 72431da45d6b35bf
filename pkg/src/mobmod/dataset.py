"""Manifest loading, deterministic frame sampling, and frame loading.

A manifest is a CSV file with header ``id,frames_dir,label,split``; each
``frames_dir`` holds pre-extracted frame images whose lexicographic file
order defines the frame order. Relative frame directories resolve against
the manifest's own directory.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from mobmod.encoder import preprocess_frame
from mobmod.labels import validate_label, validate_split

MANIFEST_FIELDS = ("id", "frames_dir", "label", "split")


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    frames_dir: Path
    label: str
    split: str


def load_manifest(path: str | Path) -> list[ManifestEntry]:
    """Parse and validate a manifest CSV; duplicate ids and unknown
    label/split values are errors naming the offending line."""
    path = Path(path)
    entries: list[ManifestEntry] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != MANIFEST_FIELDS:
            raise ValueError(
                f"{path}: manifest header must be {','.join(MANIFEST_FIELDS)!r},"
                f" got {reader.fieldnames}"
            )
        for line_no, row in enumerate(reader, start=2):
            if any(row.get(f) in (None, "") for f in MANIFEST_FIELDS):
                raise ValueError(f"{path}: line {line_no}: missing field")
            clip_id = row["id"]
            if clip_id in seen:
                raise ValueError(f"{path}: line {line_no}: duplicate id {clip_id!r}")
            seen.add(clip_id)
            try:
                label = validate_label(row["label"])
                split = validate_split(row["split"])
            except ValueError as exc:
                raise ValueError(f"{path}: line {line_no}: {exc}") from exc
            frames_dir = Path(row["frames_dir"])
            if not frames_dir.is_absolute():
                frames_dir = path.parent / frames_dir
            entries.append(ManifestEntry(clip_id, frames_dir, label, split))
    return entries


def sample_frame_indices(available: int, wanted: int) -> list[int]:
    """Center-of-stride uniform sampling: idx_k = floor((k + 0.5) * N / T).

    Repeats indices when fewer frames exist than wanted.
    """
    if available < 1 or wanted < 1:
        raise ValueError("available and wanted frame counts must be >= 1")
    return [math.floor((k + 0.5) * available / wanted) for k in range(wanted)]


def list_frame_files(entry: ManifestEntry) -> list[Path]:
    if not entry.frames_dir.is_dir():
        raise FileNotFoundError(f"clip {entry.id!r}: frames directory {entry.frames_dir} missing")
    files = sorted(p for p in entry.frames_dir.iterdir() if p.is_file())
    if not files:
        raise ValueError(f"clip {entry.id!r}: no frame files in {entry.frames_dir}")
    return files


def load_frames(
    entry: ManifestEntry,
    indices: Sequence[int],
    preprocess: Callable[[Image.Image], np.ndarray] = preprocess_frame,
) -> list[np.ndarray]:
    """Decode and preprocess the indexed frames, in index order."""
    files = list_frame_files(entry)
    tensors: list[np.ndarray] = []
    for idx in indices:
        frame_path = files[idx]
        try:
            with Image.open(frame_path) as img:
                tensors.append(preprocess(img))
        except (UnidentifiedImageError, OSError) as exc:
            raise ValueError(f"failed to decode frame {frame_path}: {exc}") from exc
    return tensors
