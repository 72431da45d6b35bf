"""Reader for the parity test-vector file shipped in an export bundle.

Layout (little-endian): magic "MOBX", u32 version, u32 image-case count, u32
text-case count; then per image case float32[3*224*224] input, float32[768]
features, float32[512] embedding; then per text case int64[77] input and
float32[512] embedding.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PARITY_MAGIC = b"MOBX"
PARITY_VERSION = 1

_IMAGE_SHAPE = (3, 224, 224)
_FEATURE_DIM = 768
_EMBED_DIM = 512
_CONTEXT_LENGTH = 77


@dataclass(frozen=True)
class ImageParityCase:
    pixels: np.ndarray  # float32 (3, 224, 224)
    features: np.ndarray  # float32 (768,)
    embedding: np.ndarray  # float32 (512,)


@dataclass(frozen=True)
class TextParityCase:
    token_ids: np.ndarray  # int64 (77,)
    embedding: np.ndarray  # float32 (512,)


@dataclass(frozen=True)
class ParityVectors:
    image_cases: tuple[ImageParityCase, ...]
    text_cases: tuple[TextParityCase, ...]


def load_parity(path: str | Path) -> ParityVectors:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != PARITY_MAGIC:
        raise ValueError(f"{path}: not a parity file (expected magic {PARITY_MAGIC.decode()!r})")
    version, n_image, n_text = struct.unpack_from("<III", data, 4)
    if version != PARITY_VERSION:
        raise ValueError(f"{path}: unsupported parity version {version}")
    offset = 16

    def take(dtype: str, count: int) -> np.ndarray:
        nonlocal offset
        try:
            arr = np.frombuffer(data, dtype=dtype, count=count, offset=offset).copy()
        except ValueError as exc:
            raise ValueError(f"{path}: truncated parity file") from exc
        offset += arr.nbytes
        return arr

    n_pixels = int(np.prod(_IMAGE_SHAPE))
    image_cases = []
    for _ in range(n_image):
        pixels = take("<f4", n_pixels).reshape(_IMAGE_SHAPE)
        features = take("<f4", _FEATURE_DIM)
        embedding = take("<f4", _EMBED_DIM)
        image_cases.append(ImageParityCase(pixels, features, embedding))
    text_cases = []
    for _ in range(n_text):
        token_ids = take("<i8", _CONTEXT_LENGTH)
        embedding = take("<f4", _EMBED_DIM)
        text_cases.append(TextParityCase(token_ids, embedding))
    if offset != len(data):
        raise ValueError(f"{path}: trailing or missing bytes")
    return ParityVectors(tuple(image_cases), tuple(text_cases))
