"""Frozen encoder backends: preprocessed frames to 768-d features and 512-d
joint embeddings, token sequences to 512-d text embeddings.

Two backends:
  reference  — deterministic, dependency-free stand-in built from seeded
               random projections of per-channel pixel histograms (images)
               and per-position token hashing (text); used for tests and
               reproducible pipeline runs.
  model-file — ONNX sessions produced by the export tool; requires the
               optional onnxruntime dependency.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from mobmod.tokenizer import TokenSequence

FRAME_SIZE = 224
FEATURE_DIM = 768
EMBED_DIM = 512
HIST_BINS = 64

# Standard CLIP preprocessing constants; required to reproduce pretrained
# behavior with exported encoders.
CLIP_MEAN = (0.48145466, 0.4578275, 0.40821073)
CLIP_STD = (0.26862954, 0.26130258, 0.27577711)

# Histogram range for reference features; preprocessed values lie within
# (0 - mean) / std .. (1 - mean) / std, comfortably inside +-3.
_HIST_RANGE = (-3.0, 3.0)

# Seed-stream tags so the three seeded constructions never collide.
_TAG_HIST_PROJ = 101
_TAG_JOINT = 202
_TAG_TEXT = 303


class BackendError(RuntimeError):
    pass


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "reference"  # "reference" | "model-file"
    image_model_path: str | Path | None = None
    text_model_path: str | Path | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("reference", "model-file"):
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.kind == "model-file" and not (self.image_model_path and self.text_model_path):
            raise ValueError("model-file backend requires image_model_path and text_model_path")


def preprocess_frame(
    image: "Image.Image | np.ndarray",
    mean: Sequence[float] = CLIP_MEAN,
    std: Sequence[float] = CLIP_STD,
) -> np.ndarray:
    """Resize shorter side to 224 (bilinear), center-crop 224x224, scale to
    [0, 1], standardize per channel. Returns float32 (3, 224, 224).

    Accepts a PIL image, a HxWx3 uint8 array (0..255) or a HxWx3 float array
    already scaled to [0, 1].
    """
    arr = _to_unit_array(image)
    h, w = arr.shape[:2]
    if h < 1 or w < 1:
        raise ValueError("image must be at least 1x1")

    if min(h, w) != FRAME_SIZE:
        scale = FRAME_SIZE / min(h, w)
        new_w = max(FRAME_SIZE, round(w * scale))
        new_h = max(FRAME_SIZE, round(h * scale))
        arr = _bilinear_resize(arr, new_h, new_w)
        h, w = new_h, new_w

    top = (h - FRAME_SIZE) // 2
    left = (w - FRAME_SIZE) // 2
    crop = arr[top : top + FRAME_SIZE, left : left + FRAME_SIZE]

    mean_arr = np.asarray(mean, dtype=np.float32).reshape(3, 1, 1)
    std_arr = np.asarray(std, dtype=np.float32).reshape(3, 1, 1)
    chw = crop.transpose(2, 0, 1).astype(np.float32)
    return (chw - mean_arr) / std_arr


def _to_unit_array(image: "Image.Image | np.ndarray") -> np.ndarray:
    if isinstance(image, Image.Image):
        rgb = image.convert("RGB")
        return np.asarray(rgb, dtype=np.float32) / 255.0
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image array, got shape {arr.shape}")
    if arr.dtype == np.uint8:
        return arr.astype(np.float32) / 255.0
    return arr.astype(np.float32)


def _bilinear_resize(arr: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    # Per-channel float resize; avoids quantizing float inputs through uint8.
    channels = [
        Image.fromarray(np.ascontiguousarray(arr[:, :, c]), mode="F").resize(
            (new_w, new_h), resample=Image.Resampling.BILINEAR
        )
        for c in range(3)
    ]
    return np.stack([np.asarray(ch, dtype=np.float32) for ch in channels], axis=2)


def _validate_frame(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float32)
    if frame.shape != (3, FRAME_SIZE, FRAME_SIZE):
        raise ValueError(f"frame tensor must be (3, {FRAME_SIZE}, {FRAME_SIZE}), got {frame.shape}")
    if not np.isfinite(frame).all():
        raise ValueError("frame tensor contains non-finite values")
    return frame


def _token_ids(tokens: "TokenSequence | Sequence[int]") -> tuple[int, ...]:
    if isinstance(tokens, TokenSequence):
        return tokens.ids
    return tuple(int(i) for i in tokens)


class ReferenceBackend:
    """Deterministic encoder stand-in.

    Image features are a fixed seeded projection of a 64-bin per-channel
    histogram; the joint embedding is a fixed 512x768 matrix applied to the
    feature, which makes linearity checks against `joint_matrix` possible.
    Text embeddings sum one seeded vector per (position, token id).
    """

    kind = "reference"

    def __init__(self, seed: int = 0):
        self.seed = seed
        rng_hist = np.random.default_rng([seed, _TAG_HIST_PROJ])
        self._hist_proj = rng_hist.standard_normal((FEATURE_DIM, 3 * HIST_BINS)) / np.sqrt(
            3 * HIST_BINS
        )
        rng_joint = np.random.default_rng([seed, _TAG_JOINT])
        self.joint_matrix = rng_joint.standard_normal((EMBED_DIM, FEATURE_DIM)) / np.sqrt(
            FEATURE_DIM
        )
        self._text_cache: dict[tuple[int, int], np.ndarray] = {}

    def encode_frames(
        self, frames: Sequence[np.ndarray]
    ) -> tuple[list[np.ndarray], list[np.ndarray]]:
        if not frames:
            raise ValueError("encode_frames requires at least one frame")
        features = [self._hist_proj @ self._histogram(_validate_frame(f)) for f in frames]
        joints = [self.joint_matrix @ f for f in features]
        return features, joints

    def encode_text(self, tokens: "TokenSequence | Sequence[int]") -> np.ndarray:
        ids = _token_ids(tokens)
        total = np.zeros(EMBED_DIM)
        for pos, token_id in enumerate(ids):
            total += self._token_vector(pos, token_id)
        return total / np.sqrt(len(ids))

    def _histogram(self, frame: np.ndarray) -> np.ndarray:
        clipped = np.clip(frame, _HIST_RANGE[0], np.nextafter(_HIST_RANGE[1], 0))
        counts = [
            np.histogram(clipped[c], bins=HIST_BINS, range=_HIST_RANGE)[0] for c in range(3)
        ]
        hist = np.concatenate(counts).astype(np.float64)
        return hist / frame[0].size

    def _token_vector(self, pos: int, token_id: int) -> np.ndarray:
        key = (pos, token_id)
        vec = self._text_cache.get(key)
        if vec is None:
            rng = np.random.default_rng([self.seed, _TAG_TEXT, pos, token_id])
            vec = rng.standard_normal(EMBED_DIM)
            self._text_cache[key] = vec
        return vec


class OnnxBackend:
    """Runs exported encoder model files through onnxruntime."""

    kind = "model-file"

    def __init__(self, image_model_path: str | Path, text_model_path: str | Path):
        try:
            import onnxruntime
        except ImportError as exc:
            raise BackendError(
                "the model-file backend requires the optional onnxruntime dependency"
            ) from exc
        for path in (image_model_path, text_model_path):
            if not Path(path).is_file():
                raise BackendError(f"model file not found: {path}")
        opts = onnxruntime.SessionOptions()
        opts.log_severity_level = 3
        try:
            self._image = onnxruntime.InferenceSession(str(image_model_path), opts)
            self._text = onnxruntime.InferenceSession(str(text_model_path), opts)
        except Exception as exc:
            raise BackendError(f"failed to load model files: {exc}") from exc
        self._image_input = self._image.get_inputs()[0].name
        self._text_input = self._text.get_inputs()[0].name

    def encode_frames(
        self, frames: Sequence[np.ndarray]
    ) -> tuple[list[np.ndarray], list[np.ndarray]]:
        if not frames:
            raise ValueError("encode_frames requires at least one frame")
        features: list[np.ndarray] = []
        joints: list[np.ndarray] = []
        for frame in frames:
            frame = _validate_frame(frame)
            feat, joint = self._image.run(
                ["features_768", "embed_512"], {self._image_input: frame[None]}
            )
            features.append(_check_dim(feat[0], FEATURE_DIM, "features_768"))
            joints.append(_check_dim(joint[0], EMBED_DIM, "embed_512"))
        return features, joints

    def encode_text(self, tokens: "TokenSequence | Sequence[int]") -> np.ndarray:
        ids = np.asarray(_token_ids(tokens), dtype=np.int64)[None]
        (embed,) = self._text.run(["embed_512"], {self._text_input: ids})
        return _check_dim(embed[0], EMBED_DIM, "embed_512")


def _check_dim(vec: np.ndarray, expected: int, name: str) -> np.ndarray:
    vec = np.asarray(vec).reshape(-1)
    if vec.shape[0] != expected:
        raise BackendError(f"model output {name!r}: expected dimension {expected}, got {vec.shape[0]}")
    return vec.astype(np.float64)


def create_backend(config: BackendConfig) -> "ReferenceBackend | OnnxBackend":
    if config.kind == "reference":
        return ReferenceBackend(seed=config.seed)
    return OnnxBackend(config.image_model_path, config.text_model_path)
