"""Checkpoint-to-bundle conversion.

A bundle holds six files:
  image_encoder.onnx  input float32 1x3x224x224, outputs "features_768"
                      (pre-projection pooled features) and "embed_512"
  text_encoder.onnx   input int64 1x77, output "embed_512"
  vocab.txt           one token per line, id = line index
  merges.txt          one space-separated merge pair per line, rank = line index
  visual_proj.bin     magic "MOBV", u32 dims (512, 768), row-major float32
  parity.bin          magic "MOBX", sampled inputs with expected outputs

The pre-projection 768-d features are exported as a named second output so a
downstream projection layer attaches directly on top of the image encoder.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

FEATURE_DIM = 768
EMBED_DIM = 512
IMAGE_SIZE = 224
CONTEXT_LENGTH = 77

VISUAL_PROJ_MAGIC = b"MOBV"
PARITY_MAGIC = b"MOBX"
PARITY_VERSION = 1

SOT_TOKEN = "<|startoftext|>"
EOT_TOKEN = "<|endoftext|>"
PAD_TOKEN = "<|pad|>"

MODEL_WEIGHTS = {"vit-b-16": "openai/clip-vit-base-patch16"}

BUNDLE_FILES = (
    "image_encoder.onnx",
    "text_encoder.onnx",
    "vocab.txt",
    "merges.txt",
    "visual_proj.bin",
    "parity.bin",
)


class ExportError(RuntimeError):
    pass


@dataclass(frozen=True)
class ImageCase:
    pixels: np.ndarray  # float32 (3, 224, 224)
    features: np.ndarray  # float32 (768,)
    embedding: np.ndarray  # float32 (512,)


@dataclass(frozen=True)
class TextCase:
    token_ids: np.ndarray  # int64 (77,)
    embedding: np.ndarray  # float32 (512,)


class ImageEncoderWrapper(nn.Module):
    """Vision tower emitting both the pooled 768-d features and the projected
    joint embedding."""

    def __init__(self, model):
        super().__init__()
        self.vision_model = model.vision_model
        self.visual_projection = model.visual_projection

    def forward(self, pixel_values):
        outputs = self.vision_model(pixel_values=pixel_values)
        pooled = outputs.pooler_output
        return pooled, self.visual_projection(pooled)


class TextEncoderWrapper(nn.Module):
    def __init__(self, model):
        super().__init__()
        self.text_model = model.text_model
        self.text_projection = model.text_projection

    def forward(self, input_ids):
        outputs = self.text_model(input_ids=input_ids)
        return self.text_projection(outputs.pooler_output)


def load_model(weights: str):
    """Load a CLIP checkpoint (local directory or hub id) in eval mode."""
    from transformers import CLIPModel

    try:
        model = CLIPModel.from_pretrained(weights, attn_implementation="eager")
    except Exception as exc:
        raise ExportError(f"could not load CLIP weights from {weights!r}: {exc}") from exc
    model.eval()
    _validate_dims(model)
    return model


def _validate_dims(model) -> None:
    vision = model.config.vision_config
    text = model.config.text_config
    checks = {
        "vision hidden size": (vision.hidden_size, FEATURE_DIM),
        "projection dim": (model.config.projection_dim, EMBED_DIM),
        "image size": (vision.image_size, IMAGE_SIZE),
        "visual projection shape": (
            tuple(model.visual_projection.weight.shape),
            (EMBED_DIM, FEATURE_DIM),
        ),
    }
    for name, (actual, expected) in checks.items():
        if actual != expected:
            raise ExportError(f"{name}: expected {expected}, got {actual}")
    if text.max_position_embeddings < CONTEXT_LENGTH:
        raise ExportError(
            f"text context too short: {text.max_position_embeddings} < {CONTEXT_LENGTH}"
        )


def load_tokenizer_data(weights: str) -> tuple[dict[str, int], list[tuple[str, str]]]:
    """Vocabulary map and ranked merges from a checkpoint.

    Local directories are read straight from vocab.json / merges.txt; hub ids
    go through the tokenizer class.
    """
    local = Path(weights)
    if local.is_dir():
        vocab_file = local / "vocab.json"
        merges_file = local / "merges.txt"
        if not vocab_file.is_file() or not merges_file.is_file():
            raise ExportError(f"{weights}: missing vocab.json or merges.txt")
        with open(vocab_file, encoding="utf-8") as fh:
            vocab = json.load(fh)
        merges: list[tuple[str, str]] = []
        for line in merges_file.read_text(encoding="utf-8").splitlines():
            if line.startswith("#") or not line.strip():
                continue
            fields = line.split(" ")
            if len(fields) != 2:
                raise ExportError(f"{merges_file}: malformed merge line {line!r}")
            merges.append((fields[0], fields[1]))
        return vocab, merges

    from transformers import CLIPTokenizer

    try:
        tok = CLIPTokenizer.from_pretrained(weights)
    except Exception as exc:
        raise ExportError(f"could not load tokenizer from {weights!r}: {exc}") from exc
    merges = [pair for pair, _ in sorted(tok.bpe_ranks.items(), key=lambda kv: kv[1])]
    return tok.get_vocab(), merges


def write_tokenizer_files(
    vocab: dict[str, int], merges: list[tuple[str, str]], out_dir: Path
) -> None:
    ids = sorted(vocab.values())
    if ids != list(range(len(vocab))):
        raise ExportError("vocabulary ids are not contiguous from 0")
    by_id = sorted(vocab.items(), key=lambda kv: kv[1])
    with open(out_dir / "vocab.txt", "w", encoding="utf-8", newline="\n") as fh:
        for token, _ in by_id:
            fh.write(token + "\n")
    with open(out_dir / "merges.txt", "w", encoding="utf-8", newline="\n") as fh:
        for left, right in merges:
            fh.write(f"{left} {right}\n")


def write_visual_proj(model, path: Path) -> None:
    matrix = model.visual_projection.weight.detach().cpu().numpy().astype("<f4")
    with open(path, "wb") as fh:
        fh.write(VISUAL_PROJ_MAGIC)
        fh.write(struct.pack("<II", EMBED_DIM, FEATURE_DIM))
        fh.write(np.ascontiguousarray(matrix).tobytes())


def special_ids(vocab: dict[str, int]) -> tuple[int, int, int]:
    """(sot, eot, pad); pad falls back to id 0 when no dedicated token exists,
    mirroring the consumer's convention."""
    try:
        sot, eot = vocab[SOT_TOKEN], vocab[EOT_TOKEN]
    except KeyError as exc:
        raise ExportError(f"vocabulary missing special token {exc}") from exc
    pad = vocab.get(PAD_TOKEN, 0)
    if pad in (sot, eot):
        raise ExportError("no usable pad id: id 0 collides with a start/end marker")
    return sot, eot, pad


def compute_parity_cases(
    model,
    vocab: dict[str, int],
    *,
    seed: int = 0,
    n_image: int = 8,
    n_text: int = 8,
) -> tuple[list[ImageCase], list[TextCase]]:
    """Run seeded sample inputs through the torch model to freeze expected
    outputs. Deterministic for a fixed checkpoint and seed."""
    rng = np.random.default_rng([seed, 1])
    image_wrapper = ImageEncoderWrapper(model).eval()
    text_wrapper = TextEncoderWrapper(model).eval()

    image_cases: list[ImageCase] = []
    with torch.no_grad():
        for _ in range(n_image):
            pixels = rng.normal(0.0, 1.0, size=(3, IMAGE_SIZE, IMAGE_SIZE)).astype(np.float32)
            features, embed = image_wrapper(torch.from_numpy(pixels[None]))
            image_cases.append(
                ImageCase(pixels, features[0].numpy().copy(), embed[0].numpy().copy())
            )

    sot, eot, pad = special_ids(vocab)
    specials = {sot, eot, pad}
    candidates = np.array([i for i in range(len(vocab)) if i not in specials], dtype=np.int64)
    text_cases: list[TextCase] = []
    with torch.no_grad():
        for _ in range(n_text):
            content = rng.choice(candidates, size=int(rng.integers(1, 20)))
            ids = np.full(CONTEXT_LENGTH, pad, dtype=np.int64)
            ids[0] = sot
            ids[1 : 1 + len(content)] = content
            ids[1 + len(content)] = eot
            embed = text_wrapper(torch.from_numpy(ids[None]))
            text_cases.append(TextCase(ids, embed[0].numpy().copy()))
    return image_cases, text_cases


def write_parity(path: Path, image_cases: list[ImageCase], text_cases: list[TextCase]) -> None:
    with open(path, "wb") as fh:
        fh.write(PARITY_MAGIC)
        fh.write(struct.pack("<III", PARITY_VERSION, len(image_cases), len(text_cases)))
        for case in image_cases:
            fh.write(np.ascontiguousarray(case.pixels, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(case.features, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(case.embedding, dtype="<f4").tobytes())
        for case in text_cases:
            fh.write(np.ascontiguousarray(case.token_ids, dtype="<i8").tobytes())
            fh.write(np.ascontiguousarray(case.embedding, dtype="<f4").tobytes())


def read_parity(path: Path) -> tuple[list[ImageCase], list[TextCase]]:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != PARITY_MAGIC:
        raise ExportError(f"{path}: not a parity file")
    version, n_image, n_text = struct.unpack_from("<III", data, 4)
    if version != PARITY_VERSION:
        raise ExportError(f"{path}: unsupported version {version}")
    offset = 16

    def take(dtype: str, count: int) -> np.ndarray:
        nonlocal offset
        try:
            arr = np.frombuffer(data, dtype=dtype, count=count, offset=offset).copy()
        except ValueError as exc:
            raise ExportError(f"{path}: truncated parity file") from exc
        offset += arr.nbytes
        return arr

    image_cases = []
    for _ in range(n_image):
        pixels = take("<f4", 3 * IMAGE_SIZE * IMAGE_SIZE).reshape(3, IMAGE_SIZE, IMAGE_SIZE)
        image_cases.append(ImageCase(pixels, take("<f4", FEATURE_DIM), take("<f4", EMBED_DIM)))
    text_cases = []
    for _ in range(n_text):
        text_cases.append(TextCase(take("<i8", CONTEXT_LENGTH), take("<f4", EMBED_DIM)))
    if offset != len(data):
        raise ExportError(f"{path}: trailing or missing bytes")
    return image_cases, text_cases


def export_onnx_models(model, out_dir: Path, opset: int = 17) -> None:
    """Serialize both encoders; needs the onnx package installed."""
    image_wrapper = ImageEncoderWrapper(model).eval()
    text_wrapper = TextEncoderWrapper(model).eval()
    pixel_example = torch.zeros(1, 3, IMAGE_SIZE, IMAGE_SIZE, dtype=torch.float32)
    ids_example = torch.zeros(1, CONTEXT_LENGTH, dtype=torch.int64)
    try:
        torch.onnx.export(
            image_wrapper,
            (pixel_example,),
            str(out_dir / "image_encoder.onnx"),
            input_names=["pixel_values"],
            output_names=["features_768", "embed_512"],
            opset_version=opset,
            dynamo=False,
        )
        torch.onnx.export(
            text_wrapper,
            (ids_example,),
            str(out_dir / "text_encoder.onnx"),
            input_names=["input_ids"],
            output_names=["embed_512"],
            opset_version=opset,
            dynamo=False,
        )
    except Exception as exc:
        raise ExportError(f"ONNX serialization failed: {exc}") from exc


def export_bundle(model_name: str, weights: str | None, out_dir: str | Path, seed: int = 0) -> list[Path]:
    """Produce the full six-file bundle; returns the written paths."""
    if model_name not in MODEL_WEIGHTS:
        raise ExportError(f"unknown model {model_name!r}; supported: {sorted(MODEL_WEIGHTS)}")
    weights = weights or MODEL_WEIGHTS[model_name]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    model = load_model(weights)
    vocab, merges = load_tokenizer_data(weights)
    export_onnx_models(model, out_dir)
    write_tokenizer_files(vocab, merges, out_dir)
    write_visual_proj(model, out_dir / "visual_proj.bin")
    image_cases, text_cases = compute_parity_cases(model, vocab, seed=seed)
    write_parity(out_dir / "parity.bin", image_cases, text_cases)
    return [out_dir / name for name in BUNDLE_FILES]


def verify_bundle(bundle_dir: str | Path, tolerance: float = 1e-3) -> float:
    """Replay parity inputs through the ONNX runtime; returns the max abs
    diff, raising when it exceeds the tolerance or files are missing."""
    bundle_dir = Path(bundle_dir)
    missing = [name for name in BUNDLE_FILES if not (bundle_dir / name).is_file()]
    if missing:
        raise ExportError(f"bundle incomplete, missing: {', '.join(missing)}")
    image_cases, text_cases = read_parity(bundle_dir / "parity.bin")
    if len(image_cases) < 8 or len(text_cases) < 8:
        raise ExportError("parity file must hold at least 8 image and 8 text cases")

    try:
        import onnxruntime
    except ImportError as exc:
        raise ExportError("verification requires the onnxruntime package") from exc

    opts = onnxruntime.SessionOptions()
    opts.log_severity_level = 3
    image_sess = onnxruntime.InferenceSession(str(bundle_dir / "image_encoder.onnx"), opts)
    text_sess = onnxruntime.InferenceSession(str(bundle_dir / "text_encoder.onnx"), opts)

    worst = 0.0
    for case in image_cases:
        features, embed = image_sess.run(
            ["features_768", "embed_512"], {"pixel_values": case.pixels[None]}
        )
        worst = max(worst, float(np.abs(features[0] - case.features).max()))
        worst = max(worst, float(np.abs(embed[0] - case.embedding).max()))
    for case in text_cases:
        (embed,) = text_sess.run(["embed_512"], {"input_ids": case.token_ids[None]})
        worst = max(worst, float(np.abs(embed[0] - case.embedding).max()))
    if worst >= tolerance:
        raise ExportError(f"parity mismatch: max abs diff {worst:.6f} >= {tolerance}")
    return worst
