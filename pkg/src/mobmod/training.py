"""Training of the 768 -> 512 projection layer on pooled frozen features.

The objective is mean cross-entropy over softmax of temperature-scaled cosine
logits between the normalized projected feature and the (frozen) class text
embeddings. Gradients are closed-form: chain rule through softmax, the scaled
dot products, and the normalization Jacobian (I/||z|| - z z^T/||z||^3).

The gradient-check path runs in float64; production training runs float32.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from mobmod.embedding_ops import NORM_EPS, ClassTextEmbedding
from mobmod.labels import CLASS_ORDER, label_index
from mobmod.prompts import PromptSet
from mobmod.tokenizer import Vocabulary
from mobmod.zero_shot import class_embeddings as _class_embeddings

PROJECTION_MAGIC = b"MOBP"
VISUAL_PROJ_MAGIC = b"MOBV"
FEATURE_CACHE_MAGIC = b"MOBF"

OUT_DIM = 512
IN_DIM = 768

_TAG_INIT = 404


@dataclass
class ProjectionLayer:
    """The only learnable state: weight (512, 768) and bias (512,)."""

    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        if self.W.shape != (OUT_DIM, IN_DIM) or self.b.shape != (OUT_DIM,):
            raise ValueError(
                f"projection shapes must be ({OUT_DIM}, {IN_DIM}) and ({OUT_DIM},),"
                f" got {self.W.shape} and {self.b.shape}"
            )

    @classmethod
    def initialize(
        cls, seed: int, warm_start: np.ndarray | None = None, dtype=np.float32
    ) -> "ProjectionLayer":
        """Uniform +-sqrt(6/(in+out)) init, or a pretrained visual-projection
        warm start when one is supplied."""
        if warm_start is not None:
            W = np.array(warm_start, dtype=dtype)
        else:
            limit = np.sqrt(6.0 / (IN_DIM + OUT_DIM))
            rng = np.random.default_rng([seed, _TAG_INIT])
            W = rng.uniform(-limit, limit, size=(OUT_DIM, IN_DIM)).astype(dtype)
        return cls(W=W, b=np.zeros(OUT_DIM, dtype=dtype))


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 16
    frames_per_clip: int = 16
    learning_rate: float = 1e-4
    logit_scale: float = 100.0
    seed: int = 42
    pooling: str = "mean"
    max_steps: int | None = None

    def __post_init__(self):
        positive = {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "frames_per_clip": self.frames_per_clip,
            "learning_rate": self.learning_rate,
            "logit_scale": self.logit_scale,
        }
        for name, value in positive.items():
            if value <= 0 and not (name == "learning_rate" and value == 0.0):
                raise ValueError(f"{name} must be positive, got {value}")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps}")
        if self.pooling not in ("mean", "max"):
            raise ValueError(f"unknown pooling mode {self.pooling!r}")


@dataclass
class AdamState:
    m_W: np.ndarray
    v_W: np.ndarray
    m_b: np.ndarray
    v_b: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_layer(cls, layer: ProjectionLayer) -> "AdamState":
        return cls(
            m_W=np.zeros_like(layer.W),
            v_W=np.zeros_like(layer.W),
            m_b=np.zeros_like(layer.b),
            v_b=np.zeros_like(layer.b),
        )


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    loss: float
    accuracy: float


def class_matrix(
    class_embs: "Mapping[str, ClassTextEmbedding] | np.ndarray",
) -> np.ndarray:
    """Stack per-class unit embeddings into a (n_classes, 512) matrix in
    CLASS_ORDER."""
    if isinstance(class_embs, np.ndarray):
        matrix = class_embs
    else:
        matrix = np.stack([np.asarray(class_embs[c].values) for c in CLASS_ORDER])
    if matrix.ndim != 2 or matrix.shape[1] != OUT_DIM:
        raise ValueError(f"class matrix must be (n_classes, {OUT_DIM}), got {matrix.shape}")
    return matrix


def forward(
    pooled: np.ndarray,
    layer: ProjectionLayer,
    class_embs: "Mapping[str, ClassTextEmbedding] | np.ndarray",
    logit_scale: float = 100.0,
) -> tuple[np.ndarray, dict]:
    """Project, normalize (guarded), score against class embeddings, softmax.

    Returns per-class probabilities in CLASS_ORDER plus the intermediates
    needed by the backward pass.
    """
    T = class_matrix(class_embs)
    x = np.asarray(pooled, dtype=layer.W.dtype)
    if x.shape != (IN_DIM,):
        raise ValueError(f"pooled feature must be ({IN_DIM},), got {x.shape}")
    z = layer.W @ x + layer.b
    norm = float(np.linalg.norm(z))
    z_hat = z / max(norm, NORM_EPS)
    logits = logit_scale * (T @ z_hat)
    shifted = logits - logits.max()
    exps = np.exp(shifted)
    probs = exps / exps.sum()
    cache = {
        "x": x,
        "z": z,
        "norm": norm,
        "z_hat": z_hat,
        "logits": logits,
        "probs": probs,
        "T": T,
        "scale": logit_scale,
    }
    return probs, cache


def loss_and_grads(
    batch: Sequence[tuple[np.ndarray, str]],
    layer: ProjectionLayer,
    class_embs: "Mapping[str, ClassTextEmbedding] | np.ndarray",
    logit_scale: float = 100.0,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy over the batch and its analytic gradients.

    The per-sample loss uses log-sum-exp directly, so saturated softmax rows
    cannot underflow to log(0).
    """
    if not batch:
        raise ValueError("loss_and_grads requires a non-empty batch")
    T = class_matrix(class_embs).astype(layer.W.dtype)
    dtype = layer.W.dtype
    X = np.stack([np.asarray(x, dtype=dtype) for x, _ in batch])
    y = np.array([label_index(label) for _, label in batch])
    B = X.shape[0]

    Z = X @ layer.W.T + layer.b
    norms = np.linalg.norm(Z, axis=1)
    n_eff = np.maximum(norms, NORM_EPS)
    Z_hat = Z / n_eff[:, None]
    logits = logit_scale * (Z_hat @ T.T)

    row_max = logits.max(axis=1, keepdims=True)
    lse = row_max[:, 0] + np.log(np.exp(logits - row_max).sum(axis=1))
    sample_losses = lse - logits[np.arange(B), y]
    if not np.isfinite(sample_losses).all():
        bad = int(np.flatnonzero(~np.isfinite(sample_losses))[0])
        raise ValueError(f"non-finite loss for batch sample {bad}")
    loss = float(sample_losses.mean())

    probs = np.exp(logits - lse[:, None])
    one_hot = np.zeros_like(probs)
    one_hot[np.arange(B), y] = 1.0
    d_logits = (probs - one_hot) / B
    d_zhat = logit_scale * (d_logits @ T)
    # Normalization Jacobian: (I - z_hat z_hat^T)/||z|| above the guard,
    # plain 1/eps scaling below it.
    row_dots = (d_zhat * Z_hat).sum(axis=1, keepdims=True)
    d_z = np.where(
        (norms >= NORM_EPS)[:, None],
        (d_zhat - row_dots * Z_hat) / n_eff[:, None],
        d_zhat / NORM_EPS,
    )
    grad_W = d_z.T @ X
    grad_b = d_z.sum(axis=0)
    return loss, grad_W.astype(dtype), grad_b.astype(dtype)


def adam_step(
    layer: ProjectionLayer,
    grads: tuple[np.ndarray, np.ndarray],
    state: AdamState,
    lr: float,
) -> tuple[ProjectionLayer, AdamState]:
    """Standard Adam update with bias correction, in place."""
    grad_W, grad_b = grads
    if grad_W.shape != layer.W.shape or grad_b.shape != layer.b.shape:
        raise ValueError("gradient shapes do not match the projection layer")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for param, grad, m, v in (
        (layer.W, grad_W, state.m_W, state.v_W),
        (layer.b, grad_b, state.m_b, state.v_b),
    ):
        grad = grad.astype(param.dtype, copy=False)
        m *= b1
        m += (1 - b1) * grad
        v *= b2
        v += (1 - b2) * np.square(grad)
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        param -= (lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(param.dtype)
    return layer, state


def predict(
    features: np.ndarray,
    layer: ProjectionLayer,
    class_embs: "Mapping[str, ClassTextEmbedding] | np.ndarray",
    logit_scale: float = 100.0,
) -> list[str]:
    """Predicted labels for pooled features; ties resolve to CLASS_ORDER[0]."""
    labels = []
    for x in np.atleast_2d(features):
        probs, _ = forward(x, layer, class_embs, logit_scale)
        labels.append(CLASS_ORDER[int(np.argmax(probs))])
    return labels


def train(
    features: np.ndarray,
    labels: Sequence[str],
    prompt_set: PromptSet,
    backend,
    vocab: Vocabulary,
    config: TrainConfig,
    *,
    warm_start: np.ndarray | None = None,
) -> tuple[ProjectionLayer, list[EpochMetrics]]:
    """Seeded epoch shuffling and batching over precomputed pooled features.

    Class embeddings are computed once up front (the text branch stays
    frozen). Same seed, same data: bit-identical metrics.
    """
    features = np.asarray(features, dtype=np.float32)
    labels = list(labels)
    if features.ndim != 2 or features.shape[1] != IN_DIM:
        raise ValueError(f"features must be (n, {IN_DIM}), got {features.shape}")
    if len(labels) != features.shape[0] or not labels:
        raise ValueError("labels must be non-empty and match features")

    T = class_matrix(_class_embeddings(prompt_set, backend, vocab)).astype(np.float32)
    layer = ProjectionLayer.initialize(config.seed, warm_start=warm_start)
    state = AdamState.for_layer(layer)
    rng = np.random.default_rng(config.seed)

    metrics: list[EpochMetrics] = []
    n = features.shape[0]
    steps = 0
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(n)
        batch_losses: list[float] = []
        stop = False
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            batch = [(features[i], labels[i]) for i in idx]
            loss, grad_W, grad_b = loss_and_grads(batch, layer, T, config.logit_scale)
            adam_step(layer, (grad_W, grad_b), state, config.learning_rate)
            batch_losses.append(loss)
            steps += 1
            if config.max_steps is not None and steps >= config.max_steps:
                stop = True
                break
        predictions = predict(features, layer, T, config.logit_scale)
        acc = sum(p == t for p, t in zip(predictions, labels)) / n
        metrics.append(EpochMetrics(epoch, float(np.mean(batch_losses)), acc))
        if stop:
            break
    return layer, metrics


def gradient_check(
    seed: int,
    trials: int,
    *,
    step: float = 1e-4,
    coords_per_matrix: int = 24,
    logit_scale: float = 100.0,
    inject_bug: bool = False,
) -> float:
    """Compare analytic gradients against central finite differences.

    Runs in float64 on seeded random instances; returns the maximum relative
    error over all sampled coordinates. `inject_bug` deliberately corrupts
    the analytic gradients (diagnostic hook used to prove the check can fail).
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    max_rel = 0.0
    for trial in range(trials):
        rng = np.random.default_rng([seed, trial])
        layer = ProjectionLayer(
            W=rng.normal(0.0, 0.02, size=(OUT_DIM, IN_DIM)),
            b=rng.normal(0.0, 0.01, size=OUT_DIM),
        )
        T = rng.normal(size=(2, OUT_DIM))
        T /= np.linalg.norm(T, axis=1, keepdims=True)
        batch = [
            (rng.normal(size=IN_DIM), CLASS_ORDER[int(rng.integers(2))]) for _ in range(4)
        ]
        _, grad_W, grad_b = loss_and_grads(batch, layer, T, logit_scale)
        if inject_bug:
            grad_W = grad_W * 1.01
            grad_b = grad_b * 1.01

        def batch_loss() -> float:
            loss, _, _ = loss_and_grads(batch, layer, T, logit_scale)
            return loss

        for _ in range(coords_per_matrix):
            i = int(rng.integers(OUT_DIM))
            j = int(rng.integers(IN_DIM))
            numeric = _central_diff(layer.W, (i, j), step, batch_loss)
            max_rel = max(max_rel, _relative_error(grad_W[i, j], numeric))
        for _ in range(coords_per_matrix // 3):
            i = int(rng.integers(OUT_DIM))
            numeric = _central_diff(layer.b, (i,), step, batch_loss)
            max_rel = max(max_rel, _relative_error(grad_b[i], numeric))
    return max_rel


def _central_diff(param: np.ndarray, index: tuple, step: float, fn) -> float:
    original = param[index]
    param[index] = original + step
    plus = fn()
    param[index] = original - step
    minus = fn()
    param[index] = original
    return (plus - minus) / (2 * step)


def _relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)


def save_projection(layer: ProjectionLayer, path: str | Path) -> None:
    """Little-endian: magic "MOBP", u32 dims (512, 768), W row-major float32,
    then b float32."""
    with open(path, "wb") as fh:
        fh.write(PROJECTION_MAGIC)
        fh.write(struct.pack("<II", OUT_DIM, IN_DIM))
        fh.write(np.ascontiguousarray(layer.W, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(layer.b, dtype="<f4").tobytes())


def load_projection(path: str | Path) -> ProjectionLayer:
    W, b = _read_matrix_file(path, PROJECTION_MAGIC, with_bias=True)
    return ProjectionLayer(W=W, b=b)


def load_visual_projection(path: str | Path) -> np.ndarray:
    """Exporter-provided pretrained visual projection (warm-start matrix)."""
    W, _ = _read_matrix_file(path, VISUAL_PROJ_MAGIC, with_bias=False)
    return W


def _read_matrix_file(path: str | Path, magic: bytes, *, with_bias: bool):
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise ValueError(f"{path}: truncated file")
    if data[:4] != magic:
        raise ValueError(f"{path}: bad magic {data[:4]!r}, expected {magic.decode()!r}")
    rows, cols = struct.unpack_from("<II", data, 4)
    if (rows, cols) != (OUT_DIM, IN_DIM):
        raise ValueError(f"{path}: unexpected dims {(rows, cols)}, expected {(OUT_DIM, IN_DIM)}")
    expected = 12 + 4 * rows * cols + (4 * rows if with_bias else 0)
    if len(data) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(data)}")
    W = np.frombuffer(data, dtype="<f4", count=rows * cols, offset=12).reshape(rows, cols).copy()
    b = None
    if with_bias:
        b = np.frombuffer(data, dtype="<f4", count=rows, offset=12 + 4 * rows * cols).copy()
    return W, b


def save_feature_cache(
    path: str | Path, backend_kind: str, seed: int, features: Mapping[str, np.ndarray]
) -> None:
    """Per-clip pooled 768-d features with the producing backend recorded."""
    kind_bytes = backend_kind.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(FEATURE_CACHE_MAGIC)
        fh.write(struct.pack("<HqI", len(kind_bytes), seed, len(features)))
        fh.write(kind_bytes)
        for clip_id, vec in features.items():
            vec = np.asarray(vec, dtype="<f4")
            if vec.shape != (IN_DIM,):
                raise ValueError(f"feature for {clip_id!r} must be ({IN_DIM},), got {vec.shape}")
            id_bytes = clip_id.encode("utf-8")
            fh.write(struct.pack("<H", len(id_bytes)))
            fh.write(id_bytes)
            fh.write(vec.tobytes())


def load_feature_cache(path: str | Path) -> tuple[str, int, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:4] != FEATURE_CACHE_MAGIC:
        raise ValueError(f"{path}: bad magic, expected {FEATURE_CACHE_MAGIC.decode()!r}")
    kind_len, seed, count = struct.unpack_from("<HqI", data, 4)
    offset = 4 + struct.calcsize("<HqI")
    kind = data[offset : offset + kind_len].decode("utf-8")
    offset += kind_len
    features: dict[str, np.ndarray] = {}
    for _ in range(count):
        (id_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        clip_id = data[offset : offset + id_len].decode("utf-8")
        offset += id_len
        vec = np.frombuffer(data, dtype="<f4", count=IN_DIM, offset=offset).copy()
        offset += 4 * IN_DIM
        features[clip_id] = vec
    if offset != len(data):
        raise ValueError(f"{path}: trailing or missing bytes")
    return kind, seed, features
