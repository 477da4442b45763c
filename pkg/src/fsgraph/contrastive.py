"""Two-view contrastive pretraining of the feature extractor.

Each raw sample is split into two complementary views: the flattened luma
plane and the flattened chroma pair (BT.601 coefficients, see
split_views). One fully connected encoder per view maps its view to an
e-dimensional embedding. Training pulls the two embeddings of the same
sample together and pushes apart embeddings of different samples within
the batch, in both directions, with a temperature-scaled softmax over
cosine scores. Downstream features are the two embeddings concatenated,
so the extracted feature width is 2e.

All gradients are computed analytically (including through the internal
L2 normalization of the loss); there is no autodiff anywhere.

On-disk formats, little-endian:

Encoder weights, magic b"CENC":
    u32 version (currently 1), u32 embed_dim, then for each of the two
    encoders: u32 layer count, and per layer u32 fan_in, u32 fan_out,
    fan_in*fan_out float64 row-major weights, fan_out float64 biases.

Raw samples, magic b"CIMG":
    u32 width, u32 height, u64 count, then per sample width*height*3
    float64 pixel values in [0, 1] (C order) followed by its u32 class id.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .data import FeatureDataset
from .errors import DataFormatError, DegenerateVectorError, NumericError
from .rng import make_rng

_ENC_MAGIC = b"CENC"
_IMG_MAGIC = b"CIMG"
_ENC_VERSION = 1

# BT.601 luma weights and the matching chroma scale factors.
_LUMA_R, _LUMA_G, _LUMA_B = 0.299, 0.587, 0.114
_CB_SCALE, _CR_SCALE = 0.564, 0.713

Layers = list[tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class RawSample:
    """One unlabeled-or-labeled input: an image or a pre-split view pair."""

    pixels: np.ndarray | None = None
    view1: np.ndarray | None = None
    view2: np.ndarray | None = None
    class_id: int = 0

    def __post_init__(self) -> None:
        has_pixels = self.pixels is not None
        has_views = self.view1 is not None and self.view2 is not None
        if has_pixels == has_views:
            raise ValueError("provide either pixels or both pre-split views")
        if has_pixels:
            px = np.asarray(self.pixels, dtype=np.float64)
            if px.ndim != 3 or px.shape[2] != 3:
                raise ValueError(f"pixels must have shape (w, h, 3), got {px.shape}")
            if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
                raise ValueError("pixel values must be finite and within [0, 1]")
            object.__setattr__(self, "pixels", px)
        else:
            v1 = np.asarray(self.view1, dtype=np.float64)
            v2 = np.asarray(self.view2, dtype=np.float64)
            if v1.ndim != 1 or v2.ndim != 1:
                raise ValueError("pre-split views must be 1-D vectors")
            if not (np.all(np.isfinite(v1)) and np.all(np.isfinite(v2))):
                raise ValueError("view values must be finite")
            object.__setattr__(self, "view1", v1)
            object.__setattr__(self, "view2", v2)


@dataclass(frozen=True)
class EncoderParams:
    """Weights of the two view encoders."""

    phi1: Layers
    phi2: Layers
    embed_dim: int


@dataclass(frozen=True)
class PretrainConfig:
    temperature: float = 0.1
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 0.05
    momentum: float = 0.9
    seed: int = 0
    embed_dim: int = 32
    hidden_dims: tuple[int, ...] = (64,)

    def __post_init__(self) -> None:
        if self.temperature <= 0.0:
            raise ValueError("temperature must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.embed_dim < 1 or any(h < 1 for h in self.hidden_dims):
            raise ValueError("layer widths must be positive")


def split_views(sample: RawSample) -> tuple[np.ndarray, np.ndarray]:
    """Split one sample into (luma view, chroma view).

    For an image, view1 is the flattened luma plane
    Y = 0.299 R + 0.587 G + 0.114 B and view2 is the flattened chroma pair
    Cb = 0.5 + (B - Y) * 0.564 followed by Cr = 0.5 + (R - Y) * 0.713, so
    len(view1) = w*h and len(view2) = 2*w*h. Pre-split samples pass
    through unchanged.
    """
    if sample.pixels is None:
        return sample.view1.copy(), sample.view2.copy()
    r = sample.pixels[:, :, 0]
    g = sample.pixels[:, :, 1]
    b = sample.pixels[:, :, 2]
    y = _LUMA_R * r + _LUMA_G * g + _LUMA_B * b
    cb = 0.5 + (b - y) * _CB_SCALE
    cr = 0.5 + (r - y) * _CR_SCALE
    return y.ravel(), np.concatenate([cb.ravel(), cr.ravel()])


# --- encoder ------------------------------------------------------------


def init_layers(
    dims: tuple[int, ...], rng: np.random.Generator
) -> Layers:
    """Glorot-uniform weights, zero biases, for consecutive layer widths."""
    layers: Layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        layers.append((w, np.zeros(fan_out)))
    return layers


def encode(layers: Layers, view: np.ndarray) -> np.ndarray:
    """Embed a single view: ReLU on every layer but the last."""
    out = _forward(layers, np.asarray(view, dtype=np.float64)[None, :])[-1]
    return out[0]


def _forward(layers: Layers, x: np.ndarray) -> list[np.ndarray]:
    """Batch forward pass; returns [input, act_1, ..., act_last]."""
    if x.shape[1] != layers[0][0].shape[0]:
        raise ValueError(
            f"view width {x.shape[1]} does not match encoder input "
            f"width {layers[0][0].shape[0]}"
        )
    acts = [x]
    for i, (w, b) in enumerate(layers):
        z = acts[-1] @ w + b
        if i < len(layers) - 1:
            z = np.maximum(z, 0.0)
        acts.append(z)
    return acts


def _backward(
    layers: Layers, acts: list[np.ndarray], grad_out: np.ndarray
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Gradients of each layer's (weights, bias) given d(loss)/d(output)."""
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(layers)  # type: ignore[list-item]
    delta = grad_out
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        grads[i] = (acts[i].T @ delta, delta.sum(axis=0))
        if i > 0:
            delta = (delta @ w.T) * (acts[i] > 0.0)
    return grads


# --- contrastive loss ---------------------------------------------------


def contrast_loss(
    z1: np.ndarray, z2: np.ndarray, temperature: float
) -> tuple[float, tuple[np.ndarray, np.ndarray]]:
    """Bidirectional in-batch contrastive loss and its exact gradients.

    Embeddings are L2-normalized internally. With zhat1, zhat2 the
    normalized rows and L[i, j] = zhat1_i . zhat2_j / temperature, the
    loss is the mean over anchors of -log softmax(L[i, :])[i] plus the
    mean over anchors of -log softmax(L[:, j])[j]; the two directions
    share the logit matrix. A batch of one has no negatives and scores 0.

    Returns (loss, (d_loss/d_z1, d_loss/d_z2)), gradients taken with
    respect to the raw (unnormalized) embeddings.
    """
    z1 = np.asarray(z1, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)
    if z1.shape != z2.shape or z1.ndim != 2:
        raise ValueError(f"embedding batches must match: {z1.shape} vs {z2.shape}")
    if temperature <= 0.0:
        raise ValueError("temperature must be positive")
    n1 = np.linalg.norm(z1, axis=1)
    n2 = np.linalg.norm(z2, axis=1)
    if np.any(n1 == 0.0) or np.any(n2 == 0.0):
        raise DegenerateVectorError("zero-norm embedding row")
    u1 = z1 / n1[:, None]
    u2 = z2 / n2[:, None]
    b = z1.shape[0]
    logits = (u1 @ u2.T) / temperature

    row_max = logits.max(axis=1, keepdims=True)
    row_lse = row_max[:, 0] + np.log(np.exp(logits - row_max).sum(axis=1))
    col_max = logits.max(axis=0, keepdims=True)
    col_lse = col_max[0, :] + np.log(np.exp(logits - col_max).sum(axis=0))
    diag = np.diagonal(logits)
    loss = float(np.mean(row_lse - diag) + np.mean(col_lse - diag))

    p_row = np.exp(logits - row_lse[:, None])
    p_col = np.exp(logits - col_lse[None, :])
    g_logits = (p_row + p_col - 2.0 * np.eye(b)) / b
    g_u1 = (g_logits @ u2) / temperature
    g_u2 = (g_logits.T @ u1) / temperature
    # Backprop through row normalization: d(u)/d(z) = (I - u u^T) / |z|.
    g_z1 = (g_u1 - (g_u1 * u1).sum(axis=1, keepdims=True) * u1) / n1[:, None]
    g_z2 = (g_u2 - (g_u2 * u2).sum(axis=1, keepdims=True) * u2) / n2[:, None]
    return loss, (g_z1, g_z2)


# --- pretraining --------------------------------------------------------


def pretrain(
    data: list[RawSample], cfg: PretrainConfig
) -> tuple[EncoderParams, list[float]]:
    """SGD-with-momentum training of both encoders on the contrastive loss.

    Runs epochs * ceil(n / batch_size) steps over seeded shuffles of the
    data. Returns the trained EncoderParams and the per-epoch mean loss
    trace (empty for epochs=0, which returns the seeded initialization
    unchanged).

    Raises:
        NumericError: the loss became non-finite.
    """
    if not data:
        raise ValueError("pretrain needs at least one sample")
    views = [split_views(s) for s in data]
    x1 = np.stack([v1 for v1, _ in views])
    x2 = np.stack([v2 for _, v2 in views])
    if x1.shape[0] < 2:
        raise ValueError("contrastive pretraining needs at least two samples")

    rng = make_rng(cfg.seed)
    dims1 = (x1.shape[1], *cfg.hidden_dims, cfg.embed_dim)
    dims2 = (x2.shape[1], *cfg.hidden_dims, cfg.embed_dim)
    phi1 = init_layers(dims1, rng)
    phi2 = init_layers(dims2, rng)
    vel = [
        [(np.zeros_like(w), np.zeros_like(b)) for w, b in enc]
        for enc in (phi1, phi2)
    ]

    n = x1.shape[0]
    trace: list[float] = []
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        batch_losses: list[float] = []
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            acts1 = _forward(phi1, x1[idx])
            acts2 = _forward(phi2, x2[idx])
            loss, (g_z1, g_z2) = contrast_loss(acts1[-1], acts2[-1], cfg.temperature)
            if not np.isfinite(loss):
                raise NumericError(f"contrastive loss became {loss} in epoch {epoch}")
            for enc, acts, g_out, v_enc in (
                (phi1, acts1, g_z1, vel[0]),
                (phi2, acts2, g_z2, vel[1]),
            ):
                grads = _backward(enc, acts, g_out)
                for (w, bias), (gw, gb), (vw, vb) in zip(enc, grads, v_enc):
                    vw *= cfg.momentum
                    vw += gw
                    vb *= cfg.momentum
                    vb += gb
                    w -= cfg.learning_rate * vw
                    bias -= cfg.learning_rate * vb
            batch_losses.append(loss)
        trace.append(float(np.mean(batch_losses)))
    return EncoderParams(phi1=phi1, phi2=phi2, embed_dim=cfg.embed_dim), trace


def extract_features(
    params: EncoderParams, data: list[RawSample], labels: list[int] | np.ndarray
) -> FeatureDataset:
    """Embed every sample and stack [phi1(view1), phi2(view2)] per row.

    The resulting dataset has dimension 2 * embed_dim and carries the
    given class ids, which must be dense in [0, C).
    """
    if len(labels) != len(data):
        raise ValueError("one label per sample required")
    views = [split_views(s) for s in data]
    z1 = _forward(params.phi1, np.stack([v1 for v1, _ in views]))[-1]
    z2 = _forward(params.phi2, np.stack([v2 for _, v2 in views]))[-1]
    return FeatureDataset(
        dim=2 * params.embed_dim,
        class_ids=np.asarray(labels, dtype=np.int64),
        vectors=np.hstack([z1, z2]),
    )


# --- file formats -------------------------------------------------------


def save_encoder(params: EncoderParams, path: str) -> None:
    """Write encoder weights to the binary format described above."""
    parts = [_ENC_MAGIC, struct.pack("<II", _ENC_VERSION, params.embed_dim)]
    for enc in (params.phi1, params.phi2):
        parts.append(struct.pack("<I", len(enc)))
        for w, b in enc:
            parts.append(struct.pack("<II", w.shape[0], w.shape[1]))
            parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
            parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_encoder(path: str) -> EncoderParams:
    """Read encoder weights written by save_encoder."""
    with open(path, "rb") as fh:
        buf = fh.read()
    reader = _Reader(buf, path)
    if reader.take(4) != _ENC_MAGIC:
        raise DataFormatError(f"{path}: bad magic, expected {_ENC_MAGIC!r}")
    version, embed_dim = reader.unpack("<II")
    if version != _ENC_VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}")
    encoders: list[Layers] = []
    for _ in range(2):
        (n_layers,) = reader.unpack("<I")
        layers: Layers = []
        for _ in range(n_layers):
            rows, cols = reader.unpack("<II")
            w = reader.floats(rows * cols).reshape(rows, cols)
            b = reader.floats(cols)
            layers.append((w, b))
        encoders.append(layers)
    if encoders[0][-1][0].shape[1] != embed_dim or encoders[1][-1][0].shape[1] != embed_dim:
        raise DataFormatError(f"{path}: final layer width does not match embed_dim")
    return EncoderParams(phi1=encoders[0], phi2=encoders[1], embed_dim=embed_dim)


def save_raw_samples(samples: list[RawSample], path: str) -> None:
    """Write image samples (pixels plus class id each) to a raw-sample file."""
    if not samples:
        raise ValueError("nothing to save")
    if any(s.pixels is None for s in samples):
        raise ValueError("raw-sample files hold images, not pre-split views")
    w, h, _ = samples[0].pixels.shape
    parts = [_IMG_MAGIC, struct.pack("<IIQ", w, h, len(samples))]
    for s in samples:
        if s.pixels.shape != (w, h, 3):
            raise ValueError("all images in one file must share (w, h)")
        parts.append(np.ascontiguousarray(s.pixels, dtype="<f8").tobytes())
        parts.append(struct.pack("<I", s.class_id))
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_raw_samples(path: str) -> list[RawSample]:
    """Read a raw-sample file written by save_raw_samples."""
    with open(path, "rb") as fh:
        buf = fh.read()
    reader = _Reader(buf, path)
    if reader.take(4) != _IMG_MAGIC:
        raise DataFormatError(f"{path}: bad magic, expected {_IMG_MAGIC!r}")
    w, h, count = reader.unpack("<IIQ")
    samples: list[RawSample] = []
    for i in range(count):
        px = reader.floats(w * h * 3).reshape(w, h, 3)
        (class_id,) = reader.unpack("<I")
        try:
            samples.append(RawSample(pixels=px, class_id=int(class_id)))
        except ValueError as exc:
            raise DataFormatError(f"{path}: sample {i}: {exc}") from exc
    return samples


class _Reader:
    """Bounds-checked cursor over a bytes payload."""

    def __init__(self, buf: bytes, path: str) -> None:
        self.buf = buf
        self.path = path
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.buf):
            raise DataFormatError(f"{self.path}: truncated payload")
        out = self.buf[self.off : self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str) -> tuple:
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))

    def floats(self, n: int) -> np.ndarray:
        raw = self.take(8 * n)
        return np.frombuffer(raw, dtype="<f8").copy().astype(np.float64)
