"""Sample-wise gates from a tied-weight linear encoder.

An encoder W (h x d) embeds a sample as E = W x. The embedding is split
into K equal blocks; each block scores the mean squared deviation of its
entries from the mean of the FULL embedding, and the k highest-variance
blocks open their gates. The decoder is the transpose of W, so training
minimizes ||x - W^T W x||^2 over the samples.
"""

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataFormatError, DivergenceError, ValidationError
from .model import IndicatorVector

ENCODER_META_KEYS = ("h", "K", "k_active")


@dataclass
class IndicatorEncoder:
    """Linear encoder whose latent splits into K equal gate blocks."""

    weight: np.ndarray
    k_networks: int
    k_active: int

    def __post_init__(self):
        self.weight = np.ascontiguousarray(self.weight, dtype=np.float64)
        if self.weight.ndim != 2:
            raise ValidationError(
                f"encoder weight must be 2-D, got shape {self.weight.shape}"
            )
        if not np.all(np.isfinite(self.weight)):
            raise ValidationError("encoder weight contains non-finite entries")
        h = self.weight.shape[0]
        if self.k_networks < 1 or h % self.k_networks != 0:
            raise ValidationError(
                f"latent dim {h} must split into K={self.k_networks} equal blocks"
            )
        if not 1 <= self.k_active <= self.k_networks:
            raise ValidationError(
                f"k_active must lie in [1, {self.k_networks}], got {self.k_active}"
            )

    @property
    def latent_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def block_size(self) -> int:
        return self.weight.shape[0] // self.k_networks


@dataclass
class EncoderTrainConfig:
    epochs: int = 200
    learning_rate: float = 1e-2
    batch_size: int = 64
    seed: int = 0
    tolerance: float = 1e-10

    def validate(self):
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if self.learning_rate <= 0.0:
            raise ValidationError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.tolerance <= 0.0:
            raise ValidationError("tolerance must be positive")
        if self.seed < 0:
            raise ValidationError("seed must be a non-negative integer")


def reconstruction_loss(weight, features) -> float:
    """Mean squared reconstruction error of the tied encoder over the rows."""
    e = features @ weight.T
    residual = features - e @ weight
    return float(np.mean(np.sum(residual * residual, axis=1)))


def train_encoder(features, h, k_networks, cfg=None, k_active=1) -> IndicatorEncoder:
    """Fit W by mini-batch gradient descent on the tied reconstruction loss.

    Tracks the full-data loss after every epoch and returns the best iterate,
    so the result never reconstructs worse than the initialization. The loss
    history is attached as ``loss_history`` on the returned encoder.
    """
    cfg = cfg or EncoderTrainConfig()
    cfg.validate()
    features = np.ascontiguousarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ValidationError(f"features must be 2-D, got shape {features.shape}")
    n, d = features.shape
    if n < 1:
        raise ValidationError("need at least one training sample")
    if h < 1 or h % k_networks != 0:
        raise ValidationError(f"latent dim {h} must split into {k_networks} blocks")
    if h > d:
        warnings.warn(
            f"latent dim {h} exceeds feature dim {d}; the tied encoder "
            "cannot be undercomplete",
            stacklevel=2,
        )

    rng = np.random.Generator(np.random.Philox(key=cfg.seed))
    w = rng.normal(size=(h, d)) / np.sqrt(d)

    def full_loss(mat):
        value = reconstruction_loss(mat, features)
        if not np.isfinite(value):
            raise DivergenceError(
                "encoder loss is non-finite; try a smaller learning_rate"
            )
        return value

    best_loss = prev_loss = full_loss(w)
    best_w = w.copy()
    history = [best_loss]
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = features[order[start : start + cfg.batch_size]]
            m = batch.shape[0]
            e = batch @ w.T
            residual = batch - e @ w
            grad = (-2.0 / m) * (e.T @ residual + w @ residual.T @ batch)
            w -= cfg.learning_rate * grad
        loss = full_loss(w)
        history.append(loss)
        if loss < best_loss:
            best_loss = loss
            best_w = w.copy()
        improvement = prev_loss - loss
        prev_loss = loss
        if 0.0 <= improvement <= cfg.tolerance:
            break

    enc = IndicatorEncoder(best_w, k_networks, k_active)
    enc.loss_history = history
    return enc


def embed(enc: IndicatorEncoder, x, counter=None) -> np.ndarray:
    """Latent embedding W x."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (enc.feature_dim,):
        raise ValidationError(
            f"x must have length {enc.feature_dim}, got shape {x.shape}"
        )
    if counter is not None:
        counter.add(enc.latent_dim * enc.feature_dim)
    return enc.weight @ x


def embed_batch(enc: IndicatorEncoder, features, counter=None) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != enc.feature_dim:
        raise ValidationError(
            f"features must be N x {enc.feature_dim}, got {features.shape}"
        )
    if counter is not None:
        counter.add(features.shape[0] * enc.latent_dim * enc.feature_dim)
    return features @ enc.weight.T


def block_variances(embedding, k_networks) -> np.ndarray:
    """Per-block mean squared deviation from the full-embedding mean."""
    embedding = np.asarray(embedding, dtype=np.float64)
    h = embedding.shape[0]
    if h % k_networks != 0:
        raise ValidationError(f"embedding length {h} not divisible by {k_networks}")
    centered = embedding - embedding.mean()
    return np.mean(centered.reshape(k_networks, h // k_networks) ** 2, axis=1)


def gates_from_embedding(embedding, k_networks, k_active, counter=None):
    """Top-k_active variance blocks open; ties go to the lower block index."""
    if not 1 <= k_active <= k_networks:
        raise ValidationError(
            f"k_active must lie in [1, {k_networks}], got {k_active}"
        )
    variances = block_variances(embedding, k_networks)
    order = np.argsort(-variances, kind="stable")
    gates = np.zeros(k_networks)
    gates[order[:k_active]] = 1.0
    if counter is not None:
        counter.add(len(embedding) + k_networks)  # variance pass + ranking
    return IndicatorVector(gates, k_active)


def compute_indicators(enc: IndicatorEncoder, x, k_active=None, counter=None):
    """Gate pattern for one sample; k_active defaults to the encoder's."""
    k = enc.k_active if k_active is None else k_active
    e = embed(enc, x, counter=counter)
    return gates_from_embedding(e, enc.k_networks, k, counter=counter)


def compute_indicator_matrix(enc, features, k_active=None, counter=None):
    """Gate patterns for N samples as an N x K 0/1 matrix."""
    k = enc.k_active if k_active is None else k_active
    if not 1 <= k <= enc.k_networks:
        raise ValidationError(
            f"k_active must lie in [1, {enc.k_networks}], got {k}"
        )
    e = embed_batch(enc, features, counter=counter)
    centered = e - e.mean(axis=1, keepdims=True)
    n = features.shape[0]
    var = np.mean(
        centered.reshape(n, enc.k_networks, enc.block_size) ** 2, axis=2
    )
    order = np.argsort(-var, axis=1, kind="stable")
    gates = np.zeros((n, enc.k_networks))
    np.put_along_axis(gates, order[:, :k], 1.0, axis=1)
    if counter is not None:
        counter.add(n * (enc.latent_dim + enc.k_networks))
    return gates


def save_encoder(enc: IndicatorEncoder, out_dir):
    """Write `encoder.pmx1` plus a `meta` text file into a directory."""
    from .data import save_matrix

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_matrix(enc.weight, out / "encoder.pmx1")
    meta = [
        f"h = {enc.latent_dim}",
        f"K = {enc.k_networks}",
        f"k_active = {enc.k_active}",
    ]
    (out / "meta").write_text("\n".join(meta) + "\n")
    return out / "encoder.pmx1"


def load_encoder(in_dir) -> IndicatorEncoder:
    from .data import load_matrix

    path = Path(in_dir)
    meta_path = path / "meta"
    if not meta_path.exists():
        raise DataFormatError(f"{meta_path}: missing encoder meta file")
    entries = {}
    for lineno, line in enumerate(meta_path.read_text().splitlines(), start=1):
        text = line.strip()
        if not text:
            continue
        key, sep, value = text.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or key not in ENCODER_META_KEYS:
            raise DataFormatError(f"{meta_path}: line {lineno}: bad entry {text!r}")
        entries[key] = value
    missing = [k for k in ENCODER_META_KEYS if k not in entries]
    if missing:
        raise DataFormatError(f"{meta_path}: missing keys {missing}")
    try:
        h, k_networks = int(entries["h"]), int(entries["K"])
        k_active = int(entries["k_active"])
    except ValueError as exc:
        raise DataFormatError(f"{meta_path}: non-integer entry: {exc}") from None
    weight = load_matrix(path / "encoder.pmx1")
    if weight.shape[0] != h:
        raise ValidationError(
            f"encoder.pmx1: expected {h} rows, got {weight.shape[0]}"
        )
    return IndicatorEncoder(weight, k_networks, k_active)
