"""Composite linear predictor built from gated base networks.

The predictor is f(x) = sum_i act(Theta_i^T x + b_i) * gate_i + b. With the
identity activation this collapses to a single regression Theta^T Phi(x) + b
against the lifted feature vector Phi(x) = [g_1, g_1 x^T, ..., g_K, g_K x^T],
which is what the dual solver trains against. Weights are stored stacked as
one (K, d, s) array; per-network views are exposed through ``networks``.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import SemanticSpace, load_matrix, save_matrix
from .errors import DataFormatError, DegeneratePredictionError, ValidationError

ACTIVATIONS = ("identity", "rectifier")

META_KEYS = ("K", "d", "s", "k_active", "activation")


class OpCounter:
    """Multiply-accumulate tally used to check cost scales with active gates."""

    def __init__(self):
        self.total = 0

    def add(self, n):
        self.total += int(n)


@dataclass
class BaseLinearNetwork:
    """One summand of the composite: weight (d x s) and bias (s)."""

    weight: np.ndarray
    bias: np.ndarray


@dataclass
class IndicatorVector:
    """Binary gate pattern over the K base networks."""

    gates: np.ndarray
    active_count: int

    def __post_init__(self):
        self.gates = np.asarray(self.gates, dtype=np.float64)
        if self.gates.ndim != 1:
            raise ValidationError(f"gates must be 1-D, got shape {self.gates.shape}")
        if not np.all((self.gates == 0.0) | (self.gates == 1.0)):
            raise ValidationError("gates must be 0/1 valued")
        if self.active_count != int(self.gates.sum()):
            raise ValidationError(
                f"active_count {self.active_count} does not match "
                f"{int(self.gates.sum())} set gates"
            )


@dataclass
class CompositeModel:
    """K base linear networks plus a shared output bias."""

    thetas: np.ndarray
    biases: np.ndarray
    global_bias: np.ndarray
    k_active: int
    activation: str = "identity"

    def __post_init__(self):
        self.thetas = np.ascontiguousarray(self.thetas, dtype=np.float64)
        self.biases = np.ascontiguousarray(self.biases, dtype=np.float64)
        self.global_bias = np.ascontiguousarray(self.global_bias, dtype=np.float64)
        if self.thetas.ndim != 3:
            raise ValidationError(
                f"thetas must be (K, d, s), got shape {self.thetas.shape}"
            )
        k, d, s = self.thetas.shape
        if k < 1 or d < 1 or s < 1:
            raise ValidationError("model dimensions must be positive")
        if self.biases.shape != (k, s):
            raise ValidationError(
                f"biases must be ({k}, {s}), got {self.biases.shape}"
            )
        if self.global_bias.shape != (s,):
            raise ValidationError(
                f"global_bias must have length {s}, got {self.global_bias.shape}"
            )
        for name, arr in (("thetas", self.thetas), ("biases", self.biases),
                          ("global_bias", self.global_bias)):
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} contain non-finite entries")
        if not 1 <= self.k_active <= k:
            raise ValidationError(
                f"k_active must lie in [1, {k}], got {self.k_active}"
            )
        if self.activation not in ACTIVATIONS:
            raise ValidationError(
                f"activation must be one of {ACTIVATIONS}, got {self.activation!r}"
            )

    @property
    def network_count(self) -> int:
        return self.thetas.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.thetas.shape[1]

    @property
    def semantic_dim(self) -> int:
        return self.thetas.shape[2]

    @property
    def networks(self):
        return [
            BaseLinearNetwork(self.thetas[i], self.biases[i])
            for i in range(self.network_count)
        ]


def init_model(
    k_networks, feature_dim, semantic_dim, k_active,
    activation="identity", seed=0, descriptor_mean=None,
) -> CompositeModel:
    """Seeded start: unit-Frobenius Gaussian weights, zero network biases.

    The shared bias starts at `descriptor_mean` when given (mean training
    descriptor) and at zero otherwise.
    """
    rng = np.random.Generator(np.random.Philox(key=seed))
    thetas = rng.normal(size=(k_networks, feature_dim, semantic_dim))
    thetas /= np.sqrt(feature_dim)
    for i in range(k_networks):
        thetas[i] /= np.linalg.norm(thetas[i])
    biases = np.zeros((k_networks, semantic_dim))
    if descriptor_mean is None:
        global_bias = np.zeros(semantic_dim)
    else:
        global_bias = np.asarray(descriptor_mean, dtype=np.float64).copy()
        if global_bias.shape != (semantic_dim,):
            raise ValidationError(
                f"descriptor_mean must have length {semantic_dim}, "
                f"got {global_bias.shape}"
            )
    return CompositeModel(thetas, biases, global_bias, k_active, activation)


def _as_gates(gates, k):
    g = gates.gates if isinstance(gates, IndicatorVector) else np.asarray(
        gates, dtype=np.float64
    )
    if g.shape != (k,):
        raise ValidationError(f"expected {k} gates, got shape {g.shape}")
    return g


def lift_features(x, gates, k=None) -> np.ndarray:
    """Gated lift [g_1, g_1 x^T, ..., g_K, g_K x^T] of length K(d+1)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValidationError(f"x must be 1-D, got shape {x.shape}")
    if isinstance(gates, IndicatorVector):
        g = gates.gates
    else:
        g = np.asarray(gates, dtype=np.float64)
    if k is not None and g.shape != (k,):
        raise ValidationError(f"expected {k} gates, got shape {g.shape}")
    d = x.shape[0]
    blocks = np.empty((g.shape[0], d + 1))
    blocks[:, 0] = g
    blocks[:, 1:] = g[:, None] * x[None, :]
    return blocks.reshape(-1)


def lift_matrix(features, gate_matrix) -> np.ndarray:
    """Row-wise lift of an N x d feature matrix under N x K gates."""
    features = np.asarray(features, dtype=np.float64)
    gate_matrix = np.asarray(gate_matrix, dtype=np.float64)
    if features.ndim != 2 or gate_matrix.ndim != 2:
        raise ValidationError("features and gates must be 2-D")
    if features.shape[0] != gate_matrix.shape[0]:
        raise ValidationError(
            f"{features.shape[0]} feature rows vs {gate_matrix.shape[0]} gate rows"
        )
    n, d = features.shape
    k = gate_matrix.shape[1]
    out = np.empty((n, k, d + 1))
    out[:, :, 0] = gate_matrix
    out[:, :, 1:] = gate_matrix[:, :, None] * features[:, None, :]
    return out.reshape(n, k * (d + 1))


def stacked_weights(model: CompositeModel) -> np.ndarray:
    """Regression-form weight matrix (K(d+1) x s): rows [b_i; Theta_i] stacked."""
    k, d, s = model.thetas.shape
    out = np.empty((k, d + 1, s))
    out[:, 0, :] = model.biases
    out[:, 1:, :] = model.thetas
    return out.reshape(k * (d + 1), s)


def forward(model: CompositeModel, x, gates, counter=None) -> np.ndarray:
    """Gated sum of base-network outputs plus the shared bias."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.feature_dim,):
        raise ValidationError(
            f"x must have length {model.feature_dim}, got shape {x.shape}"
        )
    g = _as_gates(gates, model.network_count)
    d, s = model.feature_dim, model.semantic_dim
    out = model.global_bias.copy()
    for i in np.flatnonzero(g):
        z = model.thetas[i].T @ x + model.biases[i]
        if model.activation == "rectifier":
            np.maximum(z, 0.0, out=z)
        out += z
        if counter is not None:
            counter.add(d * s + s)
    if counter is not None:
        counter.add(model.network_count)  # gate scan
        counter.add(s)  # shared bias
    return out


def forward_batch(model: CompositeModel, features, gate_matrix, counter=None):
    """Forward pass over N samples (N x d features, N x K gates) -> N x s."""
    features = np.asarray(features, dtype=np.float64)
    gate_matrix = np.asarray(gate_matrix, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != model.feature_dim:
        raise ValidationError(
            f"features must be N x {model.feature_dim}, got {features.shape}"
        )
    if gate_matrix.shape != (features.shape[0], model.network_count):
        raise ValidationError(
            f"gates must be {features.shape[0]} x {model.network_count}, "
            f"got {gate_matrix.shape}"
        )
    n = features.shape[0]
    d, s = model.feature_dim, model.semantic_dim
    out = np.tile(model.global_bias, (n, 1))
    for i in range(model.network_count):
        rows = np.flatnonzero(gate_matrix[:, i])
        if rows.size == 0:
            continue
        z = features[rows] @ model.thetas[i] + model.biases[i]
        if model.activation == "rectifier":
            np.maximum(z, 0.0, out=z)
        out[rows] += z
        if counter is not None:
            counter.add(rows.size * (d * s + s))
    if counter is not None:
        counter.add(n * (model.network_count + s))
    return out


def cosine_scores(prediction, descriptors, counter=None) -> np.ndarray:
    """Cosine similarity of one prediction against every descriptor row."""
    p_norm = np.linalg.norm(prediction)
    if p_norm == 0.0:
        raise DegeneratePredictionError(
            "prediction vector has zero norm; cosine similarity undefined"
        )
    row_norms = np.linalg.norm(descriptors, axis=1)
    if counter is not None:
        counter.add(descriptors.shape[0] * descriptors.shape[1])
    return (descriptors @ prediction) / (row_norms * p_norm)


def predict_class(
    model: CompositeModel, x, gates, space: SemanticSpace,
    scope="all", counter=None,
) -> int:
    """Most-similar class id under the chosen search scope.

    Ties break to the lowest class id. `scope` is "all" or "unseen_only".
    """
    if scope == "all":
        ids = np.arange(space.class_count)
    elif scope == "unseen_only":
        ids = space.unseen_ids
        if ids.size == 0:
            raise ValidationError("scope unseen_only but no unseen classes")
    else:
        raise ValidationError(f"unknown scope {scope!r}")
    pred = forward(model, x, gates, counter=counter)
    scores = cosine_scores(pred, space.descriptors[ids], counter=counter)
    return int(ids[np.argmax(scores)])


def save_checkpoint(model: CompositeModel, out_dir):
    """Write the model into a directory of PMX1 files plus a `meta` text file."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    k, d, s = model.thetas.shape
    meta = [
        f"K = {k}",
        f"d = {d}",
        f"s = {s}",
        f"k_active = {model.k_active}",
        f"activation = {model.activation}",
    ]
    (out / "meta").write_text("\n".join(meta) + "\n")
    for i in range(k):
        save_matrix(model.thetas[i], out / f"theta_{i}.pmx1")
        save_matrix(model.biases[i][None, :], out / f"bias_{i}.pmx1")
    save_matrix(model.global_bias[None, :], out / "global_bias.pmx1")
    return out / "meta"


def load_checkpoint(in_dir) -> CompositeModel:
    path = Path(in_dir)
    meta_path = path / "meta"
    if not meta_path.exists():
        raise DataFormatError(f"{meta_path}: missing checkpoint meta file")
    entries = {}
    for lineno, line in enumerate(meta_path.read_text().splitlines(), start=1):
        text = line.strip()
        if not text:
            continue
        key, sep, value = text.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or key not in META_KEYS:
            raise DataFormatError(f"{meta_path}: line {lineno}: bad entry {text!r}")
        entries[key] = value
    missing = [k for k in META_KEYS if k not in entries]
    if missing:
        raise DataFormatError(f"{meta_path}: missing keys {missing}")
    try:
        k, d, s = int(entries["K"]), int(entries["d"]), int(entries["s"])
        k_active = int(entries["k_active"])
    except ValueError as exc:
        raise DataFormatError(f"{meta_path}: non-integer dimension: {exc}") from None

    thetas = np.empty((k, d, s))
    biases = np.empty((k, s))
    for i in range(k):
        theta = load_matrix(path / f"theta_{i}.pmx1")
        if theta.shape != (d, s):
            raise ValidationError(
                f"theta_{i}.pmx1: expected shape ({d}, {s}), got {theta.shape}"
            )
        thetas[i] = theta
        bias = load_matrix(path / f"bias_{i}.pmx1")
        if bias.shape != (1, s):
            raise ValidationError(
                f"bias_{i}.pmx1: expected shape (1, {s}), got {bias.shape}"
            )
        biases[i] = bias[0]
    gb = load_matrix(path / "global_bias.pmx1")
    if gb.shape != (1, s):
        raise ValidationError(
            f"global_bias.pmx1: expected shape (1, {s}), got {gb.shape}"
        )
    return CompositeModel(thetas, biases, gb[0], k_active, entries["activation"])
