"""Datasets, class descriptors, on-disk formats, and the synthetic generator.

Features are stored one sample per row (N x d). Per-class algebra uses the
column convention, so ``class_submatrix`` transposes. Binary matrices use
the PMX1 layout: magic ``PMX1``, row and column counts as unsigned 64-bit
little-endian, then row-major float64 payload, no padding or checksum.
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataFormatError, EmptyClassError, ValidationError

MAGIC = b"PMX1"
HEADER = struct.Struct("<4sQQ")

# Scale applied to the descriptor direction mixed into the noise channel of
# generated samples. Kept well above unit so that even small noise_sigma
# leaves a usable class-alignment signal in the features.
BEACON_GAIN = 100.0

# Scale of the per-sample random component planted in every frame direction
# outside the seen-class subspaces and the beacon. Seen-domain training data
# then carries unlabeled variance along unseen-class directions, mirroring how
# unseen-class visual structure occurs in real seen-class images, so a fitted
# map learns to suppress those directions instead of passing init noise
# through them. Rides the noise channel, so noise_sigma = 0 data keeps exact
# subspace orthogonality.
DISTRACTOR_GAIN = 60.0

MANIFEST_KEYS = (
    "features_train",
    "labels_train",
    "features_test_seen",
    "labels_test_seen",
    "features_test_unseen",
    "labels_test_unseen",
    "descriptors",
    "seen_mask",
)


@dataclass
class Dataset:
    """Labeled feature matrix: one sample per row, 0-based class labels."""

    features: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValidationError(
                f"features must be 2-D, got shape {self.features.shape}"
            )
        n, d = self.features.shape
        if n < 1 or d < 1:
            raise ValidationError("features must have at least one row and column")
        if not np.all(np.isfinite(self.features)):
            raise ValidationError("features contain non-finite entries")
        if self.labels.shape != (n,):
            raise ValidationError(
                f"expected {n} labels, got shape {self.labels.shape}"
            )
        if self.class_count < 1:
            raise ValidationError("class_count must be positive")
        if self.labels.min() < 0 or self.labels.max() >= self.class_count:
            raise ValidationError(
                f"labels must lie in [0, {self.class_count}), "
                f"got range [{self.labels.min()}, {self.labels.max()}]"
            )

    @property
    def sample_count(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


@dataclass
class SemanticSpace:
    """Per-class descriptor matrix (C x s) plus the seen/unseen partition."""

    descriptors: np.ndarray
    seen_mask: np.ndarray

    def __post_init__(self):
        self.descriptors = np.ascontiguousarray(self.descriptors, dtype=np.float64)
        self.seen_mask = np.asarray(self.seen_mask, dtype=bool)
        if self.descriptors.ndim != 2:
            raise ValidationError(
                f"descriptors must be 2-D, got shape {self.descriptors.shape}"
            )
        c, s = self.descriptors.shape
        if c < 1 or s < 1:
            raise ValidationError("descriptors must have at least one row and column")
        if not np.all(np.isfinite(self.descriptors)):
            raise ValidationError("descriptors contain non-finite entries")
        norms = np.linalg.norm(self.descriptors, axis=1)
        if np.any(norms == 0.0):
            bad = int(np.argmin(norms))
            raise ValidationError(f"descriptor row {bad} is all-zero")
        if self.seen_mask.shape != (c,):
            raise ValidationError(
                f"seen_mask must have one entry per class, got shape "
                f"{self.seen_mask.shape} for {c} classes"
            )

    @property
    def class_count(self) -> int:
        return self.descriptors.shape[0]

    @property
    def semantic_dim(self) -> int:
        return self.descriptors.shape[1]

    @property
    def seen_ids(self) -> np.ndarray:
        return np.flatnonzero(self.seen_mask)

    @property
    def unseen_ids(self) -> np.ndarray:
        return np.flatnonzero(~self.seen_mask)


@dataclass
class SynthConfig:
    """Knobs for the synthetic subspace generator."""

    seen_classes: int
    unseen_classes: int
    samples_per_class: int
    feature_dim: int
    subspace_rank: int
    semantic_dim: int
    noise_sigma: float = 0.0
    orthogonal_mode: bool = True
    seed: int = 0

    def validate(self):
        if self.seen_classes < 1 or self.unseen_classes < 1:
            raise ValidationError("need at least one seen and one unseen class")
        if self.samples_per_class < 2:
            raise ValidationError(
                "samples_per_class must be >= 2 so each seen class can "
                "contribute to both train and test splits"
            )
        if self.feature_dim < 1 or self.semantic_dim < 1:
            raise ValidationError("feature_dim and semantic_dim must be positive")
        if self.subspace_rank < 1:
            raise ValidationError("subspace_rank must be positive")
        total = self.seen_classes + self.unseen_classes
        if self.orthogonal_mode and total * self.subspace_rank > self.feature_dim:
            raise ValidationError(
                f"orthogonal mode needs classes*rank <= feature_dim, got "
                f"{total}*{self.subspace_rank} > {self.feature_dim}"
            )
        if self.noise_sigma < 0.0:
            raise ValidationError("noise_sigma must be non-negative")
        if self.seed < 0:
            raise ValidationError("seed must be a non-negative integer")


def save_matrix(a, path):
    """Write a 2-D float64 matrix to `path` in PMX1 layout."""
    arr = np.ascontiguousarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ValidationError(f"matrix must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValidationError("matrix must have at least one row and column")
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, arr.shape[0], arr.shape[1]))
        fh.write(arr.astype("<f8", copy=False).tobytes())


def load_matrix(path) -> np.ndarray:
    """Read a PMX1 matrix; format violations report the failing byte offset."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < HEADER.size:
        raise DataFormatError(f"{path}: truncated header", offset=len(raw))
    magic, rows, cols = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}", offset=0)
    if rows == 0:
        raise DataFormatError(f"{path}: zero row count", offset=4)
    if cols == 0:
        raise DataFormatError(f"{path}: zero column count", offset=12)
    if rows * cols > (1 << 56):
        raise DataFormatError(
            f"{path}: dimension overflow ({rows} x {cols})", offset=4
        )
    expected = rows * cols * 8
    payload = len(raw) - HEADER.size
    if payload < expected:
        raise DataFormatError(f"{path}: truncated payload", offset=len(raw))
    if payload > expected:
        raise DataFormatError(
            f"{path}: trailing data", offset=HEADER.size + expected
        )
    flat = np.frombuffer(raw, dtype="<f8", offset=HEADER.size)
    return flat.reshape(rows, cols).astype(np.float64)


def save_labels(labels, path):
    """Write labels one unsigned decimal per line."""
    arr = np.asarray(labels, dtype=np.int64)
    if arr.ndim != 1:
        raise ValidationError(f"labels must be 1-D, got shape {arr.shape}")
    if arr.size and arr.min() < 0:
        raise ValidationError("labels must be non-negative")
    with open(path, "w") as fh:
        for v in arr:
            fh.write(f"{int(v)}\n")


def load_labels(path) -> np.ndarray:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text.isdigit():
                raise DataFormatError(
                    f"{path}: line {lineno}: expected an unsigned integer, "
                    f"got {text!r}"
                )
            out.append(int(text))
    if not out:
        raise DataFormatError(f"{path}: no labels")
    return np.array(out, dtype=np.int64)


def _parse_manifest(path):
    entries = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            if "=" not in text:
                raise DataFormatError(
                    f"{path}: line {lineno}: expected 'key = value'"
                )
            key, _, value = text.partition("=")
            key, value = key.strip(), value.strip()
            if key not in MANIFEST_KEYS:
                raise DataFormatError(f"{path}: line {lineno}: unknown key {key!r}")
            if key in entries:
                raise DataFormatError(f"{path}: line {lineno}: duplicate key {key!r}")
            entries[key] = value
    missing = [k for k in MANIFEST_KEYS if k not in entries]
    if missing:
        raise DataFormatError(f"{path}: missing keys {missing}")
    return entries


def _check_label_scope(name, labels, allowed, scope):
    """Every label must fall in `allowed`; report the first offending row."""
    ok = np.isin(labels, allowed)
    if not np.all(ok):
        row = int(np.argmin(ok))
        raise ValidationError(
            f"{name}: row {row}: class {labels[row]} is not a {scope} class"
        )


def load_manifest(path):
    """Load the train / test-seen / test-unseen splits a manifest points at.

    Returns (train, test_seen, test_unseen, space). Cross-file consistency
    violations raise a validation error naming the offending file and row.
    """
    path = Path(path)
    entries = _parse_manifest(path)
    base = path.parent

    mask_text = entries["seen_mask"].split(",")
    mask = []
    for i, tok in enumerate(mask_text):
        tok = tok.strip()
        if tok not in ("0", "1"):
            raise DataFormatError(
                f"{path}: seen_mask entry {i} must be 0 or 1, got {tok!r}"
            )
        mask.append(tok == "1")
    mask = np.array(mask, dtype=bool)

    descriptors = load_matrix(base / entries["descriptors"])
    if descriptors.shape[0] != mask.size:
        raise ValidationError(
            f"{entries['descriptors']}: expected {mask.size} descriptor rows "
            f"to match seen_mask, got {descriptors.shape[0]}"
        )
    space = SemanticSpace(descriptors, mask)

    splits = {}
    dim = None
    for split in ("train", "test_seen", "test_unseen"):
        fname, lname = entries[f"features_{split}"], entries[f"labels_{split}"]
        feats = load_matrix(base / fname)
        labels = load_labels(base / lname)
        if labels.shape[0] != feats.shape[0]:
            raise ValidationError(
                f"{lname}: {labels.shape[0]} labels for {feats.shape[0]} "
                f"rows in {fname}"
            )
        if dim is None:
            dim = feats.shape[1]
        elif feats.shape[1] != dim:
            raise ValidationError(
                f"{fname}: feature dim {feats.shape[1]} differs from {dim}"
            )
        bad = labels >= space.class_count
        if np.any(bad):
            row = int(np.argmax(bad))
            raise ValidationError(
                f"{lname}: row {row}: label {labels[row]} out of range for "
                f"{space.class_count} classes"
            )
        splits[split] = (fname, lname, feats, labels)

    for split in ("train", "test_seen"):
        _check_label_scope(splits[split][1], splits[split][3], space.seen_ids, "seen")
    _check_label_scope(
        splits["test_unseen"][1], splits["test_unseen"][3], space.unseen_ids, "unseen"
    )

    make = lambda s: Dataset(splits[s][2], splits[s][3], space.class_count)
    return make("train"), make("test_seen"), make("test_unseen"), space


def write_bundle(out_dir, train, test_seen, test_unseen, space):
    """Write all splits plus a manifest into `out_dir`; returns manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    named = {
        "train": train,
        "test_seen": test_seen,
        "test_unseen": test_unseen,
    }
    lines = []
    for split, ds in named.items():
        save_matrix(ds.features, out / f"features_{split}.pmx1")
        save_labels(ds.labels, out / f"labels_{split}.txt")
        lines.append(f"features_{split} = features_{split}.pmx1")
        lines.append(f"labels_{split} = labels_{split}.txt")
    save_matrix(space.descriptors, out / "descriptors.pmx1")
    lines.append("descriptors = descriptors.pmx1")
    lines.append(
        "seen_mask = " + ",".join("1" if b else "0" for b in space.seen_mask)
    )
    manifest = out / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def class_submatrix(ds: Dataset, v: int) -> np.ndarray:
    """All samples of class `v` as columns of a d x N_v matrix."""
    if not 0 <= v < ds.class_count:
        raise ValidationError(
            f"class id {v} out of range for {ds.class_count} classes"
        )
    rows = ds.features[ds.labels == v]
    if rows.shape[0] == 0:
        raise EmptyClassError(f"class {v} has no samples")
    return np.ascontiguousarray(rows.T)


def _class_frame(rng, cfg):
    """Per-class bases, the beacon block, and any leftover distractor block.

    In orthogonal mode all three come from disjoint column ranges of one
    orthonormal frame. The distractor exists only when the frame has columns
    to spare; elsewhere it is empty and the generator simply omits the term.
    """
    total = cfg.seen_classes + cfg.unseen_classes
    d, r, s = cfg.feature_dim, cfg.subspace_rank, cfg.semantic_dim
    distractor = None
    if cfg.orthogonal_mode:
        q, rr = np.linalg.qr(rng.normal(size=(d, d)))
        q = q * np.where(np.diag(rr) < 0.0, -1.0, 1.0)
        bases = [q[:, v * r : (v + 1) * r] for v in range(total)]
        if total * r + s <= d:
            beacon = q[:, total * r : total * r + s]
            # everything the seen subspaces and beacon leave free, which
            # deliberately includes the unseen-class blocks
            distractor = np.hstack(
                [q[:, cfg.seen_classes * r : total * r], q[:, total * r + s :]]
            )
            if distractor.shape[1] == 0:
                distractor = None
        else:
            beacon = _random_orthonormal(rng, d, s)
    else:
        bases = []
        for _ in range(total):
            qb, rb = np.linalg.qr(rng.normal(size=(d, r)))
            bases.append(qb * np.where(np.diag(rb) < 0.0, -1.0, 1.0))
        beacon = _random_orthonormal(rng, d, s)
    return bases, beacon, distractor


def _random_orthonormal(rng, d, s):
    cols = min(d, s)
    q, rr = np.linalg.qr(rng.normal(size=(d, cols)))
    q = q * np.where(np.diag(rr) < 0.0, -1.0, 1.0)
    if cols < s:
        # Feature space is narrower than the descriptor space; repeat
        # columns so the projector still touches every descriptor entry.
        q = q[:, np.arange(s) % cols]
    return q


def generate_synthetic(cfg: SynthConfig):
    """Build train / test-seen / test-unseen splits from planted subspaces.

    Each class v draws samples
    B_v z + noise_sigma * (BEACON_GAIN * P a_v + DISTRACTOR_GAIN * D u + g)
    with z, u, g standard normal. In orthogonal mode the B_v are disjoint
    column blocks of one orthonormal frame, so with noise_sigma = 0 distinct
    classes occupy exactly orthogonal rank-r subspaces. The beacon term P a_v
    plants the class descriptor direction in the noise channel so held-out
    classes remain identifiable from descriptors alone; the distractor D u is
    class-independent per-sample energy that dominates gate selection, keeping
    the active-network distribution identical across splits. Both ride the
    noise channel, so they vanish at noise_sigma = 0 and leave the
    orthogonality contract intact.
    """
    cfg.validate()
    rng = np.random.Generator(np.random.Philox(key=cfg.seed))
    total = cfg.seen_classes + cfg.unseen_classes
    spc = cfg.samples_per_class

    bases, beacon, distractor = _class_frame(rng, cfg)

    descriptors = rng.normal(size=(total, cfg.semantic_dim))
    descriptors /= np.linalg.norm(descriptors, axis=1, keepdims=True)
    seen_mask = np.arange(total) < cfg.seen_classes
    space = SemanticSpace(descriptors, seen_mask)

    n_train = (spc * 4) // 5
    parts = {"train": ([], []), "test_seen": ([], []), "test_unseen": ([], [])}
    for v in range(total):
        z = rng.normal(size=(spc, cfg.subspace_rank))
        g = rng.normal(size=(spc, cfg.feature_dim))
        x = z @ bases[v].T
        if cfg.noise_sigma > 0.0:
            drift = BEACON_GAIN * (beacon @ descriptors[v])
            x = x + cfg.noise_sigma * (drift[None, :] + g)
            if distractor is not None:
                u = rng.normal(size=(spc, distractor.shape[1]))
                x = x + cfg.noise_sigma * DISTRACTOR_GAIN * (u @ distractor.T)
        if seen_mask[v]:
            dests = (("train", x[:n_train]), ("test_seen", x[n_train:]))
        else:
            dests = (("test_unseen", x),)
        for split, block in dests:
            parts[split][0].append(block)
            parts[split][1].append(np.full(block.shape[0], v, dtype=np.int64))

    out = []
    for split in ("train", "test_seen", "test_unseen"):
        feats = np.vstack(parts[split][0])
        labels = np.concatenate(parts[split][1])
        out.append(Dataset(feats, labels, total))
    return out[0], out[1], out[2], space
