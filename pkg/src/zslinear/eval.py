"""ZSL / GZSL scoring: per-class accuracy tables, U, S, and their harmonic mean.

Both unseen accuracy U and seen accuracy S are macro averages: each class
contributes its own accuracy once, regardless of how many test samples it
has.  Accuracies are fractions in [0, 1] everywhere; render as percentages
only at presentation time.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import Dataset, SemanticSpace
from .errors import DegeneratePredictionError, ValidationError
from .indicators import IndicatorEncoder, compute_indicator_matrix
from .model import CompositeModel, forward_batch

HARMONIC_TOL = 1e-12


def harmonic_mean(u: float, s: float) -> float:
    """2US/(U+S), with the U = S = 0 corner defined as 0."""
    if u < 0.0 or s < 0.0:
        raise ValidationError(f"accuracies must be nonnegative, got {u}, {s}")
    if u + s == 0.0:
        return 0.0
    return 2.0 * u * s / (u + s)


def per_class_accuracy(predictions, labels, class_count: int) -> dict:
    """Accuracy and sample count per class: {class_id: (accuracy, count)}.

    Classes with no test samples are absent from the table, so a later
    macro average runs over present classes only.
    """
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.ndim != 1 or labels.ndim != 1:
        raise ValidationError("predictions and labels must be 1-D")
    if predictions.shape[0] != labels.shape[0]:
        raise ValidationError(
            f"length mismatch: {predictions.shape[0]} predictions vs "
            f"{labels.shape[0]} labels"
        )
    if predictions.shape[0] == 0:
        raise ValidationError("empty prediction list")
    if class_count < 1:
        raise ValidationError("class_count must be positive")
    if labels.min() < 0 or labels.max() >= class_count:
        raise ValidationError(
            f"labels must lie in [0, {class_count}), got range "
            f"[{labels.min()}, {labels.max()}]"
        )
    table = {}
    for v in range(class_count):
        mask = labels == v
        n_v = int(mask.sum())
        if n_v == 0:
            continue
        correct = int(np.count_nonzero(predictions[mask] == v))
        table[v] = (correct / n_v, n_v)
    return table


def macro_average(table: dict) -> float:
    """Mean accuracy over the classes present in a per-class table."""
    if not table:
        raise ValidationError("per-class table is empty")
    return float(np.mean([acc for acc, _ in table.values()]))


def predict_batch(
    model: CompositeModel,
    enc: IndicatorEncoder,
    features,
    space: SemanticSpace,
    scope: str = "all",
    counter=None,
) -> np.ndarray:
    """Predicted class ids for every feature row under the given scope.

    Vectorized equivalent of predict_class per row: gates from the encoder,
    composite forward pass, cosine argmax over the scope's descriptors.
    Ties break to the lowest class id.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ValidationError(f"features must be 2-D, got shape {features.shape}")
    if scope == "all":
        ids = np.arange(space.class_count)
    elif scope == "unseen_only":
        ids = space.unseen_ids
        if ids.size == 0:
            raise ValidationError("scope unseen_only but no unseen classes")
    else:
        raise ValidationError(f"unknown scope {scope!r}")
    gates = compute_indicator_matrix(enc, features, counter=counter)
    preds = forward_batch(model, features, gates, counter=counter)
    p_norms = np.linalg.norm(preds, axis=1)
    if np.any(p_norms == 0.0):
        bad = int(np.argmin(p_norms))
        raise DegeneratePredictionError(
            f"prediction for sample {bad} has zero norm; cosine undefined"
        )
    cand = space.descriptors[ids]
    cand_norms = np.linalg.norm(cand, axis=1)
    scores = (preds @ cand.T) / (p_norms[:, None] * cand_norms[None, :])
    if counter is not None:
        counter.add(features.shape[0] * cand.shape[0] * cand.shape[1])
    # ids are ascending, so first argmax already breaks ties to the lowest id
    return ids[np.argmax(scores, axis=1)]


def evaluate_zsl(
    model: CompositeModel,
    ds_unseen: Dataset,
    space: SemanticSpace,
    enc: IndicatorEncoder,
    counter=None,
) -> float:
    """Macro per-class accuracy with the search scope restricted to unseen ids."""
    if not np.all(np.isin(ds_unseen.labels, space.unseen_ids)):
        bad = ds_unseen.labels[~np.isin(ds_unseen.labels, space.unseen_ids)]
        raise ValidationError(
            f"ZSL split contains seen-class samples (e.g. class {int(bad[0])})"
        )
    predictions = predict_batch(
        model, enc, ds_unseen.features, space, scope="unseen_only",
        counter=counter,
    )
    table = per_class_accuracy(predictions, ds_unseen.labels, space.class_count)
    return macro_average(table)


@dataclass
class EvalReport:
    """Scores of one evaluation run.

    `per_class` maps class id -> (accuracy, count) over both test splits.
    `zsl_accuracy` is present only when a restricted-scope pass was also run.
    """

    unseen_accuracy: float
    seen_accuracy: float
    harmonic: float
    per_class: dict
    zsl_accuracy: Optional[float] = None

    def __post_init__(self):
        vals = [self.unseen_accuracy, self.seen_accuracy, self.harmonic]
        if self.zsl_accuracy is not None:
            vals.append(self.zsl_accuracy)
        for v in vals:
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"accuracy {v} outside [0, 1]")
        want = harmonic_mean(self.unseen_accuracy, self.seen_accuracy)
        if abs(self.harmonic - want) > HARMONIC_TOL:
            raise ValidationError(
                f"harmonic mean {self.harmonic} inconsistent with "
                f"U={self.unseen_accuracy}, S={self.seen_accuracy}"
            )
        for cid, (acc, count) in self.per_class.items():
            if not 0.0 <= acc <= 1.0:
                raise ValidationError(f"class {cid} accuracy {acc} outside [0, 1]")
            if count < 1:
                raise ValidationError(f"class {cid} has nonpositive count {count}")

    def to_csv(self) -> str:
        lines = ["metric,value"]
        if self.zsl_accuracy is not None:
            lines.append(f"zsl_accuracy,{self.zsl_accuracy!r}")
        lines.append(f"unseen_accuracy,{self.unseen_accuracy!r}")
        lines.append(f"seen_accuracy,{self.seen_accuracy!r}")
        lines.append(f"harmonic_mean,{self.harmonic!r}")
        for cid in sorted(self.per_class):
            acc, count = self.per_class[cid]
            lines.append(f"class,{cid},{acc!r},{count}")
        return "\n".join(lines) + "\n"


def evaluate_gzsl(
    model: CompositeModel,
    ds_test_seen: Dataset,
    ds_test_unseen: Dataset,
    space: SemanticSpace,
    enc: IndicatorEncoder,
    counter=None,
) -> EvalReport:
    """U, S and H with the full class roster searched for every sample."""
    if not np.all(np.isin(ds_test_seen.labels, space.seen_ids)):
        raise ValidationError("seen test split contains unseen-class samples")
    if not np.all(np.isin(ds_test_unseen.labels, space.unseen_ids)):
        raise ValidationError("unseen test split contains seen-class samples")
    pred_seen = predict_batch(
        model, enc, ds_test_seen.features, space, scope="all", counter=counter
    )
    pred_unseen = predict_batch(
        model, enc, ds_test_unseen.features, space, scope="all", counter=counter
    )
    seen_table = per_class_accuracy(
        pred_seen, ds_test_seen.labels, space.class_count
    )
    unseen_table = per_class_accuracy(
        pred_unseen, ds_test_unseen.labels, space.class_count
    )
    u = macro_average(unseen_table)
    s = macro_average(seen_table)
    merged = dict(seen_table)
    merged.update(unseen_table)
    return EvalReport(
        unseen_accuracy=u,
        seen_accuracy=s,
        harmonic=harmonic_mean(u, s),
        per_class=merged,
    )


def evaluate_full(
    model: CompositeModel,
    ds_test_seen: Dataset,
    ds_test_unseen: Dataset,
    space: SemanticSpace,
    enc: IndicatorEncoder,
) -> EvalReport:
    """GZSL report plus the restricted-scope ZSL accuracy in one object."""
    report = evaluate_gzsl(model, ds_test_seen, ds_test_unseen, space, enc)
    report.zsl_accuracy = evaluate_zsl(model, ds_test_unseen, space, enc)
    return report
