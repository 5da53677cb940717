"""Subspace geometry of the mapped features.

The objective J sums, over base networks, the per-class nuclear norms of
the mapped class matrices minus the nuclear norm of the mapped full matrix.
Concatenation can only lose nuclear norm, so J is nonnegative, and it hits
zero exactly when each network maps distinct classes onto column-orthogonal
subspaces. The checks here make that chain of facts executable.
"""

import csv
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .data import Dataset, class_submatrix
from .errors import ValidationError
from .model import CompositeModel
from .numerics import nuclear_norm, nuclear_norm_subgradient

# Stated defaults; tests may monkeypatch but never loosen.
COLUMN_ORTHO_TOL = 1e-9
EQUALITY_GAP_TOL = 1e-8
CERTIFY_J_TOL = 1e-6
SUBADDITIVITY_SLACK = 1e-9


@dataclass
class GeometryReport:
    """Everything the objective evaluation measured, one row per term."""

    class_ids: np.ndarray
    per_network_per_class_nuclear: np.ndarray
    per_network_full_nuclear: np.ndarray
    objective: float
    pairwise_weight_inner: np.ndarray
    weight_norms: np.ndarray

    def to_csv(self, path):
        """Write `network,class,nuclear` rows plus a trailing summary block."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["network", "class", "nuclear"])
            k, c = self.per_network_per_class_nuclear.shape
            for i in range(k):
                for j in range(c):
                    writer.writerow(
                        [i, int(self.class_ids[j]),
                         f"{self.per_network_per_class_nuclear[i, j]:.12g}"]
                    )
                writer.writerow(
                    [i, "full", f"{self.per_network_full_nuclear[i]:.12g}"]
                )
            writer.writerow(["summary", "objective", f"{self.objective:.12g}"])
            off = _off_diagonal_abs_max(self.pairwise_weight_inner)
            writer.writerow(["summary", "max_pairwise_inner", f"{off:.12g}"])
            writer.writerow(
                ["summary", "min_weight_norm", f"{self.weight_norms.min():.12g}"]
            )
            writer.writerow(
                ["summary", "max_weight_norm", f"{self.weight_norms.max():.12g}"]
            )


def _off_diagonal_abs_max(mat):
    if mat.shape[0] < 2:
        return 0.0
    off = mat - np.diag(np.diag(mat))
    return float(np.abs(off).max())


def _present_classes(ds: Dataset, class_ids=None):
    if class_ids is None:
        ids = np.unique(ds.labels)
    else:
        ids = np.asarray(class_ids, dtype=np.int64)
    if ids.size < 1:
        raise ValidationError("need at least one class")
    return ids


def geometry_objective(
    model: CompositeModel, ds: Dataset, class_ids=None
) -> GeometryReport:
    """Evaluate J over the classes of `ds` (default: all present classes).

    Passing `class_ids` explicitly makes an absent class an error instead of
    silently contributing nothing.
    """
    ids = _present_classes(ds, class_ids)
    class_mats = [class_submatrix(ds, int(v)) for v in ids]
    full = np.ascontiguousarray(ds.features.T)

    k = model.network_count
    per_class = np.empty((k, ids.size))
    per_full = np.empty(k)
    for i in range(k):
        mapped_full = model.thetas[i].T @ full
        per_full[i] = nuclear_norm(mapped_full)
        for j, mat in enumerate(class_mats):
            per_class[i, j] = nuclear_norm(model.thetas[i].T @ mat)

    objective = float(np.sum(per_class) - np.sum(per_full))
    flat = model.thetas.reshape(k, -1)
    inner = flat @ flat.T
    norms = np.sqrt(np.diag(inner)).copy()
    return GeometryReport(ids, per_class, per_full, objective, inner, norms)


def geometry_subgradient(model: CompositeModel, ds: Dataset, class_ids=None):
    """One subgradient of J per network, stacked (K, d, s).

    The concave part (the negated full-matrix term) contributes a single
    fixed subgradient, which is the usual convex-minus-concave treatment.
    """
    ids = _present_classes(ds, class_ids)
    class_mats = [class_submatrix(ds, int(v)) for v in ids]
    full = np.ascontiguousarray(ds.features.T)
    grads = np.zeros_like(model.thetas)
    for i in range(model.network_count):
        theta = model.thetas[i]
        for mat in class_mats:
            g = nuclear_norm_subgradient(theta.T @ mat)
            grads[i] += mat @ g.T
        g_full = nuclear_norm_subgradient(theta.T @ full)
        grads[i] -= full @ g_full.T
    return grads


def orthogonality_penalty(model: CompositeModel) -> float:
    """Sum of squared Frobenius inner products over distinct network pairs."""
    flat = model.thetas.reshape(model.network_count, -1)
    inner = flat @ flat.T
    k = inner.shape[0]
    total = 0.0
    for i in range(k):
        for j in range(i + 1, k):
            total += inner[i, j] ** 2
    return float(total)


def orthogonality_penalty_gradient(model: CompositeModel) -> np.ndarray:
    """Gradient of the pairwise penalty, stacked (K, d, s)."""
    k = model.network_count
    flat = model.thetas.reshape(k, -1)
    inner = flat @ flat.T
    np.fill_diagonal(inner, 0.0)
    return (2.0 * inner @ flat).reshape(model.thetas.shape)


def check_concat_subadditivity(m, n):
    """Nuclear norm of [M, N] never exceeds the sum of the parts."""
    m = np.asarray(m, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    if m.ndim != 2 or n.ndim != 2 or m.shape[0] != n.shape[0]:
        raise ValidationError(
            f"row counts must agree, got {m.shape} and {n.shape}"
        )
    lhs = nuclear_norm(np.hstack([m, n]))
    rhs = nuclear_norm(m) + nuclear_norm(n)
    return lhs, rhs, lhs <= rhs + SUBADDITIVITY_SLACK


def check_orthogonal_equality(m, n):
    """Gap between the sum of parts and the concatenation.

    Column-orthogonal parts must close the gap (equality case).
    """
    m = np.asarray(m, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    if m.ndim != 2 or n.ndim != 2 or m.shape[0] != n.shape[0]:
        raise ValidationError(
            f"row counts must agree, got {m.shape} and {n.shape}"
        )
    gap = nuclear_norm(m) + nuclear_norm(n) - nuclear_norm(np.hstack([m, n]))
    column_orthogonal = bool(np.abs(m.T @ n).max() <= COLUMN_ORTHO_TOL)
    return gap, column_orthogonal


class MinimumCertificate(NamedTuple):
    objective: float
    certified: bool
    applicable: bool


def verify_global_minimum(
    ds: Dataset, model: CompositeModel, class_ids=None, tol=CERTIFY_J_TOL
) -> MinimumCertificate:
    """Certify that a model sits at the floor of the geometry objective.

    The premise needs at least two classes whose mapped submatrices are
    pairwise column-orthogonal under every network; when it fails the
    certificate reports `applicable=False` and never certifies.
    """
    if tol <= 0.0:
        raise ValidationError(f"certification tolerance must be positive, got {tol}")
    ids = _present_classes(ds, class_ids)
    report = geometry_objective(model, ds, ids)
    if ids.size < 2:
        return MinimumCertificate(report.objective, False, False)
    mats = [class_submatrix(ds, int(v)) for v in ids]
    orthogonal = True
    for i in range(model.network_count):
        mapped = [model.thetas[i].T @ mat for mat in mats]
        for a in range(len(mapped)):
            for b in range(a + 1, len(mapped)):
                if np.abs(mapped[a].T @ mapped[b]).max() > COLUMN_ORTHO_TOL:
                    orthogonal = False
    certified = orthogonal and report.objective <= tol
    return MinimumCertificate(report.objective, certified, orthogonal)
