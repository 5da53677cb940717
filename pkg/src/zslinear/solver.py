"""Training paths for the composite predictor.

Path A (`train_joint`) runs full-batch subgradient descent on the
epsilon-insensitive regression loss plus the subspace-geometry objective
and the pairwise-orthogonality penalty, with per-step projection of every
weight matrix back to unit Frobenius norm.

Path B (`solve_dual`) solves, for each semantic dimension independently,
the epsilon-tube support-vector dual over the gated lift kernel
T(x_l, x_j) = (1 + x_l.x_j) * sum_i gate_i(x_l) gate_i(x_j), using
maximal-violating-pair coordinate ascent. Path B carries no geometry
terms; it exists to cross-check the regression risk against an exactly
solvable convex program.
"""

import csv
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from ._accel import njit
from .data import Dataset, SemanticSpace
from .errors import DivergenceError, ValidationError
from .geometry import (
    geometry_objective,
    geometry_subgradient,
    orthogonality_penalty,
    orthogonality_penalty_gradient,
)
from .indicators import IndicatorEncoder, compute_indicator_matrix, compute_indicators
from .model import CompositeModel, IndicatorVector, forward_batch

TRAINING_LOG_COLUMNS = ("epoch", "primal_loss", "J", "orth_penalty", "total")


@dataclass
class SolverConfig:
    error_penalty: float = 10.0
    epsilon: float = 0.1
    lambda_geo: float = 0.1
    lambda_orth: float = 1.0
    learning_rate: float = 1e-2
    epochs: int = 300
    seed: int = 0
    dual_tolerance: float = 1e-6
    dual_max_passes: int = 10000

    def validate(self):
        if self.error_penalty <= 0.0:
            raise ValidationError("error_penalty must be positive")
        if self.epsilon < 0.0:
            raise ValidationError("epsilon must be non-negative")
        if self.lambda_geo < 0.0 or self.lambda_orth < 0.0:
            raise ValidationError("lambda weights must be non-negative")
        if self.learning_rate <= 0.0:
            raise ValidationError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if self.dual_tolerance <= 0.0:
            raise ValidationError("dual_tolerance must be positive")
        if self.dual_max_passes < 1:
            raise ValidationError("dual_max_passes must be >= 1")
        if self.seed < 0:
            raise ValidationError("seed must be a non-negative integer")


class DualSolution(NamedTuple):
    alpha: np.ndarray
    alpha_star: np.ndarray
    bias: np.ndarray
    support_indices: list
    converged: bool


def transformation_kernel(x_l, gates_l, x_j, gates_j) -> float:
    """(1 + x_l.x_j) times the count of jointly open gates."""
    x_l = np.asarray(x_l, dtype=np.float64)
    x_j = np.asarray(x_j, dtype=np.float64)
    g_l = gates_l.gates if isinstance(gates_l, IndicatorVector) else np.asarray(
        gates_l, dtype=np.float64
    )
    g_j = gates_j.gates if isinstance(gates_j, IndicatorVector) else np.asarray(
        gates_j, dtype=np.float64
    )
    if x_l.shape != x_j.shape:
        raise ValidationError(
            f"feature vectors differ in length: {x_l.shape} vs {x_j.shape}"
        )
    if g_l.shape != g_j.shape:
        raise ValidationError(
            f"gate vectors differ in length: {g_l.shape} vs {g_j.shape}"
        )
    return float((1.0 + x_l @ x_j) * (g_l @ g_j))


def kernel_matrix(features, gate_matrix) -> np.ndarray:
    """Gram matrix of the gated lift over N samples."""
    features = np.asarray(features, dtype=np.float64)
    gate_matrix = np.asarray(gate_matrix, dtype=np.float64)
    if features.shape[0] != gate_matrix.shape[0]:
        raise ValidationError(
            f"{features.shape[0]} feature rows vs {gate_matrix.shape[0]} gate rows"
        )
    return (1.0 + features @ features.T) * (gate_matrix @ gate_matrix.T)


@njit(cache=True)
def _smo_dimension(kmat, y, c_bound, eps, tol, max_passes):
    """Maximal-violating-pair ascent for one output dimension.

    Variables are the paired box multipliers (alpha, alpha_star) per point;
    beta = alpha - alpha_star starts and stays zero-sum because every pair
    update moves the two chosen coordinates by opposite beta amounts. After
    each update the touched points shed min(alpha, alpha_star), which keeps
    beta and never worsens the objective.
    """
    n = y.shape[0]
    alpha = np.zeros(n)
    alpha_star = np.zeros(n)
    kbeta = np.zeros(n)
    passes = 0
    converged = False
    while passes < max_passes:
        # score every coordinate: F +/- eps, split by movable direction
        up_val = -1e300
        up_idx = -1
        up_star = False
        low_val = 1e300
        low_idx = -1
        low_star = False
        for l in range(n):
            f = y[l] - kbeta[l]
            if alpha[l] < c_bound and f - eps > up_val:
                up_val = f - eps
                up_idx = l
                up_star = False
            if alpha_star[l] > 0.0 and f + eps > up_val:
                up_val = f + eps
                up_idx = l
                up_star = True
            if alpha[l] > 0.0 and f - eps < low_val:
                low_val = f - eps
                low_idx = l
                low_star = False
            if alpha_star[l] < c_bound and f + eps < low_val:
                low_val = f + eps
                low_idx = l
                low_star = True
        if up_idx < 0 or low_idx < 0 or up_val - low_val <= tol:
            converged = True
            break
        i, j = up_idx, low_idx
        # step t raises beta_i and lowers beta_j by the same amount
        if up_star:
            room_i = alpha_star[i]
        else:
            room_i = c_bound - alpha[i]
        if low_star:
            room_j = c_bound - alpha_star[j]
        else:
            room_j = alpha[j]
        t_max = min(room_i, room_j)
        curv = kmat[i, i] + kmat[j, j] - 2.0 * kmat[i, j]
        if curv > 1e-12:
            t = (up_val - low_val) / curv
            if t > t_max:
                t = t_max
        else:
            t = t_max
        if t <= 0.0:
            converged = True
            break
        if up_star:
            alpha_star[i] -= t
        else:
            alpha[i] += t
        if low_star:
            alpha_star[j] += t
        else:
            alpha[j] -= t
        for l in range(n):
            kbeta[l] += t * (kmat[l, i] - kmat[l, j])
        # complementarity shed on the touched points
        for l in (i, j):
            shed = min(alpha[l], alpha_star[l])
            if shed > 0.0:
                alpha[l] -= shed
                alpha_star[l] -= shed
        passes += 1
    # bias from free support vectors, else midpoint of the violation bounds
    bias_sum = 0.0
    bias_count = 0
    up_val = -1e300
    low_val = 1e300
    for l in range(n):
        f = y[l] - kbeta[l]
        if 0.0 < alpha[l] < c_bound:
            bias_sum += f - eps
            bias_count += 1
        if 0.0 < alpha_star[l] < c_bound:
            bias_sum += f + eps
            bias_count += 1
        if alpha[l] < c_bound and f - eps > up_val:
            up_val = f - eps
        if alpha_star[l] > 0.0 and f + eps > up_val:
            up_val = f + eps
        if alpha[l] > 0.0 and f - eps < low_val:
            low_val = f - eps
        if alpha_star[l] < c_bound and f + eps < low_val:
            low_val = f + eps
    if bias_count > 0:
        bias = bias_sum / bias_count
    else:
        bias = 0.5 * (up_val + low_val)
    return alpha, alpha_star, bias, converged


def dual_objective(kmat, y, alpha, alpha_star, epsilon) -> float:
    """Value of the tube-regression dual at the given multipliers."""
    beta = alpha - alpha_star
    return float(
        beta @ y - epsilon * np.sum(alpha + alpha_star)
        - 0.5 * beta @ kmat @ beta
    )


def solve_dual(
    ds: Dataset, space: SemanticSpace, enc: IndicatorEncoder, cfg: SolverConfig
) -> DualSolution:
    """Fit one box-constrained tube regression per semantic dimension."""
    cfg.validate()
    if ds.feature_dim != enc.feature_dim:
        raise ValidationError(
            f"dataset dim {ds.feature_dim} vs encoder dim {enc.feature_dim}"
        )
    if space.class_count != ds.class_count:
        raise ValidationError(
            f"descriptor rows {space.class_count} vs class_count {ds.class_count}"
        )
    gates = compute_indicator_matrix(enc, ds.features)
    kmat = kernel_matrix(ds.features, gates)
    targets = space.descriptors[ds.labels]
    n, s = targets.shape
    alpha = np.zeros((n, s))
    alpha_star = np.zeros((n, s))
    bias = np.zeros(s)
    support = []
    all_converged = True
    for dim in range(s):
        a, a_star, b, ok = _smo_dimension(
            kmat,
            np.ascontiguousarray(targets[:, dim]),
            cfg.error_penalty,
            cfg.epsilon,
            cfg.dual_tolerance,
            cfg.dual_max_passes,
        )
        alpha[:, dim] = a
        alpha_star[:, dim] = a_star
        bias[dim] = b
        support.append(np.flatnonzero(a + a_star > 0.0))
        all_converged = all_converged and ok
    return DualSolution(alpha, alpha_star, bias, support, all_converged)


def dual_predict(
    sol: DualSolution, train: Dataset, enc: IndicatorEncoder, x, gates=None
) -> np.ndarray:
    """Kernel-expansion prediction at x, summed over support vectors only."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (train.feature_dim,):
        raise ValidationError(
            f"x must have length {train.feature_dim}, got shape {x.shape}"
        )
    if gates is None:
        gates = compute_indicators(enc, x)
    g = gates.gates if isinstance(gates, IndicatorVector) else np.asarray(
        gates, dtype=np.float64
    )
    train_gates = compute_indicator_matrix(enc, train.features)
    kvec = (1.0 + train.features @ x) * (train_gates @ g)
    s = sol.bias.shape[0]
    out = sol.bias.copy()
    for dim in range(s):
        idx = sol.support_indices[dim]
        if idx.size:
            beta = sol.alpha[idx, dim] - sol.alpha_star[idx, dim]
            out[dim] += beta @ kvec[idx]
    return out


def primal_epsilon_loss(pred, target, epsilon) -> float:
    """Summed per-dimension tube loss max(0, |pred - target| - epsilon)."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValidationError(
            f"shape mismatch: {pred.shape} vs {target.shape}"
        )
    return float(np.maximum(np.abs(pred - target) - epsilon, 0.0).sum())


def _batch_epsilon_loss(preds, targets, epsilon) -> float:
    return float(
        np.mean(np.maximum(np.abs(preds - targets) - epsilon, 0.0).sum(axis=1))
    )


def train_joint(
    ds: Dataset,
    space: SemanticSpace,
    enc: IndicatorEncoder,
    model_init: CompositeModel,
    cfg: SolverConfig,
    log_path=None,
) -> CompositeModel:
    """Full-batch subgradient descent on tube loss + geometry + orthogonality.

    The last tenth of the (seeded-shuffle) training set is held out; the
    iterate with the best held-out tube loss is returned. Each step ends by
    projecting every weight matrix back to unit Frobenius norm. When
    `log_path` is set, a CSV of per-epoch loss terms is written; the same
    rows are attached to the result as ``training_log``.
    """
    cfg.validate()
    if ds.feature_dim != model_init.feature_dim:
        raise ValidationError(
            f"dataset dim {ds.feature_dim} vs model dim {model_init.feature_dim}"
        )
    if space.semantic_dim != model_init.semantic_dim:
        raise ValidationError(
            f"descriptor dim {space.semantic_dim} vs model output "
            f"{model_init.semantic_dim}"
        )
    if enc.k_networks != model_init.network_count:
        raise ValidationError(
            f"encoder has {enc.k_networks} blocks for {model_init.network_count} "
            "networks"
        )
    n = ds.sample_count
    if n < 2:
        raise ValidationError("need at least two samples to hold out validation")
    rng = np.random.Generator(np.random.Philox(key=cfg.seed))
    perm = rng.permutation(n)
    n_val = max(1, n // 10)
    fit_idx, val_idx = perm[: n - n_val], perm[n - n_val :]

    fit = Dataset(ds.features[fit_idx], ds.labels[fit_idx], ds.class_count)
    fit_gates = compute_indicator_matrix(enc, fit.features)
    fit_targets = space.descriptors[fit.labels]
    val_feats = ds.features[val_idx]
    val_gates = compute_indicator_matrix(enc, val_feats)
    val_targets = space.descriptors[ds.labels[val_idx]]

    thetas = model_init.thetas.copy()
    biases = model_init.biases.copy()
    global_bias = model_init.global_bias.copy()
    k = model_init.network_count
    k_active = model_init.k_active
    activation = model_init.activation
    n_fit = fit.sample_count

    def snapshot():
        return CompositeModel(
            thetas.copy(), biases.copy(), global_bias.copy(), k_active, activation
        )

    def evaluate(model):
        preds = forward_batch(model, fit.features, fit_gates)
        primal = _batch_epsilon_loss(preds, fit_targets, cfg.epsilon)
        j = geometry_objective(model, fit).objective if cfg.lambda_geo > 0.0 else 0.0
        orth = orthogonality_penalty(model) if cfg.lambda_orth > 0.0 else 0.0
        total = primal + cfg.lambda_geo * j + cfg.lambda_orth * orth
        return primal, j, orth, total

    def validation_loss(model):
        preds = forward_batch(model, val_feats, val_gates)
        return _batch_epsilon_loss(preds, val_targets, cfg.epsilon)

    best_model = snapshot()
    best_val = validation_loss(best_model)
    log_rows = []
    primal, j, orth, total = evaluate(best_model)
    log_rows.append((0, primal, j, orth, total))

    for epoch in range(1, cfg.epochs + 1):
        model = snapshot()
        preds = forward_batch(model, fit.features, fit_gates)
        residual = preds - fit_targets
        sgn = np.sign(residual) * (np.abs(residual) > cfg.epsilon)
        if activation == "rectifier":
            # tube subgradient flows only through positive pre-activations
            grad_t = np.zeros_like(thetas)
            grad_b = np.zeros_like(biases)
            for i in range(k):
                rows = np.flatnonzero(fit_gates[:, i])
                if rows.size == 0:
                    continue
                pre = fit.features[rows] @ thetas[i] + biases[i]
                gated = sgn[rows] * (pre > 0.0)
                grad_t[i] = fit.features[rows].T @ gated / n_fit
                grad_b[i] = gated.sum(axis=0) / n_fit
        else:
            weighted = fit_gates[:, :, None] * sgn[:, None, :]
            grad_t = np.einsum("nd,nks->kds", fit.features, weighted) / n_fit
            grad_b = weighted.sum(axis=0) / n_fit
        grad_global = sgn.sum(axis=0) / n_fit

        if cfg.lambda_geo > 0.0:
            grad_t += cfg.lambda_geo * geometry_subgradient(model, fit)
        if cfg.lambda_orth > 0.0:
            grad_t += cfg.lambda_orth * orthogonality_penalty_gradient(model)

        thetas -= cfg.learning_rate * grad_t
        biases -= cfg.learning_rate * grad_b
        global_bias -= cfg.learning_rate * grad_global
        for i in range(k):
            norm = np.linalg.norm(thetas[i])
            if norm > 0.0:
                thetas[i] /= norm

        model = snapshot()
        primal, j, orth, total = evaluate(model)
        if not np.isfinite(total):
            raise DivergenceError(
                "training loss is non-finite; try a smaller learning_rate"
            )
        log_rows.append((epoch, primal, j, orth, total))
        val = validation_loss(model)
        if val < best_val:
            best_val = val
            best_model = model

    if log_path is not None:
        with open(log_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRAINING_LOG_COLUMNS)
            for row in log_rows:
                writer.writerow(
                    [row[0]] + [f"{v:.12g}" for v in row[1:]]
                )
    best_model.training_log = log_rows
    best_model.validation_loss = best_val
    return best_model
