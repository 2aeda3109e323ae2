"""Constrained pseudo-label assignment for positive-bag instances.

The classifier's class probabilities over all positive-bag instances form a
prediction matrix (rows = instances, columns = [positive, negative]). Raw
self-training on those predictions collapses to the all-negative fixed point,
so assignment is posed as entropically regularized optimal transport over the
polytope of soft label matrices whose rows sum to one and whose column sums
hit a prescribed positive/negative split: a fraction ``mu`` of all
positive-bag instances must carry positive mass. The scaling iteration runs
entirely in the log domain so large sharpness values do not underflow.

On top of the global column constraint, a local per-bag constraint pins the
best-scoring instance of every positive bag to a hard positive label, and a
warmup schedule anneals ``mu`` from 0.5 down to its final value.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .numkit import check_finite


@dataclass
class PredictionMatrix:
    """Per-instance class probabilities for all positive-bag instances.

    values: (N, 2) float64, rows sum to 1, column 0 is the positive class.
    bag_index: (N,) int, which positive bag each row belongs to.
    """

    values: np.ndarray
    bag_index: np.ndarray

    def __post_init__(self):
        self.values = check_finite(self.values, "prediction matrix")
        self.bag_index = np.asarray(self.bag_index, dtype=np.int64)
        _check_rows(self.values, self.bag_index, tol=1e-9)


@dataclass
class PseudoLabelMatrix:
    """Soft label assignment with the same layout as ``PredictionMatrix``."""

    values: np.ndarray
    bag_index: np.ndarray

    def __post_init__(self):
        self.values = check_finite(self.values, "pseudo label matrix")
        self.bag_index = np.asarray(self.bag_index, dtype=np.int64)
        _check_rows(self.values, self.bag_index, tol=1e-6)

    def hardened(self) -> "PseudoLabelMatrix":
        """One-hot version: each row becomes the indicator of its argmax."""
        hard = np.zeros_like(self.values)
        hard[np.arange(len(self.values)), np.argmax(self.values, axis=1)] = 1.0
        return PseudoLabelMatrix(hard, self.bag_index.copy())


def _check_rows(values: np.ndarray, bag_index: np.ndarray, tol: float) -> None:
    if values.ndim != 2 or values.shape[1] != 2:
        raise ValueError("expected an (N, 2) matrix")
    if bag_index.shape != (values.shape[0],):
        raise ValueError("bag_index length must match row count")
    if np.any(values < -tol) or np.any(values > 1 + tol):
        raise ValueError("entries must lie in [0, 1]")
    if np.max(np.abs(values.sum(axis=1) - 1.0)) > tol:
        raise ValueError("rows must sum to 1")


@dataclass
class SinkhornConfig:
    """Knobs for the scaling iteration.

    sharpness: weight on the transport cost relative to the entropy term;
        larger values sharpen the assignment toward the unregularized optimum.
    prob_floor: probabilities are clamped to [prob_floor, 1 - prob_floor]
        before taking logs.
    """

    sharpness: float = 5.0
    max_iters: int = 1000
    marginal_tol: float = 1e-6
    prob_floor: float = 1e-8

    def __post_init__(self):
        if self.sharpness <= 0:
            raise ValueError("sharpness must be positive")
        if self.marginal_tol <= 0:
            raise ValueError("marginal_tol must be positive")
        if not 0 < self.prob_floor < 1e-3:
            raise ValueError("prob_floor must lie in (0, 1e-3)")


@dataclass
class MuSchedule:
    """Linear warmup of the target positive fraction: 0.5 at epoch 0 down to
    ``mu_final`` at epoch ``warmup_epochs`` and constant afterwards."""

    mu_final: float = 0.1
    warmup_epochs: int = 10

    def __post_init__(self):
        if not 0 < self.mu_final <= 0.5:
            raise ValueError("mu_final must lie in (0, 0.5]")
        if self.warmup_epochs < 1:
            raise ValueError("warmup_epochs must be >= 1")


def adaptive_mu(t: int, schedule: MuSchedule) -> float:
    """Target positive fraction for epoch ``t`` under the warmup schedule."""
    if t < 0:
        raise ValueError("epoch must be non-negative")
    if t >= schedule.warmup_epochs:
        return schedule.mu_final
    return 0.5 + (schedule.mu_final - 0.5) * t / schedule.warmup_epochs


@dataclass
class SinkhornAssignment:
    """Result of one assignment: the labels plus convergence diagnostics.

    objective is the transport cost <Q, -log P> of the returned labels.
    objective_trace (when tracked) records the scaling objective once per
    iteration: the convex potential in the row/column scaling variables whose
    exact blockwise minimization is the scaling iteration itself. It is
    non-increasing by construction, and at convergence its value equals the
    negative of the minimal regularized cost, so -trace[-1] matches
    ``regularized_objective`` of the returned labels up to the marginal
    tolerance. The regularized cost evaluated directly on intermediate
    iterates is useless as a progress measure: iterates still violate the
    column constraint, and infeasible points undercut the constrained
    optimum, so that number typically rises toward the optimum from below.
    """

    labels: PseudoLabelMatrix
    converged: bool
    iterations: int
    marginal_error: float
    objective: float
    objective_trace: list = field(default_factory=list)


def transport_objective(q: np.ndarray, p_clamped: np.ndarray) -> float:
    """Transport cost <Q, -log P> of an assignment against clamped predictions."""
    return float(np.sum(q * -np.log(p_clamped)))


def regularized_objective(
    q: np.ndarray, p_clamped: np.ndarray, mu: float, sharpness: float
) -> float:
    """Transport cost plus the scaled divergence from the product reference.

    The reference spreads each row's unit mass as (mu, 1 - mu), so its total
    mass matches any iterate whose rows sum to one. The divergence is the
    generalized form (with linear terms), which stays meaningful on iterates
    that do not yet satisfy the column constraint.
    """
    n = q.shape[0]
    ref = np.tile([mu, 1.0 - mu], (n, 1))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(q > 0, q / ref, 1.0)
        kl = np.sum(np.where(q > 0, q * np.log(ratio), 0.0)) - q.sum() + ref.sum()
    return transport_objective(q, p_clamped) + kl / sharpness


def sinkhorn_assign(
    pred: PredictionMatrix,
    mu: float,
    cfg: SinkhornConfig,
    track_objective: bool = False,
) -> SinkhornAssignment:
    """Assign soft pseudo labels by alternating row/column scaling.

    Finds the minimizer of the entropically regularized transport cost over
    matrices with unit row sums and column sums [mu*N, (1-mu)*N]. Each
    iteration rescales columns to the target split and then rows back to unit
    mass, in the log domain; convergence is declared when the column sums of
    the row-feasible iterate are within ``marginal_tol * N`` of the target.

    Non-convergence returns the best iterate with ``converged=False`` and a
    warning, so a surrounding training loop can proceed and reassign later.
    With ``track_objective`` the per-iteration scaling objective is recorded;
    see ``SinkhornAssignment`` for what that sequence means.
    """
    if not 0.0 < mu < 1.0:
        raise ValueError("mu must lie strictly between 0 and 1")
    p = pred.values
    n = p.shape[0]
    if mu * n < 1.0:
        raise ValueError("marginal below one instance")

    p_clamped = np.clip(p, cfg.prob_floor, 1.0 - cfg.prob_floor)
    log_kernel = cfg.sharpness * np.log(p_clamped)  # (n, 2)
    col_target = np.array([mu * n, (1.0 - mu) * n])
    log_col_target = np.log(col_target)
    # Constant term of the scaling objective: <col_target, log(mu, 1-mu)>.
    ref_const = float(col_target @ (log_col_target - np.log(n)))

    row_pot = np.zeros(n)
    col_pot = np.zeros(2)
    trace: list = []
    converged = False
    iterations = 0
    err = np.inf
    for iterations in range(1, cfg.max_iters + 1):
        # Column step: exact column sums; row step: exact unit rows.
        shifted = log_kernel + row_pot[:, None]
        col_pot = log_col_target - _logsumexp_cols(shifted)
        shifted = log_kernel + col_pot[None, :]
        row_pot = -np.logaddexp(shifted[:, 0], shifted[:, 1])

        q = np.exp(log_kernel + row_pot[:, None] + col_pot[None, :])
        col_sums = q.sum(axis=0)
        err = float(np.max(np.abs(col_sums - col_target)))
        if track_objective:
            trace.append(
                (col_sums.sum() - n + ref_const
                 - row_pot.sum() - col_pot @ col_target) / cfg.sharpness
            )
        if err <= cfg.marginal_tol * n:
            converged = True
            break

    if not converged:
        warnings.warn(
            f"pseudo-label scaling did not converge after {iterations} iterations "
            f"(column error {err:.3e}); using best iterate",
            RuntimeWarning,
        )

    q = np.exp(log_kernel + row_pot[:, None] + col_pot[None, :])
    # Exact row renormalization guards against residual float drift.
    q /= q.sum(axis=1, keepdims=True)
    labels = PseudoLabelMatrix(q, pred.bag_index.copy())
    return SinkhornAssignment(
        labels=labels,
        converged=converged,
        iterations=iterations,
        marginal_error=err,
        objective=transport_objective(q, p_clamped),
        objective_trace=trace,
    )


def _logsumexp_cols(shifted: np.ndarray) -> np.ndarray:
    top = np.max(shifted, axis=0)
    return np.log(np.sum(np.exp(shifted - top[None, :]), axis=0)) + top


def naive_assign(pred: PredictionMatrix, hard: bool = False) -> PseudoLabelMatrix:
    """Unconstrained pseudo labels: the predictions themselves (or their
    row argmax as one-hots). Kept as the degeneration-prone reference arm."""
    labels = PseudoLabelMatrix(pred.values.copy(), pred.bag_index.copy())
    return labels.hardened() if hard else labels


def apply_local_constraint(
    labels: PseudoLabelMatrix,
    by: PredictionMatrix | None = None,
    expected_bags: int | None = None,
) -> PseudoLabelMatrix:
    """Pin the top positive row of every positive bag to a hard [1, 0].

    The argmax is taken over the assignment itself by default, or over ``by``
    (the raw predictions) when given. Ties break toward the lowest row index.
    All other rows pass through unchanged; the operation is idempotent.
    """
    scores = labels.values[:, 0] if by is None else by.values[:, 0]
    bag_ids = np.unique(labels.bag_index)
    if expected_bags is not None and len(bag_ids) < expected_bags:
        raise ValueError("empty bag in assignment")
    out = labels.values.copy()
    for bag in bag_ids:
        rows = np.flatnonzero(labels.bag_index == bag)
        top = rows[int(np.argmax(scores[rows]))]
        out[top] = (1.0, 0.0)
    return PseudoLabelMatrix(out, labels.bag_index.copy())
