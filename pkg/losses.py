"""
Finite-sum objective J(w) = (1/N) Σ_n Q(w; x_n) with ℓ2-regularized per-sample losses.

Two losses are provided:
    logistic-l2   Q = (ρ/2)‖w‖² + ln(1 + exp(−γ hᵀw))
    quadratic-l2  Q = (ρ/2)‖w‖² + (1/2)(γ − hᵀw)²
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from datasets import Dataset, Sample
from errors import InvalidInputError

logger = logging.getLogger(__name__)

LOSS_KINDS = ("logistic-l2", "quadratic-l2")


@dataclass(frozen=True)
class LossModel:
    """Per-sample loss definition; ``rho`` is the ℓ2 regularization weight."""

    kind: str
    rho: float

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise InvalidInputError(
                f"Unknown loss kind {self.kind!r}; expected one of {', '.join(LOSS_KINDS)}"
            )
        if not np.isfinite(self.rho) or self.rho <= 0:
            raise InvalidInputError(
                f"Regularization rho must be positive for strong convexity, got {self.rho!r}"
            )


@dataclass(frozen=True)
class CurvatureConstants:
    """Gradient Lipschitz constant ``delta`` and strong convexity ``nu``."""

    delta: float
    nu: float

    def __post_init__(self):
        if not (0 < self.nu <= self.delta):
            raise InvalidInputError(
                f"Curvature constants need 0 < nu <= delta, got nu={self.nu}, delta={self.delta}"
            )


def _check_dim(w: np.ndarray, dim: int) -> None:
    if w.shape != (dim,):
        raise InvalidInputError(
            f"Weight vector has shape {w.shape}, expected ({dim},) to match the features"
        )


def sample_loss(model: LossModel, w: np.ndarray, sample: Sample) -> float:
    """Loss Q(w; x_n) of a single sample."""
    w = np.asarray(w, dtype=float)
    _check_dim(w, sample.features.shape[0])
    margin = float(sample.features @ w)
    reg = 0.5 * model.rho * float(w @ w)
    if model.kind == "logistic-l2":
        return reg + float(np.logaddexp(0.0, -sample.label * margin))
    return reg + 0.5 * (sample.label - margin) ** 2


def sample_grad(model: LossModel, w: np.ndarray, sample: Sample) -> np.ndarray:
    """Gradient ∇Q(w; x_n) of a single sample."""
    w = np.asarray(w, dtype=float)
    h = sample.features
    _check_dim(w, h.shape[0])
    margin = float(h @ w)
    if model.kind == "logistic-l2":
        scale = sample.label * expit(-sample.label * margin)
    else:
        scale = sample.label - margin
    return model.rho * w - scale * h


def full_risk(model: LossModel, w: np.ndarray, dataset: Dataset) -> float:
    """Empirical risk J(w): the average of the per-sample losses."""
    if dataset.n < 1:
        raise InvalidInputError("Empirical risk needs a nonempty dataset")
    w = np.asarray(w, dtype=float)
    _check_dim(w, dataset.dim)
    margins = dataset.features @ w
    if model.kind == "logistic-l2":
        data_term = np.logaddexp(0.0, -dataset.labels * margins)
    else:
        data_term = 0.5 * (dataset.labels - margins) ** 2
    return 0.5 * model.rho * float(w @ w) + float(np.mean(data_term))


def full_grad(model: LossModel, w: np.ndarray, dataset: Dataset) -> np.ndarray:
    """Gradient ∇J(w) of the empirical risk."""
    if dataset.n < 1:
        raise InvalidInputError("Empirical gradient needs a nonempty dataset")
    w = np.asarray(w, dtype=float)
    _check_dim(w, dataset.dim)
    margins = dataset.features @ w
    if model.kind == "logistic-l2":
        scale = dataset.labels * expit(-dataset.labels * margins)
    else:
        scale = dataset.labels - margins
    return model.rho * w - (scale @ dataset.features) / dataset.n


def full_hessian(model: LossModel, w: np.ndarray, dataset: Dataset) -> np.ndarray:
    """Hessian ∇²J(w); used by second-order reference checks."""
    w = np.asarray(w, dtype=float)
    _check_dim(w, dataset.dim)
    if model.kind == "logistic-l2":
        s = expit(dataset.features @ w)
        weights = s * (1.0 - s)
    else:
        weights = np.ones(dataset.n)
    data_term = (dataset.features * weights[:, None]).T @ dataset.features / dataset.n
    return model.rho * np.eye(dataset.dim) + data_term


def curvature(model: LossModel, dataset: Dataset) -> CurvatureConstants:
    """
    Curvature constants for the step-size and rate formulas.

    Per-sample Hessians are ρI + c·hhᵀ with c ≤ 1/4 (logistic) or c = 1 (quadratic), so
    δ = ρ + c_max·max_n‖h_n‖² bounds every per-sample gradient's Lipschitz constant,
    and the regularizer alone gives ν = ρ.
    """
    if dataset.n < 1:
        raise InvalidInputError("Curvature needs a nonempty dataset")
    max_sq_norm = float(np.max(np.sum(dataset.features**2, axis=1)))
    factor = 0.25 if model.kind == "logistic-l2" else 1.0
    return CurvatureConstants(delta=model.rho + factor * max_sq_norm, nu=model.rho)
