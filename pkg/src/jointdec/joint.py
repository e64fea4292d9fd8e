"""Joint-decision arithmetic for multi-head and multi-network combination.

Head weights decay exponentially from the original classifier outward;
auxiliary heads are further damped by ``mu`` when outputs are combined.
Ensemble members get a weight from their training accuracy logit, and
training samples are reweighted between members.
"""

from __future__ import annotations

import math
import threading
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ContractError, JointDecisionWarning
from .tensor import Tensor

CLAMP_LO = 0.001
CLAMP_HI = 0.999
LOG_FLOOR = 1e-12


class _Counter:
    def __init__(self):
        self._lock = threading.Lock()
        self.value = 0

    def add(self, n: int) -> None:
        with self._lock:
            self.value += n

    def reset(self) -> None:
        with self._lock:
            self.value = 0


# number of true-class probabilities that hit LOG_FLOOR in weighted_cross_entropy
log_clamp_events = _Counter()


@dataclass(frozen=True)
class HeadWeights:
    alpha: tuple
    k: float = 1.0
    mu: float = 0.5
    alpha1: float = 1.0

    @property
    def m(self) -> int:
        return len(self.alpha)


def head_weights(alpha1: float, k: float, m: int, mu: float = 0.5) -> HeadWeights:
    """alpha_1 for the original output, alpha_1 / (k e^(i-1)) for auxiliary head i."""
    if m < 1:
        raise ContractError(f"need at least one head, got m={m}")
    if alpha1 <= 0 or k <= 0:
        raise ContractError(f"alpha1 and k must be positive (alpha1={alpha1}, k={k})")
    if mu < 0:
        raise ContractError(f"mu must be non-negative, got {mu}")
    alpha = (float(alpha1),) + tuple(alpha1 / (k * math.exp(i - 1)) for i in range(2, m + 1))
    return HeadWeights(alpha, float(k), float(mu), float(alpha1))


def multilayer_loss(head_losses: Sequence, hw: HeadWeights):
    """Sum of alpha_i * loss_i. Works on Tensors (differentiable) or floats."""
    if len(head_losses) != hw.m:
        raise ContractError(f"{len(head_losses)} head losses for {hw.m} head weights")
    if all(isinstance(x, Tensor) for x in head_losses):
        total = T.scale(head_losses[0], hw.alpha[0])
        for a, loss in zip(hw.alpha[1:], head_losses[1:]):
            total = T.add(total, T.scale(loss, a))
        return total
    total = 0.0
    for a, loss in zip(hw.alpha, head_losses):
        total += a * float(loss)
    return total


def multilayer_output(head_outputs: Sequence[np.ndarray], hw: HeadWeights) -> np.ndarray:
    """alpha_1 O_1 + mu * sum_{i>=2} alpha_i O_i (not renormalized)."""
    if len(head_outputs) != hw.m:
        raise ContractError(f"{len(head_outputs)} head outputs for {hw.m} head weights")
    outs = [np.asarray(o, dtype=np.float64) for o in head_outputs]
    shape = outs[0].shape
    if any(o.shape != shape for o in outs):
        raise ContractError(f"head output shapes differ: {[o.shape for o in outs]}")
    total = hw.alpha[0] * outs[0]
    if hw.m > 1:
        aux = np.zeros(shape)
        for a, o in zip(hw.alpha[1:], outs[1:]):
            aux += a * o
        total = total + hw.mu * aux
    return total


def predict(scores: np.ndarray) -> np.ndarray:
    return np.argmax(scores, axis=1)


def clamp_accuracy(acc: float) -> float:
    return min(max(float(acc), CLAMP_LO), CLAMP_HI)


def network_weight(acc: float, epsilon: float) -> float:
    """Member weight (1/epsilon) * logit(acc), with acc clamped to [0.001, 0.999]."""
    if epsilon <= 0:
        raise ContractError(f"epsilon must be positive, got {epsilon}")
    a = clamp_accuracy(acc)
    lam = math.log(a / (1.0 - a)) / epsilon
    if lam <= 0:
        warnings.warn(
            f"accuracy {acc:.4f} gives non-positive network weight {lam:.6f}",
            JointDecisionWarning,
            stacklevel=2,
        )
    return lam


@dataclass
class SampleWeightTable:
    weights: np.ndarray
    round: int = 0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if not (self.weights > 0).all():
            raise ContractError("sample weights must all be positive")

    @classmethod
    def uniform(cls, n: int) -> "SampleWeightTable":
        return cls(np.ones(n), 0)

    def __len__(self):
        return len(self.weights)


def reweight_factors(correct: np.ndarray, lambda_prev: float, intent_mode: bool = False) -> np.ndarray:
    """Per-sample multipliers before renormalization.

    Right: 2 exp(-lambda), wrong: exp(lambda) / 2. ``intent_mode`` swaps the
    two so that correct samples shrink whenever lambda < ln 2.
    """
    correct = np.asarray(correct, dtype=bool)
    right = 2.0 * math.exp(-lambda_prev)
    wrong = 0.5 * math.exp(lambda_prev)
    if intent_mode:
        right, wrong = wrong, right
    return np.where(correct, right, wrong)


def update_sample_weights(
    table: SampleWeightTable, correct, lambda_prev: float, intent_mode: bool = False
) -> SampleWeightTable:
    correct = np.asarray(correct, dtype=bool)
    if correct.shape != table.weights.shape:
        raise ContractError(f"mask length {correct.shape} vs table length {table.weights.shape}")
    w = table.weights * reweight_factors(correct, lambda_prev, intent_mode)
    w = w / w.mean()
    return SampleWeightTable(w, table.round + 1)


def scaled_one_hot(labels, weights, num_classes: int) -> np.ndarray:
    """Label vectors y'_t: one-hot rows multiplied by each sample's weight."""
    labels = np.asarray(labels, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    if labels.shape != weights.shape:
        raise ContractError(f"labels {labels.shape} vs weights {weights.shape}")
    y = np.zeros((len(labels), num_classes))
    y[np.arange(len(labels)), labels] = weights
    return y


def weighted_cross_entropy(probs, scaled_labels: np.ndarray):
    """Batch mean of -sum_t y'_t log(y_t), log clamped at 1e-12.

    ``probs`` may be a Tensor (result is a differentiable scalar Tensor) or an
    array (result is a float).
    """
    scaled_labels = np.asarray(scaled_labels, dtype=np.float64)
    p = probs.data if isinstance(probs, Tensor) else np.asarray(probs, dtype=np.float64)
    if p.shape != scaled_labels.shape:
        raise ContractError(f"probs {p.shape} vs labels {scaled_labels.shape}")
    hits = int(((p < LOG_FLOOR) & (scaled_labels != 0)).sum())
    if hits:
        log_clamp_events.add(hits)
    n = p.shape[0]
    if isinstance(probs, Tensor):
        return T.scale(T.sum(T.mul_const(T.log(probs, LOG_FLOOR), scaled_labels)), -1.0 / n)
    return float(-(scaled_labels * np.log(np.maximum(p, LOG_FLOOR))).sum() / n)


def weighted_nll(probs: np.ndarray, labels, weights) -> float:
    """Per-sample-multiplier form: mean of -w * log p[true]."""
    p = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    true_p = p[np.arange(len(labels)), labels]
    return float(np.mean(-np.asarray(weights) * np.log(np.maximum(true_p, LOG_FLOOR))))


def joint_network_output(outputs: Sequence[np.ndarray], lambdas: Sequence[float]) -> np.ndarray:
    """sum_j lambda_j * O_j over ensemble members."""
    if len(outputs) != len(lambdas) or not outputs:
        raise ContractError(f"{len(outputs)} outputs for {len(lambdas)} lambdas")
    outs = [np.asarray(o, dtype=np.float64) for o in outputs]
    if any(o.shape != outs[0].shape for o in outs):
        raise ContractError("member output shapes differ")
    if all(lam <= 0 for lam in lambdas):
        warnings.warn("every network weight is non-positive", JointDecisionWarning, stacklevel=2)
    total = np.zeros(outs[0].shape)
    for lam, o in zip(lambdas, outs):
        total += lam * o
    return total
