"""Label-graph output layer and the soft-training objective.

The head maps an item representation ``z`` to raw per-label probabilities
``z' = sigmoid(W z + b)`` and mixes them through a learned label graph,
``e = z' G``.  Soft training adds a second cross-entropy term against the
continuous target ``y' = y G'``, where ``G'`` is a column-wise temperature
softmax of ``G``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor

DEFAULT_TAU = 3.0
DEFAULT_THRESHOLD = 0.2
CLAMP_EPS = 1e-7


class LossError(ValueError):
    pass


def init_head(in_dim: int, num_labels: int, rng: np.random.Generator, scale: float = 0.08, graph: bool = True) -> dict[str, Tensor]:
    params = {
        "head.W": Tensor(rng.uniform(-scale, scale, size=(in_dim, num_labels)), requires_grad=True, name="head.W"),
        "head.b": Tensor(np.zeros(num_labels), requires_grad=True, name="head.b"),
    }
    if graph:
        params["graph.G"] = Tensor(np.eye(num_labels), requires_grad=True, name="graph.G")
    return params


def raw_distribution(z: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``sigmoid(z W + b)``; ``z`` may be a single vector or a (batch, dim) matrix."""
    if z.shape[-1] != weight.shape[0]:
        raise ag.ShapeError(f"representation of size {z.shape[-1]} does not match head input {weight.shape[0]}")
    return ag.sigmoid(ag.add(ag.matmul(z, weight), bias))


def apply_graph(raw: Tensor, graph: Tensor) -> Tensor:
    """``e_j = sum_i raw_i G[i, j]``.  Not confined to [0, 1]."""
    if graph.ndim != 2 or graph.shape[0] != graph.shape[1] or raw.shape[-1] != graph.shape[0]:
        raise ag.ShapeError(f"cannot mix probabilities of shape {raw.shape} through a graph of shape {graph.shape}")
    return ag.matmul(raw, graph)


def smooth_graph(graph: Tensor, tau: float = DEFAULT_TAU, axis: int = 0) -> Tensor:
    """Temperature softmax of G; along axis 0 every column sums to 1."""
    return ag.softmax_temperature(graph, tau, axis=axis)


def soft_targets(y, smoothed: Tensor) -> Tensor:
    """``y' = y G'`` for 0/1 targets ``y`` (vector or batch)."""
    return ag.matmul(ag.as_tensor(y), smoothed)


def bce(target, pred: Tensor, literal: bool = False) -> Tensor:
    """Per-row cross-entropy summed over labels.

    ``literal`` keeps only the ``-t log p`` term.
    """
    target = ag.as_tensor(target)
    pos = ag.mul(target, ag.log(pred))
    if literal:
        total = pos
    else:
        total = ag.add(pos, ag.mul(ag.sub(1.0, target), ag.log(ag.sub(1.0, pred))))
    return ag.neg(ag.sum_(total, axis=-1))


def soft_loss(e: Tensor, y, y_soft: Tensor | None, eps: float = CLAMP_EPS, literal: bool = False) -> Tensor:
    """Mean over the batch of ``H(y, e) + H(clamp(y'), e)`` with ``e`` clamped to [eps, 1-eps].

    ``y_soft=None`` drops the second term.
    """
    y = ag.as_tensor(y)
    if np.isnan(e.data).any() or np.isnan(y.data).any() or (y_soft is not None and np.isnan(y_soft.data).any()):
        raise LossError("NaN in loss inputs")
    pred = ag.clip(e, eps, 1.0 - eps)
    per_row = bce(y, pred, literal)
    if y_soft is not None:
        per_row = ag.add(per_row, bce(ag.clip(y_soft, 0.0, 1.0), pred, literal))
    return ag.mean(per_row)


@dataclass
class PredictionResult:
    scores: np.ndarray
    ranking: list[int]
    selected: list[int]


def rank_labels(scores: np.ndarray) -> list[int]:
    """Descending score; equal scores keep the lower index first."""
    return np.argsort(-np.asarray(scores), kind="stable").tolist()


def select_labels(scores: np.ndarray, threshold: float = DEFAULT_THRESHOLD, fallback: bool = True) -> PredictionResult:
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    scores = np.asarray(scores, dtype=np.float64)
    ranking = rank_labels(scores)
    selected = [j for j in range(len(scores)) if scores[j] > threshold]
    if not selected and fallback:
        selected = [ranking[0]]
    return PredictionResult(scores, ranking, selected)
