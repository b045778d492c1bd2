"""Attention-weighted aggregation of position-sensitive grid scores."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["GridScores", "fuse"]


@dataclass
class GridScores:
    """Per-cell scores over a k x k position-sensitive grid.

    `task` holds the task-specific scores, `attention` the attention logits;
    both are flat vectors of length k*k.
    """

    task: np.ndarray
    attention: np.ndarray
    k: int

    def __post_init__(self) -> None:
        self.task = np.asarray(self.task, dtype=float)
        self.attention = np.asarray(self.attention, dtype=float)
        if self.k < 1:
            raise ValueError(f"grid side must be >= 1, got {self.k}")
        n = self.k * self.k
        if self.task.shape != (n,) or self.attention.shape != (n,):
            raise ValueError(
                f"expected {n} grid scores for k={self.k}, got task {self.task.shape} attention {self.attention.shape}"
            )
        if not (np.isfinite(self.task).all() and np.isfinite(self.attention).all()):
            raise ValueError("grid scores must be finite")


def fuse(gs: GridScores) -> float:
    """Softmax the attention logits into a distribution over grid cells and average
    the task scores under it. Max-subtraction keeps the softmax stable."""
    shifted = gs.attention - gs.attention.max()
    weights = np.exp(shifted)
    weights /= weights.sum()
    return float(np.dot(gs.task, weights))
