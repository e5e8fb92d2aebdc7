"""Soft assignment of primitives to parts and of points to primitives.

Three stochastic matrices drive the grouping:

  v (Q x P): primitive -> part, the row-softmax of a free logit matrix h.
  w (N x Q): point -> primitive, softmax over dot products between a learned
             per-point feature (a small MLP on normalized coordinates) and a
             per-primitive feature vector.
  u (N x P): point -> part, the product w @ v.

All three stay differentiable; hard labels are taken by argmax only after
optimization ends.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

FEATURE_DIM = 16
HIDDEN = 64


@dataclass
class Mlp:
    """3-layer point-feature network, 3 -> 64 -> 64 -> 16, tanh between layers."""

    weights: list  # [W1, b1, W2, b2, W3, b3] leaf Tensors

    @classmethod
    def init(cls, rng: np.random.Generator, requires_grad: bool = True) -> "Mlp":
        sizes = [(3, HIDDEN), (HIDDEN, HIDDEN), (HIDDEN, FEATURE_DIM)]
        ws = []
        for fan_in, fan_out in sizes:
            bound = 1.0 / np.sqrt(fan_in)
            ws.append(Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad))
            ws.append(Tensor(rng.uniform(-bound, bound, size=(fan_out,)), requires_grad))
        return cls(ws)

    def __call__(self, points) -> Tensor:
        """Per-point 16-d features from (..., 3) normalized coordinates."""
        W1, b1, W2, b2, W3, b3 = self.weights
        x = ad._wrap(points)
        x = ad.tanh(x @ W1 + b1)
        x = ad.tanh(x @ W2 + b2)
        return x @ W3 + b3

    def parameters(self) -> list:
        return list(self.weights)


@dataclass
class AssignmentState:
    """Free parameters of the grouping: part logits and the point MLP."""

    h: Tensor  # (Q, P) logits
    mlp: Mlp

    @classmethod
    def init(cls, num_primitives: int, num_parts: int, rng: np.random.Generator,
             requires_grad: bool = True) -> "AssignmentState":
        # zero logits = uniform part assignment at the start
        return cls(h=Tensor(np.zeros((num_primitives, num_parts)), requires_grad),
                   mlp=Mlp.init(rng, requires_grad))

    def parameters(self) -> list:
        return [self.h] + self.mlp.parameters()


def part_probs(h: Tensor) -> Tensor:
    """v = row-softmax(h): probability of each primitive belonging to each part."""
    return ad.softmax(ad._wrap(h), axis=-1)


def point_primitive_probs(points, mlp: Mlp, g: Tensor) -> Tensor:
    """w[n, q] = softmax_q( MLP(x_n) . g_q ) for normalized points (N, 3)."""
    f = mlp(points)
    logits = f @ ad._wrap(g).transpose(1, 0)
    return ad.softmax(logits, axis=-1)


def point_part_probs(w: Tensor, v: Tensor) -> Tensor:
    """u = w @ v: probability of each point belonging to each part."""
    return ad._wrap(w) @ ad._wrap(v)


def bbox_normalizer(points: np.ndarray):
    """Center and isotropic half-extent mapping `points` into [-1, 1]^3.

    Isotropic so the mapping preserves shape; use the same (center, scale)
    for every frame of a sequence.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if points.size == 0:
        raise ValueError("cannot normalize an empty point set")
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    center = (lo + hi) / 2.0
    scale = max(float((hi - lo).max()) / 2.0, 1e-9)
    return center, scale


def normalize_points(points, center, scale):
    """Apply a bbox_normalizer mapping; works on arrays or Tensors."""
    return (ad._wrap(points) - center) * (1.0 / scale)
