"""Two-dimensional Gaussian datasets with a lightness and a color feature.

The x coordinate is driven by color and the y coordinate by lightness.  Every
(color, lightness) cell is an isotropic-or-not Gaussian sharing one covariance.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from .errors import DomainError
from .features import LabeledEmbeddingSet

LIGHTNESS_NAMES = ["dark", "light"]


def separation_for_auc(target_auc: float) -> float:
    """Mean separation of two unit-variance Gaussians whose best linear AUC is ``target_auc``.

    Inverts AUC = Phi(delta / sqrt(2)).
    """
    if not 0.5 < target_auc < 1.0:
        raise DomainError("target AUC must lie in (0.5, 1)")
    return math.sqrt(2.0) * NormalDist().inv_cdf(target_auc)


@dataclass
class SynthConfig:
    color_offsets: list[float]
    lightness_offset: float
    # counts[color][lightness]; lightness 0 = dark (y = -offset), 1 = light (y = +offset)
    counts: list[list[int]]
    covariance: list[list[float]] = field(default_factory=lambda: [[1.0, 0.0], [0.0, 1.0]])
    color_names: list[str] = field(default_factory=lambda: ["blue", "red"])
    center: tuple[float, float] = (0.0, 0.0)
    seed: int = 0

    def __post_init__(self):
        if len(self.counts) != len(self.color_offsets) or len(self.color_names) != len(self.color_offsets):
            raise DomainError("counts, color_offsets and color_names must have one entry per color")
        for row in self.counts:
            if len(row) != 2 or min(row) < 1:
                raise DomainError("every (color, lightness) cell needs at least one point")
        cov = np.asarray(self.covariance, dtype=np.float64)
        if cov.shape != (2, 2) or not np.allclose(cov, cov.T):
            raise DomainError("covariance must be a symmetric 2x2 matrix")
        if np.linalg.eigvalsh(cov).min() <= 0:
            raise DomainError("covariance must be positive definite")

    def cell_mean(self, color: int, lightness: int) -> np.ndarray:
        y = self.lightness_offset if lightness else -self.lightness_offset
        return np.array([self.color_offsets[color], y]) + np.asarray(self.center)


@dataclass
class SynthDataset:
    vectors: np.ndarray
    lightness: np.ndarray
    color: np.ndarray
    color_names: list[str]

    def __len__(self):
        return len(self.vectors)

    def feature(self, name: str) -> LabeledEmbeddingSet:
        if name in ("lightness", "f1"):
            return LabeledEmbeddingSet(self.vectors, self.lightness, 2, list(LIGHTNESS_NAMES))
        if name in ("color", "f2"):
            return LabeledEmbeddingSet(self.vectors, self.color, len(self.color_names), list(self.color_names))
        raise KeyError(name)

    def with_vectors(self, vectors) -> "SynthDataset":
        return SynthDataset(np.asarray(vectors, dtype=np.float64), self.lightness, self.color, self.color_names)


def generate(config: SynthConfig) -> SynthDataset:
    """Draw every cell i.i.d. from its Gaussian; rows are ordered by color then lightness."""
    rng = np.random.default_rng(config.seed)
    chol = np.linalg.cholesky(np.asarray(config.covariance, dtype=np.float64))
    vecs, light, color = [], [], []
    for c, row in enumerate(config.counts):
        for l, n in enumerate(row):
            z = rng.standard_normal((n, 2))
            vecs.append(config.cell_mean(c, l) + z @ chol.T)
            light.append(np.full(n, l))
            color.append(np.full(n, c))
    return SynthDataset(np.concatenate(vecs), np.concatenate(light), np.concatenate(color), list(config.color_names))


def calibrated_binary_preset(target_f1_auc: float = 0.98, target_f2_auc: float = 0.82,
                             counts=None, seed: int = 0) -> SynthConfig:
    """Identity-covariance two-color layout whose axis separations hit the target AUCs."""
    dy = separation_for_auc(target_f1_auc)
    dx = separation_for_auc(target_f2_auc)
    return SynthConfig(
        color_offsets=[-dx / 2, dx / 2],
        lightness_offset=dy / 2,
        counts=counts if counts is not None else [[5000, 5000], [5000, 5000]],
        seed=seed,
    )
