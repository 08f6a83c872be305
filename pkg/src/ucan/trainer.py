"""Adversarial feature attenuation with a cosine structure-preservation term.

A generator G maps source-domain vectors X onto the target domain Y while a
discriminator D learns to tell G(X) from Y.  The generator objective adds
``-alpha * mean cos(G(x), x)`` so that mapped vectors keep their direction.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional, Sequence, Union

import numpy as np

from . import nn
from ._alloc import tune_allocator
from .errors import DomainError, NumericError, ParseError, ShapeError, TrainingDivergedError

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-7


@dataclass(frozen=True)
class OptimizerConfig:
    method: str = "adam"
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8

    def build(self) -> nn.Optimizer:
        return nn.Optimizer(self.method, self.lr, self.beta1, self.beta2, self.eps)


@dataclass(frozen=True)
class UcanConfig:
    alpha: float = 1.0
    iterations: int = 30_000
    batch_size: int = 512
    d_steps_per_g_step: int = 1
    g_optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    d_optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    label_smoothing: float = 0.0
    normalize_inputs: bool = False
    seed: int = 0
    # architecture; g_hidden=None means max(512, 2d)
    g_hidden: Optional[int] = None
    d_hidden: int = 512
    depth: int = 2
    d_dropout: float = 0.1

    def __post_init__(self):
        if self.alpha < 0 or not math.isfinite(self.alpha):
            raise DomainError("alpha must be a finite nonnegative number")
        if self.iterations < 1:
            raise DomainError("iterations must be >= 1")
        if self.batch_size < 1:
            raise DomainError("batch_size must be >= 1")
        if self.d_steps_per_g_step < 1:
            raise DomainError("d_steps_per_g_step must be >= 1")
        if not 0.0 <= self.label_smoothing < 0.5:
            raise DomainError("label_smoothing must lie in [0, 0.5)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "UcanConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ParseError(f"unknown config keys: {sorted(unknown)}")
        doc = dict(doc)
        for key in ("g_optimizer", "d_optimizer"):
            if isinstance(doc.get(key), dict):
                doc[key] = OptimizerConfig(**doc[key])
        return cls(**doc)

    def with_overrides(self, **overrides) -> "UcanConfig":
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})


@dataclass
class DomainPair:
    source: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        self.source = np.asarray(self.source, dtype=np.float64)
        self.target = np.asarray(self.target, dtype=np.float64)
        for name, m in (("source", self.source), ("target", self.target)):
            if m.ndim != 2 or m.shape[0] == 0:
                raise DomainError(f"{name} must be a nonempty 2-D matrix")
            if not np.all(np.isfinite(m)):
                raise DomainError(f"{name} contains non-finite values")
            if np.any(np.linalg.norm(m, axis=1) == 0):
                raise DomainError(f"{name} contains a zero-norm row")
        if self.source.shape[1] != self.target.shape[1]:
            raise ShapeError(
                f"source has {self.source.shape[1]} columns, target {self.target.shape[1]}"
            )

    @property
    def dim(self) -> int:
        return self.source.shape[1]


@dataclass(frozen=True)
class TraceEntry:
    iteration: int
    d_loss: float
    g_loss: float
    mean_cos: float


@dataclass
class TrainedMapping:
    generator: nn.MlpModel
    config: UcanConfig
    trace: list[TraceEntry] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.generator.input_dim

    def __call__(self, x) -> np.ndarray:
        return map_embeddings(self, x)

    def to_dict(self) -> dict:
        return {
            "format": "ucan-mapping/1",
            "config": self.config.to_dict(),
            "generator": nn.model_to_dict(self.generator),
            "trace": [asdict(t) for t in self.trace],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainedMapping":
        try:
            return cls(
                nn.model_from_dict(doc["generator"]),
                UcanConfig.from_dict(doc["config"]),
                [TraceEntry(**t) for t in doc.get("trace", [])],
            )
        except (KeyError, TypeError) as exc:
            raise ParseError(f"malformed mapping document: {exc}") from exc

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "TrainedMapping":
        with open(path, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ParseError(str(exc), path=path) from exc
        return cls.from_dict(doc)

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "L_D", "L_G", "mean_cos"])
        for t in self.trace:
            w.writerow([t.iteration, repr(t.d_loss), repr(t.g_loss), repr(t.mean_cos)])
        return buf.getvalue()


# -- losses --------------------------------------------------------------------

def _clamp(p) -> np.ndarray:
    return np.clip(np.asarray(p, dtype=np.float64).ravel(), PROB_FLOOR, 1.0 - PROB_FLOOR)


def discriminator_loss(d_on_target, d_on_mapped) -> float:
    """``-mean log D(y) - mean log(1 - D(G(x)))`` with probabilities clamped."""
    real, fake = _clamp(d_on_target), _clamp(d_on_mapped)
    if real.size == 0 or fake.size == 0:
        raise DomainError("discriminator loss needs nonempty batches on both sides")
    return float(-np.mean(np.log(real)) - np.mean(np.log1p(-fake)))


def generator_loss(x_batch, gx_batch, d_on_mapped, alpha: float) -> float:
    """``-alpha * mean cos(G(x), x) - mean log D(G(x))``."""
    x = np.asarray(x_batch, dtype=np.float64)
    gx = np.asarray(gx_batch, dtype=np.float64)
    fake = _clamp(d_on_mapped)
    if fake.size == 0:
        raise DomainError("generator loss needs a nonempty batch")
    cos = nn.rowwise_cosine(gx, x)
    return float(-alpha * np.mean(cos) - np.mean(np.log(fake)))


def structure_penalty(x_batch, gx_batch, alpha: float) -> float:
    """The ``alpha * mean(1 - cos)`` form; differs from the loss term by ``alpha``."""
    return float(alpha * np.mean(1.0 - nn.rowwise_cosine(np.asarray(gx_batch), np.asarray(x_batch))))


def _cosine_grad(gx: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row cosines and their gradient with respect to ``gx``."""
    ngx = np.linalg.norm(gx, axis=1, keepdims=True)
    nx = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(ngx == 0) or np.any(nx == 0):
        raise DomainError("zero-norm row in cosine computation")
    cos = np.einsum("ij,ij->i", gx, x)[:, None] / (ngx * nx)
    grad = x / (ngx * nx) - cos * gx / (ngx * ngx)
    return cos[:, 0], grad


# -- training ------------------------------------------------------------------

def _l2_normalize(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise DomainError("cannot normalize a zero-norm row")
    return m / norms


def _mean_cos(generator: nn.MlpModel, x: np.ndarray, chunk: int = 8192) -> float:
    total = 0.0
    for start in range(0, len(x), chunk):
        xb = x[start:start + chunk]
        gx = nn.mlp_forward(generator, xb)
        ngx = np.linalg.norm(gx, axis=1)
        ngx[ngx == 0] = np.inf  # a collapsed row counts as cos 0
        total += float(np.sum(np.einsum("ij,ij->i", gx, xb) / (ngx * np.linalg.norm(xb, axis=1))))
    return total / len(x)


def train(pair: DomainPair, config: UcanConfig = UcanConfig(), progress=None) -> TrainedMapping:
    """Fit a generator mapping ``pair.source`` onto ``pair.target``.

    Every round draws fresh batches (uniform, with replacement) for each of the
    ``d_steps_per_g_step`` discriminator updates and for the generator update.
    The generator is frozen while D trains and vice versa.
    """
    tune_allocator()
    x_all, y_all = pair.source, pair.target
    if config.normalize_inputs:
        x_all, y_all = _l2_normalize(x_all), _l2_normalize(y_all)
    d = pair.dim
    p, q = len(x_all), len(y_all)
    b = config.batch_size

    init_seq, sample_seq, drop_seq = np.random.SeedSequence(config.seed).spawn(3)
    init_rng = np.random.default_rng(init_seq)
    sampler = np.random.default_rng(sample_seq)
    dropper = np.random.default_rng(drop_seq)

    gen = nn.build_generator(d, init_rng, config.g_hidden, config.depth)
    disc = nn.build_discriminator(d, init_rng, config.d_hidden, config.depth, config.d_dropout)
    g_opt, d_opt = config.g_optimizer.build(), config.d_optimizer.build()
    g_tape, d_tape = nn.GradientTape(), nn.GradientTape()

    s = config.label_smoothing
    d_targets = np.concatenate([np.full((b, 1), 1.0 - s), np.full((b, 1), s)])
    every = max(1, config.iterations // 100)
    trace: list[TraceEntry] = []

    try:
        for it in range(1, config.iterations + 1):
            for _ in range(config.d_steps_per_g_step):
                yb = y_all[sampler.integers(0, q, size=b)]
                xb = x_all[sampler.integers(0, p, size=b)]
                gx = nn.mlp_forward(gen, xb)
                probs = nn.mlp_forward(disc, np.concatenate([yb, gx]), d_tape, dropper)
                nn.mlp_backward(disc, d_tape, (probs - d_targets) / b, logit_grad=True)
                d_opt.step(disc, d_tape)

            xb = x_all[sampler.integers(0, p, size=b)]
            gx = nn.mlp_forward(gen, xb, g_tape)
            fake = nn.mlp_forward(disc, gx, d_tape, dropper)
            # non-saturating adversarial term: -mean log D(G(x))
            nn.mlp_backward(disc, d_tape, (fake - 1.0) / b, logit_grad=True)
            cos, cos_grad = _cosine_grad(gx, xb)
            grad_gx = d_tape.input_grad - (config.alpha / b) * cos_grad
            nn.mlp_backward(gen, g_tape, grad_gx)
            g_opt.step(gen, g_tape)

            if it % every == 0 or it == config.iterations:
                real, fake_d = probs[:b], probs[b:]
                entry = TraceEntry(
                    it,
                    discriminator_loss(real, fake_d),
                    float(-config.alpha * np.mean(cos) - np.mean(np.log(_clamp(fake)))),
                    _mean_cos(gen, x_all),
                )
                trace.append(entry)
                if not all(math.isfinite(v) for v in (entry.d_loss, entry.g_loss, entry.mean_cos)):
                    raise TrainingDivergedError(f"non-finite loss at iteration {it}", trace)
                if progress is not None:
                    progress(entry)
    except TrainingDivergedError:
        raise
    except NumericError as exc:
        # a non-finite gradient shows up in the optimizer before the next checkpoint
        raise TrainingDivergedError(f"training diverged at iteration {it}: {exc}", trace) from exc
    return TrainedMapping(gen, config, trace)


def map_embeddings(mapping: TrainedMapping, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != mapping.dim:
        raise ShapeError(f"expected {mapping.dim} columns, got shape {x.shape}")
    if mapping.config.normalize_inputs:
        x = _l2_normalize(x)
    return nn.mlp_forward(mapping.generator, x)


@dataclass
class MultilabelMapping:
    """One independent mapping per non-target class."""

    target: int
    mappings: dict[int, TrainedMapping]

    def transform(self, vectors, labels) -> np.ndarray:
        """Apply each class's mapping to its rows; target rows stay unchanged."""
        vectors = np.asarray(vectors, dtype=np.float64)
        labels = np.asarray(labels)
        out = vectors.copy()
        for cls, mapping in self.mappings.items():
            rows = labels == cls
            if rows.any():
                out[rows] = map_embeddings(mapping, vectors[rows])
        return out


def choose_target(sizes: Sequence[int], target_selection: Union[str, int] = "largest") -> int:
    if target_selection == "largest":
        # first class wins ties
        return int(np.argmax(sizes))
    idx = int(target_selection)
    if not 0 <= idx < len(sizes):
        raise DomainError(f"target index {idx} out of range for {len(sizes)} classes")
    return idx


def train_multilabel(
    classes: Sequence[np.ndarray],
    config: UcanConfig = UcanConfig(),
    target_selection: Union[str, int] = "largest",
    progress=None,
) -> MultilabelMapping:
    """Map each of the M-1 non-target class partitions into the target class."""
    if len(classes) < 2:
        raise DomainError("multilabel attenuation needs at least two classes")
    parts = [np.asarray(c, dtype=np.float64) for c in classes]
    for i, part in enumerate(parts):
        if part.ndim != 2 or len(part) == 0:
            raise DomainError(f"class partition {i} is empty")
    target = choose_target([len(c) for c in parts], target_selection)
    mappings = {}
    for i, part in enumerate(parts):
        if i == target:
            continue
        log.info("training mapping %d -> %d", i, target)
        mappings[i] = train(DomainPair(part, parts[target]), config, progress)
    return MultilabelMapping(target, mappings)
