"""Self-trained IDD/OOD discriminator.

The discriminator never sees ground truth: its training set is the top and
bottom of the detector's novelty ranking. Its sigmoid output is read as the
probability that a sample is OOD.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from gradova import nn
from gradova.rng import Xoshiro256pp

PER_SAMPLE = "per_sample"
PURE_BATCH = "pure_batch"


@dataclass
class PseudoLabeledSet:
    idd_samples: np.ndarray
    ood_samples: np.ndarray
    selection_fraction: float
    idd_index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    ood_index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        if len(self.idd_samples) == 0 or len(self.idd_samples) != len(self.ood_samples):
            raise ValueError("pseudo-labeled set must be non-empty and balanced")

    @property
    def size(self) -> int:
        return len(self.idd_samples) + len(self.ood_samples)


@dataclass
class DiscriminatorConfig:
    hidden: tuple[int, ...] = (32, 16)
    train: nn.TrainConfig = field(default_factory=nn.TrainConfig)
    aggregation: str = "mean"  # pure-batch vote: "mean" or "majority"
    batch_stats_at_inference: bool = False  # True: pure-batch forward normalizes by the batch itself


@dataclass
class Discriminator:
    net: nn.MlpModel
    generation: int
    training_set_size: int
    loss_trace: list[float] = field(default_factory=list)
    degenerate: bool = False


def selection_size(n: int, selection_fraction: float) -> int:
    if not 0 < selection_fraction <= 1:
        raise ValueError("selection_fraction must lie in (0, 1]")
    return max(1, int(math.floor(selection_fraction * n / 2)))


def rank_by_score(scores) -> np.ndarray:
    """Indices sorted by score descending; equal scores keep stream order."""
    scores = np.asarray(scores, dtype=np.float64)
    return np.lexsort((np.arange(len(scores)), -scores))


def build_pseudo_set(samples, scores, selection_fraction: float = 0.5) -> PseudoLabeledSet:
    """Top-k scores become pseudo-OOD, bottom-k pseudo-IDD, k = floor(f * n / 2)."""
    samples = np.asarray(samples, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    if len(scores) < 2 or len(samples) != len(scores):
        raise ValueError("need at least two scored samples")
    k = selection_size(len(scores), selection_fraction)
    order = rank_by_score(scores)
    ood_idx, idd_idx = order[:k], order[len(order) - k:]
    return PseudoLabeledSet(samples[idd_idx], samples[ood_idx], selection_fraction, idd_idx, ood_idx)


def random_pseudo_set(samples, selection_fraction: float, stream: Xoshiro256pp) -> PseudoLabeledSet:
    """Same size as ``build_pseudo_set`` but with members drawn at random."""
    samples = np.asarray(samples, dtype=np.float64)
    k = selection_size(len(samples), selection_fraction)
    perm = stream.permutation(len(samples))
    ood_idx, idd_idx = perm[:k], perm[k:2 * k]
    return PseudoLabeledSet(samples[idd_idx], samples[ood_idx], selection_fraction, idd_idx, ood_idx)


def _is_degenerate(pseudo: PseudoLabeledSet) -> bool:
    return any(np.all(part == part[0]) for part in (pseudo.idd_samples, pseudo.ood_samples))


def retrain(pseudo: PseudoLabeledSet, cfg: DiscriminatorConfig, base_seed: int, generation: int,
            previous: Discriminator | None = None, reinit: bool = True) -> Discriminator:
    """Train a discriminator for ``generation`` on a pseudo-labeled set.

    With ``reinit`` (the default) the network starts from a fresh Glorot draw
    seeded by ``base_seed + generation`` and ``previous`` is ignored; without
    it, training continues from the parameters of ``previous``.
    """
    x = np.concatenate([pseudo.idd_samples, pseudo.ood_samples])
    y = np.concatenate([np.zeros(len(pseudo.idd_samples)), np.ones(len(pseudo.ood_samples))]).astype(np.int64)
    seed = base_seed + generation
    if reinit or previous is None:
        net = nn.discriminator(x.shape[1], cfg.hidden, seed=seed)
    else:
        net = previous.net
    net.batch_stats_at_inference = cfg.batch_stats_at_inference
    train_cfg = nn.TrainConfig(**{**cfg.train.__dict__, "rng_seed": seed})
    net, trace = nn.train(net, x, y, train_cfg, loss="discriminator")
    return Discriminator(net, generation, len(x), trace, _is_degenerate(pseudo))


def ood_probability(disc: Discriminator, samples) -> np.ndarray:
    """Per-sample sigmoid outputs using running batchnorm statistics."""
    return nn.predict_proba(disc.net, samples, batch_stats=False)


def predict(disc: Discriminator, samples, mode: str = PER_SAMPLE, aggregation: str = "mean") -> np.ndarray:
    """Binary votes, 1 = OOD. A sigmoid of exactly 0.5 votes IDD.

    ``per_sample`` always normalizes with running statistics. ``pure_batch``
    assumes the whole list is IDD-only or OOD-only and returns one shared
    vote: the batch is forwarded with the network's inference batchnorm
    policy and its outputs are pooled by mean (or majority). The default
    policy is running statistics; with ``batch_stats_at_inference`` the batch
    is normalized by its own statistics, which removes any shift common to
    the whole batch. A one-sample batch has zero variance, so it always falls
    back to running statistics and then matches ``per_sample``.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if mode == PER_SAMPLE:
        return (ood_probability(disc, samples) > 0.5).astype(np.int64)
    if mode != PURE_BATCH:
        raise ValueError(f"unknown prediction mode {mode!r}")
    if len(samples) == 0:
        raise ValueError("pure-batch prediction needs a non-empty batch")
    batch_stats = disc.net.batch_stats_at_inference and len(samples) > 1
    probs = nn.predict_proba(disc.net, samples, batch_stats=batch_stats)
    if aggregation == "mean":
        vote = probs.mean() > 0.5
    elif aggregation == "majority":
        vote = (probs > 0.5).sum() * 2 > len(probs)
    else:
        raise ValueError(f"unknown aggregation {aggregation!r}")
    return np.full(len(samples), int(vote), dtype=np.int64)


def save_discriminator(disc: Discriminator, path) -> None:
    nn.save_model(disc.net, path, {"generation": disc.generation, "training_set_size": disc.training_set_size})


def load_discriminator(path) -> Discriminator:
    doc = json.loads(Path(path).read_text())
    return Discriminator(nn.model_from_dict(doc), int(doc["generation"]), int(doc["training_set_size"]))
