"""Class-conditional gradient statistics and Mahalanobis novelty scores."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from gradova import gradients, linalg, nn
from gradova.gradients import PREDICTED, SELECTED, GradientVector

STATS_FORMAT = "gradova.stats"


@dataclass(frozen=True)
class GradientStatistics:
    class_means: np.ndarray  # (C, D)
    tied_precision: np.ndarray  # (D, D)
    per_class_counts: tuple[int, ...]
    epsilon_scale: float
    include_bias: bool = False

    @property
    def dimension(self) -> int:
        return self.class_means.shape[1]

    @property
    def class_count(self) -> int:
        return self.class_means.shape[0]


@dataclass(frozen=True)
class NoveltyScore:
    value: float
    label_used: int
    label_mode: str


def fit_from_gradients(grads, labels, class_count: int, epsilon_scale: float = 1e-6,
                       include_bias: bool = False) -> GradientStatistics:
    """Per-class means and the pooled (divisor N) tied precision."""
    grads = linalg.as_matrix(grads)
    labels = np.asarray(labels, dtype=np.int64)
    if len(grads) != len(labels):
        raise ValueError("one label per gradient required")
    counts = np.bincount(labels, minlength=class_count)
    if len(counts) > class_count or np.any(counts[:class_count] == 0):
        raise ValueError(f"every class needs at least one sample, got counts {counts.tolist()}")
    means = np.stack([grads[labels == c].mean(axis=0) for c in range(class_count)])
    centered = grads - means[labels]
    sigma = linalg.covariance(centered, np.zeros(grads.shape[1]))
    precision = linalg.regularized_inverse(sigma, epsilon_scale)
    return GradientStatistics(means, precision, tuple(int(c) for c in counts), float(epsilon_scale),
                              include_bias)


def fit(model: nn.MlpModel, samples, labels, include_bias: bool = False,
        epsilon_scale: float = 1e-6) -> GradientStatistics:
    """Fit on the classifier's own training set, extracting with ground-truth labels."""
    labels = np.asarray(labels, dtype=np.int64)
    grads, _ = gradients.gradient_matrix(model, samples, labels, include_bias)
    return fit_from_gradients(grads, labels, model.class_count, epsilon_scale, include_bias)


def score(stats: GradientStatistics, gradient: GradientVector, class_for_mean: int) -> NoveltyScore:
    if not 0 <= class_for_mean < stats.class_count:
        raise ValueError(f"class {class_for_mean} has no fitted mean")
    if len(gradient.values) != stats.dimension:
        raise ValueError(f"gradient length {len(gradient.values)} != fitted dimension {stats.dimension}")
    value = linalg.quadratic_form(gradient.values, stats.class_means[class_for_mean], stats.tied_precision)
    return NoveltyScore(value, gradient.source_label, gradient.label_mode)


def score_sample(model: nn.MlpModel, stats: GradientStatistics, sample,
                 label_override: int | None = None) -> NoveltyScore:
    """Score one sample; the same class drives gradient extraction and the mean."""
    sample = np.asarray(sample, dtype=np.float64)
    if label_override is None:
        label = int(gradients.predicted_labels(model, sample[None, :])[0])
        mode = PREDICTED
    else:
        if not 0 <= label_override < model.class_count:
            raise ValueError(f"label override {label_override} out of range")
        label, mode = int(label_override), SELECTED
    grad = gradients.extract_gradient(model, sample, label, stats.include_bias, mode)
    return score(stats, grad, label)


def score_batch(model: nn.MlpModel, stats: GradientStatistics, samples, labels=None) -> np.ndarray:
    """Vectorized scores; ``labels=None`` means each sample's predicted label."""
    samples = np.asarray(samples, dtype=np.float64)
    if len(samples) == 0:
        return np.zeros(0)
    if labels is None:
        labels = gradients.predicted_labels(model, samples)
    labels = np.asarray(labels, dtype=np.int64)
    grads, _ = gradients.gradient_matrix(model, samples, labels, stats.include_bias)
    if grads.shape[1] != stats.dimension:
        raise ValueError("statistics were fitted on a different gradient configuration")
    return linalg.quadratic_forms(grads, stats.class_means[labels], stats.tied_precision)


# -- JSON document ----------------------------------------------------------


def stats_to_dict(stats: GradientStatistics, config: dict | None = None) -> dict:
    return {
        "format": STATS_FORMAT,
        "version": 1,
        "dimension": stats.dimension,
        "class_means": stats.class_means.tolist(),
        "tied_precision": stats.tied_precision.reshape(-1).tolist(),
        "per_class_counts": list(stats.per_class_counts),
        "epsilon_scale": stats.epsilon_scale,
        "include_bias": stats.include_bias,
        "config": config or {},
    }


def stats_from_dict(doc: dict) -> GradientStatistics:
    if doc.get("format") != STATS_FORMAT:
        raise ValueError(f"not a {STATS_FORMAT} document")
    d = int(doc["dimension"])
    return GradientStatistics(
        class_means=np.array(doc["class_means"], dtype=np.float64).reshape(-1, d),
        tied_precision=np.array(doc["tied_precision"], dtype=np.float64).reshape(d, d),
        per_class_counts=tuple(int(c) for c in doc["per_class_counts"]),
        epsilon_scale=float(doc["epsilon_scale"]),
        include_bias=bool(doc["include_bias"]),
    )


def save_stats(stats: GradientStatistics, path, config: dict | None = None) -> None:
    Path(path).write_text(json.dumps(stats_to_dict(stats, config), allow_nan=False))


def load_stats(path) -> GradientStatistics:
    return stats_from_dict(json.loads(Path(path).read_text()))


__all__ = [
    "GradientStatistics", "NoveltyScore", "fit", "fit_from_gradients", "score", "score_sample",
    "score_batch", "save_stats", "load_stats", "PREDICTED", "SELECTED",
]
