"""Closed-form per-sample gradients of the final classification layer.

For cross-entropy with label ``c`` the gradient with respect to the final
weight matrix is ``(p - e_c) h^T``, where ``p`` is the softmax output and
``h`` the last hidden activation; the bias gradient is ``p - e_c``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gradova import nn

PREDICTED = "predicted"
SELECTED = "selected"


@dataclass(frozen=True)
class GradientVector:
    values: np.ndarray
    source_label: int
    label_mode: str = PREDICTED


def gradient_dim(model: nn.MlpModel, include_bias: bool = False) -> int:
    k, h = model.class_count, model.feature_dim_last_hidden
    return k * h + (k if include_bias else 0)


def gradient_matrix(model: nn.MlpModel, samples, labels, include_bias: bool = False):
    """Gradients for a batch as an (n, D) array plus the softmax outputs."""
    logits, hidden = nn.forward(model, samples, mode="eval")
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"need one label per sample: {labels.shape} vs {n} samples")
    if n and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"label out of range for {k} classes")
    p = nn.softmax(logits)
    delta = p.copy()
    delta[np.arange(n), labels] -= 1.0
    grads = (delta[:, :, None] * hidden[:, None, :]).reshape(n, -1)
    if include_bias:
        grads = np.concatenate([grads, delta], axis=1)
    return grads, p


def extract_batch(model: nn.MlpModel, samples, labels, include_bias: bool = False,
                  label_mode: str = PREDICTED) -> list[GradientVector]:
    if len(samples) != len(labels):
        raise ValueError("samples and labels differ in length")
    if len(samples) == 0:
        return []
    grads, _ = gradient_matrix(model, samples, labels, include_bias)
    return [GradientVector(g, int(c), label_mode) for g, c in zip(grads, labels)]


def extract_gradient(model: nn.MlpModel, sample, label: int, include_bias: bool = False,
                     label_mode: str = PREDICTED) -> GradientVector:
    sample = np.asarray(sample, dtype=np.float64)
    if sample.ndim != 1:
        raise ValueError("extract_gradient takes a single sample")
    return extract_batch(model, [sample], [label], include_bias, label_mode)[0]


def predicted_labels(model: nn.MlpModel, samples) -> np.ndarray:
    logits, _ = nn.forward(model, samples, mode="eval")
    return logits.argmax(axis=1)
