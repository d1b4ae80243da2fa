"""Least-likely class selection for predicted-OOD samples.

The chosen label minimizes the summed softmax probability over a batch of
samples believed to be OOD; it is estimated once and then frozen.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gradova import nn


@dataclass(frozen=True)
class SelectedLabel:
    class_index: int
    estimated_from: int
    frozen: bool = True


def select_from_probabilities(probabilities) -> SelectedLabel:
    p = np.asarray(probabilities, dtype=np.float64)
    if p.ndim == 1:
        p = p[None, :]
    if len(p) == 0:
        raise ValueError("label selection needs at least one sample")
    totals = p.sum(axis=0)
    # np.argmin returns the first minimum, i.e. ties go to the lowest index
    return SelectedLabel(int(np.argmin(totals)), len(p), True)


def select_label(model: nn.MlpModel, predicted_ood_samples) -> SelectedLabel:
    x = np.asarray(predicted_ood_samples, dtype=np.float64)
    if x.size == 0:
        raise ValueError("label selection needs at least one sample")
    return select_from_probabilities(nn.predict_proba(model, x))
