"""Closed-loop novelty detection over a stream of unlabeled batches.

Every batch is appended to the history, the whole history is rescored, the
top/bottom of the ranking becomes a pseudo-labeled set, the least-likely
label is estimated once from the pseudo-OOD half, and the discriminator is
retrained from scratch. From the second batch on, discriminator votes decide
which samples are scored with the selected label instead of the predicted
one.

Nothing here reads ground truth. Evaluation hooks in through ``monitor``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from gradova import binary_classifier as bc
from gradova import gradients, label_select, mahalanobis, nn
from gradova.label_select import SelectedLabel
from gradova.rng import Xoshiro256pp


@dataclass
class Ablations:
    disable_discriminator: bool = False
    random_pseudo_labels: bool = False
    no_reinit: bool = False
    refresh_label: bool = False


@dataclass
class LoopConfig:
    batch_size_in: int = 100
    batch_size_ood: int = 100
    selection_fraction: float = 0.5
    discriminator: bc.DiscriminatorConfig = field(default_factory=bc.DiscriminatorConfig)
    threshold_policy: str | float = "tpr95"
    ablations: Ablations = field(default_factory=Ablations)
    seed: int = 0

    def __post_init__(self):
        if self.batch_size_in < 1 or self.batch_size_ood < 1:
            raise ValueError("batch sizes must be >= 1")
        if not 0 < self.selection_fraction <= 1:
            raise ValueError("selection_fraction must lie in (0, 1]")
        if isinstance(self.threshold_policy, str) and self.threshold_policy != "tpr95":
            raise ValueError(f"unknown threshold policy {self.threshold_policy!r}")


@dataclass
class StreamState:
    config: LoopConfig
    history: np.ndarray | None = None
    scores: np.ndarray = field(default_factory=lambda: np.zeros(0))
    labels_used: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    label_modes: list[str] = field(default_factory=list)
    votes: np.ndarray | None = None
    selected_label: SelectedLabel | None = None
    discriminator: bc.Discriminator | None = None
    pseudo: bc.PseudoLabeledSet | None = None
    iteration: int = 0

    @property
    def n_history(self) -> int:
        return 0 if self.history is None else len(self.history)


def _score_history(state: StreamState, model: nn.MlpModel, stats) -> None:
    x = state.history
    predicted = gradients.predicted_labels(model, x)
    use_votes = (state.discriminator is not None and state.selected_label is not None
                 and not state.config.ablations.disable_discriminator)
    if use_votes:
        votes = bc.predict(state.discriminator, x, bc.PER_SAMPLE)
        labels = np.where(votes == 1, state.selected_label.class_index, predicted)
        modes = [gradients.SELECTED if v else gradients.PREDICTED for v in votes]
    else:
        votes = None
        labels = predicted
        modes = [gradients.PREDICTED] * len(x)
    state.votes = votes
    state.labels_used = labels
    state.label_modes = modes
    state.scores = mahalanobis.score_batch(model, stats, x, labels)


def consume_batch(state: StreamState, batch, model: nn.MlpModel, stats) -> StreamState:
    """Run one iteration of the loop on a new batch; mutates and returns ``state``."""
    if stats is None:
        raise ValueError("gradient statistics must be fitted before scoring")
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or len(batch) == 0:
        raise ValueError("batch must be a non-empty 2-D array")
    cfg = state.config
    flags = cfg.ablations
    state.history = batch.copy() if state.history is None else np.concatenate([state.history, batch])
    state.iteration += 1
    _score_history(state, model, stats)

    if flags.random_pseudo_labels:
        stream = Xoshiro256pp(cfg.seed + 7919 * state.iteration)
        pseudo = bc.random_pseudo_set(state.history, cfg.selection_fraction, stream)
    else:
        pseudo = bc.build_pseudo_set(state.history, state.scores, cfg.selection_fraction)
    state.pseudo = pseudo

    if state.selected_label is None or flags.refresh_label:
        state.selected_label = label_select.select_label(model, pseudo.ood_samples)

    if not flags.disable_discriminator:
        state.discriminator = bc.retrain(
            pseudo, cfg.discriminator, cfg.seed,
            generation=state.iteration,
            previous=state.discriminator,
            reinit=not flags.no_reinit,
        )
    return state


def threshold(state: StreamState) -> float:
    """Decision threshold for the current history.

    ``tpr95``: the 95th percentile of scores among samples the discriminator
    votes IDD; before any vote exists, among the pseudo-IDD members.
    """
    policy = state.config.threshold_policy
    if not isinstance(policy, str):
        return float(policy)
    if state.votes is not None and np.any(state.votes == 0):
        reference = state.scores[state.votes == 0]
    else:
        reference = state.scores[state.pseudo.idd_index]
    return float(np.percentile(reference, 95))


def final_decisions(state: StreamState) -> np.ndarray:
    """Outlier flags for the whole history: score > threshold."""
    if state.iteration == 0:
        raise ValueError("no batch has been consumed yet")
    return state.scores > threshold(state)


def score_new(state: StreamState, samples, model: nn.MlpModel, stats) -> np.ndarray:
    """Score unseen samples with the current discriminator routing."""
    samples = np.asarray(samples, dtype=np.float64)
    predicted = gradients.predicted_labels(model, samples)
    labels = predicted
    if (state.discriminator is not None and state.selected_label is not None
            and not state.config.ablations.disable_discriminator):
        votes = bc.predict(state.discriminator, samples, bc.PER_SAMPLE)
        labels = np.where(votes == 1, state.selected_label.class_index, predicted)
    return mahalanobis.score_batch(model, stats, samples, labels)


Monitor = Callable[[StreamState], dict]


def run_stream(batches, model: nn.MlpModel, stats, cfg: LoopConfig, monitor: Monitor | None = None):
    """Consume every batch in order; return (trace, final state).

    Each trace record carries iteration, selected label, history size and
    threshold; ``monitor`` (supplied by the evaluation harness, which owns
    the truth tags) adds auroc, aupr and disc_accuracy.
    """
    batches = list(batches)
    if not batches:
        raise ValueError("run_stream needs at least one batch")
    state = StreamState(config=cfg)
    trace = []
    for batch in batches:
        consume_batch(state, batch, model, stats)
        record = {
            "iteration": state.iteration,
            "auroc": None,
            "aupr": None,
            "disc_accuracy": None,
            "selected_label": state.selected_label.class_index,
            "n_history": state.n_history,
            "threshold": threshold(state),
        }
        if monitor is not None:
            record.update(monitor(state))
        trace.append(record)
    return trace, state


def write_trace(trace, path) -> None:
    with open(path, "w") as fh:
        for record in trace:
            fh.write(json.dumps(record, allow_nan=False) + "\n")
