"""Experiment harness: scenarios, stream monitoring, pure-batch evaluation,
ablations, the one-class experiment and report writers.

This is the only module that reads truth tags. The loop receives bare
sample arrays; the monitor built here closes over the tags and turns loop
state into metrics.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from gradova import binary_classifier as bc
from gradova import config as config_mod
from gradova import data, gradients, loop, mahalanobis, metrics, nn
from gradova.rng import Xoshiro256pp

auroc = metrics.auroc
aupr = metrics.aupr


@dataclass
class MetricReport:
    auroc: float
    aupr: float
    n_positive: int
    n_negative: int
    batch_mode: str = "per_sample"

    def __post_init__(self):
        if self.n_positive < 1 or self.n_negative < 1:
            raise ValueError("a report needs at least one sample of each kind")
        if not (np.isfinite(self.auroc) and np.isfinite(self.aupr)):
            raise ValueError("metrics must be finite")

    @classmethod
    def from_scores(cls, scores, truth, batch_mode: str = "per_sample") -> "MetricReport":
        truth = np.asarray(truth, dtype=bool)
        return cls(auroc(scores, truth), aupr(scores, truth), int(truth.sum()), int((~truth).sum()), batch_mode)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class OneClassReport:
    per_class_single_head_accuracy: dict
    memory_budget: int
    ood_stream_size: int

    def __post_init__(self):
        for value in self.per_class_single_head_accuracy.values():
            if not 0.0 <= value <= 1.0:
                raise ValueError("accuracies must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "per_class_single_head_accuracy": {str(k): v for k, v in self.per_class_single_head_accuracy.items()},
            "memory_budget": self.memory_budget,
            "ood_stream_size": self.ood_stream_size,
        }


# -- scenario ---------------------------------------------------------------


@dataclass
class Scenario:
    """Everything one run needs; ``stream_truth`` and ``test`` tags are for scoring only."""

    train: data.Dataset
    stream_batches: list
    stream_truth: np.ndarray
    test: data.Dataset


def _class_block(labels: np.ndarray, c: int, start: int, count: int) -> np.ndarray:
    idx = np.flatnonzero(labels == c)
    if start + count > len(idx):
        raise ValueError(f"class {c} has {len(idx)} samples, split needs {start + count}")
    return idx[start:start + count]


def split_dataset(dataset: data.Dataset, scenario: config_mod.Scenario, class_count: int):
    """Return (train, stream IDD, test IDD, stream OOD, test OOD) index arrays."""
    labels = dataset.labels
    s = scenario
    train = np.concatenate([_class_block(labels, c, 0, s.train_per_class) for c in range(class_count)])
    stream = np.concatenate([_class_block(labels, c, s.train_per_class, s.stream_per_class)
                             for c in range(class_count)])
    test = np.concatenate([_class_block(labels, c, s.train_per_class + s.stream_per_class, s.test_per_class)
                           for c in range(class_count)])
    ood = np.flatnonzero(dataset.is_ood)
    if s.ood_stream + s.ood_test > len(ood):
        raise ValueError(f"{len(ood)} OOD samples available, split needs {s.ood_stream + s.ood_test}")
    return train, stream, test, ood[:s.ood_stream], ood[s.ood_stream:s.ood_stream + s.ood_test]


def make_batches(idd: np.ndarray, ood: np.ndarray, size_in: int, size_ood: int, seed: int):
    """Mixed batches of ``size_in`` IDD + ``size_ood`` OOD rows, shuffled within each batch.

    Both sources are consumed in order; the batch count is limited by the
    scarcer one. Returns (batches, truth) with truth True for OOD rows.
    """
    n = min(len(idd) // size_in, len(ood) // size_ood)
    if n < 1:
        raise ValueError("not enough samples for a single batch")
    stream = Xoshiro256pp(seed)
    batches, truth = [], []
    for i in range(n):
        x = np.concatenate([idd[i * size_in:(i + 1) * size_in], ood[i * size_ood:(i + 1) * size_ood]])
        t = np.r_[np.zeros(size_in, dtype=bool), np.ones(size_ood, dtype=bool)]
        perm = stream.permutation(len(x))
        batches.append(x[perm])
        truth.append(t[perm])
    return batches, np.concatenate(truth)


def build_scenario(cfg: config_mod.ExperimentConfig) -> Scenario:
    dataset = data.generate(cfg.dataset)
    train, stream, test, ood_stream, ood_test = split_dataset(dataset, cfg.scenario, cfg.dataset.class_count)
    order = Xoshiro256pp(cfg.seeds["stream_order"]).permutation(len(stream))
    batches, truth = make_batches(dataset.features[stream[order]], dataset.features[ood_stream],
                                  cfg.loop.batch_size_in, cfg.loop.batch_size_ood, cfg.seeds["stream_order"])
    return Scenario(
        train=dataset.subset(train),
        stream_batches=batches,
        stream_truth=truth,
        test=dataset.subset(np.concatenate([test, ood_test])),
    )


def train_classifier(cfg: config_mod.ExperimentConfig, train: data.Dataset) -> nn.MlpModel:
    model = nn.classifier(train.features.shape[1], cfg.dataset.class_count, cfg.model_hidden,
                          seed=cfg.seeds["classifier_init"])
    model, _ = nn.train(model, train.features, train.labels, cfg.model_train)
    return model


def fit_statistics(cfg: config_mod.ExperimentConfig, model: nn.MlpModel, train: data.Dataset):
    return mahalanobis.fit(model, train.features, train.labels, cfg.include_bias, cfg.epsilon_scale)


# -- monitoring -------------------------------------------------------------


def make_monitor(stream_truth, test: data.Dataset | None = None):
    """Monitor for ``loop.run_stream``: AUROC/AUPR over the history and,
    when a tagged test set is given, per-sample discriminator accuracy on it."""
    stream_truth = np.asarray(stream_truth, dtype=bool)

    def monitor(state: loop.StreamState) -> dict:
        truth = stream_truth[:state.n_history]
        record = {"auroc": None, "aupr": None, "disc_accuracy": None}
        if truth.any() and not truth.all():
            record["auroc"] = auroc(state.scores, truth)
            record["aupr"] = aupr(state.scores, truth)
        if test is not None and state.discriminator is not None and len(test):
            votes = bc.predict(state.discriminator, test.features, bc.PER_SAMPLE)
            record["disc_accuracy"] = float(np.mean(votes.astype(bool) == test.is_ood))
        return record

    return monitor


# -- held-out evaluation ----------------------------------------------------


def _route_and_score(state: loop.StreamState, model, stats, samples, votes) -> np.ndarray:
    labels = gradients.predicted_labels(model, samples)
    if state.selected_label is not None and votes is not None:
        labels = np.where(votes == 1, state.selected_label.class_index, labels)
    return mahalanobis.score_batch(model, stats, samples, labels)


def evaluate_per_sample(state: loop.StreamState, model, stats, test: data.Dataset) -> MetricReport:
    scores = loop.score_new(state, test.features, model, stats)
    return MetricReport.from_scores(scores, test.is_ood, "per_sample")


def evaluate_pure_batch(disc: bc.Discriminator | None, state: loop.StreamState, model, stats,
                        test: data.Dataset, batch_size: int, seed: int = 0,
                        aggregation: str = "mean") -> MetricReport:
    """Score the test set in batches that are all-IDD or all-OOD.

    Each side is shuffled with its own stream (``seed`` for IDD, ``seed + 1``
    for OOD) and cut into ``batch_size`` chunks; the remainder is dropped.
    One discriminator vote per batch picks the label used to score every
    member.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    scores, truth = [], []
    for offset, tag in ((0, False), (1, True)):
        idx = np.flatnonzero(test.is_ood == tag)
        n_batches = len(idx) // batch_size
        if n_batches == 0:
            raise ValueError(f"{len(idx)} {'OOD' if tag else 'IDD'} test samples, batch size {batch_size}")
        idx = idx[Xoshiro256pp(seed + offset).permutation(len(idx))]
        for b in range(n_batches):
            x = test.features[idx[b * batch_size:(b + 1) * batch_size]]
            votes = None if disc is None else bc.predict(disc, x, bc.PURE_BATCH, aggregation)
            scores.append(_route_and_score(state, model, stats, x, votes))
            truth.append(np.full(len(x), tag))
    return MetricReport.from_scores(np.concatenate(scores), np.concatenate(truth), f"pure_batch({batch_size})")


# -- experiment drivers -----------------------------------------------------


@dataclass
class RunResult:
    seed: int
    trace: list
    per_sample: MetricReport
    pure_batch: list = field(default_factory=list)
    selected_label: int | None = None

    @property
    def final_auroc(self) -> float:
        return self.trace[-1]["auroc"]

    @property
    def first_auroc(self) -> float:
        return self.trace[0]["auroc"]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "selected_label": self.selected_label,
            "first_auroc": self.first_auroc,
            "final_auroc": self.final_auroc,
            "per_sample": self.per_sample.to_dict(),
            "pure_batch": [r.to_dict() for r in self.pure_batch],
            "trace": self.trace,
        }


@dataclass
class Prepared:
    """A scenario with its trained classifier and fitted statistics."""

    cfg: config_mod.ExperimentConfig
    scenario: Scenario
    model: nn.MlpModel
    stats: mahalanobis.GradientStatistics


def prepare(cfg: config_mod.ExperimentConfig) -> Prepared:
    scenario = build_scenario(cfg)
    model = train_classifier(cfg, scenario.train)
    return Prepared(cfg, scenario, model, fit_statistics(cfg, model, scenario.train))


def run_loop(prep: Prepared, loop_cfg: loop.LoopConfig | None = None, batch_sizes=()) -> RunResult:
    cfg = prep.cfg
    loop_cfg = loop_cfg or cfg.loop
    sc = prep.scenario
    monitor = make_monitor(sc.stream_truth, sc.test)
    trace, state = loop.run_stream(sc.stream_batches, prep.model, prep.stats, loop_cfg, monitor)
    per_sample = evaluate_per_sample(state, prep.model, prep.stats, sc.test)
    disc = None if loop_cfg.ablations.disable_discriminator else state.discriminator
    pure = [evaluate_pure_batch(disc, state, prep.model, prep.stats, sc.test, b, cfg.seeds["pure_batch"],
                                loop_cfg.discriminator.aggregation) for b in batch_sizes]
    return RunResult(cfg.seed, trace, per_sample, pure, state.selected_label.class_index)


def run_experiment(cfg: config_mod.ExperimentConfig) -> RunResult:
    return run_loop(prepare(cfg), batch_sizes=cfg.batch_sizes)


ABLATIONS = {
    "a": ("disable_discriminator", "without discriminator"),
    "b": ("random_pseudo_labels", "random pseudo labels"),
    "d": ("no_reinit", "no re-initialization"),
}
SELECTION_FRACTIONS = (0.25, 0.5, 1.0)


def run_ablation(cfg: config_mod.ExperimentConfig, letter: str, prep: Prepared | None = None) -> dict:
    """Paired runs on one prepared scenario; returns {arm name: RunResult}.

    ``a``, ``b`` and ``d`` pair the normal loop with one flag switched on;
    ``c`` sweeps the selection fraction.
    """
    prep = prep or prepare(cfg)
    base = cfg.loop
    if letter == "c":
        return {f"fraction={f}": run_loop(prep, replace(base, selection_fraction=f)) for f in SELECTION_FRACTIONS}
    if letter not in ABLATIONS:
        raise ValueError(f"unknown ablation {letter!r}")
    flag, name = ABLATIONS[letter]
    ablated = replace(base, ablations=replace(base.ablations, **{flag: True}))
    return {"normal": run_loop(prep, base), name: run_loop(prep, ablated)}


def _run_one(doc: dict) -> dict:
    return run_experiment(config_mod.resolve(doc)).to_dict()


def thread_cap() -> int:
    """Worker count for independent runs, from GRADOVA_THREADS (default 1)."""
    raw = os.environ.get("GRADOVA_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def run_many(cfg: config_mod.ExperimentConfig) -> dict:
    """``n_runs`` seeded repetitions with mean and sample standard deviation.

    Runs are independent; up to ``thread_cap()`` execute in parallel and
    results are merged in run order, so the output does not depend on it.
    """
    docs = [cfg.for_run(i).to_dict() for i in range(cfg.n_runs)]
    workers = min(thread_cap(), len(docs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(_run_one, docs))
    else:
        runs = [_run_one(d) for d in docs]
    summary = {}
    for key in ("final_auroc", "first_auroc"):
        values = np.array([r[key] for r in runs], dtype=np.float64)
        summary[key] = {"mean": float(values.mean()),
                        "std": float(values.std(ddof=1)) if len(values) > 1 else 0.0}
    for metric in ("auroc", "aupr"):
        values = np.array([r["per_sample"][metric] for r in runs])
        summary[f"test_{metric}"] = {"mean": float(values.mean()),
                                     "std": float(values.std(ddof=1)) if len(values) > 1 else 0.0}
    return {"runs": runs, "summary": summary}


# -- one-class experiment ---------------------------------------------------


def one_class_experiment(cfg: config_mod.ExperimentConfig, memory_budget: int, ood_stream: int,
                         prep: Prepared | None = None) -> OneClassReport:
    """K known classes plus one class learned only through the detector.

    The loop sees ``memory_budget`` IDD stream samples (balanced over the K
    classes) against ``ood_stream`` samples of the extra class, in as many
    batches as the OOD side fills. Test samples the final threshold flags
    go to class K; the rest take the classifier's argmax.
    """
    k = cfg.dataset.class_count
    if memory_budget < cfg.loop.batch_size_in:
        raise ValueError(f"memory budget {memory_budget} is below one loop batch ({cfg.loop.batch_size_in})")
    if memory_budget % k:
        raise ValueError(f"memory budget {memory_budget} is not divisible by {k} classes")
    prep = prep or prepare(cfg)
    dataset = data.generate(cfg.dataset)
    _, stream, _, ood_idx, _ = split_dataset(dataset, replace(cfg.scenario, ood_stream=ood_stream, ood_test=0), k)
    per_class = memory_budget // k
    if per_class > cfg.scenario.stream_per_class:
        raise ValueError(f"memory budget needs {per_class} stream samples per class")
    idd = np.concatenate([stream[c * cfg.scenario.stream_per_class:][:per_class] for c in range(k)])
    idd = idd[Xoshiro256pp(cfg.seeds["stream_order"]).permutation(len(idd))]
    n_batches = ood_stream // cfg.loop.batch_size_ood
    if n_batches < 1:
        raise ValueError("OOD stream is shorter than one loop batch")
    batches = [np.concatenate(parts) for parts in zip(
        np.array_split(dataset.features[idd], n_batches),
        np.array_split(dataset.features[ood_idx[:n_batches * cfg.loop.batch_size_ood]], n_batches),
    )]
    _, state = loop.run_stream(batches, prep.model, prep.stats, cfg.loop)
    test = prep.scenario.test
    scores = loop.score_new(state, test.features, prep.model, prep.stats)
    flagged = scores > loop.threshold(state)
    predicted = np.where(flagged, k, gradients.predicted_labels(prep.model, test.features))
    truth = np.where(test.is_ood, k, test.labels)
    accuracy = {int(c): float(np.mean(predicted[truth == c] == c)) for c in range(k + 1)}
    return OneClassReport(accuracy, memory_budget, ood_stream)


# -- report writers ---------------------------------------------------------


def write_json(doc, path) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, allow_nan=False) + "\n")


def format_table(rows, columns) -> str:
    """Aligned plain-text table; floats are shown with 4 decimals."""
    def cell(v):
        if v is None:
            return "-"
        return f"{v:.4f}" if isinstance(v, float) else str(v)

    body = [[cell(row.get(c)) for c in columns] for row in rows]
    widths = [max(len(c), *(len(r[i]) for r in body)) if body else len(c) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in body]
    return "\n".join(lines) + "\n"


TRACE_COLUMNS = ("iteration", "auroc", "aupr", "disc_accuracy", "selected_label", "n_history", "threshold")


def write_plot_csv(trace, path, columns=TRACE_COLUMNS) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for record in trace:
            writer.writerow(["" if record.get(c) is None else repr(record[c]) for c in columns])


def write_paired_csv(arms: dict, path) -> None:
    """One row per iteration, one AUROC column per arm."""
    names = list(arms)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iteration", *names])
        length = max(len(arms[n].trace) for n in names)
        for i in range(length):
            row = [i + 1]
            for n in names:
                trace = arms[n].trace
                row.append(repr(trace[i]["auroc"]) if i < len(trace) else "")
            writer.writerow(row)
