"""Experiment configuration: JSON schema, validation and seed derivation.

A config document has these top-level keys (all optional, defaults below):

``seed``      root seed; every other seed is derived from it.
``dataset``   generator spec (see ``gradova.data.DatasetSpec``); its ``seed``
              field is overwritten by the derived data seed.
``scenario``  how generated samples are split: per IDD class
              ``train_per_class`` / ``stream_per_class`` / ``test_per_class``
              (taken in that order), OOD ``ood_stream`` then ``ood_test``.
``model``     classifier ``hidden`` widths and ``train`` (TrainConfig fields).
``stats``     ``include_bias`` and ``epsilon_scale`` for the gradient fit.
``loop``      batch sizes, ``selection_fraction``, ``threshold_policy``
              (``"tpr95"`` or a number), ``ablations`` flags and the
              ``discriminator`` block (``hidden``, ``train``, ``aggregation``,
              ``batch_stats_at_inference``).
``eval``      ``n_runs``, pure-batch ``batch_sizes``, ``out_dir`` and the
              ``one_class`` block (``budgets``, ``ood_stream``).

Seed derivation, child = (root + offset) mod 2**64:

====================  ======
component             offset
====================  ======
data generator        0
classifier init       1
classifier shuffle    2
stream order          3
pure-batch partition  4
loop / discriminator  100 (generation g trains with loop seed + g)
====================  ======

Run ``i`` of an ``n_runs`` sweep uses root ``seed + 1000 * i``.
"""

from __future__ import annotations

import copy
import json
import re
from dataclasses import dataclass, fields
from pathlib import Path

from gradova import binary_classifier as bc
from gradova import data, loop, nn
from gradova.rng import derive_seed

SEED_OFFSETS = {
    "data": 0,
    "classifier_init": 1,
    "classifier_shuffle": 2,
    "stream_order": 3,
    "pure_batch": 4,
    "loop": 100,
}
RUN_STRIDE = 1000

DEFAULTS = {
    "seed": 0,
    "dataset": {
        "kind": "blobs",
        "class_count": 4,
        "dim": 8,
        "samples_per_class": 600,
        "separation": 5.0,
        "ood": {"class_count": 1, "samples_per_class": 1400, "fraction": 3.0},
    },
    "scenario": {
        "train_per_class": 250,
        "stream_per_class": 250,
        "test_per_class": 100,
        "ood_stream": 1000,
        "ood_test": 400,
    },
    "model": {"hidden": [64, 16], "train": {"epochs": 10}},
    "stats": {"include_bias": False, "epsilon_scale": 1e-6},
    "loop": {
        "batch_size_in": 100,
        "batch_size_ood": 100,
        "selection_fraction": 0.5,
        "threshold_policy": "tpr95",
        "ablations": {},
        "discriminator": {"hidden": [32, 16], "train": {}, "aggregation": "mean",
                          "batch_stats_at_inference": False},
    },
    "eval": {
        "n_runs": 1,
        "batch_sizes": [8, 32, 128],
        "out_dir": "runs/default",
        "one_class": {"budgets": [500, 1000], "ood_stream": 1000},
    },
}


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending key."""


def _merge(base: dict, override: dict, path: str) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"{where}: unknown key")
        if where == "dataset":
            # fields are checked by DatasetSpec, which also knows the file kinds
            if not isinstance(value, dict):
                raise ConfigError("dataset: expected an object")
            out[key] = {**copy.deepcopy(base[key]), **copy.deepcopy(value)}
        elif key == "train":
            # field names are checked by TrainConfig
            if not isinstance(value, dict):
                raise ConfigError(f"{where}: expected an object")
            out[key] = {**base[key], **value}
        elif isinstance(base[key], dict) and base[key] and key != "ood":
            if not isinstance(value, dict):
                raise ConfigError(f"{where}: expected an object")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = copy.deepcopy(value)
    return out


def _dataclass_from(cls, doc, where: str, **fixed):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in fields(cls)}
    for key in doc:
        if key not in names or key in fixed:
            raise ConfigError(f"{where}.{key}: unknown key")
    try:
        return cls(**doc, **fixed)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass
class Scenario:
    train_per_class: int
    stream_per_class: int
    test_per_class: int
    ood_stream: int
    ood_test: int


@dataclass
class ExperimentConfig:
    """Fully resolved experiment settings plus the derived seeds."""

    raw: dict
    seed: int
    seeds: dict
    dataset: data.DatasetSpec
    scenario: Scenario
    model_hidden: tuple[int, ...]
    model_train: nn.TrainConfig
    include_bias: bool
    epsilon_scale: float
    loop: loop.LoopConfig
    n_runs: int
    batch_sizes: tuple[int, ...]
    out_dir: str
    one_class_budgets: tuple[int, ...]
    one_class_ood_stream: int

    def to_dict(self) -> dict:
        """The resolved document; feeding it back reproduces this config."""
        return copy.deepcopy(self.raw)

    def for_run(self, index: int) -> "ExperimentConfig":
        doc = self.to_dict()
        doc["seed"] = self.seed + RUN_STRIDE * index
        return resolve(doc)


def derived_seeds(root: int) -> dict:
    return {name: derive_seed(root, off) for name, off in SEED_OFFSETS.items()}


def _positive(value, where: str) -> int:
    if not isinstance(value, int) or isinstance(value, bool) or value < 1:
        raise ConfigError(f"{where}: must be a positive integer")
    return value


def _explicit(obj) -> dict:
    """Dataclass fields as a dict, minus derived seeds, for the resolved document."""
    return {f.name: getattr(obj, f.name) for f in fields(obj) if f.name != "rng_seed"}


def resolve(doc: dict) -> ExperimentConfig:
    """Merge ``doc`` over the defaults and validate every block."""
    if not isinstance(doc, dict):
        raise ConfigError("config: top level must be a JSON object")
    doc = {k: v for k, v in doc.items() if k not in ("seeds", "manifest")}
    if isinstance(doc.get("dataset"), dict):
        doc["dataset"] = {k: v for k, v in doc["dataset"].items() if k != "seed"}
    raw = _merge(DEFAULTS, doc, "")
    seed = raw["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed: must be a non-negative integer")
    seeds = derived_seeds(seed)

    ds_doc = dict(raw["dataset"], seed=seeds["data"])
    raw["dataset"] = ds_doc
    try:
        dataset = data.DatasetSpec.from_dict(ds_doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"dataset.{exc}") from None

    scenario = _dataclass_from(Scenario, raw["scenario"], "scenario")
    for f in fields(Scenario):
        value = getattr(scenario, f.name)
        if not isinstance(value, int) or value < 0:
            raise ConfigError(f"scenario.{f.name}: must be a non-negative integer")
    if dataset.kind in ("blobs", "rings"):
        per_class = scenario.train_per_class + scenario.stream_per_class + scenario.test_per_class
        if per_class > dataset.samples_per_class:
            raise ConfigError("scenario.train_per_class: split exceeds dataset.samples_per_class")
        ood_total = 0 if dataset.ood is None else dataset.ood.samples_per_class * dataset.ood.class_count
        if scenario.ood_stream + scenario.ood_test > ood_total:
            raise ConfigError("scenario.ood_stream: split exceeds the generated OOD samples")

    model = raw["model"]
    hidden = tuple(_positive(h, "model.hidden") for h in model["hidden"])
    model_train = _dataclass_from(nn.TrainConfig, model["train"], "model.train", rng_seed=seeds["classifier_shuffle"])
    model["train"] = _explicit(model_train)

    stats = raw["stats"]
    if not isinstance(stats["include_bias"], bool):
        raise ConfigError("stats.include_bias: must be true or false")
    if not isinstance(stats["epsilon_scale"], (int, float)) or not stats["epsilon_scale"] > 0:
        raise ConfigError("stats.epsilon_scale: must be > 0")

    lp = raw["loop"]
    disc = lp["discriminator"]
    if not isinstance(disc["batch_stats_at_inference"], bool):
        raise ConfigError("loop.discriminator.batch_stats_at_inference: must be true or false")
    if disc["aggregation"] not in ("mean", "majority"):
        raise ConfigError("loop.discriminator.aggregation: must be 'mean' or 'majority'")
    disc_cfg = bc.DiscriminatorConfig(
        hidden=tuple(_positive(h, "loop.discriminator.hidden") for h in disc["hidden"]),
        train=_dataclass_from(nn.TrainConfig, disc["train"], "loop.discriminator.train", rng_seed=seeds["loop"]),
        aggregation=disc["aggregation"],
        batch_stats_at_inference=disc["batch_stats_at_inference"],
    )
    disc["train"] = _explicit(disc_cfg.train)
    ablations = _dataclass_from(loop.Ablations, lp["ablations"], "loop.ablations")
    lp["ablations"] = _explicit(ablations)
    policy = lp["threshold_policy"]
    if not (policy == "tpr95" or (isinstance(policy, (int, float)) and not isinstance(policy, bool))):
        raise ConfigError("loop.threshold_policy: must be 'tpr95' or a number")
    batch_size_in = _positive(lp["batch_size_in"], "loop.batch_size_in")
    batch_size_ood = _positive(lp["batch_size_ood"], "loop.batch_size_ood")
    try:
        loop_cfg = loop.LoopConfig(
            batch_size_in=batch_size_in,
            batch_size_ood=batch_size_ood,
            selection_fraction=lp["selection_fraction"],
            discriminator=disc_cfg,
            threshold_policy=policy,
            ablations=ablations,
            seed=seeds["loop"],
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"loop.selection_fraction: {exc}") from None

    ev = raw["eval"]
    n_runs = _positive(ev["n_runs"], "eval.n_runs")
    batch_sizes = tuple(_positive(b, "eval.batch_sizes") for b in ev["batch_sizes"])
    if not isinstance(ev["out_dir"], str) or not ev["out_dir"]:
        raise ConfigError("eval.out_dir: must be a non-empty path")
    oc = ev["one_class"]
    budgets = tuple(_positive(b, "eval.one_class.budgets") for b in oc["budgets"])
    ood_stream = _positive(oc["ood_stream"], "eval.one_class.ood_stream")

    raw["seeds"] = seeds
    return ExperimentConfig(
        raw=raw, seed=seed, seeds=seeds, dataset=dataset, scenario=scenario,
        model_hidden=hidden, model_train=model_train,
        include_bias=stats["include_bias"], epsilon_scale=float(stats["epsilon_scale"]),
        loop=loop_cfg, n_runs=n_runs, batch_sizes=batch_sizes, out_dir=ev["out_dir"],
        one_class_budgets=budgets, one_class_ood_stream=ood_stream,
    )


_KEY = re.compile(r'"((?:[^"\\]|\\.)*)"\s*:')


def parse_json(text: str, what: str):
    """``json.loads`` whose errors name the last key read before the fault."""
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        keys = _KEY.findall(text[:exc.pos])
        near = f"{keys[-1]}: " if keys else ""
        raise ConfigError(f"{near}malformed JSON in {what} at line {exc.lineno} column {exc.colno}: "
                          f"{exc.msg}") from None


def load(path) -> ExperimentConfig:
    """Read and resolve a JSON config; JSON syntax errors become ConfigError."""
    return resolve(parse_json(Path(path).read_text(), "config"))
