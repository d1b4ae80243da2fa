"""Command-line entry point: ``gradova <command> ...``.

Commands
--------
gen-data   --spec FILE --out DIR   write train/test CSVs for a dataset spec
train-idd  --config FILE           train the IDD classifier (model.json)
fit-stats  --config FILE           fit gradient statistics (stats.json)
stream     --config FILE           run the loop on the scenario stream
run        --config FILE           all of the above plus held-out reports
one-class  --config FILE           the K+1 one-class experiment
ablation   {a,b,c,d} --config FILE paired ablation runs

Every command that takes ``--config`` writes ``manifest.json`` with the
fully resolved config and derived seeds into its output directory;
``gradova run --config manifest.json`` repeats the run bit-exactly.

Exit codes: 0 success, 2 configuration error or missing prerequisite,
3 I/O failure, 4 numeric failure (non-finite training loss).
"""

from __future__ import annotations

import argparse
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from gradova import __version__
from gradova import config as config_mod
from gradova import data, evaluation, loop, mahalanobis, nn

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


class Missing(Exception):
    """A prerequisite artifact is absent."""


def default_config_path() -> Path:
    return Path(str(resources.files("gradova") / "configs" / "default.json"))


def _load_config(args) -> config_mod.ExperimentConfig:
    path = args.config or default_config_path()
    try:
        cfg = config_mod.load(path)
    except FileNotFoundError:
        raise config_mod.ConfigError(f"config: file not found: {path}") from None
    if getattr(args, "out", None):
        doc = cfg.to_dict()
        doc["eval"]["out_dir"] = args.out
        cfg = config_mod.resolve(doc)
    return cfg


def _out_dir(cfg: config_mod.ExperimentConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(cfg: config_mod.ExperimentConfig, command: str) -> Path:
    out = _out_dir(cfg)
    doc = cfg.to_dict()
    doc["manifest"] = {"command": command, "version": __version__}
    evaluation.write_json(doc, out / "manifest.json")
    return out


def _say(msg: str) -> None:
    print(msg, flush=True)


# -- commands ---------------------------------------------------------------


def cmd_gen_data(args) -> int:
    try:
        text = Path(args.spec).read_text()
    except FileNotFoundError:
        raise config_mod.ConfigError(f"spec: file not found: {args.spec}") from None
    doc = config_mod.parse_json(text, "spec")
    if not isinstance(doc, dict):
        raise config_mod.ConfigError("spec: top level must be a JSON object")
    try:
        spec = data.DatasetSpec.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise config_mod.ConfigError(str(exc)) from None
    dataset = data.generate(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_idx, test_idx = [], []
    for c in np.unique(dataset.labels[~dataset.is_ood]):
        idx = np.flatnonzero((dataset.labels == c) & ~dataset.is_ood)
        half = (len(idx) + 1) // 2
        train_idx.append(idx[:half])
        test_idx.append(idx[half:])
    test_idx.append(np.flatnonzero(dataset.is_ood))
    data.write_csv(out / "train.csv", dataset.subset(np.concatenate(train_idx)))
    data.write_csv(out / "test.csv", dataset.subset(np.concatenate(test_idx)))
    manifest = {"spec": spec.to_dict(), "seed": spec.seed, "files": ["train.csv", "test.csv"],
                "manifest": {"command": "gen-data", "version": __version__}}
    evaluation.write_json(manifest, out / "manifest.json")
    _say(f"wrote {out / 'train.csv'} and {out / 'test.csv'}")
    return 0


def _train_idd(cfg, out: Path):
    scenario = evaluation.build_scenario(cfg)
    model = evaluation.train_classifier(cfg, scenario.train)
    nn.save_model(model, out / "model.json", {"seeds": cfg.seeds})
    acc = nn.accuracy(model, scenario.train.features, scenario.train.labels)
    _say(f"classifier trained: train accuracy {acc:.4f}")
    return scenario, model


def _fit_stats(cfg, out: Path, scenario=None, model=None):
    if model is None:
        path = out / "model.json"
        if not path.exists():
            raise Missing(f"missing classifier: {path} not found (run train-idd first)")
        model = nn.load_model(path)
        scenario = evaluation.build_scenario(cfg)
    stats = evaluation.fit_statistics(cfg, model, scenario.train)
    mahalanobis.save_stats(stats, out / "stats.json", {"include_bias": cfg.include_bias,
                                                        "epsilon_scale": cfg.epsilon_scale})
    _say(f"statistics fitted: dimension {stats.dimension}, counts {list(stats.per_class_counts)}")
    return scenario, model, stats


def _load_prepared(cfg, out: Path) -> evaluation.Prepared:
    stats_path, model_path = out / "stats.json", out / "model.json"
    if not stats_path.exists():
        raise Missing(f"missing statistics: {stats_path} not found (run fit-stats first)")
    if not model_path.exists():
        raise Missing(f"missing classifier: {model_path} not found (run train-idd first)")
    return evaluation.Prepared(cfg, evaluation.build_scenario(cfg), nn.load_model(model_path),
                               mahalanobis.load_stats(stats_path))


def _emit_run(result: evaluation.RunResult, out: Path, prefix: str = "") -> None:
    loop.write_trace(result.trace, out / f"{prefix}trace.ndjson")
    evaluation.write_plot_csv(result.trace, out / f"{prefix}trace.csv")
    evaluation.write_json(result.to_dict(), out / f"{prefix}report.json")
    rows = [result.per_sample.to_dict()] + [r.to_dict() for r in result.pure_batch]
    table = evaluation.format_table(rows, ("batch_mode", "auroc", "aupr", "n_positive", "n_negative"))
    (out / f"{prefix}report.txt").write_text(table)


def _stream(cfg, out: Path, prep: evaluation.Prepared) -> evaluation.RunResult:
    result = evaluation.run_loop(prep, batch_sizes=cfg.batch_sizes)
    _emit_run(result, out)
    _say(f"first AUROC {result.first_auroc:.4f}  final AUROC {result.final_auroc:.4f}  "
         f"test AUROC {result.per_sample.auroc:.4f}")
    return result


def cmd_train_idd(args) -> int:
    cfg = _load_config(args)
    out = _write_manifest(cfg, "train-idd")
    _train_idd(cfg, out)
    return 0


def cmd_fit_stats(args) -> int:
    cfg = _load_config(args)
    out = _write_manifest(cfg, "fit-stats")
    _fit_stats(cfg, out)
    return 0


def cmd_stream(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(cfg)
    prep = _load_prepared(cfg, out)
    _write_manifest(cfg, "stream")
    _stream(cfg, out, prep)
    return 0


def cmd_run(args) -> int:
    cfg = _load_config(args)
    out = _write_manifest(cfg, "run")
    scenario, model = _train_idd(cfg, out)
    scenario, model, stats = _fit_stats(cfg, out, scenario, model)
    _stream(cfg, out, evaluation.Prepared(cfg, scenario, model, stats))
    if cfg.n_runs > 1:
        sweep = evaluation.run_many(cfg)
        evaluation.write_json(sweep, out / "runs.json")
        s = sweep["summary"]["final_auroc"]
        _say(f"{cfg.n_runs} runs: final AUROC {s['mean']:.4f} +/- {s['std']:.4f}")
    return 0


def cmd_one_class(args) -> int:
    cfg = _load_config(args)
    out = _write_manifest(cfg, "one-class")
    prep = evaluation.prepare(cfg)
    reports = [evaluation.one_class_experiment(cfg, b, cfg.one_class_ood_stream, prep)
               for b in cfg.one_class_budgets]
    evaluation.write_json([r.to_dict() for r in reports], out / "one_class.json")
    k = cfg.dataset.class_count
    columns = ("memory_budget", *[f"class_{c}" for c in range(k + 1)])
    rows = [{"memory_budget": r.memory_budget,
             **{f"class_{c}": a for c, a in r.per_class_single_head_accuracy.items()}} for r in reports]
    table = evaluation.format_table(rows, columns)
    (out / "one_class.txt").write_text(table)
    _say(table.rstrip())
    return 0


def cmd_ablation(args) -> int:
    cfg = _load_config(args)
    out = _write_manifest(cfg, f"ablation {args.letter}")
    arms = evaluation.run_ablation(cfg, args.letter)
    for i, (name, result) in enumerate(arms.items()):
        loop.write_trace(result.trace, out / f"ablation_{args.letter}_arm{i}.ndjson")
    evaluation.write_paired_csv(arms, out / f"ablation_{args.letter}.csv")
    summary = {name: {"first_auroc": r.first_auroc, "final_auroc": r.final_auroc,
                      "test_auroc": r.per_sample.auroc, "trace_file": f"ablation_{args.letter}_arm{i}.ndjson"}
               for i, (name, r) in enumerate(arms.items())}
    evaluation.write_json({"ablation": args.letter, "seed": cfg.seed, "arms": summary},
                          out / f"ablation_{args.letter}.json")
    rows = [{"arm": n, **s} for n, s in summary.items()]
    table = evaluation.format_table(rows, ("arm", "first_auroc", "final_auroc", "test_auroc"))
    (out / f"ablation_{args.letter}.txt").write_text(table)
    _say(table.rstrip())
    return 0


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gradova", description="Gradient-based OOD detection with a "
                                     "self-trained discriminator.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a dataset and write CSVs")
    p.add_argument("--spec", required=True, help="dataset spec JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_data)

    for name, func, text in (
        ("run", cmd_run, "train, fit, stream and report"),
        ("train-idd", cmd_train_idd, "train the IDD classifier"),
        ("fit-stats", cmd_fit_stats, "fit gradient statistics"),
        ("stream", cmd_stream, "run the detection loop"),
        ("one-class", cmd_one_class, "one-class experiment"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="experiment config JSON (default: bundled)")
        p.add_argument("--out", help="override eval.out_dir")
        p.set_defaults(func=func)

    p = sub.add_parser("ablation", help="paired ablation runs")
    p.add_argument("letter", choices=("a", "b", "c", "d"))
    p.add_argument("--config", help="experiment config JSON (default: bundled)")
    p.add_argument("--out", help="override eval.out_dir")
    p.set_defaults(func=cmd_ablation)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except config_mod.ConfigError as exc:
        print(f"gradova: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Missing as exc:
        print(f"gradova: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except nn.NumericError as exc:
        print(f"gradova: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, data.DataFormatError) as exc:
        print(f"gradova: I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
