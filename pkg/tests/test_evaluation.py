import copy
import json

import numpy as np
import pytest

from gradova import binary_classifier as bc
from gradova import config, data, evaluation, loop

SMALL = {
    "seed": 3,
    "dataset": {"dim": 8, "samples_per_class": 120, "separation": 6.0,
                "ood": {"class_count": 1, "samples_per_class": 240, "fraction": 3.0}},
    "scenario": {"train_per_class": 50, "stream_per_class": 50, "test_per_class": 20,
                 "ood_stream": 200, "ood_test": 40},
    "model": {"hidden": [16, 8], "train": {"epochs": 60, "learning_rate": 2e-3}},
    "loop": {"batch_size_in": 50, "batch_size_ood": 50,
             "discriminator": {"hidden": [16, 8], "train": {"epochs": 30, "learning_rate": 2e-3}}},
    "eval": {"batch_sizes": [8], "one_class": {"budgets": [100, 200], "ood_stream": 200}},
}


def small(**over):
    doc = copy.deepcopy(SMALL)
    for key, value in over.items():
        doc[key] = value
    return config.resolve(doc)


@pytest.fixture(scope="module")
def prep():
    return evaluation.prepare(small())


@pytest.fixture(scope="module")
def result(prep):
    return evaluation.run_loop(prep, batch_sizes=(1, 8))


class TestReports:
    def test_metric_report_validation(self):
        with pytest.raises(ValueError):
            evaluation.MetricReport(0.5, 0.5, 0, 3)
        with pytest.raises(ValueError):
            evaluation.MetricReport(float("nan"), 0.5, 1, 1)

    def test_one_class_report_validation(self):
        with pytest.raises(ValueError):
            evaluation.OneClassReport({0: 1.2}, 100, 100)

    def test_format_table(self):
        text = evaluation.format_table([{"a": 0.5, "b": "x"}, {"a": None, "b": "long"}], ("a", "b"))
        lines = text.splitlines()
        assert lines[0].split() == ["a", "b"] and "0.5000" in lines[2] and "-" in lines[3]


class TestScenario:
    def test_split_sizes(self, prep):
        sc = prep.scenario
        assert len(sc.train) == 200 and len(sc.stream_batches) == 4
        assert all(len(b) == 100 for b in sc.stream_batches)
        assert sc.stream_truth.sum() == 200
        assert sc.test.is_ood.sum() == 40 and (~sc.test.is_ood).sum() == 80

    def test_batches_shuffled_but_balanced(self):
        idd, ood = np.zeros((6, 1)), np.ones((4, 1))
        batches, truth = evaluation.make_batches(idd, ood, 3, 2, seed=1)
        assert len(batches) == 2
        for b, t in zip(batches, np.split(truth, 2)):
            assert np.array_equal(b[:, 0] == 1, t) and t.sum() == 2
        with pytest.raises(ValueError):
            evaluation.make_batches(idd, ood, 7, 2, seed=1)


class TestPureBatch:
    def test_counts(self, prep, result):
        test = data.Dataset(np.r_[prep.scenario.test.features[:16], prep.scenario.test.features[-16:]],
                            np.r_[np.zeros(16), -np.ones(16)].astype(int), np.r_[np.zeros(16, bool), np.ones(16, bool)])
        state = loop.StreamState(prep.cfg.loop)
        loop.consume_batch(state, prep.scenario.stream_batches[0], prep.model, prep.stats)
        rep = evaluation.evaluate_pure_batch(state.discriminator, state, prep.model, prep.stats, test, 8)
        assert (rep.n_positive, rep.n_negative) == (16, 16) and rep.batch_mode == "pure_batch(8)"
        rep = evaluation.evaluate_pure_batch(state.discriminator, state, prep.model, prep.stats, test, 5)
        assert (rep.n_positive, rep.n_negative) == (15, 15)
        with pytest.raises(ValueError):
            evaluation.evaluate_pure_batch(state.discriminator, state, prep.model, prep.stats, test, 17)

    def test_batch_one_equals_per_sample(self, result):
        one = result.pure_batch[0]
        assert one.batch_mode == "pure_batch(1)"
        assert (one.auroc, one.aupr) == (result.per_sample.auroc, result.per_sample.aupr)

    def test_separated_data(self, result):
        assert result.per_sample.auroc == 1.0
        assert result.pure_batch[1].auroc == 1.0


class TestDrivers:
    def test_run_result(self, result):
        doc = result.to_dict()
        assert len(doc["trace"]) == 4 and doc["first_auroc"] == doc["trace"][0]["auroc"]
        json.dumps(doc, allow_nan=False)
        assert all(0 <= r["disc_accuracy"] <= 1 for r in result.trace)

    def test_run_is_reproducible(self, prep, result):
        again = evaluation.run_loop(evaluation.prepare(small()), batch_sizes=(1, 8))
        assert json.dumps(again.to_dict()) == json.dumps(result.to_dict())

    @pytest.mark.parametrize("letter,arms", [("a", 2), ("b", 2), ("c", 3), ("d", 2)])
    def test_ablation_arms(self, prep, letter, arms):
        out = evaluation.run_ablation(prep.cfg, letter, prep)
        assert len(out) == arms
        for r in out.values():
            assert len(r.trace) == 4
            assert [t["n_history"] for t in r.trace] == [100, 200, 300, 400]
        with pytest.raises(ValueError):
            evaluation.run_ablation(prep.cfg, "e", prep)

    def test_run_many(self, monkeypatch):
        cfg = small(eval={"n_runs": 2, "batch_sizes": []})
        monkeypatch.setenv("GRADOVA_THREADS", "1")
        sweep = evaluation.run_many(cfg)
        finals = [r["final_auroc"] for r in sweep["runs"]]
        assert sweep["summary"]["final_auroc"]["mean"] == pytest.approx(np.mean(finals), abs=1e-15)
        assert sweep["summary"]["final_auroc"]["std"] == pytest.approx(np.std(finals, ddof=1), abs=1e-15)
        assert [r["seed"] for r in sweep["runs"]] == [3, 3 + config.RUN_STRIDE]

    def test_thread_cap(self, monkeypatch):
        monkeypatch.setenv("GRADOVA_THREADS", "bogus")
        assert evaluation.thread_cap() == 1
        monkeypatch.setenv("GRADOVA_THREADS", "3")
        assert evaluation.thread_cap() == 3

    def test_writers(self, result, tmp_path):
        evaluation.write_plot_csv(result.trace, tmp_path / "t.csv")
        rows = (tmp_path / "t.csv").read_text().splitlines()
        assert rows[0].split(",") == list(evaluation.TRACE_COLUMNS) and len(rows) == 5
        evaluation.write_paired_csv({"x": result, "y": result}, tmp_path / "p.csv")
        assert (tmp_path / "p.csv").read_text().splitlines()[0] == "iteration,x,y"


class TestOneClass:
    def test_separated_budgets(self, prep):
        cfg = prep.cfg
        for budget in (100, 200):
            rep = evaluation.one_class_experiment(cfg, budget, 200, prep)
            assert set(rep.per_class_single_head_accuracy) == {0, 1, 2, 3, 4}
            assert min(rep.per_class_single_head_accuracy.values()) >= 0.9

    def test_budget_errors(self, prep):
        with pytest.raises(ValueError):
            evaluation.one_class_experiment(prep.cfg, 40, 200, prep)
        with pytest.raises(ValueError):
            evaluation.one_class_experiment(prep.cfg, 102, 200, prep)

    def test_ood_on_idd_centroid_is_not_learnable(self, tmp_path):
        base = data.generate(small().dataset)
        idd = base.idd
        centre = idd.features[idd.labels == 0].mean(axis=0)
        rng = np.random.default_rng(0)
        ood = data.Dataset(centre + rng.normal(size=(240, 8)), np.full(240, -1), np.ones(240, bool))
        data.write_csv(tmp_path / "d.csv", data.Dataset.concat([idd, ood]))
        doc = copy.deepcopy(SMALL)
        doc["dataset"] = {"kind": "csv_file", "path": str(tmp_path / "d.csv"), "class_count": 4}
        cfg = config.resolve(doc)
        rep = evaluation.one_class_experiment(cfg, 200, 200)
        assert rep.per_class_single_head_accuracy[4] <= 0.5
