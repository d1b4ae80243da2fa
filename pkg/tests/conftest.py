import numpy as np
import pytest

from gradova import data, mahalanobis, nn


def random_spd(rng, d):
    a = rng.normal(size=(d, d))
    return a @ a.T + d * np.eye(d)


def random_orthogonal(rng, d):
    q, r = np.linalg.qr(rng.normal(size=(d, d)))
    return q * np.sign(np.diag(r))


@pytest.fixture(scope="session")
def blobs():
    """Four well-separated 8-D classes (250 each) plus 500 far OOD samples."""
    spec = data.DatasetSpec(class_count=4, dim=8, samples_per_class=500, separation=6.0, seed=11,
                            ood=data.OodSpec(class_count=1, samples_per_class=500, fraction=3.0))
    ds = data.generate(spec)
    train = np.concatenate([np.flatnonzero(ds.labels == c)[:250] for c in range(4)])
    test = np.concatenate([np.flatnonzero(ds.labels == c)[250:] for c in range(4)])
    return {"train": ds.subset(train), "test": ds.subset(test), "ood": ds.ood}


@pytest.fixture(scope="session")
def trained(blobs):
    """Classifier trained on ``blobs`` with the desk defaults, plus fitted statistics."""
    train = blobs["train"]
    model = nn.classifier(8, 4, seed=5)
    model, trace = nn.train(model, train.features, train.labels, nn.TrainConfig(rng_seed=6))
    stats = mahalanobis.fit(model, train.features, train.labels)
    return {"model": model, "stats": stats, "trace": trace}


# -- acceptance report ------------------------------------------------------

ACCEPTANCE_LINES = {}


def record_criterion(number: int, name: str, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {name}: {detail}"
    print(ACCEPTANCE_LINES[number])


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
