"""Small feedforward networks with hand-written backpropagation.

Two architectures are used: the multi-class in-distribution classifier
(dense+ReLU hidden layers, linear head) and the binary discriminator
(dense+batchnorm+ReLU, dense+ReLU, sigmoid head). Samples are rows.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from gradova.rng import Xoshiro256pp

KINDS = ("relu", "bn_relu", "linear", "sigmoid")
BN_EPS = 1e-5
BN_MOMENTUM = 0.1
MODEL_FORMAT = "gradova.mlp"


class NumericError(FloatingPointError):
    """Raised when training produces a non-finite loss."""


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray
    kind: str
    gamma: np.ndarray | None = None
    beta: np.ndarray | None = None
    running_mean: np.ndarray | None = None
    running_var: np.ndarray | None = None

    @property
    def has_bn(self) -> bool:
        return self.kind == "bn_relu"

    @property
    def shape(self) -> tuple[int, int]:
        return self.weight.shape

    def params(self) -> list[np.ndarray]:
        if self.has_bn:
            return [self.weight, self.bias, self.gamma, self.beta]
        return [self.weight, self.bias]


@dataclass
class MlpModel:
    layers: list[Layer]
    class_count: int
    rng_seed: int
    batch_stats_at_inference: bool = False

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.shape[0] != b.shape[1]:
                raise ValueError(f"layer widths do not chain: {a.shape} -> {b.shape}")
        if self.layers[-1].shape[0] != self.class_count:
            raise ValueError("final layer width must equal class_count")

    @property
    def input_dim(self) -> int:
        return self.layers[0].shape[1]

    @property
    def feature_dim_last_hidden(self) -> int:
        return self.layers[-1].shape[1]

    @property
    def is_binary(self) -> bool:
        return self.layers[-1].kind == "sigmoid"

    @property
    def has_bn(self) -> bool:
        return any(layer.has_bn for layer in self.layers)

    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params()]

    def copy(self) -> "MlpModel":
        return copy.deepcopy(self)


@dataclass
class TrainConfig:
    learning_rate: float = 2e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    epochs: int = 200
    minibatch_size: int = 32
    rng_seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.epochs < 1 or self.minibatch_size < 1:
            raise ValueError("epochs and minibatch_size must be >= 1")


# -- construction -----------------------------------------------------------


def build_mlp(sizes, kinds, seed: int) -> MlpModel:
    """Glorot-uniform weights drawn layer by layer from ``seed``; zero biases."""
    if len(sizes) != len(kinds) + 1:
        raise ValueError("need one activation kind per layer")
    stream = Xoshiro256pp(seed)
    layers = []
    for fan_in, fan_out, kind in zip(sizes[:-1], sizes[1:], kinds):
        if kind not in KINDS:
            raise ValueError(f"unknown activation kind {kind!r}")
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weight = stream.uniform_range(-limit, limit, (fan_out, fan_in))
        layer = Layer(weight=weight, bias=np.zeros(fan_out), kind=kind)
        if kind == "bn_relu":
            layer.gamma = np.ones(fan_out)
            layer.beta = np.zeros(fan_out)
            layer.running_mean = np.zeros(fan_out)
            layer.running_var = np.ones(fan_out)
        layers.append(layer)
    return MlpModel(layers=layers, class_count=sizes[-1], rng_seed=seed)


def classifier(input_dim: int, class_count: int, hidden=(64, 16), seed: int = 0) -> MlpModel:
    sizes = [input_dim, *hidden, class_count]
    return build_mlp(sizes, ["relu"] * len(hidden) + ["linear"], seed)


def discriminator(input_dim: int, hidden=(32, 16), seed: int = 0) -> MlpModel:
    sizes = [input_dim, *hidden, 1]
    kinds = ["bn_relu"] + ["relu"] * (len(hidden) - 1) + ["sigmoid"]
    return build_mlp(sizes, kinds, seed)


# -- elementary functions ---------------------------------------------------


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def cross_entropy(probabilities, label: int) -> float:
    p = np.asarray(probabilities, dtype=np.float64)
    if not 0 <= label < p.shape[-1]:
        raise ValueError(f"label {label} out of range for {p.shape[-1]} classes")
    return -math.log(max(float(p[label]), 1e-30))


# -- forward / backward -----------------------------------------------------


def _as_batch(model: MlpModel, batch) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ValueError(f"expected inputs of width {model.input_dim}, got shape {x.shape}")
    return x


def _run(model: MlpModel, x: np.ndarray, train: bool, batch_stats: bool):
    caches = []
    a = x
    last = len(model.layers) - 1
    hidden = x
    for idx, layer in enumerate(model.layers):
        z = a @ layer.weight.T + layer.bias
        cache = {"input": a}
        if layer.has_bn:
            if train or batch_stats:
                mean = z.mean(axis=0)
                var = z.var(axis=0)
            else:
                mean, var = layer.running_mean, layer.running_var
            inv_std = 1.0 / np.sqrt(var + BN_EPS)
            zhat = (z - mean) * inv_std
            cache.update(zhat=zhat, inv_std=inv_std, batch_mean=mean, batch_var=var)
            z = layer.gamma * zhat + layer.beta
        if idx == last:
            return z, hidden, caches + [cache]
        if layer.kind in ("relu", "bn_relu"):
            cache["mask"] = z > 0
            a = np.where(cache["mask"], z, 0.0)
        else:
            a = z
        hidden = a
        caches.append(cache)
    raise AssertionError("unreachable")


def forward(model: MlpModel, batch, mode: str = "eval"):
    """Return (logits, last hidden activations) for a batch of inputs.

    In ``train`` mode batchnorm normalizes with batch statistics; in ``eval``
    mode it uses the running statistics unless the model is flagged
    ``batch_stats_at_inference``. Running statistics are never modified here.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', not {mode!r}")
    x = _as_batch(model, batch)
    train = mode == "train"
    if len(x) == 0 and model.has_bn and (train or model.batch_stats_at_inference):
        raise ValueError("batch statistics need a non-empty batch")
    logits, hidden, _ = _run(model, x, train, model.batch_stats_at_inference)
    return logits, hidden


def predict_proba(model: MlpModel, batch, batch_stats: bool | None = None) -> np.ndarray:
    """Softmax probabilities, or sigmoid outputs (shape (n,)) for a binary head."""
    x = _as_batch(model, batch)
    use_batch = model.batch_stats_at_inference if batch_stats is None else batch_stats
    logits, _, _ = _run(model, x, False, use_batch)
    if model.is_binary:
        return sigmoid(logits[:, 0])
    return softmax(logits)


def _backward(model: MlpModel, caches, dout: np.ndarray) -> list[np.ndarray]:
    grads: list[list[np.ndarray]] = []
    for layer, cache in zip(reversed(model.layers), reversed(caches)):
        g = []
        if "mask" in cache:
            dout = np.where(cache["mask"], dout, 0.0)
        if layer.has_bn:
            zhat, inv_std = cache["zhat"], cache["inv_std"]
            dgamma = (dout * zhat).sum(axis=0)
            dbeta = dout.sum(axis=0)
            dzhat = dout * layer.gamma
            n = len(dzhat)
            dout = inv_std / n * (n * dzhat - dzhat.sum(axis=0) - zhat * (dzhat * zhat).sum(axis=0))
            g = [dgamma, dbeta]
        dweight = dout.T @ cache["input"]
        dbias = dout.sum(axis=0)
        grads.append([dweight, dbias, *g])
        dout = dout @ layer.weight
    return [g for layer_grads in reversed(grads) for g in layer_grads]


def _loss_and_dlogits(model: MlpModel, logits: np.ndarray, targets: np.ndarray, loss: str):
    n = len(logits)
    if loss == "multiclass":
        p = softmax(logits)
        picked = np.maximum(p[np.arange(n), targets], 1e-30)
        value = float(-np.log(picked).mean())
        d = p.copy()
        d[np.arange(n), targets] -= 1.0
        return value, d / n
    if loss == "discriminator":
        # sigmoid output is the OOD probability; targets are 1 for OOD
        z = logits[:, 0]
        s = sigmoid(z)
        ood = targets.astype(bool)
        d = np.zeros_like(logits)
        value = 0.0
        if ood.any():
            value += float(np.logaddexp(0.0, -z[ood]).mean())
            d[ood, 0] = (s[ood] - 1.0) / ood.sum()
        if (~ood).any():
            value += float(np.logaddexp(0.0, z[~ood]).mean())
            d[~ood, 0] = s[~ood] / (~ood).sum()
        return value, d
    raise ValueError(f"unknown loss {loss!r}")


def loss_and_grads(model: MlpModel, batch, targets, loss: str = "multiclass", mode: str = "train"):
    """Loss over a batch and the analytic gradient of every parameter."""
    x = _as_batch(model, batch)
    targets = np.asarray(targets, dtype=np.int64)
    logits, _, caches = _run(model, x, mode == "train", model.batch_stats_at_inference)
    value, dlogits = _loss_and_dlogits(model, logits, targets, loss)
    return value, _backward(model, caches, dlogits)


def _update_running(model: MlpModel, caches) -> None:
    for layer, cache in zip(model.layers, caches):
        if layer.has_bn:
            n = len(cache["input"])
            var = cache["batch_var"]
            unbiased = var * n / (n - 1) if n > 1 else var
            layer.running_mean = (1 - BN_MOMENTUM) * layer.running_mean + BN_MOMENTUM * cache["batch_mean"]
            layer.running_var = (1 - BN_MOMENTUM) * layer.running_var + BN_MOMENTUM * unbiased


class Adam:
    def __init__(self, params, lr, beta1, beta2, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train(model: MlpModel, samples, targets, cfg: TrainConfig, loss: str = "multiclass"):
    """Train a copy of ``model`` with Adam; return (trained model, per-epoch losses).

    Minibatches come from a Fisher-Yates shuffle seeded by ``cfg.rng_seed``.
    The recorded epoch loss is the sample-weighted mean of minibatch losses.
    In discriminator mode each minibatch loss is the OOD mean plus the IDD
    mean, taken separately.
    """
    x = _as_batch(model, samples)
    targets = np.asarray(targets, dtype=np.int64)
    if len(x) == 0 or len(x) != len(targets):
        raise ValueError("training data must be non-empty with one target per sample")
    if loss == "multiclass":
        if targets.min() < 0 or targets.max() >= model.class_count:
            raise ValueError("class label out of range")
    elif loss == "discriminator":
        if not (np.any(targets == 1) and np.any(targets == 0)):
            raise ValueError("discriminator training needs both IDD and OOD samples")
    model = model.copy()
    params = model.params()
    opt = Adam(params, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2)
    stream = Xoshiro256pp(cfg.rng_seed)
    order = np.arange(len(x), dtype=np.int64)
    trace = []
    for epoch in range(cfg.epochs):
        stream.shuffle(order)
        total, count = 0.0, 0
        for start in range(0, len(x), cfg.minibatch_size):
            idx = order[start:start + cfg.minibatch_size]
            if model.has_bn and len(idx) < 2 and len(x) > 1:
                continue
            logits, _, caches = _run(model, x[idx], True, False)
            value, dlogits = _loss_and_dlogits(model, logits, targets[idx], loss)
            if not math.isfinite(value):
                raise NumericError(f"non-finite training loss at epoch {epoch}")
            grads = _backward(model, caches, dlogits)
            _update_running(model, caches)
            opt.step(params, grads)
            total += value * len(idx)
            count += len(idx)
        trace.append(total / count)
    return model, trace


def accuracy(model: MlpModel, samples, labels) -> float:
    labels = np.asarray(labels)
    p = predict_proba(model, samples)
    pred = (p > 0.5).astype(int) if model.is_binary else p.argmax(axis=1)
    return float((pred == labels).mean())


def backprop_check(model: MlpModel, samples, labels, step: float = 1e-5, mode: str = "train") -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error is ``|a - n| / max(|a|, |n|, 1e-6)`` per parameter entry.
    """
    x = _as_batch(model, samples)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    loss = "discriminator" if model.is_binary else "multiclass"
    probe = model.copy()
    _, analytic = loss_and_grads(probe, x, labels, loss, mode)
    worst = 0.0
    for p, g in zip(probe.params(), analytic):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            up, _ = loss_and_grads(probe, x, labels, loss, mode)
            flat[i] = keep - step
            down, _ = loss_and_grads(probe, x, labels, loss, mode)
            flat[i] = keep
            numeric = (up - down) / (2 * step)
            err = abs(gflat[i] - numeric) / max(abs(gflat[i]), abs(numeric), 1e-6)
            worst = max(worst, err)
    return worst


# -- JSON document ----------------------------------------------------------


def model_to_dict(model: MlpModel) -> dict:
    layers = []
    for layer in model.layers:
        out_dim, in_dim = layer.shape
        doc = {
            "kind": layer.kind,
            "in": in_dim,
            "out": out_dim,
            "weight": layer.weight.reshape(-1).tolist(),
            "bias": layer.bias.tolist(),
        }
        if layer.has_bn:
            doc["batchnorm"] = {
                "gamma": layer.gamma.tolist(),
                "beta": layer.beta.tolist(),
                "running_mean": layer.running_mean.tolist(),
                "running_var": layer.running_var.tolist(),
                "eps": BN_EPS,
                "momentum": BN_MOMENTUM,
            }
        layers.append(doc)
    return {
        "format": MODEL_FORMAT,
        "version": 1,
        "class_count": model.class_count,
        "rng_seed": model.rng_seed,
        "batch_stats_at_inference": model.batch_stats_at_inference,
        "layers": layers,
    }


def model_from_dict(doc: dict) -> MlpModel:
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError(f"not a {MODEL_FORMAT} document")
    layers = []
    for ld in doc["layers"]:
        weight = np.array(ld["weight"], dtype=np.float64).reshape(ld["out"], ld["in"])
        layer = Layer(weight=weight, bias=np.array(ld["bias"], dtype=np.float64), kind=ld["kind"])
        if "batchnorm" in ld:
            bn = ld["batchnorm"]
            layer.gamma = np.array(bn["gamma"], dtype=np.float64)
            layer.beta = np.array(bn["beta"], dtype=np.float64)
            layer.running_mean = np.array(bn["running_mean"], dtype=np.float64)
            layer.running_var = np.array(bn["running_var"], dtype=np.float64)
        layers.append(layer)
    return MlpModel(
        layers=layers,
        class_count=int(doc["class_count"]),
        rng_seed=int(doc["rng_seed"]),
        batch_stats_at_inference=bool(doc.get("batch_stats_at_inference", False)),
    )


def save_model(model: MlpModel, path, extra: dict | None = None) -> None:
    doc = model_to_dict(model)
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, allow_nan=False))


def load_model(path) -> MlpModel:
    return model_from_dict(json.loads(Path(path).read_text()))
