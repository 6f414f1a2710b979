"""Classical multi-label baselines over mean-pooled review features.

ML-KNN, Binary Relevance, Classifier Chains, Label Powerset and a one-hidden-layer
MLP.  The linear learners and the MLP share one Adam trainer; with the hidden
layer switched off the MLP is exactly Binary Relevance.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import autograd as ag
from . import checkpoint
from .autograd import Tensor
from .corpus import Dataset, Sample, Vocabulary
from .encoder import mean_pool_representation, sample_ids
from .labelgraph import DEFAULT_THRESHOLD, select_labels, soft_loss

logger = logging.getLogger(__name__)

BASELINE_NAMES = ("mlknn", "br", "cc", "lp", "mlp")
LP_MAX_CLASSES = 4096


class BaselineError(ValueError):
    pass


# -- features ---------------------------------------------------------------


class FeatureMap:
    """Mean-pooled word embeddings; the table is seeded random unless filled by the loader hook."""

    def __init__(self, vocabulary: Vocabulary, table: np.ndarray):
        if table.shape[0] != len(vocabulary):
            raise BaselineError(f"embedding table has {table.shape[0]} rows for a vocabulary of {len(vocabulary)}")
        self.vocabulary = vocabulary
        self.table = table

    @classmethod
    def random(cls, vocabulary: Vocabulary, dim: int = 128, seed: int = 0) -> "FeatureMap":
        rng = np.random.default_rng(seed)
        return cls(vocabulary, rng.normal(0.0, 1.0, size=(len(vocabulary), dim)))

    def transform(self, samples: Sequence[Sample]) -> np.ndarray:
        rows = [mean_pool_representation(sample_ids(s, self.vocabulary), self.table) for s in samples]
        return np.stack(rows) if rows else np.zeros((0, self.table.shape[1]))


# -- shared Adam trainer ----------------------------------------------------


@dataclass
class FitConfig:
    lr: float = 0.01
    epochs: int = 100
    batch_size: int = 128
    seed: int = 0
    init_scale: float = 0.08


def init_sigmoid_net(d_in: int, m: int, hidden: int, rng: np.random.Generator, scale: float) -> dict[str, Tensor]:
    params = {}
    width = d_in
    if hidden > 0:
        params["W1"] = Tensor(rng.uniform(-scale, scale, size=(d_in, hidden)), requires_grad=True, name="W1")
        params["b1"] = Tensor(np.zeros(hidden), requires_grad=True, name="b1")
        width = hidden
    # zero output layer: with hidden=0 this is logistic regression from the origin
    params["W"] = Tensor(np.zeros((width, m)), requires_grad=True, name="W")
    params["b"] = Tensor(np.zeros(m), requires_grad=True, name="b")
    return params


def sigmoid_net(params: dict[str, Tensor], x) -> Tensor:
    h = ag.as_tensor(x)
    if "W1" in params:
        h = ag.tanh(ag.add(ag.matmul(h, params["W1"]), params["b1"]))
    return ag.sigmoid(ag.add(ag.matmul(h, params["W"]), params["b"]))


def softmax_net(params: dict[str, Tensor], x) -> Tensor:
    return ag.softmax(ag.add(ag.matmul(ag.as_tensor(x), params["W"]), params["b"]), axis=-1)


def _batches(n: int, cfg: FitConfig, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, cfg.batch_size):
        yield order[start : start + cfg.batch_size]


def fit_sigmoid_net(x: np.ndarray, y: np.ndarray, hidden: int, cfg: FitConfig) -> tuple[dict[str, Tensor], list[float]]:
    """Minimize mean summed BCE with Adam; returns parameters and per-epoch mean loss."""
    rng = np.random.default_rng(cfg.seed)
    params = init_sigmoid_net(x.shape[1], y.shape[1], hidden, rng, cfg.init_scale)
    opt = ag.Adam(params, lr=cfg.lr)
    history = []
    for _ in range(cfg.epochs):
        total, count = 0.0, 0
        for idx in _batches(len(x), cfg, rng):
            opt.zero_grad()
            with ag.Tape() as tape:
                loss = soft_loss(sigmoid_net(params, x[idx]), y[idx], None)
            tape.backward(loss)
            opt.step()
            total += loss.item() * len(idx)
            count += len(idx)
        history.append(total / count)
    return params, history


def fit_softmax_net(x: np.ndarray, classes: np.ndarray, k: int, cfg: FitConfig) -> tuple[dict[str, Tensor], list[float]]:
    rng = np.random.default_rng(cfg.seed)
    params = {
        "W": Tensor(np.zeros((x.shape[1], k)), requires_grad=True, name="W"),
        "b": Tensor(np.zeros(k), requires_grad=True, name="b"),
    }
    opt = ag.Adam(params, lr=cfg.lr)
    history = []
    for _ in range(cfg.epochs):
        total, count = 0.0, 0
        for idx in _batches(len(x), cfg, rng):
            opt.zero_grad()
            with ag.Tape() as tape:
                prob = softmax_net(params, x[idx])
                picked = prob[np.arange(len(idx)), classes[idx]]
                loss = ag.neg(ag.mean(ag.log(ag.clip(picked, 1e-12, 1.0))))
            tape.backward(loss)
            opt.step()
            total += loss.item() * len(idx)
            count += len(idx)
        history.append(total / count)
    return params, history


def _arrays(params: dict[str, Tensor], prefix: str = "") -> dict[str, np.ndarray]:
    return {prefix + k: p.data.copy() for k, p in params.items()}


def _tensors(arrays: dict[str, np.ndarray], prefix: str = "") -> dict[str, Tensor]:
    return {k[len(prefix) :]: Tensor(v) for k, v in arrays.items() if k.startswith(prefix)}


# -- models -----------------------------------------------------------------


class Baseline:
    name = ""
    use_threshold = True  # False: the model's own decision rule picks the set

    def __init__(self, threshold: float = DEFAULT_THRESHOLD, fallback: bool = True):
        self.threshold = threshold
        self.fallback = fallback
        self.num_labels = 0

    def fit(self, x: np.ndarray, y: np.ndarray) -> "Baseline":
        raise NotImplementedError

    def scores(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def decide(self, x: np.ndarray) -> np.ndarray:
        """Boolean (n, m) label decisions before the empty-set fallback."""
        return self.scores(x) > self.threshold

    def predict(self, x: np.ndarray) -> list[list[int]]:
        scores = self.scores(x)
        decided = self.decide(x)
        out = []
        for e, row in zip(scores, decided):
            chosen = np.flatnonzero(row).tolist()
            if not chosen and self.fallback:
                chosen = select_labels(e, self.threshold, True).ranking[:1]
            out.append(chosen)
        return out

    def config(self) -> dict:
        return {"threshold": self.threshold, "fallback": self.fallback}

    def arrays(self) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def load_arrays(self, arrays: dict[str, np.ndarray], meta: dict) -> None:
        raise NotImplementedError

    def extra_meta(self) -> dict:
        return {}


class MLKNN(Baseline):
    """Multi-label k-nearest neighbours with Laplace-smoothed count posteriors."""

    name = "mlknn"
    use_threshold = False

    def __init__(self, k: int = 10, s: float = 1.0, **kw):
        super().__init__(**kw)
        if k < 1 or s <= 0:
            raise BaselineError("ML-KNN needs k >= 1 and s > 0")
        self.k = k
        self.s = s

    def _neighbors(self, queries: np.ndarray, exclude_self: bool) -> np.ndarray:
        d2 = ((queries[:, None, :] - self.x[None, :, :]) ** 2).sum(axis=-1)
        if exclude_self:
            np.fill_diagonal(d2, np.inf)
        # stable sort: equal distances keep the lower training index first
        return np.argsort(d2, axis=1, kind="stable")[:, : self.k]

    def _counts(self, neighbors: np.ndarray) -> np.ndarray:
        return self.y[neighbors].sum(axis=1).astype(np.int64)  # (n, m)

    def fit(self, x: np.ndarray, y: np.ndarray) -> "MLKNN":
        n, m = y.shape
        if self.k >= n:
            raise BaselineError(f"k = {self.k} needs more than {self.k} training samples, got {n}")
        self.x, self.y, self.num_labels = np.asarray(x, float), np.asarray(y, float), m
        s, k = self.s, self.k
        self.prior = (s + self.y.sum(axis=0)) / (2 * s + n)
        counts = self._counts(self._neighbors(self.x, exclude_self=True))
        hist1 = np.zeros((m, k + 1))
        hist0 = np.zeros((m, k + 1))
        for j in range(m):
            on = self.y[:, j] == 1
            hist1[j] = np.bincount(counts[on, j], minlength=k + 1)
            hist0[j] = np.bincount(counts[~on, j], minlength=k + 1)
        self.post1 = (s + hist1) / (s * (k + 1) + hist1.sum(axis=1, keepdims=True))
        self.post0 = (s + hist0) / (s * (k + 1) + hist0.sum(axis=1, keepdims=True))
        return self

    def _joint(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        counts = self._counts(self._neighbors(np.asarray(x, float), exclude_self=False))
        cols = np.arange(self.num_labels)
        on = self.prior * self.post1[cols, counts]
        off = (1 - self.prior) * self.post0[cols, counts]
        return on, off

    def scores(self, x: np.ndarray) -> np.ndarray:
        on, off = self._joint(x)
        return on / (on + off)

    def decide(self, x: np.ndarray) -> np.ndarray:
        on, off = self._joint(x)
        return on > off

    def config(self) -> dict:
        return {**super().config(), "k": self.k, "s": self.s}

    def arrays(self):
        return {"x": self.x, "y": self.y, "prior": self.prior, "post1": self.post1, "post0": self.post0}

    def load_arrays(self, arrays, meta):
        self.x, self.y = arrays["x"], arrays["y"]
        self.prior, self.post1, self.post0 = arrays["prior"], arrays["post1"], arrays["post0"]
        self.num_labels = self.y.shape[1]


class MLP(Baseline):
    """One tanh hidden layer and a sigmoid output; ``hidden=0`` drops the hidden layer."""

    name = "mlp"

    def __init__(self, hidden: int = 128, fit: FitConfig | None = None, **kw):
        super().__init__(**kw)
        if hidden < 0:
            raise BaselineError("hidden size must be non-negative")
        self.hidden = hidden
        self.fit_config = fit or FitConfig()
        self.history: list[float] = []

    def fit(self, x, y):
        self.num_labels = y.shape[1]
        for j in np.flatnonzero(y.sum(axis=0) == 0):
            logger.warning("label %d has no positive training samples; its classifier is trained anyway", j)
        self.params, self.history = fit_sigmoid_net(np.asarray(x, float), np.asarray(y, float), self.hidden, self.fit_config)
        return self

    def scores(self, x):
        return sigmoid_net(self.params, np.asarray(x, float)).data

    def config(self):
        return {**super().config(), "hidden": self.hidden, "fit": asdict(self.fit_config)}

    def arrays(self):
        return _arrays(self.params)

    def load_arrays(self, arrays, meta):
        self.params = _tensors(arrays)
        self.num_labels = self.params["b"].shape[0]


class BinaryRelevance(MLP):
    """Independent per-label logistic regressions.

    Each output column is its own model: the loss is a sum over labels and Adam
    updates elementwise, so no column sees another label's targets.
    """

    name = "br"

    def __init__(self, fit: FitConfig | None = None, **kw):
        super().__init__(hidden=0, fit=fit, **kw)

    def config(self):
        cfg = super().config()
        cfg.pop("hidden")
        return cfg


class ClassifierChain(Baseline):
    """Gold prefix labels as extra inputs at training time, predicted ones at inference."""

    name = "cc"

    def __init__(self, fit: FitConfig | None = None, shuffle_seed: int | None = None, **kw):
        super().__init__(**kw)
        self.fit_config = fit or FitConfig()
        self.shuffle_seed = shuffle_seed
        self.order: list[int] = []
        self.links: list[dict[str, Tensor]] = []

    def fit(self, x, y):
        x, y = np.asarray(x, float), np.asarray(y, float)
        m = self.num_labels = y.shape[1]
        if self.shuffle_seed is None:
            self.order = list(range(m))
        else:
            self.order = np.random.default_rng(self.shuffle_seed).permutation(m).tolist()
        self.links = []
        for pos, j in enumerate(self.order):
            if y[:, j].sum() == 0:
                logger.warning("label %d has no positive training samples; its classifier is trained anyway", j)
            inputs = np.concatenate([x, y[:, self.order[:pos]]], axis=1)
            params, _ = fit_sigmoid_net(inputs, y[:, [j]], 0, self.fit_config)
            self.links.append(params)
        return self

    def scores(self, x):
        x = np.asarray(x, float)
        out = np.zeros((len(x), self.num_labels))
        prefix = np.zeros((len(x), 0))
        for j, params in zip(self.order, self.links):
            p = sigmoid_net(params, np.concatenate([x, prefix], axis=1)).data[:, 0]
            out[:, j] = p
            prefix = np.concatenate([prefix, (p > self.threshold).astype(float)[:, None]], axis=1)
        return out

    def config(self):
        return {**super().config(), "fit": asdict(self.fit_config), "shuffle_seed": self.shuffle_seed}

    def extra_meta(self):
        return {"order": self.order}

    def arrays(self):
        out = {}
        for pos, params in enumerate(self.links):
            out.update(_arrays(params, f"link{pos}."))
        return out

    def load_arrays(self, arrays, meta):
        self.order = list(meta["order"])
        self.num_labels = len(self.order)
        self.links = [_tensors(arrays, f"link{pos}.") for pos in range(len(self.order))]


class LabelPowerset(Baseline):
    """Softmax regression over the label sets seen in training."""

    name = "lp"
    use_threshold = False

    def __init__(self, fit: FitConfig | None = None, max_classes: int = LP_MAX_CLASSES, **kw):
        super().__init__(**kw)
        self.fit_config = fit or FitConfig()
        self.max_classes = max_classes
        self.inventory: list[tuple[int, ...]] = []

    def fit(self, x, y):
        x, y = np.asarray(x, float), np.asarray(y, float)
        self.num_labels = y.shape[1]
        keys = [tuple(np.flatnonzero(row).tolist()) for row in y]
        index: dict[tuple[int, ...], int] = {}
        for key in keys:
            index.setdefault(key, len(index))
        if len(index) > self.max_classes:
            raise BaselineError(f"{len(index)} distinct label sets exceed the powerset cap of {self.max_classes}")
        self.inventory = list(index)
        classes = np.array([index[k] for k in keys], dtype=np.int64)
        self.params, self.history = fit_softmax_net(x, classes, len(index), self.fit_config)
        self._membership()
        return self

    def _membership(self):
        self.member = np.zeros((len(self.inventory), self.num_labels))
        for c, key in enumerate(self.inventory):
            self.member[c, list(key)] = 1.0

    def class_probabilities(self, x) -> np.ndarray:
        return softmax_net(self.params, np.asarray(x, float)).data

    def scores(self, x):
        # marginal probability of each label under the class distribution
        return self.class_probabilities(x) @ self.member

    def decide(self, x):
        best = np.argmax(self.class_probabilities(x), axis=1)
        return self.member[best] > 0

    def config(self):
        return {**super().config(), "fit": asdict(self.fit_config), "max_classes": self.max_classes}

    def extra_meta(self):
        return {"inventory": [list(k) for k in self.inventory]}

    def arrays(self):
        return _arrays(self.params)

    def load_arrays(self, arrays, meta):
        self.inventory = [tuple(k) for k in meta["inventory"]]
        self.params = _tensors(arrays)
        self.num_labels = int(meta["num_labels"])
        self._membership()


# -- construction and persistence -------------------------------------------


def _fit_from(cfg: dict) -> FitConfig:
    return FitConfig(**cfg.get("fit", {}))


def build_baseline(name: str, config: dict | None = None) -> Baseline:
    cfg = dict(config or {})
    common = {k: cfg.pop(k) for k in ("threshold", "fallback") if k in cfg}
    if name == "mlknn":
        return MLKNN(k=cfg.get("k", 10), s=cfg.get("s", 1.0), **common)
    if name == "br":
        return BinaryRelevance(fit=_fit_from(cfg), **common)
    if name == "mlp":
        return MLP(hidden=cfg.get("hidden", 128), fit=_fit_from(cfg), **common)
    if name == "cc":
        return ClassifierChain(fit=_fit_from(cfg), shuffle_seed=cfg.get("shuffle_seed"), **common)
    if name == "lp":
        return LabelPowerset(fit=_fit_from(cfg), max_classes=cfg.get("max_classes", LP_MAX_CLASSES), **common)
    raise BaselineError(f"unknown baseline {name!r}; expected one of {BASELINE_NAMES}")


@dataclass
class BaselinePipeline:
    """Feature map plus fitted model, with the label space it was trained on."""

    model: Baseline
    features: FeatureMap
    label_space: list[str] = field(default_factory=list)

    @classmethod
    def train(cls, name: str, train_set: Dataset, config: dict | None = None, emb_dim: int = 128, seed: int = 0) -> "BaselinePipeline":
        cfg = dict(config or {})
        if name != "mlknn":
            fit = dict(cfg.get("fit", {}))
            fit.setdefault("seed", seed)
            cfg["fit"] = fit
        model = build_baseline(name, cfg)
        features = FeatureMap.random(train_set.vocabulary, emb_dim, seed)
        model.fit(features.transform(train_set.samples), train_set.label_matrix())
        return cls(model, features, list(train_set.label_space))

    def scores(self, samples: Sequence[Sample]) -> np.ndarray:
        return self.model.scores(self.features.transform(samples))

    def predict(self, samples: Sequence[Sample]) -> list[list[int]]:
        return self.model.predict(self.features.transform(samples))

    def header(self, extra: dict | None = None) -> dict:
        meta = {
            "kind": "baseline",
            "baseline": self.model.name,
            "config": self.model.config(),
            "labels": self.label_space,
            "num_labels": self.model.num_labels,
            "vocabulary": self.features.vocabulary.tokens,
            **self.model.extra_meta(),
        }
        if extra:
            meta.update(extra)
        return meta

    def arrays(self) -> dict[str, np.ndarray]:
        return {"features.table": self.features.table, **{f"model.{k}": v for k, v in self.model.arrays().items()}}

    def save(self, path, extra: dict | None = None) -> None:
        checkpoint.save(path, self.arrays(), self.header(extra))

    @classmethod
    def from_checkpoint(cls, header: dict, arrays: dict[str, np.ndarray]) -> "BaselinePipeline":
        model = build_baseline(header["baseline"], header["config"])
        model.load_arrays({k[len("model.") :]: v for k, v in arrays.items() if k.startswith("model.")}, header)
        features = FeatureMap(Vocabulary(header["vocabulary"]), arrays["features.table"])
        return cls(model, features, list(header["labels"]))
