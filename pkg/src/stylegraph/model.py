"""Neural variants: the hierarchical attention encoder with a plain sigmoid head,
with the label graph, and with the label graph plus soft training."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from . import autograd as ag
from . import checkpoint
from .autograd import Tensor
from .corpus import Dataset, Sample, Vocabulary
from .encoder import EncoderConfig, encode_batch, init_encoder, sample_ids
from .labelgraph import (
    DEFAULT_TAU,
    DEFAULT_THRESHOLD,
    PredictionResult,
    apply_graph,
    init_head,
    raw_distribution,
    select_labels,
    smooth_graph,
    soft_loss,
    soft_targets,
)

NEURAL_VARIANTS = ("han", "han+lg", "han+lg+st", "lstm-baseline")


@dataclass
class ModelConfig:
    variant: str = "han+lg+st"
    tau: float = DEFAULT_TAU
    threshold: float = DEFAULT_THRESHOLD
    hidden: int = 128
    emb_dim: int = 128
    attn_dim: int = 128
    max_reviews: int = 40
    max_words: int = 32
    freeze_graph: bool = False
    soft_term: bool | None = None  # None: on exactly for han+lg+st
    detach_targets: bool = False
    literal_loss: bool = False
    graph_axis: int = 0
    fallback: bool = True

    def __post_init__(self):
        if self.variant not in NEURAL_VARIANTS:
            raise ValueError(f"unknown neural variant {self.variant!r}; expected one of {NEURAL_VARIANTS}")
        if not self.tau > 0:
            raise ValueError(f"temperature must be positive, got {self.tau}")
        if not 0 < self.threshold < 1:
            raise ValueError(f"threshold must lie in (0, 1), got {self.threshold}")

    @property
    def uses_graph(self) -> bool:
        return self.variant in ("han+lg", "han+lg+st")

    @property
    def uses_soft_term(self) -> bool:
        if self.soft_term is not None:
            return self.soft_term and self.uses_graph
        return self.variant == "han+lg+st"

    def encoder_config(self, vocab_size: int) -> EncoderConfig:
        return EncoderConfig(
            vocab_size=vocab_size,
            emb_dim=self.emb_dim,
            hidden=self.hidden,
            attn_dim=self.attn_dim,
            attention=self.variant != "lstm-baseline",
            max_reviews=self.max_reviews,
            max_words=self.max_words,
        )

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in obj.items() if k in names})


class StyleClassifier:
    def __init__(self, config: ModelConfig, vocabulary: Vocabulary, label_space: Sequence[str], params: dict[str, Tensor]):
        self.config = config
        self.vocabulary = vocabulary
        self.label_space = list(label_space)
        self.encoder_config = config.encoder_config(len(vocabulary))
        self.params = params

    @classmethod
    def create(cls, config: ModelConfig, vocabulary: Vocabulary, label_space: Sequence[str], seed: int = 0) -> "StyleClassifier":
        rng = np.random.default_rng(seed)
        enc = config.encoder_config(len(vocabulary))
        params = init_encoder(enc, rng)
        params.update(init_head(enc.output_dim, len(label_space), rng, graph=config.uses_graph))
        return cls(config, vocabulary, label_space, params)

    @property
    def num_labels(self) -> int:
        return len(self.label_space)

    def trainable(self) -> dict[str, Tensor]:
        if self.config.freeze_graph:
            return {k: p for k, p in self.params.items() if k != "graph.G"}
        return dict(self.params)

    def _sync_grad_flags(self) -> None:
        for name, p in self.params.items():
            p.requires_grad = not (name == "graph.G" and self.config.freeze_graph)

    def items(self, samples: Sequence[Sample]) -> list[list[list[int]]]:
        return [sample_ids(s, self.vocabulary) for s in samples]

    def forward(self, items) -> tuple[Tensor, Tensor]:
        """Returns (raw sigmoid outputs z', final scores e), both (batch, m)."""
        self._sync_grad_flags()
        enc = encode_batch(self.params, items, self.encoder_config)
        raw = raw_distribution(enc.z, self.params["head.W"], self.params["head.b"])
        if not self.config.uses_graph:
            return raw, raw
        return raw, apply_graph(raw, self.params["graph.G"])

    def loss(self, items, targets: np.ndarray) -> Tensor:
        _, e = self.forward(items)
        y_soft = None
        if self.config.uses_soft_term:
            smoothed = smooth_graph(self.params["graph.G"], self.config.tau, axis=self.config.graph_axis)
            y_soft = soft_targets(targets, smoothed)
            if self.config.detach_targets:
                y_soft = Tensor(y_soft.data)
        return soft_loss(e, targets, y_soft, literal=self.config.literal_loss)

    def scores(self, samples: Sequence[Sample], batch_size: int = 256) -> np.ndarray:
        out = []
        for start in range(0, len(samples), batch_size):
            _, e = self.forward(self.items(samples[start : start + batch_size]))
            out.append(e.data)
        return np.concatenate(out, axis=0) if out else np.zeros((0, self.num_labels))

    def predict(self, sample: Sample, threshold: float | None = None) -> PredictionResult:
        e = self.scores([sample])[0]
        return select_labels(e, self.config.threshold if threshold is None else threshold, self.config.fallback)

    def graph(self) -> np.ndarray | None:
        g = self.params.get("graph.G")
        return None if g is None else g.data.copy()

    def smoothed_graph(self, tau: float | None = None) -> np.ndarray | None:
        g = self.params.get("graph.G")
        if g is None:
            return None
        return smooth_graph(Tensor(g.data), self.config.tau if tau is None else tau, axis=self.config.graph_axis).data

    # -- persistence -------------------------------------------------------

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def restore(self, arrays: dict[str, np.ndarray]) -> None:
        for k, v in arrays.items():
            self.params[k].data = v.copy()

    def header(self, extra: dict | None = None) -> dict:
        meta = {
            "kind": "neural",
            "model": self.config.to_json(),
            "labels": self.label_space,
            "vocabulary": self.vocabulary.tokens,
        }
        if extra:
            meta.update(extra)
        return meta

    def save(self, path, extra: dict | None = None) -> None:
        checkpoint.save(path, self.snapshot(), self.header(extra))

    @classmethod
    def from_checkpoint(cls, header: dict, arrays: dict[str, np.ndarray]) -> "StyleClassifier":
        config = ModelConfig.from_json(header["model"])
        vocab = Vocabulary(header["vocabulary"])
        params = {k: Tensor(v, requires_grad=True, name=k) for k, v in arrays.items()}
        return cls(config, vocab, header["labels"], params)


def dataset_targets(dataset: Dataset, label_space: Sequence[str]) -> np.ndarray:
    if list(label_space) != list(dataset.label_space):
        index = {n: i for i, n in enumerate(label_space)}
        y = np.zeros((len(dataset), len(label_space)))
        for r, s in enumerate(dataset.samples):
            y[r, [index[lab] for lab in s.labels]] = 1.0
        return y
    return dataset.label_matrix()
