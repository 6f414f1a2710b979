"""Samples, datasets, JSONL ingestion, vocabulary, splits and a synthetic generator."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

PAD = "<pad>"
UNK = "<unk>"
PAD_INDEX = 0
UNK_INDEX = 1
DEFAULT_VOCAB_SIZE = 135_000
DEFAULT_SPLIT = (0.70, 0.09, 0.21)
MIN_LABELS, MAX_LABELS = 2, 5

# reference profile of the original review corpus, for documentation and calibration
REFERENCE_PROFILE = {
    "samples": 7172,
    "styles": 22,
    "split": (5020, 646, 1506),
    "labels_per_sample": 2.2,
    "reviews_per_sample": 40,
    "words_per_review": 12.4,
}


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class Sample:
    id: str
    title: str
    reviews: tuple[tuple[str, ...], ...]
    labels: tuple[str, ...]

    def __post_init__(self):
        if not self.reviews:
            raise CorpusError(f"sample {self.id!r} has no reviews")
        if any(len(r) == 0 for r in self.reviews):
            raise CorpusError(f"sample {self.id!r} has an empty review")
        if not self.labels:
            raise CorpusError(f"sample {self.id!r} has no labels")

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "title": self.title,
            "styles": list(self.labels),
            "reviews": [list(r) for r in self.reviews],
        }


class Vocabulary:
    """Token to index map; indices 0 and 1 are reserved for padding and unknown."""

    def __init__(self, tokens: Sequence[str] = ()):
        self.itos: list[str] = [PAD, UNK]
        self.stoi: dict[str, int] = {PAD: PAD_INDEX, UNK: UNK_INDEX}
        for tok in tokens:
            if tok in self.stoi:
                raise CorpusError(f"duplicate or reserved token {tok!r}")
            self.stoi[tok] = len(self.itos)
            self.itos.append(tok)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def index(self, token: str) -> int:
        return self.stoi.get(token, UNK_INDEX)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, UNK_INDEX) for t in tokens]

    @property
    def tokens(self) -> list[str]:
        return self.itos[2:]


@dataclass
class Dataset:
    samples: list[Sample]
    label_space: list[str]
    vocabulary: Vocabulary

    def __post_init__(self):
        self.label_index = {name: i for i, name in enumerate(self.label_space)}
        if len(self.label_index) != len(self.label_space):
            raise CorpusError("label space has duplicate names")
        for s in self.samples:
            missing = [lab for lab in s.labels if lab not in self.label_index]
            if missing:
                raise CorpusError(f"sample {s.id!r} uses labels outside the label space: {missing}")

    def __len__(self) -> int:
        return len(self.samples)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Dataset)
            and self.samples == other.samples
            and self.label_space == other.label_space
            and self.vocabulary == other.vocabulary
        )

    @property
    def num_labels(self) -> int:
        return len(self.label_space)

    def label_matrix(self) -> np.ndarray:
        y = np.zeros((len(self.samples), self.num_labels))
        for row, s in enumerate(self.samples):
            y[row, [self.label_index[lab] for lab in s.labels]] = 1.0
        return y

    def subset(self, indices: Sequence[int]) -> "Dataset":
        return Dataset([self.samples[i] for i in indices], self.label_space, self.vocabulary)


def build_vocab(samples: Iterable[Sample], max_size: int = DEFAULT_VOCAB_SIZE) -> Vocabulary:
    """Keep the ``max_size - 2`` most frequent tokens, ties broken lexicographically."""
    if max_size < 2:
        raise CorpusError("vocabulary size must leave room for the two reserved entries")
    counts = Counter(tok for s in samples for review in s.reviews for tok in review)
    for reserved in (PAD, UNK):
        counts.pop(reserved, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary([tok for tok, _ in ranked[: max_size - 2]])


def _parse_reviews(raw, lineno: int) -> tuple[tuple[str, ...], ...]:
    if not isinstance(raw, list) or not raw:
        raise CorpusError(f"line {lineno}: 'reviews' must be a non-empty array")
    out = []
    for review in raw:
        if isinstance(review, str):
            tokens = tuple(review.split())
        elif isinstance(review, list) and all(isinstance(t, str) for t in review):
            tokens = tuple(review)
        else:
            raise CorpusError(f"line {lineno}: a review must be a string or an array of strings")
        if tokens:
            out.append(tokens)
    if not out:
        raise CorpusError(f"line {lineno}: every review is empty")
    return tuple(out)


@dataclass
class LoadReport:
    rejected: list[int] = field(default_factory=list)
    off_profile: int = 0


def load_jsonl(
    path: str | Path,
    max_vocab: int = DEFAULT_VOCAB_SIZE,
    vocabulary: Vocabulary | None = None,
    label_space: Sequence[str] | None = None,
    report: LoadReport | None = None,
) -> Dataset:
    """Read one sample per line.

    Samples with an empty ``styles`` array are skipped and their line
    numbers collected in ``report``.  Pass ``vocabulary``/``label_space`` to
    reuse those of a training split.
    """
    report = report if report is not None else LoadReport()
    samples: list[Sample] = []
    seen_labels: dict[str, None] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}: line {lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise CorpusError(f"{path}: line {lineno}: expected a JSON object")
            for key in ("id", "styles", "reviews"):
                if key not in obj:
                    raise CorpusError(f"{path}: line {lineno}: missing field {key!r}")
            styles = obj["styles"]
            if not isinstance(styles, list) or not all(isinstance(s, str) for s in styles):
                raise CorpusError(f"{path}: line {lineno}: 'styles' must be an array of strings")
            if not styles:
                report.rejected.append(lineno)
                continue
            labels = tuple(dict.fromkeys(styles))
            if not MIN_LABELS <= len(labels) <= MAX_LABELS:
                report.off_profile += 1
            for lab in labels:
                seen_labels.setdefault(lab)
            samples.append(
                Sample(
                    id=str(obj["id"]),
                    title=str(obj.get("title", "")),
                    reviews=_parse_reviews(obj["reviews"], lineno),
                    labels=labels,
                )
            )
    if report.rejected:
        logger.warning("%s: rejected %d samples with no styles (lines %s)", path, len(report.rejected), report.rejected)
    if report.off_profile:
        logger.warning("%s: %d samples carry fewer than %d or more than %d labels", path, report.off_profile, MIN_LABELS, MAX_LABELS)

    if label_space is None:
        label_space = list(seen_labels)
    else:
        label_space = list(label_space)
        unknown = [lab for lab in seen_labels if lab not in set(label_space)]
        if unknown:
            raise CorpusError(f"{path}: labels not in the given label space: {unknown}")
    if vocabulary is None:
        vocabulary = build_vocab(samples, max_vocab)
    return Dataset(samples, label_space, vocabulary)


def dumps_jsonl(samples: Iterable[Sample]) -> str:
    return "".join(json.dumps(s.to_json(), ensure_ascii=False) + "\n" for s in samples)


def write_jsonl(dataset: Dataset | Iterable[Sample], path: str | Path) -> None:
    samples = dataset.samples if isinstance(dataset, Dataset) else dataset
    Path(path).write_text(dumps_jsonl(samples), encoding="utf-8")


def split_sizes(n: int, ratios: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment of ``n`` items."""
    if any(r <= 0 for r in ratios):
        raise CorpusError(f"split ratios must be positive, got {tuple(ratios)}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise CorpusError(f"split ratios must sum to 1, got {sum(ratios)!r}")
    # round away float noise so 3 * (1/3) counts as a whole sample
    quotas = [round(n * r, 9) for r in ratios]
    sizes = [math.floor(q) for q in quotas]
    order = sorted(range(len(ratios)), key=lambda i: (-(quotas[i] - sizes[i]), i))
    for i in order[: n - sum(sizes)]:
        sizes[i] += 1
    return sizes


def split(dataset: Dataset, ratios: Sequence[float] = DEFAULT_SPLIT, seed: int = 0) -> tuple[Dataset, ...]:
    sizes = split_sizes(len(dataset), ratios)
    if any(sz == 0 for sz in sizes):
        raise CorpusError(f"split of {len(dataset)} samples by {tuple(ratios)} leaves a part empty: {sizes}")
    perm = np.random.default_rng(seed).permutation(len(dataset))
    parts, start = [], 0
    for sz in sizes:
        parts.append(dataset.subset(sorted(perm[start : start + sz].tolist())))
        start += sz
    return tuple(parts)


# -- synthetic corpus ---------------------------------------------------------


@dataclass
class SynthConfig:
    """Generator settings.

    Each planted pair ``(source, partner, strength)`` activates ``partner``
    with probability ``strength`` whenever ``source`` is active.
    """

    num_labels: int = 10
    num_train: int = 1000
    num_val: int = 150
    num_test: int = 300
    planted: list[tuple[int, int, float]] = field(
        default_factory=lambda: [(0, 1, 0.8), (2, 3, 0.8), (4, 5, 0.8)]
    )
    keywords_per_label: int = 12
    noise_vocab: int = 300
    reviews_per_sample: tuple[int, int] = (2, 4)
    words_per_review: tuple[int, int] = (3, 8)
    noise_word_fraction: float = 0.3
    base_rate: float = 0.05
    seed: int = 0
    resample_budget: int = 1000

    def __post_init__(self):
        self.planted = [(int(a), int(b), float(s)) for a, b, s in self.planted]
        self.reviews_per_sample = tuple(self.reviews_per_sample)
        self.words_per_review = tuple(self.words_per_review)
        self.validate()

    def validate(self) -> None:
        if self.num_labels < MIN_LABELS:
            raise CorpusError(f"need at least {MIN_LABELS} labels")
        seen = set()
        for a, b, s in self.planted:
            if not (0 <= a < self.num_labels and 0 <= b < self.num_labels) or a == b:
                raise CorpusError(f"planted pair ({a}, {b}) does not name two distinct valid labels")
            if not 0.0 < s < 1.0:
                raise CorpusError(f"planted strength must lie in (0, 1), got {s}")
            key = frozenset((a, b))
            if key in seen:
                raise CorpusError(f"label pair ({a}, {b}) planted twice")
            seen.add(key)
        if not 0.0 <= self.noise_word_fraction < 1.0:
            raise CorpusError("noise_word_fraction must lie in [0, 1)")
        if not 0.0 <= self.base_rate < 1.0:
            raise CorpusError("base_rate must lie in [0, 1)")
        for name in ("reviews_per_sample", "words_per_review"):
            lo, hi = getattr(self, name)
            if not 1 <= lo <= hi:
                raise CorpusError(f"{name} must be a range 1 <= lo <= hi, got {(lo, hi)}")
        if self.keywords_per_label < 1 or self.noise_vocab < 1:
            raise CorpusError("lexicons must be non-empty")
        if min(self.num_train, self.num_val, self.num_test) < 1:
            raise CorpusError("every split needs at least one sample")

    @classmethod
    def from_json(cls, obj: dict) -> "SynthConfig":
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise CorpusError(f"unknown generator settings: {sorted(unknown)}")
        return cls(**obj)

    def to_json(self) -> dict:
        out = asdict(self)
        out["planted"] = [list(p) for p in self.planted]
        out["reviews_per_sample"] = list(self.reviews_per_sample)
        out["words_per_review"] = list(self.words_per_review)
        return out


def label_names(num_labels: int) -> list[str]:
    return [f"L{i}" for i in range(num_labels)]


def keyword(label: int, k: int) -> str:
    return f"kw{label}_{k}"


def noise_word(k: int) -> str:
    return f"w{k}"


@dataclass
class SyntheticCorpus:
    train: Dataset
    val: Dataset
    test: Dataset
    cooccurrence: np.ndarray  # realized co-occurrence counts over all splits, label_space order
    config: SynthConfig

    @property
    def splits(self) -> dict[str, Dataset]:
        return {"train": self.train, "val": self.val, "test": self.test}


def _draw_labels(cfg: SynthConfig, rng: np.random.Generator) -> set[int]:
    m = cfg.num_labels
    for _ in range(cfg.resample_budget):
        active = {int(rng.integers(m))}
        tried: set[int] = set()

        def propagate():
            grew = True
            while grew:
                grew = False
                for k, (a, b, s) in enumerate(cfg.planted):
                    if k in tried or a not in active:
                        continue
                    tried.add(k)
                    if rng.random() < s and b not in active:
                        active.add(b)
                        grew = True

        propagate()
        # base-rate rounds until the band's lower edge is reached
        for _ in range(cfg.resample_budget):
            if len(active) >= MIN_LABELS:
                break
            draws = rng.random(m) < cfg.base_rate
            active.update(int(j) for j in np.flatnonzero(draws))
            propagate()
        if MIN_LABELS <= len(active) <= MAX_LABELS:
            return active
    raise CorpusError(
        f"could not draw a label set of size {MIN_LABELS}..{MAX_LABELS} within "
        f"{cfg.resample_budget} attempts; the planted strengths or base rate make the band unreachable"
    )


def _draw_sample(cfg: SynthConfig, index: int, names: list[str]) -> Sample:
    rng = np.random.default_rng([cfg.seed, index])
    active = sorted(_draw_labels(cfg, rng))
    reviews = []
    n_reviews = int(rng.integers(cfg.reviews_per_sample[0], cfg.reviews_per_sample[1] + 1))
    for _ in range(n_reviews):
        length = int(rng.integers(cfg.words_per_review[0], cfg.words_per_review[1] + 1))
        words = []
        for _ in range(length):
            if rng.random() < cfg.noise_word_fraction:
                words.append(noise_word(int(rng.integers(cfg.noise_vocab))))
            else:
                lab = active[int(rng.integers(len(active)))]
                words.append(keyword(lab, int(rng.integers(cfg.keywords_per_label))))
        reviews.append(tuple(words))
    return Sample(
        id=f"s{index:06d}",
        title=f"synthetic item {index}",
        reviews=tuple(reviews),
        labels=tuple(names[j] for j in active),
    )


def cooccurrence_counts(dataset: Dataset) -> np.ndarray:
    y = dataset.label_matrix()
    return (y.T @ y).astype(np.int64)


def generate_synthetic(config: SynthConfig, max_vocab: int = DEFAULT_VOCAB_SIZE) -> SyntheticCorpus:
    """Draw train/val/test samples; the vocabulary comes from the train split only.

    Label ``L<i>`` is the generator's label ``i``; its position in
    ``label_space`` follows first appearance in the train split.
    """
    config.validate()
    names = label_names(config.num_labels)
    total = config.num_train + config.num_val + config.num_test
    samples = [_draw_sample(config, i, names) for i in range(total)]
    tr = samples[: config.num_train]
    va = samples[config.num_train : config.num_train + config.num_val]
    te = samples[config.num_train + config.num_val :]
    vocab = build_vocab(tr, max_vocab)
    # first-appearance order, the order load_jsonl reconstructs from the train file
    order = list(dict.fromkeys(lab for s in tr for lab in s.labels))
    order += [n for n in names if n not in set(order)]
    train, val, test = (Dataset(part, order, vocab) for part in (tr, va, te))
    everything = Dataset(samples, order, vocab)
    return SyntheticCorpus(train, val, test, cooccurrence_counts(everything), config)


def truth_csv(matrix: np.ndarray, names: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["label", *names])
    for name, row in zip(names, matrix):
        writer.writerow([name, *(int(v) for v in row)])
    return buf.getvalue()


def write_synthetic(corpus: SyntheticCorpus, out_dir: str | Path) -> dict[str, Path]:
    """Write ``<split>.jsonl`` plus a ``<split>.truth.csv`` co-occurrence sidecar per split."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = corpus.train.label_space
    paths = {}
    for name, ds in corpus.splits.items():
        path = out_dir / f"{name}.jsonl"
        write_jsonl(ds, path)
        (out_dir / f"{name}.truth.csv").write_text(truth_csv(cooccurrence_counts(ds), names), encoding="utf-8")
        paths[name] = path
    return paths


def dataset_stats(dataset: Dataset) -> dict:
    if not dataset.samples:
        raise CorpusError("statistics of an empty dataset are undefined")
    n = len(dataset.samples)
    n_reviews = sum(len(s.reviews) for s in dataset.samples)
    n_words = sum(len(r) for s in dataset.samples for r in s.reviews)
    freq = Counter(lab for s in dataset.samples for lab in s.labels)
    return {
        "samples": n,
        "labels": dataset.num_labels,
        "mean_labels_per_sample": sum(len(s.labels) for s in dataset.samples) / n,
        "mean_reviews_per_sample": n_reviews / n,
        "mean_words_per_review": n_words / n_reviews,
        "label_frequency": {lab: freq.get(lab, 0) / n for lab in dataset.label_space},
    }


def format_stats(stats: dict) -> str:
    lines = [
        f"samples              {stats['samples']}",
        f"labels               {stats['labels']}",
        f"labels / sample      {stats['mean_labels_per_sample']:.3f}",
        f"reviews / sample     {stats['mean_reviews_per_sample']:.3f}",
        f"words / review       {stats['mean_words_per_review']:.3f}",
        "label frequency (% of samples):",
    ]
    for lab, f in sorted(stats["label_frequency"].items(), key=lambda kv: -kv[1]):
        lines.append(f"  {lab:<20} {100 * f:6.1f}")
    return "\n".join(lines)
