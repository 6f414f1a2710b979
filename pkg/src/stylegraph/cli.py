"""Command-line entry point: gen-data, train, eval, ablation, predict, heatmap."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checkpoint
from .baselines import BASELINE_NAMES, BaselineError, BaselinePipeline
from .corpus import (
    DEFAULT_VOCAB_SIZE,
    CorpusError,
    Dataset,
    SynthConfig,
    dataset_stats,
    format_stats,
    generate_synthetic,
    load_jsonl,
    write_synthetic,
)
from .labelgraph import DEFAULT_TAU, DEFAULT_THRESHOLD, LossError, select_labels
from .metrics import EvalInstance, MetricsReport, evaluate, report_json
from .model import NEURAL_VARIANTS, ModelConfig, StyleClassifier, dataset_targets
from .train import DivergenceError, TrainConfig, log_line, train

logger = logging.getLogger("stylegraph")

VARIANTS = NEURAL_VARIANTS + BASELINE_NAMES
ABLATION_ROWS = ("han", "han+lg", "han+lg+st")


class CommandError(RuntimeError):
    pass


@dataclass
class RunConfig:
    variant: str = "han+lg+st"
    tau: float = DEFAULT_TAU
    threshold: float = DEFAULT_THRESHOLD
    hidden: int = 128
    emb_dim: int = 128
    attn_dim: int = 128
    vocab: int = DEFAULT_VOCAB_SIZE
    lr: float = 1e-3
    batch_size: int = 128
    epochs: int = 100
    seed: int = 0
    patience: int | None = None
    max_reviews: int = 40
    max_words: int = 32
    freeze_graph: bool = False
    soft_term: bool | None = None
    detach_targets: bool = False
    literal_loss: bool = False
    graph_axis: int = 0
    fallback: bool = True
    baseline: dict = field(default_factory=dict)  # extra settings for the classical models
    train: str | None = None
    val: str | None = None
    test: str | None = None
    out: str | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise CommandError(f"unknown variant {self.variant!r}; expected one of {', '.join(VARIANTS)}")
        if self.epochs < 1:
            raise CommandError("epochs must be at least 1")

    @property
    def is_neural(self) -> bool:
        return self.variant in NEURAL_VARIANTS

    def model_config(self, variant: str | None = None) -> ModelConfig:
        return ModelConfig(
            variant=variant or self.variant,
            tau=self.tau,
            threshold=self.threshold,
            hidden=self.hidden,
            emb_dim=self.emb_dim,
            attn_dim=self.attn_dim,
            max_reviews=self.max_reviews,
            max_words=self.max_words,
            freeze_graph=self.freeze_graph,
            soft_term=self.soft_term,
            detach_targets=self.detach_targets,
            literal_loss=self.literal_loss,
            graph_axis=self.graph_axis,
            fallback=self.fallback,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(lr=self.lr, batch_size=self.batch_size, epochs=self.epochs, seed=self.seed, patience=self.patience)

    def baseline_config(self) -> dict:
        return {"threshold": self.threshold, "fallback": self.fallback, **self.baseline}


RUN_FIELDS = {f.name for f in fields(RunConfig)}


def _read_json(path: str) -> dict:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CommandError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(obj, dict):
        raise CommandError(f"{path}: expected a JSON object")
    return obj


def resolve_run_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the config file, then flags given on the command line."""
    merged: dict = {}
    if getattr(args, "config", None):
        file_cfg = _read_json(args.config)
        unknown = set(file_cfg) - RUN_FIELDS
        if unknown:
            raise CommandError(f"{args.config}: unknown settings {sorted(unknown)}")
        merged.update(file_cfg)
    merged.update({k: v for k, v in vars(args).items() if k in RUN_FIELDS and v is not None})
    return RunConfig(**merged)


# -- data helpers --------------------------------------------------------------


def _require(path: str | None, flag: str) -> str:
    if not path:
        raise CommandError(f"{flag} is required")
    if not Path(path).exists():
        raise CommandError(f"{flag}: no such file {path}")
    return path


def load_with(path: str, vocabulary, label_space: Sequence[str]) -> Dataset:
    try:
        return load_jsonl(path, vocabulary=vocabulary, label_space=label_space)
    except CorpusError as exc:
        if "label space" in str(exc):
            # re-read just to list every difference
            raw = load_jsonl(path)
            missing = [lab for lab in raw.label_space if lab not in set(label_space)]
            raise CommandError(
                f"label-space mismatch: {path} uses {missing} which the model does not know "
                f"(model labels: {list(label_space)})"
            ) from None
        raise


def train_frequency(dataset: Dataset) -> list[float]:
    freq = dataset_stats(dataset)["label_frequency"]
    return [freq[lab] for lab in dataset.label_space]


# -- model adapters --------------------------------------------------------------


def load_model(path: str):
    header, arrays = checkpoint.load(_require(path, "--checkpoint"))
    if header.get("kind") == "neural":
        return StyleClassifier.from_checkpoint(header, arrays), header
    if header.get("kind") == "baseline":
        return BaselinePipeline.from_checkpoint(header, arrays), header
    raise CommandError(f"{path}: unrecognised checkpoint kind {header.get('kind')!r}")


def model_vocabulary(model):
    return model.vocabulary if isinstance(model, StyleClassifier) else model.features.vocabulary


def predict_all(model, samples, threshold: float | None = None) -> tuple[np.ndarray, list[list[int]], list[list[int]]]:
    """Scores, rankings and selected label indices for every sample."""
    scores = model.scores(samples)
    rankings, chosen = [], []
    if isinstance(model, StyleClassifier):
        p = model.config.threshold if threshold is None else threshold
        for e in scores:
            r = select_labels(e, p, model.config.fallback)
            rankings.append(r.ranking)
            chosen.append(r.selected)
    else:
        if threshold is not None:
            model.model.threshold = threshold
        chosen = model.predict(samples)
        rankings = [select_labels(e, model.model.threshold, True).ranking if len(e) else [] for e in scores]
    return scores, rankings, chosen


def evaluate_on(model, dataset: Dataset, threshold: float | None = None, frequency=None) -> MetricsReport:
    scores, _, chosen = predict_all(model, dataset.samples, threshold)
    gold = dataset_targets(dataset, model.label_space)
    inst = [EvalInstance.of(np.flatnonzero(g), c, e) for g, c, e in zip(gold, chosen, scores)]
    return evaluate(inst, model.label_space, frequency)


# -- commands ---------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = SynthConfig.from_json(_read_json(args.config)) if args.config else SynthConfig()
    if args.seed is not None:
        cfg = SynthConfig(**{**cfg.to_json(), "seed": args.seed})
    out = Path(args.out or ".")
    corpus = generate_synthetic(cfg)
    write_synthetic(corpus, out)
    (out / "synth_config.json").write_text(json.dumps(cfg.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    for name, ds in corpus.splits.items():
        print(f"== {name} ==")
        print(format_stats(dataset_stats(ds)))
    return 0


def _load_splits(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    train_set = load_jsonl(_require(cfg.train, "--train"), max_vocab=cfg.vocab)
    val_set = load_with(_require(cfg.val, "--val"), train_set.vocabulary, train_set.label_space)
    return train_set, val_set


def fit_variant(cfg: RunConfig, variant: str, train_set: Dataset, val_set: Dataset, log) -> tuple[object, dict]:
    """Train one variant; ``log`` receives JSON-serialisable records."""
    if variant in NEURAL_VARIANTS:
        model = StyleClassifier.create(cfg.model_config(variant), train_set.vocabulary, train_set.label_space, seed=cfg.seed)
        result = train(model, train_set, val_set, cfg.train_config(), on_epoch=lambda rec: log({"variant": variant, **rec}))
        summary = {"best_epoch": result.best_epoch, "val": result.best_val}
    else:
        model = BaselinePipeline.train(variant, train_set, cfg.baseline_config(), emb_dim=cfg.emb_dim, seed=cfg.seed)
        summary = {"val": evaluate_on(model, val_set).headline()}
    log({"variant": variant, "final": summary})
    return model, summary


def _logger_to(path: Path | None):
    handle = open(path, "w", encoding="utf-8") if path else None

    def log(record: dict) -> None:
        line = log_line(record)
        print(line, flush=True)
        if handle:
            handle.write(line + "\n")
            handle.flush()

    return log, handle


def cmd_train(args) -> int:
    cfg = resolve_run_config(args)
    train_set, val_set = _load_splits(cfg)
    out = Path(cfg.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    log, handle = _logger_to(out / "train.log.jsonl")
    try:
        model, _ = fit_variant(cfg, cfg.variant, train_set, val_set, log)
    finally:
        if handle:
            handle.close()
    # the output location is left out so reruns elsewhere stay byte-identical
    echo = {k: v for k, v in asdict(cfg).items() if k != "out"}
    extra = {"run_config": echo, "train_frequency": train_frequency(train_set)}
    model.save(out / "model.ckpt", extra)
    return 0


def _print_report(report: MetricsReport, fmt: str, out: str | None) -> None:
    text = report_json(report)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    if fmt == "json":
        print(text)
        return
    print(report.format_table())
    if report.per_label:
        print()
        print(f"{'label':<20} {'train %':>8} {'F1':>7}  flag")
        for row in report.per_label:
            print(f"{row.label:<20} {100 * row.support:8.1f} {row.f1:7.3f}  {row.flag}")


def cmd_eval(args) -> int:
    model, header = load_model(args.checkpoint)
    test_path = _require(args.test, "--test")
    dataset = load_with(test_path, model_vocabulary(model), model.label_space)
    report = evaluate_on(model, dataset, args.threshold, header.get("train_frequency"))
    _print_report(report, args.format, args.out)
    return 0


def cmd_ablation(args) -> int:
    cfg = resolve_run_config(args)
    train_set, val_set = _load_splits(cfg)
    test_set = load_with(_require(cfg.test, "--test"), train_set.vocabulary, train_set.label_space)
    out = Path(cfg.out) if cfg.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    log, handle = _logger_to(out / "ablation.log.jsonl" if out else None)
    seeds = args.seeds or [cfg.seed]
    rows: dict[str, list[dict]] = {v: [] for v in args.variants}
    try:
        for seed in seeds:
            run = RunConfig(**{**asdict(cfg), "seed": seed})
            for variant in args.variants:
                try:
                    model, _ = fit_variant(run, variant, train_set, val_set, log)
                except (DivergenceError, LossError) as exc:
                    # keep going: every row gets reported
                    log({"variant": variant, "seed": seed, "error": str(exc)})
                    continue
                metrics = evaluate_on(model, test_set).headline()
                rows[variant].append(metrics)
                log({"variant": variant, "seed": seed, "test": metrics})
    finally:
        if handle:
            handle.close()
    table = ablation_table(rows)
    print(table, file=sys.stderr if args.quiet_table else sys.stdout)
    if out:
        (out / "ablation.txt").write_text(table + "\n", encoding="utf-8")
    return 0


def ablation_table(rows: dict[str, list[dict]]) -> str:
    lines = [f"{'Model':<14}{'OE(-)':>8}{'HL(-)':>8}{'MacroF1(+)':>12}{'MicroF1(+)':>12}{'runs':>6}"]
    for variant, runs in rows.items():
        if not runs:
            lines.append(f"{variant:<14}{'failed':>8}")
            continue
        mean = {k: float(np.mean([r[k] for r in runs])) for k in runs[0]}
        lines.append(
            f"{variant:<14}{mean['one_error']:8.3f}{mean['hamming_loss']:8.3f}"
            f"{mean['macro_f1']:12.3f}{mean['micro_f1']:12.3f}{len(runs):6d}"
        )
    return "\n".join(lines)


def cmd_predict(args) -> int:
    model, _ = load_model(args.checkpoint)
    path = _require(args.input, "--input")
    dataset = load_jsonl(path, vocabulary=model_vocabulary(model), label_space=None)
    scores, rankings, chosen = predict_all(model, dataset.samples, args.threshold)
    names = model.label_space
    for s, e, r, c in zip(dataset.samples, scores, rankings, chosen):
        print(
            json.dumps(
                {
                    "id": s.id,
                    "styles": [names[j] for j in c],
                    "ranking": [names[j] for j in r],
                    "scores": {names[j]: float(e[j]) for j in range(len(names))},
                },
                ensure_ascii=False,
            )
        )
    return 0


def graph_csv(matrix: np.ndarray, names: Sequence[str]) -> str:
    lines = [",".join(["label", *names])]
    for name, row in zip(names, matrix):
        lines.append(",".join([name, *(repr(float(v)) for v in row)]))
    return "\n".join(lines) + "\n"


def pgm_bytes(matrix: np.ndarray, invert: bool = False, off_diagonal: bool = False) -> bytes:
    """8-bit binary PGM, pixel = round(255 (v - min) / (max - min))."""
    m = matrix.shape[0]
    basis = matrix[~np.eye(m, dtype=bool)] if off_diagonal and m > 1 else matrix.ravel()
    lo, hi = float(basis.min()), float(basis.max())
    if hi > lo:
        pixels = np.clip(np.round(255 * (matrix - lo) / (hi - lo)), 0, 255)
    else:
        pixels = np.zeros_like(matrix)
    pixels = pixels.astype(np.uint8)
    if invert:
        pixels = 255 - pixels
    return f"P5\n{matrix.shape[1]} {m}\n255\n".encode("ascii") + pixels.tobytes()


def cmd_heatmap(args) -> int:
    model, _ = load_model(args.checkpoint)
    if not isinstance(model, StyleClassifier) or model.graph() is None:
        variant = model.config.variant if isinstance(model, StyleClassifier) else model.model.name
        raise CommandError(f"variant {variant!r} has no label graph to draw")
    names = model.label_space
    prefix = args.out or "graph"
    Path(prefix).parent.mkdir(parents=True, exist_ok=True)
    for tag, matrix in (("G", model.graph()), ("Gp", model.smoothed_graph(args.tau))):
        Path(f"{prefix}.{tag}.csv").write_text(graph_csv(matrix, names), encoding="utf-8")
        Path(f"{prefix}.{tag}.pgm").write_bytes(pgm_bytes(matrix, args.invert, args.off_diagonal))
        print(f"{prefix}.{tag}.csv")
        print(f"{prefix}.{tag}.pgm")
    return 0


# -- parser -------------------------------------------------------------------------


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    # every default is None so the config file can fill what the command line leaves out
    p.add_argument("--config", help="JSON file of run settings (flags given here win)")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--tau", type=float)
    p.add_argument("--threshold", type=float)
    p.add_argument("--hidden", type=int)
    p.add_argument("--emb-dim", dest="emb_dim", type=int)
    p.add_argument("--attn-dim", dest="attn_dim", type=int)
    p.add_argument("--vocab", type=int, help="vocabulary cap including reserved entries")
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--max-reviews", dest="max_reviews", type=int)
    p.add_argument("--max-words", dest="max_words", type=int)
    p.add_argument("--freeze-graph", dest="freeze_graph", type=_bool)
    p.add_argument("--soft-term", dest="soft_term", type=_bool)
    p.add_argument("--detach-targets", dest="detach_targets", type=_bool)
    p.add_argument("--literal-loss", dest="literal_loss", type=_bool)
    p.add_argument("--graph-axis", dest="graph_axis", type=int, choices=(0, 1))
    p.add_argument("--fallback", type=_bool)
    p.add_argument("--train")
    p.add_argument("--val")
    p.add_argument("--test")
    p.add_argument("--out")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stylegraph", description="Multi-label music style classification from reviews.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic corpus with planted label correlations")
    p.add_argument("--config", help="JSON generator settings")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one variant and save the best-validation checkpoint")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a labelled file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--threshold", type=float)
    p.add_argument("--format", choices=("table", "json"), default="table")
    p.add_argument("--out", help="also write the JSON report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablation", help="train HAN, +LG and +ST on shared data and compare")
    _add_run_flags(p)
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--variants", nargs="+", choices=VARIANTS, default=list(ABLATION_ROWS))
    p.add_argument("--quiet-table", action="store_true", help="send the summary table to stderr")
    p.set_defaults(func=cmd_ablation)

    p = sub.add_parser("predict", help="emit predicted styles for every sample as JSON lines")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--threshold", type=float)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("heatmap", help="export G and G' as CSV and PGM")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", help="output path prefix")
    p.add_argument("--tau", type=float)
    p.add_argument("--invert", action="store_true", help="darker pixel = larger value")
    p.add_argument("--off-diagonal", dest="off_diagonal", action="store_true", help="normalise over off-diagonal entries only")
    p.set_defaults(func=cmd_heatmap)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CommandError, CorpusError, BaselineError, checkpoint.CheckpointError, DivergenceError, LossError, ValueError, OSError) as exc:
        print(f"stylegraph: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
