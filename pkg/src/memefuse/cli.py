"""Command-line entry point: ``memefuse {stats,synth,train,eval,compare}``.

Exit codes: 0 success, 1 runtime failure, 2 input validation failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import corpus as corpus_mod
from .evaluation import (
    PUBLISHED_CONFUSIONS,
    ConfusionMatrix,
    plot_confusion,
    render_comparison,
    report_from_predictions,
    weighted_report,
)
from .experiment import REFERENCE_MODELS, ConfigError, ExperimentConfig, build_model, reference_name
from .synthetic import generate_synthetic_corpus
from .training import load_checkpoint, predict, read_predictions, train

log = logging.getLogger("memefuse")

EXIT_OK, EXIT_RUNTIME, EXIT_INPUT = 0, 1, 2
COMPARISON_FILE = "comparison.csv"
COMPARISON_COLUMNS = ("run_id", "approach", "classifier", "precision", "recall", "f1")


class UsageError(Exception):
    pass


class MissingCheckpoint(FileNotFoundError):
    pass


def _reference_models_epilog() -> str:
    lines = ["reference configurations (--approach / --model -> name in the results table):"]
    for m in REFERENCE_MODELS:
        lines.append(f"  {m.approach:<10} {m.key:<17} {m.name}")
    return "\n".join(lines)


def _global_flags() -> argparse.ArgumentParser:
    # shared by every subcommand so flags may follow the subcommand name
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="experiment config JSON")
    p.add_argument("--seed", type=int, default=None)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--offline", dest="offline", action="store_true", default=None,
                      help="use stub backbones/transformers (default)")
    mode.add_argument("--online", dest="offline", action="store_false",
                      help="download pretrained weights (cache: $MEMEFUSE_CACHE)")
    p.add_argument("--out", type=Path, default=None, help="output directory (default: runs)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = argparse.ArgumentParser(
        prog="memefuse",
        description="Troll meme classification: visual, textual and early-fusion models.",
        epilog=_reference_models_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", parents=[common], help="caption statistics and class distribution")
    p.add_argument("manifest", type=Path)
    p.add_argument("--image-root", type=Path, default=None, help="default: manifest directory")
    p.add_argument("--split", default="train", choices=corpus_mod.SPLITS)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic corpus")
    p.add_argument("--n-per-class", type=int, default=8)

    p = sub.add_parser("train", parents=[common], help="train one model",
                       epilog=_reference_models_epilog(), formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--manifest", type=Path)
    p.add_argument("--image-root", type=Path, default=None)
    p.add_argument("--approach", choices=("visual", "textual", "multimodal"))
    p.add_argument("--model")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--patience", type=int, help="early-stopping patience; 0 disables")
    p.add_argument("--max-len", type=int)
    p.add_argument("--allow-nonreference", action="store_true", default=None)

    p = sub.add_parser("eval", parents=[common], help="evaluate a run on the test split")
    p.add_argument("run_dir", type=Path)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--image-root", type=Path, default=None)
    p.add_argument("--use-predictions", action="store_true",
                   help="score the run's predictions.csv instead of re-running the model")

    p = sub.add_parser("compare", parents=[common], help="render a comparison table")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--runs", type=Path, help=f"directory containing {COMPARISON_FILE}")
    src.add_argument("--published", action="store_true",
                     help="recompute the table rows from the published confusion matrices")
    return parser


def _image_root(manifest: Path, root: Path | None) -> Path:
    return root if root is not None else manifest.parent


def _load_config(args) -> ExperimentConfig:
    data = {}
    if args.config is not None:
        try:
            data = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
    cfg = ExperimentConfig.from_dict(data)
    cfg.plan_overrides = dict(cfg.plan_overrides)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.offline is not None:
        cfg.offline = args.offline
    if args.out is not None:
        cfg.out = str(args.out)
    return cfg


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_stats(args) -> int:
    root = _image_root(args.manifest, args.image_root)
    corpus = corpus_mod.load_manifest(args.manifest, root)
    stats = corpus_mod.compute_caption_stats(corpus.split(args.split))
    result = {
        "split": args.split,
        "caption_stats": stats.to_dict(),
        "class_distribution": corpus_mod.class_distribution(corpus),
    }
    text = json.dumps(result, indent=2)
    print(text)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "stats.json").write_text(text + "\n")
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.n_per_class < 1:
        raise UsageError("--n-per-class must be >= 1")
    seed = args.seed if args.seed is not None else 0
    out = args.out if args.out is not None else Path("synthetic")
    _, manifest = generate_synthetic_corpus(args.n_per_class, seed, out)
    print(manifest)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    if args.manifest is not None:
        cfg.manifest = str(args.manifest)
    if args.image_root is not None:
        cfg.image_root = str(args.image_root)
    if args.approach is not None:
        cfg.approach = args.approach
    if args.model is not None:
        cfg.model = args.model
    if args.max_len is not None:
        cfg.max_len = args.max_len
    if args.allow_nonreference:
        cfg.allow_nonreference = True
    for name in ("epochs", "batch", "lr"):
        if getattr(args, name) is not None:
            cfg.plan_overrides[name] = getattr(args, name)
    if args.patience is not None:
        cfg.plan_overrides["early_stopping"] = args.patience or None
    if not cfg.manifest:
        raise UsageError("a manifest is required (--manifest or config)")
    cfg.validate()

    manifest = Path(cfg.manifest)
    corpus = corpus_mod.load_manifest(manifest, cfg.image_root or manifest.parent)
    run_id = cfg.run_id()
    run_dir = Path(cfg.out) / run_id
    if run_dir.exists():
        log.warning("run %s already exists; its outputs will be overwritten", run_id)

    model = build_model(cfg, corpus.train)
    extra = {"experiment": cfg.to_dict(), "run_id": run_id, "reference_name": reference_name(cfg.approach, cfg.model)}
    record = train(model, cfg.plan(), corpus, run_dir, config=extra, run_id=run_id)
    print(json.dumps(record.summary(), indent=2))
    print(run_dir)
    return EXIT_OK


def _restore_model(run_dir: Path, config: dict):
    ckpt_path = run_dir / "best.ckpt"
    if not ckpt_path.is_file():
        raise MissingCheckpoint(f"{ckpt_path} not found")
    cfg = ExperimentConfig.from_dict(config["experiment"])
    ckpt = load_checkpoint(ckpt_path)
    vocab = None
    if "vocab" in ckpt["extra"]:
        vocab = corpus_mod.Vocabulary.from_dict(ckpt["extra"]["vocab"])
    model = build_model(cfg, vocab=vocab)
    model.load_state_dict(ckpt["state_dict"])
    model.eval()
    return model, cfg


def _update_comparison(path: Path, row: dict) -> None:
    rows = []
    if path.is_file():
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.DictReader(fh) if r["run_id"] != row["run_id"]]
    rows.append({k: str(row[k]) for k in COMPARISON_COLUMNS})
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=COMPARISON_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def cmd_eval(args) -> int:
    run_dir = args.run_dir
    config_path = run_dir / "config.json"
    if not config_path.is_file():
        raise UsageError(f"{run_dir} is not a run directory (no config.json)")
    config = json.loads(config_path.read_text())
    corpus = corpus_mod.load_manifest(args.manifest, _image_root(args.manifest, args.image_root))
    test = corpus.test
    if not test or any(r.label is None for r in test):
        raise UsageError("the manifest's test split must be non-empty and labeled")

    if args.use_predictions:
        probs = dict(read_predictions(run_dir / "predictions.csv"))
        missing = [r.id for r in test if r.id not in probs]
        if missing:
            raise UsageError(f"predictions.csv lacks test ids {missing[:5]}")
        preds = [(r.id, probs[r.id]) for r in test]
    else:
        model, _ = _restore_model(run_dir, config)
        preds = predict(model, test)

    report = report_from_predictions([r.label for r in test], [p for _, p in preds])
    report.to_json(run_dir / "report.json")
    exp = config.get("experiment", {})
    title = reference_name(exp.get("approach", ""), exp.get("model", "")) or exp.get("model")
    plot_confusion(report.confusion, run_dir / "confusion.png", title=title)
    _update_comparison(run_dir.parent / COMPARISON_FILE, {
        "run_id": config.get("run_id", run_dir.name),
        "approach": exp.get("approach", ""),
        "classifier": title or "",
        "precision": repr(report.precision),
        "recall": repr(report.recall),
        "f1": repr(report.f1),
    })
    print(report.to_json(), end="")
    return EXIT_OK


class _FixedReport:
    """Comparison-table row source for metrics already stored as numbers."""

    def __init__(self, p, r, f):
        from fractions import Fraction

        self.precision, self.recall, self.f1 = p, r, f
        self.weighted_f1_exact = Fraction(f)


def cmd_compare(args) -> int:
    if args.published:
        entries = [(a, c, weighted_report(ConfusionMatrix.of(cm))) for (a, c), cm in PUBLISHED_CONFUSIONS.items()]
    else:
        path = args.runs / COMPARISON_FILE
        if not path.is_file():
            raise UsageError(f"{path} not found; run `memefuse eval` first")
        with open(path, newline="", encoding="utf-8") as fh:
            entries = [
                (r["approach"], r["classifier"], _FixedReport(float(r["precision"]), float(r["recall"]), float(r["f1"])))
                for r in csv.DictReader(fh)
            ]
        if not entries:
            raise UsageError(f"{path} has no rows")
    table = render_comparison(entries)
    print(table.to_text(), end="")
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        table.to_csv(args.out / "comparison_table.csv")
        (args.out / "comparison_table.txt").write_text(table.to_text())
    return EXIT_OK


COMMANDS = {"stats": cmd_stats, "synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "compare": cmd_compare}

INPUT_ERRORS = (UsageError, ConfigError, corpus_mod.CorpusError, MissingCheckpoint)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - top-level reporting
        log.debug("command failed", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
