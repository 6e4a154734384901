"""Command-line entry point: ``slotfocus {train,eval,augment,gradcheck,tag}``.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numeric failure.
Every command writes a JSON run manifest next to its outputs. The default
output directory comes from ``$SLOTFOCUS_OUTPUT_DIR`` (else ``./runs``).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import autodiff as ad
from .chunkeval import comparison_table
from .corpus import CorpusError, IOBError, SlotLexicon, Vocabulary, augment, read_conll, split_corpus, write_conll
from .decode import tag_file
from .gradcheck import check_model
from .model import CheckpointError, Mechanism, load_checkpoint
from .training import NonFiniteGradient, TrainConfig, evaluate, grid_search, train

log = logging.getLogger("slotfocus")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3
OUTPUT_ENV = "SLOTFOCUS_OUTPUT_DIR"
GRADCHECK_TOLERANCE = 1e-4


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(path, command: str, config: dict, inputs: dict, outputs: dict,
                   seed: int | None) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "dtype": np.dtype(ad.default_dtype()).name,
        "config": config,
        "inputs": {k: {"path": str(v), "sha256": _sha256(v)} for k, v in inputs.items() if v},
        "outputs": {k: str(v) for k, v in outputs.items()},
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUTPUT_ENV, "runs"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seed(args) -> int:
    if args.seed is None:
        log.warning("no --seed given; using seed 0")
        return 0
    return args.seed


def _load_tagger(path):
    model, meta = load_checkpoint(path)
    return model, Vocabulary(meta["words"], meta["tags"]), meta


# ----------------------------------------------------------------------------
# Commands


def cmd_train(args) -> int:
    seed = _seed(args)
    base = TrainConfig.load(args.config).to_dict() if args.config else {}
    overrides = {
        "learning_rate": args.lr, "epochs": args.epochs, "dropout_p": args.dropout,
        "mechanism": args.mechanism, "beam_size": args.beam, "min_count": args.min_count,
        "emb_dim": args.emb_dim, "hidden": args.hidden, "label_dim": args.label_dim,
        "grid": args.grid_rates,
    }
    base.update({k: v for k, v in overrides.items() if v is not None})
    base["seed"] = seed
    if args.no_peephole:
        base["peephole"] = False
    try:
        config = TrainConfig.from_dict(base)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc

    if args.valid:
        train_pairs, valid_pairs = read_conll(args.train), read_conll(args.valid)
    elif args.split:
        train_pairs, valid_pairs = split_corpus(read_conll(args.train), args.split, seed)
    else:
        raise ConfigError("give --valid FILE or --split FRACTION")

    out = _out_dir(args)
    outputs = {"checkpoint": out / "checkpoint.npz", "log": out / "train.jsonl",
               "manifest": out / "manifest.json"}
    if args.grid:
        result = grid_search(config, train_pairs, valid_pairs, jobs=args.jobs)
        outputs["grid"] = out / "grid.tsv"
        outputs["grid"].write_text(result.format_table(), encoding="utf-8")
        print(result.format_table(), end="")
        if result.best is None:
            log.error("every grid cell failed")
            return EXIT_NUMERIC
        record = result.best
    else:
        record = train(config, train_pairs, valid_pairs)
    record.save_checkpoint(outputs["checkpoint"])
    outputs["log"].write_text("\n".join(record.lines()) + "\n", encoding="utf-8")
    write_manifest(outputs["manifest"], "train", record.config.to_dict(),
                   {"train": args.train, "valid": args.valid, "config": args.config},
                   outputs, seed)
    print(f"best epoch {record.best_epoch}: validation F1 {record.best_f1:.2f} "
          f"(learning rate {record.config.learning_rate:g})")
    return 0


def cmd_eval(args) -> int:
    gold = read_conll(args.gold)
    checkpoints = [args.checkpoint] + ([args.compare] if args.compare else [])
    rows = []
    records = []
    for path in checkpoints:
        model, vocab, meta = _load_tagger(path)
        mechanism = Mechanism.parse(args.mechanism or model.config.mechanism)
        report = evaluate(model, mechanism, vocab, gold, args.beam)
        records.append({"checkpoint": str(path), "mechanism": mechanism.value,
                        **report.to_record()})
        rows.append(("BLSTM-LSTM", mechanism.value.capitalize(), report.f1))
        print(f"== {path} ({mechanism.value}, beam {args.beam})")
        print(report.to_text(), end="")
    if len(rows) > 1:
        print(comparison_table(rows, title=f"Chunk F1 on {args.gold}"), end="")
    out = _out_dir(args)
    outputs = {"report": out / "eval.json", "manifest": out / "eval_manifest.json"}
    outputs["report"].write_text(json.dumps(records, indent=2, sort_keys=True) + "\n",
                                 encoding="utf-8")
    write_manifest(outputs["manifest"], "eval", {"beam_size": args.beam, "mechanism": args.mechanism},
                   {"gold": args.gold, **{f"checkpoint{i}": p for i, p in enumerate(checkpoints)}},
                   outputs, None)
    return 0


def cmd_augment(args) -> int:
    if args.factor < 1:
        raise ConfigError("--factor must be >= 1")
    seed = _seed(args)
    pairs = read_conll(args.input)
    lexicon = SlotLexicon.load(args.lexicon) if args.lexicon else SlotLexicon.from_pairs(pairs)
    expanded = augment(pairs, lexicon, args.factor, seed)
    write_conll(args.output, expanded)
    outputs = {"corpus": args.output}
    if args.write_lexicon:
        lexicon.save(args.write_lexicon)
        outputs["lexicon"] = args.write_lexicon
    write_manifest(f"{args.output}.manifest.json", "augment",
                   {"factor": args.factor, "replace": "all-slots"},
                   {"input": args.input, "lexicon": args.lexicon}, outputs, seed)
    print(f"{len(pairs)} sentences -> {len(expanded)}")
    return 0


def cmd_gradcheck(args) -> int:
    if ad.default_dtype() is not np.float64:
        raise ConfigError("gradient checks need float64")
    seed = _seed(args)
    mechanisms = [args.mechanism] if args.mechanism else ["focus", "attention"]
    worst = 0.0
    results = {}
    for mech in mechanisms:
        result = check_model(mech, seed=seed, length=args.length, hidden=args.hidden,
                             emb_dim=args.emb_dim, n_labels=args.labels)
        results[mech] = result.max_error
        worst = max(worst, result.max_error)
        print(f"{mech}: max relative error {result.max_error:.3e} (worst tensor {result.worst()})")
    out = _out_dir(args)
    report = out / "gradcheck.json"
    report.write_text(json.dumps({"max_relative_error": results, "tolerance": GRADCHECK_TOLERANCE},
                                 indent=2) + "\n", encoding="utf-8")
    write_manifest(out / "gradcheck_manifest.json", "gradcheck",
                   {"length": args.length, "hidden": args.hidden, "emb_dim": args.emb_dim,
                    "labels": args.labels, "mechanisms": mechanisms}, {}, {"report": report}, seed)
    return 0 if worst < GRADCHECK_TOLERANCE else EXIT_NUMERIC


def cmd_tag(args) -> int:
    model, vocab, _ = _load_tagger(args.checkpoint)
    mechanism = Mechanism.parse(args.mechanism or model.config.mechanism)
    n = tag_file(model, mechanism, vocab, args.input, args.output, args.beam)
    write_manifest(f"{args.output}.manifest.json", "tag", {"beam_size": args.beam,
                   "mechanism": mechanism.value},
                   {"input": args.input, "checkpoint": args.checkpoint},
                   {"tagged": args.output}, None)
    log.info("tagged %d sentences", n)
    return 0


# ----------------------------------------------------------------------------
# Parser


def _rates(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of rates: {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="slotfocus", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, seed=True):
        p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./runs)")
        if seed:
            p.add_argument("--seed", type=int)

    p = sub.add_parser("train", help="train a tagger")
    p.add_argument("--train", required=True)
    p.add_argument("--valid")
    p.add_argument("--split", type=float, help="hold out 1-SPLIT of --train for validation")
    p.add_argument("--config", help="flat JSON config; flags override it")
    p.add_argument("--mechanism", choices=[m.value for m in Mechanism])
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--beam", type=int)
    p.add_argument("--min-count", type=int)
    p.add_argument("--emb-dim", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--label-dim", type=int)
    p.add_argument("--no-peephole", action="store_true")
    p.add_argument("--grid", action="store_true", help="search learning rates")
    p.add_argument("--grid-rates", type=_rates, help="comma-separated rates for --grid")
    p.add_argument("--jobs", type=int, default=1)
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on gold data")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--compare", help="second checkpoint for a side-by-side table")
    p.add_argument("--gold", required=True)
    p.add_argument("--beam", type=int, default=2)
    p.add_argument("--mechanism", choices=[m.value for m in Mechanism])
    common(p, seed=False)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("augment", help="expand a corpus by slot-value replacement")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--factor", type=int, default=10)
    p.add_argument("--lexicon", help="slot<TAB>value file (default: harvest from input)")
    p.add_argument("--write-lexicon")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("gradcheck", help="finite-difference check of model gradients")
    p.add_argument("--mechanism", choices=[m.value for m in Mechanism])
    p.add_argument("--length", type=int, default=5)
    p.add_argument("--hidden", type=int, default=4)
    p.add_argument("--emb-dim", type=int, default=3)
    p.add_argument("--labels", type=int, default=4)
    common(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("tag", help="tag a CoNLL or one-token-per-line file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--beam", type=int, default=2)
    p.add_argument("--mechanism", choices=[m.value for m in Mechanism])
    p.set_defaults(func=cmd_tag)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "beam", None) is not None and args.beam < 1:
        print("slotfocus: error: --beam must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"slotfocus: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteGradient as exc:
        print(f"slotfocus: numeric failure: {exc} (tensor {exc.name})", file=sys.stderr)
        return EXIT_NUMERIC
    except (ad.NumericError, FloatingPointError) as exc:
        print(f"slotfocus: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CorpusError, IOBError, CheckpointError, FileNotFoundError, UnicodeDecodeError) as exc:
        print(f"slotfocus: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        # remaining ValueErrors come from inconsistent inputs (unknown tags, bad ids)
        print(f"slotfocus: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
