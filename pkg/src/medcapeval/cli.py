"""``medcapeval`` command-line entry point.

Exit codes: 0 success, 1 input/validation error, 2 usage error.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from ._parallel import default_threads
from .caption_metrics import bertscore_aggregate, evaluate_captions
from .caption_text import collapse_repetitions
from .concept_scoring import evaluate_concepts
from .core import CaptionCorpus, EvalReport, ThresholdConfig
from .ingest import (
    parse_captions,
    parse_concept_annotations,
    parse_probability_matrix,
    parse_token_embeddings,
    write_captions,
    write_concept_predictions,
    write_probability_matrix,
    write_report,
    write_vocabulary,
)
from .thresholding import (
    DEFAULT_SWEEP,
    apply_threshold,
    ensemble_mean,
    filter_vocabulary,
    restrict_predictions,
    sweep_thresholds,
)

EXIT_OK, EXIT_INVALID, EXIT_USAGE = 0, 1, 2


class InputError(Exception):
    """Input files are individually valid but inconsistent with each other."""


def _unit_interval(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not (0.0 <= value <= 1.0):
        raise argparse.ArgumentTypeError("tau must be in [0,1]")
    return value


def _positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not value > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return value


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def _read(path: Path, parser, csv_mode: bool = False):
    # utf-8-sig drops a leading BOM; newline="" keeps quoted line breaks intact
    with open(path, encoding="utf-8-sig", newline="" if csv_mode else None) as fh:
        return parser(fh, path=str(path))


@contextlib.contextmanager
def _sink(path: Optional[Path]):
    if path is None:
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            yield fh


def _emit_report(report: EvalReport, args) -> None:
    with _sink(args.out) as fh:
        write_report(report, fh, args.format)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--threads", type=_positive_int, default=None,
        help="worker threads; None means all available CPUs. Output does not depend on it",
    )
    report = argparse.ArgumentParser(add_help=False)
    report.add_argument("--out", type=Path, default=None, help="output file; None means stdout")
    report.add_argument("--format", choices=("csv", "json"), default="csv", help="report format")

    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="medcapeval", description="Concept detection and caption evaluation toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("score-concepts", parents=[common, report], formatter_class=fmt,
                       help="accuracy / precision / recall / F1 of concept predictions")
    p.add_argument("--gold", type=Path, required=True, help="gold concept annotations")
    p.add_argument("--pred", type=Path, required=True, help="predicted concept annotations")
    p.add_argument("--label", default=None, help="report row label; None means the prediction file stem")

    p = sub.add_parser("apply-threshold", parents=[common], formatter_class=fmt,
                       help="turn a probability matrix into concept predictions")
    p.add_argument("--probs", type=Path, required=True, help="probability matrix CSV")
    p.add_argument("--tau", type=_unit_interval, required=True, help="keep concepts scoring strictly above tau")
    p.add_argument("--out", type=Path, default=None, help="output file; None means stdout")

    p = sub.add_parser("sweep", parents=[common, report], formatter_class=fmt,
                       help="evaluate a grid of thresholds against gold concepts")
    p.add_argument("--probs", type=Path, required=True, help="probability matrix CSV")
    p.add_argument("--gold", type=Path, required=True, help="gold concept annotations")
    p.add_argument("--start", type=_unit_interval, default=DEFAULT_SWEEP[0], help="first threshold")
    p.add_argument("--stop", type=_unit_interval, default=DEFAULT_SWEEP[1], help="last threshold")
    p.add_argument("--step", type=_positive_float, default=DEFAULT_SWEEP[2], help="grid spacing")

    p = sub.add_parser("ensemble", parents=[common], formatter_class=fmt,
                       help="element-wise mean of probability matrices")
    p.add_argument("--probs", type=Path, nargs="+", required=True, help="probability matrices with identical layout")
    p.add_argument("--out", type=Path, default=None, help="output file; None means stdout")

    p = sub.add_parser("filter-vocab", parents=[common], formatter_class=fmt,
                       help="keep concepts seen in at least --min-count training images")
    p.add_argument("--train", type=Path, required=True, help="training concept annotations")
    p.add_argument("--min-count", type=_positive_int, required=True, help="minimum number of training images")
    p.add_argument("--apply", type=Path, default=None, help="prediction file to restrict to the vocabulary")
    p.add_argument("--out", type=Path, default=None, help="output file; None means stdout")

    p = sub.add_parser("score-captions", parents=[common, report], formatter_class=fmt,
                       help="BLEU-1..4, ROUGE, METEOR (and BERTScore) of generated captions")
    p.add_argument("--gold", type=Path, required=True, help="gold caption CSV")
    p.add_argument("--pred", type=Path, required=True, help="generated caption CSV")
    p.add_argument("--process", action="store_true", help="collapse repetitions in generated captions first")
    p.add_argument("--max-block", type=_positive_int, default=4, help="longest repeated block removed by --process")
    p.add_argument("--embeddings", type=Path, default=None, help="JSONL token embeddings of the generated captions")
    p.add_argument("--ref-embeddings", type=Path, default=None, help="JSONL token embeddings of the gold captions")
    p.add_argument("--label", default=None, help="report row label; None means <pred stem>+[No-]Process")

    p = sub.add_parser("postprocess", parents=[common], formatter_class=fmt,
                       help="collapse repeated blocks and sentences in captions")
    p.add_argument("--in", dest="input", type=Path, required=True, help="caption CSV")
    p.add_argument("--out", type=Path, default=None, help="output file; None means stdout")
    p.add_argument("--max-block", type=_positive_int, default=4, help="longest repeated block removed")

    p = sub.add_parser("bertscore", parents=[common, report], formatter_class=fmt,
                       help="BERTScore P/R/F from supplied token embeddings")
    p.add_argument("--cand-emb", type=Path, required=True, help="JSONL token embeddings of the candidates")
    p.add_argument("--ref-emb", type=Path, required=True, help="JSONL token embeddings of the references")
    return parser


def _cmd_score_concepts(args) -> None:
    gold = _read(args.gold, parse_concept_annotations)
    pred = _read(args.pred, parse_concept_annotations)
    result = evaluate_concepts(gold, pred)
    _emit_report(EvalReport([(args.label or args.pred.stem, result.as_metrics())]), args)


def _cmd_apply_threshold(args) -> None:
    matrix = _read(args.probs, parse_probability_matrix)
    with _sink(args.out) as fh:
        write_concept_predictions(apply_threshold(matrix, ThresholdConfig(args.tau)), fh)


def _cmd_sweep(args, parser) -> None:
    if args.start > args.stop:
        parser.error(f"empty grid: --start {args.start} > --stop {args.stop}")
    matrix = _read(args.probs, parse_probability_matrix)
    gold = _read(args.gold, parse_concept_annotations)
    result = sweep_thresholds(matrix, gold, args.start, args.stop, args.step, threads=args.threads)
    rows = [(f"Threshold_{tau:g}", {"Threshold": tau, **res.as_metrics()}) for tau, res in result.grid]
    best = dict(result.grid)[result.best_tau]
    rows.append(("Best", {"Threshold": result.best_tau, **best.as_metrics()}))
    _emit_report(EvalReport(rows), args)


def _cmd_ensemble(args) -> None:
    matrices = [_read(path, parse_probability_matrix) for path in args.probs]
    with _sink(args.out) as fh:
        write_probability_matrix(ensemble_mean(matrices), fh)


def _cmd_filter_vocab(args) -> None:
    vocab = filter_vocabulary(_read(args.train, parse_concept_annotations), args.min_count)
    with _sink(args.out) as fh:
        if args.apply is None:
            write_vocabulary(vocab, fh)
        else:
            preds = _read(args.apply, parse_concept_annotations)
            write_concept_predictions(restrict_predictions(preds, vocab), fh)


def _load_pair_embeddings(cand_path: Path, ref_path: Path, ids) -> dict:
    cand = _read(cand_path, parse_token_embeddings)
    ref = _read(ref_path, parse_token_embeddings)
    out = {}
    for image_id in ids:
        for path, table in ((cand_path, cand), (ref_path, ref)):
            if image_id not in table:
                raise InputError(f"{path}: no embeddings for image {image_id!r}")
        out[image_id] = (cand[image_id][1], ref[image_id][1])
    return out


def _cmd_score_captions(args, parser) -> None:
    if (args.embeddings is None) != (args.ref_embeddings is None):
        parser.error("--embeddings and --ref-embeddings must be given together")
    gold = _read(args.gold, parse_captions, csv_mode=True)
    pred = _read(args.pred, parse_captions, csv_mode=True)
    embeddings = None
    if args.embeddings is not None:
        embeddings = _load_pair_embeddings(args.embeddings, args.ref_embeddings, gold)
    result = evaluate_captions(
        gold, pred, embeddings, postprocess=args.process, max_block=args.max_block, threads=args.threads
    )
    label = args.label or f"{args.pred.stem}+{'Process' if args.process else 'No-Process'}"
    _emit_report(EvalReport([(label, result.as_metrics())]), args)


def _cmd_postprocess(args) -> None:
    corpus = _read(args.input, parse_captions, csv_mode=True)
    cleaned = CaptionCorpus((k, collapse_repetitions(v, args.max_block)) for k, v in corpus.items())
    with _sink(args.out) as fh:
        write_captions(cleaned, fh)


def _cmd_bertscore(args) -> None:
    cand = _read(args.cand_emb, parse_token_embeddings)
    ref = _read(args.ref_emb, parse_token_embeddings)
    rows = []
    sums = [0.0, 0.0, 0.0]
    for image_id, (_, ref_vectors) in ref.items():
        if image_id not in cand:
            raise InputError(f"{args.cand_emb}: no embeddings for image {image_id!r}")
        scores = bertscore_aggregate(cand[image_id][1], ref_vectors)
        sums = [a + b for a, b in zip(sums, scores)]
        rows.append((image_id, dict(zip(("Precision", "Recall", "F1"), scores))))
    if not rows:
        raise InputError(f"{args.ref_emb}: no records")
    rows.append(("Mean", dict(zip(("Precision", "Recall", "F1"), (s / len(ref) for s in sums)))))
    _emit_report(EvalReport(rows), args)


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    if args.threads is None:
        args.threads = default_threads()
    commands = {
        "score-concepts": lambda: _cmd_score_concepts(args),
        "apply-threshold": lambda: _cmd_apply_threshold(args),
        "sweep": lambda: _cmd_sweep(args, parser),
        "ensemble": lambda: _cmd_ensemble(args),
        "filter-vocab": lambda: _cmd_filter_vocab(args),
        "score-captions": lambda: _cmd_score_captions(args, parser),
        "postprocess": lambda: _cmd_postprocess(args),
        "bertscore": lambda: _cmd_bertscore(args),
    }
    try:
        commands[args.command]()
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except (InputError, KeyError, OSError, ValueError) as exc:
        # FileFormatError messages already carry file:line
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


def main() -> None:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    sys.exit(run())


if __name__ == "__main__":
    main()
