"""Command-line entry point: ``cycleasr <subcommand> [flags]``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .checkpoint import CheckpointError
from .config import RETRAIN_VARIANTS, ConfigError, Variant, apply_overrides, dump_config, load_config
from .corpus import DEV, EVAL, PAIRED, UNPAIRED_SPEECH, Corpus, generate_corpus
from .decoder import read_decode_output, write_decode_output
from .metrics import export_embeddings, format_table, make_report, write_report_csv
from .trainer import (
    TrainingDiverged,
    beam_config,
    decode_split,
    evaluate,
    load_lm,
    load_model,
    retrain,
    sweep_beta,
    train_initial,
    train_rnnlm,
)

OUTPUT_ROOT_ENV = "CYCLEASR_OUTPUT_ROOT"

EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_MISSING = 4
EXIT_DIVERGED = 5
EXIT_INPUT = 6

log = logging.getLogger("cycleasr")


class MissingInput(Exception):
    pass


def _require(path: str | Path, what: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise MissingInput(f"{what} not found: {path}")
    return path


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config with [corpus], [experiment], [kernel] sections")
    common.add_argument("--output-dir", help=f"run directory (default: ${OUTPUT_ROOT_ENV} or ./runs)")
    common.add_argument("--seed", type=int, help="root seed; overrides corpus.seed and experiment.seed")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    corpus_arg = argparse.ArgumentParser(add_help=False)
    corpus_arg.add_argument("--corpus", help="corpus directory (default: <output-dir>/corpus)")

    parser = argparse.ArgumentParser(prog="cycleasr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-data", parents=[common, corpus_arg], help="generate the synthetic corpus")
    sub.add_parser("train-initial", parents=[common, corpus_arg], help="supervised training on paired data")

    p = sub.add_parser("retrain", parents=[common, corpus_arg], help="semi-supervised retraining")
    p.add_argument("--init-checkpoint", required=True)
    p.add_argument("--variant", type=Variant.parse)
    p.add_argument("--beta", type=float)

    sub.add_parser("train-lm", parents=[common, corpus_arg], help="character RNNLM on unpaired text")

    p = sub.add_parser("decode", parents=[common, corpus_arg], help="beam-search decode a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default=EVAL, choices=[DEV, EVAL, PAIRED, UNPAIRED_SPEECH])
    p.add_argument("--lm")
    p.add_argument("--lm-weight", type=float)
    p.add_argument("--beam-width", type=int)
    p.add_argument("--out")

    p = sub.add_parser("score", parents=[common, corpus_arg], help="CER/WER of a decode file")
    p.add_argument("--hyp", required=True, help="decode output (JSONL with id, text, score)")
    p.add_argument("--ref", help="reference JSONL with id and text; otherwise --corpus/--split")
    p.add_argument("--split", default=EVAL)
    p.add_argument("--model", help="model name for the report row")
    p.add_argument("--beta", type=float)
    p.add_argument("--lm-used", action="store_true")

    p = sub.add_parser("sweep-beta", parents=[common, corpus_arg], help="retrain over a grid of beta values")
    p.add_argument("--init-checkpoint", required=True)
    p.add_argument("--betas", type=_floats, default=[0.0, 0.2, 0.4, 0.6, 0.8, 1.0])
    p.add_argument("--variants", default=",".join(v.value for v in RETRAIN_VARIANTS))
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out")

    p = sub.add_parser("export-embeddings", parents=[common, corpus_arg], help="write inter-domain embeddings")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default=EVAL)
    p.add_argument("--no-projection", action="store_true")
    p.add_argument("--out")

    p = sub.add_parser("pipeline", parents=[common, corpus_arg], help="run every stage and report each variant")
    p.add_argument("--skip-lm", action="store_true")
    return parser


def _resolve(args):
    corpus_cfg, exp = load_config(args.config)
    corpus_cfg, exp = apply_overrides(corpus_cfg, exp, args.overrides)
    if args.seed is not None:
        corpus_cfg, exp = apply_overrides(corpus_cfg, exp, [f"corpus.seed={args.seed}", f"experiment.seed={args.seed}"])
    for flag in ("variant", "beta"):
        value = getattr(args, flag, None)
        if value is not None:
            exp = apply_overrides(corpus_cfg, exp, [f"experiment.{flag}={getattr(value, 'value', value)}"])[1]
    if getattr(args, "beam_width", None) is not None:
        exp = apply_overrides(corpus_cfg, exp, [f"experiment.beam_width={args.beam_width}"])[1]
    if getattr(args, "lm_weight", None) is not None:
        exp = apply_overrides(corpus_cfg, exp, [f"experiment.lm_weight={args.lm_weight}"])[1]
    out = Path(args.output_dir or os.environ.get(OUTPUT_ROOT_ENV) or "runs")
    corpus_dir = Path(args.corpus) if args.corpus else out / "corpus"
    return corpus_cfg, exp, out, corpus_dir


def _load_corpus(path: Path) -> Corpus:
    _require(path / "manifest.jsonl", "corpus manifest")
    return Corpus.load(path)


def _report_rows(corpus, params, exp, lm, name, beta):
    rows = [evaluate(params, corpus, EVAL, beam_config(exp), name, beta)[0]]
    if lm is not None:
        rows.append(evaluate(params, corpus, EVAL, beam_config(exp, lm), name, beta)[0])
    return rows


def run(args) -> int:
    corpus_cfg, exp, out, corpus_dir = _resolve(args)
    cmd = args.command
    # referenced inputs are checked before anything is written
    for attr, what in (("init_checkpoint", "initial checkpoint"), ("checkpoint", "checkpoint"),
                       ("lm", "LM checkpoint"), ("hyp", "hypothesis file"), ("ref", "reference file")):
        value = getattr(args, attr, None)
        if value:
            _require(value, what)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{cmd}.config.ini").write_text(dump_config(corpus_cfg, exp), encoding="utf-8")

    if cmd == "gen-data":
        manifest = generate_corpus(corpus_cfg, corpus_dir)
        print(f"wrote {len(manifest.records)} records to {corpus_dir}")
        return 0

    if cmd == "score":
        hyps = {r.utt_id: r.text for r in read_decode_output(args.hyp)}
        if args.ref:
            refs = {r.utt_id: r.text for r in read_decode_output(args.ref)}
        else:
            refs = _load_corpus(corpus_dir).references(args.split)
        report = make_report(refs, hyps, args.model or Path(args.hyp).stem, args.beta, args.lm_used)
        write_report_csv(out / "score.csv", [report])
        print(format_table([report]), end="")
        return 0

    corpus = _load_corpus(corpus_dir)

    if cmd == "train-initial":
        result = train_initial(exp, corpus, out)
        print(f"best dev CER {100 * result.best_dev_cer:.2f}% -> {result.checkpoint}")
    elif cmd == "retrain":
        if exp.variant is Variant.INITIAL:
            raise ConfigError("retrain needs a semi-supervised variant (Baseline, Retrain-idt, Retrain-cyc, Retrain-cyc+idt)")
        result = retrain(args.init_checkpoint, exp, corpus, out)
        print(f"best dev CER {100 * result.best_dev_cer:.2f}% -> {result.checkpoint}")
    elif cmd == "train-lm":
        result = train_rnnlm(exp, corpus, out)
        print(f"perplexity {result.perplexities[0]:.3f} -> {result.perplexities[-1]:.3f}; {result.checkpoint}")
    elif cmd == "decode":
        params, _, _ = load_model(args.checkpoint)
        lm = load_lm(args.lm) if args.lm else None
        records = decode_split(params, corpus, args.split, beam_config(exp, lm))
        target = Path(args.out) if args.out else out / f"decode_{args.split}.jsonl"
        write_decode_output(target, records)
        print(f"decoded {len(records)} utterances -> {target}")
    elif cmd == "sweep-beta":
        variants = [Variant.parse(v) for v in args.variants.split(",") if v.strip()]
        target = Path(args.out) if args.out else out / "sweep_beta.csv"
        rows = sweep_beta(args.init_checkpoint, exp, corpus, args.betas, target, variants, args.workers,
                          manifest_path=corpus_dir)
        failed = sum(1 for r in rows if r["cer"] == "")
        print(f"{len(rows)} cells ({failed} failed) -> {target}")
        return 1 if failed else 0
    elif cmd == "export-embeddings":
        params, _, _ = load_model(args.checkpoint)
        target = Path(args.out) if args.out else out / f"embeddings_{args.split}.csv"
        n = export_embeddings(params, corpus, args.split, target, projection=not args.no_projection)
        print(f"wrote {n} embedding rows -> {target}")
    elif cmd == "pipeline":
        return _pipeline(args, corpus, exp, out)
    return 0


def _pipeline(args, corpus: Corpus, exp, out: Path) -> int:
    initial = train_initial(exp, corpus, out)
    lm = None if args.skip_lm else train_rnnlm(exp, corpus, out).lm
    reports = _report_rows(corpus, initial.params, exp, lm, Variant.INITIAL.value, None)
    for variant in RETRAIN_VARIANTS:
        cfg = exp.replace(variant=variant)
        result = retrain(initial.checkpoint, cfg, corpus, out)
        reports += _report_rows(corpus, result.params, cfg, lm, variant.value, cfg.beta)
    write_report_csv(out / "report.csv", reports)
    table = format_table(reports)
    (out / "report.txt").write_text(table, encoding="utf-8")
    print(table, end="")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except ConfigError as exc:
        print(f"cycleasr: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingInput, FileNotFoundError) as exc:
        print(f"cycleasr: missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except CheckpointError as exc:
        print(f"cycleasr: unreadable checkpoint: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except TrainingDiverged as exc:
        print(f"cycleasr: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ValueError, KeyError) as exc:
        print(f"cycleasr: invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
