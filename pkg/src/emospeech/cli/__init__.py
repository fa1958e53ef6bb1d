"""``emospeech`` command line: train, evaluate, verify and analyse models.

Exit codes: 0 success, 1 verification failure, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..errors import ConfigError, ContractError
from ..model.acoustic import count_parameters
from ..model.config import ABLATIONS, ModelConfig
from ..training import generate_corpus, load_checkpoint, load_corpus, save_corpus
from ..training.trainer import CHECKPOINT_NAME, METRICS_NAME, TrainingError, evaluate, train
from . import attention, config_file
from .bench import MIN_REPEATS, bench
from .gradcheck_suite import run_suite

EXIT_OK, EXIT_VERIFY, EXIT_USAGE = 0, 1, 2
CORPUS_NAME = "corpus"
RESOLVED_NAME = "config.resolved"


def _run_config(args) -> config_file.RunConfig:
    if args.config is None:
        return config_file.toy(args.seed)
    return config_file.load(args.config, args.seed)


def _out_dir(args) -> Path:
    return Path(args.out_dir if args.out_dir is not None else ".")


def cmd_train(args) -> int:
    run = _run_config(args)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    (out / RESOLVED_NAME).write_text(run.to_text())
    corpus = generate_corpus(run.corpus, run.corpus_seed)
    save_corpus(out / CORPUS_NAME, corpus, run.corpus, run.corpus_seed)
    result = train(run.model, corpus, run.steps, run.train, out_dir=out)
    overall = result.final_eval["overall"]
    print(f"trained {result.state.step} steps; final l_rec {overall['l_rec']:.6f}")
    print(f"wrote {out / METRICS_NAME}, {out / CHECKPOINT_NAME}.manifest.json, {out / RESOLVED_NAME}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    out = _out_dir(args)
    state, _, _ = load_checkpoint(args.checkpoint or out / CHECKPOINT_NAME)
    corpus = load_corpus(args.corpus or out / CORPUS_NAME)
    report = evaluate(state.model, corpus)
    text = json.dumps(report, indent=1, sort_keys=True)
    print(text)
    if args.out_dir is not None:
        (out / "eval.json").write_text(text + "\n")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    run = _run_config(args)
    results = run_suite(run.model, seed=args.seed or 0, inject_fault=args.inject_fault)
    names = [r.name for r in results]
    if args.inject_fault and args.inject_fault not in names:
        raise ConfigError(f"unknown gradcheck target {args.inject_fault!r}; choose from {', '.join(names)}", "inject-fault")
    print("target\tmax_rel_error\ttolerance\teps\tcoords\tstatus")
    failed = []
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.name}\t{r.max_rel_error:.3e}\t{r.tolerance:.0e}\t{r.eps:.0e}\t{r.n_checked}\t{status}")
        if not r.passed:
            failed.append(r.name)
    if failed:
        print(f"gradcheck failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def cmd_count_params(args) -> int:
    cfg = ModelConfig.paper() if args.paper_config else _run_config(args).model
    if args.ablation is not None:
        cfg = cfg.ablation(args.ablation)
    report = count_parameters(cfg, include_discriminator=True)
    print("component\tparameters")
    for comp, n in sorted(report["components"].items()):
        print(f"{comp}\t{n}")
    print(f"generator_total\t{report['generator_total']}")
    disc = report["discriminator_total"] if cfg.use_jcu else 0
    print(f"discriminator_total\t{disc}")
    print(f"total\t{report['generator_total'] + disc}")
    return EXIT_OK


def cmd_dump_attention(args) -> int:
    out = _out_dir(args)
    state, _, _ = load_checkpoint(args.checkpoint or out / CHECKPOINT_NAME)
    corpus = load_corpus(args.corpus or out / CORPUS_NAME)
    path = Path(args.output) if args.output else out / "attention.csv"
    rows = attention.write_dump(path, state.model, corpus)
    print(f"wrote {rows} records to {path}")
    return EXIT_OK


def cmd_aggregate_attention(args) -> int:
    records = attention.read_dump(args.dump)
    table = attention.aggregate(records, args.buckets, layer=args.layer, head=args.head)
    if args.output:
        attention.write_aggregate(args.output, table)
        print(f"wrote {sum(a.n_buckets for a in table.values())} rows to {args.output}")
    else:
        attention.write_aggregate(sys.stdout, table)
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.checkpoint:
        _, model_cfg, _ = load_checkpoint(args.checkpoint)
        run = None
    else:
        run = _run_config(args)
        model_cfg = run.model
    if args.corpus:
        corpus = load_corpus(args.corpus)
    else:
        run = run or config_file.toy()
        corpus = generate_corpus(run.corpus, run.corpus_seed)
    report = bench(model_cfg, corpus, args.repeats, seed=args.seed or 0, warmup=args.warmup)
    print("\n".join(report.lines()))
    if args.max_ratio is not None and report.ratio > args.max_ratio:
        print(f"latency ratio {report.ratio:.4f} exceeds {args.max_ratio}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def _add_globals(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="key = value config file (toy defaults when omitted)")
    parser.add_argument("--seed", type=int, default=default, help="override the training/analysis seed")
    parser.add_argument("--out-dir", default=default, help="directory for outputs (and default inputs)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="emospeech", description=__doc__.splitlines()[0])
    _add_globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        _add_globals(p, suppress=True)
        p.set_defaults(func=fn)
        return p

    command("train", cmd_train, "train on the synthetic corpus")

    p = command("evaluate", cmd_evaluate, "teacher-forced reconstruction report per emotion")
    p.add_argument("--checkpoint", help="checkpoint prefix (default OUT_DIR/checkpoint)")
    p.add_argument("--corpus", help="corpus prefix (default OUT_DIR/corpus)")

    p = command("gradcheck", cmd_gradcheck, "finite-difference check of every sublayer and loss")
    p.add_argument("--inject-fault", metavar="TARGET", help="corrupt one analytic gradient of TARGET")

    p = command("count-params", cmd_count_params, "parameter census by component")
    p.add_argument("--ablation", type=int, choices=sorted(ABLATIONS))
    p.add_argument("--paper-config", action="store_true", help="use the full-size dimensions")

    p = command("dump-attention", cmd_dump_attention, "write per-position CCA weights")
    p.add_argument("--checkpoint")
    p.add_argument("--corpus")
    p.add_argument("--output", help="dump path (default OUT_DIR/attention.csv)")

    p = command("aggregate-attention", cmd_aggregate_attention, "bucket dumped weights by normalized position")
    p.add_argument("dump")
    p.add_argument("--buckets", type=int, default=20)
    p.add_argument("--layer", type=int)
    p.add_argument("--head", type=int)
    p.add_argument("--output")

    p = command("bench", cmd_bench, "inference latency of ablation 1 against 3")
    p.add_argument("--checkpoint")
    p.add_argument("--corpus")
    p.add_argument("--repeats", type=int, default=20, help=f"timed passes over the corpus (>= {MIN_REPEATS})")
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--max-ratio", type=float, help="exit 1 when median(3)/median(1) exceeds this")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except (ConfigError, ContractError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def entry_point() -> None:
    sys.exit(main())
