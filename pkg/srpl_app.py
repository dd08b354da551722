"""
SRPL - open-set speaker enrollment on precomputed embeddings
Command-line entry point

    gen     synthetic corpus or negative pool
    split   k-fold open-set splits of a corpus
    enroll  train one fold, write a model directory
    eval    score one fold with a model, write the open-set report
    bench   all modes on all folds, comparison table
    ablate  ablation variants on all folds, ablation table

Every successful run writes one manifest (manifest.json in the output
directory, or <output>.manifest.json next to an output file).
"""
import argparse
import logging
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional

from app.core.exceptions import DimensionMismatchError, SrplError, UsageError
from app.core.run_config import RunConfig, load_run_config
from app.core.status import (
    EXIT_OK, EXIT_UNEXPECTED, MODE_SRPL_PLUS, NEGATIVES_FILE, NEGATIVES_NONE,
    NEGATIVES_REAL, TRAIN_MODES
)
from app.db.models import ClusterSpec, RunManifest
from app.services import (
    benchmark_service, checkpoint_service, corpus_service, evaluation_service,
    fold_service, pipeline_service, report_service, training_service
)
from app.utils.run_clock import Stopwatch, digests, format_datetime, now
from settings import Config

logger = logging.getLogger('srpl')


class ArgumentParser(argparse.ArgumentParser):
    """argparse parser that reports bad flags as UsageError instead of exiting."""

    def error(self, message):
        raise UsageError(message)


@dataclass
class CommandResult:
    manifest_path: Path
    config: Dict[str, Any]
    inputs: List[Any] = field(default_factory=list)
    outputs: List[Any] = field(default_factory=list)
    seeds: Dict[str, int] = field(default_factory=dict)


def _seeds(seed: int) -> Dict[str, int]:
    return {'seed': seed, 'adapter': seed, 'head': seed + 1, 'shuffle': seed + 2}


def _run_config(args) -> RunConfig:
    """Config file values with command-line overrides applied."""
    config = load_run_config(getattr(args, 'config', None))
    train, bench, negatives = config.train, config.bench, config.negatives
    if getattr(args, 'seed', None) is not None:
        train = replace(train, seed=args.seed)
    if getattr(args, 'mode', None):
        train = replace(train, mode=args.mode)
    if getattr(args, 'folds', None) is not None:
        bench = replace(bench, folds=args.folds)
    if getattr(args, 'targets', None) is not None:
        bench = replace(bench, targets=args.targets)
    if getattr(args, 'modes', None):
        bench = replace(bench, modes=tuple(m.strip() for m in args.modes.split(',') if m.strip()))
    if getattr(args, 'quick', False):
        bench = replace(bench, folds=1)
    if getattr(args, 'negatives', None):
        negatives = replace(negatives, source=NEGATIVES_FILE, path=args.negatives)
    elif getattr(args, 'real_negatives', False):
        negatives = replace(negatives, source=NEGATIVES_REAL)
    elif getattr(args, 'no_negatives', False):
        negatives = replace(negatives, source=NEGATIVES_NONE)
    return RunConfig(train, bench, negatives)


def _config_echo(config: RunConfig) -> Dict[str, Any]:
    return {
        'train': config.train.to_dict(),
        'benchmark': {**asdict(config.bench), 'modes': list(config.bench.modes)},
        'negatives': asdict(config.negatives)
    }


def _load_fold(args, corpus):
    splits = fold_service.load_splits(args.splits)
    matching = [s for s in splits if s.fold_index == args.fold]
    if not matching:
        raise UsageError(f"fold {args.fold} not in {args.splits} ({len(splits)} folds)")
    fold_service.check_split_against_corpus(matching[0], corpus)
    return matching[0]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_gen(args) -> CommandResult:
    seed = Config.DEFAULT_SEED if args.seed is None else args.seed
    prefix = pipeline_service.NEGATIVE_PREFIX if args.negative else 'spk'
    spec = ClusterSpec(args.speakers, args.utts, args.dim, args.within_spread, args.between_spread, seed, prefix)
    if args.negative:
        records = benchmark_service.generate_negatives(spec)
    else:
        records = benchmark_service.generate(spec).records
    out = corpus_service.save_corpus(records, args.out, args.format, dimension=args.dim)
    print(f"Wrote {len(records)} embeddings to {out}")
    return CommandResult(
        Path(f"{out}.manifest.json"),
        config={**asdict(spec), 'negative': args.negative, 'format': corpus_service.resolve_format(out, args.format)},
        outputs=[out],
        seeds={'seed': seed}
    )


def cmd_split(args) -> CommandResult:
    corpus = corpus_service.load_corpus(args.corpus, args.format)
    config = _run_config(args)
    bench = config.bench
    seed = config.train.seed
    outliers = bench.outliers if args.outliers is None else args.outliers
    shots = bench.shots if args.shots is None else args.shots
    splits = fold_service.make_folds(corpus, bench.folds, bench.targets, outliers, shots, seed)
    out = fold_service.save_splits(splits, args.out)
    print(f"Wrote {len(splits)} folds to {out}")
    return CommandResult(
        Path(f"{out}.manifest.json"),
        config={'folds': bench.folds, 'targets': bench.targets, 'outliers': outliers, 'shots': shots},
        inputs=[args.corpus],
        outputs=[out],
        seeds={'seed': seed}
    )


def _enroll_negatives(config: RunConfig, corpus, split):
    if config.train.mode != MODE_SRPL_PLUS:
        return []
    pool = pipeline_service.build_negative_pool(config.negatives, config.bench, corpus.dimension, config.train.seed)
    return pipeline_service.fold_negatives(config.negatives.source, corpus, split, pool)


def cmd_enroll(args) -> CommandResult:
    config = _run_config(args)
    corpus = corpus_service.load_corpus(args.corpus, args.format)
    split = _load_fold(args, corpus)
    negatives = _enroll_negatives(config, corpus, split)
    extra = corpus_service.load_corpus(args.extra_enroll).records if args.extra_enroll else None
    model, history = training_service.enroll(split, corpus, negatives, config.train, extra_enroll=extra)

    out_dir = Path(args.out)
    checkpoint_service.save_model(model, out_dir, config.train.to_dict())
    report_service.write_json({'history': [b.to_dict() for b in history]}, out_dir / 'history.json')
    if history:
        print(f"Enrolled {model.n_classes} speakers; loss {history[0].total:.6f} -> {history[-1].total:.6f}")
    else:
        print(f"Enrolled {model.n_classes} speakers (no tuning)")
    return CommandResult(
        out_dir / 'manifest.json',
        config=_config_echo(config),
        inputs=[args.corpus, args.splits, args.negatives, args.extra_enroll],
        outputs=[out_dir / checkpoint_service.MODEL_FILE, out_dir / 'history.json'],
        seeds=_seeds(config.train.seed)
    )


def cmd_eval(args) -> CommandResult:
    corpus = corpus_service.load_corpus(args.corpus, args.format)
    model = checkpoint_service.load_model(args.model)
    if model.input_dim != corpus.dimension:
        raise DimensionMismatchError(model.input_dim, corpus.dimension, 'checkpoint vs evaluation corpus')
    split = _load_fold(args, corpus)
    report = evaluation_service.evaluate(model, split, corpus, emit_embeddings=args.emit_embeddings)

    out_dir = Path(args.out)
    outputs = [
        report_service.write_report(report, out_dir / 'report.json'),
        report_service.write_curve_csv(report.curve, out_dir / 'curve.csv')
    ]
    if report.embeddings is not None:
        outputs.append(report_service.write_embeddings_csv(report.embeddings, out_dir / 'embeddings.csv'))
    print(f"AUC {100 * report.auc:.2f}  OSCR {100 * report.oscr:.2f}  ACC {100 * report.closed_acc:.2f}")
    return CommandResult(
        out_dir / 'manifest.json',
        config={'fold': args.fold, 'model': str(args.model), 'emit_embeddings': args.emit_embeddings},
        inputs=[args.corpus, args.splits, Path(args.model) / checkpoint_service.MODEL_FILE],
        outputs=outputs
    )


def _bench_inputs(args, config: RunConfig):
    """Corpus (loaded or generated), folds and the shared negative pool."""
    seed = config.train.seed
    if args.corpus:
        corpus = corpus_service.load_corpus(args.corpus, args.format)
    else:
        corpus = benchmark_service.generate(config.bench.cluster_spec(seed))
    bench = config.bench
    splits = fold_service.make_folds(corpus, bench.folds, bench.targets, bench.outliers, bench.shots, seed)
    pool = pipeline_service.build_negative_pool(config.negatives, bench, corpus.dimension, seed)
    return corpus, splits, pool


def cmd_bench(args) -> CommandResult:
    config = _run_config(args)
    corpus, splits, pool = _bench_inputs(args, config)
    out_dir = Path(args.out)
    pipeline_service.run_bench(corpus, splits, config.bench.modes, config.train, config.negatives.source, pool,
                               out_dir=out_dir, threads=args.threads, emit_embeddings=args.emit_embeddings)
    print((out_dir / 'table.txt').read_text(encoding='utf-8'))
    return CommandResult(
        out_dir / 'manifest.json',
        config=_config_echo(config),
        inputs=[args.corpus, config.negatives.path],
        outputs=[out_dir / 'summary.json', out_dir / 'table.txt'],
        seeds=_seeds(config.train.seed)
    )


def cmd_ablate(args) -> CommandResult:
    config = _run_config(args)
    corpus, splits, pool = _bench_inputs(args, config)
    out_dir = Path(args.out)
    pipeline_service.run_ablation(corpus, splits, config.train, config.negatives.source, pool,
                                  out_dir=out_dir, threads=args.threads)
    print((out_dir / 'ablation.txt').read_text(encoding='utf-8'))
    return CommandResult(
        out_dir / 'manifest.json',
        config=_config_echo(config),
        inputs=[args.corpus, config.negatives.path],
        outputs=[out_dir / 'ablation.json', out_dir / 'ablation.txt'],
        seeds=_seeds(config.train.seed)
    )


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_common(parser, corpus_required=True):
    if corpus_required:
        parser.add_argument('corpus', help="embedding corpus (.jsonl or .bin)")
    parser.add_argument('--format', choices=sorted(corpus_service.CORPUS_FORMATS) + ['binary'],
                        help="corpus format (default: from the file suffix)")
    parser.add_argument('--config', help="TOML run config")
    parser.add_argument('--seed', type=int)


def _add_negative_flags(parser):
    group = parser.add_mutually_exclusive_group()
    group.add_argument('--negatives', help="negative pool file for SRPL+")
    group.add_argument('--real-negatives', action='store_true',
                       help="use each fold's reserved speakers as the negative pool")
    group.add_argument('--no-negatives', action='store_true', help="train SRPL+ without negatives")


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog='srpl', description="Open-set speaker enrollment with reciprocal points")
    parser.add_argument('-v', '--verbose', action='store_true', help="debug logging")
    sub = parser.add_subparsers(dest='command', required=True)

    gen = sub.add_parser('gen', help="generate a synthetic corpus or negative pool")
    gen.add_argument('--speakers', type=int, default=Config.BENCH_SPEAKERS)
    gen.add_argument('--utts', type=int, default=Config.BENCH_UTTERANCES)
    gen.add_argument('--dim', type=int, default=Config.BENCH_DIM)
    gen.add_argument('--within-spread', type=float, default=Config.BENCH_WITHIN_SPREAD)
    gen.add_argument('--between-spread', type=float, default=Config.BENCH_BETWEEN_SPREAD)
    gen.add_argument('--seed', type=int)
    gen.add_argument('--negative', action='store_true', help="emit a negative pool (tag negative)")
    gen.add_argument('--format', choices=sorted(corpus_service.CORPUS_FORMATS) + ['binary'])
    gen.add_argument('-o', '--out', required=True, help="output corpus file")
    gen.set_defaults(handler=cmd_gen)

    split = sub.add_parser('split', help="make k-fold open-set splits")
    _add_common(split)
    split.add_argument('--folds', type=int)
    split.add_argument('--targets', type=int)
    split.add_argument('--outliers', type=int)
    split.add_argument('--shots', type=int)
    split.add_argument('-o', '--out', required=True, help="output split file (JSON)")
    split.set_defaults(handler=cmd_split)

    enroll = sub.add_parser('enroll', help="enroll the target speakers of one fold")
    _add_common(enroll)
    enroll.add_argument('--splits', required=True)
    enroll.add_argument('--fold', type=int, default=0)
    enroll.add_argument('--mode', choices=list(TRAIN_MODES))
    enroll.add_argument('--extra-enroll', help="additional enrollment embeddings for target speakers")
    _add_negative_flags(enroll)
    enroll.add_argument('-o', '--out', required=True, help="model directory")
    enroll.set_defaults(handler=cmd_enroll)

    evaluate = sub.add_parser('eval', help="evaluate a model on one fold")
    _add_common(evaluate)
    evaluate.add_argument('--splits', required=True)
    evaluate.add_argument('--fold', type=int, default=0)
    evaluate.add_argument('--model', required=True, help="model directory from enroll")
    evaluate.add_argument('--emit-embeddings', action='store_true')
    evaluate.add_argument('-o', '--out', required=True, help="report directory")
    evaluate.set_defaults(handler=cmd_eval)

    for name, handler, helptext in (('bench', cmd_bench, "compare modes over all folds"),
                                    ('ablate', cmd_ablate, "run the ablation variants over all folds")):
        command = sub.add_parser(name, help=helptext)
        _add_common(command, corpus_required=False)
        command.add_argument('--corpus', help="embedding corpus (default: synthetic benchmark)")
        command.add_argument('--folds', type=int)
        command.add_argument('--targets', type=int, help="target speakers per fold (5-way, 10-way, ...)")
        command.add_argument('--quick', action='store_true', help="single fold")
        command.add_argument('--threads', type=int, help="worker slots (default: SRPL_THREADS)")
        _add_negative_flags(command)
        command.add_argument('-o', '--out', default=None, help="output directory")
        if name == 'bench':
            command.add_argument('--modes', help="comma-separated modes, table order")
            command.add_argument('--emit-embeddings', action='store_true')
        command.set_defaults(handler=handler)
    return parser


def configure_logging(verbose: bool) -> None:
    level = logging.DEBUG if verbose else getattr(logging, Config.LOG_LEVEL, logging.INFO)
    logging.basicConfig(level=level, format=Config.LOG_FORMAT, stream=sys.stderr, force=True)


def _write_manifest(args, result: CommandResult, started, seconds: float) -> None:
    manifest = RunManifest(
        command=args.command,
        config=result.config,
        seeds=result.seeds,
        input_digests=digests(result.inputs),
        output_paths=[str(p) for p in result.outputs],
        duration_seconds=seconds,
        started_at=format_datetime(started)
    )
    report_service.write_json(manifest.to_dict(), result.manifest_path)
    logger.info(f"Manifest written to {result.manifest_path}")


def main(argv: Optional[List[str]] = None) -> int:
    """Run one command; returns the process exit code."""
    try:
        args = build_parser().parse_args(argv)
        configure_logging(args.verbose)
        if getattr(args, 'out', '') is None:
            args.out = str(Path(Config.OUTPUT_DIR) / args.command)
        started = now()
        with Stopwatch() as watch:
            result = args.handler(args)
        _write_manifest(args, result, started, watch.elapsed)
        return EXIT_OK
    except SrplError as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.exception(f"Unexpected failure: {e}")
        print(f"error: unexpected failure: {e}", file=sys.stderr)
        return EXIT_UNEXPECTED


if __name__ == '__main__':
    sys.exit(main())
