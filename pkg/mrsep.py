#!/usr/bin/env python3
"""
mrsep CLI

Train multi-resolution FCNN source separators on magnitude spectrograms,
separate mixtures with them and score the results with BSS-eval metrics.
"""

import argparse
import logging
import sys
from pathlib import Path

from pydantic import ValidationError

import tasks
from core import ConfigError, SeparationError, count_parameters, gradcheck

logger = logging.getLogger('mrsep')

EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def _config(args, **paths):
    config = tasks.load_run_config(args.config, {
        'model': args.model,
        'seed': args.seed,
        'precision': args.precision,
    })
    updates = {k: v for k, v in paths.items() if v is not None}
    if updates:
        config = config.model_copy(update={'paths': config.paths.model_copy(update=updates)})
    return config


def cmd_param_count(args):
    config = _config(args)
    print(count_parameters(tasks.resolve_spec(config)))
    return 0


def cmd_gradcheck(args):
    if args.model is None and args.config is None:
        args.model = 'toy'
    config = _config(args)
    spec = tasks.resolve_spec(config)
    report = gradcheck(spec, seed=config.seed, tolerance=args.tolerance, corrupt=args.corrupt)
    for line in report.lines():
        print(line)
    return 0 if report.passed else EXIT_RUNTIME


def cmd_train(args):
    config = _config(args, corpus=args.corpus, checkpoints=args.out)
    outcome = tasks.train_source(config, target=args.target)
    last = outcome.history.records[-1] if outcome.history.records else None
    if last is not None:
        print(f"Trained {len(outcome.history.records)} epochs, final training cost {last.train_cost:.6g}")
    for warning in outcome.history.warnings:
        print(f"Warning: {warning}")
    print(f"Checkpoint: {outcome.checkpoint_path}")
    print(f"History: {outcome.history_path}")
    return 0


def cmd_separate(args):
    config = _config(args)
    path = tasks.separate_file(config, args.checkpoint, args.input, args.output)
    print(f"Output file: {path}")
    return 0


def cmd_evaluate(args):
    config = _config(args, reports=args.out)
    report, written = tasks.evaluate_dirs(
        config, args.estimates, args.references,
        include_mixture=not args.no_mix, workers=args.workers,
    )
    print(f"Scored {len(report.scores)} track/model pairs, skipped {len(report.skipped)}")
    for c in report.comparisons:
        marker = '*' if c.p_adjusted < 0.05 else ' '
        print(f"{marker} {c.metric.upper()} {c.model_a} vs {c.model_b}: p = {c.p_raw:.4g} (adjusted {c.p_adjusted:.4g})")
    for path in written:
        print(f"Output file: {path}")
    return 0


def cmd_synth(args):
    config = _config(args, corpus=args.out)
    pairs = tasks.synth_corpus(config)
    print(f"Wrote {len(pairs)} tracks to {config.paths.corpus}")
    return 0


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=Path, help='JSON run configuration (default: built-in defaults)')
    common.add_argument('--model', type=str, help='Builtin model name: mr-fcnn, fcnn, dnn or toy')
    common.add_argument('--seed', type=int, help='Seed for model initialization')
    common.add_argument('--precision', choices=['f32', 'f64'], help='Floating-point precision')
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument('-v', '--verbose', action='store_true', help='Debug logging')
    verbosity.add_argument('-q', '--quiet', action='store_true', help='Only log warnings and errors')
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = argparse.ArgumentParser(
        description='mrsep - multi-resolution FCNN audio source separation',
        epilog='''
Examples:
  # Parameter count of a builtin architecture
  %(prog)s param-count --model mr-fcnn

  # Synthetic corpus, then one network per source
  %(prog)s synth --config run.json
  %(prog)s train --config run.json --target tones

  # Separate and score
  %(prog)s separate checkpoints/tones.ckpt mixture.wav tones_estimate.wav
  %(prog)s evaluate estimates/ corpus/

Use "%(prog)s <command> --help" for more information on a command.
        ''',
        formatter_class=argparse.RawDescriptionHelpFormatter
    )

    subparsers = parser.add_subparsers(
        title='commands',
        description='Available commands',
        dest='command',
        required=True
    )

    count_parser = subparsers.add_parser(
        'param-count',
        parents=[common],
        help='Print the number of trainable parameters',
    )
    count_parser.set_defaults(func=cmd_param_count)

    grad_parser = subparsers.add_parser(
        'gradcheck',
        parents=[common],
        help='Check backprop against finite differences',
        description='Finite-difference check of the full network gradient at 64-bit. '
                    'Large models are shrunk to a small segment geometry first.',
        epilog='''
Examples:
  %(prog)s
  %(prog)s --model mr-fcnn --seed 3
        ''',
        formatter_class=argparse.RawDescriptionHelpFormatter
    )
    grad_parser.add_argument('--tolerance', type=float, default=1e-4,
                             help='Maximum relative error (default: 1e-4)')
    grad_parser.add_argument('--corrupt', action='store_true', help=argparse.SUPPRESS)
    grad_parser.set_defaults(func=cmd_gradcheck)

    train_parser = subparsers.add_parser(
        'train',
        parents=[common],
        help='Train the network for one source',
        description='Train one network for one target source on the configured corpus',
        epilog='''
Examples:
  # One invocation per source
  %(prog)s --config run.json --target tones
  %(prog)s --config run.json --target noise
        ''',
        formatter_class=argparse.RawDescriptionHelpFormatter
    )
    train_parser.add_argument('--target', type=str, help='Source to learn (default: sources.target)')
    train_parser.add_argument('--corpus', type=Path, help='Corpus directory (default: paths.corpus)')
    train_parser.add_argument('--out', type=Path, help='Checkpoint directory (default: paths.checkpoints)')
    train_parser.set_defaults(func=cmd_train)

    sep_parser = subparsers.add_parser(
        'separate',
        parents=[common],
        help='Estimate one source from a mixture WAV',
    )
    sep_parser.add_argument('checkpoint', type=Path, help='Trained checkpoint')
    sep_parser.add_argument('input', type=Path, help='Mixture WAV')
    sep_parser.add_argument('output', type=Path, help='Output WAV for the estimated source')
    sep_parser.set_defaults(func=cmd_separate)

    eval_parser = subparsers.add_parser(
        'evaluate',
        parents=[common],
        help='Score estimates with SDR/SIR/SAR and compare models',
        description='Score ESTIMATES/<model>/<track>.wav against the corpus at REFERENCES',
        formatter_class=argparse.RawDescriptionHelpFormatter
    )
    eval_parser.add_argument('estimates', type=Path, help='Directory of per-model estimate folders')
    eval_parser.add_argument('references', type=Path, help='Reference corpus directory')
    eval_parser.add_argument('--out', type=Path, help='Report directory (default: paths.reports)')
    eval_parser.add_argument('--workers', type=int, default=1, help='Tracks scored in parallel (default: 1)')
    eval_parser.add_argument('--no-mix', action='store_true', help='Do not score the unprocessed mixture')
    eval_parser.set_defaults(func=cmd_evaluate)

    synth_parser = subparsers.add_parser(
        'synth',
        parents=[common],
        help='Write a seeded synthetic corpus',
    )
    synth_parser.add_argument('--out', type=Path, help='Corpus directory (default: paths.corpus)')
    synth_parser.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format='%(asctime)s %(levelname)s %(name)s: %(message)s')

    try:
        return args.func(args)
    except (ConfigError, ValidationError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (SeparationError, OSError) as e:
        logger.debug('Command failed', exc_info=True)
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == '__main__':
    sys.exit(main())
