#!/usr/bin/env python3
"""
Multi-product parabolic propagators - Entry Point

Runs reproducible convergence, stability and remainder experiments for
Weyl-quantized multi-product approximations of parabolic evolution
operators on periodic grids and on a chart atlas of the circle.
"""

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from core.config import ENV_PREFIX, FORMATS, load_config
from core.errors import ConfigError, ConvergenceError, MultiproductError, OutputError
from core.experiments import run
from core.preset_discovery import PresetDiscovery
from core.sweep_runner import TqdmProgress, log_progress
from core.symbol_presets import PRESETS
from utils.file_utils import emit, format_duration, write_timing
from utils.platform_utils import set_thread_count

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_BAND_FAILED = 1
EXIT_NOT_CONVERGED = 2
EXIT_CONFIG = 3

# LinAlgError derives from ValueError, so this tuple is caught first
NUMERICAL_ERRORS = (np.linalg.LinAlgError, FloatingPointError, ArithmeticError)


def configure_logging(verbose: bool = False, quiet: bool = False):
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, stream=sys.stderr, format='%(levelname)s %(name)s: %(message)s')


def _overrides(args) -> dict:
    return {
        'seed': args.seed,
        'output.path': str(args.out) if args.out else None,
        'output.format': args.format,
    }


def _resolve_config_path(value: str) -> Path:
    """A file path, or the stem of a discovered preset."""
    path = Path(value)
    if path.exists():
        return path
    found = PresetDiscovery().find(value)
    if found is None:
        raise ConfigError('config', f"no such file or preset: {value}")
    return found


def run_experiment_cli(args) -> int:
    """Handles the 'run' command."""
    config = load_config(_resolve_config_path(args.config), _overrides(args))
    if args.dry_run:
        print(json.dumps(config.to_dict(), indent=2, sort_keys=True))
        return EXIT_OK

    progress = log_progress if args.quiet else TqdmProgress()
    print(f"--- Running {config.experiment} ({config.name}) ---", file=sys.stderr)
    started = time.perf_counter()
    try:
        result = run(config, progress_callback=progress)
    finally:
        if isinstance(progress, TqdmProgress):
            progress.close()
    elapsed = time.perf_counter() - started

    written = emit(result, config.output.path, config.output.format)
    write_timing(config.output.path, elapsed, config.experiment)
    for path in written:
        print(f"Wrote {path}", file=sys.stderr)
    for fit in result.fits:
        slope = 'exact' if fit.exact else f"{fit.slope:.3f}"
        print(f"  {fit.metric:<40s} slope {slope:>8s}  band {fit.band}  {'pass' if fit.passed else 'FAIL'}")
    for check in result.checks:
        print(f"  {check.name:<40s} {check.value:.4g} vs {check.threshold:.4g}  {'pass' if check.passed else 'FAIL'}")
    for note in result.notes:
        print(f"  note: {note}")
    print(f"\n{'All checks passed' if result.passed else 'Some checks FAILED'} in {format_duration(elapsed)}.",
          file=sys.stderr)
    return EXIT_OK if result.passed else EXIT_BAND_FAILED


def run_list_presets_cli(args) -> int:
    """Handles the 'list-presets' command."""
    discovery = PresetDiscovery()
    presets = discovery.discover_presets()
    print("Experiment presets:")
    if not presets:
        print("  (none found)")
    for path in presets:
        info = discovery.get_preset_info(path)
        status = info.experiment if info.valid else f"invalid: {info.message}"
        print(f"  {info.name:<32s} {status:<24s} {path}")
    print("\nSymbol presets:")
    for preset in PRESETS.values():
        print(f"  {preset.name:<20s} n={preset.dim}  {preset.description}")
    return EXIT_OK


def run_validate_cli(args) -> int:
    """Handles the 'validate' command."""
    config = load_config(_resolve_config_path(args.config))
    print(f"{args.config}: valid {config.experiment} experiment '{config.name}'")
    return EXIT_OK


def run_cli(args) -> int:
    """Master CLI handler that dispatches to sub-commands and maps errors to exit codes."""
    if getattr(args, 'threads', None):
        set_thread_count(args.threads)
    handlers = {'run': run_experiment_cli, 'list-presets': run_list_presets_cli, 'validate': run_validate_cli}
    try:
        return handlers[args.command](args)
    except ConfigError as e:
        logger.error(f"[CLI] invalid configuration: {e}")
        print(f"Error: invalid configuration. {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as e:
        residual = '' if e.residual is None else f" (residual {e.residual:.3e})"
        logger.error(f"[CLI] non-convergence: {e}{residual}")
        print(f"Error: numerical non-convergence. {e}{residual}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except NUMERICAL_ERRORS as e:
        logger.error(f"[CLI] numerical failure: {type(e).__name__}: {e}", exc_info=logger.isEnabledFor(logging.DEBUG))
        print(f"Error: numerical failure. {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except OutputError as e:
        logger.error(f"[CLI] {e}")
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_BAND_FAILED
    except MultiproductError as e:
        logger.error(f"[CLI] {type(e).__name__}: {e}")
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_BAND_FAILED
    except (ValueError, KeyError, TypeError) as e:
        # config values that pass validation but are rejected while building presets
        logger.error(f"[CLI] invalid input: {type(e).__name__}: {e}", exc_info=logger.isEnabledFor(logging.DEBUG))
        print(f"Error: invalid configuration. {e}", file=sys.stderr)
        return EXIT_CONFIG


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='multiproduct',
        description="Multi-product parabolic propagator experiments.",
        formatter_class=argparse.RawTextHelpFormatter,
        epilog=f"""
Exit codes: 0 all checks pass, 1 a pass band failed, 2 numerical non-convergence,
3 configuration error.

Environment: {ENV_PREFIX}THREADS, {ENV_PREFIX}SEED, {ENV_PREFIX}OUT, {ENV_PREFIX}FORMAT,
{ENV_PREFIX}PRESETS (extra preset directories). Command-line flags win over the
environment, which wins over the config file.

Examples:
  multiproduct list-presets
    (Lists shipped experiment files and symbol presets)

  multiproduct run --config presets/sharp_norm_curved.toml --out results/sharp
    (Runs the sharp-norm sweep and writes results.csv, summary.json, timing.json)

  multiproduct validate --config my_experiment.toml
    (Checks a config file without running it)
"""
    )
    parser.add_argument('--verbose', '-v', action='store_true', help='Debug logging')
    parser.add_argument('--quiet', '-q', action='store_true', help='Warnings only, no progress bars')

    subparsers = parser.add_subparsers(dest='command', help='Available commands', required=True)

    run_parser = subparsers.add_parser('run', help='Run an experiment')
    run_parser.add_argument('--config', required=True, help='Experiment TOML file or preset name')
    run_parser.add_argument('--out', type=Path, help='Output directory')
    run_parser.add_argument('--format', choices=FORMATS, help='Output format')
    run_parser.add_argument('--seed', type=int, help='Seed for start vectors and probe fields')
    run_parser.add_argument('--threads', type=int, help='Worker threads for sweeps and FFTs')
    run_parser.add_argument('--dry-run', action='store_true', help='Validate and print the resolved config')

    subparsers.add_parser('list-presets', help='List experiment and symbol presets')

    validate_parser = subparsers.add_parser('validate', help='Validate a config file')
    validate_parser.add_argument('--config', required=True, help='Experiment TOML file or preset name')
    return parser


def main(argv=None) -> int:
    """Main entry point."""
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    return run_cli(args)


if __name__ == "__main__":
    sys.exit(main())
