"""
Command-line front end: synth, denoise, eval and slice.

Exit codes: 0 success, 1 usage or configuration, 2 file format or I/O,
3 numerical failure.
"""
import argparse
import math
import sys
from pathlib import Path
from typing import Callable, List, NoReturn, Optional

from joblib import parallel_config

from tensor_denoise import monitoring
from tensor_denoise.config import RunConfig, apply_overrides, config_manager
from tensor_denoise.exceptions import (
    EXIT_OK,
    ConfigurationError,
    TensorDenoiseError,
    describe_error,
    exit_code_for,
)
from tensor_denoise.logger import get_logger, setup_logging
from tensor_denoise.patches import AXIS_LABELS
from tensor_denoise.pipeline import PatchGrid, denoise, snr_db
from tensor_denoise.synth import benchmark_volumes
from tensor_denoise.volume_io import (
    extract_slice,
    read_volume,
    write_array,
    write_pgm,
    write_text,
    write_volume,
    write_volumes,
)

logger = get_logger(__name__)

Handler = Callable[[argparse.Namespace, RunConfig], int]


class _Parser(argparse.ArgumentParser):
    """Argument parser that reports usage errors as configuration errors"""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        raise ConfigurationError(f"{self.prog}: {message}", error_code="USAGE")


def format_snr(value: float) -> str:
    """SNR line in the report format, e.g. 'SNR = 13.8268 dB'"""
    if math.isinf(value) and value > 0:
        return "SNR = inf"
    return f"SNR = {value:.4f} dB"


def cmd_synth(args: argparse.Namespace, config: RunConfig) -> int:
    clean, noisy = benchmark_volumes(config.solver.seed, config.synth)
    write_volumes([(args.out_clean, clean), (args.out_noisy, noisy)])
    # score what was stored, after single-precision rounding
    realized = snr_db(read_volume(args.out_clean), read_volume(args.out_noisy))
    print(f"input {format_snr(realized)}")
    return EXIT_OK


def _dictionary_path(args: argparse.Namespace, config: RunConfig) -> Path:
    if args.dictionary:
        return Path(args.dictionary)
    if config.dictionary_path:
        return Path(config.dictionary_path)
    out = Path(args.out_denoised)
    return out.with_name(f"{out.stem}.dict{out.suffix or '.tvol'}")


def cmd_denoise(args: argparse.Namespace, config: RunConfig) -> int:
    noisy = read_volume(args.in_noisy)
    reference = read_volume(args.reference) if args.reference else None
    grid = PatchGrid.build(config.grid, noisy.dims)

    denoised, dictionary, report = denoise(noisy, config.solver, grid, reference=reference)

    write_volume(args.out_denoised, denoised)
    write_array(_dictionary_path(args, config), dictionary.data)
    write_text(args.out_report, report.render_text())

    final = report.objective_history[-1] if report.iterations else report.initial_objective
    print(f"objective = {final:.10g} after {len(report.iterations)} outer iterations")
    if report.final_snr_db is not None:
        print(format_snr(report.final_snr_db))
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, config: RunConfig) -> int:
    print(format_snr(snr_db(read_volume(args.ref), read_volume(args.test))))
    return EXIT_OK


def cmd_slice(args: argparse.Namespace, config: RunConfig) -> int:
    volume = read_volume(args.input)
    write_pgm(args.out_image, extract_slice(volume, args.axis, args.index))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="Run-config file (key = value lines)")
    common.add_argument("--seed", type=int, help="Override the random seed")
    common.add_argument("--threads", type=int, help="Worker threads for slice-parallel work")
    common.add_argument(
        "--deterministic",
        action="store_true",
        help="Force sequential execution",
    )
    common.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"])
    common.add_argument("--metrics", help="Write Prometheus text metrics to this path")

    parser = _Parser(
        prog="tensor-denoise",
        description="Seismic volume denoising with tensor dictionary learning",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="Generate the synthetic benchmark")
    p.add_argument("out_clean")
    p.add_argument("out_noisy")
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("denoise", parents=[common], help="Learn a dictionary and denoise a volume")
    p.add_argument("in_noisy")
    p.add_argument("out_denoised")
    p.add_argument("out_report")
    p.add_argument("--dictionary", help="Where to store the learned dictionary")
    p.add_argument("--reference", help="Clean volume used to score the output")
    p.set_defaults(handler=cmd_denoise)

    p = sub.add_parser("eval", parents=[common], help="SNR of a volume against a reference")
    p.add_argument("ref")
    p.add_argument("test")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("slice", parents=[common], help="Export a 2D section as a PGM image")
    p.add_argument("input")
    p.add_argument("axis", choices=AXIS_LABELS)
    p.add_argument("index", type=int)
    p.add_argument("out_image")
    p.set_defaults(handler=cmd_slice)
    return parser


def _load(args: argparse.Namespace) -> RunConfig:
    config = config_manager.load_config(args.config, reload=True)
    return apply_overrides(
        config,
        seed=args.seed,
        threads=args.threads,
        deterministic=True if args.deterministic else None,
        log_level=args.log_level,
        metrics_path=args.metrics,
    )


def main(argv: Optional[List[str]] = None) -> int:
    """Entry point; returns the process exit code"""
    try:
        args = build_parser().parse_args(argv)
        config = _load(args)
    except TensorDenoiseError as e:
        print(f"error: {e.message}", file=sys.stderr)
        return exit_code_for(e)

    setup_logging(config.environment.value, config.log_level.value, config.log_file)
    handler: Handler = args.handler
    try:
        with parallel_config(backend="threading", n_jobs=config.workers):
            code = handler(args, config)
        if config.metrics_path:
            monitoring.write_metrics(config.metrics_path)
        return code
    except (TensorDenoiseError, OSError, ArithmeticError) as e:
        info = describe_error(e)
        logger.error(
            f"{args.command} failed: {info['message']}",
            extra={"phase": args.command, "error_code": info["error_code"]},
        )
        print(f"error: {info['message']}", file=sys.stderr)
        return exit_code_for(e)


if __name__ == "__main__":
    sys.exit(main())
