"""
属性付きグラフアライメントのコマンドラインインターフェース

終了コード: 0 成功 / 1 使い方・パラメータの誤り / 2 実行時エラー / 3 verify 失敗
"""
import argparse
import json
import logging
import sys
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional

import pytz

from app import __version__
from app.alignment.bipartite_map import align_bipartite_map, assignment_total, pair_weights
from app.alignment.graph_model import ModelParams, generate_pair
from app.alignment.refinement import refine, refine_thresholds
from app.alignment.tree_counting import align_by_counting
from app.config import (
    DEFAULT_ATTR_LOG_FACTOR,
    DEFAULT_C,
    DEFAULT_EPSILON,
    DEFAULT_JOBS,
    DEFAULT_USER_LOG_FACTOR,
    LOG_FORMAT,
    LOG_LEVEL,
    PIPELINE_MODES,
    REGIMES,
    RESULTS_DIR,
    TIMEZONE,
)
from app.harness import ExperimentConfig, run_experiment, run_pipeline
from app.shared.analysis import check_conditions, condition_report_to_dict, empirical_moments
from app.shared.errors import AlignmentError, ParameterError
from app.shared.pair_io import (
    partial_to_dict,
    read_pair,
    read_partial,
    refinement_to_dict,
    write_json,
    write_pair,
    write_partial,
)
from app.shared.verification import run_verification, verification_report

# ログ設定
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2
EXIT_VERIFY_FAILED = 3


class UsageError(Exception):
    """argparse の使い方エラー"""


class ArgumentParser(argparse.ArgumentParser):
    """使い方エラーを終了コード1で扱うパーサ"""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


class TimezoneFormatter(logging.Formatter):
    """設定されたタイムゾーンでタイムスタンプを出力"""

    def __init__(self, fmt: str, tz_name: str):
        super().__init__(fmt)
        self.tz = pytz.timezone(tz_name)

    def formatTime(self, record, datefmt=None):
        stamp = datetime.fromtimestamp(record.created, self.tz)
        return stamp.strftime(datefmt or "%Y-%m-%d %H:%M:%S %Z")


def setup_logging(verbose: bool = False) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(TimezoneFormatter(LOG_FORMAT, TIMEZONE))
    level = logging.DEBUG if verbose else getattr(logging, LOG_LEVEL.upper(), logging.INFO)
    logging.basicConfig(level=level, handlers=[handler], force=True)


def emit(data: Dict, out: Optional[str]) -> None:
    """JSON をファイルか標準出力へ"""
    if out:
        write_json(data, out)
        logger.info(f"Wrote {out}")
    else:
        print(json.dumps(data, indent=2, sort_keys=True))


def params_from_args(args: argparse.Namespace) -> ModelParams:
    return ModelParams(n=args.n, m=args.m, q_u=args.qu, rho_u=args.rhou, q_a=args.qa, rho_a=args.rhoa)


def cmd_gen(args: argparse.Namespace) -> int:
    seeded = [args.seeded_total, args.seed_fraction, args.base_p, args.subsample]
    direct = [args.n, args.m, args.qu, args.rhou, args.qa, args.rhoa]
    if all(v is not None for v in seeded) and all(v is None for v in direct):
        params = ModelParams.from_seeded(args.seeded_total, args.seed_fraction, args.base_p, args.subsample)
    elif all(v is not None for v in direct) and all(v is None for v in seeded):
        params = params_from_args(args)
    else:
        raise UsageError(
            "gen: give either all of --n --m --qu --rhou --qa --rhoa "
            "or all of --seeded-total --seed-fraction --base-p --subsample"
        )
    pair = generate_pair(params, args.seed, identity_truth=args.identity_truth)
    write_pair(pair, args.out)
    return EXIT_OK


def cmd_align(args: argparse.Namespace) -> int:
    pair = read_pair(args.pair)
    partial = align_by_counting(pair, args.k, args.c)
    if args.out:
        write_partial(partial, args.out)
    else:
        emit(partial_to_dict(partial), None)
    return EXIT_OK


def cmd_refine(args: argparse.Namespace) -> int:
    pair = read_pair(args.pair)
    partial = read_partial(args.partial)
    result, regime = refine(
        pair, partial, args.regime, user_factor=args.user_factor, attr_factor=args.attr_factor
    )
    data = refinement_to_dict(result)
    data["regime"] = regime
    emit(data, args.out)
    return EXIT_OK


def cmd_pipeline(args: argparse.Namespace) -> int:
    pair = read_pair(args.pair)
    outcome = run_pipeline(
        pair, args.k, args.c, args.mode, args.epsilon, args.user_factor, args.attr_factor
    )
    metrics = outcome.metrics
    data = {
        "mode": args.mode,
        "regime": outcome.regime,
        "partial": partial_to_dict(outcome.partial),
        "permutation": [int(j) if j >= 0 else None for j in outcome.final],
        "metrics": {
            "precision": metrics.precision,
            "coverage": metrics.coverage,
            "accuracy": metrics.accuracy,
            "exact": metrics.exact,
        },
    }
    emit(data, args.out)
    return EXIT_OK


def cmd_map_bipartite(args: argparse.Namespace) -> int:
    pair = read_pair(args.pair)
    perm = align_bipartite_map(pair)
    data = {
        "permutation": perm.to_list(),
        "total_weight": assignment_total(pair_weights(pair).w, perm),
        "exact": perm == pair.truth,
    }
    emit(data, args.out)
    return EXIT_OK


def cmd_experiment(args: argparse.Namespace) -> int:
    config = ExperimentConfig.from_json(args.config)
    # 出力先が未指定なら結果ディレクトリに設定ファイル名で保存
    stem = Path(args.config).stem
    config.output_csv = config.output_csv or str(Path(args.out_dir) / f"{stem}.csv")
    config.output_json = config.output_json or str(Path(args.out_dir) / f"{stem}.json")
    run_experiment(config, jobs=args.jobs, progress=not args.no_progress)
    return EXIT_OK


def cmd_moments(args: argparse.Namespace) -> int:
    estimates = empirical_moments(params_from_args(args), args.k, args.trials, args.seed, jobs=args.jobs)
    emit(estimates.to_dict(), args.out)
    return EXIT_OK


def cmd_check_conditions(args: argparse.Namespace) -> int:
    params = params_from_args(args)
    report = condition_report_to_dict(check_conditions(params, args.k, args.epsilon))
    thresholds = refine_thresholds(params, args.user_factor, args.attr_factor)
    report["refine_thresholds"] = {
        name: (value if value != float("inf") else None)
        for name, value in vars(thresholds).items()
    }
    emit(report, args.out)
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    results = run_verification(args.seed, quick=args.quick)
    report = verification_report(results)
    emit(report, args.out)
    return EXIT_OK if report["passed"] else EXIT_VERIFY_FAILED


def _add_model_flags(parser: argparse.ArgumentParser, required: bool = True) -> None:
    group = parser.add_argument_group("model parameters")
    group.add_argument("--n", type=int, required=required, help="Number of users (>= 2)")
    group.add_argument("--m", type=int, required=required, help="Number of attributes (>= 0)")
    group.add_argument("--qu", type=float, required=required, help="User-user edge probability q_u in (0, 1)")
    group.add_argument("--rhou", type=float, required=required, help="User-user edge correlation rho_u in [0, 1]")
    group.add_argument("--qa", type=float, required=required, help="User-attribute edge probability q_a in (0, 1)")
    group.add_argument("--rhoa", type=float, required=required, help="User-attribute edge correlation rho_a in [0, 1]")


def _add_out_flag(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", help="Output JSON path (default: stdout)")


def _add_factor_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("refinement thresholds")
    group.add_argument(
        "--user-factor", type=float, default=DEFAULT_USER_LOG_FACTOR,
        help=f"Factor a in f(gamma1) = a log n / ((n-2) q_u^2) (default: {DEFAULT_USER_LOG_FACTOR})",
    )
    group.add_argument(
        "--attr-factor", type=float, default=DEFAULT_ATTR_LOG_FACTOR,
        help=f"Factor b in f(gamma3) = b log n / (m q_a^2) (default: {DEFAULT_ATTR_LOG_FACTOR})",
    )


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(
        prog="agalign",
        description="Attributed Erdos-Renyi graph alignment: generation, counting, refinement, experiments.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--verbose", action="store_true", help="Enable debug logging")
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
    subparsers.required = True

    p_gen = subparsers.add_parser("gen", help="Generate a correlated attributed graph pair")
    _add_model_flags(p_gen, required=False)
    seeded = p_gen.add_argument_group("seeded-alignment parameterisation")
    seeded.add_argument("--seeded-total", type=int, help="Total vertex count N (seeds become attributes)")
    seeded.add_argument("--seed-fraction", type=float, help="Seed fraction alpha in (0, 1)")
    seeded.add_argument("--base-p", type=float, help="Base graph edge probability p")
    seeded.add_argument("--subsample", type=float, help="Subsampling probability s in (0, 1]")
    p_gen.add_argument("--seed", type=int, required=True, help="64-bit RNG seed")
    p_gen.add_argument("--identity-truth", action="store_true", help="Fix the true permutation to the identity")
    p_gen.add_argument("--out", required=True, help="Output pair file")
    p_gen.set_defaults(func=cmd_gen)

    p_align = subparsers.add_parser("align", help="Subgraph-counting partial alignment")
    p_align.add_argument("--pair", required=True, help="Input pair file")
    p_align.add_argument("--k", type=int, required=True, help="Number of attribute branches")
    p_align.add_argument("--c", type=float, default=DEFAULT_C, help=f"Threshold fraction in (0, 1) (default: {DEFAULT_C})")
    p_align.add_argument("--out", help="Output partial alignment JSON (default: stdout)")
    p_align.set_defaults(func=cmd_align)

    p_refine = subparsers.add_parser("refine", help="Refine a partial alignment to a full permutation")
    p_refine.add_argument("--pair", required=True, help="Input pair file")
    p_refine.add_argument("--partial", required=True, help="Partial alignment JSON")
    p_refine.add_argument("--regime", choices=REGIMES, default="auto", help="Refinement variant (default: auto)")
    _add_factor_flags(p_refine)
    _add_out_flag(p_refine)
    p_refine.set_defaults(func=cmd_refine)

    p_pipe = subparsers.add_parser("pipeline", help="Run the end-to-end pipeline on a pair file")
    p_pipe.add_argument("--pair", required=True, help="Input pair file")
    p_pipe.add_argument("--k", type=int, required=True, help="Number of attribute branches")
    p_pipe.add_argument("--c", type=float, default=DEFAULT_C, help=f"Threshold fraction (default: {DEFAULT_C})")
    p_pipe.add_argument("--mode", choices=PIPELINE_MODES, default="auto", help="Pipeline mode (default: auto)")
    p_pipe.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON, help=f"Regime cutoff epsilon (default: {DEFAULT_EPSILON})")
    _add_factor_flags(p_pipe)
    _add_out_flag(p_pipe)
    p_pipe.set_defaults(func=cmd_pipeline)

    p_map = subparsers.add_parser("map-bipartite", help="Bipartite MAP alignment from attribute edges")
    p_map.add_argument("--pair", required=True, help="Input pair file")
    _add_out_flag(p_map)
    p_map.set_defaults(func=cmd_map_bipartite)

    p_exp = subparsers.add_parser("experiment", help="Run a seeded Monte Carlo sweep from a JSON config")
    p_exp.add_argument("--config", required=True, help="Experiment config JSON")
    p_exp.add_argument("--jobs", type=int, default=DEFAULT_JOBS, help=f"Worker processes (default: {DEFAULT_JOBS})")
    p_exp.add_argument("--out-dir", default=RESULTS_DIR, help=f"Directory for outputs the config leaves unset (default: {RESULTS_DIR})")
    p_exp.add_argument("--no-progress", action="store_true", help="Hide the progress bar")
    p_exp.set_defaults(func=cmd_experiment)

    p_mom = subparsers.add_parser("moments", help="Monte Carlo moments of the similarity score")
    _add_model_flags(p_mom)
    p_mom.add_argument("--k", type=int, required=True, help="Number of attribute branches")
    p_mom.add_argument("--trials", type=int, required=True, help="Number of trials")
    p_mom.add_argument("--seed", type=int, required=True, help="Base seed")
    p_mom.add_argument("--jobs", type=int, default=DEFAULT_JOBS, help=f"Worker processes (default: {DEFAULT_JOBS})")
    _add_out_flag(p_mom)
    p_mom.set_defaults(func=cmd_moments)

    p_cond = subparsers.add_parser("check-conditions", help="Report recovery conditions as finite-sample surrogates")
    _add_model_flags(p_cond)
    p_cond.add_argument("--k", type=int, required=True, help="Number of attribute branches")
    p_cond.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON, help=f"Epsilon (default: {DEFAULT_EPSILON})")
    _add_factor_flags(p_cond)
    _add_out_flag(p_cond)
    p_cond.set_defaults(func=cmd_check_conditions)

    p_ver = subparsers.add_parser("verify", help="Run the built-in oracle and property checks")
    p_ver.add_argument("--seed", type=int, required=True, help="Seed for randomized checks")
    p_ver.add_argument("--quick", action="store_true", help="Fewer random instances")
    _add_out_flag(p_ver)
    p_ver.set_defaults(func=cmd_verify)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """サブコマンドを実行して終了コードを返す"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    setup_logging(args.verbose)

    try:
        return args.func(args)
    except (UsageError, ParameterError) as e:
        print(f"agalign {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (AlignmentError, OSError) as e:
        print(f"agalign {args.command}: error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
