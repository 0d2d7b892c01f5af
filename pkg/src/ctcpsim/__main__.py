"""
Command-line entry point::

    ctcpsim sweep --config experiment.ini --out results/ --parallel 8
    ctcpsim fairness --rate-mbps 5 --per 0,0.05,0.2 --out results/
    ctcpsim trace --variant ctcp_v2 --per 0.005 --out results/
    ctcpsim selftest --acceptance

Exit status: 0 when every run completed and every check passed,
1 when a run hit the duration cap or a check failed, 2 on errors.
"""
import argparse
import contextlib
import logging
import os
import sys
from typing import Optional, Sequence

from . import __version__
from .bench import (
    DEFAULT_PAIRINGS,
    TRACE_COLUMNS,
    run_fairness,
    run_sweep,
    run_trace,
    trace_scenario,
    write_csv,
)
from .config import load_experiment_config
from .congestion import Variant
from .logging import config_logger, log_uncaught_exception, unuse_disk_handler, use_disk_handler
from .profile import profiled
from .selftest import format_table, run_checks
from .timer import timer

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INCOMPLETE = 1
EXIT_ERROR = 2


def _floats(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _variants(text: str) -> tuple:
    try:
        return tuple(Variant(v.strip()) for v in text.split(",") if v.strip())
    except ValueError:
        names = ", ".join(v.value for v in Variant)
        raise argparse.ArgumentTypeError(f"variants are {names}; got {text!r}")


def _pairing(text: str) -> tuple:
    parts = _variants(text.replace(":", ","))
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"a pairing is two variants 'a:b', got {text!r}")
    return parts


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI experiment config")
    common.add_argument("--out", metavar="DIR", default=".", help="output directory for CSV files")
    common.add_argument("--seed", type=int, help="base seed")
    common.add_argument("--reps", type=int, dest="repetitions", help="repetitions per cell")
    common.add_argument("--parallel", type=int, help="worker processes")
    common.add_argument("--log-level", default="info",
                        choices=["debug", "info", "warning", "error"])
    common.add_argument("--log-dir", metavar="DIR", help="also write rotating log files here")
    common.add_argument("--profile", metavar="FILE", help="profile the command, dump stats to FILE")

    experiment = argparse.ArgumentParser(add_help=False)
    experiment.add_argument("--per", type=_floats, help="comma-separated erasure rates")
    experiment.add_argument("--rtt-ms", type=_floats, dest="rtt_ms", help="comma-separated RTTs")
    experiment.add_argument("--rate-mbps", type=float, dest="link_rate_mbps")
    experiment.add_argument("--transfer-mb", type=float, dest="transfer_mb")
    experiment.add_argument("--generation-size", type=int, dest="generation_size")
    experiment.add_argument("--symbol-size", type=int, dest="symbol_size")
    experiment.add_argument("--queue-capacity", type=int, dest="queue_capacity")
    experiment.add_argument("--duration-cap-s", type=float, dest="duration_cap_s")
    experiment.add_argument("--no-payload", action="store_false", dest="carry_payload", default=None,
                            help="carry coefficients only; byte accounting is unchanged")
    experiment.add_argument("--no-pacing", action="store_false", dest="pacing", default=None,
                            help="send each window at once instead of spreading it over the RTT")

    parser = argparse.ArgumentParser(prog="ctcpsim", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", parents=[common, experiment], help="variant x PER x RTT sweep")
    p.add_argument("--variants", type=_variants)

    p = sub.add_parser("fairness", parents=[common, experiment], help="two flows sharing a link")
    p.add_argument("--pairing", type=_pairing, action="append", dest="pairings",
                   help="'a:b', repeatable; default cubic:ctcp_v2 and cubic:cubic")

    p = sub.add_parser("trace", parents=[common, experiment], help="goodput and cwnd over time")
    p.add_argument("--variant", type=Variant, default=Variant.CTCP_V2)
    p.add_argument("--bin-s", type=float, default=1.0, help="goodput bin width")

    p = sub.add_parser("selftest", parents=[common], help="oracle and acceptance checks")
    p.add_argument("--acceptance", action="store_true", help="also run the full-size acceptance checks")
    p.add_argument("--only", action="append", help="run only the named check; repeatable")
    return parser


def _config(args):
    keys = (
        "seed", "repetitions", "parallel", "per", "rtt_ms", "link_rate_mbps", "transfer_mb",
        "generation_size", "symbol_size", "queue_capacity", "duration_cap_s", "carry_payload",
        "pacing", "variants",
    )
    overrides = {k: getattr(args, k, None) for k in keys}
    return load_experiment_config(args.config, **overrides)


def cmd_sweep(args) -> int:
    config = _config(args)
    result = run_sweep(config, out_dir=args.out)
    for s in result.summary:
        print(f"{s.variant.value:8s} per={s.per:<6g} rtt={s.rtt_ms:<5g}ms "
              f"{s.goodput_mean_bps / 1e6:7.3f} ± {s.goodput_std_bps / 1e6:.3f} Mbps "
              f"(n={s.n}{', incomplete ' + str(s.incomplete) if s.incomplete else ''})")
    return EXIT_INCOMPLETE if result.incomplete else EXIT_OK


def cmd_fairness(args) -> int:
    config = _config(args)
    rows = run_fairness(config, out_dir=args.out, pairings=args.pairings or DEFAULT_PAIRINGS)
    return EXIT_INCOMPLETE if any(r.incomplete for r in rows) else EXIT_OK


def cmd_trace(args) -> int:
    config = _config(args)
    code = EXIT_OK
    for per in config.per:
        for rtt_ms in config.rtt_ms:
            scenario = trace_scenario(config, args.variant, per=per, rtt_ms=rtt_ms)
            result = run_trace(scenario, bin_s=args.bin_s)
            name = f"trace_{args.variant.value}_per{per:g}_rtt{rtt_ms:g}.csv"
            write_csv(os.path.join(args.out, name), TRACE_COLUMNS, result.rows)
            print(f"{args.variant.value} per={per:g} rtt={rtt_ms:g}ms: "
                  f"mean {result.mean_goodput_bps / 1e6:.3f} Mbps over {result.bins.size} bins")
            if result.flow.incomplete:
                code = EXIT_INCOMPLETE
    return code


def cmd_selftest(args) -> int:
    results = run_checks(
        acceptance=args.acceptance, seed=args.seed or 0, parallel=args.parallel or 1, only=args.only,
    )
    print(format_table(results))
    return EXIT_OK if all(c.passed for c in results) else EXIT_INCOMPLETE


COMMANDS = {
    "sweep": cmd_sweep,
    "fairness": cmd_fairness,
    "trace": cmd_trace,
    "selftest": cmd_selftest,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    with_process_name = (args.parallel or 1) > 1
    config_logger(level=args.log_level, with_process_name=with_process_name)
    log_uncaught_exception(logger)
    if args.log_dir:
        unuse_disk_handler()
        use_disk_handler(foldername=args.log_dir, with_process_name=with_process_name)

    prof = profiled(args.profile) if args.profile else contextlib.nullcontext()
    try:
        with prof, timer(args.command, logger.info):
            return COMMANDS[args.command](args)
    except (ValueError, OSError) as e:
        logger.error("%s: %s", type(e).__name__, e)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
