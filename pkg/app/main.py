import argparse
import sys
from typing import List, Optional

from pydantic import ValidationError

from app.commands.lab_commands import LabCommands, parse_params
from app.utils.exceptions import EXIT_USAGE, EXIT_VALIDATION, LabException
from app.utils.logger import setup_logger


logger = setup_logger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="omlelab",
        description="Desk-scale laboratory for optimistic MLE on tabular POMDPs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    check = sub.add_parser("check", help="validate a model and report revealing margins")
    check.add_argument("model", help="model JSON file")
    check.add_argument("--m", type=int, action="append", default=[],
                       help="window length for an m-step margin (repeatable)")

    gen = sub.add_parser("gen", help="write a generated instance")
    gen.add_argument("generator", help="lock_under | lock_over | random_weakly_revealing | "
                                       "random_multistep_revealing | block_mdp")
    gen.add_argument("--params", help="generator parameters as a JSON object")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("-o", "--out", required=True, help="output JSON file")

    learn = sub.add_parser("learn", help="run an experiment config (TOML or JSON)")
    learn.add_argument("config")
    learn.add_argument("--output-dir", help="override the config's output directory")
    learn.add_argument("--no-progress", action="store_true")

    eluder = sub.add_parser("eluder", help="l1 / l2 eluder dimension of a function class")
    eluder.add_argument("function_class", help="JSON file with domain_size and functions")
    eluder.add_argument("--eps", type=float, required=True)
    eluder.add_argument("--cap", type=int, help="search node budget")

    oracle = sub.add_parser("oracle", help="operator vs forward probability equivalence")
    oracle.add_argument("model")
    oracle.add_argument("--policy", default="uniform",
                        help="uniform | random:SEED | optimal | open-loop:a1,...,aH")
    oracle.add_argument("--m", type=int, help="use m-step operators")
    oracle.add_argument("--cap", type=int, help="enumeration cap")

    bench = sub.add_parser("bench", help="time the operator-equivalence corpus")
    bench.add_argument("--n-models", type=int, default=50)
    bench.add_argument("--seed", type=int, default=0)
    return parser


def dispatch(args: argparse.Namespace) -> str:
    commands = LabCommands()
    if args.command == "check":
        return commands.cmd_check(args.model, args.m)
    if args.command == "gen":
        return commands.cmd_gen(args.generator, parse_params(args.params), args.out, args.seed)
    if args.command == "learn":
        return commands.cmd_learn(args.config, args.output_dir, progress=not args.no_progress)
    if args.command == "eluder":
        return commands.cmd_eluder(args.function_class, args.eps, args.cap)
    if args.command == "oracle":
        return commands.cmd_oracle(args.model, args.policy, args.m, args.cap)
    return commands.cmd_bench(args.n_models, args.seed)


def main(argv: Optional[List[str]] = None) -> int:
    """Run one subcommand and map failures to exit codes"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else 0

    try:
        print(dispatch(args))
        return 0
    except LabException as exc:
        logger.error(f"{type(exc).__name__}: {exc.detail}")
        print(f"error: {exc.detail}", file=sys.stderr)
        return exc.exit_code
    except ValidationError as exc:
        logger.error(f"Validation Error: {exc.errors()}")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        logger.error(f"Missing file: {exc.filename}")
        print(f"error: no such file: {exc.filename}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        logger.error(f"Unexpected error: {str(exc)}", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
