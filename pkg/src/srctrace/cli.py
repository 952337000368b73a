"""``srctrace`` command line.

Exit codes: 0 success, 1 usage/config, 2 data validation or protocol,
3 numerical failure (gradcheck, degenerate geometry), 4 missing input / I/O.
"""
from __future__ import annotations

import argparse
import logging
import sys

from . import kernels
from .gradcheck import run_suite
from .nn import ContractError, DegenerateInputError, OracleError
from .pipeline import STAGES, ConfigError, ExperimentConfig
from .protocol import ProtocolError
from .store import EmbeddingFormatError, ValidationError
from .synth import SynthConfigError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3, 4
COMMANDS = ("synth", "protocol", "fingerprint", "train", "score", "eval", "gradcheck", "report")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="srctrace", description="Embedding-level attack source tracing toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    helps = {
        "synth": "generate a synthetic embedding set and manifest",
        "protocol": "build the partition plan and trial list",
        "fingerprint": "select enrollment utterances and build fingerprint banks",
        "train": "train the projector (optional) and the Siamese/MLP backends",
        "score": "score every trial with every configured backend",
        "eval": "compute EERs per backend, level and condition",
        "report": "tabulate EER trends across enrollment sizes",
    }
    for name in COMMANDS:
        if name == "gradcheck":
            p = sub.add_parser(name, help="finite-difference gradient checks")
            p.add_argument("--points", type=int, default=100)
            p.add_argument("--seed", type=int, default=0)
            continue
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("config", help="experiment config (JSON)")
    return parser


def _gradcheck(points: int, seed: int) -> int:
    failed = False
    for res in run_suite(points, seed):
        status = "PASS" if res.passed else "FAIL"
        print(f"{status} {res.name}: max rel err {res.max_rel_error:.3e} over {res.points} points "
              f"({res.seconds:.2f}s)")
        failed |= not res.passed
    return EXIT_NUMERIC if failed else EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command is None:
        build_parser().print_help(sys.stderr)
        return EXIT_CONFIG
    logging.getLogger(__name__).info("kernels: %s", kernels.IMPLEMENTATION)
    try:
        if args.command == "gradcheck":
            return _gradcheck(args.points, args.seed)
        cfg = ExperimentConfig.load(args.config)
        out = STAGES[args.command](cfg)
        if args.command == "report":
            sys.stdout.write(out)
        return EXIT_OK
    except (ConfigError, SynthConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValidationError, ProtocolError, EmbeddingFormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DegenerateInputError, OracleError, FloatingPointError, ContractError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
