"""The ``cascade`` command line.

Each subcommand loads a JSON config, applies the seed precedence
(``--seed`` flag, then the ``CASCADE_SEED`` environment variable, then
the config), runs the experiment, and writes its outputs plus a
manifest into ``--out``.  Exit codes: 0 success, 2 integrator blow-up,
3 insufficient samples for error bars, 4 failed span certificate, and
1 for any other error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Sequence

from cascade import __version__
from cascade.experiments import (
    EXIT_BLOW_UP,
    EXIT_CERTIFICATE_FAILED,
    EXIT_FAILURE,
    EXIT_INSUFFICIENT_SAMPLES,
    EXIT_SUCCESS,
    SpanCertificateError,
    load_config,
    resolve_seed,
    run,
)
from cascade.integrator import BlowUpError
from cascade.model import CascadeError
from cascade.stats import InsufficientSamplesError

_SUBCOMMANDS = (
    ("simulate", "simulate", "Run an ensemble and write per-shell moments"),
    ("sweep-nu", "sweep_nu", "Sweep the viscosity and write the anomaly table"),
    ("spectrum", "spectrum", "Run an ensemble and write the log2 spectrum"),
    (
        "hormander-verify",
        "hormander",
        "Certify the bracket-spanning condition and write the certificate",
    ),
    (
        "malliavin",
        "malliavin",
        "Sample Gram matrices and write spectral probe values",
    ),
    (
        "control-demo",
        "control_demo",
        "Run the cyclic control experiment and write its decay table",
    ),
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cascade",
        description="Simulation and verification workbench for a "
        "stochastically forced dyadic shell model.",
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, kind, help_text in _SUBCOMMANDS:
        sub = subparsers.add_parser(name, help=help_text, description=help_text)
        sub.add_argument(
            "--config", required=True, type=Path, help="JSON experiment config"
        )
        sub.add_argument(
            "--out", required=True, type=Path, help="output directory"
        )
        sub.add_argument(
            "--seed",
            type=int,
            default=None,
            help="seed override (beats CASCADE_SEED and the config)",
        )
        sub.add_argument(
            "--threads",
            type=int,
            default=None,
            help="worker threads (default: all cores)",
        )
        sub.set_defaults(kind=kind)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        if config.kind != args.kind:
            raise CascadeError(
                f"config kind {config.kind!r} does not match "
                f"subcommand kind {args.kind!r}"
            )
        seed = resolve_seed(config.run.seed, override=args.seed)
        out = run(config.with_seed(seed), args.out, threads=args.threads)
    except BlowUpError as exc:
        print(f"cascade: blow-up: {exc}", file=sys.stderr)
        return EXIT_BLOW_UP
    except InsufficientSamplesError as exc:
        print(f"cascade: insufficient samples: {exc}", file=sys.stderr)
        return EXIT_INSUFFICIENT_SAMPLES
    except SpanCertificateError as exc:
        print(f"cascade: certificate failed: {exc}", file=sys.stderr)
        return EXIT_CERTIFICATE_FAILED
    except (CascadeError, OSError) as exc:
        print(f"cascade: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    print(out)
    return EXIT_SUCCESS


if __name__ == "__main__":
    raise SystemExit(main())
