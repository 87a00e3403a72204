"""Command-line front end.

One subcommand per pipeline stage plus `run` for the whole chain.  Every
command takes --config/--seed/--out/--duration-s; flags override the
corresponding config fields.  Failures print a single machine-readable
`error: ...` line on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .config import PipelineConfig, load_config
from .errors import ConfigError, FormatError
from .pipeline import (
    G2_FILE,
    KEY_FILE,
    REPORT_FILE,
    SIFTED_FILE,
    PipelineError,
    run_pipeline,
    stage_amplify,
    stage_g2,
    stage_qber,
    stage_reconcile,
    stage_report,
    stage_sift,
    stage_simulate,
)
from .postproc import format_report, parse_report, read_key_bits
from .sifting import read_sifted


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="heraldbb84",
        description="Discrete-event simulator and key post-processing for "
        "passively encoded polarization QKD with a heralded source.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    names = ("run", "simulate", "sift", "qber", "reconcile", "amplify", "g2", "report")
    for name in names:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="configuration file")
        p.add_argument("--seed", type=int, help="master seed (overrides config)")
        p.add_argument("--out", type=Path, help="output directory (overrides config)")
        p.add_argument(
            "--duration-s", type=float, dest="duration_s", help="acquisition length in seconds"
        )
        if name == "g2":
            p.add_argument(
                "tags",
                nargs="*",
                type=Path,
                help="optional herald/arm1/arm2 tag files; omitted means simulate first",
            )
    return parser


def _load(args) -> PipelineConfig:
    config = load_config(args.config) if args.config else PipelineConfig()
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = str(args.out)
    if args.duration_s is not None:
        if args.duration_s <= 0:
            raise ConfigError(f"--duration-s must be > 0, got {args.duration_s}")
        overrides["duration_ps"] = int(round(args.duration_s * 1e12))
    return replace(config, **overrides) if overrides else config


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = _load(args)
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "run":
            report = run_pipeline(config)
            sys.stdout.write(format_report(report))
        elif args.command == "simulate":
            stage_simulate(config, out)
            print(f"wrote tag streams and encoding log under {out}")
        elif args.command == "sift":
            stage_sift(config, out)
            print(f"retained {len(read_sifted(out / SIFTED_FILE))} sifted bits -> {out / SIFTED_FILE}")
        elif args.command == "qber":
            stage_qber(config, out)
        elif args.command == "reconcile":
            stage_reconcile(config, out)
        elif args.command == "amplify":
            stage_amplify(config, out)
            print(f"final key: {read_key_bits(out / KEY_FILE).size} bits -> {out / KEY_FILE}")
        elif args.command == "g2":
            if args.tags and len(args.tags) != 3:
                raise ConfigError("g2 takes either no tag files or exactly three")
            g2, sigma = stage_g2(config, out, qtag_paths=args.tags or None)
            print(f"g2_zero={g2:.6g} sigma={sigma:.6g} sweep -> {out / G2_FILE}")
        elif args.command == "report":
            stage_report(config, out)
            sys.stdout.write(format_report(parse_report(out / REPORT_FILE)))
    except (PipelineError, ConfigError, FormatError, FileNotFoundError, ValueError) as e:
        print(f"error: {args.command}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
