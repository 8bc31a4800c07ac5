"""Command-line front end.

    altalloc run CONFIG [--output-dir DIR] [--master-seed N] [--paths N]
                        [--threads N] [--quiet]
    altalloc plot-data METRICS_CSV... --output OUT.csv
    altalloc config-reference
    altalloc presets [--show NAME]

CONFIG is a path to a configuration file, or the name of a shipped preset
(see ``altalloc presets``).
"""

from __future__ import annotations

import argparse
import sys
from importlib import resources

from .config import config_reference, load_config, parse_config_text
from .errors import ConfigError
from .experiments import emit_plot_data, run_experiment


def _preset_names() -> list[str]:
    root = resources.files("altalloc") / "presets"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".cfg"))


def _resolve_config(name: str):
    import os

    if os.path.exists(name):
        return load_config(name)
    stem = name[:-4] if name.endswith(".cfg") else name
    root = resources.files("altalloc") / "presets"
    candidate = root / f"{stem}.cfg"
    if candidate.is_file():
        return parse_config_text(candidate.read_text(), f"preset:{stem}")
    raise ConfigError(
        f"no such config file or preset: {name!r} (presets: {', '.join(_preset_names())})"
    )


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="altalloc",
        description="Commitment pacing and allocation experiments for portfolios "
                    "mixing liquid and illiquid assets.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one experiment from a config file or preset")
    run_p.add_argument("config", help="config path or preset name")
    run_p.add_argument("--output-dir", default=None, help="override the output directory")
    run_p.add_argument("--master-seed", type=int, default=None, help="override the master seed")
    run_p.add_argument("--paths", type=int, default=None, help="override the path count")
    run_p.add_argument("--threads", type=int, default=1, help="worker process cap")
    run_p.add_argument("--quiet", action="store_true", help="suppress progress output")

    plot_p = sub.add_parser("plot-data", help="merge metrics CSVs into one tidy table")
    plot_p.add_argument("metrics", nargs="+", help="metrics CSV files")
    plot_p.add_argument("--output", "-o", required=True, help="output CSV path")

    sub.add_parser("config-reference", help="print the configuration key reference")

    presets_p = sub.add_parser("presets", help="list shipped presets")
    presets_p.add_argument("--show", default=None, help="print one preset's contents")

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            cfg = _resolve_config(args.config)
            result = run_experiment(
                cfg,
                output_dir=args.output_dir,
                master_seed=args.master_seed,
                paths=args.paths,
                workers=max(1, args.threads),
                quiet=args.quiet,
            )
            if not args.quiet:
                for f in result.files:
                    print(f"[altalloc] wrote {f}")
                if result.failures:
                    print(f"[altalloc] {len(result.failures)} item(s) failed")
            return result.exit_code
        if args.command == "plot-data":
            emit_plot_data(args.metrics, args.output)
            return 0
        if args.command == "config-reference":
            print(config_reference())
            return 0
        if args.command == "presets":
            if args.show:
                stem = args.show[:-4] if args.show.endswith(".cfg") else args.show
                path = resources.files("altalloc") / "presets" / f"{stem}.cfg"
                if not path.is_file():
                    raise ConfigError(f"no such preset: {args.show!r}")
                print(path.read_text(), end="")
            else:
                for name in _preset_names():
                    print(name)
            return 0
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
