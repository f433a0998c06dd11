"""``bench`` command line entry point."""

from __future__ import annotations

import argparse
import sys

from .bench import ConfigError, load_config, markdown_table, run


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="bench", description="Run Stokes solver sweeps from a key=value config file."
    )
    ap.add_argument("config", help="flat key=value configuration file")
    ap.add_argument("--out", default="bench_out", help="output directory (default: bench_out)")
    ap.add_argument("--emit", choices=("csv", "md", "both"), default="both")
    ap.add_argument("--dump-residuals", action="store_true", help="write residuals_<strategy>.dat")
    ap.add_argument("--dump-spectrum", action="store_true", help="write full preconditioned spectra")
    ap.add_argument("--threads", type=int, default=1, help="levels solved concurrently")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("bench: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        config = load_config(args.config)
    except (OSError, ConfigError) as exc:
        print(f"bench: {exc}", file=sys.stderr)
        return 2
    result = run(
        config,
        out_dir=args.out,
        emit=args.emit,
        dump_residuals=args.dump_residuals,
        dump_spectrum=args.dump_spectrum,
        threads=args.threads,
    )
    rows = [
        {
            "strategy": r.strategy,
            "h": f"1/{r.n_elem}",
            "iterations": r.iterations,
            "inner": "" if r.inner_top is None else f"{r.inner_top:.2f}/{r.inner_bottom or 0:.2f}",
            "seconds": r.wall_seconds,
            "converged": r.converged,
        }
        for r in result.records
    ]
    print(markdown_table(rows), end="")
    for path in result.files:
        print(f"wrote {path}")
    return 0 if result.all_converged else 1


if __name__ == "__main__":
    sys.exit(main())
