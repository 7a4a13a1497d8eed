"""Command-line entry point.

Subcommands ``reference``, ``legendre``, ``greedy`` and ``report`` write CSV
artifacts into the output directory; ``report`` merges them into a table and
one plot-ready file per mesh size.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path

from .greedy import ErrorReport
from .moments import write_density_csv
from .study import (
    METHODS,
    ReferenceCache,
    RunConfig,
    config_from_ini,
    config_to_ini,
    discretization_errors,
    parse_exponents,
    richardson_adjust,
    run_error_study,
    save_greedy,
)

log = logging.getLogger("fphmr")

# exponent of the reference mesh that the adjusted errors extrapolate to
ADJUST_TARGET = 9


class ReportError(RuntimeError):
    pass


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [run] and [box] sections; flags win")
    common.add_argument("--scenario")
    common.add_argument("--h-exponents", type=parse_exponents, help='mesh exponents n (h = 2^-n): "3,4,5" or "3..7"')
    common.add_argument("--ref-exponent", type=int)
    common.add_argument("--m-max", type=int)
    common.add_argument("--source", choices=("truth", "pde"))
    common.add_argument("--n-sample", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--cfl", type=float)
    common.add_argument("--workers", type=int, help="processes for candidate evaluation")
    common.add_argument("--out", help="output directory")
    common.add_argument("--dump-config", action="store_true", help="print the effective config and exit")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="fphmr", description="Hierarchical model reduction for 1D Fokker-Planck")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("reference", parents=[common], help="reference solution and discretization errors")
    sub.add_parser("legendre", parents=[common], help="error study with Legendre bases")
    sub.add_parser("greedy", parents=[common], help="error study with greedy bases")
    sub.add_parser("report", parents=[common], help="merge error CSVs into tables")
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    text = ""
    if args.config:
        path = Path(args.config)
        try:
            text = path.read_text()
        except OSError as err:
            raise ReportError(f"cannot read config {path}: {err.strerror}") from err
    overrides = {
        "scenario": args.scenario,
        "h_exponents": args.h_exponents,
        "ref_exponent": args.ref_exponent,
        "m_max": args.m_max,
        "source": args.source,
        "n_sample": args.n_sample,
        "seed": args.seed,
        "cfl": args.cfl,
        "workers": args.workers,
        "out": args.out,
    }
    return config_from_ini(text, overrides)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cache(cfg: RunConfig) -> ReferenceCache:
    return ReferenceCache(Path(cfg.out) / "cache")


def cmd_reference(cfg: RunConfig) -> list[Path]:
    out = _out_dir(cfg)
    cache = _cache(cfg)
    ref = cache.get(cfg.scenario, cfg.ref_exponent, cfg.cfl, cfg.n_compare)
    ref_path = out / f"reference_n{cfg.ref_exponent}.csv"
    write_density_csv(ref.density, ref_path)
    rows = discretization_errors(cfg, cache)
    h_ref, h_target = 2.0**-cfg.ref_exponent, 2.0**-ADJUST_TARGET
    err_path = out / "discretization.csv"
    with open(err_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["h", "ref_h", "error", "adjusted_error"])
        for h, e in rows:
            adj = richardson_adjust(e, h, h_ref, h_target) if h > h_ref else e
            w.writerow([repr(h), repr(h_ref), repr(e), repr(adj)])
    for h, e in rows:
        print(f"h=2^-{round(-math.log2(h))}: error {e:.4g} against h=2^-{cfg.ref_exponent}")
    return [ref_path, err_path]


def cmd_legendre(cfg: RunConfig) -> list[Path]:
    out = _out_dir(cfg)
    report = run_error_study("legendre", cfg, _cache(cfg))
    path = out / "legendre.csv"
    report.write_csv(path)
    return [path]


def cmd_greedy(cfg: RunConfig) -> list[Path]:
    out = _out_dir(cfg)
    method = f"greedy_{cfg.source}"
    tag = cfg.digest("scenario", "ref_exponent", "m_max", "source", "n_sample", "seed", "cfl", "n_compare", "box")
    written = []

    def persist(exponent, greedy):
        d = out / method / f"h{exponent}-{tag}"
        save_greedy(d, greedy)
        written.append(d)

    report = run_error_study(method, cfg, _cache(cfg), on_greedy=persist)
    path = out / f"{method}.csv"
    report.write_csv(path)
    return [path, *written]


def _read_discretization(path: Path) -> dict:
    with open(path, newline="") as fh:
        return {float(r["h"]): float(r["error"]) for r in csv.DictReader(fh)}


def _fmt(x) -> str:
    return "-" if x is None else f"{x:.4g}"


def cmd_report(cfg: RunConfig) -> list[Path]:
    out = Path(cfg.out)
    present = {m: out / f"{m}.csv" for m in METHODS if (out / f"{m}.csv").exists()}
    disc_path = out / "discretization.csv"
    if not present and not disc_path.exists():
        expected = ", ".join([f"{m}.csv" for m in METHODS] + ["discretization.csv"])
        raise ReportError(f"nothing to report in {out}: none of {expected} found")
    merged = ErrorReport()
    for path in present.values():
        merged.rows.extend(ErrorReport.read_csv(path).rows)
    disc = _read_discretization(disc_path) if disc_path.exists() else {}
    missing = [f"{m}.csv" for m in METHODS if m not in present]
    if missing:
        print(f"note: missing inputs: {', '.join(missing)}", file=sys.stderr)

    merged_path = out / "errors_merged.csv"
    merged.write_csv(merged_path)
    written = [merged_path]
    hs = sorted({h for _, h, _, _ in merged.rows} | set(disc), reverse=True)
    methods = [m for m in METHODS if m in present]
    header = ["h", "m", *methods, "discretization"]
    lines = [header]
    for h in hs:
        per = {m: merged.errors(m, h) for m in methods}
        ms = sorted({m for d in per.values() for m in d}) or [0]
        n = round(-math.log2(h))
        plot_path = out / f"plot_h{n}.csv"
        with open(plot_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["m", *(f"{m}_err" for m in METHODS), "discretization_err"])
            for m in ms:
                vals = [per.get(meth, {}).get(m) for meth in METHODS]
                w.writerow([m, *("" if v is None else repr(v) for v in vals), repr(disc[h]) if h in disc else ""])
                lines.append([f"2^-{n}", str(m), *(_fmt(per[meth].get(m)) for meth in methods), _fmt(disc.get(h))])
        written.append(plot_path)
    widths = [max(len(row[i]) for row in lines) for i in range(len(header))]
    for row in lines:
        print("  ".join(cell.rjust(wd) for cell, wd in zip(row, widths)))
    return written


COMMANDS = {
    "reference": cmd_reference,
    "legendre": cmd_legendre,
    "greedy": cmd_greedy,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s: %(message)s",
    )
    try:
        cfg = load_config(args)
        if args.dump_config:
            sys.stdout.write(config_to_ini(cfg))
            return 0
        if args.command != "report":
            _out_dir(cfg)
            (Path(cfg.out) / f"{args.command}.ini").write_text(config_to_ini(cfg))
        for path in COMMANDS[args.command](cfg):
            log.info("wrote %s", path)
    except (ValueError, KeyError, OSError, RuntimeError) as err:
        print(f"fphmr {args.command}: error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
