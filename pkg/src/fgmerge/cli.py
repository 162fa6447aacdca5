"""Command line entry point.

    fgmerge run CONFIG [--out DIR] [--key=value ...]
    fgmerge compare CONFIG [--out DIR] [--key=value ...]
    fgmerge plot-data TRACE --vehicle ID [--out FILE]
    fgmerge validate-config CONFIG [--key=value ...]

``--key=value`` overrides any config key. Output goes to ``--out``, else
$FGMERGE_OUTPUT_DIR, else ./fgmerge_out. Exit status: 0 ok, 1 bad config or
input, 2 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from fgmerge.config import KNOWN_KEYS, parse_config, serialize_config
from fgmerge.sim import run
from fgmerge.traces import (
    TraceFile,
    UnknownVehicle,
    emit_plot_data,
    run_compare,
    write_summary,
)
from fgmerge.vehicle import ConfigError

OUTPUT_ENV = "FGMERGE_OUTPUT_DIR"

log = logging.getLogger("fgmerge")


def _output_dir(arg) -> Path:
    out = Path(arg or os.environ.get(OUTPUT_ENV) or "fgmerge_out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _overrides(extra: list[str]) -> dict[str, str]:
    out = {}
    for tok in extra:
        if not tok.startswith("--") or "=" not in tok:
            raise ConfigError(tok, "expected --key=value")
        key, val = tok[2:].split("=", 1)
        if key not in KNOWN_KEYS:
            raise ConfigError(key, "unknown key")
        out[key] = val
    return out


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fgmerge", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)
    for name in ("run", "compare"):
        sp = sub.add_parser(name)
        sp.add_argument("config")
        sp.add_argument("--out")
    sp = sub.add_parser("plot-data")
    sp.add_argument("trace")
    sp.add_argument("--vehicle", type=int, required=True)
    sp.add_argument("--out")
    sp = sub.add_parser("validate-config")
    sp.add_argument("config")
    return p


def _cmd_run(args, overrides):
    cfg = parse_config(args.config, overrides)
    out = _output_dir(args.out)
    records, summary = run(cfg)
    TraceFile.from_run(cfg, records).write(out / "trace.csv")
    write_summary(summary, out / "summary.json")
    print(f"{len(records)} records, {len(summary.completed)} CAVs crossed, "
          f"{summary.total_infeasible_steps} infeasible steps -> {out}")


def _cmd_compare(args, overrides):
    cfg = parse_config(args.config, overrides)
    out = _output_dir(args.out)
    t_ocbf, t_fg, report = run_compare(cfg)
    t_ocbf.write(out / "trace_ocbf.csv")
    t_fg.write(out / "trace_fgocbf.csv")
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    steps = report["infeasible_steps"]
    print(f"infeasible steps: Ocbf={steps['Ocbf']} FgOcbf={steps['FgOcbf']} -> {out}")


def _cmd_plot_data(args, overrides):
    if overrides:
        raise ConfigError("plot-data", "takes no config overrides")
    trace = TraceFile.read(args.trace)
    if args.out:
        path = Path(args.out)
    else:
        path = _output_dir(None) / f"plot_vehicle_{args.vehicle}.csv"
    emit_plot_data(trace, args.vehicle, path)
    print(path)


def _cmd_validate(args, overrides):
    cfg = parse_config(args.config, overrides)
    sys.stdout.write(serialize_config(cfg))


COMMANDS = {"run": _cmd_run, "compare": _cmd_compare,
            "plot-data": _cmd_plot_data, "validate-config": _cmd_validate}


def main(argv=None) -> int:
    args, extra = _parser().parse_known_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        COMMANDS[args.cmd](args, _overrides(extra))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except UnknownVehicle as exc:
        print(f"unknown vehicle: {exc}", file=sys.stderr)
        return 1
    except Exception:
        log.exception("internal error")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
