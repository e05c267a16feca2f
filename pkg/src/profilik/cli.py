"""Command-line entry point.

Subcommands: wilks, fisher, coverage, normality, critdim, scan (Monte Carlo
experiments writing rows.csv + summary.json) and bounds (quadratic-form
deviation calculator).  Configuration is flat ``key = value`` text with
``#`` comments; nested structure is flattened by dotted keys.  The same
schema drives validation, defaults and the --help key listing.

Exit codes: 0 all verdicts PASS, 1 any FAIL (or the documented
lambda*-rescaling error of bounds), 2 usage/config error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import deviation, experiments
from .infogeom import as_sym


class CliError(ValueError):
    pass


def parse_value(kind: str, text: str):
    text = text.strip()
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "str":
            return text
        if kind == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if kind == "int_list":
            return tuple(int(t.strip()) for t in text.split(",") if t.strip())
        if kind == "float_list":
            if not text:
                return None
            return tuple(float(t.strip()) for t in text.split(",") if t.strip())
        if kind == "str_list":
            return tuple(t.strip() for t in text.split(",") if t.strip())
        if kind == "float_or_none":
            if not text or text.lower() == "none":
                return None
            return float(text)
    except CliError:
        raise
    except ValueError as exc:
        raise CliError(f"bad {kind} value {text!r}: {exc}") from exc
    raise CliError(f"unknown schema kind {kind!r}")


def format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(format_value(v) for v in value)
    return str(value)


def parse_config_file(path):
    """Flat ``key = value`` pairs; ``#`` starts a comment; blank lines skipped."""
    pairs = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise CliError(f"{path}:{lineno}: expected 'key = value', got {raw.rstrip()!r}")
                k, v = line.split("=", 1)
                pairs.append((k.strip(), v.strip()))
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc}") from exc
    return pairs


def schema_help_text(cmd: str) -> str:
    """The key listing shown in --help; generated from the validation schema."""
    lines = ["configuration keys (via --config file or --set key=value):"]
    for schema_key, default in experiments.schema_for(cmd):
        shown = format_value(default)
        if shown == "":
            shown = "(empty)"
        lines.append(f"  {schema_key.key} ({schema_key.kind}, default {shown}): {schema_key.help}")
    return "\n".join(lines)


def _resolve_config(cmd: str, args) -> dict:
    schema = experiments.schema_for(cmd)
    resolved = {k.key: default for k, default in schema}
    kinds = {k.key: k.kind for k, _ in schema}

    def apply(key, raw, origin):
        if key not in kinds:
            raise CliError(f"unknown key {key!r} in {origin}")
        resolved[key] = parse_value(kinds[key], raw)

    if args.config:
        for k, v in parse_config_file(args.config):
            apply(k, v, f"config file {args.config}")
    for item in args.set or ():
        if "=" not in item:
            raise CliError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        apply(k.strip(), v.strip(), "--set")
    if args.seed is not None:
        resolved["seed"] = args.seed
    if args.threads is not None:
        resolved["threads"] = args.threads
    return resolved


def _write_config_echo(flat: dict, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for k, v in flat.items():
            fh.write(f"{k} = {format_value(v)}\n")


def run_experiment_command(cmd: str, args) -> int:
    resolved = _resolve_config(cmd, args)
    cfg = experiments.config_from_flat(cmd, resolved)
    report = experiments.RUNNERS[cmd](cfg)
    out_dir = args.out or f"profilik_{cmd}_out"
    os.makedirs(out_dir, exist_ok=True)
    experiments.write_report(report, out_dir, args.format)
    _write_config_echo(report.config, os.path.join(out_dir, "config_resolved.cfg"))
    _print_verdicts(cmd, report)
    return 0 if report.summary.get("pass") else 1


def _print_verdicts(cmd: str, report) -> None:
    print(f"[{cmd}] rows: {len(report.rows)}  out: rows.csv summary.json")
    for section, body in sorted(report.summary.items()):
        if isinstance(body, dict):
            for name, entry in body.items():
                if isinstance(entry, dict):
                    verdicts = {k: v for k, v in entry.items() if k.startswith("verdict")}
                    for vk, vv in verdicts.items():
                        print(f"[{cmd}] {section}.{name}.{vk}: {'PASS' if vv else 'FAIL'}")
    print(f"[{cmd}] overall: {'PASS' if report.summary.get('pass') else 'FAIL'}")


def _parse_matrix(spec: str) -> np.ndarray:
    if spec.startswith("diag:"):
        vals = [float(t) for t in spec[5:].split(",") if t.strip()]
        if not vals:
            raise CliError("diag: needs at least one value")
        return np.diag(vals)
    if spec.startswith("file:"):
        path = spec[5:]
        try:
            return np.loadtxt(path, delimiter=",", ndmin=2)
        except OSError as exc:
            raise CliError(f"cannot read matrix file {path}: {exc}") from exc
    raise CliError("matrix spec must be diag:a,b,... or file:path.csv")


def run_bounds_command(args) -> int:
    try:
        B = as_sym(_parse_matrix(args.B))
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    x_grid = [float(t) for t in args.x.split(",") if t.strip()]
    try:
        report = deviation.critical_quantities(B, args.g)
    except ValueError as exc:
        # documented error: lambda* > 1 asks the caller to rescale B
        print(f"error: {exc}", file=sys.stderr)
        return 1
    quantiles = []
    for x in x_grid:
        try:
            z = deviation.qf_quantile(x, B, args.g, args.tail_slope)
            quantiles.append({"x": x, "z": z, "status": "ok"})
        except deviation.CapabilityError:
            quantiles.append({"x": x, "z": None, "status": "gated"})
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
    print(report.to_json())
    print("x,z,status")
    for q in quantiles:
        z_txt = "" if q["z"] is None else repr(q["z"])
        print(f"{q['x']!r},{z_txt},{q['status']}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        payload = {"report": json.loads(report.to_json()), "quantiles": quantiles}
        with open(os.path.join(args.out, "bounds.json"), "w", encoding="utf-8",
                  newline="\n") as fh:
            fh.write(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="profilik",
        description="Finite-sample profile quasi-likelihood experiments and calculators",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for cmd, blurb in (
        ("wilks", "Wilks statistic distribution study"),
        ("fisher", "Fisher expansion residual scaling study"),
        ("coverage", "likelihood confidence-set coverage study"),
        ("normality", "efficient-score normality study"),
        ("critdim", "critical-dimension trichotomy study"),
        ("scan", "smoothness/concentration condition scan"),
    ):
        p = sub.add_parser(
            cmd, help=blurb, epilog=schema_help_text(cmd),
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--seed", type=int, help="master seed (overrides 'seed')")
        p.add_argument("--threads", type=int, help="worker threads (overrides 'threads')")
        p.add_argument("--out", help=f"output directory (default profilik_{cmd}_out)")
        p.add_argument("--format", choices=("csv", "json", "both"), default="both")

    pb = sub.add_parser("bounds", help="quadratic-form deviation quantities and quantiles")
    pb.add_argument("--B", required=True, help="symmetric matrix: diag:a,b,... or file:path.csv")
    pb.add_argument("--g", required=True, type=float, help="moment range constant g")
    pb.add_argument("--x", default="0.5,1,2,4", help="comma-separated x grid")
    pb.add_argument("--tail-slope", type=float, default=None, dest="tail_slope",
                    help="enables the gated x > x_c branch")
    pb.add_argument("--out", help="optional output directory for bounds.json")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "bounds":
            return run_bounds_command(args)
        return run_experiment_command(args.command, args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
