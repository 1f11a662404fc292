"""``dtn-lab`` command line.

Exit codes: 0 all experiments passed; 1 an experiment failed; 2 unreadable
or malformed input; 3 a scenario invariant is violated.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path

from . import __version__
from .fields import SpecError, save_spec
from .harness import (EXPERIMENTS, ConfigError, InvariantViolation, ScenarioConfig,
                      observed_orders, run_experiment)

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_INVARIANT = 0, 1, 2, 3


class InputError(Exception):
    pass


def _err(msg: str) -> None:
    print(f"dtn-lab: {msg}", file=sys.stderr)


def load_scenario(path: str) -> ScenarioConfig:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"scenario file not found: {path}")
    text = p.read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}:{exc.colno}: parse error: {exc.msg}") from exc
    return ScenarioConfig.from_dict(raw)


def _write_atomic(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def parse_ladder(text: str) -> list[float]:
    try:
        hs = [float(Fraction(s.strip())) for s in text.split(",") if s.strip()]
    except (ValueError, ZeroDivisionError) as exc:
        raise InputError(f"bad ladder {text!r}") from exc
    if not hs or any(h <= 0 for h in hs) or any(b >= a for a, b in zip(hs, hs[1:])):
        raise InputError("ladder must be strictly decreasing positive spacings")
    return hs


def cmd_run(args) -> int:
    cfg = load_scenario(args.scenario)
    grid = float(Fraction(args.grid)) if args.grid else None
    cfg = cfg.override(seed=args.seed, grid=grid)
    names = [n.strip() for n in args.exp.split(",") if n.strip()]
    for n in names:
        if n not in EXPERIMENTS:
            raise InputError(f"unknown experiment {n!r}; choose from {', '.join(EXPERIMENTS)}")
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise InputError(f"output directory {out} is not empty (use --force)")
    (out / "traces").mkdir(parents=True, exist_ok=True)
    (out / "grids").mkdir(exist_ok=True)
    started = datetime.now(timezone.utc).isoformat()
    reports, code = {}, EXIT_OK
    for name in names:
        try:
            rep = run_experiment(name, cfg)
        except InvariantViolation:
            raise
        except SpecError as exc:
            reports[name] = {"experiment": name, "passed": False, "error": str(exc),
                             "provenance": {"config_hash": cfg.hash(), "seed": cfg.seed}}
            code = EXIT_FAIL
            _err(f"{name}: {exc}")
            continue
        reports[name] = rep.to_json()
        for key, tr in rep.traces.items():
            tr.to_csv(out / "traces" / f"{name}_{key}.csv")
        for key, spec in rep.grids.items():
            save_spec(out / "grids" / f"{name}_{key}", spec)
        if args.figures:
            from .plotting import render
            render(rep, out / "figures")
        status = "PASS" if rep.passed else "FAIL"
        print(f"{name}: {status} discrepancy={rep.discrepancy:.6g} tolerance={rep.tolerance:.6g}")
        if not rep.passed:
            code = EXIT_FAIL
    _write_atomic(out / "report.json", _dump({"config_hash": cfg.hash(), "seed": cfg.seed,
                                              "experiments": reports}))
    manifest = {"scenario": str(Path(args.scenario).resolve()), "experiments": names,
                "output": str(out.resolve()), "started": started,
                "finished": datetime.now(timezone.utc).isoformat(), "version": __version__,
                "config_hash": cfg.hash(), "seed": cfg.seed, "exit_code": code}
    _write_atomic(out / "manifest.json", _dump(manifest))
    return code


def cmd_convergence(args) -> int:
    hs = parse_ladder(args.ladder)
    cfg = load_scenario(args.scenario).override(seed=args.seed)
    errs = []
    for h in hs:
        rep = run_experiment(args.exp, cfg.override(grid=h))
        errs.append(rep.discrepancy)
    lines = ["h,discrepancy,observed_order"]
    for row in observed_orders(hs, errs):
        order = "" if row["observed_order"] is None else repr(row["observed_order"])
        lines.append(f"{row['h']!r},{row['discrepancy']!r},{order}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dtn-lab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run experiments on a scenario")
    r.add_argument("scenario")
    r.add_argument("--exp", required=True, help="comma-separated: " + ",".join(EXPERIMENTS))
    r.add_argument("--out", required=True)
    r.add_argument("--force", action="store_true")
    r.add_argument("--seed", type=int)
    r.add_argument("--grid", help="single grid spacing h (e.g. 1/128)")
    r.add_argument("--figures", action="store_true", help="also render PNG figures")
    r.set_defaults(func=cmd_run)
    c = sub.add_parser("convergence", help="grid-ladder table as CSV")
    c.add_argument("scenario")
    c.add_argument("--ladder", required=True, help="comma-separated decreasing h values")
    c.add_argument("--exp", default="theorem_forward", choices=EXPERIMENTS)
    c.add_argument("--seed", type=int)
    c.add_argument("--out")
    c.set_defaults(func=cmd_convergence)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (InputError, ConfigError) as exc:
        _err(str(exc))
        return EXIT_INPUT
    except InvariantViolation as exc:
        _err(f"invariant violated: {exc}")
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
