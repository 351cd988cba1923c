"""Command line interface: ``daclab {theory,run,sweep,expansion,verify}``."""

from __future__ import annotations

import argparse
import json
import sys

from . import acceptance, experiments
from .experiments import ExperimentConfig, emit, summarize


def _load_config(path):
    if not path:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _parse_values(text):
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        try:
            out.append(json.loads(tok))
        except json.JSONDecodeError:
            out.append(tok)
    return out


def _build_config(args, base: dict) -> ExperimentConfig:
    cfg = dict(base)
    if getattr(args, "preset", None):
        cfg["preset"] = args.preset
    for key in ("trials", "seed", "workers"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if getattr(args, "out", None):
        cfg["output_path"] = args.out
    sweep = dict(cfg.get("sweep", {}))
    for item in getattr(args, "param", None) or []:
        name, _, values = item.partition("=")
        sweep[name] = _parse_values(values)
    cfg["sweep"] = sweep
    for item in getattr(args, "set", None) or []:
        name, _, value = item.partition("=")
        values = _parse_values(value)
        cfg.setdefault("overrides", {})[name] = values[0] if len(values) == 1 else values
    return ExperimentConfig.from_dict(cfg)


def _print_summary(records, cfg: ExperimentConfig):
    keys = sorted({k for r in records for k in r.params})
    rows = summarize(records, by=("method", *keys))
    for key, (mean, se, count) in sorted(rows.items(), key=lambda kv: str(kv[0])):
        label = ", ".join(f"{k}={v}" for k, v in zip(keys, key[1:]))
        print(f"{key[0]:>14}  {label:<40} mean={mean:.6g}  se={se:.2g}  n={count}")


def cmd_theory(args) -> int:
    cfg = _build_config(args, _load_config(args.config))
    if cfg.runner not in ("linear", "misspec"):
        print(f"theory reports need a fixed-design preset (example_4_1, example_6), got {cfg.preset}",
              file=sys.stderr)
        return 2
    cfg.trials = 1
    res = experiments.run(cfg)
    cells = res.meta.get("cells")
    out = []
    for ci, rep in sorted(res.theory.items()):
        entry = {"cell": cells[ci] if cells else ci, "report": rep.to_dict()}
        out.append(entry)
    print(json.dumps(out, indent=1))
    return 0


def cmd_run(args) -> int:
    cfg = _build_config(args, _load_config(args.config))
    if cfg.runner == "expansion":
        return _expansion(cfg, args.out)
    res = experiments.run(cfg)
    if cfg.output_path:
        emit(res, args.format, cfg.output_path, cfg)
        print(f"wrote {len(res)} records to {cfg.output_path}")
    _print_summary(res, cfg)
    return 0


def _expansion(cfg, out) -> int:
    rep = experiments.run_expansion_fuzz(cfg)
    text = json.dumps(rep, indent=1, sort_keys=True)
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    print(json.dumps({"counts": rep["counts"], "passed": rep["passed"]}, indent=1, sort_keys=True))
    return 0 if rep["passed"] else 1


def cmd_expansion(args) -> int:
    cfg = ExperimentConfig("expansion", trials=args.fuzz, seed=args.seed, overrides={"n_max": args.n_max})
    return _expansion(cfg, args.out)


def cmd_verify(args) -> int:
    numbers = [int(v) for v in args.only.split(",")] if args.only else None
    results = acceptance.run_all(numbers, seed=args.seed)
    failed = [r.number for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed"
          + (f"; failing: {failed}" if failed else ""))
    return 0 if not failed else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="daclab", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    def run_args(p):
        p.add_argument("preset", nargs="?",
                       help="example_4_1, example_4_2, example_6, example_C1 or expansion")
        p.add_argument("--config", help="JSON experiment config; flags override its fields")
        p.add_argument("--trials", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--out", help="output path for records")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a preset default, e.g. --set noise_std=0.316")

    p = sub.add_parser("theory", help="print closed-form reports for each sweep cell")
    run_args(p)
    p.add_argument("--param", action="append", metavar="NAME=V1,V2")
    p.set_defaults(func=cmd_theory)

    p = sub.add_parser("run", help="run a preset experiment")
    run_args(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a preset over explicit parameter values")
    run_args(p)
    p.add_argument("--param", action="append", metavar="NAME=V1,V2", help="sweep values, repeatable")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("expansion", help="fuzz the minority-set bound on random finite spaces")
    p.add_argument("--fuzz", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-max", type=int, default=12)
    p.add_argument("--out")
    p.set_defaults(func=cmd_expansion)

    p = sub.add_parser("verify", help="run the acceptance checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--only", help="comma-separated criterion numbers")
    p.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"daclab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
