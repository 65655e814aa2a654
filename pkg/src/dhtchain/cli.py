"""Command-line driver: run scenarios, verify traces, compare with the size model.

Exit codes: 0 success, 1 verification failure, 2 configuration or I/O error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields
from pathlib import Path
from typing import Optional, Sequence

from .simnet import ConfigError, ScenarioConfig, load_config, run, verify_trace
from .sizing import SizeModelParams, estimate_sizes

EXIT_OK, EXIT_MISMATCH, EXIT_CONFIG = 0, 1, 2


def _scenario(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.blocks is not None:
        over["blocks"] = args.blocks
    try:
        return cfg.with_overrides(**over) if over else cfg
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _size_params(args) -> SizeModelParams:
    kw = {fl.name: getattr(args, fl.name) for fl in fields(SizeModelParams)
          if getattr(args, fl.name, None) is not None}
    try:
        return SizeModelParams(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_size_model(args, out=None) -> int:
    out = out or sys.stdout
    rep = estimate_sizes(_size_params(args))
    for k, v in rep.as_dict().items():
        print(f"{k}={round(v, 6) if isinstance(v, float) else v}", file=out)
    return EXIT_OK


def cmd_run(args, out=None) -> int:
    out = out or sys.stdout
    cfg = _scenario(args)
    res = run(cfg)
    text = res.metrics.text()
    if args.out:
        d = Path(args.out)
        try:
            d.mkdir(parents=True, exist_ok=True)
            (d / "metrics.txt").write_text(text)
            (d / "trace.log").write_text(res.trace_text())
        except OSError as exc:
            raise ConfigError(f"cannot write to {d}: {exc}") from exc
    out.write(text)
    return EXIT_OK


def cmd_verify(args, out=None) -> int:
    out = out or sys.stdout
    try:
        text = Path(args.trace).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {args.trace}: {exc}") from exc
    rep = verify_trace(text)
    if rep.ok:
        print(f"ok blocks={rep.blocks_checked}", file=out)
        return EXIT_OK
    height = "unknown" if rep.failing_height is None else rep.failing_height
    print(f"mismatch height={height} checked={rep.blocks_checked} reason={rep.reason}", file=out)
    return EXIT_MISMATCH


def cmd_bench(args, out=None) -> int:
    """Measured sizes of a run next to the analytic model for the same parameters."""
    out = out or sys.stdout
    cfg = _scenario(args)
    m = run(cfg).metrics
    elements = (cfg.elements_min + cfg.elements_max) // 2
    p = SizeModelParams(key_bits=cfg.width, elements_per_tx=elements,
                        base_tx_bytes=cfg.base_tx_bytes, bytes_per_element=cfg.bytes_per_element,
                        txs_per_block=max(cfg.max_txs, 1),
                        base_block_bytes=max(cfg.max_txs, 1) * cfg.base_tx_bytes,
                        d=cfg.d, f=cfg.f)
    est = estimate_sizes(p)
    sync_modeled = m["sync_modeled_bytes"]
    rows = [
        ("tx_bytes", m["tx_modeled_bytes_mean"], est.tx_bytes, m["tx_bytes_mean"]),
        ("block_bytes", m["block_modeled_bytes_mean"],
         est.block_overhead_bytes + p.base_block_bytes, m["block_bytes_mean"]),
        ("sync_bytes", sync_modeled[0] if sync_modeled else "", est.sync_bytes,
         m["sync_bytes"][0] if m["sync_bytes"] else ""),
    ]
    print("quantity\tmodeled_measured\testimate\tencoded_measured", file=out)
    for name, measured, estimate, encoded in rows:
        print(f"{name}\t{measured}\t{estimate}\t{encoded}", file=out)
    print(f"sync_seconds_estimate\t\t{round(est.sync_seconds, 6)}\t", file=out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dhtchain", description=__doc__.splitlines()[0])
    ap.add_argument("--size-model", action="store_true",
                    help="print the analytic size model at default parameters and exit")
    sub = ap.add_subparsers(dest="command")

    def scenario_flags(p):
        p.add_argument("--config", help="scenario file (key = value lines)")
        p.add_argument("--seed", type=int)
        p.add_argument("--blocks", type=int, help="override the run length in slots")

    p = sub.add_parser("run", help="run a scenario and write metrics and trace")
    scenario_flags(p)
    p.add_argument("--out", help="directory for metrics.txt and trace.log")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("verify", help="replay a trace and re-check every block")
    p.add_argument("trace")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("bench", help="compare measured sizes with the analytic model")
    scenario_flags(p)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("size-model", help="evaluate the analytic size model")
    for fl in fields(SizeModelParams):
        p.add_argument("--" + fl.name.replace("_", "-"), dest=fl.name, type=int)
    p.set_defaults(fn=cmd_size_model)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        if args.size_model:
            return cmd_size_model(args)
        if args.command is None:
            ap.print_help(sys.stderr)
            return EXIT_CONFIG
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
