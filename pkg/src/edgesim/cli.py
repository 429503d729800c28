"""Command line front end.

    edgesim gen-topology --seed 3 --out topo.json
    edgesim gen-trace --config exp.json --out trace.csv
    edgesim run --policy DSPE --replicates 3 --out results/
    edgesim compare --config exp.json --out results/
    edgesim sweep --axis alpha --values 0,0.1,0.2 --out results/
    edgesim codec roundtrip --k 10 --m 4 --size 4096
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import experiments as ex
from .codec import CodecError, encode, make_params, reconstruct
from .engine import POLICY_KINDS, EngineError, make_policy, run_simulation
from .rng import derive_rng
from .storage import StorageError
from .topology import Topology, TopologyError, generate_topology
from .workload import TraceError, dumps_trace_csv, generate_trace, load_trace_csv, write_trace_csv


VALIDATION_ERRORS = (ex.ConfigError, TopologyError, StorageError, TraceError, EngineError, CodecError)


def _parse_values(axis: str, text: str) -> list:
    """Comma list for alpha/common, ``K:M`` for ec, ``H:M:L`` for priority."""
    items = [s for s in text.split(",") if s.strip()]
    try:
        if axis in ("alpha", "common"):
            return [float(s) for s in items]
        return [tuple(int(x) for x in s.split(":")) for s in items]
    except ValueError:
        raise ex.ConfigError(f"cannot parse --values {text!r} for axis {axis}") from None


def _load_cfg(args) -> ex.ExperimentConfig:
    cfg = ex.load_config(args.config) if args.config else ex.ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "replicates", None) is not None:
        cfg.replicates = args.replicates
    if getattr(args, "requests", None) is not None:
        cfg.trace_cfg = replace(cfg.trace_cfg, num_requests=args.requests)
    if getattr(args, "workers", None) is not None:
        cfg.workers = args.workers
    if getattr(args, "out", None):
        cfg.output_dir = args.out
    cfg.validate()
    return cfg


def _common(p: argparse.ArgumentParser, runs: bool = True) -> None:
    p.add_argument("--config", help="experiment config (JSON)")
    p.add_argument("--seed", type=int, help="base seed (replicate i uses seed + i)")
    p.add_argument("--requests", type=int, help="override trace_cfg.num_requests")
    if runs:
        p.add_argument("--replicates", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--workers", type=int, help="parallel simulations")
        p.add_argument("--timing", action="store_true",
                       help="record wall-clock runtimes (makes reports non-reproducible)")


def cmd_gen_topology(args) -> int:
    cfg = _load_cfg(args)
    topo = generate_topology(replace(cfg.topology_cfg, seed=cfg.seed))
    text = json.dumps(topo.to_json(), indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_gen_trace(args) -> int:
    cfg = _load_cfg(args)
    num_ap = cfg.topology_cfg.num_ap
    trace = generate_trace(replace(cfg.trace_cfg, seed=cfg.seed), num_ap)
    if args.out:
        write_trace_csv(trace, args.out)
    else:
        sys.stdout.write(dumps_trace_csv(trace))
    return 0


def cmd_run(args) -> int:
    cfg = _load_cfg(args)
    cfg.policies = [args.policy]
    if args.alpha is not None:
        cfg.storage_cfg = replace(cfg.storage_cfg, alpha=args.alpha)
    if args.topology or args.trace or args.dump_stores:
        return _run_single(cfg, args)
    records = ex.run_compare(cfg)
    ex.emit_reports(records, cfg.output_dir, timing=args.timing)
    _print_aggregate(records)
    return 0


def _run_single(cfg: ex.ExperimentConfig, args) -> int:
    """One policy per replicate with optional external inputs and a store dump."""
    out = Path(cfg.output_dir)
    records = []
    for i in range(cfg.replicates):
        seed = cfg.seed + i
        if args.topology:
            topo = Topology.from_json(json.loads(Path(args.topology).read_text(encoding="utf-8")))
        else:
            topo = generate_topology(replace(cfg.topology_cfg, seed=seed))
        if args.trace:
            trace = load_trace_csv(args.trace)
            num_contents = max(cfg.trace_cfg.num_contents, max((r.content for r in trace), default=0) + 1)
        else:
            trace = generate_trace(replace(cfg.trace_cfg, seed=seed), topo.num_ap)
            num_contents = cfg.trace_cfg.num_contents
        policy = make_policy(args.policy, cfg.storage_cfg.alpha, *cfg.ec,
                             replace_on_deadline_miss=cfg.replace_on_deadline_miss,
                             per_block_placement=cfg.per_block_placement)
        report, sim = run_simulation(policy, trace, topo, cfg.storage_cfg, seed,
                                     num_contents=num_contents, zipf_s=cfg.trace_cfg.zipf_s)
        run_id = f"{policy.label}_seed={seed}"
        records.append(ex.RunRecord(run_id, "none", None, report))
        if args.dump_stores:
            (out / "stores").mkdir(parents=True, exist_ok=True)
            dump = [entry for store in sim.stores for entry in store.dump()]
            (out / "stores" / f"{run_id}.json").write_text(
                json.dumps(dump, sort_keys=True) + "\n", encoding="utf-8")
    ex.emit_reports(records, out, timing=args.timing)
    _print_aggregate(records)
    return 0


def cmd_compare(args) -> int:
    cfg = _load_cfg(args)
    if args.policies:
        cfg.policies = [p.strip().upper() for p in args.policies.split(",") if p.strip()]
        cfg.validate()
    records = ex.run_compare(cfg)
    ex.emit_reports(records, cfg.output_dir, timing=args.timing)
    _print_aggregate(records)
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_cfg(args)
    if args.policies:
        cfg.policies = [p.strip().upper() for p in args.policies.split(",") if p.strip()]
    if args.values:
        values = _parse_values(args.axis, args.values)
    else:
        axis, values = cfg.sweep_axis()
        if axis != args.axis:
            raise ex.ConfigError(f"no values for axis {args.axis}: pass --values or set sweep.{args.axis} in the config")
    if args.batch_size is not None:
        cfg.trace_cfg = replace(cfg.trace_cfg, batch_size=args.batch_size)
    cfg.sweep = {args.axis: values}
    cfg.validate()
    records = ex.run_experiment(cfg)
    ex.emit_reports(records, cfg.output_dir, timing=args.timing)
    _print_aggregate(records)
    summary = ex.sweep_summary(records)
    for policy, best in summary["argmax"].items():
        print(f"argmax {args.axis} for {policy}: {ex.format_value(best)}")
    return 0


def cmd_codec(args) -> int:
    params = make_params(args.k, args.m)
    rng = derive_rng(args.seed or 0, "codec-cli")
    data = rng.integers(0, 256, size=args.size, dtype="uint8").tobytes()
    blocks = encode(params, data)
    pick = sorted(rng.choice(len(blocks), size=args.k, replace=False).tolist())
    ok = reconstruct(params, [blocks[i] for i in pick]) == data
    print(f"EC({args.k},{args.m}) size={args.size} blocks={len(blocks)}x{len(blocks[0].payload)}"
          f" used={pick} roundtrip={'ok' if ok else 'MISMATCH'}")
    return 0 if ok else 1


def _print_aggregate(records) -> None:
    for row in ex.aggregate(records):
        label = f"{row['axis']}={row['axis_value']} " if row["axis"] != "none" else ""
        print(f"{label}{row['policy']:<5} runs={row['runs']} revenue={row['mean_revenue']:.1f}"
              f" (+/- {row['std_revenue']:.1f}) fraction={row['mean_revenue_fraction']:.4f}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="edgesim", description="Edge storage caching simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-topology", help="write a generated topology as JSON")
    _common(p, runs=False)
    p.add_argument("--out", help="output file (stdout when omitted)")
    p.set_defaults(func=cmd_gen_topology)

    p = sub.add_parser("gen-trace", help="write a synthetic request trace as CSV")
    _common(p, runs=False)
    p.add_argument("--out", help="output file (stdout when omitted)")
    p.set_defaults(func=cmd_gen_trace)

    p = sub.add_parser("run", help="run one policy")
    _common(p)
    p.add_argument("--policy", required=True, type=str.upper, choices=POLICY_KINDS)
    p.add_argument("--alpha", type=float)
    p.add_argument("--topology", help="topology JSON instead of a generated one")
    p.add_argument("--trace", help="trace CSV instead of a generated one")
    p.add_argument("--dump-stores", action="store_true", help="write final store contents")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="run every configured policy on paired seeds")
    _common(p)
    p.add_argument("--policies", help="comma list, e.g. DSPE,E")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="sweep one parameter")
    _common(p)
    p.add_argument("--axis", required=True, choices=ex.AXES)
    p.add_argument("--values", help="alpha/common: 0,0.5  ec: 10:4,8:6  priority: 70:20:10,50:30:20")
    p.add_argument("--policies", help="comma list, e.g. DSPE,E")
    p.add_argument("--batch-size", type=int, help="override trace_cfg.batch_size")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("codec", help="erasure code utilities")
    csub = p.add_subparsers(dest="codec_command", required=True)
    q = csub.add_parser("roundtrip", help="encode random bytes and decode from K random blocks")
    q.add_argument("--k", type=int, default=10)
    q.add_argument("--m", type=int, default=4)
    q.add_argument("--size", type=int, default=4096)
    q.add_argument("--seed", type=int, default=0)
    q.set_defaults(func=cmd_codec)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except VALIDATION_ERRORS as exc:
        print(f"edgesim: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        where = f" ({exc.filename})" if getattr(exc, "filename", None) else ""
        print(f"edgesim: I/O error: {exc.strerror or exc}{where}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
