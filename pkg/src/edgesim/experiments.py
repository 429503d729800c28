"""Experiment families: policy comparison and the one-axis sweeps.

Every run is keyed by (policy, swept value, replicate).  Replicate i uses seed
``cfg.seed + i`` for the topology, the trace and the simulation streams alike,
so every policy and every swept value sees the same network and the same
requests within a replicate (paired comparisons).
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from fractions import Fraction
from pathlib import Path
from typing import Any, Sequence

from .codec import make_params, storage_overhead_exact
from .engine import POLICY_KINDS, SimReport, make_policy, run_simulation
from .storage import StorageConfig
from .topology import Topology, TopologyConfig, generate_topology
from .workload import Request, TraceConfig, generate_trace

AXES = ("alpha", "ec", "priority", "common")

SUMMARY_COLUMNS = (
    "policy", "seed", "alpha", "k", "m", "revenue", "served", "n",
    "edge_hits", "cc_fetches", "misses", "runtime_s",
    "axis", "axis_value", "revenue_fraction",
)
AGGREGATE_COLUMNS = (
    "axis", "axis_value", "policy", "runs", "mean_revenue", "std_revenue",
    "mean_revenue_fraction", "mean_served", "overhead",
)


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    topology_cfg: TopologyConfig = field(default_factory=TopologyConfig)
    storage_cfg: StorageConfig = field(default_factory=StorageConfig)
    trace_cfg: TraceConfig = field(default_factory=TraceConfig)
    policies: list[str] = field(default_factory=lambda: list(POLICY_KINDS))
    sweep: dict[str, list] | None = None
    replicates: int = 1
    output_dir: str = "results"
    seed: int = 0
    ec: tuple[int, int] = (10, 4)
    replace_on_deadline_miss: bool = True
    per_block_placement: bool = False
    workers: int = 1

    def validate(self) -> None:
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not self.policies:
            raise ConfigError("policies must not be empty")
        for p in self.policies:
            if p.upper() not in POLICY_KINDS:
                raise ConfigError(f"unknown policy {p!r}; expected one of {', '.join(POLICY_KINDS)}")
        make_params(*self.ec)
        if self.sweep is not None:
            axis, values = self.sweep_axis()
            if not values:
                raise ConfigError(f"sweep {axis!r} needs a nonempty list of values")
            check_axis_values(axis, values)
            if axis == "common" and not self.trace_cfg.batch_size:
                raise ConfigError("common sweep needs trace_cfg.batch_size")
        self.topology_cfg.validate()
        self.storage_cfg.validate()
        self.trace_cfg.validate()

    def sweep_axis(self) -> tuple[str, list]:
        if not self.sweep:
            return "none", []
        if len(self.sweep) != 1:
            raise ConfigError(f"sweep must name exactly one axis, got {sorted(self.sweep)}")
        [(axis, values)] = self.sweep.items()
        if axis not in AXES:
            raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {', '.join(AXES)}")
        return axis, list(values)


def check_axis_values(axis: str, values: Sequence) -> list:
    out = []
    for v in values:
        if axis == "alpha":
            v = float(v)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"alpha {v} outside [0, 1]")
        elif axis == "ec":
            if len(v) != 2:
                raise ConfigError(f"EC pair must be (K, M), got {v!r}")
            v = (int(v[0]), int(v[1]))
            make_params(*v)
        elif axis == "priority":
            v = tuple(int(x) for x in v)
            if len(v) != 3 or sum(v) != 100 or min(v) < 0:
                raise ConfigError(f"priority ratio must be three parts summing to 100, got {v}")
        elif axis == "common":
            v = float(v)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"common fraction {v} outside [0, 1]")
        out.append(v)
    return out


# -- JSON config ------------------------------------------------------------

def _strict(cls, doc: Any, where: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(doc) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    return cls(**doc)


def config_from_dict(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config: expected a JSON object")
    doc = dict(doc)
    nested = {"topology_cfg": TopologyConfig, "storage_cfg": StorageConfig, "trace_cfg": TraceConfig}
    for key, cls in nested.items():
        if key in doc:
            sub = dict(doc[key]) if isinstance(doc[key], dict) else doc[key]
            if cls is TopologyConfig and isinstance(sub, dict) and "ap_fanout_range" in sub:
                sub["ap_fanout_range"] = tuple(sub["ap_fanout_range"])
            if cls is TraceConfig and isinstance(sub, dict):
                if "priority_ratio" in sub:
                    sub["priority_ratio"] = tuple(sub["priority_ratio"])
                if "deadline_ranges" in sub:
                    sub["deadline_ranges"] = {p: tuple(r) for p, r in sub["deadline_ranges"].items()}
            doc[key] = _strict(cls, sub, key)
    if "ec" in doc:
        doc["ec"] = tuple(doc["ec"])
    if doc.get("sweep") in ("none", {}):
        doc["sweep"] = None
    cfg = _strict(ExperimentConfig, doc, "config")
    cfg.validate()
    return cfg


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(doc)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return json.loads(json.dumps(asdict(cfg)))


# -- running ------------------------------------------------------------------

@dataclass(frozen=True)
class Job:
    policy: str
    seed: int
    axis: str
    value: Any
    alpha: float
    k: int
    m: int
    trace_cfg: TraceConfig
    topology_cfg: TopologyConfig
    storage_cfg: StorageConfig
    replace_on_deadline_miss: bool
    per_block_placement: bool

    def run_id(self) -> str:
        v = "" if self.axis == "none" else f"_{self.axis}={format_value(self.value)}"
        return re.sub(r"[^A-Za-z0-9_.=+-]", "-", f"{self.policy}{v}_seed={self.seed}")

    def sim_key(self):
        # Runs that differ only in the axis label are the same simulation.
        pol = self.make_policy()
        return (_freeze(asdict(pol)), self.seed, _freeze(asdict(self.trace_cfg)),
                _freeze(asdict(self.topology_cfg)), _freeze(asdict(self.storage_cfg)))

    def make_policy(self):
        return make_policy(self.policy, self.alpha, self.k, self.m,
                           replace_on_deadline_miss=self.replace_on_deadline_miss,
                           per_block_placement=self.per_block_placement)


@dataclass
class RunRecord:
    run_id: str
    axis: str
    value: Any
    report: SimReport


def _freeze(x):
    if isinstance(x, dict):
        return tuple(sorted((k, _freeze(v)) for k, v in x.items()))
    if isinstance(x, (list, tuple)):
        return tuple(_freeze(v) for v in x)
    return x


def format_value(v) -> str:
    if isinstance(v, (tuple, list)):
        return ":".join(format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


_CACHE: dict = {}


def _inputs(job: Job) -> tuple[Topology, list[Request]]:
    key = (job.seed, _freeze(asdict(job.topology_cfg)), _freeze(asdict(job.trace_cfg)))
    hit = _CACHE.get(key)
    if hit is None:
        topo = generate_topology(replace(job.topology_cfg, seed=job.seed))
        trace = generate_trace(replace(job.trace_cfg, seed=job.seed), topo.num_ap)
        _CACHE.clear()
        hit = _CACHE[key] = (topo, trace)
    return hit


def run_job(job: Job) -> SimReport:
    topo, trace = _inputs(job)
    report, _ = run_simulation(job.make_policy(), trace, topo, job.storage_cfg, job.seed,
                               num_contents=job.trace_cfg.num_contents,
                               zipf_s=job.trace_cfg.zipf_s)
    report.extra["run_id"] = job.run_id()
    return report


def _jobs(cfg: ExperimentConfig, axis: str, values: Sequence) -> list[Job]:
    jobs = []
    points = values if axis != "none" else [None]
    for i in range(cfg.replicates):
        seed = cfg.seed + i
        for value in points:
            trace_cfg = cfg.trace_cfg
            alpha = cfg.storage_cfg.alpha
            k, m = cfg.ec
            if axis == "alpha":
                alpha = value
            elif axis == "ec":
                k, m = value
            elif axis == "priority":
                trace_cfg = replace(trace_cfg, priority_ratio=tuple(value))
            elif axis == "common":
                trace_cfg = replace(trace_cfg, common_fraction=value)
            for pol in cfg.policies:
                jobs.append(Job(pol.upper(), seed, axis, value, alpha, k, m, trace_cfg,
                                cfg.topology_cfg, cfg.storage_cfg,
                                cfg.replace_on_deadline_miss, cfg.per_block_placement))
    return jobs


def run_jobs(jobs: Sequence[Job], workers: int = 1) -> list[RunRecord]:
    """Run each distinct simulation once; results come back in job order."""
    unique: dict = {}
    for job in jobs:
        unique.setdefault(job.sim_key(), job)
    todo = list(unique.values())
    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(run_job, todo))
    else:
        reports = [run_job(j) for j in todo]
    by_key = {j.sim_key(): r for j, r in zip(todo, reports)}
    out = []
    for job in jobs:
        rep = by_key[job.sim_key()]
        if rep.extra.get("run_id") != job.run_id():
            rep = replace(rep, extra={**rep.extra, "run_id": job.run_id()},
                          per_priority_revenue=dict(rep.per_priority_revenue))
        out.append(RunRecord(job.run_id(), job.axis, job.value, rep))
    return out


def _run_axis(cfg: ExperimentConfig, axis: str, values: Sequence) -> list[RunRecord]:
    cfg.validate()
    if axis != "none":
        values = check_axis_values(axis, values)
        if not values:
            raise ConfigError(f"sweep {axis!r} needs a nonempty list of values")
        if axis == "common" and not cfg.trace_cfg.batch_size:
            raise ConfigError("common sweep needs trace_cfg.batch_size")
    return run_jobs(_jobs(cfg, axis, values), cfg.workers)


def run_compare(cfg: ExperimentConfig) -> list[RunRecord]:
    return _run_axis(cfg, "none", [])


def run_alpha_sweep(cfg: ExperimentConfig, alphas: Sequence[float]) -> list[RunRecord]:
    return _run_axis(cfg, "alpha", alphas)


def run_ec_sweep(cfg: ExperimentConfig, pairs: Sequence[tuple[int, int]]) -> list[RunRecord]:
    return _run_axis(cfg, "ec", pairs)


def run_priority_sweep(cfg: ExperimentConfig, ratios: Sequence[tuple[int, int, int]]) -> list[RunRecord]:
    return _run_axis(cfg, "priority", ratios)


def run_common_sweep(cfg: ExperimentConfig, fractions: Sequence[float]) -> list[RunRecord]:
    return _run_axis(cfg, "common", fractions)


def run_experiment(cfg: ExperimentConfig) -> list[RunRecord]:
    axis, values = cfg.sweep_axis()
    return _run_axis(cfg, axis, values)


# -- summaries ----------------------------------------------------------------

def _mean_std(xs: Sequence[float]) -> tuple[float, float]:
    n = len(xs)
    mean = math.fsum(xs) / n
    if n < 2:
        return mean, 0.0
    return mean, math.sqrt(math.fsum((x - mean) ** 2 for x in xs) / (n - 1))


def aggregate(records: Sequence[RunRecord]) -> list[dict]:
    """Mean and sample std of revenue per (swept value, policy), in first-seen order."""
    groups: dict = {}
    for rec in records:
        key = (rec.axis, format_value(rec.value) if rec.axis != "none" else "", rec.report.policy)
        groups.setdefault(key, []).append(rec)
    rows = []
    for (axis, value, policy), recs in groups.items():
        revs = [r.report.total_revenue for r in recs]
        mean, std = _mean_std(revs)
        rep = recs[0].report
        overhead = storage_overhead_exact(rep.k, rep.m) if rep.m else Fraction(1)
        rows.append({
            "axis": axis,
            "axis_value": value,
            "policy": policy,
            "runs": len(recs),
            "mean_revenue": mean,
            "std_revenue": std,
            "mean_revenue_fraction": _mean_std([r.report.revenue_fraction for r in recs])[0],
            "mean_served": _mean_std([r.report.served_count for r in recs])[0],
            "overhead": float(overhead),
        })
    return rows


def mean_revenue(records: Sequence[RunRecord], policy: str, value=None) -> float:
    revs = [r.report.total_revenue for r in records
            if r.report.policy == policy and (value is None or r.value == value)]
    if not revs:
        raise KeyError(f"no runs for {policy} at {value!r}")
    return math.fsum(revs) / len(revs)


def argmax_value(records: Sequence[RunRecord], policy: str, seed: int | None = None):
    """Swept value with the highest mean revenue (ties go to the first listed)."""
    best = None
    totals: dict = {}
    for r in records:
        if r.report.policy != policy or (seed is not None and r.report.seed != seed):
            continue
        key = format_value(r.value)
        acc = totals.setdefault(key, [r.value, []])
        acc[1].append(r.report.total_revenue)
    for value, revs in totals.values():
        m = math.fsum(revs) / len(revs)
        if best is None or m > best[1]:
            best = (value, m)
    return None if best is None else best[0]


def sweep_summary(records: Sequence[RunRecord]) -> dict:
    axis = records[0].axis if records else "none"
    out: dict = {"axis": axis, "aggregate": aggregate(records)}
    if axis != "none":
        seeds = sorted({r.report.seed for r in records})
        policies = list(dict.fromkeys(r.report.policy for r in records))
        out["argmax"] = {p: argmax_value(records, p) for p in policies}
        out["argmax_per_seed"] = {
            p: {str(s): argmax_value(records, p, s) for s in seeds} for p in policies
        }
    return out


# -- output -------------------------------------------------------------------

def _num(x) -> str:
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, int):
        return str(x)
    x = float(x)
    return str(int(x)) if x.is_integer() and abs(x) < 2**53 else repr(x)


def summary_row(rec: RunRecord, timing: bool = False) -> list[str]:
    r = rec.report
    return [
        r.policy, str(r.seed), _num(r.alpha), str(r.k), str(r.m),
        _num(r.total_revenue), str(r.served_count), str(r.request_count),
        str(r.edge_hit_count), str(r.cc_fetch_count), str(r.deadline_miss_count),
        f"{r.runtime_seconds:.3f}" if timing else "",
        rec.axis, "" if rec.axis == "none" else format_value(rec.value),
        _num(r.revenue_fraction),
    ]


def summary_csv(records: Sequence[RunRecord], timing: bool = False) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for rec in records:
        w.writerow(summary_row(rec, timing))
    return buf.getvalue()


def aggregate_csv(records: Sequence[RunRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(AGGREGATE_COLUMNS)
    for row in aggregate(records):
        w.writerow([row[c] if isinstance(row[c], str) else _num(row[c]) for c in AGGREGATE_COLUMNS])
    return buf.getvalue()


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text, encoding="utf-8", newline="\n")
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write {path}: {exc.strerror}") from None


def emit_reports(records: Sequence[RunRecord], out_dir: str | os.PathLike,
                 timing: bool = False) -> list[Path]:
    """Write summary.csv, aggregate.csv, sweep.json and detail/<run-id>.json.

    Runtimes are left out unless ``timing`` is set, so reruns are byte-identical.
    """
    out = Path(out_dir)
    detail = out / "detail"
    try:
        detail.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot create output directory {detail}: {exc.strerror}") from None
    written = []
    path = out / "summary.csv"
    _write(path, summary_csv(records, timing))
    written.append(path)
    path = out / "aggregate.csv"
    _write(path, aggregate_csv(records))
    written.append(path)
    path = out / "sweep.json"
    _write(path, json.dumps(sweep_summary(records), indent=2, sort_keys=True, default=list) + "\n")
    written.append(path)
    for rec in records:
        doc = rec.report.to_json(include_runtime=timing)
        doc["run_id"] = rec.run_id
        doc["axis"] = rec.axis
        doc["axis_value"] = rec.value
        doc["extra"] = {k: v for k, v in doc["extra"].items() if k != "run_id"}
        path = detail / f"{rec.run_id}.json"
        _write(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")
        written.append(path)
    return written


__all__ = [
    "AXES", "AGGREGATE_COLUMNS", "ConfigError", "ExperimentConfig", "RunRecord",
    "SUMMARY_COLUMNS", "aggregate", "argmax_value", "config_from_dict", "config_to_dict",
    "emit_reports", "load_config", "mean_revenue", "run_alpha_sweep", "run_common_sweep",
    "run_compare", "run_ec_sweep", "run_experiment", "run_priority_sweep", "summary_csv",
    "sweep_summary",
]
