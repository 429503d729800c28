"""Request traces: synthetic generation and the CSV interchange format.

CSV layout (UTF-8, LF line endings)::

    seq,ap,content,deadline,revenue,priority
    0,17,431,64,12,H

All fields are integers except ``priority`` which is one of ``H``, ``M``, ``L``.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .rng import derive_rng

PRIORITIES = ("H", "M", "L")
CSV_COLUMNS = ("seq", "ap", "content", "deadline", "revenue", "priority")


class TraceError(ValueError):
    pass


@dataclass(frozen=True)
class Request:
    seq: int
    content: int
    ap: int
    deadline: float
    revenue: float
    priority: str = "M"

    def __post_init__(self) -> None:
        if not self.deadline > 0:
            raise TraceError(f"request {self.seq}: deadline must be > 0, got {self.deadline}")
        if not self.revenue > 0:
            raise TraceError(f"request {self.seq}: revenue must be > 0, got {self.revenue}")


@dataclass
class TraceConfig:
    num_requests: int = 100_000
    num_contents: int = 1000
    zipf_s: float = 0.8
    priority_ratio: tuple[int, int, int] = (70, 20, 10)
    revenue_map: dict[str, float] = field(default_factory=lambda: {"H": 12, "M": 10, "L": 8})
    deadline_ranges: dict[str, tuple[int, int]] = field(
        default_factory=lambda: {"H": (15, 30), "M": (30, 60), "L": (60, 120)}
    )
    batch_size: int | None = None
    common_fraction: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if self.num_requests < 0 or self.num_contents < 1:
            raise TraceError("num_requests must be >= 0 and num_contents >= 1")
        if len(self.priority_ratio) != 3 or sum(self.priority_ratio) != 100 or min(self.priority_ratio) < 0:
            raise TraceError(f"priority_ratio must be three non-negative parts summing to 100, got {self.priority_ratio}")
        for p in PRIORITIES:
            lo, hi = self.deadline_ranges[p]
            if not 0 < lo <= hi:
                raise TraceError(f"empty or non-positive deadline range for {p}: {(lo, hi)}")
            if not self.revenue_map[p] > 0:
                raise TraceError(f"revenue for {p} must be > 0")
        if not 0.0 <= self.common_fraction <= 1.0:
            raise TraceError("common_fraction must lie in [0, 1]")
        if self.batch_size is not None and self.batch_size < 1:
            raise TraceError("batch_size must be >= 1")


def zipf_weights(n: int, s: float) -> np.ndarray:
    ranks = np.arange(1, n + 1, dtype=float)
    w = ranks ** -s
    return w / w.sum()


def generate_trace(cfg: TraceConfig, num_ap: int) -> list[Request]:
    """Synthetic trace; popularity ranks are reshuffled per batch.

    In batch b > 0 a ``common_fraction`` share of the draws repeats the content
    of a uniformly chosen request from batch b - 1, the rest come from a fresh
    Zipf ranking.  Batch 0 uses the identity ranking, so with one batch (the
    default) content id 0 is the most popular item.
    """
    cfg.validate()
    n = cfg.num_requests
    if n == 0:
        return []
    rng = derive_rng(cfg.seed, "workload")
    batch = cfg.batch_size or n
    weights = zipf_weights(cfg.num_contents, cfg.zipf_s)

    contents = np.empty(n, dtype=np.int64)
    prev: np.ndarray | None = None
    for start in range(0, n, batch):
        size = min(batch, n - start)
        ranking = np.arange(cfg.num_contents) if start == 0 else rng.permutation(cfg.num_contents)
        fresh = ranking[rng.choice(cfg.num_contents, size=size, p=weights)]
        if prev is not None and cfg.common_fraction > 0:
            repeat = rng.random(size) < cfg.common_fraction
            fresh[repeat] = prev[rng.integers(0, len(prev), size=int(repeat.sum()))]
        contents[start:start + size] = fresh
        prev = fresh

    probs = np.array(cfg.priority_ratio, dtype=float) / 100.0
    prio_idx = rng.choice(3, size=n, p=probs)
    aps = rng.integers(0, num_ap, size=n)
    lows = np.array([cfg.deadline_ranges[p][0] for p in PRIORITIES])
    highs = np.array([cfg.deadline_ranges[p][1] for p in PRIORITIES])
    deadlines = rng.integers(lows[prio_idx], highs[prio_idx] + 1)

    out = []
    for i in range(n):
        p = PRIORITIES[prio_idx[i]]
        out.append(Request(i, int(contents[i]), int(aps[i]), int(deadlines[i]), cfg.revenue_map[p], p))
    return out


def _fmt(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def dumps_trace_csv(requests: Iterable[Request]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in requests:
        w.writerow([r.seq, r.ap, r.content, _fmt(r.deadline), _fmt(r.revenue), r.priority])
    return buf.getvalue()


def write_trace_csv(requests: Iterable[Request], path: str | Path) -> None:
    Path(path).write_text(dumps_trace_csv(requests), encoding="utf-8", newline="\n")


def load_trace_csv(path: str | Path) -> list[Request]:
    with open(path, encoding="utf-8", newline="") as f:
        return parse_trace_csv(f.read())


def parse_trace_csv(text: str) -> list[Request]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise TraceError("line 1: empty file, expected a header") from None
    missing = [c for c in CSV_COLUMNS if c not in header]
    if missing:
        raise TraceError(f"line 1: missing column(s) {', '.join(missing)}")
    col = {name: header.index(name) for name in CSV_COLUMNS}
    out = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            vals = {name: row[i] for name, i in col.items()}
        except IndexError:
            raise TraceError(f"line {lineno}: expected {len(header)} fields, got {len(row)}") from None
        nums = {}
        for name in ("seq", "ap", "content", "deadline", "revenue"):
            try:
                nums[name] = int(vals[name])
            except ValueError:
                raise TraceError(f"line {lineno}: field {name!r} is not an integer: {vals[name]!r}") from None
        prio = vals["priority"]
        if prio not in PRIORITIES:
            raise TraceError(f"line {lineno}: priority must be one of H/M/L, got {prio!r}")
        if nums["deadline"] <= 0:
            raise TraceError(f"line {lineno}: deadline must be > 0, got {nums['deadline']}")
        if nums["revenue"] <= 0:
            raise TraceError(f"line {lineno}: revenue must be > 0, got {nums['revenue']}")
        out.append(Request(nums["seq"], nums["content"], nums["ap"], nums["deadline"], nums["revenue"], prio))
    return out


def batch_overlap(requests: Sequence[Request], batch_size: int) -> list[float]:
    """Share of each batch's requests whose content appeared in the previous batch."""
    out = []
    for start in range(batch_size, len(requests), batch_size):
        prev = {r.content for r in requests[start - batch_size:start]}
        cur = requests[start:start + batch_size]
        out.append(sum(r.content in prev for r in cur) / len(cur))
    return out
