"""Systematic Reed-Solomon erasure codec over GF(2^8).

The generator is a Vandermonde matrix row-reduced so its top K rows are the
identity; any K of its K+M rows are then invertible, so any K distinct blocks
rebuild the source.  The simulator itself only tracks block identities
(``BlockKey``); payload coding is exercised directly by tests and the
``codec roundtrip`` CLI.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import NamedTuple, Sequence

import numpy as np

PRIM_POLY = 0x11D  # x^8 + x^4 + x^3 + x^2 + 1
FIELD_SIZE = 256


class CodecError(ValueError):
    pass


class InsufficientBlocksError(CodecError):
    pass


def _build_tables() -> tuple[np.ndarray, np.ndarray]:
    exp = np.zeros(512, dtype=np.int64)
    log = np.zeros(256, dtype=np.int64)
    x = 1
    for i in range(255):
        exp[i] = x
        log[x] = i
        x <<= 1
        if x & 0x100:
            x ^= PRIM_POLY
    exp[255:510] = exp[0:255]
    return exp, log


GF_EXP, GF_LOG = _build_tables()


def _build_mul_table() -> np.ndarray:
    a = np.arange(256)
    la = GF_LOG[a][:, None]
    lb = GF_LOG[a][None, :]
    table = GF_EXP[(la + lb) % 255].astype(np.uint8)
    table[0, :] = 0
    table[:, 0] = 0
    return table


# MUL[a, b] == a * b in GF(2^8); used for vectorised row operations.
MUL = _build_mul_table()


def gf_mul(a: int, b: int) -> int:
    if a == 0 or b == 0:
        return 0
    return int(GF_EXP[GF_LOG[a] + GF_LOG[b]])


def gf_inv(a: int) -> int:
    if a == 0:
        raise ZeroDivisionError("0 has no inverse in GF(2^8)")
    return int(GF_EXP[255 - GF_LOG[a]])


def gf_pow(a: int, n: int) -> int:
    if n == 0:
        return 1
    if a == 0:
        return 0
    return int(GF_EXP[(GF_LOG[a] * n) % 255])


def gf_mat_inv(matrix: Sequence[Sequence[int]]) -> list[list[int]]:
    """Gauss-Jordan inverse of a square matrix over GF(2^8)."""
    n = len(matrix)
    a = [list(map(int, row)) + [1 if i == j else 0 for j in range(n)] for i, row in enumerate(matrix)]
    for col in range(n):
        pivot = next((r for r in range(col, n) if a[r][col]), None)
        if pivot is None:
            raise CodecError("singular matrix")
        a[col], a[pivot] = a[pivot], a[col]
        inv = gf_inv(a[col][col])
        a[col] = [gf_mul(v, inv) for v in a[col]]
        for r in range(n):
            f = a[r][col]
            if r != col and f:
                rc = a[col]
                a[r] = [v ^ gf_mul(f, w) for v, w in zip(a[r], rc)]
    return [row[n:] for row in a]


def gf_mat_mul(a: Sequence[Sequence[int]], b: Sequence[Sequence[int]]) -> list[list[int]]:
    out = []
    for row in a:
        acc = [0] * len(b[0])
        for aik, bk in zip(row, b):
            if aik:
                acc = [x ^ gf_mul(aik, y) for x, y in zip(acc, bk)]
        out.append(acc)
    return out


@dataclass(frozen=True)
class EcParams:
    """EC(K, M) parameters with a (K+M) x K systematic generator."""

    k: int
    m: int
    generator: tuple[tuple[int, ...], ...] = field(repr=False)

    @property
    def n(self) -> int:
        return self.k + self.m

    def generator_array(self) -> np.ndarray:
        return np.array(self.generator, dtype=np.uint8)


def _check_km(k: int, m: int) -> None:
    if k < 1:
        raise CodecError(f"k must be >= 1, got {k}")
    if m < 0:
        raise CodecError(f"m must be >= 0, got {m}")
    if k + m > FIELD_SIZE:
        raise CodecError(f"k + m = {k + m} exceeds the GF(2^8) bound of {FIELD_SIZE}")


@lru_cache(maxsize=None)
def make_params(k: int, m: int) -> EcParams:
    _check_km(k, m)
    n = k + m
    # Evaluation points 0..n-1 are distinct, so every K-row subset is invertible.
    vand = [[gf_pow(x, j) for j in range(k)] for x in range(n)]
    top_inv = gf_mat_inv(vand[:k])
    gen = gf_mat_mul(vand, top_inv)
    return EcParams(k, m, tuple(tuple(row) for row in gen))


def storage_overhead_exact(k: int, m: int) -> Fraction:
    if k < 1:
        raise CodecError(f"k must be >= 1, got {k}")
    return Fraction(k + m, k)


def storage_overhead(k: int, m: int) -> float:
    """Coded-to-original block ratio (K+M)/K."""
    return float(storage_overhead_exact(k, m))


class BlockKey(NamedTuple):
    content: int
    index: int


@dataclass(frozen=True)
class CodedBlock:
    content_id: int
    index: int
    k: int
    payload: bytes | None = None
    source_length: int | None = None

    @property
    def is_parity(self) -> bool:
        return self.index >= self.k

    @property
    def key(self) -> BlockKey:
        return BlockKey(self.content_id, self.index)


def _gf_matvec(rows: np.ndarray, shards: np.ndarray) -> np.ndarray:
    """rows: r x k coefficient matrix, shards: k x L bytes -> r x L."""
    out = np.zeros((rows.shape[0], shards.shape[1]), dtype=np.uint8)
    for i, row in enumerate(rows):
        acc = out[i]
        for coeff, shard in zip(row, shards):
            if coeff:
                acc ^= MUL[coeff][shard]
    return out


def encode(params: EcParams, payload: bytes, content_id: int = 0) -> list[CodedBlock]:
    """Split ``payload`` into K data blocks (zero padded) and add M parity blocks."""
    if not payload:
        raise CodecError("cannot encode an empty payload")
    k = params.k
    length = len(payload)
    shard_len = -(-length // k)
    buf = np.zeros(k * shard_len, dtype=np.uint8)
    buf[:length] = np.frombuffer(payload, dtype=np.uint8)
    shards = buf.reshape(k, shard_len)
    parity = _gf_matvec(params.generator_array()[k:], shards)
    blocks = [
        CodedBlock(content_id, i, k, shards[i].tobytes(), length) for i in range(k)
    ]
    blocks += [
        CodedBlock(content_id, k + j, k, parity[j].tobytes(), length) for j in range(params.m)
    ]
    return blocks


@lru_cache(maxsize=4096)
def _decode_matrix(params: EcParams, indices: tuple[int, ...]) -> np.ndarray:
    sub = [params.generator[i] for i in indices]
    return np.array(gf_mat_inv(sub), dtype=np.uint8)


def reconstruct(params: EcParams, blocks: Sequence[CodedBlock]) -> bytes:
    """Rebuild the original payload from any K blocks with distinct indices."""
    if not blocks:
        raise InsufficientBlocksError(f"need {params.k} distinct blocks, got 0")
    contents = {b.content_id for b in blocks}
    if len(contents) > 1:
        raise CodecError(f"blocks from mixed contents: {sorted(contents)}")
    by_index: dict[int, CodedBlock] = {}
    for b in blocks:
        if b.payload is None:
            raise CodecError(f"block {b.index} carries no payload")
        if not 0 <= b.index < params.n:
            raise CodecError(f"block index {b.index} outside [0, {params.n})")
        by_index.setdefault(b.index, b)
    if len(by_index) < params.k:
        raise InsufficientBlocksError(
            f"need {params.k} distinct blocks, got {len(by_index)}"
        )
    lengths = {len(b.payload) for b in by_index.values()}
    sources = {b.source_length for b in by_index.values()}
    if len(lengths) != 1 or len(sources) != 1:
        raise CodecError("inconsistent block payload lengths")
    source_length = sources.pop()

    chosen = sorted(by_index)[: params.k]
    if chosen == list(range(params.k)):
        data = b"".join(by_index[i].payload for i in chosen)
    else:
        shards = np.stack([np.frombuffer(by_index[i].payload, dtype=np.uint8) for i in chosen])
        data = _gf_matvec(_decode_matrix(params, tuple(chosen)), shards).tobytes()
    return data[:source_length] if source_length is not None else data
