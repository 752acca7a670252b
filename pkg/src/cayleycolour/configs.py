"""Truncated Bernoulli space over a Cayley ball.

A configuration assigns ±1 to every ball vertex.  Shifting by a group
element moves coordinates by right multiplication, so the action satisfies
(g.x)(w) = x(wg); coordinates whose preimage leaves the ball become
undefined (stored as 0) rather than silently defaulted.

Sampling is batched and seeded per batch, which makes every estimate
independent of how many workers share the batches.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import IO, Callable, Iterator

import numpy as np

from .groups import Ball, ReducedWord

ALGORITHM = "pcg64-seedseq/batch1024/v1"
BATCH_SIZE = 1024


@dataclass(frozen=True)
class RandomSource:
    """Seed plus a frozen algorithm identifier for reproducible streams."""

    seed: int
    algorithm: str = ALGORITHM

    def __post_init__(self) -> None:
        if self.algorithm != ALGORITHM:
            raise ValueError(f"unsupported sample algorithm {self.algorithm!r}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")

    def batch_rng(self, batch: int) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(batch,))
        return np.random.Generator(np.random.PCG64(ss))


class Configuration:
    """±1 values on ball vertices; 0 marks an undefined coordinate."""

    def __init__(self, ball: Ball, values: np.ndarray):
        values = np.asarray(values, dtype=np.int8)
        if values.shape != (len(ball),):
            raise ValueError("values must cover every ball vertex")
        if not np.all(np.isin(values, (-1, 0, 1))):
            raise ValueError("values must be -1, 0 (undefined) or +1")
        self.ball = ball
        self.values = values
        self.values.setflags(write=False)

    @property
    def is_total(self) -> bool:
        return bool(np.all(self.values != 0))

    def defined_mask(self) -> np.ndarray:
        return self.values != 0

    def __getitem__(self, w: ReducedWord) -> int:
        v = int(self.values[self.ball.index_of(w)])
        if v == 0:
            raise ValueError(f"coordinate at {w} is undefined")
        return v

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Configuration):
            return NotImplemented
        return self.ball is other.ball and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash((id(self.ball), self.values.tobytes()))

    def write_csv(self, fileobj: IO[str]) -> None:
        writer = csv.writer(fileobj)
        writer.writerow(["word", "value"])
        for i, w in enumerate(self.ball.words):
            if self.values[i] != 0:
                writer.writerow([w.to_string(), int(self.values[i])])


def sample_batch(ball: Ball, source: RandomSource, batch: int) -> np.ndarray:
    """Rows of ±1 values, one per sample in the batch.  int8, shape (B, |ball|)."""
    rng = source.batch_rng(batch)
    bits = rng.integers(0, 2, size=(BATCH_SIZE, len(ball)), dtype=np.int8)
    return (2 * bits - 1).astype(np.int8)


def sample(ball: Ball, source: RandomSource, index: int = 0) -> Configuration:
    if index < 0:
        raise ValueError("sample index must be nonnegative")
    row = sample_batch(ball, source, index // BATCH_SIZE)[index % BATCH_SIZE]
    return Configuration(ball, row)


def sample_stream(ball: Ball, source: RandomSource, n: int) -> Iterator[Configuration]:
    for start, block in batched_values(ball, source, n):
        for row in block:
            yield Configuration(ball, row)


def batched_values(ball: Ball, source: RandomSource, n: int) -> Iterator[tuple[int, np.ndarray]]:
    """(first sample index, value matrix) per batch, truncated to n samples."""
    for batch in range((n + BATCH_SIZE - 1) // BATCH_SIZE):
        block = sample_batch(ball, source, batch)
        start = batch * BATCH_SIZE
        yield start, block[: n - start]


def shift(x: Configuration, g: ReducedWord) -> Configuration:
    """(g.x)(w) = x(wg); coordinates pulled from outside the ball go undefined.

    Composition follows the left action law: shift(shift(x, g), h) matches
    shift(x, hg) wherever both are defined.
    """
    table = x.ball.right_table(g)
    out = np.where(table >= 0, x.values[np.maximum(table, 0)], 0).astype(np.int8)
    return Configuration(x.ball, out)


# A window predicate maps a value matrix (n_samples, |ball|) to a boolean
# row per sample, reading only coordinates within `window` of the root.
WindowPredicate = Callable[[np.ndarray, Ball], np.ndarray]


@dataclass(frozen=True)
class DensityEstimate:
    predicate: str
    n: int
    count: int
    estimate: float
    stderr: float
    seed: int
    algorithm: str = ALGORITHM

    def to_record(self) -> dict:
        return {
            "predicate": self.predicate,
            "n": self.n,
            "count": self.count,
            "estimate": self.estimate,
            "stderr": self.stderr,
            "seed": self.seed,
            "algorithm": self.algorithm,
        }


def _count_batches(
    predicate: WindowPredicate, ball: Ball, source: RandomSource, batches: list[int], n: int
) -> int:
    total = 0
    for batch in batches:
        block = sample_batch(ball, source, batch)
        start = batch * BATCH_SIZE
        hits = np.asarray(predicate(block[: n - start], ball), dtype=bool)
        total += int(hits.sum())
    return total


def empirical_density(
    predicate: WindowPredicate,
    ball: Ball,
    n: int,
    source: RandomSource,
    window: int = 0,
    name: str | None = None,
    workers: int = 1,
) -> DensityEstimate:
    """Monte Carlo frequency of a local event at the root.

    The result depends only on (seed, ball, n), never on `workers`: batches
    are seeded independently and counts are summed.
    """
    if n <= 0:
        raise ValueError("need a positive sample count")
    if window > ball.radius:
        raise ValueError(f"window {window} exceeds ball radius {ball.radius}")
    batches = list(range((n + BATCH_SIZE - 1) // BATCH_SIZE))
    if workers <= 1 or len(batches) == 1:
        count = _count_batches(predicate, ball, source, batches, n)
    else:
        chunks = [batches[i::workers] for i in range(workers)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = pool.map(
                lambda chunk: _count_batches(predicate, ball, source, chunk, n), chunks
            )
            count = sum(parts)
    p = count / n
    return DensityEstimate(
        predicate=name or getattr(predicate, "__name__", "predicate"),
        n=n,
        count=count,
        estimate=p,
        stderr=math.sqrt(p * (1 - p) / n),
        seed=source.seed,
    )


def empirical_covariance(
    pred_a: WindowPredicate,
    pred_b: WindowPredicate,
    ball: Ball,
    n: int,
    source: RandomSource,
) -> float:
    """Sample covariance of two ±1 window observables (predicates as indicators)."""
    sum_a = sum_b = sum_ab = 0
    for start, block in batched_values(ball, source, n):
        a = np.asarray(pred_a(block, ball), dtype=np.float64)
        b = np.asarray(pred_b(block, ball), dtype=np.float64)
        sum_a += float(a.sum())
        sum_b += float(b.sum())
        sum_ab += float((a * b).sum())
    return sum_ab / n - (sum_a / n) * (sum_b / n)
