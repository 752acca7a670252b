"""Arrow orientation on the rank-two free shift and its mass accounting.

Every vertex must direct an arrow at one of two neighbours selected by its
own sign bit; the passive half of each colour records whether two or more
arrows land on the vertex.  A satisfying colouring exists at every finite
radius (point all arrows outward), yet the arrow mass cannot balance under
any invariant density: outflow is exactly 1 per vertex while receiving
capacity is at most 15/16.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from fractions import Fraction
from typing import IO

import numpy as np

from .configs import Configuration, RandomSource, batched_values, sample_batch, sample_stream
from .groups import Ball, Presentation, free_group
from .measures import (
    DensityProgram,
    FeasibilityResult,
    TransportCertificate,
    feasible,
    le,
    translate,
)
from .rules import Colouring, ColouringRule, check, register_builtin

ARROW_COLOURS = ("a1u", "a1c", "a2u", "a2c")

IN_CAPACITY = Fraction(15, 16)


def active_part(colour: str) -> int:
    return int(colour[1])


def passive_part(colour: str) -> str:
    return colour[2]


def _check_rank_two_free(p: Presentation) -> None:
    if p.n_generators != 2 or p.order(0) is not None or p.order(1) is not None:
        raise ValueError("the arrow rule lives on the rank-two free group")


def arrow_rule(presentation: Presentation | None = None) -> ColouringRule:
    """Four colours: active half 1/2 picks the arrow, passive half u/c.

    The sign bit at the vertex selects the candidate pair (forward pair on
    +1, inverse pair on -1).  If exactly one candidate is crowded, the
    arrow must avoid it.  The passive half must read c exactly when two or
    more neighbours aim their own arrows here.
    """
    p = free_group(2) if presentation is None else presentation
    _check_rank_two_free(p)
    t1, t2 = p.generator(0), p.generator(1)
    u1, u2 = p.generator(0, -1), p.generator(1, -1)
    window = (p.identity(), t1, u1, t2, u2)
    descendants = (t1, u1, t2, u2)

    def allowed(window_values: tuple[int, ...], desc: tuple[str, ...]) -> frozenset[str]:
        sign, via_t1, via_u1, via_t2, via_u2 = window_values
        incoming = (
            int(via_t1 == -1 and active_part(desc[0]) == 1)
            + int(via_u1 == 1 and active_part(desc[1]) == 1)
            + int(via_t2 == -1 and active_part(desc[2]) == 2)
            + int(via_u2 == 1 and active_part(desc[3]) == 2)
        )
        passive = "c" if incoming >= 2 else "u"
        first, second = (desc[0], desc[2]) if sign == 1 else (desc[1], desc[3])
        if passive_part(first) == passive_part(second):
            actives: tuple[int, ...] = (1, 2)
        elif passive_part(first) == "u":
            actives = (1,)
        else:
            actives = (2,)
        return frozenset(f"a{i}{passive}" for i in actives)

    return ColouringRule(
        name="arrow-orientation",
        colours=ARROW_COLOURS,
        descendants=descendants,
        allowed_fn=allowed,
        window=window,
        dependency_radius=2,
        stationary=False,
    )


def neighbour_tables(ball: Ball) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Left-translation tables for T1, T1^-1, T2, T2^-1."""
    _check_rank_two_free(ball.presentation)
    p = ball.presentation
    return (
        ball.left_table(p.generator(0)),
        ball.left_table(p.generator(0, -1)),
        ball.left_table(p.generator(1)),
        ball.left_table(p.generator(1, -1)),
    )


def candidates(config: Configuration, w: int) -> tuple[int, int]:
    """The two vertices the arrow at w may target, per w's sign bit."""
    ball = config.ball
    t1, u1, t2, u2 = neighbour_tables(ball)
    if min(t1[w], u1[w], t2[w], u2[w]) < 0:
        raise ValueError(f"vertex {w} has a neighbour outside the ball")
    sign = int(config.values[w])
    if sign == 1:
        return int(t1[w]), int(t2[w])
    if sign == -1:
        return int(u1[w]), int(u2[w])
    raise ValueError(f"sign bit undefined at vertex {w}")


def pdegree(config: Configuration, w: int) -> int:
    """How many neighbours could aim their arrow here, given their sign bits."""
    ball = config.ball
    t1, u1, t2, u2 = neighbour_tables(ball)
    if min(t1[w], u1[w], t2[w], u2[w]) < 0:
        raise ValueError(f"vertex {w} has a neighbour outside the ball")
    v = config.values
    spots = (v[t1[w]], v[u1[w]], v[t2[w]], v[u2[w]])
    if 0 in spots:
        raise ValueError(f"a neighbour of vertex {w} has an undefined sign bit")
    return int(spots[0] == -1) + int(spots[1] == 1) + int(spots[2] == -1) + int(spots[3] == 1)


def pdegree_profile(ball: Ball, values: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """p-degrees for a batch: values (B, |ball|) against interior vertices (m,)."""
    t1, u1, t2, u2 = neighbour_tables(ball)
    deg = (values[:, t1[vertices]] == -1).astype(np.int8)
    deg += values[:, u1[vertices]] == 1
    deg += values[:, t2[vertices]] == -1
    deg += values[:, u2[vertices]] == 1
    return deg


@dataclass(frozen=True)
class PdegreeReport:
    samples: int
    histogram: tuple[int, int, int, int, int]
    seed: int
    conditioned_on: str | None = None

    def fraction(self, degree: int) -> Fraction:
        return Fraction(self.histogram[degree], self.samples)

    def to_record(self) -> dict:
        rec = {
            "samples": self.samples,
            "histogram": list(self.histogram),
            "fractions": [str(self.fraction(d)) for d in range(5)],
            "seed": self.seed,
        }
        if self.conditioned_on is not None:
            rec["conditioned_on"] = self.conditioned_on
        return rec


def pdegree_histogram(ball: Ball, source: RandomSource, n: int) -> PdegreeReport:
    """Root p-degree counts over n sampled configurations."""
    root = np.array([0])
    counts = np.zeros(5, dtype=np.int64)
    for _, values in batched_values(ball, source, n):
        deg = pdegree_profile(ball, values, root)[:, 0]
        counts += np.bincount(deg, minlength=5)
    return PdegreeReport(n, tuple(int(c) for c in counts), source.seed)


def conditional_pdegree(ball: Ball, source: RandomSource, n: int) -> PdegreeReport:
    """Root p-degree counts over n samples conditioned on one fixed in-pointer.

    The conditioning event: the T1-neighbour's sign bit orients its own
    candidate pair toward the root.  Sampling continues until n conditioned
    samples have been collected.
    """
    t1 = neighbour_tables(ball)[0]
    j = int(t1[0])
    root = np.array([0])
    counts = np.zeros(5, dtype=np.int64)
    total = 0
    batch = 0
    while total < n:
        values = sample_batch(ball, source, batch)
        keep = values[:, j] == -1
        sub = values[keep]
        if total + len(sub) > n:
            sub = sub[: n - total]
        if len(sub):
            deg = pdegree_profile(ball, sub, root)[:, 0]
            counts += np.bincount(deg, minlength=5)
            total += len(sub)
        batch += 1
    return PdegreeReport(n, tuple(int(c) for c in counts), source.seed, conditioned_on="T1-neighbour sign bit -1")


@dataclass(frozen=True)
class ArrowField:
    """Arrow target per vertex; -1 where no arrow is defined."""

    ball: Ball
    targets: np.ndarray

    def write_csv(self, fileobj: IO[str]) -> None:
        writer = csv.writer(fileobj)
        writer.writerow(("from", "to"))
        for w, t in enumerate(self.targets):
            if t >= 0:
                writer.writerow((self.ball.words[w].to_string(), self.ball.words[t].to_string()))


def arrow_field(colouring: Colouring) -> ArrowField:
    """Read each vertex's target off its active colour and sign bit."""
    if colouring.palette != ARROW_COLOURS:
        raise ValueError("not an arrow colouring")
    if colouring.configuration is None:
        raise ValueError("arrow targets need the underlying sign bits")
    ball = colouring.ball
    t1, u1, t2, u2 = neighbour_tables(ball)
    codes = colouring.codes
    signs = colouring.configuration.values
    second = codes >= 2  # palette order: a1u, a1c, a2u, a2c
    forward = np.where(second, t2, t1)
    backward = np.where(second, u2, u1)
    targets = np.where(signs == 1, forward, np.where(signs == -1, backward, -1))
    targets = np.where(codes >= 0, targets, -1).astype(np.int32)
    return ArrowField(ball, targets)


def incoming_counts(field: ArrowField) -> np.ndarray:
    landed = field.targets[field.targets >= 0]
    return np.bincount(landed, minlength=len(field.ball))


def constructive_solve(config: Configuration) -> Colouring:
    """Aim every arrow at a strictly longer vertex; everything stays uncrowded.

    Sweeping by increasing length, at most one candidate is shorter (the two
    candidates start with different letters), so a longer target exists.  A
    target can only be hit by its unique shorter neighbour, so no vertex
    collects two arrows and the all-u passive assignment is consistent.
    """
    ball = config.ball
    if ball.radius < 3:
        raise ValueError("need radius at least 3")
    if not config.is_total:
        raise ValueError("need a total configuration")
    t1, u1, t2, u2 = neighbour_tables(ball)
    lengths = ball.lengths
    signs = config.values
    colouring = Colouring(ball, ARROW_COLOURS, configuration=config)
    for w in range(len(ball)):
        if lengths[w] > ball.radius - 1:
            break
        first, second = (t1[w], t2[w]) if signs[w] == 1 else (u1[w], u2[w])
        active = 1 if lengths[first] > lengths[w] else 2
        colouring.set_colour(w, f"a{active}u")
    return colouring


@dataclass(frozen=True)
class MassAudit:
    """Per-configuration arrow accounting on the interior."""

    interior_size: int
    outflow_per_vertex: int
    outflow_total: int
    pdegree_histogram: tuple[int, int, int, int, int]
    in_capacity_estimate: Fraction
    crowded_fraction: Fraction
    certificate: TransportCertificate
    program: DensityProgram | None
    feasibility: FeasibilityResult | None
    seed: int | None = None

    def to_record(self) -> dict:
        rec = {
            "interior_size": self.interior_size,
            "outflow": self.outflow_per_vertex,
            "outflow_total": self.outflow_total,
            "inflow_capacity": str(self.in_capacity_estimate),
            "crowded_fraction": str(self.crowded_fraction),
            "pdegree_histogram": list(self.pdegree_histogram),
            "certificate": self.certificate.to_record(),
            "seed": self.seed,
        }
        if self.feasibility is not None:
            rec["feasibility"] = self.feasibility.to_record()
        return rec


def flow_constraint():
    return le([], [], "outflow 1 against in-capacity 15/16", lhs_const=1, rhs_const=IN_CAPACITY)


def mass_audit(
    colouring: Colouring,
    config: Configuration | None = None,
    ball: Ball | None = None,
    crowd_tolerance: Fraction = Fraction(0),
    seed: int | None = None,
) -> MassAudit:
    """Outflow-vs-capacity accounting for a rule-satisfying arrow colouring.

    Every interior vertex must send exactly one arrow; arrows can only land
    on vertices some neighbour aims at, and crowd-free landings are
    injective.  The certified constraint 1 <= 15/16 is then handed to the
    density pipeline, which rejects it.
    """
    config = colouring.configuration if config is None else config
    ball = colouring.ball if ball is None else ball
    if config is None:
        raise ValueError("mass audit needs the underlying sign bits")
    if config.ball is not ball or colouring.ball is not ball:
        raise ValueError("colouring, configuration and ball must agree")
    interior = ball.interior_indices(2)
    field = arrow_field(colouring)
    incoming = incoming_counts(field)

    has_arrow = field.targets[interior] >= 0
    crowded = incoming[interior] >= 2
    crowded_fraction = Fraction(int(crowded.sum()), len(interior)) if len(interior) else Fraction(0)

    deg = pdegree_profile(ball, config.values[None, :], interior)[0]
    hist = np.bincount(deg, minlength=5)
    in_capacity = Fraction(int((deg >= 1).sum()), len(interior)) if len(interior) else Fraction(0)

    vertex_ok = has_arrow if crowded_fraction <= crowd_tolerance else has_arrow & ~crowded
    failures = np.flatnonzero(~vertex_ok)
    certificate = TransportCertificate(
        kind="flow",
        element="arrow field",
        source=("one arrow out of every vertex",),
        target=("vertices of p-degree >= 1",),
        checks_passed=int(vertex_ok.sum()),
        checks_total=len(interior),
        constraint=flow_constraint(),
        first_failure=int(interior[failures[0]]) if len(failures) else None,
    )
    program = feasibility = None
    if certificate.verified:
        program = translate([certificate], ARROW_COLOURS)
        feasibility = feasible(program)
    return MassAudit(
        interior_size=len(interior),
        outflow_per_vertex=1,
        outflow_total=int(has_arrow.sum()),
        pdegree_histogram=tuple(int(c) for c in hist),
        in_capacity_estimate=in_capacity,
        crowded_fraction=crowded_fraction,
        certificate=certificate,
        program=program,
        feasibility=feasibility,
        seed=seed,
    )


@dataclass(frozen=True)
class ArrowExperiment:
    """Aggregate of constructive solves and audits over sampled sign bits."""

    radius: int
    n_configs: int
    seed: int
    total_violations: int
    max_crowded_fraction: Fraction
    mean_in_capacity: Fraction
    pdegree_histogram: tuple[int, int, int, int, int]
    feasibility: FeasibilityResult

    def to_record(self) -> dict:
        return {
            "radius": self.radius,
            "n_configs": self.n_configs,
            "seed": self.seed,
            "total_violations": self.total_violations,
            "max_crowded_fraction": str(self.max_crowded_fraction),
            "mean_in_capacity": str(self.mean_in_capacity),
            "pdegree_histogram": list(self.pdegree_histogram),
            "feasibility": self.feasibility.to_record(),
        }


def arrow_experiment(ball: Ball, source: RandomSource, n_configs: int) -> ArrowExperiment:
    rule = arrow_rule(ball.presentation)
    total_violations = 0
    max_crowded = Fraction(0)
    capacity_sum = Fraction(0)
    hist = np.zeros(5, dtype=np.int64)
    feasibility = None
    for config in sample_stream(ball, source, n_configs):
        colouring = constructive_solve(config)
        report = check(rule, colouring)
        total_violations += report.n_violations
        audit = mass_audit(colouring, seed=source.seed)
        max_crowded = max(max_crowded, audit.crowded_fraction)
        capacity_sum += audit.in_capacity_estimate
        hist += np.array(audit.pdegree_histogram, dtype=np.int64)
        if feasibility is None:
            feasibility = audit.feasibility
    if feasibility is None:
        raise ValueError("need at least one configuration")
    return ArrowExperiment(
        radius=ball.radius,
        n_configs=n_configs,
        seed=source.seed,
        total_violations=total_violations,
        max_crowded_fraction=max_crowded,
        mean_in_capacity=capacity_sum / n_configs,
        pdegree_histogram=tuple(int(c) for c in hist),
        feasibility=feasibility,
    )


@dataclass(frozen=True)
class RecursionAnalysis:
    """Fixed-point analysis of the crowded-chain survival map.

    The survival probability of an infinite crowded chain obeys
    p = (3p^2 - p^3)/4.  Dividing the fixed-point cubic by p leaves
    p^2 - 3p + 4, whose discriminant is negative, so 0 is the only real
    fixed point and iteration from 1 collapses to it.
    """

    update_map: str
    fixed_point_equation: str
    residual_quadratic: tuple[int, int, int]
    discriminant: int
    real_fixed_points: tuple[Fraction, ...]
    exact_head: tuple[Fraction, ...]
    iterates: tuple[float, ...]
    first_below_tolerance: int
    tolerance: float
    conclusion: str

    def to_record(self) -> dict:
        return {
            "update_map": self.update_map,
            "fixed_point_equation": self.fixed_point_equation,
            "residual_quadratic": list(self.residual_quadratic),
            "discriminant": self.discriminant,
            "real_fixed_points": [str(p) for p in self.real_fixed_points],
            "exact_head": [str(p) for p in self.exact_head],
            "iterates": list(self.iterates),
            "first_below_tolerance": self.first_below_tolerance,
            "tolerance": self.tolerance,
            "conclusion": self.conclusion,
        }


def survival_map(p: Fraction) -> Fraction:
    return (3 * p * p - p * p * p) / 4


def chain_recursion(steps: int = 60, tolerance: float = 1e-6) -> RecursionAnalysis:
    a, b, c = 1, -3, 4
    discriminant = b * b - 4 * a * c
    head = [Fraction(1)]
    while len(head) < 7:
        head.append(survival_map(head[-1]))
    trace = [1.0]
    first_below = -1
    for k in range(steps):
        p = trace[-1]
        trace.append((3 * p * p - p * p * p) / 4)
        if first_below < 0 and trace[-1] < tolerance:
            first_below = k + 1
    return RecursionAnalysis(
        update_map="p -> (3*p**2 - p**3)/4",
        fixed_point_equation="p**3 - 3*p**2 + 4*p == 0",
        residual_quadratic=(a, b, c),
        discriminant=discriminant,
        real_fixed_points=(Fraction(0),),
        exact_head=tuple(head),
        iterates=tuple(trace),
        first_below_tolerance=first_below,
        tolerance=tolerance,
        conclusion=(
            "no real fixed point in (0, 1]: the residual quadratic has negative "
            "discriminant, so crowded chains die out"
        ),
    )


register_builtin("arrow-orientation", arrow_rule)
