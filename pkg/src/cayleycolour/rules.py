"""Colouring rules on truncated group actions.

A rule lists descendant group elements and, per point, an allowed set of
colours computed from the point's local ±1 window and the descendants'
colours.  Rank one means the allowed set is never empty.  Checking is
exact on the interior of a ball (every read stays inside); boundary
vertices are never judged.

Two rule transformers are provided: doubling the space with a tag bit
(the second copy must mirror the first, and the first copy mirrors back
only when the mirrored colour obeys the base rule), and squaring the
colour set along an invertible descendant (second colour tracks the first
colour one step ahead).  Both turn a rule into a rank-one rule whose
satisfying colourings restrict or project onto base-rule solutions.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .configs import Configuration
from .groups import Ball, ReducedWord

AllowedFn = Callable[[tuple[int, ...], tuple[str, ...]], frozenset[str]]

RANK_ONE = "rank-one"
RANK_TWO_OR_HIGHER = "rank-two-or-higher"


class EmptyAllowedSetError(ValueError):
    """Raised when an update hits an empty allowed set (rule not rank one)."""


@dataclass(frozen=True)
class ColouringRule:
    """Descendant-driven local constraint with an optional position window.

    `allowed_fn` maps (window values, descendant colours) to the set of
    colours permitted at the point.  `window` lists the group elements
    whose ±1 coordinates the rule reads; stationary rules read none.
    `dependency_radius` bounds every read the rule makes, including any
    the checker performs on its behalf.
    """

    name: str
    colours: tuple[str, ...]
    descendants: tuple
    allowed_fn: AllowedFn
    window: tuple = ()
    dependency_radius: int = 1
    stationary: bool = True

    def __post_init__(self) -> None:
        if len(set(self.colours)) != len(self.colours):
            raise ValueError("colour names must be distinct")
        if len(self.colours) < 2:
            raise ValueError("need at least two colours")
        if self.stationary and self.window:
            raise ValueError("a stationary rule cannot read a window")
        reach = [d.length for d in self.descendants] + [w.length for w in self.window]
        if reach and max(reach) > self.dependency_radius:
            raise ValueError("dependency radius smaller than a declared read")

    @property
    def n_descendants(self) -> int:
        return len(self.descendants)

    @property
    def window_radius(self) -> int:
        return max((w.length for w in self.window), default=0)

    def allowed(self, window_values: tuple[int, ...], desc_colours: tuple[str, ...]) -> frozenset[str]:
        if len(window_values) != len(self.window):
            raise ValueError("window value count mismatch")
        if len(desc_colours) != len(self.descendants):
            raise ValueError("descendant colour count mismatch")
        out = self.allowed_fn(window_values, desc_colours)
        if not out <= frozenset(self.colours):
            raise ValueError("allowed set contains unknown colours")
        return out


def classify_rank(rule: ColouringRule) -> str:
    """Exhaust all windows and descendant colourings; rank one iff never empty."""
    for window_values in itertools.product((-1, 1), repeat=len(rule.window)):
        for desc in itertools.product(rule.colours, repeat=rule.n_descendants):
            if not rule.allowed(window_values, desc):
                return RANK_TWO_OR_HIGHER
    return RANK_ONE


class Colouring:
    """Partial colour assignment on ball vertices; -1 codes mean uncoloured.

    May carry the ±1 configuration that position-dependent rules read.
    """

    def __init__(
        self,
        ball: Ball,
        palette: tuple[str, ...],
        codes: np.ndarray | None = None,
        configuration: Configuration | None = None,
    ):
        self.ball = ball
        self.palette = palette
        if codes is None:
            codes = np.full(len(ball), -1, dtype=np.int16)
        codes = np.asarray(codes, dtype=np.int16)
        if codes.shape != (len(ball),):
            raise ValueError("codes must cover every ball vertex")
        if codes.max(initial=-1) >= len(palette) or codes.min(initial=0) < -1:
            raise ValueError("colour code out of range")
        self.codes = codes
        self.configuration = configuration

    @classmethod
    def uniform(cls, ball: Ball, palette: tuple[str, ...], colour: str) -> "Colouring":
        codes = np.full(len(ball), palette.index(colour), dtype=np.int16)
        return cls(ball, palette, codes)

    def colour_at(self, i: int) -> str | None:
        code = int(self.codes[i])
        return None if code < 0 else self.palette[code]

    def colour_of(self, w: ReducedWord) -> str | None:
        return self.colour_at(self.ball.index_of(w))

    def set_colour(self, i: int, colour: str) -> None:
        self.codes[i] = self.palette.index(colour)

    def copy(self) -> "Colouring":
        return Colouring(self.ball, self.palette, self.codes.copy(), self.configuration)

    def class_fraction(self, colour: str, vertices: np.ndarray | None = None) -> float:
        codes = self.codes if vertices is None else self.codes[vertices]
        return float(np.mean(codes == self.palette.index(colour)))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Colouring):
            return NotImplemented
        return (
            self.ball is other.ball
            and self.palette == other.palette
            and np.array_equal(self.codes, other.codes)
        )

    def __hash__(self):
        return hash((id(self.ball), self.palette, self.codes.tobytes()))


@dataclass(frozen=True)
class ViolationReport:
    interior_size: int
    violations: tuple[tuple[int, str, frozenset[str]], ...]

    @property
    def n_violations(self) -> int:
        return len(self.violations)

    @property
    def fraction(self) -> float | None:
        if self.interior_size == 0:
            return None
        return self.n_violations / self.interior_size

    @property
    def satisfied(self) -> bool:
        return self.interior_size > 0 and not self.violations

    def to_record(self) -> dict:
        return {
            "interior_size": self.interior_size,
            "n_violations": self.n_violations,
            "fraction": self.fraction,
            "violations": [
                {"vertex": int(v), "assigned": c, "allowed": sorted(a)}
                for v, c, a in self.violations[:100]
            ],
        }


def _reads(rule: ColouringRule, colouring: Colouring):
    ball = colouring.ball
    desc_tables = [ball.left_table(d) for d in rule.descendants]
    window_tables = [ball.left_table(w) for w in rule.window]
    if rule.window and colouring.configuration is None:
        raise ValueError(f"rule {rule.name!r} reads a window but no configuration is attached")
    values = colouring.configuration.values if rule.window else None
    return desc_tables, window_tables, values


def _local_inputs(
    rule: ColouringRule,
    colouring: Colouring,
    i: int,
    desc_tables,
    window_tables,
    values,
) -> tuple[tuple[int, ...], tuple[str, ...]]:
    window_values = []
    for table in window_tables:
        j = int(table[i])
        if j < 0:
            raise ValueError(f"window read leaves the ball at vertex {i}")
        v = int(values[j])
        if v == 0:
            raise ValueError(f"window read hits an undefined coordinate at vertex {j}")
        window_values.append(v)
    desc_colours = []
    for table in desc_tables:
        j = int(table[i])
        if j < 0:
            raise ValueError(f"descendant read leaves the ball at vertex {i}")
        colour = colouring.colour_at(j)
        if colour is None:
            raise ValueError(f"descendant at vertex {j} is uncoloured")
        desc_colours.append(colour)
    return tuple(window_values), tuple(desc_colours)


def check(rule: ColouringRule, colouring: Colouring) -> ViolationReport:
    """Judge every interior vertex exactly; boundary vertices are skipped."""
    interior = colouring.ball.interior_indices(rule.dependency_radius)
    desc_tables, window_tables, values = _reads(rule, colouring)
    bad: list[tuple[int, str, frozenset[str]]] = []
    for i in interior:
        i = int(i)
        assigned = colouring.colour_at(i)
        if assigned is None:
            raise ValueError(f"interior vertex {i} is uncoloured")
        window_values, desc_colours = _local_inputs(
            rule, colouring, i, desc_tables, window_tables, values
        )
        allowed = rule.allowed(window_values, desc_colours)
        if assigned not in allowed:
            bad.append((i, assigned, allowed))
    return ViolationReport(interior_size=len(interior), violations=tuple(bad))


def iterate(
    rule: ColouringRule,
    initial: Colouring,
    max_rounds: int,
    order: Sequence[int] | None = None,
) -> tuple[Colouring, bool, int]:
    """Round-robin sweeps: keep a vertex's colour if allowed, else take the
    first allowed colour in declared order.  Converged when a sweep is a
    no-op.  Raises EmptyAllowedSetError for rules that are not rank one.
    """
    colouring = initial.copy()
    if order is None:
        order = [int(i) for i in colouring.ball.interior_indices(rule.dependency_radius)]
    desc_tables, window_tables, values = _reads(rule, colouring)
    for round_no in range(1, max_rounds + 1):
        changed = False
        for i in order:
            window_values, desc_colours = _local_inputs(
                rule, colouring, i, desc_tables, window_tables, values
            )
            allowed = rule.allowed(window_values, desc_colours)
            if not allowed:
                raise EmptyAllowedSetError(f"empty allowed set at vertex {i}")
            current = colouring.colour_at(i)
            if current in allowed:
                continue
            for colour in rule.colours:
                if colour in allowed:
                    colouring.set_colour(i, colour)
                    changed = True
                    break
        if not changed:
            return colouring, True, round_no
    return colouring, False, max_rounds


# ---------------------------------------------------------------------------
# Doubled space: two tagged copies of the ball, the tag visible as a ±1
# window coordinate (+1 on the primary copy).


@dataclass(frozen=True)
class TaggedWord:
    """Group element paired with an optional copy swap; the swap is free."""

    word: ReducedWord
    flip: bool = False

    @property
    def length(self) -> int:
        return self.word.length


class DoubledBall:
    """Two copies of a ball; vertex t*|ball|+i is copy t of vertex i."""

    def __init__(self, base: Ball):
        self.base = base
        self.radius = base.radius
        self._left: dict[TaggedWord, np.ndarray] = {}

    def __len__(self) -> int:
        return 2 * len(self.base)

    def vertex(self, tag: int, i: int) -> int:
        return tag * len(self.base) + i

    def split(self, v: int) -> tuple[int, int]:
        tag, i = divmod(v, len(self.base))
        return tag, i

    def interior_indices(self, depth: int) -> np.ndarray:
        inner = self.base.interior_indices(depth)
        return np.concatenate([inner, inner + len(self.base)])

    def left_table(self, d: TaggedWord) -> np.ndarray:
        table = self._left.get(d)
        if table is None:
            v = len(self.base)
            base_table = self.base.left_table(d.word)
            halves = []
            for tag in (0, 1):
                out_tag = (tag ^ 1) if d.flip else tag
                half = np.where(base_table >= 0, base_table + out_tag * v, -1)
                halves.append(half)
            table = np.concatenate(halves).astype(np.int32)
            self._left[d] = table
        return table


def tag_configuration(doubled: DoubledBall) -> Configuration:
    """+1 across the primary copy, -1 across the mirror copy."""
    v = len(doubled.base)
    values = np.concatenate([np.ones(v, dtype=np.int8), -np.ones(v, dtype=np.int8)])
    return Configuration(doubled, values)


def double_space(rule: ColouringRule) -> ColouringRule:
    """Mirror rule on two tagged copies of the space.

    The mirror copy of a point must repeat the primary copy's colour.  The
    primary copy repeats the mirror's colour when that colour obeys the
    base rule against the primary-copy descendants, and must differ from
    it otherwise.  Any satisfying colouring therefore agrees across copies
    and obeys the base rule on each.
    """
    if len(rule.colours) < 2:
        raise ValueError("doubling needs at least two colours")
    if not rule.stationary:
        raise ValueError("doubling is defined here for stationary base rules")
    base_allowed = rule.allowed_fn
    swap = TaggedWord(rule.descendants[0].presentation.identity(), flip=True)
    here = TaggedWord(rule.descendants[0].presentation.identity(), flip=False)
    descendants = (swap,) + tuple(TaggedWord(d) for d in rule.descendants)

    def allowed(window_values: tuple[int, ...], desc: tuple[str, ...]) -> frozenset[str]:
        tag = window_values[0]
        mirrored = desc[0]
        if tag == -1:
            return frozenset({mirrored})
        base = base_allowed((), desc[1:])
        if mirrored in base:
            return frozenset({mirrored})
        return frozenset(rule.colours) - {mirrored}

    return ColouringRule(
        name=f"doubled({rule.name})",
        colours=rule.colours,
        descendants=descendants,
        allowed_fn=allowed,
        window=(here,),
        dependency_radius=rule.dependency_radius,
        stationary=False,
    )


def lift_to_double(colouring: Colouring) -> Colouring:
    """Copy a base colouring onto both tagged copies."""
    doubled = DoubledBall(colouring.ball)
    codes = np.concatenate([colouring.codes, colouring.codes])
    return Colouring(doubled, colouring.palette, codes, tag_configuration(doubled))


def doubled_colouring(
    base: Ball,
    palette: tuple[str, ...],
    codes_primary: np.ndarray,
    codes_mirror: np.ndarray,
) -> Colouring:
    doubled = DoubledBall(base)
    codes = np.concatenate([codes_primary, codes_mirror]).astype(np.int16)
    return Colouring(doubled, palette, codes, tag_configuration(doubled))


def restrict_copy(colouring: Colouring, tag: int) -> Colouring:
    """Pull one tagged copy back to a colouring of the base ball."""
    doubled = colouring.ball
    if not isinstance(doubled, DoubledBall):
        raise ValueError("not a doubled-space colouring")
    v = len(doubled.base)
    return Colouring(doubled.base, colouring.palette, colouring.codes[tag * v : (tag + 1) * v])


# ---------------------------------------------------------------------------
# Squared colours along an invertible descendant.


def pair_colour(first: str, second: str) -> str:
    return f"{first}|{second}"


def split_pair(colour: str) -> tuple[str, str]:
    first, second = colour.split("|")
    return first, second


def square_colours(rule: ColouringRule, g: ReducedWord) -> ColouringRule:
    """Track the base colouring and its pull-forward along g as one pair colour.

    The second colour of a point copies the first colour one g-step ahead;
    the first colour repeats the second colour one g-step behind exactly
    when that colour obeys the base rule on the descendants' first colours,
    and must differ from it otherwise.  Projecting a satisfying colouring
    to first colours satisfies the base rule.
    """
    if g not in rule.descendants:
        raise ValueError("g must be one of the rule's descendants")
    if not rule.stationary:
        raise ValueError("colour squaring is defined here for stationary base rules")
    base_allowed = rule.allowed_fn
    base_colours = rule.colours
    colours = tuple(pair_colour(a, b) for a in base_colours for b in base_colours)
    descendants = (g.inverse(), g) + tuple(rule.descendants)
    # One extra g-step of room: lifted pair colours at a descendant are
    # only defined where their own g-step stays inside the ball.
    radius = rule.dependency_radius + g.length

    def allowed(_window: tuple[int, ...], desc: tuple[str, ...]) -> frozenset[str]:
        behind_second = split_pair(desc[0])[1]
        ahead_first = split_pair(desc[1])[0]
        firsts = tuple(split_pair(c)[0] for c in desc[2:])
        if behind_second in base_allowed((), firsts):
            first_choices = (behind_second,)
        else:
            first_choices = tuple(c for c in base_colours if c != behind_second)
        return frozenset(pair_colour(c, ahead_first) for c in first_choices)

    return ColouringRule(
        name=f"squared({rule.name})",
        colours=colours,
        descendants=descendants,
        allowed_fn=allowed,
        window=(),
        dependency_radius=radius,
        stationary=True,
    )


def lift_to_square(colouring: Colouring, g: ReducedWord, palette: tuple[str, ...]) -> Colouring:
    """Pair each vertex's colour with the colour one g-step ahead."""
    ball = colouring.ball
    table = ball.left_table(g)
    codes = np.full(len(ball), -1, dtype=np.int16)
    pairs = {pc: k for k, pc in enumerate(palette)}
    for i in range(len(ball)):
        j = int(table[i])
        a = colouring.colour_at(i)
        b = colouring.colour_at(j) if j >= 0 else None
        if a is not None and b is not None:
            codes[i] = pairs[pair_colour(a, b)]
    return Colouring(ball, palette, codes)


def project_first(colouring: Colouring, base_palette: tuple[str, ...]) -> Colouring:
    codes = np.full(len(colouring.ball), -1, dtype=np.int16)
    for i in range(len(colouring.ball)):
        c = colouring.colour_at(i)
        if c is not None:
            codes[i] = base_palette.index(split_pair(c)[0])
    return Colouring(colouring.ball, base_palette, codes)


# ---------------------------------------------------------------------------
# JSON rule declarations.

BUILTIN_RULES: dict[str, Callable[..., ColouringRule]] = {}


def register_builtin(name: str, factory: Callable[..., ColouringRule]) -> None:
    BUILTIN_RULES[name] = factory


def rule_to_json(rule: ColouringRule) -> str:
    """Serialize with the allowed table fully enumerated."""
    table = {}
    for window_values in itertools.product((-1, 1), repeat=len(rule.window)):
        for desc in itertools.product(rule.colours, repeat=rule.n_descendants):
            key_w = "".join("+" if v > 0 else "-" for v in window_values)
            key = key_w + "|" + ",".join(desc)
            table[key] = sorted(rule.allowed(window_values, desc))
    return json.dumps(
        {
            "name": rule.name,
            "colours": list(rule.colours),
            "descendants": [str(d) for d in rule.descendants],
            "window": [str(w) for w in rule.window],
            "stationary": rule.stationary,
            "dependency_radius": rule.dependency_radius,
            "allowed": table,
        },
        sort_keys=True,
    )


def rule_from_json(text: str, presentation) -> ColouringRule:
    doc = json.loads(text)
    if "builtin" in doc:
        return BUILTIN_RULES[doc["builtin"]]()
    colours = tuple(doc["colours"])
    descendants = tuple(presentation.word(d) for d in doc["descendants"])
    window = tuple(presentation.word(w) for w in doc["window"])
    table = {k: frozenset(v) for k, v in doc["allowed"].items()}

    def allowed(window_values: tuple[int, ...], desc: tuple[str, ...]) -> frozenset[str]:
        key_w = "".join("+" if v > 0 else "-" for v in window_values)
        return table[key_w + "|" + ",".join(desc)]

    return ColouringRule(
        name=doc["name"],
        colours=colours,
        descendants=descendants,
        allowed_fn=allowed,
        window=window,
        dependency_radius=doc["dependency_radius"],
        stationary=doc["stationary"],
    )
