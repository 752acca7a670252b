"""Words, presentations, and Cayley balls for free products of cyclic groups.

Elements are kept in one canonical reduced form so that set identities on
balls can be checked exactly.  Supported groups are free groups F_k and
free products of finite cyclic groups (for example Z2 * Z3).  Adjacency in
a ball is by left multiplication with generator letters.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import IO, Iterator, Sequence

import numpy as np

# A letter is (generator index, exponent).  In canonical form adjacent
# letters never share a generator; torsion exponents sit in 1..order-1 and
# infinite-order exponents are nonzero.
Letter = tuple[int, int]


@dataclass(frozen=True)
class Presentation:
    """Generators with orders; order None means infinite."""

    generators: tuple[tuple[str, int | None], ...]

    def __post_init__(self) -> None:
        if not self.generators:
            raise ValueError("need at least one generator")
        seen = set()
        for name, order in self.generators:
            if len(name) != 1 or not name.isalpha() or not name.islower():
                raise ValueError(f"generator name must be one lowercase letter: {name!r}")
            if name in seen:
                raise ValueError(f"duplicate generator name {name!r}")
            seen.add(name)
            if order is not None and order < 2:
                raise ValueError(f"order of {name!r} must be None or at least 2")

    @property
    def n_generators(self) -> int:
        return len(self.generators)

    def order(self, gen: int) -> int | None:
        return self.generators[gen][1]

    def name(self, gen: int) -> str:
        return self.generators[gen][0]

    def index_of(self, name: str) -> int:
        for i, (n, _) in enumerate(self.generators):
            if n == name:
                return i
        raise KeyError(f"no generator named {name!r}")

    def identity(self) -> "ReducedWord":
        return ReducedWord(self, ())

    def generator(self, gen: int, exp: int = 1) -> "ReducedWord":
        return reduce_letters([(gen, exp)], self)

    def adjacency_letters(self) -> tuple[Letter, ...]:
        """Unit letters giving Cayley adjacency; order-2 generators self-invert."""
        out: list[Letter] = []
        for i, (_, order) in enumerate(self.generators):
            out.append((i, 1))
            if order != 2:
                out.append((i, -1))
        return tuple(out)

    def word(self, text: str) -> "ReducedWord":
        """Parse a word string; lowercase is a generator, uppercase its inverse.

        "1" (or the empty string) denotes the identity.
        """
        if text in ("", "1"):
            return self.identity()
        raw: list[Letter] = []
        for ch in text:
            low = ch.lower()
            gen = self.index_of(low)
            raw.append((gen, 1 if ch == low else -1))
        return reduce_letters(raw, self)

    def __str__(self) -> str:
        parts = [n if o is None else f"{n}^{o}" for n, o in self.generators]
        return "<" + ", ".join(parts) + ">"


def free_group(rank: int, names: str = "abcdefgh") -> Presentation:
    if rank < 1 or rank > len(names):
        raise ValueError(f"rank must be in 1..{len(names)}")
    return Presentation(tuple((names[i], None) for i in range(rank)))


def z2_z3() -> Presentation:
    """The free product Z2 * Z3 with s of order 2 and t of order 3."""
    return Presentation((("s", 2), ("t", 3)))


def _block_length(gen: int, exp: int, p: Presentation) -> int:
    order = p.order(gen)
    if order is None:
        return abs(exp)
    return min(exp, order - exp)


def reduce_letters(raw: Sequence[Letter], p: Presentation) -> "ReducedWord":
    """Left-to-right greedy cancellation into the canonical form."""
    stack: list[Letter] = []
    for gen, exp in raw:
        if not 0 <= gen < p.n_generators:
            raise ValueError(f"generator index {gen} out of range")
        if stack and stack[-1][0] == gen:
            _, prev = stack.pop()
            exp = prev + exp
        order = p.order(gen)
        if order is not None:
            exp %= order
        if exp != 0:
            stack.append((gen, exp))
    return ReducedWord(p, tuple(stack))


@dataclass(frozen=True)
class ReducedWord:
    """A group element in canonical reduced form."""

    presentation: Presentation
    letters: tuple[Letter, ...]

    def __post_init__(self) -> None:
        length = sum(_block_length(g, e, self.presentation) for g, e in self.letters)
        object.__setattr__(self, "length", length)

    length: int = 0

    @property
    def is_identity(self) -> bool:
        return not self.letters

    def __mul__(self, other: "ReducedWord") -> "ReducedWord":
        if self.presentation != other.presentation:
            raise ValueError("presentation mismatch")
        return reduce_letters(list(self.letters) + list(other.letters), self.presentation)

    def inverse(self) -> "ReducedWord":
        p = self.presentation
        raw = [(g, -e) for g, e in reversed(self.letters)]
        return reduce_letters(raw, p)

    def __pow__(self, n: int) -> "ReducedWord":
        base = self if n >= 0 else self.inverse()
        out = self.presentation.identity()
        for _ in range(abs(n)):
            out = out * base
        return out

    def unit_letters(self) -> list[Letter]:
        """Expand into single-step letters, shortest spelling per block."""
        units: list[Letter] = []
        for gen, exp in self.letters:
            order = self.presentation.order(gen)
            if order is None:
                units.extend([(gen, 1 if exp > 0 else -1)] * abs(exp))
            elif exp <= order - exp:
                units.extend([(gen, 1)] * exp)
            else:
                units.extend([(gen, -1)] * (order - exp))
        return units

    def sort_key(self) -> tuple:
        key = []
        for gen, exp in self.letters:
            if self.presentation.order(gen) is None:
                key.append((gen, 0 if exp > 0 else 1, abs(exp)))
            else:
                key.append((gen, 0, exp))
        return (self.length, tuple(key))

    def to_string(self) -> str:
        if not self.letters:
            return "1"
        parts = []
        for gen, exp in self.letters:
            name = self.presentation.name(gen)
            order = self.presentation.order(gen)
            if order is None:
                parts.append((name if exp > 0 else name.upper()) * abs(exp))
            elif exp <= order - exp:
                parts.append(name * exp)
            else:
                parts.append(name.upper() * (order - exp))
        return "".join(parts)

    def __str__(self) -> str:
        return self.to_string()


def mul(u: ReducedWord, v: ReducedWord) -> ReducedWord:
    return u * v


def inv(u: ReducedWord) -> ReducedWord:
    return u.inverse()


def _compose(outer: np.ndarray, inner: np.ndarray) -> np.ndarray:
    out = np.where(inner >= 0, outer[np.maximum(inner, 0)], -1)
    return out.astype(np.int32)


class Ball:
    """All reduced words of length at most `radius`, in a fixed canonical order.

    The order is breadth-first by word length with a lexicographic tiebreak,
    so vertex indices are stable across runs.  Left and right translation
    tables are built lazily and cached; entries falling outside the ball
    are -1.
    """

    def __init__(self, presentation: Presentation, radius: int):
        if radius < 0:
            raise ValueError("radius must be nonnegative")
        self.presentation = presentation
        self.radius = radius
        self.words: list[ReducedWord] = [presentation.identity()]
        self.index: dict[tuple[Letter, ...], int] = {(): 0}
        self.sphere_sizes: list[int] = [1]
        adjacency = presentation.adjacency_letters()
        letter_words = [presentation.generator(g, e) for g, e in adjacency]
        frontier = [presentation.identity()]
        for ell in range(1, radius + 1):
            found: dict[tuple[Letter, ...], ReducedWord] = {}
            for w in frontier:
                for lw in letter_words:
                    u = lw * w
                    if u.length == ell and u.letters not in self.index and u.letters not in found:
                        found[u.letters] = u
            sphere = sorted(found.values(), key=ReducedWord.sort_key)
            for u in sphere:
                self.index[u.letters] = len(self.words)
                self.words.append(u)
            self.sphere_sizes.append(len(sphere))
            frontier = sphere
        self.lengths = np.array([w.length for w in self.words], dtype=np.int32)
        self._left_unit: dict[Letter, np.ndarray] = {}
        self._right_unit: dict[Letter, np.ndarray] = {}
        self._left: dict[tuple[Letter, ...], np.ndarray] = {}
        self._right: dict[tuple[Letter, ...], np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, w: ReducedWord) -> bool:
        return w.letters in self.index

    def index_of(self, w: ReducedWord) -> int:
        i = self.index.get(w.letters)
        if i is None:
            raise KeyError(f"word {w} not in ball of radius {self.radius}")
        return i

    def _unit_table(self, letter: Letter, side: str) -> np.ndarray:
        cache = self._left_unit if side == "left" else self._right_unit
        table = cache.get(letter)
        if table is None:
            lw = self.presentation.generator(*letter)
            table = np.empty(len(self.words), dtype=np.int32)
            for i, w in enumerate(self.words):
                u = lw * w if side == "left" else w * lw
                table[i] = self.index.get(u.letters, -1)
            cache[letter] = table
        return table

    def left_table(self, g: ReducedWord) -> np.ndarray:
        """Vertex index of g*w per vertex w; -1 where g*w leaves the ball."""
        table = self._left.get(g.letters)
        if table is None:
            units = g.unit_letters()
            if not units:
                table = np.arange(len(self.words), dtype=np.int32)
            else:
                table = self._unit_table(units[-1], "left")
                for letter in reversed(units[:-1]):
                    table = _compose(self._unit_table(letter, "left"), table)
            self._left[g.letters] = table
        return table

    def right_table(self, g: ReducedWord) -> np.ndarray:
        """Vertex index of w*g per vertex w; -1 where w*g leaves the ball."""
        table = self._right.get(g.letters)
        if table is None:
            units = g.unit_letters()
            if not units:
                table = np.arange(len(self.words), dtype=np.int32)
            else:
                table = self._unit_table(units[0], "right")
                for letter in units[1:]:
                    table = _compose(self._unit_table(letter, "right"), table)
            self._right[g.letters] = table
        return table

    def interior_indices(self, depth: int) -> np.ndarray:
        """Vertices whose whole depth-neighbourhood stays inside the ball."""
        return np.nonzero(self.lengths <= self.radius - depth)[0]

    def edges(self) -> Iterator[tuple[int, str, int]]:
        for letter in self.presentation.adjacency_letters():
            gen, exp = letter
            name = self.presentation.name(gen)
            label = name if exp > 0 else name.upper()
            table = self._unit_table(letter, "left")
            for i in range(len(self.words)):
                j = int(table[i])
                if j >= 0:
                    yield i, label, j

    def write_edges_csv(self, fileobj: IO[str]) -> None:
        writer = csv.writer(fileobj)
        writer.writerow(["from", "generator", "to"])
        for i, label, j in self.edges():
            writer.writerow([self.words[i].to_string(), label, self.words[j].to_string()])


def ball(presentation: Presentation, radius: int) -> Ball:
    return Ball(presentation, radius)


def enumerate_words(presentation: Presentation, max_length: int) -> list[ReducedWord]:
    """All reduced words of length at most max_length, canonical order."""
    return list(Ball(presentation, max_length).words)
