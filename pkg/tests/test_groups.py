import io
import random

import numpy as np
import pytest

from cayleycolour.groups import (
    Ball,
    ReducedWord,
    ball,
    free_group,
    reduce_letters,
    z2_z3,
)


def test_free_group_sphere_sizes():
    # |S(l)| = 2k * (2k-1)^(l-1) for F_k; k=2 gives 4 * 3^(l-1).
    b = ball(free_group(2), 6)
    assert b.sphere_sizes[0] == 1
    for ell in range(1, 7):
        assert b.sphere_sizes[ell] == 4 * 3 ** (ell - 1)


def test_free_group_ball_sizes():
    b = ball(free_group(2), 3)
    assert len(b) == 53
    assert sum(b.sphere_sizes[:2]) == 5
    assert sum(b.sphere_sizes[:3]) == 17


def test_z2_z3_sphere_sizes():
    # Alternating normal form: counts follow c(l+1) = 2*c(l-1) once both
    # letter types are in play.
    b = ball(z2_z3(), 9)
    assert b.sphere_sizes == [1, 3, 4, 6, 8, 12, 16, 24, 32, 48]


def test_z2_z3_words_alternate():
    b = ball(z2_z3(), 6)
    for w in b.words:
        gens = [g for g, _ in w.letters]
        for a, b2 in zip(gens, gens[1:]):
            assert a != b2
        for g, e in w.letters:
            order = w.presentation.order(g)
            assert 1 <= e < order


def test_identity_parse_and_render():
    p = free_group(2)
    assert p.word("1").is_identity
    assert p.word("").is_identity
    assert p.identity().to_string() == "1"


def test_word_round_trip():
    p = free_group(3)
    for text in ["a", "A", "ab", "aBc", "aaB", "abA", "Abba"]:
        w = p.word(text)
        assert p.word(w.to_string()) == w


def test_mixed_word_length():
    p = free_group(2)
    w = p.word("aB") * p.word("aB")
    assert w.length == 4
    assert w.to_string() == "aBaB"


def test_cancellation():
    p = free_group(2)
    assert (p.word("ab") * p.word("Ba")).to_string() == "aa"
    assert (p.word("ab") * p.word("BA")).is_identity


def test_torsion_normalisation():
    p = z2_z3()
    t = p.word("t")
    assert (t * t * t).is_identity
    assert (t * t) == p.word("T")
    assert (t * t).length == 1
    s = p.word("s")
    assert (s * s).is_identity
    assert p.word("S") == s


def test_inverse():
    p = free_group(2)
    for text in ["a", "ab", "aBa", "abAB"]:
        w = p.word(text)
        assert (w * w.inverse()).is_identity
        assert (w.inverse() * w).is_identity


def test_reduce_idempotent_on_random_raw():
    p = free_group(2)
    rng = random.Random(7)
    for _ in range(200):
        raw = [(rng.randrange(2), rng.choice([-2, -1, 1, 2])) for _ in range(rng.randrange(12))]
        w = reduce_letters(raw, p)
        assert reduce_letters(list(w.letters), p) == w


def test_associativity_exhaustive_small():
    p = z2_z3()
    words = ball(p, 2).words
    for u in words:
        for v in words:
            for w in words:
                assert (u * v) * w == u * (v * w)


def test_each_vertex_has_one_shorter_neighbour():
    # Geodesics are unique in a free product: stripping the first letter is
    # the only length-decreasing left step.
    for p in (free_group(2), z2_z3()):
        b = ball(p, 4)
        for w in b.words:
            if w.is_identity:
                continue
            shorter = 0
            for g, e in p.adjacency_letters():
                u = p.generator(g, e) * w
                if u.length < w.length:
                    shorter += 1
            assert shorter == 1, str(w)


def test_prefix_closed():
    p = free_group(2)
    b = ball(p, 4)
    for w in b.words:
        units = w.unit_letters()
        for cut in range(len(units)):
            suffix = reduce_letters(units[cut:], p)
            assert suffix in b


def test_left_table_matches_mul():
    p = free_group(2)
    b = ball(p, 3)
    g = p.word("aB")
    table = b.left_table(g)
    for i, w in enumerate(b.words):
        u = g * w
        if u in b:
            assert table[i] == b.index_of(u)
        else:
            assert table[i] == -1


def test_right_table_matches_mul():
    p = z2_z3()
    b = ball(p, 4)
    g = p.word("ts")
    table = b.right_table(g)
    for i, w in enumerate(b.words):
        u = w * g
        if u in b:
            assert table[i] == b.index_of(u)
        else:
            assert table[i] == -1


def test_composed_table_no_false_dropout():
    # Per-letter composition may only report -1 when the product truly
    # leaves the ball, never because an intermediate step grazed the rim.
    p = free_group(2)
    b = ball(p, 3)
    for text in ["ab", "AB", "aBa", "bbA"]:
        g = p.word(text)
        table = b.left_table(g)
        for i, w in enumerate(b.words):
            assert (table[i] >= 0) == ((g * w) in b)


def test_interior_indices():
    b = ball(free_group(2), 3)
    inner = b.interior_indices(1)
    assert len(inner) == 17
    assert all(b.words[i].length <= 2 for i in inner)


def test_sphere_order_is_deterministic():
    w1 = [w.to_string() for w in ball(free_group(2), 2).words]
    w2 = [w.to_string() for w in ball(free_group(2), 2).words]
    assert w1 == w2
    assert w1[0] == "1"


def test_edges_csv():
    b = ball(z2_z3(), 1)
    buf = io.StringIO()
    b.write_edges_csv(buf)
    lines = buf.getvalue().strip().splitlines()
    assert lines[0] == "from,generator,to"
    # s, t, T all act on 4 vertices; entries only where the product stays in.
    assert len(lines) > 1


def test_pow():
    p = z2_z3()
    t = p.word("t")
    assert t**3 == p.identity()
    assert t**-1 == p.word("T")


def test_ball_rejects_bad_radius():
    with pytest.raises(ValueError):
        Ball(free_group(2), -1)


def test_lengths_array():
    b = ball(free_group(2), 2)
    assert b.lengths.dtype == np.int32
    assert list(b.lengths[:5]) == [0, 1, 1, 1, 1]
