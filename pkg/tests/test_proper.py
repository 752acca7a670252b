from fractions import Fraction

import numpy as np
import pytest

from cayleycolour.arrows import arrow_rule, constructive_solve, pdegree
from cayleycolour.configs import Configuration, RandomSource, sample
from cayleycolour.groups import ball, free_group, z2_z3
from cayleycolour.measures import replay_refutation
from cayleycolour.proper import (
    PALETTE17,
    Calibration,
    DoubledColouring,
    apply_left_word,
    arrows_to_list_colouring,
    calibrate_N,
    canonical_doubled_colouring,
    check_proper,
    check_proper_list,
    doubled_graph,
    flow_audit_doubled,
    greedy_base_colouring,
    list_assignment,
    list_assignments,
    offset_conflicts,
    offsets16,
    secondary_graph,
)
from cayleycolour.rules import check

F2 = free_group(2)


def setup_r6(seed=7):
    b = ball(F2, 6)
    config = sample(b, RandomSource(seed))
    base = greedy_base_colouring(b)
    return b, config, base


def test_offsets16_counts():
    fam = offsets16()
    assert len(fam.elements) == 16
    assert len({g.letters for g in fam.elements}) == 16
    assert all(g.length == 2 for g in fam.short)
    assert all(g.length == 4 for g in fam.long)
    assert fam.closed_under_inverse()


def test_offsets16_identity_products():
    fam = offsets16()
    identity_products = sum(1 for g in fam.short for h in fam.short if (g * h).is_identity)
    assert identity_products == 4
    g1, g3 = fam.short[0], fam.short[2]  # aB and bA
    assert (g1 * g3).is_identity
    assert (g1 * g1).length == 4


def test_offsets_require_free_group():
    with pytest.raises(ValueError):
        offsets16(z2_z3())


def test_greedy_base_proper():
    b, config, base = setup_r6()
    assert offset_conflicts(base) == 0
    assert base.colour_at(0) == "c0"
    assert len({int(c) for c in base.codes}) <= 17
    assert int(base.codes.min()) >= 0


def test_greedy_shuffled_order_still_proper():
    b = ball(F2, 5)
    rng = np.random.default_rng(3)
    order = rng.permutation(len(b))
    base = greedy_base_colouring(b, order=[int(i) for i in order])
    assert offset_conflicts(base) == 0


def test_greedy_random_choice_proper():
    b = ball(F2, 5)
    base = greedy_base_colouring(b, choice="random", seed=11)
    assert offset_conflicts(base) == 0


def test_greedy_needs_room():
    with pytest.raises(ValueError):
        greedy_base_colouring(ball(F2, 4))


def test_list_assignment_distinct():
    b, config, base = setup_r6()
    interior = b.interior_indices(1)
    for w in interior[:300]:
        c1, c2 = list_assignment(config, base, int(w))
        assert c1 != c2


def test_list_assignment_boundary_error():
    b, config, base = setup_r6()
    edge = int(np.flatnonzero(b.lengths == b.radius)[0])
    with pytest.raises(ValueError):
        list_assignment(config, base, edge)


def test_secondary_clique_sizes_are_pdegrees():
    b, config, base = setup_r6()
    graph = secondary_graph(config)
    for z, clique in zip(graph.centers, graph.cliques):
        assert len(clique) == pdegree(config, z)


def test_secondary_edge_offsets():
    """Same-orientation clique-mates differ by a short offset; mates with
    opposite orientation differ by a same-sign length-2 product instead."""
    b, config, base = setup_r6()
    fam = offsets16()
    short = {g.letters for g in fam.short}
    t1, u1, t2, u2 = (b.left_table(F2.generator(g, e)) for g, e in ((0, 1), (0, -1), (1, 1), (1, -1)))

    def slot_sign(x, z):
        if x == t1[z] or x == t2[z]:
            return 1
        assert x == u1[z] or x == u2[z]
        return -1

    graph = secondary_graph(config)
    seen_same = seen_cross = 0
    for z, clique in zip(graph.centers, graph.cliques):
        for i in range(len(clique)):
            for j in range(i + 1, len(clique)):
                x, y = clique[i], clique[j]
                offset = b.words[x] * b.words[y].inverse()
                assert offset.length == 2
                if slot_sign(x, z) == slot_sign(y, z):
                    assert offset.letters in short
                    seen_same += 1
                else:
                    assert offset.letters not in short
                    seen_cross += 1
    assert seen_same > 0 and seen_cross > 0


def test_away_targets_differ_from_centre_by_short_offset():
    b, config, base = setup_r6()
    fam = offsets16()
    short = {g.letters for g in fam.short}
    graph = secondary_graph(config)
    checked = 0
    from cayleycolour.arrows import candidates

    for z, clique in zip(graph.centers, graph.cliques):
        for x in clique:
            if b.lengths[x] > b.radius - 1:
                continue
            pair = candidates(config, x)
            assert z in pair
            other = pair[0] if pair[1] == z else pair[1]
            offset = b.words[other] * b.words[z].inverse()
            assert offset.letters in short
            checked += 1
    assert checked > 100


def test_list_transport_proper():
    b, config, base = setup_r6()
    colouring = constructive_solve(config)
    assert check(arrow_rule(), colouring).satisfied
    lists_cover = b.interior_indices(1)
    lists = list_assignments(config, base, lists_cover)
    transported = arrows_to_list_colouring(colouring, base)
    graph = secondary_graph(config)
    report = check_proper_list(graph, lists, transported)
    assert report.satisfied
    # every transported colour sits on the vertex's own list
    for w in lists_cover:
        w = int(w)
        got = transported.colour_at(w)
        if got is not None:
            assert got in lists[w]


def test_list_transport_many_seeds():
    b = ball(F2, 5)
    base = greedy_base_colouring(b)
    for seed in range(6):
        config = sample(b, RandomSource(seed))
        transported = arrows_to_list_colouring(constructive_solve(config), base)
        lists = list_assignments(config, base, b.interior_indices(1))
        assert check_proper_list(secondary_graph(config), lists, transported).satisfied


def test_list_transport_rejects_crowding():
    b, config, base = setup_r6()
    colouring = constructive_solve(config)
    # aim a second arrow at an already-hit interior vertex
    from cayleycolour.arrows import arrow_field, incoming_counts, neighbour_tables

    field = arrow_field(colouring)
    incoming = incoming_counts(field)
    interior = set(int(i) for i in b.interior_indices(2))
    victim = next(int(w) for w in np.flatnonzero(incoming == 1) if int(w) in interior)
    t1, u1, t2, u2 = neighbour_tables(b)
    broken = colouring.copy()
    for sender, need, active in (
        (int(t1[victim]), -1, 1),
        (int(u1[victim]), 1, 1),
        (int(t2[victim]), -1, 2),
        (int(u2[victim]), 1, 2),
    ):
        if field.targets[sender] != victim and config.values[sender] == need:
            broken.set_colour(sender, f"a{active}u")
            break
    with pytest.raises(ValueError):
        arrows_to_list_colouring(broken, base)


def test_check_proper_list_flags_constant_clique():
    b, config, base = setup_r6()
    graph = secondary_graph(config)
    lists = list_assignments(config, base, b.interior_indices(1))
    from cayleycolour.rules import Colouring

    constant = Colouring.uniform(b, PALETTE17, "c3")
    report = check_proper_list(graph, lists, constant)
    assert not report.satisfied


def test_check_proper_list_missing_list():
    b, config, base = setup_r6()
    graph = secondary_graph(config)
    transported = arrows_to_list_colouring(constructive_solve(config), base)
    with pytest.raises(ValueError):
        check_proper_list(graph, {}, transported)


def test_apply_left_word_matches_multiplication():
    b = ball(F2, 4)
    gamma = F2.word("abA")
    out = apply_left_word(b, gamma, np.arange(len(b)))
    for i in range(0, len(b), 7):
        product = gamma * b.words[i]
        expected = b.index_of(product) if product in b else -1
        assert int(out[i]) == expected


def test_calibrate_trivial_epsilon():
    b, config, base = setup_r6()
    cal = calibrate_N(base, epsilon=Fraction(1))
    assert cal.succeeded and cal.N == 1


def test_calibrate_failure_counts_monotone():
    b = ball(F2, 7)
    base = greedy_base_colouring(b, choice="random", seed=5)
    cal = calibrate_N(base, epsilon=Fraction(1, 10**9))
    fracs = [Fraction(fails, size) for _, size, fails in cal.trace]
    assert all(fracs[i + 1] <= fracs[i] for i in range(len(fracs) - 1))


def test_calibrate_reports_q_proxy():
    b = ball(F2, 7)
    base = greedy_base_colouring(b, choice="random", seed=5)
    cal = calibrate_N(base, epsilon=Fraction(1, 512))
    if cal.succeeded:
        assert cal.failure_fraction <= Fraction(1, 512)
        assert len(cal.failing) == cal.failure_fraction * cal.sample_size
    else:
        assert cal.N is None
        assert cal.failure_fraction > Fraction(1, 512)


def test_doubled_graph_strict_radius_guard():
    b, config, base = setup_r6()
    with pytest.raises(ValueError):
        doubled_graph(config, base, 1, strict=True)
    graph = doubled_graph(config, base, 1, strict=False)
    assert graph.N == 1


def test_rho_involution():
    b, config, base = setup_r6()
    graph = doubled_graph(config, base, 1, strict=False)
    for v in (0, 5, len(b) - 1, len(b), 2 * len(b) - 1):
        assert graph.rho(graph.rho(v)) == v


def test_q_vertices_have_no_first_copy_edges():
    b, config, base = setup_r6()
    qv = int(b.interior_indices(2)[10])
    graph = doubled_graph(config, base, 1, q_proxy=frozenset({qv}), strict=False)
    colouring = canonical_doubled_colouring(graph, constructive_solve(config))
    report = check_proper(graph, colouring, copy2_sample=8)
    assert report.satisfied
    for x, z in graph.cross_pairs(np.array([qv])):
        raise AssertionError("Q vertex produced a cross edge")


def test_canonical_doubled_colouring_proper():
    b, config, base = setup_r6()
    graph = doubled_graph(config, base, 3, strict=False)
    colouring = canonical_doubled_colouring(graph, constructive_solve(config))
    report = check_proper(graph, colouring, copy2_sample=48)
    assert report.satisfied
    assert report.edges_checked["secondary"] > 0
    assert report.edges_checked["cross"] > 0
    assert report.edges_checked["copy2"] > 0


def test_flow_audit_exact_gap():
    b, config, base = setup_r6()
    graph = doubled_graph(config, base, 1, strict=False)
    colouring = canonical_doubled_colouring(graph, constructive_solve(config))
    audit = flow_audit_doubled(colouring, graph)
    assert audit.outflow_bound == Fraction(511, 512)
    assert audit.inflow_bound == Fraction(496, 512)
    assert not audit.feasibility.feasible
    ref = audit.feasibility.refutation
    assert ref.gap == Fraction(15, 512)
    assert replay_refutation(audit.program, ref)
    assert audit.outflow_fraction == 1
    assert audit.induced_crowded_fraction == 0
    assert audit.clique_touches_q_fraction == 0


def test_flow_audit_counts_q():
    b, config, base = setup_r6()
    qv = {int(v) for v in b.interior_indices(2)[:3]}
    graph = doubled_graph(config, base, 1, q_proxy=frozenset(qv), strict=False)
    colouring = canonical_doubled_colouring(graph, constructive_solve(config))
    audit = flow_audit_doubled(colouring, graph)
    assert audit.q_fraction == Fraction(3, len(b.interior_indices(1)))
    assert audit.outflow_fraction == 1 - audit.q_fraction
    assert audit.clique_touches_q_fraction > 0


def test_flow_audit_rejects_improper():
    b, config, base = setup_r6()
    graph = doubled_graph(config, base, 1, strict=False)
    flat = DoubledColouring(PALETTE17, np.zeros(2 * len(b), dtype=np.int16))
    with pytest.raises(ValueError):
        flow_audit_doubled(flat, graph)


def test_doubled_csv(tmp_path):
    b = ball(F2, 5)
    config = sample(b, RandomSource(2))
    base = greedy_base_colouring(b)
    graph = doubled_graph(config, base, 1, strict=False)
    path = tmp_path / "doubled.csv"
    with open(path, "w") as fh:
        graph.write_csv(fh, first_vertices=b.interior_indices(1)[:20], second_vertices=np.arange(10))
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "family,from,to"
    families = {line.split(",")[0] for line in lines[1:]}
    assert families <= {"secondary", "cross", "copy2"}
    assert "secondary" in families


def test_degree_bound_positive():
    b, config, base = setup_r6()
    graph = doubled_graph(config, base, 1, strict=False)
    assert graph.degree_bound() >= 6 + 4
