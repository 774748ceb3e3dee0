import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from corescope.errors import GenerationFailed, InconsistentTransitions
from corescope.gridgen import (E, N, S, W, InfraParams, Kind, classify, connections_of, generate_infrastructure,
                               Infrastructure, path_consistency_violations, render_svg, step, to_graph, transitions_of)
from instances import infra_from_cells


def allowed(matrix):
    return {(i, o) for i in range(4) for o in range(4) if matrix[i][o]}


def rotate_matrix(matrix, r):
    out = [[False] * 4 for _ in range(4)]
    for i in range(4):
        for o in range(4):
            out[(i + r) % 4][(o + r) % 4] = matrix[i][o]
    return tuple(tuple(row) for row in out)


def test_straight_vertical_passes_through_both_ways():
    assert allowed(transitions_of(Kind.STRAIGHT, 0)) == {(N, N), (S, S)}


def test_straight_rotated_is_horizontal():
    assert allowed(transitions_of(Kind.STRAIGHT, 1)) == {(E, E), (W, W)}


def test_diamond_crossing_has_four_pass_throughs():
    assert allowed(transitions_of(Kind.DIAMOND_CROSSING, 0)) == {(N, N), (S, S), (E, E), (W, W)}


def test_dead_end_reverses():
    m = allowed(transitions_of(Kind.DEAD_END, 0))
    assert len(m) == 1
    (i, o), = m
    assert o == (i + 2) % 4


def test_switch_kinds_branch():
    # a simple switch offers a choice in exactly one entering heading
    m = transitions_of(Kind.SIMPLE_SWITCH, 0)
    assert sorted(sum(row) for row in m) == [0, 1, 1, 2]
    m = transitions_of(Kind.DOUBLE_SLIP, 0)
    assert sorted(sum(row) for row in m) == [2, 2, 2, 2]


@pytest.mark.parametrize("kind", list(Kind))
@pytest.mark.parametrize("rotation", range(4))
def test_rotation_rotates_both_axes(kind, rotation):
    assert transitions_of(kind, (rotation + 1) % 4) == rotate_matrix(transitions_of(kind, rotation), 1)


@pytest.mark.parametrize("kind", list(Kind))
@pytest.mark.parametrize("rotation", range(4))
def test_classify_recovers_connection_set(kind, rotation):
    ct = classify(connections_of(kind, rotation))
    assert ct is not None
    assert ct.transitions == transitions_of(kind, rotation)


def test_three_cell_straight_graph():
    infra = infra_from_cells(1, 3, {(0, 0): ("straight", 0), (1, 0): ("straight", 0), (2, 0): ("straight", 0)})
    g = to_graph(infra)
    assert len(g.nodes) == 6
    assert len(g.edges) == 4


def test_empty_grid_gives_empty_graph():
    g = to_graph(infra_from_cells(5, 5, {}))
    assert g.nodes == [] and g.edges == []


def test_dead_end_produces_reversal_edge():
    infra = infra_from_cells(1, 2, {(0, 0): ("dead_end", 0), (1, 0): ("straight", 0)})
    g = to_graph(infra)
    # a train heading north into the dead end comes back heading south
    assert ((1, 0, S) in g.succ[(0, 0, N)])


def test_inconsistent_neighbours_rejected():
    infra = infra_from_cells(2, 1, {(0, 0): ("straight", 1), (0, 1): ("straight", 0)})
    with pytest.raises(InconsistentTransitions):
        to_graph(infra)
    assert path_consistency_violations(infra)


def test_paper_scale_instance():
    params = InfraParams(width=100, height=100, max_num_cities=8, max_rail_in_city=2, max_rail_between_cities=1,
                         number_of_agents=62)
    infra = generate_infrastructure(params, 190)
    assert 2 <= len(infra.cities) <= 8
    assert len(infra.trains) == 62
    assert path_consistency_violations(infra) == []


def test_two_cities_single_train():
    infra = generate_infrastructure(InfraParams(max_num_cities=2, number_of_agents=1), 11)
    (t,) = infra.trains
    assert t.origin_city != t.target_city


def test_same_seed_byte_identical():
    p = InfraParams(number_of_agents=6)
    assert generate_infrastructure(p, 5).dumps() == generate_infrastructure(p, 5).dumps()


def test_roundtrip_serialization():
    infra = generate_infrastructure(InfraParams(), 2)
    again = Infrastructure.from_dict(json.loads(infra.dumps()))
    assert again.dumps() == infra.dumps()


def test_crowded_grid_reports_attempts():
    with pytest.raises(GenerationFailed) as err:
        generate_infrastructure(InfraParams(width=12, height=12, max_num_cities=9, max_attempts=3), 0)
    assert err.value.attempts == 3


def test_too_small_grid_rejected():
    with pytest.raises(ValueError):
        generate_infrastructure(InfraParams(width=5, height=5), 0)


def test_svg_renders():
    svg = render_svg(generate_infrastructure(InfraParams(), 1))
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")


@given(seed=st.integers(0, 10_000), cities=st.integers(2, 5), agents=st.integers(1, 12))
def test_generated_infrastructure_invariants(seed, cities, agents):
    params = InfraParams(max_num_cities=cities, number_of_agents=agents)
    try:
        infra = generate_infrastructure(params, seed)
    except GenerationFailed:
        return
    assert path_consistency_violations(infra) == []
    assert len(infra.cities) <= cities
    assert all(c.parallel_tracks <= params.max_rail_in_city for c in infra.cities)
    g = to_graph(infra)
    assert len(g.nodes) <= 4 * len(infra.cells)
    platforms = {p: c.city_id for c in infra.cities for p in c.platforms}
    for t in infra.trains:
        assert platforms[t.origin] == t.origin_city
        assert platforms[t.target] == t.target_city
        assert t.origin_city != t.target_city
        assert set(g.nodes_at(t.target)) & g.reachable(t.start)
        assert t.speed in params.speed_data
    for u, v in g.edges:
        ct = infra.cells[u[:2]]
        assert ct.transitions[u[2]][v[2]]
        assert step(u[:2], v[2]) == v[:2]
