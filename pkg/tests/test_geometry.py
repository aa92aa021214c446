import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from asi.geometry import Box, Domain, build_mesh, decompose_convex, indicator


def test_three_by_three_mesh(unit_domain):
    m = build_mesh(unit_domain, 3, 3)
    assert m.n_nodes == 9
    assert m.boundary_mask.sum() == 8
    assert m.free_mask.sum() == 1
    assert m.free_mask[4]


def test_row_major_ordering(unit_domain):
    m = build_mesh(unit_domain, 4, 3)
    assert np.allclose(m.nodes[1], [1 / 3, 0.0])
    assert np.allclose(m.nodes[4], [0.0, 0.5])
    assert m.node_index(2, 1) == 6


def test_obstacle_node_inactive():
    d = Domain((0, 0), (1, 1), obstacles=[Box((0.4, 0.4), (0.6, 0.6))])
    m = build_mesh(d, 11, 11)
    k = m.node_index(5, 5)
    assert np.allclose(m.nodes[k], [0.5, 0.5])
    assert not m.active_mask[k]
    # nodes on the obstacle edge stay active and become Dirichlet nodes
    edge = m.node_index(4, 5)
    assert m.active_mask[edge] and m.boundary_mask[edge]


def test_too_few_nodes(unit_domain):
    with pytest.raises(ValueError):
        build_mesh(unit_domain, 2, 5)


def test_domain_validation():
    with pytest.raises(ValueError):
        Domain((0, 0), (0, 1))
    with pytest.raises(ValueError):
        Domain((0, 0), (1, 1), obstacles=[Box((0.5, 0.5), (1.5, 0.7))])


def test_domain_contains_obstacle_edge_not_interior():
    d = Domain((0, 0), (1, 1), obstacles=[Box((0.4, 0.4), (0.6, 0.6))])
    assert d.contains((0.4, 0.5))
    assert not d.contains((0.5, 0.5))
    assert not d.contains((1.1, 0.5))


def test_indicator_examples(unit_domain):
    m = build_mesh(unit_domain, 11, 11)
    h = 0.1
    chi = indicator(m, [(0.3, 0.5)], 0.4 * h)
    assert chi.sum() == 1 and chi[m.node_index(3, 5)] == 1
    assert not indicator(m, [], h).any()
    assert np.array_equal(indicator(m, [(0.3, 0.5), (0.3, 0.5)], h), indicator(m, [(0.3, 0.5)], h))


# ----------------------------------------------------------------------
def _brute_maximal(domain, step):
    """Maximal obstacle-free rectangles with edges on a uniform grid."""
    xs = np.round(np.arange(domain.lower[0], domain.upper[0] + step / 2, step), 10)
    ys = np.round(np.arange(domain.lower[1], domain.upper[1] + step / 2, step), 10)

    def free(x0, y0, x1, y1):
        return not any(Box((x0, y0), (x1, y1)).overlaps_interior(o) for o in domain.obstacles)

    found = set()
    for (x0, x1), (y0, y1) in itertools.product(itertools.combinations(xs, 2), itertools.combinations(ys, 2)):
        if not free(x0, y0, x1, y1):
            continue
        grow = [
            x0 > xs[0] and free(x0 - step, y0, x1, y1),
            x1 < xs[-1] and free(x0, y0, x1 + step, y1),
            y0 > ys[0] and free(x0, y0 - step, x1, y1),
            y1 < ys[-1] and free(x0, y0, x1, y1 + step),
        ]
        if not any(grow):
            found.add((x0, y0, x1, y1))
    return found


def _as_set(cover):
    return {tuple(np.round([*b.lower, *b.upper], 10)) for b in cover.subdomains}


def test_no_obstacles_single_subdomain(unit_domain):
    cover = decompose_convex(unit_domain)
    assert cover.subdomains == (unit_domain.bounding_box,)


def test_centered_obstacle_four_slabs():
    d = Domain((0, 0), (1, 1), obstacles=[Box((0.4, 0.4), (0.6, 0.6))])
    cover = decompose_convex(d)
    assert len(cover.subdomains) == 4
    assert _as_set(cover) == _brute_maximal(d, 0.1)


def test_l_shape_two_rectangles():
    d = Domain((0, 0), (1, 1), obstacles=[Box((0.5, 0.5), (1.0, 1.0))])
    cover = decompose_convex(d)
    assert len(cover.subdomains) == 2
    assert _as_set(cover) == _brute_maximal(d, 0.1)


def test_two_obstacles_against_brute_force():
    d = Domain((0, 0), (1, 1), obstacles=[Box((0.2, 0.2), (0.4, 0.5)), Box((0.6, 0.4), (0.8, 0.9))])
    assert _as_set(decompose_convex(d)) == _brute_maximal(d, 0.1)


def test_largest_containing_prefers_area():
    d = Domain((0, 0), (1, 1), obstacles=[Box((0.5, 0.5), (1.0, 1.0))])
    cover = decompose_convex(d)
    b = cover.largest_containing((0.25, 0.25))
    assert b.area == pytest.approx(0.5)
    with pytest.raises(ValueError):
        cover.largest_containing((0.75, 0.75))


_grid = st.integers(min_value=1, max_value=8).map(lambda k: k / 10)


@st.composite
def _obstacle(draw):
    x0, y0 = draw(_grid), draw(_grid)
    w, h = draw(st.integers(1, 3)), draw(st.integers(1, 3))
    x1, y1 = min(x0 + w / 10, 0.9), min(y0 + h / 10, 0.9)
    if x1 <= x0 or y1 <= y0:
        x1, y1 = x0 + 0.1, y0 + 0.1
    return Box((x0, y0), (round(x1, 10), round(y1, 10)))


@settings(max_examples=40, deadline=None)
@given(st.lists(_obstacle(), min_size=1, max_size=3))
def test_cover_properties(obstacles):
    d = Domain((0, 0), (1, 1), obstacles=obstacles)
    cover = decompose_convex(d)
    for b in cover.subdomains:
        assert not any(b.overlaps_interior(o) for o in d.obstacles)
    # every free point is covered
    rng = np.random.default_rng(0)
    for x in rng.uniform(0, 1, (200, 2)):
        if d.contains(x):
            assert cover.containing(x)
    # and no subdomain sits inside another
    for a, b in itertools.permutations(cover.subdomains, 2):
        assert not (b.contains_box(a) and b.area > a.area)
