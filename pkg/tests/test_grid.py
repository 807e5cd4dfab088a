import numpy as np
import pytest

from ergojump.grid import Grid, PolicyField, ValueField


def test_basic_geometry():
    g = Grid(2, 2.0, 5)
    assert g.spacing == 1.0
    assert g.size == 25
    np.testing.assert_allclose(g.nodes[g.origin_index], [0, 0])
    assert g.interior.sum() == 9


@pytest.mark.parametrize("n", [2, 4, 1])
def test_rejects_even_or_tiny_n(n):
    with pytest.raises(ValueError):
        Grid(1, 1.0, n)


def test_nearest_clamps_to_box():
    g = Grid(1, 1.0, 5)
    idx = g.nearest(np.array([[0.24], [0.26], [5.0], [-7.0]]))
    np.testing.assert_array_equal(idx, [2, 3, 4, 0])


def test_restrict_to_nested_grid():
    big, small = Grid(2, 8.0, 65), Grid(2, 4.0, 33)
    idx = big.restrict_to(small)
    np.testing.assert_allclose(big.nodes[idx], small.nodes)
    with pytest.raises(ValueError):
        small.restrict_to(big)
    with pytest.raises(ValueError):
        big.restrict_to(Grid(2, 4.0, 31))


def test_fields_validate():
    g = Grid(1, 1.0, 3)
    with pytest.raises(ValueError):
        ValueField(g, [0.0, np.nan, 1.0])
    with pytest.raises(ValueError):
        ValueField(g, [0.0, 1.0])
    v = ValueField(g, [3.0, 1.0, 2.0])
    assert v.at_origin() == 1.0
    assert v(np.array([[0.9]]))[0] == 2.0
    p = PolicyField.constant(g, 2)
    with pytest.raises(ValueError):
        p.validate(2)
    p.validate(3)
