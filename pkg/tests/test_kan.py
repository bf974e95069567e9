import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import finite_diff, max_rel_error, naive_bspline_basis, naive_layer_forward

from kandiag import autograd as ag
from kandiag.errors import ConfigError, ContractError, ShapeError
from kandiag.kan import (
    KanLayer,
    KanNetwork,
    SplineGrid,
    basis_values,
    bspline_basis,
    edge_importance,
    prune,
)

# frozen from a one-off run of the naive per-edge oracle (seed 2024, fixed input)
GOLDEN_TWO_LAYER = np.array(
    [
        [-0.04726569670862714, -0.00337316949104035],
        [-0.05833838420261485, 0.11625935551077049],
    ]
)


def test_degree_zero_indicator():
    grid = SplineGrid(lo=0.0, hi=2.0, intervals=2, degree=0)
    assert np.array_equal(basis_values(np.array([[0.5]]), grid).ravel(), [1.0, 0.0])


def test_grid_validation():
    with pytest.raises(ConfigError):
        SplineGrid(lo=1.0, hi=1.0)
    with pytest.raises(ConfigError):
        SplineGrid(intervals=0)
    with pytest.raises(ConfigError):
        SplineGrid(degree=-1)


def test_basis_matches_naive_recursion_at_point():
    grid = SplineGrid(lo=-1.0, hi=1.0, intervals=5, degree=3)
    ours = basis_values(np.array([[0.13]]), grid).ravel()
    naive = naive_bspline_basis(0.13, grid)
    assert np.abs(ours - naive).max() <= 1e-12


@settings(max_examples=80, deadline=None)
@given(
    x=st.floats(min_value=-1.0, max_value=1.0),
    degree=st.integers(min_value=0, max_value=4),
    intervals=st.integers(min_value=1, max_value=9),
)
def test_partition_of_unity(x, degree, intervals):
    grid = SplineGrid(lo=-1.0, hi=1.0, intervals=intervals, degree=degree)
    total = basis_values(np.array([[x]]), grid).sum()
    assert abs(total - 1.0) <= 1e-12


def test_locality_support():
    grid = SplineGrid(lo=-1.0, hi=1.0, intervals=5, degree=3)
    kn = grid.knots
    xs = np.linspace(-1.0, 1.0, 501).reshape(-1, 1)
    bases = basis_values(xs, grid)[:, 0, :]
    for l in range(grid.n_bases):
        lo, hi = kn[l], kn[l + grid.degree + 1]
        outside = (xs[:, 0] < lo) | (xs[:, 0] > hi)
        assert np.all(bases[outside, l] == 0.0)
        # support spans at most degree+1 knot intervals
        assert (hi - lo) <= (grid.degree + 1) * grid.step + 1e-12


def test_out_of_range_inputs_clamp():
    grid = SplineGrid()
    far = basis_values(np.array([[7.5], [-3.0]]), grid)
    edge = basis_values(np.array([[1.0], [-1.0]]), grid)
    assert np.array_equal(far, edge)


def test_zero_layer_outputs_zero():
    layer = KanLayer(3, 2, rng=np.random.default_rng(0))
    layer.base_weight.values[:] = 0.0
    layer.spline_coeffs.values[:] = 0.0
    out = layer.forward(ag.constant(np.random.default_rng(1).uniform(-1, 1, (5, 3))))
    assert np.array_equal(out.values, np.zeros((5, 2)))


def test_single_basis_selection():
    layer = KanLayer(1, 1, rng=np.random.default_rng(0))
    layer.base_weight.values[:] = 0.0
    layer.spline_coeffs.values[:] = 0.0
    layer.spline_coeffs.values[0, 0, 0] = 1.0
    xs = np.linspace(-1, 1, 11).reshape(-1, 1)
    out = layer.forward(ag.constant(xs))
    expected = basis_values(xs, layer.grid)[:, 0, 0].reshape(-1, 1)
    assert np.allclose(out.values, expected, atol=1e-15)


def test_layer_width_mismatch():
    layer = KanLayer(3, 2, rng=np.random.default_rng(0))
    with pytest.raises(ShapeError):
        layer.forward(ag.constant(np.zeros((4, 5))))


def test_efficient_forward_matches_naive_per_edge():
    rng = np.random.default_rng(42)
    layer = KanLayer(4, 3, rng=rng)
    x = rng.uniform(-1.3, 1.3, size=(7, 4))  # includes out-of-range points
    ours = layer.forward(ag.constant(x)).values
    naive = naive_layer_forward(layer, x)
    assert np.abs(ours - naive).max() <= 1e-10


def test_one_layer_network_equals_layer_forward():
    rng = np.random.default_rng(9)
    net = KanNetwork([3, 2], rng=rng)
    x = rng.uniform(-1, 1, (4, 3))
    assert np.array_equal(
        net.forward_values(x), net.layers[0].forward(ag.constant(x)).values
    )


def test_two_zero_layers_output_zero():
    net = KanNetwork([3, 4, 2], rng=np.random.default_rng(0))
    for layer in net.layers:
        layer.base_weight.values[:] = 0.0
        layer.spline_coeffs.values[:] = 0.0
    out = net.forward_values(np.random.default_rng(2).uniform(-1, 1, (3, 3)))
    assert np.array_equal(out, np.zeros((3, 2)))


def test_two_layer_network_matches_frozen_golden_value():
    net = KanNetwork([3, 4, 2], rng=np.random.default_rng(2024))
    x = np.array([[0.3, -0.25, 0.8], [-0.9, 0.55, 0.1]])
    assert np.allclose(net.forward_values(x), GOLDEN_TWO_LAYER, atol=1e-12)


def test_affine_input_norm_maps_unit_interval_to_grid():
    rng = np.random.default_rng(3)
    net = KanNetwork([2, 1], input_norm="affine", rng=rng)
    plain = KanNetwork([2, 1], input_norm="none", rng=np.random.default_rng(3))
    x01 = np.array([[0.0, 1.0], [0.5, 0.25]])
    mapped = 2.0 * x01 - 1.0
    assert np.allclose(net.forward_values(x01), plain.forward_values(mapped), atol=1e-15)


def test_layer_gradients_match_finite_differences():
    rng = np.random.default_rng(13)
    layer = KanLayer(3, 2, rng=rng)
    x = ag.parameter(rng.uniform(-0.8, 0.8, size=(4, 3)))  # interior points only
    w = rng.normal(size=(4, 2))
    ag.sum_all(ag.mul(layer.forward(x), ag.constant(w))).backward()

    def loss():
        with ag.no_grad():
            return float(np.sum(layer.forward(x).values * w))

    params = [x, layer.base_weight, layer.spline_coeffs]
    fd = finite_diff(loss, params)
    assert max_rel_error([p.grad for p in params], fd) <= 1e-4


def test_edge_importance_zero_edge():
    layer = KanLayer(2, 2, rng=np.random.default_rng(0))
    layer.base_weight.values[0, 1] = 0.0
    layer.spline_coeffs.values[0, 1, :] = 0.0
    imp = edge_importance(layer, np.random.default_rng(1).uniform(-1, 1, (6, 2)))
    assert imp[0, 1] == 0.0
    assert np.all(imp >= 0.0)


def test_edge_importance_is_homogeneous():
    rng = np.random.default_rng(8)
    layer = KanLayer(2, 2, rng=rng)
    sample = rng.uniform(-1, 1, (9, 2))
    before = edge_importance(layer, sample)[1, 0]
    layer.base_weight.values[1, 0] *= 2.0
    layer.spline_coeffs.values[1, 0, :] *= 2.0
    after = edge_importance(layer, sample)[1, 0]
    assert after == pytest.approx(2.0 * before, rel=1e-12)


def test_edge_importance_matches_bruteforce():
    rng = np.random.default_rng(15)
    layer = KanLayer(3, 2, rng=rng)
    sample = rng.uniform(-1, 1, (11, 3))
    imp = edge_importance(layer, sample)
    for q in range(2):
        for p in range(3):
            acc = 0.0
            for b in range(11):
                v = sample[b, p]
                bases = naive_bspline_basis(v, layer.grid)
                phi = (
                    layer.base_weight.values[q, p] * v / (1.0 + np.exp(-v))
                    + bases @ layer.spline_coeffs.values[q, p]
                )
                acc += abs(phi)
            assert imp[q, p] == pytest.approx(acc / 11, rel=1e-10)


def test_edge_importance_empty_sample_rejected():
    layer = KanLayer(2, 2, rng=np.random.default_rng(0))
    with pytest.raises(ContractError):
        edge_importance(layer, np.zeros((0, 2)))


def test_prune_threshold_zero_is_identity():
    rng = np.random.default_rng(30)
    net = KanNetwork([3, 4, 2], rng=rng)
    sample = rng.uniform(-1, 1, (16, 3))
    result = prune(net, sample, 0.0)
    assert result.kept_per_layer == [(12, 12), (8, 8)]
    x = rng.uniform(-1, 1, (5, 3))
    assert np.array_equal(result.network.forward_values(x), net.forward_values(x))


def test_prune_above_one_keeps_only_strongest_edge():
    rng = np.random.default_rng(31)
    net = KanNetwork([3, 2], rng=rng)
    sample = rng.uniform(-1, 1, (16, 3))
    result = prune(net, sample, 1.0 + 1e-9)
    kept, total = result.kept_per_layer[0]
    assert total == 6
    assert kept == 1  # no exact importance ties in a random layer
    imp = edge_importance(net.layers[0], sample)
    q, p = np.unravel_index(np.argmax(imp), imp.shape)
    assert result.network.layers[0].spline_coeffs.values[q, p, 0] != 0.0


def test_prune_negative_threshold_rejected():
    net = KanNetwork([2, 1], rng=np.random.default_rng(0))
    with pytest.raises(ConfigError):
        prune(net, np.zeros((1, 2)), -0.1)


def test_bspline_basis_x_gradient():
    rng = np.random.default_rng(99)
    grid = SplineGrid()
    x = ag.parameter(rng.uniform(-0.9, 0.9, size=(3, 2)))
    w = rng.normal(size=(3, 2, grid.n_bases))
    ag.sum_all(ag.mul(bspline_basis(x, grid), ag.constant(w))).backward()

    def loss():
        return float(np.sum(basis_values(x.values, grid) * w))

    fd = finite_diff(loss, [x])
    assert max_rel_error([x.grad], fd) <= 1e-4
