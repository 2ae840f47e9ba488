import json
import math

import numpy as np
import pytest

from tlasso_var.errors import ParameterError
from tlasso_var.models import NetworkEdge, NetworkExport
from tlasso_var.spillover import (
    SpilloverResult,
    directional_spillovers,
    extract_network,
    generalized_impulse,
    gfevd,
)
from tlasso_var.var import ErrorDistribution, VarModel, dgp_model


def _model(scale=None, lags=None):
    scale = np.array([[1.0, 0.3], [0.3, 0.5]]) if scale is None else scale
    lags = (np.array([[0.5, 0.1], [0.2, 0.3]]),) if lags is None else lags
    return VarModel(lags, ErrorDistribution.gaussian(scale))


def _result_from_spillovers(spillovers):
    spillovers = np.asarray(spillovers, dtype=float)
    normalized = spillovers / 100.0
    return SpilloverResult(
        horizon=5,
        fevd=normalized,
        normalized=normalized,
        spillovers=spillovers,
        index=float(spillovers.sum() - np.trace(spillovers)),
        dispersion_matrix=np.eye(spillovers.shape[0]),
    )


def test_gfevd_rows_sum_to_one_and_index_is_off_diagonal_sum():
    result = gfevd(dgp_model(5, 2), horizon=5)

    np.testing.assert_allclose(result.normalized.sum(axis=1), np.ones(5))
    np.testing.assert_allclose(result.spillovers, 100 * result.normalized)
    assert result.index == pytest.approx(result.spillovers.sum() - np.trace(result.spillovers))
    assert 0.0 <= result.index <= 100.0 * 5
    assert not result.non_stationary


def test_gfevd_horizon_one_uses_impact_correlations():
    scale = np.array([[1.0, 0.3], [0.3, 0.5]])
    result = gfevd(_model(scale), horizon=1)
    # w_jk = sigma_jk^2 / (sigma_kk sigma_jj)
    expected = scale**2 / np.outer(np.diag(scale), np.diag(scale)).T
    np.testing.assert_allclose(result.fevd, expected)


def test_gfevd_diagonal_errors_without_dynamics_have_no_spillovers():
    model = _model(np.diag([1.0, 2.0]), (np.zeros((2, 2)),))
    result = gfevd(model, horizon=3)
    np.testing.assert_allclose(result.normalized, np.eye(2))
    assert result.index == pytest.approx(0.0)


def test_gfevd_uses_scale_for_infinite_variance():
    scale = np.array([[1.0, 0.3], [0.3, 0.5]])
    model = VarModel((np.zeros((2, 2)),), ErrorDistribution.student_t(1.5, scale))
    result = gfevd(model, horizon=2)
    np.testing.assert_array_equal(result.dispersion_matrix, scale)


def test_gfevd_flags_non_stationary_models(caplog):
    model = _model(np.eye(2), (1.05 * np.eye(2),))
    result = gfevd(model, horizon=4)
    assert result.non_stationary
    np.testing.assert_allclose(result.normalized.sum(axis=1), np.ones(2))
    assert "non-stationary" in caplog.text


def test_gfevd_rejects_bad_horizon():
    with pytest.raises(ParameterError):
        gfevd(_model(), horizon=0)


def test_generalized_impulse_shape_and_impact():
    scale = np.array([[1.0, 0.3], [0.3, 0.5]])
    responses = generalized_impulse(_model(scale), shock_index=0, horizon=4)
    assert responses.shape == (4, 2)
    np.testing.assert_allclose(responses[0], scale[:, 0] / math.sqrt(scale[0, 0]))
    with pytest.raises(ParameterError):
        generalized_impulse(_model(scale), shock_index=2)


def test_directional_spillovers_balance():
    result = gfevd(dgp_model(4, 2), horizon=5)
    totals = directional_spillovers(result)
    assert totals.from_others.sum() == pytest.approx(result.index)
    assert totals.to_others.sum() == pytest.approx(result.index)
    assert totals.net.sum() == pytest.approx(0.0, abs=1e-9)


def test_extract_network_keeps_ceiling_share_of_edges():
    result = gfevd(dgp_model(10, 2), horizon=5)
    network = extract_network(result, 0.15)

    assert len(network.edges) >= 14
    weights = [edge.weight for edge in network.edges]
    assert weights == sorted(weights, reverse=True)
    assert network.nodes == [f"y{i}" for i in range(1, 11)]


def test_extract_network_edge_direction_and_ties():
    spillovers = np.array(
        [
            [80.0, 10.0, 10.0],
            [5.0, 90.0, 5.0],
            [0.0, 20.0, 80.0],
        ]
    )
    network = extract_network(_result_from_spillovers(spillovers), 0.34, labels=["a", "b", "c"])

    # ceil(0.34 * 6) = 3 edges; the cutoff 10 is shared by two spillovers
    assert [(e.source, e.target, e.weight) for e in network.edges] == [
        ("b", "c", 20.0),
        ("b", "a", 10.0),
        ("c", "a", 10.0),
    ]


def test_extract_network_drops_zero_spillovers():
    network = extract_network(_result_from_spillovers(100 * np.eye(3)), 1.0)
    assert network.edges == []


def test_extract_network_validates_arguments():
    result = _result_from_spillovers(100 * np.eye(2))
    with pytest.raises(ParameterError):
        extract_network(result, 0.0)
    with pytest.raises(ParameterError):
        extract_network(result, 0.5, labels=["x", "x"])


def test_network_json_and_dot_export():
    network = NetworkExport(
        nodes=["a", "b", "c"],
        edges=[
            NetworkEdge(source="a", target="b", weight=12.3456789),
            NetworkEdge(source="c", target="a", weight=3.0),
        ],
        retention_quantile=0.15,
    )

    payload = json.loads(network.to_json())
    assert payload["nodes"] == ["a", "b", "c"]
    assert payload["edges"][0] == {"source": "a", "target": "b", "weight": 12.3457}

    dot = network.to_dot()
    assert dot.lstrip().startswith(("digraph", "strict digraph"))
    assert "penwidth" in dot
    assert "5.000" in dot


def test_network_rejects_self_loops_and_unknown_nodes():
    with pytest.raises(ValueError):
        NetworkExport(nodes=["a"], edges=[NetworkEdge(source="a", target="a", weight=1.0)], retention_quantile=0.1)
    with pytest.raises(ValueError):
        NetworkExport(nodes=["a"], edges=[NetworkEdge(source="a", target="z", weight=1.0)], retention_quantile=0.1)


def test_gfevd_two_series_hand_example():
    b1 = np.array([[0.5, 0.2], [0.0, 0.5]])
    result = gfevd(_model(np.eye(2), (b1,)), horizon=2)

    # theta_0 = I, theta_1 = B_1; row sums of squares 1.29 and 1.25
    expected = np.array([[1.25 / 1.29, 0.04 / 1.29], [0.0, 1.0]])
    np.testing.assert_allclose(result.fevd, expected, atol=1e-10)
    np.testing.assert_allclose(result.normalized, expected, atol=1e-10)
    assert result.index == pytest.approx(100 * 0.04 / 1.29, abs=1e-10)


def test_gfevd_is_invariant_to_relabeling():
    model = dgp_model(4, 2, nu=5.0)
    order = np.array([2, 0, 3, 1])
    permuted = VarModel(
        tuple(lag[np.ix_(order, order)] for lag in model.coefficients),
        ErrorDistribution.student_t(5.0, model.error.scale[np.ix_(order, order)]),
    )

    original = gfevd(model, horizon=6)
    relabeled = gfevd(permuted, horizon=6)

    np.testing.assert_allclose(relabeled.normalized, original.normalized[np.ix_(order, order)], atol=1e-12)
    assert relabeled.index == pytest.approx(original.index)


def _random_model(rng):
    dimension = int(rng.integers(2, 6))
    order = int(rng.integers(1, 3))
    lags = tuple(rng.uniform(-0.4, 0.4, size=(dimension, dimension)) / dimension for _ in range(order))
    root = rng.normal(size=(dimension, dimension))
    return VarModel(lags, ErrorDistribution.gaussian(root @ root.T + 0.1 * np.eye(dimension)))


def test_gfevd_rows_sum_to_one_on_random_models():
    rng = np.random.default_rng(17)
    for _ in range(1000):
        result = gfevd(_random_model(rng), horizon=int(rng.integers(1, 12)))
        np.testing.assert_allclose(result.normalized.sum(axis=1), 1.0, atol=1e-10)
        assert np.all(result.normalized >= 0)


def test_gfevd_denominator_is_forecast_error_variance():
    model = _random_model(np.random.default_rng(23))
    horizon = 7
    dimension = model.dimension
    result = gfevd(model, horizon=horizon)

    # h-step forecast-error covariance from powers of the companion matrix
    companion = model.companion()
    selector = np.zeros((dimension, companion.shape[0]))
    selector[:, :dimension] = np.eye(dimension)
    sigma = model.error.covariance()
    error_variance = np.zeros((dimension, dimension))
    power = np.eye(companion.shape[0])
    for _ in range(horizon):
        theta = selector @ power @ selector.T
        error_variance += theta @ sigma @ theta.T
        power = companion @ power

    for shock in range(dimension):
        responses = generalized_impulse(model, shock, horizon)
        np.testing.assert_allclose(
            result.fevd[:, shock] * np.diag(error_variance), (responses**2).sum(axis=0), rtol=1e-10
        )
