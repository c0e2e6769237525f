import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from netcca import NetworkSCCA, NetworkSCCACV
from netcca.linalg import standardize
from netcca.scca import FitConfig, fit
from netcca.simulation import ScenarioSpec, build_scenario, sample_mvn


@pytest.fixture(scope="module")
def problem():
    truth = build_scenario(ScenarioSpec(2, 40, 40, 60))
    X, Y = sample_mvn(truth, 60, 1)
    return truth, X, Y


def test_params_and_clone(problem):
    truth, _, _ = problem
    est = NetworkSCCA(tau_x=0.2, graph_x=truth.graph_x)
    params = est.get_params()
    assert params["tau_x"] == 0.2 and params["graph_x"] is truth.graph_x
    copy = clone(est)
    assert copy.get_params()["tau_x"] == 0.2
    assert clone(NetworkSCCACV(folds=3)).folds == 3


def test_matches_functional_fit(problem):
    truth, X, Y = problem
    est = NetworkSCCA(tau_x=0.1, tau_y=0.1, graph_x=truth.graph_x, graph_y=truth.graph_y).fit(X, Y)
    model = fit(standardize(X), standardize(Y), truth.graph_x, truth.graph_y, FitConfig(tau_x=0.1, tau_y=0.1))
    assert np.array_equal(est.x_weights_, model.alphas)
    assert est.n_features_in_ == 40


def test_transform(problem):
    truth, X, Y = problem
    est = NetworkSCCA(tau_x=0.1, tau_y=0.1, graph_x=truth.graph_x, graph_y=truth.graph_y)
    U, V = est.fit_transform(X, Y)
    assert U.shape == (60, 1) and V.shape == (60, 1)
    assert np.array_equal(est.transform(X), U)
    assert est.score(X, Y) == pytest.approx(np.corrcoef(U[:, 0], V[:, 0])[0, 1])
    assert est.score(X, Y) > 0.5
    with pytest.raises(ValueError):
        est.transform(X[:, :5])


def test_not_fitted(problem):
    _, X, _ = problem
    with pytest.raises(NotFittedError):
        NetworkSCCA().transform(X)


def test_row_mismatch(problem):
    _, X, Y = problem
    with pytest.raises(ValueError, match="row count mismatch"):
        NetworkSCCA().fit(X, Y[:50])


def test_cv_estimator(problem):
    truth, X, Y = problem
    est = NetworkSCCACV(graph_x=truth.graph_x, graph_y=truth.graph_y, folds=3, grid_size=3, grid_low=0.2)
    est.fit(X, Y)
    assert est.tau_ == est.cv_results_.tau_opt
    assert est.x_weights_.shape == (40, 1)
    with pytest.raises(ValueError):
        NetworkSCCACV(tuning_mode="sometimes").fit(X, Y)
