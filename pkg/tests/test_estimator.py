import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from cellsynth import scenarios
from cellsynth.estimator import CellControllerSynthesizer, LandmarkMeasurement
from cellsynth.synthesis import measurement
from cellsynth.transversal import single_integrator

Y = np.array([[0.0, 10.0, 10.0], [0.0, 0.0, 10.0]])


@pytest.fixture(scope="module")
def fitted():
    sc = scenarios.l_shape_scenario()
    return sc, CellControllerSynthesizer(sc.system, sc.c_b, sc.c_V).fit(sc.env)


@given(st.lists(st.tuples(st.floats(-50, 50), st.floats(-50, 50)), min_size=1, max_size=8))
@settings(max_examples=50, deadline=None)
def test_transform_matches_measurement(points):
    P = np.array(points)
    out = LandmarkMeasurement(Y).fit().transform(P)
    assert out.shape == (len(P), 6)
    for row, p in zip(out, P):
        np.testing.assert_allclose(row, measurement(Y, p), atol=1e-12)


def test_measurement_params_and_clone():
    m = LandmarkMeasurement(Y)
    assert m.get_params() == {"landmarks": Y}
    c = clone(m)
    np.testing.assert_array_equal(c.landmarks, Y)
    assert not hasattr(c, "landmarks_")
    np.testing.assert_array_equal(m.fit_transform(np.zeros((1, 2))), measurement(Y, [0, 0])[None])


def test_measurement_errors():
    with pytest.raises(NotFittedError):
        LandmarkMeasurement(Y).transform(np.zeros((1, 2)))
    with pytest.raises(ValueError, match="position coordinates"):
        LandmarkMeasurement(Y).fit().transform(np.zeros((1, 3)))


def test_synthesizer_params():
    sys = single_integrator(2, u_max=3.0)
    est = CellControllerSynthesizer(sys, w_b={0: 2.0}, n_jobs=2)
    params = est.get_params()
    assert params["system"] is sys and params["w_b"] == {0: 2.0} and params["n_jobs"] == 2
    est.set_params(method="highs")
    assert clone(est).method == "highs"


def test_fit_and_predict(fitted):
    sc, est = fitted
    assert sorted(est.controllers_) == list(range(8))
    assert len(est.margins()) == 8
    X = np.array([[25.0, 5.0], [5.0, 5.0], [3.0, 25.0], [40.0, 40.0]])
    U = est.predict(X)
    assert U.shape == (4, 2)
    for x, u in zip(X[:3], U[:3]):
        cid = est.active_cell(x)
        want = est.controllers_[cid].control(x, sc.env.cell(cid).landmarks, sc.system)
        np.testing.assert_array_equal(u, want)
        assert np.all(np.abs(u) <= 10.0 + 1e-9)
    assert np.all(np.isnan(U[3]))


def test_predict_on_shared_face_uses_cell_being_left(fitted):
    sc, est = fitted
    # (20, 5) lies on the face between cells 3 and 1; cell 3 exits into cell 1
    assert est.active_cell(np.array([20.0, 5.0])) == 1
    assert est.active_cell(np.array([20.5, 5.0])) == 3


def test_synthesizer_errors(fitted):
    sc, est = fitted
    with pytest.raises(NotFittedError):
        CellControllerSynthesizer(sc.system).predict(np.zeros((1, 2)))
    with pytest.raises(TypeError, match="Environment"):
        CellControllerSynthesizer(sc.system).fit(np.zeros((3, 2)))
    with pytest.raises(ValueError, match="system"):
        CellControllerSynthesizer().fit(sc.env)
    with pytest.raises(ValueError, match="state coordinates"):
        est.predict(np.zeros((1, 3)))
