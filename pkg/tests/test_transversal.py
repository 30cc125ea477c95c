import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from cellsynth.geometry import ConvexCell, exit_spec
from cellsynth.synthesis import state_vertices
from cellsynth.transversal import (
    LinearSystem,
    ModelError,
    TransversalCoeffs,
    barrier_rows,
    coeffs_from_poles,
    companion,
    double_integrator,
    is_hurwitz,
    lie_rows,
    relative_degree,
    single_integrator,
)

from conftest import UNIT_SQUARE


def _rows(rows):
    return sorted((tuple(np.round(r.A_h, 12)), round(r.b_h, 12)) for r in rows)


class TestBarrierRows:
    def test_square_face_exit(self, square):
        si = single_integrator()
        rows = barrier_rows(square, si, exit_spec(square, ("face", 1), si))
        assert _rows(rows) == sorted([((0.0, 1.0), 0.0), ((0.0, -1.0), 1.0), ((1.0, 0.0), 0.0)])

    def test_square_goal_vertex(self, square):
        si = single_integrator()
        assert len(barrier_rows(square, si, exit_spec(square, ("point", 2), si))) == 4

    def test_double_integrator(self, square):
        di = double_integrator(v_max=1.0)
        rows = barrier_rows(square, di, exit_spec(square, ("face", 1), di))
        assert [r.source for r in rows] == ["pos"] * 3 + ["dyn"] * 4
        X = state_vertices(square, di)
        assert X.shape == (16, 4)
        for r in rows:
            assert np.all(X @ r.A_h + r.b_h >= -1e-12)
        # velocity rows never touch position
        for r in rows[3:]:
            assert np.all(r.A_h[:2] == 0)


class TestRelativeDegree:
    def test_single_integrator(self):
        assert relative_degree([1.0, 0.0], single_integrator()) == 1

    def test_double_integrator_position(self):
        assert relative_degree([1.0, 0.0, 0.0, 0.0], double_integrator()) == 2

    def test_double_integrator_velocity(self):
        assert relative_degree([0.0, 0.0, 0.0, 1.0], double_integrator()) == 1

    def test_uncontrollable_direction(self):
        sys = LinearSystem(np.zeros((2, 2)), np.array([[1.0], [0.0]]), (0, 1), np.zeros((0, 2)),
                           np.zeros(0), np.array([[1.0], [-1.0]]), np.ones(2))
        assert not sys.is_controllable()
        with pytest.raises(ModelError, match="relative degree"):
            relative_degree([0.0, 1.0], sys)


class TestCoefficients:
    def test_first_order(self):
        np.testing.assert_allclose(coeffs_from_poles([0.5]).c, [0.5])

    def test_double_pole(self):
        np.testing.assert_allclose(coeffs_from_poles([1, 1]).c, [1.0, 2.0])

    def test_direct_complex_pair_accepted(self):
        c = TransversalCoeffs(np.array([1.0, 1.0]))
        assert c.r == 2
        assert np.all(np.roots([1, 1, 1]).real < 0)

    @pytest.mark.parametrize("poles", [[0.0], [1.0, -2.0]])
    def test_nonpositive_pole(self, poles):
        with pytest.raises(ModelError, match="positive"):
            coeffs_from_poles(poles)

    @pytest.mark.parametrize("c", [[-1.0], [1.0, -1.0], [0.0, 1.0]])
    def test_non_hurwitz_rejected(self, c):
        assert not is_hurwitz(c)
        with pytest.raises(ModelError):
            TransversalCoeffs(np.array(c))

    def test_companion_layout(self):
        np.testing.assert_array_equal(companion([2.0, 3.0]), [[0, 1], [-2, -3]])

    @given(st.lists(st.floats(0.1, 5.0), min_size=1, max_size=4))
    @settings(max_examples=60, deadline=None)
    def test_poles_are_placed(self, poles):
        tc = coeffs_from_poles(poles)
        char = np.poly(companion(tc.c))
        np.testing.assert_allclose(char, np.poly([-p for p in poles]), rtol=1e-9, atol=1e-9)
        assert np.all(np.linalg.eigvals(companion(tc.c)).real < 0)


class TestLinearSystem:
    def test_presets(self):
        si, di = single_integrator(2, 3.0), double_integrator(2, 1.0, 2.0)
        assert (si.n_x, si.n_u, si.d) == (2, 2, 2)
        assert (di.n_x, di.n_u, di.d, di.dyn_idx) == (4, 2, 2, (2, 3))
        assert si.is_controllable() and di.is_controllable()
        np.testing.assert_array_equal(di.P_pos @ di.P_dyn.T, np.zeros((2, 2)))
        np.testing.assert_array_equal(di.P_pos.T @ di.P_pos + di.P_dyn.T @ di.P_dyn, np.eye(4))

    def test_dyn_bounds_must_skip_position(self):
        with pytest.raises(ModelError, match="position"):
            LinearSystem(np.zeros((2, 2)), np.eye(2), (0,), np.array([[1.0, 0.0]]), [1.0],
                         np.eye(2), np.ones(2))

    def test_input_bounds_contain_zero(self):
        with pytest.raises(ModelError, match="contain 0"):
            LinearSystem(np.zeros((2, 2)), np.eye(2), (0, 1), np.zeros((0, 2)), np.zeros(0),
                         np.eye(2), [-1.0, 1.0])

    def test_dict_roundtrip(self):
        di = double_integrator(2, 1.5, 2.5)
        back = LinearSystem.from_dict(di.to_dict())
        for name in ("A", "B", "A_dyn", "b_dyn", "A_u", "b_u"):
            np.testing.assert_array_equal(getattr(back, name), getattr(di, name))
        assert back.pos_idx == di.pos_idx


@given(st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_lie_rows_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    n = 4
    A = rng.normal(scale=0.5, size=(n, n))
    x0 = rng.normal(size=n)
    row = rng.normal(size=n)
    b_h = rng.normal()
    L = lie_rows(row, _Drift(A), 2)
    step = 1e-4
    ts = np.array([-step, 0.0, step])
    xs = np.array([expm(A * t) @ x0 for t in ts])
    h = xs @ row + b_h
    fd1 = (h[2] - h[0]) / (2 * step)
    fd2 = (h[2] - 2 * h[1] + h[0]) / step**2
    an1, an2 = L[1] @ x0, L[2] @ x0
    assert abs(fd1 - an1) <= 1e-5 * max(1.0, abs(an1))
    # second differences lose about half the digits to cancellation
    assert abs(fd2 - an2) <= 1e-4 * max(1.0, abs(an2))
    assert L[0] @ x0 + b_h == pytest.approx(h[1])


class _Drift:
    def __init__(self, A):
        self.A = A
