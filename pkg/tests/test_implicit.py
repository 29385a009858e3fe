import math

import numpy as np
import pytest

from builders import chain_raw, sdof_model, small_beam, support
from trackcosim.errors import ConvergenceError, ModelError
from trackcosim.explicit import StateVector
from trackcosim.implicit import NewmarkConfig, NewmarkSolver, newmark_step, static_solve
from trackcosim.model import build_track_model
from trackcosim.timestep import model_timestep


def gap_flip_model(k_support):
    """Unit oscillator with a gap support that closes during the first step from rest."""
    return build_track_model(chain_raw([[1.0]], [[1.0]], supports=[support(0, k_support, 0.0, 0.03)]))


def mixed_gap_beam():
    model = small_beam(6)
    dofs = [s.dof for s in model.supports]
    return model.with_gaps(dofs, 3e-4)


def center_load(model, value=8e4):
    F = np.zeros(model.n)
    F[model.rail_node_retained(3, "w")] = value
    return F


class TestNewmarkStep:
    def test_zero_in_zero_out(self):
        model = small_beam(4)
        new = newmark_step(StateVector.zeros(model.n), model, np.zeros(model.n), NewmarkConfig(dt=1e-4))
        assert not new.x.any() and not new.v.any() and not new.a.any()

    def test_step_response_period_and_amplitude(self):
        model = sdof_model()
        dt = 0.01
        solver = NewmarkSolver(model, NewmarkConfig(dt=dt))
        state = StateVector.zeros(1)
        state.a[:] = solver.initial_acceleration(state, np.ones(1))
        xs = [0.0]
        for _ in range(int(10 * 2 * math.pi / dt)):
            state = solver.step(state, np.ones(1))
            xs.append(state.x[0])
        xs = np.array(xs)
        assert xs.max() == pytest.approx(2.0, abs=1e-3)
        assert xs.min() == pytest.approx(0.0, abs=1e-3)
        # upward crossings of the mean, refined by linear interpolation
        y = xs - 1.0
        idx = np.flatnonzero((y[:-1] < 0) & (y[1:] >= 0))
        crossings = (idx + (-y[idx]) / (y[idx + 1] - y[idx])) * dt
        period = np.mean(np.diff(crossings))
        assert abs(period - 2 * math.pi) / (2 * math.pi) <= 5e-3

    def test_gap_flip_converges_quickly(self):
        model = gap_flip_model(10.0)
        solver = NewmarkSolver(model, NewmarkConfig(dt=0.1))
        F = np.array([10.0])
        state = StateVector.zeros(1)
        state.a[:] = solver.initial_acceleration(state, F)
        predictor = 0.25 * 0.1**2 * state.a[0]
        assert predictor < 0.03  # support predicted open
        new = solver.step(state, F)
        assert new.x[0] > 0.03  # but closed at the end of the step
        assert 2 <= solver.last_iterations <= 3

    def test_iteration_cap_is_reported(self):
        model = gap_flip_model(10.0)
        solver = NewmarkSolver(model, NewmarkConfig(dt=0.1, max_iterations=1))
        state = StateVector.zeros(1)
        state.a[:] = 10.0
        with pytest.raises(ConvergenceError) as info:
            solver.step(state, np.array([10.0]))
        assert info.value.step == 1 and info.value.iterations == 1

    def test_factorizations_cached_per_status(self):
        model = mixed_gap_beam()
        solver = NewmarkSolver(model, NewmarkConfig(dt=1e-4))
        F = center_load(model)
        state = StateVector.zeros(model.n)
        for _ in range(200):
            state = solver.step(state, F)
        assert 1 <= len(solver._cache) < 200

    def test_unconditionally_stable(self):
        model = small_beam(8)
        dt = 100 * model_timestep(model)
        solver = NewmarkSolver(model, NewmarkConfig(dt=dt))
        state = StateVector(np.full(model.n, 1e-3), np.zeros(model.n), np.zeros(model.n))
        state.a[:] = solver.initial_acceleration(state, None)
        peak = []
        for _ in range(2000):
            state = solver.step(state, None)
            peak.append(np.max(np.abs(state.x)))
        assert np.all(np.isfinite(peak)) and max(peak) < 1e-2

    @pytest.mark.parametrize(
        "kwargs", [{"dt": 0.0}, {"dt": 1.0, "gamma": 1.5}, {"dt": 1.0, "beta": 0.0}, {"dt": 1.0, "beta": 0.6}]
    )
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            NewmarkConfig(**kwargs)


class TestStaticSolve:
    def test_zero_load(self):
        model = small_beam(4)
        assert not static_solve(model, np.zeros(model.n)).any()

    def test_residual(self):
        model = small_beam(6)
        F = np.random.default_rng(1).normal(size=model.n) * 1e4
        x = static_solve(model, F)
        K = model.stiffness + model.support_stiffness()
        assert np.max(np.abs(K @ x - F)) <= 1e-10 * np.max(np.abs(F))

    def test_zero_gap_equals_linear(self):
        model = small_beam(6)
        gapped = model.with_gaps([s.dof for s in model.supports], 0.0)
        F = center_load(model)
        assert np.array_equal(static_solve(model, F), static_solve(gapped, F))

    def test_gap_status_resolved(self):
        model = mixed_gap_beam()
        x = static_solve(model, center_load(model))
        dof, k, _, gap = model.support_arrays
        closed = x[dof] >= gap
        assert closed.any() and not closed.all()
        f_sup = np.where(closed, k * (x[dof] - gap), 0.0)
        resid = model.stiffness @ x
        resid[dof] += f_sup
        assert np.max(np.abs(resid - center_load(model))) <= 1e-6

    def test_singular(self):
        model = build_track_model(chain_raw(np.eye(2), [[1.0, -1.0], [-1.0, 1.0]]))
        with pytest.raises(ModelError):
            static_solve(model, np.array([1.0, 0.0]))
