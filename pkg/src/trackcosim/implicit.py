"""Newmark implicit track solver and static solver.

Gap supports make the effective matrix depend on which supports are in
contact.  Each step iterates on that status set until it stops changing; one
sparse LU factorization is cached per status set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError, DivergenceError, ModelError
from .explicit import StateVector
from .model import TrackModel


@dataclass
class NewmarkConfig:
    dt: float
    gamma: float = 0.5
    beta: float = 0.25
    max_iterations: int = 20
    residual_tol: float = 1e-3  # N

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if not 0.0 < self.beta <= 0.5:
            raise ValueError("beta must lie in (0, 0.5]")


def _support_status(model: TrackModel, x: np.ndarray) -> np.ndarray:
    dof, _, _, gap = model.support_arrays
    return (gap == 0.0) | (x[dof] >= gap)


def _support_preload(model: TrackModel, closed: np.ndarray) -> np.ndarray:
    """Constant part ``k g`` of closed gap supports, moved to the load side."""
    dof, k, _, gap = model.support_arrays
    f = np.zeros(model.n)
    np.add.at(f, dof, np.where(closed, k * gap, 0.0))
    return f


class NewmarkSolver:
    """Newmark-beta integrator over a :class:`TrackModel` (lumped mass)."""

    def __init__(self, model: TrackModel, config: NewmarkConfig):
        self.model = model
        self.config = config
        dt, g, b = config.dt, config.gamma, config.beta
        self.a0 = 1.0 / (b * dt * dt)
        self.a1 = g / (b * dt)
        self.a2 = 1.0 / (b * dt)
        self.a3 = 1.0 / (2.0 * b) - 1.0
        self.a4 = g / b - 1.0
        self.a5 = dt * (g / (2.0 * b) - 1.0)
        self.a6 = dt * (1.0 - g)
        self.a7 = g * dt
        self.M = model.lumped_mass
        self.K = model.stiffness
        self.C = model.damping
        self._cache: dict[bytes, tuple] = {}
        self.steps_taken = 0
        self.last_iterations = 0

    def _operators(self, closed: np.ndarray):
        key = np.packbits(closed).tobytes() + len(closed).to_bytes(4, "little")
        ops = self._cache.get(key)
        if ops is None:
            m = self.model
            K = self.K + m.support_stiffness(closed)
            C = self.C + m.support_damping(closed)
            K_eff = sp.csc_matrix(K + self.a1 * C + sp.diags(self.a0 * self.M))
            try:
                lu = spla.splu(K_eff)
            except RuntimeError as exc:
                raise ModelError(f"effective matrix factorization failed: {exc}") from exc
            ops = (lu, sp.csr_matrix(C), _support_preload(m, closed), sp.csr_matrix(K_eff))
            self._cache[key] = ops
        return ops

    def initial_acceleration(self, state: StateVector, force: np.ndarray | None) -> np.ndarray:
        closed = _support_status(self.model, state.x)
        K = self.K + self.model.support_stiffness(closed)
        C = self.C + self.model.support_damping(closed)
        f = np.zeros(self.model.n) if force is None else force
        return (f + _support_preload(self.model, closed) - K @ state.x - C @ state.v) / self.M

    def step(self, state: StateVector, force: np.ndarray | None) -> StateVector:
        """Advance one step; ``force`` is the external load at the end of the step."""
        x, v, a = state.x, state.v, state.a
        f = np.zeros(self.model.n) if force is None else force
        m_part = self.M * (self.a0 * x + self.a2 * v + self.a3 * a)
        c_vec = self.a1 * x + self.a4 * v + self.a5 * a

        predictor = x + self.config.dt * v + (0.5 - self.config.beta) * self.config.dt**2 * a
        closed = _support_status(self.model, predictor)
        self.steps_taken += 1
        for it in range(1, self.config.max_iterations + 1):
            lu, C, preload, K_eff = self._operators(closed)
            rhs = f + preload + m_part + C @ c_vec
            x_new = lu.solve(rhs)
            res = K_eff @ x_new - rhs
            if np.max(np.abs(res), initial=0.0) > self.config.residual_tol:
                x_new -= lu.solve(res)
            new_closed = _support_status(self.model, x_new)
            if np.array_equal(new_closed, closed):
                break
            closed = new_closed
        else:
            raise ConvergenceError(self.steps_taken, self.config.max_iterations)
        self.last_iterations = it

        if not np.all(np.isfinite(x_new)):
            raise DivergenceError(self.steps_taken)
        a_new = self.a0 * (x_new - x) - self.a2 * v - self.a3 * a
        v_new = v + self.a6 * a + self.a7 * a_new
        return StateVector(x_new, v_new, a_new, state.t + self.config.dt)


def newmark_step(state: StateVector, model: TrackModel, force, config: NewmarkConfig) -> StateVector:
    """One Newmark step from ``state`` under ``force`` (vector or ``F(t)`` at ``t + dt``)."""
    f = force(state.t + config.dt) if callable(force) else force
    return NewmarkSolver(model, config).step(state, f)


def static_solve(model: TrackModel, force, max_iterations: int = 20, rtol: float = 1e-10) -> np.ndarray:
    """Solve ``K x = F`` with supports, iterating on the gap status."""
    f = np.asarray(force, dtype=float)
    closed = _support_status(model, np.zeros(model.n))
    for _ in range(max_iterations):
        K = sp.csc_matrix(model.stiffness + model.support_stiffness(closed))
        rhs = f + _support_preload(model, closed)
        try:
            lu = spla.splu(K)
        except RuntimeError as exc:
            raise ModelError(f"singular stiffness matrix: {exc}") from exc
        x = lu.solve(rhs)
        res = K @ x - rhs
        if np.linalg.norm(res) > rtol * max(np.linalg.norm(rhs), 1e-300) and np.linalg.norm(rhs) > 0:
            # one step of iterative refinement
            x = x - lu.solve(res)
        if not np.all(np.isfinite(x)):
            raise ModelError("singular stiffness matrix")
        new_closed = _support_status(model, x)
        if np.array_equal(new_closed, closed):
            return x
        closed = new_closed
    raise ConvergenceError(0, max_iterations)
