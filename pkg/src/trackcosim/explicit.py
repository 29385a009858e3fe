"""Explicit Euler track solver with an element-loop right-hand side.

Two update orders are available:

``semi_implicit`` (default)
    a = M_l^-1 (F(t) - f_int(x, v)); v += dt a; x += dt v.
    Symplectic Euler; stable under the diagonal CFL estimate.

``literal_paper``
    x += dt v_old; v = v_old + dt a_old; a = M_l^-1 (F(t_old) - f_int(x_old, v_old)).
    Every right-hand side uses quantities from the previous step.  Kept for
    comparison only; it is not stable for undamped modes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DivergenceError
from .model import TrackModel

SCHEMES = ("semi_implicit", "literal_paper")


@dataclass
class StateVector:
    x: np.ndarray
    v: np.ndarray
    a: np.ndarray
    t: float = 0.0

    @classmethod
    def zeros(cls, n: int) -> "StateVector":
        return cls(np.zeros(n), np.zeros(n), np.zeros(n), 0.0)

    def copy(self) -> "StateVector":
        return StateVector(self.x.copy(), self.v.copy(), self.a.copy(), self.t)


@dataclass
class ExplicitConfig:
    dt: float
    n_steps: int = 0
    output_stride: int = 1
    scheme: str = "semi_implicit"
    displacement_scale: float = 1.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if self.output_stride < 1:
            raise ValueError("output_stride must be >= 1")
        if self.n_steps < 0:
            raise ValueError("n_steps must be >= 0")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")


class ElementLoop:
    """Vectorized element loop for ``C v + K x`` plus support forces.

    Blocked and condensed dofs are routed to a scratch slot at index ``n``
    whose contributions are discarded, so they are never accumulated.
    """

    def __init__(self, model: TrackModel):
        n = model.n
        self.n = n
        dofs = model.element_dofs.copy()
        dofs[dofs < 0] = n
        self.dofs = dofs
        self.flat_dofs = dofs.ravel()
        # [K_e | C_e] acting on [x_e ; v_e]
        self.blocks = np.concatenate([model.element_stiffness, model.element_damping], axis=2)
        self.has_extra = model.extra_stiffness.nnz > 0 or model.extra_damping.nnz > 0
        self.extra_K = model.extra_stiffness
        self.extra_C = model.extra_damping
        self._xv = np.zeros((2, n + 1))

        sdof, k, c, gap = model.support_arrays
        self.sup_dof = sdof
        self.sup_k = k
        self.sup_c = c
        self.sup_gap = gap
        self.sup_bilateral = gap == 0.0
        self.sup_unique = len(np.unique(sdof)) == len(sdof)

    def __call__(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        xv = self._xv
        xv[0, : self.n] = x
        xv[1, : self.n] = v
        packed = np.concatenate([xv[0][self.dofs], xv[1][self.dofs]], axis=1)
        fe = np.matmul(self.blocks, packed[:, :, None])[:, :, 0]
        f = np.bincount(self.flat_dofs, weights=fe.ravel(), minlength=self.n + 1)[: self.n]
        if self.has_extra:
            f += self.extra_K @ x + self.extra_C @ v
        if len(self.sup_dof):
            f_sup = self.support_forces(x, v)
            if self.sup_unique:
                f[self.sup_dof] += f_sup
            else:
                np.add.at(f, self.sup_dof, f_sup)
        return f

    def support_forces(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Gap law: 0 while w < g, else k (w - g) + c w'.  Bilateral when g == 0."""
        w = x[self.sup_dof]
        wd = v[self.sup_dof]
        force = self.sup_k * (w - self.sup_gap) + self.sup_c * wd
        closed = self.sup_bilateral | (w >= self.sup_gap)
        return np.where(closed, force, 0.0)


def internal_force(model: TrackModel, x: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``C v + K x`` evaluated element by element, plus support forces."""
    return ElementLoop(model)(np.asarray(x, dtype=float), np.asarray(v, dtype=float))


class ExplicitIntegrator:
    """Stateful stepping helper reused by :func:`run` and the co-simulation loop."""

    def __init__(self, model: TrackModel, dt: float, scheme: str = "semi_implicit", displacement_scale: float = 1.0):
        if scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {scheme!r}")
        self.model = model
        self.dt = float(dt)
        self.scheme = scheme
        self.inv_mass = 1.0 / model.lumped_mass
        self.loop = ElementLoop(model)
        self.limit = 1e6 * displacement_scale
        self.steps_taken = 0

    def advance(self, state: StateVector, force: np.ndarray | None) -> None:
        """Advance ``state`` in place by one step with external force sampled at ``state.t``."""
        dt = self.dt
        f_int = self.loop(state.x, state.v)
        rhs = -f_int if force is None else force - f_int
        if self.scheme == "semi_implicit":
            a = rhs * self.inv_mass
            state.v += dt * a
            state.x += dt * state.v
            state.a = a
        else:
            a_new = rhs * self.inv_mass
            state.x += dt * state.v
            state.v += dt * state.a
            state.a = a_new
        state.t += dt
        self.steps_taken += 1
        peak = np.max(np.abs(state.x)) if state.x.size else 0.0
        if not peak <= self.limit:
            raise DivergenceError(self.steps_taken)


def _force_at(excitation, t: float):
    if excitation is None:
        return None
    if callable(excitation):
        return excitation(t)
    return excitation


def step(state: StateVector, model: TrackModel, external_force, config: ExplicitConfig) -> StateVector:
    """One explicit step; returns a new state.

    ``external_force`` is a vector, a callable ``F(t)`` or ``None``.
    """
    integ = ExplicitIntegrator(model, config.dt, config.scheme, config.displacement_scale)
    new = state.copy()
    integ.advance(new, _force_at(external_force, state.t))
    return new


@dataclass
class ExplicitRun:
    state: StateVector
    t: np.ndarray
    probes: dict[int, np.ndarray] = field(default_factory=dict)
    channels: dict[str, np.ndarray] = field(default_factory=dict)


def run(
    model: TrackModel,
    excitation,
    config: ExplicitConfig,
    probes: Sequence[int] = (),
    channels: dict[str, Callable[[StateVector], float]] | None = None,
    initial: StateVector | None = None,
) -> ExplicitRun:
    """Integrate from rest (or ``initial``) for ``config.n_steps`` steps.

    Traces are sampled every ``output_stride`` steps, starting with the
    initial state; ``probes`` are retained dof indices whose displacement is
    recorded, ``channels`` extra named scalar functions of the state.
    """
    state = StateVector.zeros(model.n) if initial is None else initial.copy()
    channels = channels or {}
    integ = ExplicitIntegrator(model, config.dt, config.scheme, config.displacement_scale)
    probes = list(probes)
    ts, pv, cv = [], [], {name: [] for name in channels}

    def record():
        ts.append(state.t)
        pv.append(state.x[probes].copy() if probes else np.zeros(0))
        for name, fn in channels.items():
            cv[name].append(fn(state))

    if config.n_steps == 0:
        return ExplicitRun(state, np.zeros(0), {p: np.zeros(0) for p in probes}, {k: np.zeros(0) for k in channels})

    record()
    for n in range(1, config.n_steps + 1):
        integ.advance(state, _force_at(excitation, state.t))
        if n % config.output_stride == 0:
            record()

    pv = np.array(pv).reshape(len(ts), len(probes))
    return ExplicitRun(
        state,
        np.array(ts),
        {p: pv[:, i] for i, p in enumerate(probes)},
        {k: np.array(v) for k, v in cv.items()},
    )
