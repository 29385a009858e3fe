"""Vehicle, wheel-rail interface and the two co-simulation drivers.

Sign convention: every vertical coordinate (rail deflection ``u``, profile dip
``r``, wheel and body displacement ``z``) is positive downwards.  Penetration
is therefore ``z_w - (u + r)`` and the contact force is compressive-positive.

``run_standard`` couples the vehicle to a Newmark track solver through a
transport, exchanging one force and one displacement per step at a common
time step.  ``run_new`` embeds the explicit track solver in the vehicle loop
at the mass-scaled stable step, with no exchange layer at all.
"""

from __future__ import annotations

import os
import shutil
import tempfile
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DivergenceError, TransportError
from .explicit import ExplicitIntegrator, StateVector
from .implicit import NewmarkConfig, NewmarkSolver, static_solve
from .model import TrackModel
from .timestep import DEFAULT_CFL, MassScalingReport, mass_scale
from .traces import Trace

GRAVITY = 9.81
STANDARD_DT = 1e-5  # 0.01 ms


# --------------------------------------------------------------------------
# Hermite interface
# --------------------------------------------------------------------------


def hermite_weights(xi: float, L: float) -> np.ndarray:
    """Cubic Hermite (Euler-Bernoulli) shape functions ``(N1, N2, N3, N4)``."""
    if not 0.0 <= xi <= 1.0:
        raise ValueError(f"xi = {xi} outside [0, 1]")
    if not L > 0:
        raise ValueError("element length must be > 0")
    xi2 = xi * xi
    xi3 = xi2 * xi
    return np.array(
        [
            1.0 - 3.0 * xi2 + 2.0 * xi3,
            L * (xi - 2.0 * xi2 + xi3),
            3.0 * xi2 - 2.0 * xi3,
            L * (xi3 - xi2),
        ]
    )


class WheelRailInterface:
    """Maps a point on the rail line to retained dofs and back.

    Elements whose end nodes lack a rotation dof fall back to linear
    interpolation of the two translations.
    """

    def __init__(self, model: TrackModel):
        self.model = model
        self.line = model.rail_line
        self.maps = model.element_load_maps
        has_theta = model.rail_node_dofs[:, 1] >= 0
        self.hermite = has_theta[:-1] & has_theta[1:]

    def shape(self, e: int, xi: float) -> np.ndarray:
        if self.hermite[e]:
            return hermite_weights(xi, self.line.lengths[e])
        return np.array([1.0 - xi, 0.0, xi, 0.0])

    def pattern(self, s: float) -> tuple[np.ndarray, np.ndarray]:
        """``(cols, weights)`` such that a unit load at ``s`` equals ``weights`` on ``cols``."""
        e, xi = self.line.locate(s)
        cols, P = self.maps[e]
        return cols, self.shape(e, xi) @ P

    def load(self, force: float, s: float) -> np.ndarray:
        cols, w = self.pattern(s)
        f = np.zeros(self.model.n)
        f[cols] = force * w
        return f

    def displacement(self, x: np.ndarray, s: float) -> float:
        cols, w = self.pattern(s)
        return float(w @ x[cols])


def distribute_force(force: float, s_contact: float, model: TrackModel) -> np.ndarray:
    """Nodal force vector (retained numbering) equivalent to a point load at ``s_contact``."""
    return WheelRailInterface(model).load(force, s_contact)


def displacement_under_wheel(x: np.ndarray, s_contact: float, model: TrackModel) -> float:
    """Rail deflection at ``s_contact`` interpolated with the same shape functions."""
    return WheelRailInterface(model).displacement(np.asarray(x, dtype=float), s_contact)


# --------------------------------------------------------------------------
# Contact and vehicle
# --------------------------------------------------------------------------


def contact_force(z_w: float, u: float, r: float, C_H: float) -> float:
    """Hertzian normal force ``C_H * delta^1.5`` with ``delta = z_w - (u + r)``; zero without contact."""
    delta = z_w - (u + r)
    if delta <= 0.0:
        return 0.0
    return C_H * delta * np.sqrt(delta)


@dataclass(frozen=True)
class RailProfile:
    """Piecewise-linear vertical rail deviation (positive = dip), constant beyond the knots."""

    s: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.s, dtype=float)
        r = np.asarray(self.r, dtype=float)
        if s.ndim != 1 or s.shape != r.shape or len(s) < 1:
            raise ValueError("profile needs matching 1-D knot arrays")
        if np.any(np.diff(s) <= 0):
            raise ValueError("profile knots must be strictly increasing in s")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "r", r)

    @classmethod
    def flat(cls) -> "RailProfile":
        return cls(np.array([0.0]), np.array([0.0]))

    @classmethod
    def dip(cls, center: float, depth: float, length_in: float, length_out: float) -> "RailProfile":
        """V-shaped dip: a ramp down over ``length_in`` then back up over ``length_out``."""
        return cls(
            np.array([center - length_in, center, center + length_out]),
            np.array([0.0, depth, 0.0]),
        )

    @classmethod
    def from_csv(cls, path) -> "RailProfile":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1])

    def to_csv(self, path) -> None:
        with Path(path).open("w") as fh:
            fh.write("s,r\n")
            for s, r in zip(self.s, self.r):
                fh.write(f"{s:.17g},{r:.17g}\n")

    def __call__(self, s: float) -> float:
        return float(np.interp(s, self.s, self.r))


@dataclass(frozen=True)
class VehicleModel:
    """Two-dof vertical quarter vehicle.

    ``rigid_link`` locks the suspension so that body and wheel move as one
    mass ``m_s + m_w``.
    """

    m_s: float
    m_w: float
    k_p: float
    c_p: float
    C_H: float
    V: float
    gravity: float = GRAVITY
    rigid_link: bool = False

    def __post_init__(self):
        for name in ("m_s", "m_w", "k_p", "C_H", "V"):
            if not getattr(self, name) > 0:
                raise ValueError(f"vehicle.{name} must be > 0")
        if self.c_p < 0:
            raise ValueError("vehicle.c_p must be >= 0")

    @property
    def static_load(self) -> float:
        """Static wheel load W = (m_s + m_w) g."""
        return (self.m_s + self.m_w) * self.gravity

    def static_state(self, s0: float, u: float = 0.0, r: float = 0.0) -> "VehicleState":
        """Equilibrium position on a rail at deflection ``u`` with profile ``r``."""
        delta = (self.static_load / self.C_H) ** (2.0 / 3.0)
        z_w = u + r + delta
        z_s = z_w if self.rigid_link else z_w + self.m_s * self.gravity / self.k_p
        return VehicleState(z_s, 0.0, z_w, 0.0, s0)


@dataclass
class VehicleState:
    z_s: float
    v_s: float
    z_w: float
    v_w: float
    s: float


def vehicle_step(vehicle: VehicleModel, state: VehicleState, contact: float, dt: float) -> VehicleState:
    """Semi-implicit Euler step of the quarter vehicle under a wheel-rail force ``contact``."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    g = vehicle.gravity
    if vehicle.rigid_link:
        m = vehicle.m_s + vehicle.m_w
        a = g - contact / m
        v = state.v_w + dt * a
        z = state.z_w + dt * v
        new = VehicleState(z, v, z, v, state.s + vehicle.V * dt)
    else:
        susp = vehicle.k_p * (state.z_s - state.z_w) + vehicle.c_p * (state.v_s - state.v_w)
        a_s = g - susp / vehicle.m_s
        a_w = g + (susp - contact) / vehicle.m_w
        v_s = state.v_s + dt * a_s
        v_w = state.v_w + dt * a_w
        new = VehicleState(state.z_s + dt * v_s, v_s, state.z_w + dt * v_w, v_w, state.s + vehicle.V * dt)
    if not (np.isfinite(new.z_s) and np.isfinite(new.z_w)):
        raise DivergenceError(0, "vehicle state became non-finite")
    return new


# --------------------------------------------------------------------------
# Transports
# --------------------------------------------------------------------------


class InProcessTransport:
    """Hands values over directly."""

    name = "in_process"

    def __init__(self):
        self._box: dict[tuple[str, int], float] = {}

    def send(self, kind: str, step: int, value: float) -> None:
        self._box[(kind, step)] = value

    def receive(self, kind: str, step: int) -> float:
        try:
            return self._box.pop((kind, step))
        except KeyError:
            raise TransportError(f"no {kind} value for step {step}") from None

    def close(self) -> None:
        self._box.clear()


class FileTransport:
    """Exchanges one value per file, ``<kind>_<step>.txt``, in a scratch directory.

    Writers go through a temporary name and an atomic rename; readers wait for
    the final name to appear.  ``repr`` formatting keeps the round trip exact.
    """

    name = "file_exchange"

    def __init__(self, directory=None, keep_files: bool = False, timeout: float = 10.0):
        self._own = directory is None
        self.directory = Path(tempfile.mkdtemp(prefix="trackcosim_xchg_") if directory is None else directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.keep_files = keep_files
        self.timeout = timeout

    def send(self, kind: str, step: int, value: float) -> None:
        final = self.directory / f"{kind}_{step}.txt"
        tmp = self.directory / f".{kind}_{step}.tmp"
        try:
            with open(tmp, "w") as fh:
                fh.write(repr(float(value)) + "\n")
            os.replace(tmp, final)
        except OSError as exc:
            raise TransportError(f"could not write {final}: {exc}") from exc

    def receive(self, kind: str, step: int) -> float:
        path = self.directory / f"{kind}_{step}.txt"
        deadline = time.monotonic() + self.timeout
        while not path.exists():
            if time.monotonic() > deadline:
                raise TransportError(f"timed out waiting for {path}")
            time.sleep(1e-4)
        try:
            with open(path) as fh:
                value = float(fh.read())
            if not self.keep_files:
                os.unlink(path)
        except (OSError, ValueError) as exc:
            raise TransportError(f"could not read {path}: {exc}") from exc
        return value

    def close(self) -> None:
        if self._own and not self.keep_files:
            shutil.rmtree(self.directory, ignore_errors=True)


def make_transport(name: str, scratch_dir=None):
    if name == "in_process":
        return InProcessTransport()
    if name == "file_exchange":
        return FileTransport(scratch_dir)
    raise ValueError(f"unknown transport {name!r}; expected 'in_process' or 'file_exchange'")


# --------------------------------------------------------------------------
# Drivers
# --------------------------------------------------------------------------


@dataclass
class CoSimRun:
    scenario: str
    approach: str
    transport: str
    dt_vehicle: float
    dt_track: float
    trace: Trace
    timings: dict[str, float] = field(default_factory=dict)
    mass_scaling: MassScalingReport | None = None
    final_track_state: StateVector | None = None

    def __post_init__(self):
        if self.approach == "standard" and self.dt_vehicle != self.dt_track:
            raise ValueError("standard approach requires a common time step")


class _Recorder:
    def __init__(self, n_samples: int, probes: Sequence[int]):
        self.buf = np.zeros((n_samples, 4 + len(probes)))
        self.probes = list(probes)
        self.k = 0

    def __call__(self, t, s, force, u, x):
        row = self.buf[self.k]
        row[0], row[1], row[2], row[3] = t, s, force, u
        if self.probes:
            row[4:] = x[self.probes]
        self.k += 1

    def trace(self, meta: dict) -> Trace:
        b = self.buf[: self.k]
        return Trace(
            b[:, 0].copy(), b[:, 1].copy(), b[:, 2].copy(), b[:, 3].copy(),
            {f"x_{p}": b[:, 4 + i].copy() for i, p in enumerate(self.probes)},
            meta,
        )


def _n_steps(t_end: float, dt: float) -> int:
    return int(round(t_end / dt))


def _check_span(model: TrackModel, vehicle: VehicleModel, s0: float, t_end: float) -> None:
    line = model.rail_line
    if not (line.s_min <= s0 and s0 + vehicle.V * t_end <= line.s_max):
        raise ValueError(
            f"wheel path [{s0}, {s0 + vehicle.V * t_end}] m leaves the rail line [{line.s_min}, {line.s_max}] m"
        )


def _initial_state(
    vehicle: VehicleModel, model: TrackModel, profile: RailProfile, wri: WheelRailInterface, s0: float, preload: bool
) -> tuple[StateVector, VehicleState, float]:
    """Track and vehicle at rest, optionally with the track already deflected under the static wheel load."""
    track = StateVector.zeros(model.n)
    u = 0.0
    if preload:
        track.x[:] = static_solve(model, wri.load(vehicle.static_load, s0))
        u = wri.displacement(track.x, s0)
    return track, vehicle.static_state(s0, u, profile(s0)), u


def run_standard(
    vehicle: VehicleModel,
    model: TrackModel,
    profile: RailProfile,
    transport="in_process",
    dt: float = STANDARD_DT,
    t_end: float = 0.1,
    s0: float | None = None,
    output_stride: int = 1,
    probes: Sequence[int] = (),
    scratch_dir=None,
    newmark: NewmarkConfig | None = None,
    scenario: str = "",
    preload: bool = True,
) -> CoSimRun:
    """Staggered co-simulation with a Newmark track solver at the vehicle's step.

    Per step the vehicle evaluates the contact force, the force crosses the
    transport, the track advances one Newmark step with it, and the rail
    deflection under the wheel crosses back for the next contact evaluation.
    With ``preload`` the run starts from the static deflection under ``W``.
    """
    s0 = model.rail_line.s_min if s0 is None else s0
    _check_span(model, vehicle, s0, t_end)
    n_steps = _n_steps(t_end, dt)
    config = newmark or NewmarkConfig(dt=dt)
    if config.dt != dt:
        config = replace(config, dt=dt)

    own_transport = isinstance(transport, str)
    link = make_transport(transport, scratch_dir) if own_transport else transport
    wri = WheelRailInterface(model)
    solver = NewmarkSolver(model, config)
    track, veh, u = _initial_state(vehicle, model, profile, wri, s0, preload)
    track.a[:] = solver.initial_acceleration(track, wri.load(contact_force(veh.z_w, u, profile(s0), vehicle.C_H), s0))
    rec = _Recorder(n_steps // output_stride + 1, probes)
    t_vehicle = t_exchange = t_track = 0.0
    clock = time.perf_counter

    t_start = clock()
    try:
        for n in range(n_steps + 1):
            t = n * dt
            c0 = clock()
            force = contact_force(veh.z_w, u, profile(veh.s), vehicle.C_H)
            c1 = clock()
            if n % output_stride == 0:
                rec(t, veh.s, force, u, track.x)
            if n == n_steps:
                break
            link.send("force", n, force)
            f_track = link.receive("force", n)
            c2 = clock()
            s_next = veh.s + vehicle.V * dt
            track = solver.step(track, wri.load(f_track, s_next))
            u_new = wri.displacement(track.x, s_next)
            c3 = clock()
            link.send("disp", n, u_new)
            u = link.receive("disp", n)
            c4 = clock()
            veh = vehicle_step(vehicle, veh, force, dt)
            c5 = clock()
            t_vehicle += (c1 - c0) + (c5 - c4)
            t_exchange += (c2 - c1) + (c4 - c3)
            t_track += c3 - c2
    finally:
        if own_transport:
            link.close()
    wall = clock() - t_start

    timings = {"total": wall, "vehicle": t_vehicle, "exchange": t_exchange, "track": t_track}
    meta = {
        "approach": "standard",
        "transport": link.name,
        "dt": dt,
        "n_steps": n_steps,
        "wall_clock": wall,
        "static_load": vehicle.static_load,
        "scenario": scenario,
    }
    return CoSimRun(scenario, "standard", link.name, dt, dt, rec.trace(meta), timings, None, track)


def run_new(
    vehicle: VehicleModel,
    model: TrackModel,
    profile: RailProfile,
    m_c: float,
    t_end: float = 0.1,
    s0: float | None = None,
    output_stride: int = 1,
    probes: Sequence[int] = (),
    cfl_constant: float = DEFAULT_CFL,
    dt: float | None = None,
    scheme: str = "semi_implicit",
    rotations: bool = True,
    scenario: str = "",
    preload: bool = True,
) -> CoSimRun:
    """Single time loop with the explicit track solver embedded in the vehicle loop.

    The model is mass-scaled with cap ``m_c`` and integrated at the achieved
    stable step (or at ``dt`` if given and not larger).
    """
    s0 = model.rail_line.s_min if s0 is None else s0
    _check_span(model, vehicle, s0, t_end)
    scaled, report = mass_scale(model, m_c, cfl_constant=cfl_constant, rotations=rotations)
    if dt is None:
        dt = report.achieved_dt
    elif dt > report.achieved_dt * (1 + 1e-12):
        raise ValueError(f"dt = {dt} exceeds the stable step {report.achieved_dt}")
    n_steps = _n_steps(t_end, dt)

    wri = WheelRailInterface(scaled)
    integ = ExplicitIntegrator(scaled, dt, scheme)
    track, veh, _ = _initial_state(vehicle, scaled, profile, wri, s0, preload)
    rec = _Recorder(n_steps // output_stride + 1, probes)
    f_ext = np.zeros(scaled.n)
    t_vehicle = t_track = 0.0
    clock = time.perf_counter

    t_start = clock()
    for n in range(n_steps + 1):
        t = n * dt
        c0 = clock()
        cols, w = wri.pattern(veh.s)
        u = float(w @ track.x[cols])
        force = contact_force(veh.z_w, u, profile(veh.s), vehicle.C_H)
        if n % output_stride == 0:
            rec(t, veh.s, force, u, track.x)
        if n == n_steps:
            break
        c1 = clock()
        f_ext[cols] = force * w
        integ.advance(track, f_ext)
        f_ext[cols] = 0.0
        c2 = clock()
        veh = vehicle_step(vehicle, veh, force, dt)
        c3 = clock()
        t_vehicle += (c1 - c0) + (c3 - c2)
        t_track += c2 - c1
    wall = clock() - t_start

    timings = {"total": wall, "vehicle": t_vehicle, "exchange": 0.0, "track": t_track}
    meta = {
        "approach": "new",
        "transport": "none",
        "dt": dt,
        "n_steps": n_steps,
        "wall_clock": wall,
        "static_load": vehicle.static_load,
        "m_c": float(m_c),
        "base_dt": report.base_dt,
        "scenario": scenario,
    }
    return CoSimRun(scenario, "new", "none", dt, dt, rec.trace(meta), timings, report, track)
