"""Scenario execution, trace comparison and mass-scaling sweeps."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import Scenario
from .coupling import CoSimRun, run_new, run_standard
from .errors import DivergenceError
from .model import TrackModel, build_track_model, load_model_dir, read_supports
from .timestep import mass_scale
from .traces import Trace

DEFAULT_PEAK_FACTOR = 1.2
DEFAULT_PEAK_WINDOW = 5e-3  # s


@dataclass
class ComparisonMetrics:
    """Agreement between a candidate trace and a reference trace.

    ``max_rel_disp_dev`` is normalized by ``max|u_ref|`` over the common
    window, not pointwise.  ``cpu_ratio`` is ``None`` when either trace lacks
    a recorded wall-clock time.
    """

    max_rel_disp_dev: float
    peak_forces: list[tuple[float, float, float]]
    peak_forces_ref: list[tuple[float, float, float]]
    cpu_ratio: float | None
    dt_used: float
    peak_force_dev: float | None = None
    window: tuple[float, float] = (0.0, 0.0)

    def as_dict(self) -> dict:
        return {
            "max_rel_disp_dev": self.max_rel_disp_dev,
            "max_rel_disp_dev_percent": 100.0 * self.max_rel_disp_dev,
            "peak_force_dev": self.peak_force_dev,
            "cpu_ratio": self.cpu_ratio,
            "dt_used": self.dt_used,
            "window": list(self.window),
            "peak_forces": [list(p) for p in self.peak_forces],
            "peak_forces_ref": [list(p) for p in self.peak_forces_ref],
        }


def detect_peaks(
    t: np.ndarray,
    F: np.ndarray,
    threshold: float,
    window: float = DEFAULT_PEAK_WINDOW,
) -> np.ndarray:
    """Indices of strict local maxima of ``F`` above ``threshold``.

    Candidates closer than ``window`` in time to a higher candidate are
    dropped (ties keep the earlier one).  The result is sorted by time.
    """
    t = np.asarray(t, dtype=float)
    F = np.asarray(F, dtype=float)
    if len(F) < 3:
        return np.zeros(0, dtype=int)
    inner = np.flatnonzero((F[1:-1] > F[:-2]) & (F[1:-1] > F[2:]) & (F[1:-1] > threshold)) + 1
    order = inner[np.lexsort((t[inner], -F[inner]))]
    kept: list[int] = []
    for i in order:
        if all(abs(t[i] - t[j]) >= window for j in kept):
            kept.append(int(i))
    return np.array(sorted(kept), dtype=int)


def _grid_step(t: np.ndarray) -> float:
    return float(np.median(np.diff(t))) if len(t) > 1 else math.inf


def _static_load(trace: Trace, trace_ref: Trace) -> float | None:
    for tr in (trace_ref, trace):
        if "static_load" in tr.meta:
            return float(tr.meta["static_load"])
    return None


def compare_traces(
    trace: Trace,
    trace_ref: Trace,
    threshold: float | None = None,
    window: float = DEFAULT_PEAK_WINDOW,
    static_load: float | None = None,
) -> ComparisonMetrics:
    """Compare ``trace`` against ``trace_ref`` on their common time window.

    Both displacement histories are linearly interpolated onto the coarser of
    the two time grids.  The peak threshold defaults to 1.2 times the static
    wheel load, taken from ``static_load`` or from the trace metadata.
    """
    if len(trace) == 0 or len(trace_ref) == 0:
        raise ValueError("cannot compare empty traces")
    t0 = max(trace.t[0], trace_ref.t[0])
    t1 = min(trace.t[-1], trace_ref.t[-1])
    if t1 < t0 or (t1 == t0 and (len(trace) > 1 or len(trace_ref) > 1)):
        raise ValueError(
            f"traces do not overlap: [{trace.t[0]}, {trace.t[-1]}] vs [{trace_ref.t[0]}, {trace_ref.t[-1]}]"
        )
    coarse = trace if _grid_step(trace.t) >= _grid_step(trace_ref.t) else trace_ref
    grid = coarse.t[(coarse.t >= t0) & (coarse.t <= t1)]
    u = np.interp(grid, trace.t, trace.u_under_wheel)
    u_ref = np.interp(grid, trace_ref.t, trace_ref.u_under_wheel)
    diff = float(np.max(np.abs(u - u_ref)))
    scale = float(np.max(np.abs(u_ref)))
    if scale > 0:
        dev = diff / scale
    else:
        dev = 0.0 if diff == 0 else math.inf

    if threshold is None:
        W = static_load if static_load is not None else _static_load(trace, trace_ref)
        if W is None:
            raise ValueError("peak threshold needs the static load: pass threshold or static_load")
        threshold = DEFAULT_PEAK_FACTOR * W

    def peaks(tr: Trace) -> list[tuple[float, float, float]]:
        sel = (tr.t >= t0) & (tr.t <= t1)
        t, s, F = tr.t[sel], tr.s_wheel[sel], tr.F_contact[sel]
        return [(float(t[i]), float(s[i]), float(F[i])) for i in detect_peaks(t, F, threshold, window)]

    p, p_ref = peaks(trace), peaks(trace_ref)
    peak_dev = None
    if p_ref and p:
        devs = []
        for tr_, _, fr in p_ref:
            nearest = min(p, key=lambda q: abs(q[0] - tr_))
            devs.append(abs(nearest[2] - fr) / abs(fr) if abs(nearest[0] - tr_) < window else math.inf)
        peak_dev = max(devs)
    elif p_ref:
        peak_dev = math.inf

    wall, wall_ref = trace.meta.get("wall_clock"), trace_ref.meta.get("wall_clock")
    cpu_ratio = float(wall_ref) / float(wall) if wall and wall_ref else None
    dt_used = float(trace.meta.get("dt", _grid_step(trace.t)))
    return ComparisonMetrics(dev, p, p_ref, cpu_ratio, dt_used, peak_dev, (float(t0), float(t1)))


# scenario execution


def load_scenario_model(scenario: Scenario) -> TrackModel:
    raw = load_model_dir(scenario.model_dir)
    if scenario.supports_file is not None:
        raw = replace(raw, supports=read_supports(scenario.supports_file))
    return build_track_model(raw)


def run_scenario(
    scenario: Scenario,
    model: TrackModel | None = None,
    approach: str | None = None,
    m_c: float | None = None,
) -> CoSimRun:
    """Run one scenario with the approach and cap it names (or the overrides)."""
    model = model if model is not None else load_scenario_model(scenario)
    approach = approach or scenario.approach
    profile = scenario.profile()
    if approach == "standard":
        return run_standard(
            scenario.vehicle, model, profile,
            transport=scenario.transport, dt=scenario.dt, t_end=scenario.t_end, s0=scenario.s0,
            output_stride=scenario.stride_for(scenario.dt), scratch_dir=scenario.scratch_dir,
            scenario=scenario.name,
        )
    if approach == "new":
        m_c = scenario.m_c if m_c is None else m_c
        stride = 1
        if scenario.output_interval > 0:
            stride = scenario.stride_for(mass_scale(model, m_c, cfl_constant=scenario.cfl_constant)[1].achieved_dt)
        return run_new(
            scenario.vehicle, model, profile, m_c,
            t_end=scenario.t_end, s0=scenario.s0, output_stride=stride,
            cfl_constant=scenario.cfl_constant, scheme=scenario.scheme, scenario=scenario.name,
        )
    raise ValueError(f"unknown approach {approach!r}")


# mass-scaling sweep

SWEEP_COLUMNS = ("m_c", "dt", "cpu_ratio", "max_rel_disp_dev", "peak_force_dev", "status")


@dataclass
class SweepRow:
    m_c: float
    dt: float = math.nan
    cpu_ratio: float = math.nan
    max_rel_disp_dev: float = math.nan
    peak_force_dev: float = math.nan
    status: str = "ok"

    def values(self) -> list:
        return [getattr(self, c) for c in SWEEP_COLUMNS]


@dataclass
class SweepResult:
    rows: list[SweepRow]
    reference: Trace
    deviation_monotone: bool
    notes: list[str] = field(default_factory=list)

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(SWEEP_COLUMNS)
            for row in self.rows:
                w.writerow([v if isinstance(v, str) else f"{v:.17g}" for v in row.values()])
        return path


def _sweep_member(scenario: Scenario, m_c: float, model: TrackModel | None):
    try:
        run = run_scenario(scenario, model=model, approach="new", m_c=m_c)
    except DivergenceError as exc:
        return None, f"failed: diverged at step {exc.step}"
    return run.trace, "ok"


def sweep_mass_scaling(
    scenario: Scenario,
    m_c_values: Sequence[float],
    reference: Trace | None = None,
    jobs: int = 1,
    model: TrackModel | None = None,
) -> SweepResult:
    """Run the embedded-explicit approach once per cap and compare each run to a reference.

    The reference defaults to the standard approach on the same scenario.  A
    member that diverges yields a row with status ``failed`` and NaN values.
    Rows come back sorted by ``m_c``.  With ``jobs > 1`` members run in
    separate processes, which perturbs the measured CPU ratios.
    """
    m_c_values = sorted(float(m) for m in m_c_values)
    if not m_c_values:
        raise ValueError("empty m_c list")
    model = model if model is not None else load_scenario_model(scenario)
    if reference is None:
        reference = run_scenario(scenario, model=model, approach="standard").trace

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_sweep_member, scenario, m, None) for m in m_c_values]
            outcomes = [f.result() for f in futures]
    else:
        outcomes = [_sweep_member(scenario, m, model) for m in m_c_values]

    rows = []
    for m_c, (trace, status) in zip(m_c_values, outcomes):
        if trace is None:
            rows.append(SweepRow(m_c, status=status))
            continue
        metrics = compare_traces(trace, reference, static_load=scenario.vehicle.static_load)
        rows.append(
            SweepRow(
                m_c,
                dt=metrics.dt_used,
                cpu_ratio=metrics.cpu_ratio if metrics.cpu_ratio is not None else math.nan,
                max_rel_disp_dev=metrics.max_rel_disp_dev,
                peak_force_dev=metrics.peak_force_dev if metrics.peak_force_dev is not None else math.nan,
            )
        )

    ok = [r for r in rows if r.status == "ok"]
    dts = [r.dt for r in ok]
    if any(b < a for a, b in zip(dts, dts[1:])):
        raise AssertionError(f"stable time step decreased along the m_c sweep: {dts}")
    devs = [r.max_rel_disp_dev for r in ok]
    monotone = all(b >= a for a, b in zip(devs, devs[1:]))
    notes = [] if monotone else ["displacement deviation is not monotone in m_c"]
    return SweepResult(rows, reference, monotone, notes)
