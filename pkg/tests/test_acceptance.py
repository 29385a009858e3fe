"""End-to-end acceptance checks on the shipped demo and small synthetic beams.

Each test logs a PASS/FAIL line with the measured numbers; the lines are
repeated in the terminal summary so they survive output capture.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acceptance_log import verdict
from builders import demo_model, small_beam
from trackcosim.bench import compare_traces, run_scenario, sweep_mass_scaling
from trackcosim.config import load_scenario
from trackcosim.coupling import RailProfile, hermite_weights, run_new, run_standard
from trackcosim.demo import DEMO_PARAMS, demo_dir, demo_profile, demo_raw_model, demo_vehicle
from trackcosim.errors import DivergenceError
from trackcosim.explicit import ExplicitConfig, ExplicitIntegrator, StateVector, internal_force, run
from trackcosim.implicit import NewmarkConfig, NewmarkSolver, static_solve
from trackcosim.model import Triplets, build_track_model
from trackcosim.timestep import mass_scale, model_timestep


@pytest.fixture(scope="module")
def scenario():
    return load_scenario(demo_dir() / "scenario.cfg")


@pytest.fixture(scope="module")
def demo_runs(scenario):
    model = demo_model()
    ref = run_scenario(scenario, model=model, approach="standard")
    new = run_scenario(scenario, model=model, approach="new")
    return model, ref, new


def test_1_cross_solver_agreement(demo_runs):
    _, ref, new = demo_runs
    m = compare_traces(new.trace, ref.trace)
    peaks_ok = len(m.peak_forces) > 0 and len(m.peak_forces) == len(m.peak_forces_ref)
    ok = m.max_rel_disp_dev <= 0.02 and peaks_ok and m.peak_force_dev <= 0.05
    detail = (
        f"m_c={new.trace.meta['m_c']} dt={new.dt_track:.4g}s  disp dev {100 * m.max_rel_disp_dev:.3f}% (<=2%)  "
        f"peaks {len(m.peak_forces)}/{len(m.peak_forces_ref)} force dev "
        f"{100 * (m.peak_force_dev if m.peak_force_dev is not None else math.nan):.3f}% (<=5%)"
    )
    assert verdict("1", ok, detail)


def test_2_mass_scaling_trend(scenario, demo_runs):
    model, ref, _ = demo_runs
    result = sweep_mass_scaling(scenario, [0.005, 0.01, 0.02, 0.05], reference=ref.trace, model=model)
    dts = [r.dt for r in result.rows]
    devs = [r.max_rel_disp_dev for r in result.rows]
    ok = (
        all(r.status == "ok" for r in result.rows)
        and all(b > a for a, b in zip(dts, dts[1:]))
        and all(b >= a for a, b in zip(devs, devs[1:]))
    )
    table = ", ".join(f"m_c={r.m_c:g}: dt={r.dt:.4g}s dev={100 * r.max_rel_disp_dev:.3f}%" for r in result.rows)
    assert verdict("2", ok, table)


def test_3_speedup_direction(scenario, tmp_path):
    long = scenario.with_(t_end=0.5, scratch_dir=tmp_path / "exchange")
    model = demo_model()
    new = run_scenario(long, model=model, approach="new")
    std = run_scenario(long.with_(transport="file_exchange"), model=model, approach="standard")
    n_new, n_std = new.trace.meta["n_steps"], std.trace.meta["n_steps"]
    ratio = std.timings["total"] / new.timings["total"]
    ok = n_new >= 10_000 and n_std >= 10_000 and ratio > 1.0
    detail = (
        f"new {n_new} steps {new.timings['total']:.2f}s, standard/file_exchange {n_std} steps "
        f"{std.timings['total']:.2f}s, ratio {ratio:.1f} (>1)"
    )
    assert verdict("3", ok, detail)


def test_4_cfl_boundary():
    model = demo_model()
    dt = model_timestep(model)
    F = np.zeros(model.n)
    F[model.rail_node_retained(25)] = DEMO_PARAMS["m_s"] * 9.81
    out = run(model, F, ExplicitConfig(dt=dt, n_steps=100_000, output_stride=100),
              channels={"peak": lambda s: np.max(np.abs(s.x))})
    static_peak = np.max(np.abs(static_solve(model, F)))
    bounded = bool(np.all(np.isfinite(out.channels["peak"]))) and out.channels["peak"].max() < 10 * static_peak

    undamped = demo_model(rayleigh_beta=0.0, support_c=0.0)
    dt_u = model_timestep(undamped)
    x0 = np.random.default_rng(4).normal(scale=1e-6, size=undamped.n)
    diverged_at = None
    try:
        run(undamped, None, ExplicitConfig(dt=2.5 * dt_u, n_steps=100_000),
            initial=StateVector(x0, np.zeros(undamped.n), np.zeros(undamped.n)))
    except DivergenceError as exc:
        diverged_at = exc.step
    ok = bounded and diverged_at is not None
    detail = (
        f"dt={dt:.4g}s 1e5 steps peak {out.channels['peak'].max():.3g} m (static {static_peak:.3g} m); "
        f"2.5x dt on undamped variant diverged at step {diverged_at}"
    )
    assert verdict("4", ok, detail)


def test_5_short_element_needs_mass_scaling():
    p = DEMO_PARAMS
    base = build_track_model(demo_raw_model())
    n = p["n_elements"] // 2
    lengths = [p["element_length"]] * n + [p["element_length"] / 20] + [p["element_length"]] * n
    n_nodes = len(lengths) + 1
    short_nodes = (n, n + 1)
    # the extra node sits between two sleepers and gets no support
    supported = [i not in (0, n_nodes - 1, n + 1) for i in range(n_nodes)]
    model = build_track_model(demo_raw_model(lengths=lengths, supported=supported))

    dt0 = model_timestep(base)
    dt_short = model_timestep(model)
    _, report = mass_scale(model, 5e3, dt_target=0.9 * dt0)
    short_dofs = {model.rail_node_retained(i, w) for i in short_nodes for w in ("w", "theta")} - {-1}
    touched = set(np.flatnonzero(report.added_mass).tolist())
    ok = dt0 / dt_short >= 4.0 and report.achieved_dt >= 0.8 * dt0 and touched and touched <= short_dofs
    detail = (
        f"dt {dt0:.4g}s -> {dt_short:.4g}s (x{dt0 / dt_short:.1f} reduction, >=4); scaled dt "
        f"{report.achieved_dt:.4g}s = {100 * report.achieved_dt / dt0:.0f}% of original (>=80%); "
        f"mass added on dofs {sorted(touched)} of short element {sorted(short_dofs)}"
    )
    assert verdict("5", ok, detail)


def test_6_voided_sleepers():
    model = demo_model()
    vehicle, profile = demo_vehicle(), demo_profile()
    void_nodes = [20, 21, 22, 23]
    dofs = [model.rail_node_retained(i) for i in void_nodes]
    s_lo, s_hi = (float(model.rail_line.node_s[i]) for i in (void_nodes[0], void_nodes[-1]))
    kw = dict(m_c=DEMO_PARAMS["m_c"], t_end=DEMO_PARAMS["t_end"], s0=DEMO_PARAMS["s0"])

    linear = run_new(vehicle, model, profile, **kw).trace
    closed = run_new(vehicle, model.with_gaps(dofs, 0.0), profile, **kw).trace
    voided = run_new(vehicle, model.with_gaps(dofs, 3e-3), profile, **kw).trace

    def max_down(tr):
        zone = (tr.s_wheel >= s_lo) & (tr.s_wheel <= s_hi)
        return float(np.max(tr.u_under_wheel[zone]))

    bitwise = all(np.array_equal(linear.column(c), closed.column(c)) for c in linear.columns)
    ok = max_down(voided) > max_down(closed) and bitwise
    detail = (
        f"max u over voided zone {1e3 * max_down(voided):.3f} mm (g=3mm) vs {1e3 * max_down(closed):.3f} mm (g=0); "
        f"g=0 equals linear bitwise: {bitwise}"
    )
    assert verdict("6", ok, detail)


class TestCriterion7Oracles:
    def test_a_internal_force_matches_dense_assembly(self):
        model = demo_model()
        K = (model.stiffness + model.support_stiffness()).toarray()
        C = (model.damping + model.support_damping()).toarray()
        rng = np.random.default_rng(11)
        worst = 0.0
        for _ in range(100):
            x = rng.normal(scale=1e-3, size=model.n)
            v = rng.normal(scale=1e-1, size=model.n)
            ref = C @ v + K @ x
            worst = max(worst, np.max(np.abs(internal_force(model, x, v) - ref)) / np.max(np.abs(ref)))
        assert verdict("7a", worst <= 1e-12, f"internal force vs dense C v + K x: max rel err {worst:.2e} (<=1e-12)")

    def test_b_condensation_static_exactness(self):
        # nodes 2, 4, 6 and 8 carry no mass and no support, so they are condensed
        raw = demo_raw_model(lengths=[0.6] * 10)
        full_K = raw.stiffness_matrix().toarray()
        mass = raw.mass.to_csr(raw.n_dofs).tolil()
        massless = [2 * i + j for i in range(2, 9, 2) for j in (0, 1)]
        for d in massless:
            mass[d, :] = 0.0
            mass[:, d] = 0.0
        raw.mass = Triplets.from_matrix(mass.tocsr())
        raw.supports = [s for s in raw.supports if s.dof not in massless]
        model = build_track_model(raw)
        assert set(model.condensation.condensed.tolist()) == set(massless)

        free = np.flatnonzero(~raw.blocked_mask())
        Kf = full_K[np.ix_(free, free)]
        for s in raw.supports:
            i = int(np.flatnonzero(free == s.dof)[0])
            Kf[i, i] += s.k
        rng = np.random.default_rng(5)
        worst = 0.0
        for _ in range(20):
            F_ret = rng.normal(size=model.n) * 1e4
            F_full = np.zeros(raw.n_dofs)
            F_full[model.condensation.retained] = F_ret
            full = np.zeros(raw.n_dofs)
            full[free] = np.linalg.solve(Kf, F_full[free])
            got = model.expand(static_solve(model, F_ret))
            worst = max(worst, np.max(np.abs(got - full)) / np.max(np.abs(full)))
        assert verdict("7b", worst <= 1e-10, f"condensed static solve vs full solve: max rel err {worst:.2e} (<=1e-10)")

    def test_c_hermite_static_equivalence(self):
        rng = np.random.default_rng(2)
        worst = 0.0
        for xi, L in zip(rng.uniform(0.0, 1.0, 1000), rng.uniform(0.05, 3.0, 1000)):
            N = hermite_weights(float(xi), float(L))
            worst = max(worst, abs(N[0] + N[2] - 1.0), abs(N[2] * L + N[1] + N[3] - xi * L) / L)
        assert verdict("7c", worst <= 1e-12, f"partition of unity and moment balance over 1000 xi: max err {worst:.2e}")

    @settings(max_examples=1000, deadline=None)
    @given(st.floats(0.0, 1.0), st.floats(0.01, 5.0), st.floats(-1e6, 1e6))
    def test_c_hermite_property(self, xi, L, F):
        f = F * hermite_weights(xi, L)
        assert f[0] + f[2] == pytest.approx(F, rel=1e-12, abs=1e-9)
        assert f[2] * L + f[1] + f[3] == pytest.approx(F * xi * L, rel=1e-12, abs=1e-9)

    def test_d_newmark_refinement_order(self):
        model = small_beam(6)
        dte = model_timestep(model)
        F0 = np.zeros(model.n)
        F0[[0, 4, 6]] = [1e4, 2e4, -5e3]
        T = 4e-3

        def load(t):
            return F0 * math.sin(math.pi * min(t, T) / (2 * T)) ** 2

        sub = 32
        dt_ref = dte / sub
        n_ref = 512 * sub
        integ = ExplicitIntegrator(model, dt_ref)
        state = StateVector.zeros(model.n)
        X = np.empty((n_ref + 1, model.n))
        X[0] = state.x
        for i in range(n_ref):
            integ.advance(state, load(i * dt_ref))
            X[i + 1] = state.x
        scale = np.max(np.abs(X))

        errors = {}
        for r in (1024, 512, 256, 128):
            h = r * dt_ref
            solver = NewmarkSolver(model, NewmarkConfig(dt=h))
            s = StateVector.zeros(model.n)
            s.a[:] = solver.initial_acceleration(s, load(0.0))
            err = 0.0
            for i in range(n_ref // r):
                s = solver.step(s, load((i + 1) * h))
                err = max(err, np.max(np.abs(s.x - X[(i + 1) * r])))
            errors[h] = err / scale
        hs = sorted(errors, reverse=True)
        orders = [math.log(errors[a] / errors[b]) / math.log(a / b) for a, b in zip(hs, hs[1:])]
        ok = all(o >= 1.0 for o in orders)
        detail = "errors " + ", ".join(f"h={h / dte:.0f}dt_e: {errors[h]:.2e}" for h in hs) + \
            "; observed orders " + ", ".join(f"{o:.2f}" for o in orders) + " (>=1)"
        assert verdict("7d", ok, detail)

    def test_e_transport_neutrality(self, tmp_path):
        model = demo_model()
        dip = RailProfile.dip(9.3, 5e-4, 0.2, 0.1)
        kw = dict(t_end=0.02, s0=9.0, probes=[20, 21])
        a = run_standard(demo_vehicle(), model, dip, transport="in_process", **kw).trace
        b = run_standard(demo_vehicle(), model, dip, transport="file_exchange", scratch_dir=tmp_path, **kw).trace
        worst = max(
            np.max(np.abs(a.column(c) - b.column(c))) / max(np.max(np.abs(a.column(c))), 1e-300) for c in a.columns
        )
        assert verdict("7e", worst <= 1e-12, f"in_process vs file_exchange traces: max rel diff {worst:.2e} (<=1e-12)")


def gap_fixture():
    model = small_beam(6)
    gapped = model.with_gaps([s.dof for s in model.supports], 3e-4)
    F = np.zeros(model.n)
    F[model.rail_node_retained(3)] = 8e4
    return gapped, F


def linear_fixture():
    model = small_beam(6)
    F = np.zeros(model.n)
    F[[4, 6, 8]] = [5e4, 8e4, 3e4]
    return model, F


@pytest.mark.parametrize("fixture", [linear_fixture, gap_fixture], ids=["linear", "gap"])
def test_8_static_settling(fixture):
    model, F = fixture()
    x_static = static_solve(model, F)
    scale = np.max(np.abs(x_static))

    explicit = run(model, F, ExplicitConfig(dt=model_timestep(model), n_steps=5000)).state.x
    solver = NewmarkSolver(model, NewmarkConfig(dt=1e-4))
    state = StateVector.zeros(model.n)
    state.a[:] = solver.initial_acceleration(state, F)
    for _ in range(2000):
        state = solver.step(state, F)

    err_e = np.max(np.abs(explicit - x_static)) / scale
    err_n = np.max(np.abs(state.x - x_static)) / scale
    dof, _, _, gap = model.support_arrays
    closed = int(np.count_nonzero(x_static[dof] >= gap))
    ok = err_e <= 1e-5 and err_n <= 1e-5
    detail = (
        f"{fixture.__name__}: explicit rel err {err_e:.2e}, Newmark rel err {err_n:.2e} (<=1e-5); "
        f"{closed}/{len(dof)} supports closed"
    )
    assert verdict("8", ok, detail)
