"""Synthetic beam-on-discrete-supports track and crossing-dip profile.

Running ``python -m trackcosim.demo <out_dir>`` (or ``trackcosim demo``)
regenerates the shipped demo assets.  Nothing in ``data/demo`` is edited by
hand; every value comes from :data:`DEMO_PARAMS` below and is echoed into
``params.txt`` next to the generated files.

The rail is a 60E1-like Euler-Bernoulli beam with one element per sleeper
bay.  Each interior rail node sits on a combined pad/sleeper/ballast support;
both ends are clamped.
"""

from __future__ import annotations

import argparse
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .coupling import RailProfile, VehicleModel
from .model import Element, Node, RawModel, SupportElement, Triplets, write_raw_model

DEMO_PARAMS = {
    # rail
    "n_elements": 50,
    "element_length": 0.6,  # m, sleeper spacing
    "E": 2.1e11,  # Pa
    "I": 3.038e-5,  # m^4
    "rho_A": 60.21,  # kg/m
    "rayleigh_alpha": 0.0,  # 1/s
    "rayleigh_beta": 5.0e-7,  # s
    # supports (one per interior node)
    "support_k": 6.0e7,  # N/m
    "support_c": 6.0e4,  # N s/m
    # crossing dip
    "dip_center": 14.4,  # m
    "dip_depth": 1.0e-3,  # m
    "dip_length_in": 0.6,  # m
    "dip_length_out": 0.3,  # m
    # vehicle (quarter car, one wheel)
    "m_s": 5500.0,  # kg
    "m_w": 900.0,  # kg
    "k_p": 1.2e6,  # N/m
    "c_p": 2.0e4,  # N s/m
    "C_H": 1.0e11,  # N/m^1.5
    "V": 30.0,  # m/s
    # run
    "s0": 9.0,  # m
    "t_end": 0.24,  # s
    "dt_standard": 1.0e-5,  # s
    "m_c": 0.01,  # kg (kg m^2 on rotation dofs)
}


def beam_element(L: float, EI: float, rho_A: float) -> tuple[np.ndarray, np.ndarray]:
    """Euler-Bernoulli stiffness and consistent mass over ``(w_a, theta_a, w_b, theta_b)``."""
    k = EI / L**3 * np.array(
        [
            [12.0, 6 * L, -12.0, 6 * L],
            [6 * L, 4 * L * L, -6 * L, 2 * L * L],
            [-12.0, -6 * L, 12.0, -6 * L],
            [6 * L, 2 * L * L, -6 * L, 4 * L * L],
        ]
    )
    m = rho_A * L / 420.0 * np.array(
        [
            [156.0, 22 * L, 54.0, -13 * L],
            [22 * L, 4 * L * L, 13 * L, -3 * L * L],
            [54.0, 13 * L, 156.0, -22 * L],
            [-13 * L, -3 * L * L, -22 * L, 4 * L * L],
        ]
    )
    return k, m


def beam_on_supports(
    lengths: Sequence[float],
    EI: float,
    rho_A: float,
    support_k: float,
    support_c: float,
    rayleigh_alpha: float = 0.0,
    rayleigh_beta: float = 0.0,
    supported: Sequence[bool] | None = None,
    clamp_ends: bool = True,
    s_start: float = 0.0,
) -> RawModel:
    """Assemble a RawModel for a rail beam; node ``i`` owns dofs ``2i`` (w) and ``2i+1`` (theta).

    ``supported[i]`` switches the support under node ``i``; by default every
    unclamped node is supported.
    """
    lengths = np.asarray(lengths, dtype=float)
    ne = len(lengths)
    nn = ne + 1
    n = 2 * nn
    rows, cols, kv, mv = [], [], [], []
    for e, L in enumerate(lengths):
        ke, me = beam_element(L, EI, rho_A)
        d = [2 * e, 2 * e + 1, 2 * e + 2, 2 * e + 3]
        for p in range(4):
            for q in range(4):
                rows.append(d[p])
                cols.append(d[q])
                kv.append(ke[p, q])
                mv.append(me[p, q])
    K = sp.csr_matrix(sp.coo_matrix((kv, (rows, cols)), shape=(n, n)))
    M = sp.csr_matrix(sp.coo_matrix((mv, (rows, cols)), shape=(n, n)))
    C = sp.csr_matrix(rayleigh_alpha * M + rayleigh_beta * K)

    s = s_start + np.concatenate([[0.0], np.cumsum(lengths)])
    nodes = []
    for i in range(nn):
        end = clamp_ends and i in (0, nn - 1)
        nodes.append(Node(i, float(s[i]), 2 * i, 2 * i + 1, end, end))
    elements = [Element(e, e, e + 1) for e in range(ne)]
    if supported is None:
        supported = [not (clamp_ends and i in (0, nn - 1)) for i in range(nn)]
    supports = [SupportElement(2 * i, support_k, support_c, 0.0) for i in range(nn) if supported[i]]
    return RawModel(
        n_dofs=n,
        mass=Triplets.from_matrix(M),
        damping=Triplets.from_matrix(C),
        stiffness=Triplets.from_matrix(K),
        nodes=nodes,
        elements=elements,
        supports=supports,
    )


def demo_raw_model(params: dict | None = None, lengths: Sequence[float] | None = None, supported=None) -> RawModel:
    p = {**DEMO_PARAMS, **(params or {})}
    if lengths is None:
        lengths = [p["element_length"]] * p["n_elements"]
    return beam_on_supports(
        lengths,
        EI=p["E"] * p["I"],
        rho_A=p["rho_A"],
        support_k=p["support_k"],
        support_c=p["support_c"],
        rayleigh_alpha=p["rayleigh_alpha"],
        rayleigh_beta=p["rayleigh_beta"],
        supported=supported,
    )


def demo_profile(params: dict | None = None) -> RailProfile:
    p = {**DEMO_PARAMS, **(params or {})}
    return RailProfile.dip(p["dip_center"], p["dip_depth"], p["dip_length_in"], p["dip_length_out"])


def demo_vehicle(params: dict | None = None) -> VehicleModel:
    p = {**DEMO_PARAMS, **(params or {})}
    return VehicleModel(p["m_s"], p["m_w"], p["k_p"], p["c_p"], p["C_H"], p["V"])


def scenario_text(p: dict, model_dir: str = ".", profile_file: str = "profile.csv") -> str:
    return "\n".join(
        [
            "# demo scenario: quarter vehicle over the crossing dip",
            f"vehicle.m_s = {p['m_s']!r}",
            f"vehicle.m_w = {p['m_w']!r}",
            f"vehicle.k_p = {p['k_p']!r}",
            f"vehicle.c_p = {p['c_p']!r}",
            f"vehicle.C_H = {p['C_H']!r}",
            f"vehicle.V = {p['V']!r}",
            f"track.model_dir = {model_dir}",
            f"profile.file = {profile_file}",
            "run.approach = new",
            f"run.m_c = {p['m_c']!r}",
            f"run.dt = {p['dt_standard']!r}",
            f"run.t_end = {p['t_end']!r}",
            f"run.s0 = {p['s0']!r}",
            "run.transport = in_process",
            "run.output = output",
            "",
        ]
    )


def build_demo(out_dir, params: dict | None = None) -> Path:
    """Write the demo model, profile, scenario and parameter listing to ``out_dir``."""
    p = {**DEMO_PARAMS, **(params or {})}
    out = Path(out_dir)
    write_raw_model(demo_raw_model(p), out)
    demo_profile(p).to_csv(out / "profile.csv")
    (out / "scenario.cfg").write_text(scenario_text(p))
    lines = ["# generated by trackcosim.demo.build_demo; do not edit", *(f"{k} = {v!r}" for k, v in p.items())]
    (out / "params.txt").write_text("\n".join(lines) + "\n")
    return out


def demo_dir() -> Path:
    """Location of the shipped demo assets."""
    return Path(str(resources.files("trackcosim") / "data" / "demo"))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description="Regenerate the demo track assets.")
    ap.add_argument("out_dir", nargs="?", default=str(demo_dir()))
    args = ap.parse_args(argv)
    print(build_demo(args.out_dir))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
