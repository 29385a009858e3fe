"""Diagonal CFL time-step estimate and per-dof capped mass scaling."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ModelError
from .model import KIND_ROTATION, TrackModel

DEFAULT_CFL = 5.0 / np.pi

# Tolerance below which a required mass increment counts as zero (relative to M_i).
_ZERO_ADD_RTOL = 1e-12


def stable_timestep(lumped_mass, stiffness_diagonal, cfl_constant: float = DEFAULT_CFL, blocked=None) -> float:
    """``cfl_constant * min_i sqrt(M_i / K_ii)`` over unblocked dofs.

    ``blocked`` is an optional boolean mask (or index array) of dofs to skip.
    """
    m = np.asarray(lumped_mass, dtype=float)
    k = np.asarray(stiffness_diagonal, dtype=float)
    active = np.ones(m.shape, dtype=bool)
    if blocked is not None:
        blocked = np.asarray(blocked)
        if blocked.dtype == bool:
            active &= ~blocked
        else:
            active[blocked.astype(int)] = False
    if not active.any():
        raise ModelError("no active dofs")
    bad_k = np.flatnonzero(active & (k <= 0.0))
    if bad_k.size:
        raise ModelError(f"indefinite diagonal: K_ii <= 0 on dofs {bad_k.tolist()}")
    bad_m = np.flatnonzero(active & (m <= 0.0))
    if bad_m.size:
        raise ModelError(f"non-positive lumped mass on dofs {bad_m.tolist()}")
    return float(cfl_constant * np.sqrt(np.min(m[active] / k[active])))


def model_timestep(model: TrackModel, cfl_constant: float = DEFAULT_CFL) -> float:
    return stable_timestep(model.lumped_mass, model.stiffness_diagonal(), cfl_constant)


@dataclass
class MassScalingReport:
    base_dt: float
    achieved_dt: float
    added_mass: np.ndarray
    base_ratio: np.ndarray
    limiting_dofs: list[int]
    m_c: float
    cfl_constant: float = DEFAULT_CFL

    @property
    def total_added_mass(self) -> float:
        return float(self.added_mass.sum())

    def summary_line(self) -> str:
        return f"{self.base_dt:.17g},{self.achieved_dt:.17g},{self.total_added_mass:.17g}"

    def write_csv(self, path) -> None:
        """Per-dof table ``dof,base_ratio,added_mass``, then a summary block."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["dof", "base_ratio", "added_mass"])
            for i, (r, a) in enumerate(zip(self.base_ratio, self.added_mass)):
                w.writerow([i, f"{r:.17g}", f"{a:.17g}"])
        with path.with_name(path.stem + "_summary.csv").open("w", newline="") as fh:
            fh.write("base_dt,achieved_dt,total_added_mass\n")
            fh.write(self.summary_line() + "\n")


def mass_scale(
    model: TrackModel,
    m_c: float,
    dt_target: float | None = None,
    cfl_constant: float = DEFAULT_CFL,
    rotations: bool = True,
) -> tuple[TrackModel, MassScalingReport]:
    """Add mass to the dofs that limit the stable time step, at most ``m_c`` per dof.

    Without ``dt_target`` the largest step reachable under the cap is used.
    Every dof whose ratio falls short of the target is raised to it, or by
    ``m_c`` if that is not enough.  With ``rotations=False`` rotational dofs
    are left unscaled (and may then bound the achievable step).
    """
    if m_c < 0:
        raise ModelError(f"m_c must be >= 0, got {m_c}")
    M = model.lumped_mass
    K = model.stiffness_diagonal()
    base_dt = stable_timestep(M, K, cfl_constant)

    eligible = np.ones(model.n, dtype=bool) if rotations else model.kinds != KIND_ROTATION
    cap = np.where(eligible, float(m_c), 0.0)
    dt_max = float(cfl_constant * np.sqrt(np.min((M + cap) / K)))
    if dt_target is None:
        dt_used = dt_max
    else:
        if dt_target > dt_max * (1 + 1e-12):
            raise ModelError(
                f"target dt {dt_target:.6g} s exceeds the {dt_max:.6g} s reachable with m_c = {m_c}"
            )
        dt_used = float(dt_target)

    need = K * (dt_used / cfl_constant) ** 2 - M
    need[need <= _ZERO_ADD_RTOL * M] = 0.0
    added = np.minimum(need, cap)

    new_mass = M + added
    scaled = model.with_lumped_mass(
        new_mass, added if model.added_mass is None else model.added_mass + added
    )
    ratio = np.sqrt(new_mass / K)
    achieved = float(cfl_constant * ratio.min())
    limiting = np.flatnonzero(ratio <= ratio.min() * (1 + 1e-12)).tolist()
    report = MassScalingReport(
        base_dt=base_dt,
        achieved_dt=achieved,
        added_mass=added,
        base_ratio=np.sqrt(M / K),
        limiting_dofs=limiting,
        m_c=float(m_c),
        cfl_constant=cfl_constant,
    )
    return scaled, report
