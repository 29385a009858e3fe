"""Scenario files: flat ``key = value`` lines, ``#`` comments.

Recognised keys::

    vehicle.m_s  vehicle.m_w  vehicle.k_p  vehicle.c_p  vehicle.C_H  vehicle.V
    track.model_dir  track.supports
    profile.file
    run.approach  run.m_c  run.dt  run.t_end  run.s0  run.transport  run.output
    run.output_interval  run.cfl  run.scheme  run.scratch_dir  run.name

Relative paths are resolved against the directory holding the file.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

from .coupling import STANDARD_DT, RailProfile, VehicleModel
from .errors import ConfigError
from .timestep import DEFAULT_CFL

_FLOAT_KEYS = {
    "vehicle.m_s", "vehicle.m_w", "vehicle.k_p", "vehicle.c_p", "vehicle.C_H", "vehicle.V",
    "run.m_c", "run.dt", "run.t_end", "run.s0", "run.output_interval", "run.cfl",
}
_PATH_KEYS = {"track.model_dir", "track.supports", "profile.file", "run.output", "run.scratch_dir"}
_STR_KEYS = {"run.approach", "run.transport", "run.scheme", "run.name"}
KNOWN_KEYS = _FLOAT_KEYS | _PATH_KEYS | _STR_KEYS
REQUIRED_KEYS = {
    "vehicle.m_s", "vehicle.m_w", "vehicle.k_p", "vehicle.c_p", "vehicle.C_H", "vehicle.V",
    "track.model_dir", "run.t_end",
}


@dataclass(frozen=True)
class Scenario:
    name: str
    vehicle: VehicleModel
    model_dir: Path
    profile_file: Path | None
    supports_file: Path | None = None
    approach: str = "new"
    m_c: float = 0.0
    dt: float = STANDARD_DT
    t_end: float = 0.1
    s0: float | None = None
    transport: str = "in_process"
    output: Path = Path("output")
    output_interval: float = 0.0
    cfl_constant: float = DEFAULT_CFL
    scheme: str = "semi_implicit"
    scratch_dir: Path | None = None

    def profile(self) -> RailProfile:
        return RailProfile.flat() if self.profile_file is None else RailProfile.from_csv(self.profile_file)

    def stride_for(self, dt: float) -> int:
        return max(1, int(round(self.output_interval / dt))) if self.output_interval > 0 else 1

    def with_(self, **changes) -> "Scenario":
        return replace(self, **changes)


def parse_key_values(text: str, source: str = "<config>") -> dict[str, str]:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def load_scenario(path) -> Scenario:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"scenario file not found: {path}")
    values = parse_key_values(path.read_text(), str(path))
    missing = sorted(REQUIRED_KEYS - values.keys())
    if missing:
        raise ConfigError(f"{path}: missing required key(s) {missing}")

    base = path.parent
    nums = {}
    for key in _FLOAT_KEYS & values.keys():
        try:
            nums[key] = float(values[key])
        except ValueError:
            raise ConfigError(f"{path}: {key} = {values[key]!r} is not a number") from None

    def as_path(key):
        if key not in values:
            return None
        p = Path(values[key])
        return p if p.is_absolute() else base / p

    try:
        vehicle = VehicleModel(
            nums["vehicle.m_s"], nums["vehicle.m_w"], nums["vehicle.k_p"],
            nums["vehicle.c_p"], nums["vehicle.C_H"], nums["vehicle.V"],
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None

    approach = values.get("run.approach", "new")
    if approach not in ("standard", "new"):
        raise ConfigError(f"{path}: run.approach must be 'standard' or 'new', got {approach!r}")
    transport = values.get("run.transport", "in_process")
    if transport not in ("in_process", "file_exchange"):
        raise ConfigError(f"{path}: run.transport must be 'in_process' or 'file_exchange', got {transport!r}")
    scheme = values.get("run.scheme", "semi_implicit")
    if scheme not in ("semi_implicit", "literal_paper"):
        raise ConfigError(f"{path}: run.scheme must be 'semi_implicit' or 'literal_paper'")
    for key in ("run.t_end", "run.dt", "run.cfl"):
        if key in nums and not nums[key] > 0:
            raise ConfigError(f"{path}: {key} must be > 0")
    if nums.get("run.m_c", 0.0) < 0:
        raise ConfigError(f"{path}: run.m_c must be >= 0")

    return Scenario(
        name=values.get("run.name", path.stem),
        vehicle=vehicle,
        model_dir=as_path("track.model_dir"),
        profile_file=as_path("profile.file"),
        supports_file=as_path("track.supports"),
        approach=approach,
        m_c=nums.get("run.m_c", 0.0),
        dt=nums.get("run.dt", STANDARD_DT),
        t_end=nums["run.t_end"],
        s0=nums.get("run.s0"),
        transport=transport,
        output=as_path("run.output") or base / "output",
        output_interval=nums.get("run.output_interval", 0.0),
        cfl_constant=nums.get("run.cfl", DEFAULT_CFL),
        scheme=scheme,
        scratch_dir=as_path("run.scratch_dir"),
    )
