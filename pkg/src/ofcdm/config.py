"""System configuration, subcarrier grouping and probe identifiers.

All public indices (subcarriers, groups, chip columns, users) are 1-based,
matching the usual OFCDM notation. Array code converts at the boundary.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class ConfigError(ValueError):
    """Raised when a configuration violates one or more invariants.

    ``violations`` holds every breach found, each as ``(name, message)``.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        lines = [f"{name}: {msg}" for name, msg in self.violations]
        super().__init__("invalid configuration:\n  " + "\n  ".join(lines))


@dataclass(frozen=True)
class SystemConfig:
    total_subcarriers: int = 128
    group_size: int = 16
    time_spread: int = 4
    max_users: int = 32
    chip_energy: float = 1.0
    noise_density: float = 1.0
    rayleigh_scale: float = 1.0 / math.sqrt(2.0)
    burst_bits: int = 1000
    arrival_rate: float = 0.05
    master_seed: int = 20100101
    frames_per_trial: int = 1500
    warmup_frames: int = 500
    # Derived unless given explicitly; if given they must agree.
    group_count: int | None = None
    spacing: int | None = None

    @property
    def Y(self) -> int:
        if self.group_count is not None:
            return self.group_count
        return self.total_subcarriers // self.group_size

    @property
    def mu(self) -> int:
        return self.spacing if self.spacing is not None else self.Y

    @property
    def mean_square_fading(self) -> float:
        return 2.0 * self.rayleigh_scale**2

    @property
    def bit_energy(self) -> float:
        """E_b = eps_c * M_y * N * E[alpha^2]."""
        return self.chip_energy * self.group_size * self.time_spread * self.mean_square_fading

    def with_ebn0_db(self, ebn0_db: float) -> "SystemConfig":
        return dataclasses.replace(self, noise_density=self.bit_energy / 10.0 ** (ebn0_db / 10.0))


@dataclass(frozen=True)
class SubcarrierGroup:
    index: int
    members: tuple[int, ...]

    @property
    def offsets(self) -> np.ndarray:
        """0-based subcarrier rows of this group."""
        return np.asarray(self.members, dtype=np.intp) - 1

    def __len__(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class ProbeIdentifier:
    user: int
    group_row: int
    chip_column: int

    @property
    def cell(self) -> tuple[int, int]:
        return (self.group_row, self.chip_column)


def build_subcarrier_groups(M: int, M_y: int) -> list[SubcarrierGroup]:
    """Interleaved groups G_y = {y, y+mu, ..., y+(M_y-1)mu} with mu = Y = M/M_y."""
    if M_y < 1 or M < 1 or M % M_y:
        raise ConfigError([("group_size", f"total_subcarriers={M} is not divisible by group_size={M_y}")])
    Y = M // M_y
    return [SubcarrierGroup(y, tuple(y + i * Y for i in range(M_y))) for y in range(1, Y + 1)]


def assign_probe_identifiers(B: int, Y: int, N: int) -> dict[int, ProbeIdentifier]:
    """Row-major fill: user u -> (((u-1) mod Y)+1, floor((u-1)/Y)+1)."""
    if B > Y * N:
        raise ConfigError([("max_users", f"{B} users exceed the {Y}x{N}={Y * N} probe cells")])
    return {
        u: ProbeIdentifier(u, (u - 1) % Y + 1, (u - 1) // Y + 1)
        for u in range(1, B + 1)
    }


def identifier_lookup(identifiers: dict[int, ProbeIdentifier]) -> dict[tuple[int, int], int]:
    """Inverse map (row, column) -> user used by the receiver."""
    return {pid.cell: u for u, pid in identifiers.items()}


def validate_config(cfg: SystemConfig) -> SystemConfig:
    errors = []
    M, M_y, N = cfg.total_subcarriers, cfg.group_size, cfg.time_spread

    def check(ok, name, msg):
        if not ok:
            errors.append((name, msg))

    check(M_y >= 1, "group_size", f"must be >= 1, got {M_y}")
    check(M >= 1, "total_subcarriers", f"must be >= 1, got {M}")
    check(N >= 1, "time_spread", f"must be >= 1, got {N}")
    divisible = M_y >= 1 and M % M_y == 0
    check(divisible, "group_size", f"total_subcarriers={M} is not divisible by group_size={M_y}")
    if divisible and M_y >= 1:
        Y = M // M_y
        if cfg.group_count is not None:
            check(cfg.group_count == Y, "group_count", f"must equal M/M_y={Y}, got {cfg.group_count}")
        if cfg.spacing is not None:
            check(cfg.spacing == Y, "spacing", f"must equal group_count={Y}, got {cfg.spacing}")
        if N >= 1:
            check(cfg.max_users <= Y * N, "max_users",
                  f"{cfg.max_users} exceeds group_count*time_spread={Y * N}")
    check(cfg.max_users >= 1, "max_users", f"must be >= 1, got {cfg.max_users}")
    check(cfg.chip_energy > 0, "chip_energy", f"must be > 0, got {cfg.chip_energy}")
    check(cfg.noise_density >= 0, "noise_density", f"must be >= 0, got {cfg.noise_density}")
    check(cfg.rayleigh_scale > 0, "rayleigh_scale", f"must be > 0, got {cfg.rayleigh_scale}")
    check(cfg.burst_bits >= 1, "burst_bits", f"must be >= 1, got {cfg.burst_bits}")
    check(cfg.arrival_rate >= 0, "arrival_rate", f"must be >= 0, got {cfg.arrival_rate}")
    check(0 <= cfg.master_seed < 2**64, "master_seed", f"must be an unsigned 64-bit integer, got {cfg.master_seed}")
    check(cfg.frames_per_trial >= 1, "frames_per_trial", f"must be >= 1, got {cfg.frames_per_trial}")
    check(0 <= cfg.warmup_frames < cfg.frames_per_trial, "warmup_frames",
          f"must be in [0, frames_per_trial), got {cfg.warmup_frames}")
    if errors:
        raise ConfigError(errors)
    return cfg


_FIELDS = {f.name: f for f in dataclasses.fields(SystemConfig)}


def _coerce(name: str, raw: str):
    ftype = str(_FIELDS[name].type)
    raw = raw.strip()
    if "None" in ftype and raw.lower() in ("none", ""):
        return None
    try:
        if ftype.startswith("int"):
            return int(raw, 0)
        return float(raw)
    except ValueError:
        raise ConfigError([(name, f"cannot parse {raw!r} as {ftype}")]) from None


def parse_config_text(text: str, base: SystemConfig | None = None) -> SystemConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are errors."""
    values = {}
    errors = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append((f"line {lineno}", f"expected 'key = value', got {line!r}"))
            continue
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            errors.append((key, "unknown configuration key"))
            continue
        try:
            values[key] = _coerce(key, raw)
        except ConfigError as exc:
            errors.extend(exc.violations)
    if errors:
        raise ConfigError(errors)
    return validate_config(dataclasses.replace(base or SystemConfig(), **values))


def load_config(path: str | Path) -> SystemConfig:
    return parse_config_text(Path(path).read_text())


def apply_overrides(cfg: SystemConfig, overrides: dict[str, str]) -> SystemConfig:
    unknown = [(k, "unknown configuration key") for k in overrides if k not in _FIELDS]
    if unknown:
        raise ConfigError(unknown)
    values = {k: _coerce(k, str(v)) for k, v in overrides.items()}
    return validate_config(dataclasses.replace(cfg, **values))


def config_to_text(cfg: SystemConfig) -> str:
    lines = []
    for name in _FIELDS:
        value = getattr(cfg, name)
        lines.append(f"{name} = {value!r}" if value is not None else f"{name} = none")
    return "\n".join(lines) + "\n"
