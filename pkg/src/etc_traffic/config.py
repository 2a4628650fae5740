"""Run configuration: dataclasses, TOML/JSON loading and validation."""

from __future__ import annotations

import hashlib
import json
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    """Invalid or incomplete configuration; ``field`` names the culprit."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class SystemConfig:
    plant: tuple[str, ...]
    controller: tuple[str, ...]
    sigma_sq: float
    alpha: int | None = None


@dataclass(frozen=True)
class DeltaConfig:
    p: int = 2
    z_radius: float = 1.0
    epsilon: float = 1e-6
    d: float | None = None
    # "pretrigger": E = ball(sigma * z_radius); "difference": E = ball(2 * z_radius)
    error_set: str = "difference"
    n_samples: int = 20000
    budget: int = 2_000_000


@dataclass(frozen=True)
class IsochronConfig:
    rho: float | None = None


@dataclass(frozen=True)
class OverapproxConfig:
    tol: float = 1e-3
    seed_directions: int = 64


@dataclass(frozen=True)
class ReachConfig:
    n_r: int = 4
    n_theta: int = 8
    growth_cap: float = 0.02
    tau_cap_factor: float = 20.0
    refine_depth: int = 3
    bisect_steps: int = 4
    # reuse a band's results for bands that are exact dilations of it
    scaling_shortcut: bool = False


@dataclass(frozen=True)
class CapsConfig:
    kappa: float = 2.0
    values: tuple[tuple[int, float], ...] = ()

    def explicit(self) -> dict[int, float]:
        return dict(self.values)


@dataclass(frozen=True)
class RunConfig:
    system: SystemConfig
    times: tuple[float, ...]
    m: int | None = 16
    cones: tuple[tuple[tuple[float, ...], ...], ...] | None = None
    delta: DeltaConfig = field(default_factory=DeltaConfig)
    isochron: IsochronConfig = field(default_factory=IsochronConfig)
    overapprox: OverapproxConfig = field(default_factory=OverapproxConfig)
    reach: ReachConfig = field(default_factory=ReachConfig)
    caps: CapsConfig = field(default_factory=CapsConfig)
    seed: int = 0
    output_dir: str = "out"

    # ------------------------------------------------------------------
    def validate(self) -> "RunConfig":
        s = self.system
        if not s.plant:
            raise ConfigError("system.plant", "needs at least one component")
        if not s.controller:
            raise ConfigError("system.controller", "needs at least one component")
        _positive("system.sigma_sq", s.sigma_sq)
        if s.alpha is not None and s.alpha < 1:
            raise ConfigError("system.alpha", "must be at least 1")
        if not self.times:
            raise ConfigError("times", "needs at least one time")
        for t in self.times:
            _positive("times", t)
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ConfigError("times", "must be strictly increasing")
        if self.cones is None:
            if self.m is None or self.m < 2:
                raise ConfigError("m", "need at least two cones")
        elif len(self.cones) < 2:
            raise ConfigError("cones", "need at least two cone matrices")
        d = self.delta
        if d.p < 1:
            raise ConfigError("delta.p", "must be a positive integer")
        _positive("delta.z_radius", d.z_radius)
        _positive("delta.epsilon", d.epsilon)
        if d.d is not None:
            _positive("delta.d", d.d)
        if d.error_set not in ("pretrigger", "difference"):
            raise ConfigError("delta.error_set", "must be 'pretrigger' or 'difference'")
        if self.isochron.rho is not None:
            _positive("isochron.rho", self.isochron.rho)
            if self.isochron.rho > d.z_radius:
                raise ConfigError("isochron.rho", "must not exceed delta.z_radius")
        _positive("overapprox.tol", self.overapprox.tol)
        if self.overapprox.seed_directions < 2:
            raise ConfigError("overapprox.seed_directions", "need at least two directions")
        r = self.reach
        if r.n_r < 1 or r.n_theta < 1:
            raise ConfigError("reach", "cell grid must be at least 1 x 1")
        _positive("reach.growth_cap", r.growth_cap)
        if not isinstance(r.scaling_shortcut, bool):
            raise ConfigError("reach.scaling_shortcut", "must be true or false")
        if not r.tau_cap_factor > 1:
            raise ConfigError("reach.tau_cap_factor", "must exceed 1")
        _positive("caps.kappa", self.caps.kappa)
        for j, v in self.caps.values:
            _positive(f"caps.values.{j}", v)
        return self

    @property
    def rho(self) -> float:
        return self.isochron.rho if self.isochron.rho is not None else self.delta.z_radius / 2

    @property
    def n_cones(self) -> int:
        return len(self.cones) if self.cones is not None else int(self.m)

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def digest(self) -> str:
        """SHA-256 of the canonical JSON of everything except ``output_dir``."""
        data = self.to_dict()
        data.pop("output_dir", None)
        text = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def _positive(name, value):
    if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
        raise ConfigError(name, f"must be a positive number, got {value!r}")


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


# -------------------------------------------------------------------------
# loading

def _section(cls, data: dict | None, prefix: str):
    data = dict(data or {})
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{prefix}.{sorted(unknown)[0]}", "unknown key")
    return data


def config_from_dict(data: dict) -> RunConfig:
    data = dict(data)
    top = {f.name for f in fields(RunConfig)}
    unknown = set(data) - top
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown key")
    if "system" not in data:
        raise ConfigError("system", "missing required section")
    sysd = _section(SystemConfig, data["system"], "system")
    for key in ("plant", "controller", "sigma_sq"):
        if key not in sysd:
            raise ConfigError(f"system.{key}", "missing required field")
    system = SystemConfig(tuple(sysd["plant"]), tuple(sysd["controller"]),
                          float(sysd["sigma_sq"]), sysd.get("alpha"))
    if "times" not in data:
        raise ConfigError("times", "missing required field")
    caps = _section(CapsConfig, data.get("caps"), "caps")
    values = caps.get("values", {}) or {}
    if isinstance(values, dict):
        values = tuple(sorted((int(k), float(v)) for k, v in values.items()))
    else:
        values = tuple((int(k), float(v)) for k, v in values)
    cones = data.get("cones")
    if cones is not None:
        cones = tuple(tuple(tuple(float(v) for v in row) for row in E) for E in cones)
    try:
        cfg = RunConfig(
            system=system,
            times=tuple(float(t) for t in data["times"]),
            m=data.get("m", 16 if cones is None else None),
            cones=cones,
            delta=DeltaConfig(**_section(DeltaConfig, data.get("delta"), "delta")),
            isochron=IsochronConfig(**_section(IsochronConfig, data.get("isochron"), "isochron")),
            overapprox=OverapproxConfig(**_section(OverapproxConfig, data.get("overapprox"),
                                                   "overapprox")),
            reach=ReachConfig(**_section(ReachConfig, data.get("reach"), "reach")),
            caps=CapsConfig(float(caps.get("kappa", 2.0)), values),
            seed=int(data.get("seed", 0)),
            output_dir=str(data.get("output_dir", "out")),
        )
    except TypeError as exc:
        raise ConfigError("config", str(exc)) from exc
    return cfg.validate()


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix.lower() == ".json":
        data = json.loads(raw.decode("utf-8"))
    else:
        try:
            data = tomllib.loads(raw.decode("utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError("config", f"not valid TOML: {exc}") from exc
    return config_from_dict(data)

