"""Declarative experiment configs: strict schema, typed access, hashing.

Configs are YAML with a versioned schema.  Validation is strict — unknown
keys are rejected with their dotted path, so a typo cannot silently drop a
physics setting.  Frequency-like quantities are given as plain cycles
(``*_mhz`` fields are nu = omega / 2 pi); everything internal is rad/us.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .errors import ConfigError
from .evolve import JumpParams
from .hamiltonian import DEFAULT_SITE_CAP, BasisSpace, HamiltonianSpec
from .lattice import Lattice, build_ring, build_square
from .serialize import json_dumps_stable, sha256_text

SCHEMA_VERSION = 1
TWO_PI = 2.0 * math.pi


class _Field:
    def __init__(self, types, default=None, required=False, choices=None, minimum=None):
        self.types = types if isinstance(types, tuple) else (types,)
        self.default = default
        self.required = required
        self.choices = choices
        self.minimum = minimum

    def check(self, value, path: str):
        if isinstance(value, bool) and bool not in self.types:
            raise ConfigError(f"expected {self._tn()}, got bool", path=path)
        if not isinstance(value, self.types):
            raise ConfigError(
                f"expected {self._tn()}, got {type(value).__name__}", path=path
            )
        if self.choices is not None and value not in self.choices:
            raise ConfigError(
                f"must be one of {sorted(self.choices)}, got {value!r}", path=path
            )
        if self.minimum is not None and value < self.minimum:
            raise ConfigError(f"must be >= {self.minimum}, got {value}", path=path)
        return value

    def _tn(self):
        return "/".join(t.__name__ for t in self.types)


_num = (int, float)

_DETECTION = {
    "enabled": _Field(bool, default=True),
    "eta0": _Field(_num, default=0.980),
    "eps_det": _Field(_num, default=0.0),
}

_SCHEMA: dict[str, Any] = {
    "schema": _Field(int, required=True, choices={SCHEMA_VERSION}),
    "name": _Field(str, required=True),
    "seed": _Field(int, required=True, minimum=0),
    "capacity_cap": _Field(int, default=DEFAULT_SITE_CAP, minimum=1),
    "lattice": {
        "geometry": _Field(str, required=True, choices={"ring", "square"}),
        "n": _Field(int, minimum=3),
        "nx": _Field(int, minimum=2),
        "ny": _Field(int, minimum=2),
        "spacing": _Field(_num, default=1.0, minimum=0),
    },
    "hamiltonian": {
        "omega_mhz": _Field(_num, required=True, minimum=0),
        "rb_over_a": _Field(_num),
        "c6_mhz": _Field(_num),
    },
    "basis": {
        "truncation": _Field(str, default="full", choices={"full", "blockade"}),
        "radius": _Field(_num),
    },
    "gap_scan": {
        "delta_min_over_omega": _Field(_num, required=True),
        "delta_max_over_omega": _Field(_num, required=True),
        "n_points": _Field(int, default=25, minimum=3),
        "reachable": _Field(bool, default=True),
    },
    "ramp": {
        "kind": _Field(
            str, required=True, choices={"lila-discrete", "lila-analytic", "linear"}
        ),
        "delta_start_over_omega": _Field(_num, required=True),
        "delta_end_over_omega": _Field(_num, required=True),
        "total_time_us": _Field(_num, minimum=0),
        "rate_mhz_per_us": _Field(_num, minimum=0),
        "n_points": _Field(int, minimum=2),
        "turn_on_us": _Field(_num, default=0.0, minimum=0),
    },
    "decoherence": {
        "mode": _Field(str, default="off", choices={"off", "paper", "scaled", "custom"}),
        "scale": _Field(_num, default=1.0, minimum=0),
        "custom": {
            "gamma_decay_per_us": _Field(_num, default=0.0, minimum=0),
            "omega_blue_mhz": _Field(_num, default=0.0, minimum=0),
            "omega_ir_mhz": _Field(_num, default=0.0, minimum=0),
            "delta_int_mhz": _Field(_num, default=1.0),
            "gamma_e_mhz": _Field(_num, default=0.0, minimum=0),
        },
    },
    "disorder": {
        "v_sigma": _Field(_num, default=0.0, minimum=0),
        "sigma_r": _Field(_num, default=0.0, minimum=0),
        "sigma_v": _Field(_num, default=0.0, minimum=0),
        "hole_fraction": _Field(_num, default=0.0, minimum=0),
    },
    "measurement": {
        "n_shots": _Field(int, default=200, minimum=1),
        "shots_per_trajectory": _Field(int, default=1, minimum=1),
        "detection": _DETECTION,
        "postselect": _Field(bool, default=True),
    },
    "analysis": {
        "fields": _Field(list, default=["sigma"]),
        "models": _Field(list, default=["power", "power_exp"]),
        "min_fit_distance": _Field(_num, default=1.5, minimum=0),
        "region": _Field(str, default="all", choices={"all", "bulk", "boundary"}),
        "connected": _Field(bool, default=False),
        "bootstrap_replicates": _Field(int, default=0, minimum=0),
    },
    "kz": {
        "rates_mhz_per_us": _Field(list, required=True),
        "directions": _Field(list, default=["forward"]),
        "n_points": _Field(int, default=51, minimum=7),
    },
}

_OPTIONAL_SECTIONS = {
    "basis",
    "gap_scan",
    "ramp",
    "decoherence",
    "disorder",
    "measurement",
    "analysis",
    "kz",
}


def _validate(raw: dict, schema: dict, path: str = "") -> dict:
    if not isinstance(raw, dict):
        raise ConfigError(f"expected a mapping, got {type(raw).__name__}", path=path)
    out: dict = {}
    for key in raw:
        if key not in schema:
            raise ConfigError(
                "unknown key (check spelling)", path=f"{path}.{key}" if path else key
            )
    for key, spec in schema.items():
        sub_path = f"{path}.{key}" if path else key
        if isinstance(spec, dict):
            if key in raw and raw[key] is not None:
                out[key] = _validate(raw[key], spec, sub_path)
            elif key in raw:
                out[key] = _validate({}, spec, sub_path)
            elif path == "" and key not in _OPTIONAL_SECTIONS:
                out[key] = _validate({}, spec, sub_path)
            elif path != "" and key != "custom":
                # nested groups default in when their parent section exists;
                # custom rate blocks stay absent so mode=custom must spell
                # out its rates
                out[key] = _validate({}, spec, sub_path)
        else:
            if key in raw and raw[key] is not None:
                out[key] = spec.check(raw[key], sub_path)
            elif spec.required:
                raise ConfigError("required key missing", path=sub_path)
            elif spec.default is not None or key in raw:
                out[key] = spec.default
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description with typed accessors.

    Everything a run needs is derived from here plus the master seed, so a
    (config, seed) pair fully determines all artifacts.
    """

    data: dict

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        # YAML reads a bare `off` as boolean False; put the intent back
        if isinstance(raw.get("decoherence"), dict) and raw["decoherence"].get("mode") is False:
            raw = {**raw, "decoherence": {**raw["decoherence"], "mode": "off"}}
        data = _validate(raw, _SCHEMA)
        cfg = cls(data)
        cfg._cross_check()
        return cfg

    @classmethod
    def from_yaml(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}", path=str(path)) from exc
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"not valid YAML: {exc}", path=str(path)) from exc
        if raw is None:
            raise ConfigError("config file is empty", path=str(path))
        return cls.from_dict(raw)

    def _cross_check(self):
        lat = self.data["lattice"]
        if lat["geometry"] == "ring" and "n" not in lat:
            raise ConfigError("ring lattice needs `n`", path="lattice.n")
        if lat["geometry"] == "square" and ("nx" not in lat or "ny" not in lat):
            raise ConfigError("square lattice needs `nx` and `ny`", path="lattice.nx")
        ham = self.data["hamiltonian"]
        if ("rb_over_a" in ham) == ("c6_mhz" in ham):
            raise ConfigError(
                "give exactly one of rb_over_a or c6_mhz", path="hamiltonian"
            )
        ramp = self.data.get("ramp")
        if ramp:
            if ramp["kind"] == "linear":
                if "rate_mhz_per_us" not in ramp:
                    raise ConfigError(
                        "linear ramp needs rate_mhz_per_us", path="ramp.rate_mhz_per_us"
                    )
            elif "total_time_us" not in ramp:
                raise ConfigError(
                    "adaptive ramps need total_time_us", path="ramp.total_time_us"
                )
        dec = self.data.get("decoherence")
        if dec and dec["mode"] == "custom" and "custom" not in dec:
            raise ConfigError("custom mode needs a custom block", path="decoherence.custom")
        ana = self.data.get("analysis")
        if ana:
            for f in ana["fields"]:
                if f not in ("sigma", "epsilon"):
                    raise ConfigError(f"unknown field {f!r}", path="analysis.fields")
            from .analysis import MODELS

            for m in ana["models"]:
                if m not in MODELS:
                    raise ConfigError(f"unknown model {m!r}", path="analysis.models")
        kz = self.data.get("kz")
        if kz:
            for d in kz["directions"]:
                if d not in ("forward", "backward"):
                    raise ConfigError(f"unknown direction {d!r}", path="kz.directions")
            if not all(isinstance(r, _num) and r > 0 for r in kz["rates_mhz_per_us"]):
                raise ConfigError("rates must be positive numbers", path="kz.rates_mhz_per_us")

    # -- typed accessors ----------------------------------------------------

    @property
    def name(self) -> str:
        return self.data["name"]

    @property
    def seed(self) -> int:
        return self.data["seed"]

    @property
    def omega(self) -> float:
        """Rabi frequency in rad/us."""
        return TWO_PI * self.data["hamiltonian"]["omega_mhz"]

    @property
    def capacity_cap(self) -> int:
        return self.data["capacity_cap"]

    def build_lattice(self) -> Lattice:
        lat = self.data["lattice"]
        if lat["geometry"] == "ring":
            return build_ring(lat["n"], spacing=lat["spacing"])
        return build_square(lat["nx"], lat["ny"], spacing=lat["spacing"])

    def hamiltonian_kwargs(self) -> dict:
        ham = self.data["hamiltonian"]
        if "rb_over_a" in ham:
            return {"rb": ham["rb_over_a"] * self.data["lattice"]["spacing"]}
        return {"c6": TWO_PI * ham["c6_mhz"]}

    def build_spec(self, lattice: Lattice, delta: float = 0.0, **extra) -> HamiltonianSpec:
        return HamiltonianSpec.from_lattice(
            lattice, omega=self.omega, delta=delta, **self.hamiltonian_kwargs(), **extra
        )

    def build_basis(self, lattice: Lattice) -> BasisSpace:
        sec = self.data.get("basis", {"truncation": "full"})
        if sec["truncation"] == "blockade":
            radius = sec.get("radius")
            if radius is None:
                ham = self.data["hamiltonian"]
                if "rb_over_a" not in ham:
                    raise ConfigError(
                        "blockade truncation needs a radius", path="basis.radius"
                    )
                radius = ham["rb_over_a"] * self.data["lattice"]["spacing"]
            return BasisSpace.blockade_truncated(
                lattice, radius, max_sites=self.capacity_cap
            )
        return BasisSpace.full(lattice.n_sites, max_sites=self.capacity_cap)

    def jump_params(self) -> Optional[JumpParams]:
        """Jump-channel rates for the configured decoherence mode, or None."""
        dec = self.data.get("decoherence")
        if dec is None or dec["mode"] == "off":
            return None
        if dec["mode"] == "paper":
            return JumpParams.experiment_defaults()
        if dec["mode"] == "scaled":
            return JumpParams.experiment_defaults().scaled(dec["scale"])
        c = dec["custom"]
        return JumpParams(
            gamma_decay=c["gamma_decay_per_us"],
            omega_blue=TWO_PI * c["omega_blue_mhz"],
            omega_ir=TWO_PI * c["omega_ir_mhz"],
            delta_int=TWO_PI * c["delta_int_mhz"],
            gamma_e=TWO_PI * c["gamma_e_mhz"],
        )

    def gap_grid(self) -> np.ndarray:
        sec = self.data["gap_scan"]
        return np.linspace(
            sec["delta_min_over_omega"] * self.omega,
            sec["delta_max_over_omega"] * self.omega,
            sec["n_points"],
        )

    def canonical_text(self) -> str:
        return json_dumps_stable(self.data)

    def config_hash(self) -> str:
        return sha256_text(self.canonical_text())


def bundled_config_path(name: str) -> Path:
    """Path of a reference config shipped with the package."""
    p = Path(__file__).parent / "configs" / f"{name}.yaml"
    if not p.exists():
        available = sorted(q.stem for q in p.parent.glob("*.yaml"))
        raise ConfigError(f"no bundled config {name!r}; available: {available}")
    return p


def load_config(path_or_name) -> ExperimentConfig:
    """Load a config from a path, or by bundled name if no such file exists."""
    p = Path(path_or_name)
    if p.exists():
        return ExperimentConfig.from_yaml(p)
    if p.suffix == "" and "/" not in str(path_or_name):
        return ExperimentConfig.from_yaml(bundled_config_path(str(path_or_name)))
    raise ConfigError(f"config file not found: {path_or_name}", path=str(path_or_name))
