"""Scenario configuration files (YAML or JSON) for the command-line front end.

Annotated example::

    probe:                      # see ProbeSpec
      kind: generic_nds         # generic_nds | tmsv | coherent | single_photon_eq16 | ecb_optimal | custom
      energies: [1.5]           # signal energy N_k per loss element
      modes: [1]                # signal modes M_k per element
      distribution:             # per element: photon number (or "n1,n2" pattern) -> probability
        - {1: 0.5, 2: 0.5}
      cutoff: null              # uniform signal cutoff; derived when null
    ancilla_policy: orthonormal_min   # or none
    loss:
      etas: [0.5]               # true transmittances
      parametrization: phi      # phi | eta
    eta_prime: [0.3]            # second channel, for `fidelity`
    measurement: on_off         # on_off | schmidt | photon_counting
    simulation: {shots: 10000, trials: 200, estimator: mle_refined, grid_points: 512, grid_bounds: [0.01, 0.99]}
    ecb: {eta: 0.9, eta_prime: 0.5, energy: 1.5, modes: 1, n_max: null}
    tolerances: {eps_trunc: 1.0e-8, rank_tol: 1.0e-12, prob_tol: 1.0e-15, fd_step: 1.0e-3, component_tol: 1.0e-14, force: false}
    seed: 0
    output: {path: null, format: json}

Unknown keys are rejected at every level.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .errors import ValidationError
from .fock import ANCILLA_POLICIES, ProbeSpec

MEASUREMENTS = ("on_off", "schmidt", "photon_counting")


class ConfigError(ValidationError):
    pass


def _check_keys(section, data, allowed):
    if not isinstance(data, dict):
        raise ConfigError(f"{section} must be a mapping")
    unknown = set(data) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {section}: {sorted(unknown)}")


@dataclass(frozen=True)
class Tolerances:
    eps_trunc: float = 1e-8
    rank_tol: float = 1e-12
    prob_tol: float = 1e-15
    fd_step: float = 1e-3
    component_tol: float = 1e-14
    force: bool = False


@dataclass(frozen=True)
class Simulation:
    shots: int = 10_000
    trials: int = 200
    estimator: str = "mle_refined"
    grid_points: int = 512
    grid_bounds: tuple[float, float] = (0.01, 0.99)


@dataclass(frozen=True)
class EcbSection:
    eta: float
    eta_prime: float
    energy: float
    modes: int = 1
    n_max: int | None = None


@dataclass(frozen=True)
class ScenarioConfig:
    probe: ProbeSpec | None = None
    ancilla_policy: str = "orthonormal_min"
    etas: tuple[float, ...] | None = None
    parametrization: str = "phi"
    eta_prime: tuple[float, ...] | None = None
    measurement: str = "on_off"
    simulation: Simulation = field(default_factory=Simulation)
    ecb: EcbSection | None = None
    tolerances: Tolerances = field(default_factory=Tolerances)
    seed: int = 0
    output_path: str | None = None
    output_format: str = "json"

    def __post_init__(self):
        if self.ancilla_policy not in ANCILLA_POLICIES:
            raise ConfigError(f"ancilla_policy must be one of {ANCILLA_POLICIES}")
        if self.parametrization not in ("eta", "phi"):
            raise ConfigError("loss.parametrization must be eta or phi")
        if self.measurement not in MEASUREMENTS:
            raise ConfigError(f"measurement must be one of {MEASUREMENTS}")
        if self.output_format not in ("json", "csv"):
            raise ConfigError("output.format must be json or csv")
        for name in ("etas", "eta_prime"):
            vals = getattr(self, name)
            if vals is not None and any(not 0.0 <= v <= 1.0 for v in vals):
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.probe is not None and self.etas is not None and len(self.etas) != self.probe.element_count:
            raise ConfigError("loss.etas needs one entry per probe element")
        if self.seed < 0 or self.seed >= 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    @classmethod
    def from_dict(cls, data):
        data = data or {}
        _check_keys("config", data, {"probe", "ancilla_policy", "loss", "eta_prime", "measurement",
                                     "simulation", "ecb", "tolerances", "seed", "output"})
        kw = {}
        if "probe" in data:
            try:
                kw["probe"] = ProbeSpec.from_dict(data["probe"])
            except ValidationError as exc:
                raise ConfigError(f"probe: {exc}") from exc
        if "ancilla_policy" in data:
            kw["ancilla_policy"] = data["ancilla_policy"]
        if "loss" in data:
            loss = data["loss"]
            _check_keys("loss", loss, {"etas", "parametrization"})
            if "etas" in loss:
                kw["etas"] = _floats(loss["etas"])
            if "parametrization" in loss:
                kw["parametrization"] = loss["parametrization"]
        if data.get("eta_prime") is not None:
            kw["eta_prime"] = _floats(data["eta_prime"])
        if "measurement" in data:
            kw["measurement"] = data["measurement"]
        if "simulation" in data:
            sim = data["simulation"]
            _check_keys("simulation", sim, Simulation.__dataclass_fields__)
            sim = dict(sim)
            if "grid_bounds" in sim:
                sim["grid_bounds"] = tuple(float(v) for v in sim["grid_bounds"])
            kw["simulation"] = Simulation(**sim)
        if data.get("ecb") is not None:
            ecb = data["ecb"]
            _check_keys("ecb", ecb, EcbSection.__dataclass_fields__)
            try:
                kw["ecb"] = EcbSection(**ecb)
            except TypeError as exc:
                raise ConfigError(f"ecb: {exc}") from exc
        if "tolerances" in data:
            tol = data["tolerances"]
            _check_keys("tolerances", tol, Tolerances.__dataclass_fields__)
            kw["tolerances"] = Tolerances(**tol)
        if "seed" in data:
            kw["seed"] = int(data["seed"])
        if "output" in data:
            out = data["output"]
            _check_keys("output", out, {"path", "format"})
            kw["output_path"] = out.get("path")
            kw["output_format"] = out.get("format", "json")
        return cls(**kw)

    def to_dict(self):
        out = {
            "ancilla_policy": self.ancilla_policy,
            "loss": {"parametrization": self.parametrization},
            "measurement": self.measurement,
            "simulation": {**asdict(self.simulation), "grid_bounds": list(self.simulation.grid_bounds)},
            "tolerances": asdict(self.tolerances),
            "seed": self.seed,
            "output": {"path": self.output_path, "format": self.output_format},
        }
        if self.probe is not None:
            out["probe"] = self.probe.to_dict()
        if self.etas is not None:
            out["loss"]["etas"] = list(self.etas)
        if self.eta_prime is not None:
            out["eta_prime"] = list(self.eta_prime)
        if self.ecb is not None:
            out["ecb"] = asdict(self.ecb)
        return out


def _floats(v):
    if isinstance(v, (int, float)):
        return (float(v),)
    return tuple(float(x) for x in v)


def load_config(path):
    text = Path(path).read_text()
    try:
        data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return ScenarioConfig.from_dict(data)
