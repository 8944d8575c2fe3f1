"""Scenario files: INI sections ``model``, ``state``, ``control``,
``integrator``, ``output`` and optionally ``portrait``."""

from __future__ import annotations

import configparser
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .dynamics import IntegratorConfig
from .exceptions import ConfigError, EpictrlError
from .rates import ModelInstance, RateModel, model_from_spec
from .state import check_state

SCENARIOS = ("fig1", "phase-portrait", "counterexample", "classical-sir")
_INTEGRATOR_KEYS = {"step": float, "event_bisection_tol": float,
                    "extinction_eps": float, "max_time": float, "record_every": int}


@dataclass
class ScenarioConfig:
    name: str
    rate: RateModel
    gamma: float
    x0: float
    y0: float
    ybar: float
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    out_dir: str = "out"
    seed: int = 42
    ybar_high: float | None = None
    orbits: int = 0

    @property
    def model(self) -> ModelInstance:
        return ModelInstance(self.rate, self.gamma)

    @property
    def s0(self) -> tuple[float, float]:
        return (self.x0, self.y0)


def bundled_path(name: str) -> Path:
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    return Path(str(resources.files("epictrl") / "scenarios" / f"{name}.ini"))


def load_scenario(name: str) -> ScenarioConfig:
    return load_config(bundled_path(name), name)


def load_config(path, name: str | None = None) -> ScenarioConfig:
    """Parse a scenario file.

    Raises
    ------
    ConfigError
        On unreadable files, missing keys or invalid values.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        return _build(cp, name or Path(path).stem)
    except ConfigError:
        raise
    except (KeyError, ValueError, EpictrlError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _build(cp: configparser.ConfigParser, name: str) -> ScenarioConfig:
    for sec in ("model", "state", "control"):
        if not cp.has_section(sec):
            raise ConfigError(f"missing [{sec}] section")
    model = dict(cp["model"])
    kind = model.pop("kind")
    gamma = float(model.pop("gamma"))
    params = {k: v.strip().strip('"') for k, v in model.items()}
    if "a" in params:
        params["a"] = float(params["a"])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rate = model_from_spec(kind, params)
    ModelInstance(rate, gamma)

    x0, y0 = check_state((cp["state"].getfloat("x0"), cp["state"].getfloat("y0")))
    ctl = cp["control"]
    ybar = ctl.getfloat("ybar")
    if not 0 < ybar <= 1:
        raise ConfigError(f"ybar must lie in (0, 1], got {ybar}")
    ybar_high = ctl.getfloat("ybar_high") if "ybar_high" in ctl else None

    over = {}
    if cp.has_section("integrator"):
        for k, v in cp["integrator"].items():
            if k not in _INTEGRATOR_KEYS:
                raise ConfigError(f"unknown integrator key {k!r}")
            over[k] = _INTEGRATOR_KEYS[k](float(v))
    out = cp["output"] if cp.has_section("output") else {}
    orbits = cp["portrait"].getint("orbits", 0) if cp.has_section("portrait") else 0
    return ScenarioConfig(name, rate, gamma, x0, y0, ybar, IntegratorConfig(**over),
                          out.get("directory", f"out/{name}"), int(out.get("seed", 42)),
                          ybar_high, orbits)
