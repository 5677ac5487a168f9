"""Scenario configuration: schema parsing and the built-in figure scenarios.

A scenario is read from a nested mapping (YAML on disk):

    name: my_run
    params:  {gamma1: 1, gamma2: 1, gamma3: 1, gamma4: 1}
    pulse_alpha: {kind: gaussian, sigma: 0.5, delay: 0}
    pulse_beta:  {kind: exponential, kappa: 0.2, delay: 10}
    engine: all            # gdm | liouvillian | analytic | all
    integration: {dt: null, method: rk4}

Pulse kinds: ``gaussian`` (sigma, mu), ``exponential`` (kappa, or width =
1/kappa), ``tabulated`` (path to a time,Re,Im CSV). Every kind accepts
``delay`` and ``detuning``. A missing pulse entry (or ``null``) means no
photon in that mode.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import yaml

from .model import MoleculeParams, ParameterError, validate
from .pulses import ExponentialDecay, Gaussian, PulseEnvelope, PulseError, Tabulated

ENGINES = ("gdm", "liouvillian", "analytic", "all")
METHODS = ("rk4", "adaptive", "expm")


class ConfigError(ValueError):
    """Schema violation; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class Scenario:
    name: str
    params: MoleculeParams
    pulse_alpha: PulseEnvelope | None
    pulse_beta: PulseEnvelope | None
    engine: str = "all"
    dt: float | None = None
    method: str = "rk4"
    notes: tuple[str, ...] = ()

    @property
    def pulses(self) -> tuple[PulseEnvelope | None, PulseEnvelope | None]:
        return (self.pulse_alpha, self.pulse_beta)


# ------------------------------------------------------------------ parsing


def _number(d: Mapping, key: str, path: str, default=None, positive=False):
    if key not in d or d[key] is None:
        if default is None:
            raise ConfigError(f"{path}.{key}", "required")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}.{key}", f"expected a number, got {v!r}")
    if positive and not v > 0:
        raise ConfigError(f"{path}.{key}", "must be positive")
    return float(v)


_PULSE_KEYS = {
    "gaussian": {"kind", "sigma", "mu", "delay", "detuning"},
    "exponential": {"kind", "kappa", "width", "delay", "detuning"},
    "tabulated": {"kind", "path", "delay", "detuning"},
}


def parse_pulse(d: Any, path: str, base: Path | None = None) -> PulseEnvelope | None:
    if d is None:
        return None
    if not isinstance(d, Mapping):
        raise ConfigError(path, "expected a mapping")
    kind = d.get("kind")
    if kind not in _PULSE_KEYS:
        raise ConfigError(f"{path}.kind", f"expected one of {sorted(_PULSE_KEYS)}, got {kind!r}")
    extra = set(d) - _PULSE_KEYS[kind]
    if extra:
        raise ConfigError(f"{path}.{sorted(extra)[0]}", f"unknown key for a {kind} pulse")
    delay = _number(d, "delay", path, 0.0)
    detuning = _number(d, "detuning", path, 0.0)
    try:
        if kind == "gaussian":
            return Gaussian(sigma=_number(d, "sigma", path, positive=True), mu=_number(d, "mu", path, 0.0), delay=delay, detuning=detuning)
        if kind == "exponential":
            if "width" in d and d["width"] is not None:
                kappa = 1.0 / _number(d, "width", path, positive=True)
            else:
                kappa = _number(d, "kappa", path, positive=True)
            return ExponentialDecay(kappa=kappa, delay=delay, detuning=detuning)
        p = d.get("path")
        if not isinstance(p, str):
            raise ConfigError(f"{path}.path", "expected a file path")
        full = Path(p) if base is None or Path(p).is_absolute() else base / p
        return Tabulated.from_csv(full, delay=delay, detuning=detuning)
    except PulseError as exc:
        raise ConfigError(path, str(exc)) from None
    except OSError as exc:
        raise ConfigError(f"{path}.path", str(exc)) from None


def parse_params(d: Any, path: str = "params") -> MoleculeParams:
    if d is None:
        return MoleculeParams()
    if not isinstance(d, Mapping):
        raise ConfigError(path, "expected a mapping")
    allowed = {"gamma1", "gamma2", "gamma3", "gamma4", "omega01", "omega23"}
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"{path}.{sorted(extra)[0]}", "unknown parameter")
    kw = {k: _number(d, k, path, 1.0 if k.startswith("gamma") else 0.0) for k in allowed}
    try:
        return validate(MoleculeParams(**kw))
    except ParameterError as exc:
        raise ConfigError(path, str(exc)) from None


_TOP_KEYS = {"name", "params", "pulse_alpha", "pulse_beta", "engine", "integration", "notes"}


def parse_scenario(d: Any, base: Path | None = None) -> Scenario:
    if not isinstance(d, Mapping):
        raise ConfigError("<root>", "expected a mapping")
    extra = set(d) - _TOP_KEYS - {"sweep", "povm"}
    if extra:
        raise ConfigError(sorted(extra)[0], "unknown key")
    engine = d.get("engine", "all")
    if engine not in ENGINES:
        raise ConfigError("engine", f"expected one of {ENGINES}, got {engine!r}")
    integ = d.get("integration") or {}
    if not isinstance(integ, Mapping):
        raise ConfigError("integration", "expected a mapping")
    method = integ.get("method", "rk4")
    if method not in METHODS:
        raise ConfigError("integration.method", f"expected one of {METHODS}, got {method!r}")
    dt = integ.get("dt")
    if dt is not None:
        dt = _number(integ, "dt", "integration", positive=True)
    pa = parse_pulse(d.get("pulse_alpha"), "pulse_alpha", base)
    pb = parse_pulse(d.get("pulse_beta"), "pulse_beta", base)
    if pa is None and pb is None:
        raise ConfigError("pulse_alpha", "at least one pulse is required")
    name = str(d.get("name", "custom"))
    notes = tuple(str(n) for n in d.get("notes", ()) or ())
    return Scenario(name, parse_params(d.get("params")), pa, pb, engine, dt, method, notes)


def load_config(path: str | Path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(path), str(exc)) from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(str(path), f"not valid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("<root>", "expected a mapping at the top level")
    return data


def set_path(d: dict, dotted: str, value) -> dict:
    """Copy of ``d`` with the dotted key set (intermediate mappings created)."""
    out = copy.deepcopy(d)
    cur = out
    keys = dotted.split(".")
    for k in keys[:-1]:
        nxt = cur.get(k)
        if nxt is None:
            nxt = cur[k] = {}
        elif not isinstance(nxt, dict):
            raise ConfigError(dotted, f"{k} is not a mapping")
        cur = nxt
    cur[keys[-1]] = value
    return out


# ------------------------------------------------------------------ built-ins

FIG2_SIGMA = 0.5
FIG5_KAPPA = 0.2

_NAMED: dict[str, dict] = {
    "fig2": {
        "name": "fig2",
        "pulse_alpha": {"kind": "gaussian", "sigma": FIG2_SIGMA, "delay": 0.0},
        "pulse_beta": {"kind": "gaussian", "sigma": FIG2_SIGMA, "delay": 3.0},
        "integration": {"dt": 1 / 160},
        "notes": [
            "caption width 1/(2 gamma1) read as the standard deviation of |u|^2",
            "expected steady (P0, P2+P4, P4) = (0.346, 0.654, 0.418)",
        ],
    },
    "fig3": {
        "name": "fig3",
        "pulse_alpha": {"kind": "gaussian", "sigma": FIG2_SIGMA, "delay": 0.0},
        "pulse_beta": {"kind": "gaussian", "sigma": FIG2_SIGMA, "delay": -0.25},
        "integration": {"dt": 1 / 160},
        "notes": [
            "expected steady P4 = 0.022",
            "first-photon detection P2+P4 equals the fig2 value 0.654; the figure caption quotes 0.346, which is the fig2 ground-state value",
        ],
    },
    "fig5": {
        "name": "fig5",
        "pulse_alpha": {"kind": "exponential", "kappa": FIG5_KAPPA},
        "pulse_beta": {"kind": "exponential", "kappa": FIG5_KAPPA, "delay": 10.0},
        "notes": ["P2 + P4 = 10/11 for every delay", "P4 -> 100/121 only as the delay grows without bound"],
    },
    "fig6_7": {
        "name": "fig6_7",
        "pulse_alpha": {"kind": "exponential", "kappa": FIG5_KAPPA},
        "pulse_beta": {"kind": "exponential", "kappa": 0.05},
        "notes": ["longer second photon (smaller kappa2) moves population from F2 to F4"],
    },
    "fig8": {
        "name": "fig8",
        "pulse_alpha": {"kind": "gaussian", "sigma": 1.0},
        "pulse_beta": {"kind": "gaussian", "sigma": 0.5, "delay": 1.0},
        "integration": {"dt": 1 / 160},
    },
    "fig9": {
        "name": "fig9",
        "pulse_alpha": {"kind": "gaussian", "sigma": 1.0},
        "pulse_beta": {"kind": "exponential", "kappa": 0.5, "delay": 0.5},
        "integration": {"dt": 1 / 160},
        "notes": ["delay measured from the Gaussian centre to the onset of the exponential"],
    },
}

NAMED = tuple(_NAMED)

# sweep grids attached to the figure scenarios
FIG5_DELAYS = (0.0, 1.0, 2.0, 5.0, 10.0, 20.0, 40.0, 80.0)
FIG6_7_KAPPAS = (0.2, 0.1, 0.05, 0.02)
FIG8_SIGMAS = (0.25, 0.5, 1.0, 2.0, 4.0)
FIG8_DELAYS = (0.0, 1.0, 3.0, 5.0)
FIG9_SIGMAS = (0.25, 0.5, 1.0, 2.0, 4.0)
FIG9_WIDTHS = (0.5, 1.0, 2.0, 4.0, 8.0)
FIG9_DELAYS = (0.0, 0.5)


def named_config(name: str) -> dict:
    """Fresh copy of a built-in configuration mapping."""
    if name not in _NAMED:
        raise ConfigError("scenario", f"unknown scenario {name!r}; built-ins are {', '.join(NAMED)}")
    return copy.deepcopy(_NAMED[name])


def named(name: str) -> Scenario:
    return parse_scenario(named_config(name))


def dump_config(d: Mapping) -> str:
    return yaml.safe_dump(dict(d), sort_keys=False)
