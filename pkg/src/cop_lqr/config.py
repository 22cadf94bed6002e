"""Run configuration: a single versioned JSON file driving every workflow.

The file has four blocks.  ``model`` is required and mirrors ModelParams;
``simulation`` mirrors SimConfig; ``oracle`` sizes the verification suites
and optionally a grid dynamic program; ``output`` picks a directory and
formats.  Unknown keys anywhere are rejected so typos cannot silently
fall back to defaults.  Error messages carry the file path and, when the
offending key can be found in the source text, its line number.

Defaults (applied when a key or block is missing):

    simulation: seed=0, n_paths=1000, mode="raw", initial_state q=5 lam=5
    oracle:     enable_grid=false, check_points=200, seed=0,
                argmin_tol=1e-6, bellman_tol=1e-6, raw_folded_tol=1e-10,
                grid_gap_tol=1e-3, grid=null
    output:     directory="out", formats=["csv", "json"]
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

from .lqr import InvalidParams, ModelParams, ExecState, gamma_constant, gamma_linear
from .oracle import GridSpec, OracleError
from .simulator import SimConfig

__all__ = [
    "ConfigError",
    "OracleSettings",
    "OutputSettings",
    "RunConfig",
    "load_config",
    "parse_config",
]

CONFIG_VERSION = 1


class ConfigError(ValueError):
    """Config file is missing, malformed, or fails schema validation."""


@dataclass(frozen=True)
class OracleSettings:
    """Sampling sizes and tolerances for the verification suites."""

    enable_grid: bool = False
    grid: GridSpec | None = None
    check_points: int = 200
    seed: int = 0
    argmin_tol: float = 1e-6
    bellman_tol: float = 1e-6
    raw_folded_tol: float = 1e-10
    grid_gap_tol: float = 1e-3


@dataclass(frozen=True)
class OutputSettings:
    directory: str = "out"
    formats: tuple[str, ...] = ("csv", "json")


@dataclass(frozen=True)
class RunConfig:
    """Everything a subcommand needs, parsed and validated."""

    model: ModelParams
    simulation: SimConfig
    oracle: OracleSettings
    output: OutputSettings


class _Source:
    """Raw config text plus its path, for line-anchored error messages."""

    def __init__(self, path: str, text: str):
        self.path = path
        self.lines = text.splitlines()

    def anchor(self, key: str) -> str:
        pat = re.compile(r'"' + re.escape(key) + r'"\s*:')
        for i, line in enumerate(self.lines, start=1):
            if pat.search(line):
                return f"{self.path}:{i}"
        return self.path

    def fail(self, key: str, message: str) -> "ConfigError":
        return ConfigError(f"{self.anchor(key)}: {message}")


def _require_mapping(src: _Source, key: str, value, where: str) -> dict:
    if not isinstance(value, dict):
        raise src.fail(key, f"{where} must be an object, got {type(value).__name__}")
    return value


def _reject_unknown(src: _Source, block: dict, allowed: set, where: str) -> None:
    unknown = sorted(set(block) - allowed)
    if unknown:
        raise src.fail(
            unknown[0],
            f"unknown key(s) in {where}: {', '.join(unknown)}; "
            f"allowed: {', '.join(sorted(allowed))}",
        )


def _number(src: _Source, block: dict, key: str, where: str, default=None) -> float:
    if key not in block:
        if default is None:
            raise src.fail(where, f"{where}.{key} is required")
        return default
    v = block[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise src.fail(key, f"{where}.{key} must be a number, got {type(v).__name__}")
    return float(v)


def _integer(src: _Source, block: dict, key: str, where: str, default=None) -> int:
    if key not in block:
        if default is None:
            raise src.fail(where, f"{where}.{key} is required")
        return default
    v = block[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise src.fail(key, f"{where}.{key} must be an integer, got {type(v).__name__}")
    return v


def _parse_dt(src: _Source, raw, n_steps: int):
    """dt: a single number (uniform bins) or a list of n_steps numbers."""
    if isinstance(raw, (int, float)) and not isinstance(raw, bool):
        return tuple(float(raw) for _ in range(n_steps))
    if isinstance(raw, list):
        if len(raw) != n_steps:
            raise src.fail("dt", f"model.dt list must have n_steps={n_steps} entries")
        if any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in raw):
            raise src.fail("dt", "model.dt entries must be numbers")
        return tuple(float(v) for v in raw)
    raise src.fail("dt", "model.dt must be a number or a list of numbers")


def _parse_gamma(src: _Source, raw, n_steps: int):
    """gamma: number, list of n_steps numbers, or a schedule object
    {"kind": "constant", "value": g} / {"kind": "linear", "start": a, "stop": b}."""
    if isinstance(raw, (int, float)) and not isinstance(raw, bool):
        return gamma_constant(n_steps, float(raw))
    if isinstance(raw, list):
        if len(raw) != n_steps:
            raise src.fail(
                "gamma", f"model.gamma list must have n_steps={n_steps} entries"
            )
        if any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in raw):
            raise src.fail("gamma", "model.gamma entries must be numbers")
        return tuple(float(v) for v in raw)
    if isinstance(raw, dict):
        kind = raw.get("kind")
        if kind == "constant":
            _reject_unknown(src, raw, {"kind", "value"}, "model.gamma")
            return gamma_constant(n_steps, _number(src, raw, "value", "model.gamma"))
        if kind == "linear":
            _reject_unknown(src, raw, {"kind", "start", "stop"}, "model.gamma")
            return gamma_linear(
                n_steps,
                _number(src, raw, "start", "model.gamma"),
                _number(src, raw, "stop", "model.gamma"),
            )
        raise src.fail("kind", "model.gamma.kind must be 'constant' or 'linear'")
    raise src.fail("gamma", "model.gamma must be a number, list, or schedule object")


def _parse_model(src: _Source, block: dict) -> ModelParams:
    _reject_unknown(
        src, block, {"n_steps", "dt", "gamma", "gamma_terminal", "eta"}, "model"
    )
    n_steps = _integer(src, block, "n_steps", "model")
    for key in ("dt", "gamma", "gamma_terminal", "eta"):
        if key not in block:
            raise src.fail("model", f"model.{key} is required")
    try:
        return ModelParams(
            n_steps=n_steps,
            dt=_parse_dt(src, block["dt"], n_steps),
            gamma=_parse_gamma(src, block["gamma"], n_steps),
            gamma_terminal=_number(src, block, "gamma_terminal", "model"),
            eta=_number(src, block, "eta", "model"),
        )
    except InvalidParams as exc:
        # anchor to the model block so "which file, roughly where" survives
        raise src.fail("model", str(exc)) from exc


def _parse_simulation(src: _Source, block: dict) -> SimConfig:
    _reject_unknown(
        src, block, {"seed", "n_paths", "mode", "initial_state"}, "simulation"
    )
    state_raw = block.get("initial_state", {"q": 5.0, "lam": 5.0})
    state_raw = _require_mapping(src, "initial_state", state_raw, "initial_state")
    _reject_unknown(src, state_raw, {"q", "lam"}, "simulation.initial_state")
    mode = block.get("mode", "raw")
    if not isinstance(mode, str):
        raise src.fail("mode", "simulation.mode must be a string")
    try:
        return SimConfig(
            seed=_integer(src, block, "seed", "simulation", default=0),
            n_paths=_integer(src, block, "n_paths", "simulation", default=1000),
            mode=mode,
            initial_state=ExecState(
                q=_number(src, state_raw, "q", "simulation.initial_state", 5.0),
                lam=_number(src, state_raw, "lam", "simulation.initial_state", 5.0),
            ),
        )
    except InvalidParams as exc:
        raise src.fail("simulation", str(exc)) from exc


_GRID_KEYS = (
    "q_min",
    "q_max",
    "lam_min",
    "lam_max",
    "n_q",
    "n_lam",
    "u_min",
    "u_max",
    "n_u",
)


def _parse_grid(src: _Source, block: dict) -> GridSpec:
    _reject_unknown(src, block, set(_GRID_KEYS), "oracle.grid")
    kwargs = {}
    for key in _GRID_KEYS:
        if key.startswith("n_"):
            kwargs[key] = _integer(src, block, key, "oracle.grid")
        else:
            kwargs[key] = _number(src, block, key, "oracle.grid")
    try:
        return GridSpec(**kwargs)
    except OracleError as exc:
        raise src.fail("grid", str(exc)) from exc


def _parse_oracle(src: _Source, block: dict) -> OracleSettings:
    allowed = {
        "enable_grid",
        "grid",
        "check_points",
        "seed",
        "argmin_tol",
        "bellman_tol",
        "raw_folded_tol",
        "grid_gap_tol",
    }
    _reject_unknown(src, block, allowed, "oracle")
    enable_grid = block.get("enable_grid", False)
    if not isinstance(enable_grid, bool):
        raise src.fail("enable_grid", "oracle.enable_grid must be true or false")
    grid = None
    if block.get("grid") is not None:
        grid = _parse_grid(
            src, _require_mapping(src, "grid", block["grid"], "oracle.grid")
        )
    if enable_grid and grid is None:
        raise src.fail("enable_grid", "oracle.enable_grid requires an oracle.grid")
    check_points = _integer(src, block, "check_points", "oracle", default=200)
    if check_points < 1:
        raise src.fail("check_points", "oracle.check_points must be >= 1")
    settings = OracleSettings(
        enable_grid=enable_grid,
        grid=grid,
        check_points=check_points,
        seed=_integer(src, block, "seed", "oracle", default=0),
        argmin_tol=_number(src, block, "argmin_tol", "oracle", 1e-6),
        bellman_tol=_number(src, block, "bellman_tol", "oracle", 1e-6),
        raw_folded_tol=_number(src, block, "raw_folded_tol", "oracle", 1e-10),
        grid_gap_tol=_number(src, block, "grid_gap_tol", "oracle", 1e-3),
    )
    for key in ("argmin_tol", "bellman_tol", "raw_folded_tol", "grid_gap_tol"):
        if getattr(settings, key) <= 0.0:
            raise src.fail(key, f"oracle.{key} must be > 0")
    return settings


def _parse_output(src: _Source, block: dict) -> OutputSettings:
    _reject_unknown(src, block, {"directory", "formats"}, "output")
    directory = block.get("directory", "out")
    if not isinstance(directory, str) or not directory:
        raise src.fail("directory", "output.directory must be a nonempty string")
    formats = block.get("formats", ["csv", "json"])
    if (
        not isinstance(formats, list)
        or not formats
        or any(f not in ("csv", "json") for f in formats)
    ):
        raise src.fail("formats", "output.formats must be a nonempty list of csv/json")
    return OutputSettings(directory=directory, formats=tuple(formats))


def parse_config(text: str, path: str = "<config>") -> RunConfig:
    """Parse and validate config text; ``path`` labels error messages."""
    src = _Source(path, text)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}:1: top level must be an object")
    _reject_unknown(
        src, doc, {"version", "model", "simulation", "oracle", "output"}, "config"
    )
    version = doc.get("version")
    if version != CONFIG_VERSION:
        raise src.fail(
            "version", f"version must be {CONFIG_VERSION}, got {version!r}"
        )
    if "model" not in doc:
        raise src.fail("model", "missing required block: model")
    model = _parse_model(src, _require_mapping(src, "model", doc["model"], "model"))
    simulation = _parse_simulation(
        src, _require_mapping(src, "simulation", doc.get("simulation", {}), "simulation")
    )
    oracle = _parse_oracle(
        src, _require_mapping(src, "oracle", doc.get("oracle", {}), "oracle")
    )
    output = _parse_output(
        src, _require_mapping(src, "output", doc.get("output", {}), "output")
    )
    return RunConfig(model=model, simulation=simulation, oracle=oracle, output=output)


def load_config(path: str) -> RunConfig:
    """Read and validate the JSON run config at ``path``."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from exc
    return parse_config(text, path)
