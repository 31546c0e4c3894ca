"""Flat key-value experiment configuration.

One dotted key per line (`mc.seed=42`), UTF-8, LF; no format library on
purpose so reports can echo the resolved config and tests can diff runs
byte-exactly. Blank lines and `#` comments are allowed. Every failure
carries the offending line number.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

from .domain import ConfigurationError
from .scenarios import SCENARIO_NAMES

__all__ = ["ExperimentConfig", "ConfigurationError", "parse_config",
           "parse_config_text", "render_config", "OPERATIONS", "FORMATS"]

OPERATIONS = ("verdict", "expectation", "finite-qv", "consistency", "feller", "convergence")
FORMATS = ("json", "csv", "text")

_SCENARIO_OVERRIDE_KEYS = ("h", "horizon", "k_max", "n_max", "T", "branch")


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    operation: str
    seed: int
    overrides: tuple = ()          # sorted (key, value) pairs for the scenario
    times: tuple = (1.0,)
    n: int = 10_000
    h: Optional[float] = None      # None: scenario default
    k_max: Optional[float] = None
    n_max: Optional[int] = None
    workers: int = 1
    delta: float = 1e-3
    out_path: Optional[str] = None
    out_format: str = "json"
    conv_h: tuple = ()             # convergence step schedule, descending
    conv_n: tuple = ()             # convergence path-count schedule
    conv_t: float = 1.0


def _fail(lineno, msg):
    where = f"line {lineno}: " if lineno is not None else ""
    raise ConfigurationError(where + msg)


def _parse_float(raw, lineno, key, positive=True):
    try:
        v = float(raw)
    except ValueError:
        _fail(lineno, f"{key} expects a number, got {raw!r}")
    if positive and not v > 0:
        _fail(lineno, f"{key} must be positive, got {raw}")
    return v


def _parse_int(raw, lineno, key, minimum=None):
    try:
        v = int(raw, 10)
    except ValueError:
        _fail(lineno, f"{key} expects an integer, got {raw!r}")
    if minimum is not None and v < minimum:
        _fail(lineno, f"{key} must be >= {minimum}, got {v}")
    return v


def _parse_list(raw, lineno, key, kind=float):
    items = [s.strip() for s in raw.split(",") if s.strip()]
    if not items:
        _fail(lineno, f"{key} expects a comma-separated list, got {raw!r}")
    out = []
    for s in items:
        try:
            out.append(kind(s))
        except ValueError:
            _fail(lineno, f"{key} entry {s!r} is not a {kind.__name__}")
    return tuple(out)


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    seen = {}
    lines = {}
    for lineno, rawline in enumerate(text.splitlines(), start=1):
        line = rawline.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            _fail(lineno, f"expected key=value, got {rawline!r}")
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if key in seen:
            _fail(lineno, f"duplicate key {key!r} (first at line {lines[key]})")
        seen[key] = raw
        lines[key] = lineno

    def take(key):
        return seen.pop(key, None), lines.get(key)

    val, ln = take("scenario")
    if val is None:
        _fail(None, "missing required key: scenario")
    if val not in SCENARIO_NAMES:
        _fail(ln, f"unknown scenario {val!r}; known: {', '.join(SCENARIO_NAMES)}")
    scenario = val

    val, ln = take("operation")
    if val is None:
        _fail(None, "missing required key: operation")
    if val not in OPERATIONS:
        _fail(ln, f"unknown operation {val!r}; known: {', '.join(OPERATIONS)}")
    operation = val

    val, ln = take("mc.seed")
    if val is None:
        # reproducibility is mandatory; never fall back to entropy
        _fail(None, "missing required key: mc.seed")
    seed = _parse_int(val, ln, "mc.seed", minimum=0)

    cfg = dict(scenario=scenario, operation=operation, seed=seed)

    overrides = []
    for key in _SCENARIO_OVERRIDE_KEYS:
        val, ln = take(f"scenario.{key}")
        if val is None:
            continue
        if key == "branch":
            overrides.append((key, val))
        elif key == "n_max":
            overrides.append((key, _parse_int(val, ln, f"scenario.{key}", minimum=2)))
        else:
            overrides.append((key, _parse_float(val, ln, f"scenario.{key}")))
    cfg["overrides"] = tuple(sorted(overrides))

    val, ln = take("times")
    if val is not None:
        times = _parse_list(val, ln, "times")
        if any(t <= 0 for t in times):
            _fail(ln, "times must be positive")
        if list(times) != sorted(times):
            _fail(ln, "times must be sorted ascending")
        cfg["times"] = times

    val, ln = take("mc.N")
    if val is not None:
        cfg["n"] = _parse_int(val, ln, "mc.N", minimum=100)
    val, ln = take("mc.h")
    if val is not None:
        cfg["h"] = _parse_float(val, ln, "mc.h")
    val, ln = take("mc.K_max")
    if val is not None:
        cfg["k_max"] = _parse_float(val, ln, "mc.K_max")
    val, ln = take("mc.N_max")
    if val is not None:
        cfg["n_max"] = _parse_int(val, ln, "mc.N_max", minimum=2)
    val, ln = take("mc.workers")
    if val is not None:
        cfg["workers"] = _parse_int(val, ln, "mc.workers", minimum=1)
    val, ln = take("rule.delta")
    if val is not None:
        d = _parse_float(val, ln, "rule.delta")
        if not d < 1:
            _fail(ln, f"rule.delta must lie in (0, 1), got {d}")
        cfg["delta"] = d

    val, ln = take("output.path")
    if val is not None:
        cfg["out_path"] = val
    val, ln = take("output.format")
    if val is not None:
        if val not in FORMATS:
            _fail(ln, f"unknown output.format {val!r}; known: {', '.join(FORMATS)}")
        cfg["out_format"] = val

    val, ln = take("convergence.h")
    if val is not None:
        hs = _parse_list(val, ln, "convergence.h")
        if list(hs) != sorted(hs, reverse=True) or any(x <= 0 for x in hs):
            _fail(ln, "convergence.h must be positive and descending")
        cfg["conv_h"] = hs
    val, ln = take("convergence.N")
    if val is not None:
        ns = _parse_list(val, ln, "convergence.N", kind=int)
        if any(x < 100 for x in ns):
            _fail(ln, "convergence.N entries must be >= 100")
        cfg["conv_n"] = ns
    val, ln = take("convergence.t")
    if val is not None:
        cfg["conv_t"] = _parse_float(val, ln, "convergence.t")

    if seen:
        key = min(seen, key=lambda k: lines[k])
        _fail(lines[key], f"unknown key {key!r}")

    if operation == "convergence":
        if not cfg.get("conv_h") or not cfg.get("conv_n"):
            _fail(None, "operation convergence needs convergence.h and convergence.N")

    config = ExperimentConfig(**cfg)
    _validate_overrides_against_scenario(config)
    return config


def _validate_overrides_against_scenario(config: ExperimentConfig):
    # delegate detailed validation (allowed keys per scenario, branch values)
    from .scenarios import build_scenario
    build_scenario(config.scenario, dict(config.overrides))


def parse_config(path: str) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, source=path)


def render_config(config: ExperimentConfig) -> str:
    """Canonical flat text for the resolved config; parses back to itself."""
    out = [
        f"scenario={config.scenario}",
    ]
    for key, val in config.overrides:
        out.append(f"scenario.{key}={val:g}" if isinstance(val, float) else f"scenario.{key}={val}")
    out.append(f"operation={config.operation}")
    out.append("times=" + ",".join(f"{t:g}" for t in config.times))
    out.append(f"mc.N={config.n}")
    if config.h is not None:
        out.append(f"mc.h={config.h:g}")
    if config.k_max is not None:
        out.append(f"mc.K_max={config.k_max:g}")
    if config.n_max is not None:
        out.append(f"mc.N_max={config.n_max}")
    out.append(f"mc.seed={config.seed}")
    out.append(f"mc.workers={config.workers}")
    out.append(f"rule.delta={config.delta:g}")
    if config.out_path is not None:
        out.append(f"output.path={config.out_path}")
    out.append(f"output.format={config.out_format}")
    if config.conv_h:
        out.append("convergence.h=" + ",".join(f"{x:g}" for x in config.conv_h))
    if config.conv_n:
        out.append("convergence.N=" + ",".join(str(x) for x in config.conv_n))
    if config.operation == "convergence":
        out.append(f"convergence.t={config.conv_t:g}")
    return "\n".join(out) + "\n"
