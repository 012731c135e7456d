"""Flat ``key=value`` run configuration files.

One setting per line, ``#`` starts a comment, blank lines are ignored.
Unknown keys, repeated keys and malformed values are rejected with the
offending key and line number. ``kind`` is the only required key; the
noise decay is given either as ``alpha`` or as a Sobolev index ``eta``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .basis import CoeffField, degrees, num_coeffs
from .errors import ConfigurationError
from .harness import (ExperimentConfig, Level, alpha_from_eta, dyadic_levels, em_levels)
from .noise import INITIAL_CONDITION, DriverKind, NoiseSpec, stream
from .render import RenderSpec
from .solver import Scheme


class ConfigError(ConfigurationError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None,
                 source: str | None = None):
        where = []
        if source:
            where.append(str(source))
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        super().__init__(f"{': '.join(where)}: {message}" if where else message)
        self.key = key
        self.line = line


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _range(text: str):
    if text.strip().lower() == "auto":
        return None
    lo, hi = _floats(text)
    return (lo, hi)


def _opt_float(text: str):
    return None if text.strip().lower() in ("", "none", "default") else float(text)


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    doc: str


SCHEMA: dict[str, Key] = {
    # noise
    "kind": Key(lambda s: DriverKind.parse(s).value, None,
                "driver: wiener, poisson, mixture or shared_poisson (required)"),
    "alpha": Key(float, None, "decay exponent, a_l = l^(-alpha/2); alpha > 0"),
    "eta": Key(float, None, "Sobolev index; alternative to alpha, alpha = 2(eta + 1.05)"),
    "max_degree": Key(int, 32, "highest noise degree for sampling runs"),
    "intensity": Key(float, 1.0, "Poisson jump intensity"),
    "jump_size": Key(float, 1.0, "Poisson jump height"),
    "wiener_var": Key(float, 1.0, "variance rate of the Wiener part"),
    "a0": Key(float, 1.0, "amplitude of the l=0 mode"),
    "compensated": Key(_bool, False, "subtract the Poisson mean"),
    # experiments
    "experiment": Key(str, None, "convergence study this file is meant for"),
    "level_min": Key(int, None, "first level exponent: kappa = 2^j (spectral, weak) or m (EM)"),
    "level_max": Key(int, None, "last level exponent"),
    "reference_kappa": Key(int, None, "reference degree (spectral, weak)"),
    "reference_steps": Key(int, None, "reference step count, recorded only (EM is exact in time)"),
    "T": Key(float, 1.0, "time horizon"),
    "mc_samples": Key(int, 20, "Monte Carlo samples (weak)"),
    "test_powers": Key(_floats, (2.0, 3.0, 4.0, 5.0, 6.0), "powers p of ||X||^p (weak)"),
    "seed": Key(int, 0, "base seed"),
    "expected_exponent": Key(_opt_float, None, "expected slope; default from alpha"),
    "tolerance": Key(float, 0.15, "allowed |slope - expected| for --gate"),
    "fit_skip": Key(int, 2, "coarse levels left out of the slope fit"),
    "scheme": Key(lambda s: Scheme.parse(s).value, "backward", "EM scheme: backward or forward"),
    "coupling_cap": Key(_opt_float, None, "C_c in kappa(kappa+1)h <= C_c (default 1.5 backward, 1 forward)"),
    "estimator": Key(str, "coupled", "weak estimator: coupled or independent"),
    # initial condition
    "x0": Key(str, "zero", "initial condition: zero or rough"),
    "x0_alpha": Key(float, 1.0, "decay exponent of the rough initial condition"),
    "x0_scale": Key(float, 1.0, "amplitude of the rough initial condition"),
    # sampling and rendering
    "times": Key(_floats, (0.0005, 0.0025, 0.005, 0.05), "frame times"),
    "steps": Key(int, 64, "time steps for EM sampling"),
    "target": Key(str, "solution", "what sample renders: solution X(t) or noise L(t)"),
    "method": Key(str, "exact", "sampling method: exact, backward or forward"),
    "shared_samples": Key(_bool, False, "also render the Wiener and Poisson parts of a mixture"),
    "n_theta": Key(int, 256, "image rows"),
    "n_phi": Key(int, 512, "image columns"),
    "cmap": Key(str, "diverging", "grayscale or diverging"),
    "value_range": Key(_range, None, "auto or lo,hi"),
    "transform": Key(str, "exp_normalized", "identity or exp_normalized"),
    "modes": Key(str, "", "field for render: l:m:value entries separated by commas"),
    "coeff_file": Key(str, "", "field for render: text file of 'l m value' lines"),
    "matrix_csv": Key(_bool, False, "also dump the rendered matrix as CSV"),
}

# per-study defaults used when the file leaves the key out
KIND_DEFAULTS: dict[str, dict[str, Any]] = {
    "spectral-strong": {"level_min": 0, "level_max": 9, "reference_kappa": 1024},
    "spectral-mean": {"level_min": 0, "level_max": 9, "reference_kappa": 1024, "tolerance": 0.2},
    "spectral-m2": {"level_min": 0, "level_max": 9, "reference_kappa": 1024, "tolerance": 0.2},
    "em-strong": {"level_min": 1, "level_max": 10, "reference_kappa": 128,
                  "reference_steps": 4**7, "tolerance": 0.1},
    "em-mean": {"level_min": 1, "level_max": 10, "T": 0.05},
    "em-m2": {"level_min": 1, "level_max": 10, "reference_kappa": 128, "reference_steps": 4**7},
    "weak": {"level_min": 0, "level_max": 7, "reference_kappa": 256},
}


@dataclass(frozen=True)
class RunConfig:
    """Parsed file: explicit values plus their line numbers."""

    values: dict = field(default_factory=dict)
    lines: dict = field(default_factory=dict)
    source: str | None = None

    def get(self, key: str, kind: str | None = None):
        if key in self.values:
            return self.values[key]
        if kind is not None and key in KIND_DEFAULTS.get(kind, {}):
            return KIND_DEFAULTS[kind][key]
        return SCHEMA[key].default

    def resolved(self, kind: str | None = None) -> dict:
        """Every key with its effective value (for manifests)."""
        return {k: self.get(k, kind) for k in SCHEMA}

    @property
    def noise(self) -> NoiseSpec:
        return noise_spec(self)


def parse_text(text: str, source: str | None = None) -> RunConfig:
    values: dict = {}
    lines: dict = {}
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected key=value", line=no, source=source)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError("unknown key", key, no, source)
        if key in values:
            raise ConfigError(f"repeated key (first set on line {lines[key]})", key, no, source)
        try:
            values[key] = SCHEMA[key].parse(value)
        except (ValueError, ConfigurationError) as exc:
            raise ConfigError(f"bad value {value!r}: {exc}", key, no, source) from None
        lines[key] = no
    cfg = RunConfig(values, lines, source)
    if "kind" not in values:
        raise ConfigError("missing required key", "kind", source=source)
    if "alpha" in values and "eta" in values:
        raise ConfigError("give either alpha or eta, not both", "eta", lines["eta"], source)
    noise_spec(cfg)  # validate early
    return cfg


def parse_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror or exc}", source=str(path)) from None
    return parse_text(text, str(path))


def _fail(cfg: RunConfig, key: str, message: str):
    raise ConfigError(message, key, cfg.lines.get(key), cfg.source)


def noise_spec(cfg: RunConfig, max_degree: int | None = None) -> NoiseSpec:
    if "alpha" in cfg.values:
        alpha = cfg.values["alpha"]
        if not alpha > 0:
            _fail(cfg, "alpha", f"alpha must be > 0, got {alpha}")
    elif "eta" in cfg.values:
        try:
            alpha = alpha_from_eta(cfg.values["eta"])
        except ConfigurationError as exc:
            _fail(cfg, "eta", str(exc))
    else:
        raise ConfigError("missing required key (or give eta)", "alpha", source=cfg.source)
    try:
        return NoiseSpec(
            kind=cfg.get("kind"), alpha=alpha,
            max_degree=cfg.get("max_degree") if max_degree is None else max_degree,
            intensity=cfg.get("intensity"), jump_size=cfg.get("jump_size"),
            wiener_var=cfg.get("wiener_var"), a0=cfg.get("a0"),
            compensated=cfg.get("compensated"))
    except ConfigurationError as exc:
        raise ConfigError(str(exc), source=cfg.source) from None


def initial_field(cfg: RunConfig, max_degree: int) -> CoeffField | None:
    """Deterministic initial condition (``None`` for zero).

    ``x0=rough`` draws fixed Gaussian coefficients scaled by
    ``x0_scale * l^(-x0_alpha/2)`` from the initial-condition stream of the
    seed, drawn at ``max_degree`` so coarser truncations agree.
    """
    choice = cfg.get("x0").strip().lower()
    if choice == "zero":
        return None
    if choice != "rough":
        _fail(cfg, "x0", f"unknown initial condition {choice!r}")
    deg = degrees(max_degree).astype(float)
    scale = np.where(deg == 0, 1.0, np.maximum(deg, 1.0) ** (-cfg.get("x0_alpha") / 2.0))
    g = stream(cfg.get("seed"), INITIAL_CONDITION, 0).standard_normal(num_coeffs(max_degree))
    return CoeffField(max_degree, cfg.get("x0_scale") * scale * g)


def experiment_config(cfg: RunConfig, kind: str, seed: int | None = None,
                      threads: int = 1) -> ExperimentConfig:
    declared = cfg.values.get("experiment")
    if declared is not None and declared != kind:
        _fail(cfg, "experiment", f"file is for {declared!r}, not {kind!r}")
    get = lambda key: cfg.get(key, kind)  # noqa: E731
    lo, hi = get("level_min"), get("level_max")
    if lo is None or hi is None or lo > hi or lo < 0:
        _fail(cfg, "level_max", f"need 0 <= level_min <= level_max, got {lo}..{hi}")
    scheme = Scheme(get("scheme"))
    if kind.startswith("em-"):
        levels = em_levels(lo, hi, scheme)
        # the EM studies compare against the exact solution at the same kappa
        ref_k, reference = None, None
    else:
        levels = dyadic_levels(lo, hi)
        ref_k = get("reference_kappa")
        if ref_k is None:
            _fail(cfg, "reference_kappa", "a reference degree is required")
        reference = Level(ref_k)
    top = max(ref_k or 0, levels[-1].kappa)
    try:
        return ExperimentConfig(
            noise=noise_spec(cfg, top), levels=levels, reference=reference, T=get("T"),
            mc_samples=get("mc_samples"), test_powers=get("test_powers"),
            seed=get("seed") if seed is None else seed,
            expected_exponent=get("expected_exponent"), tolerance=get("tolerance"),
            fit_skip=get("fit_skip"), scheme=scheme, coupling_cap=get("coupling_cap"),
            x0=initial_field(cfg, top), estimator=get("estimator"), threads=threads)
    except ConfigError:
        raise
    except ConfigurationError as exc:
        raise ConfigError(str(exc), source=cfg.source) from None


def render_spec(cfg: RunConfig) -> RenderSpec:
    try:
        return RenderSpec(cfg.get("n_theta"), cfg.get("n_phi"), cfg.get("cmap"),
                          cfg.get("value_range"), cfg.get("transform"))
    except (ConfigurationError, ValueError) as exc:
        raise ConfigError(str(exc), source=cfg.source) from None


def help_text() -> str:
    width = max(map(len, SCHEMA))
    rows = [f"  {k.ljust(width)}  {v.doc} (default: {v.default!r})" for k, v in SCHEMA.items()]
    return "config keys:\n" + "\n".join(rows)
