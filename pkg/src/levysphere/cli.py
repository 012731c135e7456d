"""Command-line interface: ``levysphere sample|converge|render``."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
from dataclasses import replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .basis import CoeffField, degrees
from .config import (ConfigError, RunConfig, experiment_config, help_text, initial_field,
                     noise_spec, parse_config, render_spec)
from .errors import ConfigurationError, LevySphereError, StabilityError
from .harness import EXPERIMENTS, run, write_report
from .noise import (DriverKind, IncrementPath, NoiseSpec, jump_increments, poisson_convolution,
                    sample_increments, sample_jump_times, wiener_convolution)
from .render import render_matrix, write_image, write_matrix_csv
from .solver import Scheme, SolverConfig, em_evolve
from .timegrid import TimeGrid

log = logging.getLogger("levysphere")

MAX_FRAME_STEPS = 100_000


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _jsonable(value):
    if isinstance(value, tuple):
        return [_jsonable(v) for v in value]
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    return value


def write_manifest(out: Path, command: str, cfg: RunConfig, resolved: dict, seed: int,
                   artifacts: list[Path]) -> Path:
    """``manifest.json`` listing every artifact with its sha256 (no timestamps)."""
    manifest = {
        "tool": f"levysphere {__version__}",
        "command": command,
        "config": cfg.source,
        "seed": seed,
        "resolved_config": {k: _jsonable(v) for k, v in sorted(resolved.items())},
        "artifacts": [{"path": p.name, "sha256": _sha256(p)} for p in sorted(artifacts)],
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


# ------------------------------------------------------------------- sample


def frame_grid(times) -> tuple[TimeGrid, list[int]]:
    """Smallest uniform grid on ``[0, max(times)]`` with every frame time as a node."""
    times = [float(t) for t in times]
    if not times or min(times) < 0:
        raise ConfigurationError("frame times must be nonnegative and nonempty")
    T = max(times)
    if T == 0.0:
        return TimeGrid(0.0, 1), [0 for _ in times]
    n = 1
    for t in times:
        n = math.lcm(n, Fraction(t / T).limit_denominator(MAX_FRAME_STEPS).denominator)
    if n > MAX_FRAME_STEPS:
        raise ConfigurationError(f"frame times need more than {MAX_FRAME_STEPS} grid steps")
    grid = TimeGrid(T, n)
    return grid, [grid.index_of(t) for t in times]


def sample_fields(spec: NoiseSpec, cfg: RunConfig, seed: int) -> dict[float, CoeffField]:
    """One sample path (solution or driving noise) at the configured frame times."""
    L = spec.max_degree
    times = cfg.get("times")
    grid, idx = frame_grid(times)
    target = cfg.get("target").strip().lower()
    if target == "noise":
        if grid.h == 0.0:
            return {t: CoeffField.zeros(L) for t in times}
        path = sample_increments(spec, grid, seed, 0, L).path()
        return {t: CoeffField(L, path[k]) for t, k in zip(times, idx)}
    if target != "solution":
        raise ConfigError(f"unknown target {target!r}", "target", cfg.lines.get("target"),
                          cfg.source)
    x0 = initial_field(cfg, L) or CoeffField.zeros(L)
    method = cfg.get("method").strip().lower()
    if method == "exact":
        out = {}
        wiener = wiener_convolution(spec, grid, seed, 0, L) if spec.has_wiener else None
        jumps = sample_jump_times(spec, grid.T, seed, 0, L) if spec.has_poisson else None
        lam = degrees(L) * (degrees(L) + 1.0)
        for t, k in zip(times, idx):
            x = np.exp(-lam * grid.time(k)) * x0.coeffs
            if wiener is not None:
                x = x + wiener[k]
            if jumps is not None:
                x = x + poisson_convolution(spec, jumps, grid.time(k), L)
            out[t] = CoeffField(L, x)
        return out
    scheme = Scheme.parse(method)
    if scheme.is_exact:
        raise ConfigError(f"unknown sampling method {method!r}", "method",
                          cfg.lines.get("method"), cfg.source)
    refine = max(1, math.ceil(cfg.get("steps") / grid.n))
    fine = TimeGrid(grid.T, grid.n * refine)
    if fine.h == 0.0:
        return {t: x0 for t in times}
    # the Poisson part steps through the same jump record the exact method
    # uses, so both methods see the same jumps for a given seed
    inc = np.zeros((fine.n, x0.coeffs.size))
    if spec.has_wiener:
        inc += sample_increments(replace(spec, kind=DriverKind.WIENER), fine, seed, 0, L).increments
    if spec.has_poisson:
        inc += jump_increments(spec, sample_jump_times(spec, fine.T, seed, 0, L), fine).increments
    inc = IncrementPath(fine, inc, L)
    path = em_evolve(SolverConfig(L, scheme, cfg.get("coupling_cap")), fine, x0, inc,
                     keep=[k * refine for k in idx])
    return {t: path.field(k * refine) for t, k in zip(times, idx)}


def _render_frames(fields: dict, rspec, out: Path, prefix: str, csv: bool) -> list[Path]:
    paths = []
    for i, (t, fld) in enumerate(sorted(fields.items())):
        mat = render_matrix(fld, rspec)
        stem = f"{prefix}_{i:02d}_t{t:g}"
        paths.append(write_image(mat, rspec, out / f"{stem}.ppm"))
        if csv:
            paths.append(write_matrix_csv(mat, out / f"{stem}.csv"))
    return paths


def cmd_sample(cfg: RunConfig, out: Path, seed: int | None) -> int:
    seed = cfg.get("seed") if seed is None else seed
    spec = noise_spec(cfg)
    rspec = render_spec(cfg)
    csv = cfg.get("matrix_csv")
    fields = sample_fields(spec, cfg, seed)
    artifacts = _render_frames(fields, rspec, out, f"{spec.kind.value}", csv)
    if cfg.get("shared_samples") and spec.kind is DriverKind.MIXTURE:
        # the Wiener and Poisson parts draw from separate streams, so the
        # components with the same seed sum exactly to the mixture path
        for part in (DriverKind.WIENER, DriverKind.POISSON):
            comp = sample_fields(replace(spec, kind=part), cfg, seed)
            artifacts += _render_frames(comp, rspec, out, f"component_{part.value}", csv)
    resolved = cfg.resolved()
    resolved["seed"] = seed
    write_manifest(out, "sample", cfg, resolved, seed, artifacts)
    print(f"wrote {len(artifacts)} files to {out}")
    return 0


# ----------------------------------------------------------------- converge


def cmd_converge(kind: str, cfg: RunConfig, out: Path, seed: int | None, threads: int,
                 gate: bool) -> int:
    config = experiment_config(cfg, kind, seed=seed, threads=threads)
    report = run(kind, config)
    resolved = cfg.resolved(kind)
    resolved["seed"] = config.seed
    resolved["alpha"] = config.noise.alpha
    resolved["weak_coupling"] = "common driving paths" if config.estimator == "coupled" \
        else "independent samples"
    artifacts = write_report(report, out / f"{kind}.csv", resolved)
    write_manifest(out, f"converge {kind}", cfg, resolved, config.seed, artifacts)
    ok = report.within_tolerance()
    print(report.summary() + ("" if ok else f"  [outside tolerance {config.tolerance:g}]"))
    return 1 if gate and not ok else 0


# ------------------------------------------------------------------- render


def field_from_config(cfg: RunConfig) -> CoeffField:
    entries: dict[tuple[int, int], float] = {}
    text = cfg.get("modes").strip()
    if text:
        for item in text.split(","):
            try:
                l_, m_, v_ = item.split(":")
                entries[int(l_), int(m_)] = float(v_)
            except ValueError:
                raise ConfigError(f"bad mode entry {item!r}; expected l:m:value", "modes",
                                  cfg.lines.get("modes"), cfg.source) from None
    path = cfg.get("coeff_file").strip()
    if path:
        base = Path(cfg.source).parent if cfg.source else Path(".")
        try:
            rows = np.loadtxt(base / path, ndmin=2)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read coefficients: {exc}", "coeff_file",
                              cfg.lines.get("coeff_file"), cfg.source) from None
        for l_, m_, v_ in rows:
            entries[int(l_), int(m_)] = entries.get((int(l_), int(m_)), 0.0) + float(v_)
    if not entries:
        raise ConfigError("render needs 'modes' or 'coeff_file'", "modes", source=cfg.source)
    L = max(l_ for l_, _ in entries)
    try:
        return CoeffField.from_modes(L, entries)
    except LevySphereError as exc:
        raise ConfigError(str(exc), "modes", cfg.lines.get("modes"), cfg.source) from None


def cmd_render(cfg: RunConfig, out: Path) -> int:
    fld = field_from_config(cfg)
    rspec = render_spec(cfg)
    mat = render_matrix(fld, rspec)
    artifacts = [write_image(mat, rspec, out / "render.ppm")]
    if cfg.get("matrix_csv"):
        artifacts.append(write_matrix_csv(mat, out / "render.csv"))
    write_manifest(out, "render", cfg, cfg.resolved(), cfg.get("seed"), artifacts)
    print(f"wrote {out / 'render.ppm'}")
    return 0


# --------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, metavar="PATH", help="key=value config file")
    common.add_argument("--out", required=True, metavar="DIR", help="output directory")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--threads", type=int, default=1, metavar="N",
                        help="worker threads (results do not depend on it)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="levysphere", description="Stochastic heat equation on the sphere with Levy noise.",
        epilog=help_text(), formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("sample", parents=[common], help="sample one path and render frames",
                   epilog=help_text(), formatter_class=argparse.RawDescriptionHelpFormatter)
    conv = sub.add_parser("converge", parents=[common], help="run a convergence study",
                          epilog=help_text(), formatter_class=argparse.RawDescriptionHelpFormatter)
    conv.add_argument("kind", choices=EXPERIMENTS)
    conv.add_argument("--gate", action="store_true",
                      help="exit 1 when a fitted slope misses its expected value")
    sub.add_parser("render", parents=[common], help="render a coefficient field",
                   epilog=help_text(), formatter_class=argparse.RawDescriptionHelpFormatter)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    out = Path(args.out)
    try:
        cfg = parse_config(args.config)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "sample":
            return cmd_sample(cfg, out, args.seed)
        if args.command == "converge":
            return cmd_converge(args.kind, cfg, out, args.seed, args.threads, args.gate)
        return cmd_render(cfg, out)
    except StabilityError as exc:
        print(f"stability error: {exc}", file=sys.stderr)
        return 2
    except (ConfigurationError, LevySphereError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
