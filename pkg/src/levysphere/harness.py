"""Convergence experiments and log-log rate fits.

The strong, mean and second-moment studies are evaluated with the closed
forms in :mod:`levysphere.moments`; only the weak study with test functions
``||X||^p`` (and the optional pathwise cross-check) uses Monte Carlo.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from .basis import CoeffField, degrees, num_coeffs
from .errors import ConfigurationError, UnsupportedDriverError
from .moments import (InitialData, ZERO_INITIAL, em_mean_error_sq, em_second_moment_error,
                      em_strong_error_sq, spectral_error_profile, tail_breakdown)
from .noise import (NoiseSpec, jump_increments, poisson_convolution,
                    sample_jump_times, wiener_convolution)
from .solver import Scheme, SolverConfig, em_evolve, stability_check
from .timegrid import TimeGrid

log = logging.getLogger(__name__)

EXPERIMENTS = ("spectral-strong", "spectral-mean", "spectral-m2",
               "em-strong", "em-mean", "em-m2", "weak")

CSV_HEADER = ("experiment", "level_kappa", "level_h", "p", "error", "slope",
              "slope_stderr", "expected_slope", "seed")

# slack added to the log of alpha when mapping a Sobolev index eta to alpha
ETA_SLACK = 0.05


class Level(NamedTuple):
    """One resolution: truncation degree and number of time steps (``None`` if untimed)."""

    kappa: int
    steps: int | None = None


def dyadic_levels(j_min: int, j_max: int) -> tuple[Level, ...]:
    return tuple(Level(2**j) for j in range(j_min, j_max + 1))


def em_levels(m_min: int, m_max: int, scheme: Scheme = Scheme.BACKWARD_EM) -> tuple[Level, ...]:
    """Coupled schedule ``n = 4**m`` steps with ``kappa = 2**m``.

    The forward scheme uses ``kappa = 2**m - 1`` so that
    ``kappa(kappa+1) h <= 1`` holds for ``T <= 1``.
    """
    scheme = Scheme(scheme)
    shift = 1 if scheme is Scheme.FORWARD_EM else 0
    return tuple(Level(2**m - shift, 4**m) for m in range(m_min, m_max + 1))


def alpha_from_eta(eta: float, slack: float = ETA_SLACK) -> float:
    """Decay exponent whose noise lies in ``H^eta`` (``alpha = 2(eta + 1 + slack)``)."""
    alpha = 2.0 * (eta + 1.0 + slack)
    if not alpha > 0:
        raise ConfigurationError(f"eta={eta} gives a non-positive alpha")
    return alpha


def expected_slope(kind: str, alpha: float) -> float:
    """Theoretical slope of ``log error`` against ``log kappa`` (spectral, weak) or ``log h`` (EM)."""
    table = {
        "spectral-strong": -alpha / 2.0,
        "spectral-mean": -(alpha / 2.0 + 1.0),
        "spectral-m2": -alpha,
        "em-strong": min(alpha / 4.0, 0.5),
        "em-mean": 1.0,
        "em-m2": min(alpha / 2.0, 1.0),
        "weak": -alpha,
    }
    try:
        return table[kind]
    except KeyError:
        raise ConfigurationError(f"unknown experiment {kind!r}") from None


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """Everything one convergence study needs.

    ``reference`` is the fine level (spectral and weak studies only; the EM
    studies compare against the exact truncated solution at the same
    ``kappa``). ``fit_skip`` coarse levels are left out of the slope fit.
    """

    noise: NoiseSpec
    levels: tuple[Level, ...]
    reference: Level | None = None
    T: float = 1.0
    mc_samples: int = 20
    test_powers: tuple[float, ...] = (2.0,)
    seed: int = 0
    expected_exponent: float | None = None
    tolerance: float = 0.15
    fit_skip: int = 2
    scheme: Scheme = Scheme.BACKWARD_EM
    coupling_cap: float | None = None
    x0: CoeffField | None = None
    estimator: str = "coupled"
    threads: int = 1

    def __post_init__(self):
        levels = tuple(Level(*lv) if not isinstance(lv, Level) else lv for lv in self.levels)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        object.__setattr__(self, "test_powers", tuple(float(p) for p in self.test_powers))
        if self.reference is not None and not isinstance(self.reference, Level):
            object.__setattr__(self, "reference", Level(*self.reference))
        if not levels:
            raise ConfigurationError("at least one level is required")
        for a, b in zip(levels, levels[1:]):
            finer_space = b.kappa >= a.kappa
            finer_time = a.steps is None or b.steps is None or b.steps >= a.steps
            if not (finer_space and finer_time) or a == b:
                raise ConfigurationError(f"levels must increase in resolution: {a} then {b}")
        # equality is tolerated here (a weak level may coincide with the
        # reference); the spectral studies demand a strictly finer reference
        if self.reference is not None and self.reference.kappa < levels[-1].kappa:
            raise ConfigurationError(
                f"reference kappa={self.reference.kappa} is coarser than level {levels[-1]}")
        if not self.T >= 0:
            raise ConfigurationError(f"horizon must be >= 0, got {self.T}")
        if self.fit_skip < 0:
            raise ConfigurationError("fit_skip must be >= 0")
        if self.estimator not in ("coupled", "independent"):
            raise ConfigurationError(f"unknown estimator {self.estimator!r}")
        if self.threads < 1:
            raise ConfigurationError("threads must be >= 1")

    @property
    def initial(self) -> InitialData:
        return ZERO_INITIAL if self.x0 is None else InitialData.deterministic(self.x0)

    def with_(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)


class Fit(NamedTuple):
    slope: float
    stderr: float
    degenerate: bool
    points: int


def fit_rate(rows: Sequence[tuple[float, float]]) -> Fit:
    """Least-squares slope of ``log error`` on ``log x`` and its standard error.

    Rows with non-positive error are dropped. Fewer than two usable rows give
    a degenerate fit (slope and stderr NaN); exactly two give stderr 0.
    """
    pts = [(float(x), float(e)) for x, e in rows if e > 0 and x > 0 and math.isfinite(e)]
    if len(pts) < 2:
        return Fit(math.nan, math.nan, True, len(pts))
    lx = np.log([p[0] for p in pts])
    ly = np.log([p[1] for p in pts])
    xm = lx - lx.mean()
    sxx = float(xm @ xm)
    if sxx == 0.0:
        return Fit(math.nan, math.nan, True, len(pts))
    slope = float(xm @ (ly - ly.mean())) / sxx
    resid = ly - ly.mean() - slope * xm
    n = len(pts)
    stderr = math.sqrt(float(resid @ resid) / (n - 2) / sxx) if n > 2 else 0.0
    return Fit(slope, stderr, False, n)


@dataclass(frozen=True)
class TestFunctional:
    """``phi(X) = ||X||^p`` in ``L^2`` of the sphere."""

    __test__ = False  # keep pytest from collecting this class
    p: float

    def __post_init__(self):
        if not self.p >= 2:
            raise ConfigurationError(f"test power must be >= 2, got {self.p}")

    def from_norm_sq(self, norm_sq):
        return np.asarray(norm_sq, dtype=float) ** (self.p / 2.0)


def eval_test_functional(tf: TestFunctional, fld: CoeffField) -> float:
    return float(tf.from_norm_sq(math.fsum(fld.coeffs**2)))


@dataclass(frozen=True)
class RateRow:
    kappa: int
    h: float | None
    p: float | None
    error: float
    stderr: float = 0.0


@dataclass(frozen=True, eq=False)
class RateReport:
    """Errors per level and the fitted slopes (one fit per test power for the weak study)."""

    experiment: str
    rows: tuple[RateRow, ...]
    fits: dict = field(default_factory=dict)
    expected: float = math.nan
    tolerance: float = math.inf
    axis: str = "kappa"
    seed: int = 0
    metadata: dict = field(default_factory=dict)

    @property
    def fit(self) -> Fit:
        return next(iter(self.fits.values()))

    @property
    def fitted_slope(self) -> float:
        return self.fit.slope

    @property
    def slope_stderr(self) -> float:
        return self.fit.stderr

    @property
    def degenerate(self) -> bool:
        return any(f.degenerate for f in self.fits.values())

    def errors(self, p: float | None = None) -> np.ndarray:
        return np.array([r.error for r in self.rows if r.p == p])

    def within_tolerance(self) -> bool:
        if not math.isfinite(self.expected):
            return True
        return all(not f.degenerate and abs(f.slope - self.expected) <= self.tolerance
                   for f in self.fits.values())

    def summary(self) -> str:
        parts = []
        for key, f in self.fits.items():
            tag = "" if key is None else f"p={key:g} "
            parts.append(f"{tag}slope={f.slope:.4f}+-{f.stderr:.4f}")
        return f"{self.experiment}: " + ", ".join(parts) + f" (expected {self.expected:.4f})"


def _fit_rows(rows: Sequence[RateRow], axis: str, skip: int, p=None) -> Fit:
    sel = [r for r in rows if r.p == p][skip:]
    return Fit(*fit_rate([((r.h if axis == "h" else r.kappa), r.error) for r in sel]))


def _report(kind: str, config: ExperimentConfig, rows: list[RateRow], axis: str,
            powers=(None,), **meta) -> RateReport:
    expected = config.expected_exponent
    if expected is None:
        expected = expected_slope(kind, config.noise.alpha)
    fits = {p: _fit_rows(rows, axis, config.fit_skip, p) for p in powers}
    report = RateReport(kind, tuple(rows), fits, expected, config.tolerance, axis,
                        config.seed, dict(meta))
    if not report.degenerate and not report.within_tolerance():
        log.warning("%s outside tolerance %.3g", report.summary(), config.tolerance)
    return report


# ------------------------------------------------------------------ spectral


def _spectral_profile(config: ExperimentConfig):
    if config.reference is None:
        raise ConfigurationError("spectral studies need a reference level")
    L_ref = config.reference.kappa
    if L_ref <= config.levels[-1].kappa:
        raise ConfigurationError("reference degree must exceed every level")
    spec = config.noise.with_degree(L_ref)
    return spectral_error_profile(spec, config.initial, config.T, L_ref)


def run_spectral_strong(config: ExperimentConfig) -> RateReport:
    prof = _spectral_profile(config)
    rows = [RateRow(lv.kappa, None, None, tail_breakdown(prof, lv.kappa).rms)
            for lv in config.levels]
    return _report("spectral-strong", config, rows, "kappa")


def run_spectral_mean(config: ExperimentConfig) -> RateReport:
    prof = _spectral_profile(config)
    rows = [RateRow(lv.kappa, None, None, math.sqrt(tail_breakdown(prof, lv.kappa).mean_term_sq))
            for lv in config.levels]
    return _report("spectral-mean", config, rows, "kappa")


def run_spectral_second_moment(config: ExperimentConfig) -> RateReport:
    prof = _spectral_profile(config)
    # every tail term is nonnegative, so the difference of second moments is the tail sum
    rows = [RateRow(lv.kappa, None, None, tail_breakdown(prof, lv.kappa).total_sq)
            for lv in config.levels]
    return _report("spectral-m2", config, rows, "kappa")


# ------------------------------------------------------------------------ EM


def _em_cases(config: ExperimentConfig):
    for lv in config.levels:
        if lv.steps is None:
            raise ConfigurationError(f"EM level {lv} needs a number of time steps")
        solver = SolverConfig(lv.kappa, config.scheme, config.coupling_cap)
        grid = TimeGrid(config.T, lv.steps)
        diag = stability_check(solver, grid)
        if not diag.ok:
            from .errors import StabilityError
            raise StabilityError(lv.kappa, grid.h, solver.coupling_cap, diag.detail)
        yield lv, solver, grid, config.noise.with_degree(lv.kappa)


def run_em_strong(config: ExperimentConfig) -> RateReport:
    rows = []
    for lv, solver, grid, spec in _em_cases(config):
        err = em_strong_error_sq(spec, solver, grid, config.initial, grid.n).rms
        rows.append(RateRow(lv.kappa, grid.h, None, err))
    return _report("em-strong", config, rows, "h", scheme=config.scheme.value)


def run_em_mean(config: ExperimentConfig) -> RateReport:
    rows = []
    for lv, solver, grid, spec in _em_cases(config):
        err = math.sqrt(em_mean_error_sq(spec, solver, grid, config.initial, grid.n))
        rows.append(RateRow(lv.kappa, grid.h, None, err))
    return _report("em-mean", config, rows, "h", scheme=config.scheme.value)


def run_em_second_moment(config: ExperimentConfig) -> RateReport:
    rows = []
    for lv, solver, grid, spec in _em_cases(config):
        err = abs(em_second_moment_error(spec, solver, grid, config.initial, grid.n))
        rows.append(RateRow(lv.kappa, grid.h, None, err))
    return _report("em-m2", config, rows, "h", scheme=config.scheme.value)


def mc_em_strong(config: ExperimentConfig, samples: int | None = None) -> list[tuple[float, float]]:
    """Pathwise Monte Carlo estimate of the EM strong error, per level.

    Exact and EM solutions share one jump record, so only drivers without a
    Wiener part are supported. Returns ``(rms error, standard error of the
    mean square)`` per level.
    """
    if config.noise.has_wiener:
        raise UnsupportedDriverError("pathwise EM coupling is implemented for jump drivers only")
    n_samples = config.mc_samples if samples is None else samples
    out = []
    for lv, solver, grid, spec in _em_cases(config):
        x0 = config.x0 if config.x0 is not None else CoeffField.zeros(lv.kappa)
        deg = degrees(lv.kappa)
        decay = np.exp(-deg * (deg + 1.0) * config.T) * x0.truncate(lv.kappa).coeffs

        def one(s, grid=grid, solver=solver, spec=spec, decay=decay, x0=x0):
            jumps = sample_jump_times(spec, config.T, config.seed, s, lv.kappa)
            inc = jump_increments(spec, jumps, grid)
            em = em_evolve(solver, grid, x0, inc, keep=[grid.n]).final
            exact = decay + poisson_convolution(spec, jumps, config.T, lv.kappa)
            return float(np.sum((exact - em.coeffs) ** 2))

        sq = np.array(_map(one, range(n_samples), config.threads))
        out.append((math.sqrt(sq.mean()), float(sq.std(ddof=1) / math.sqrt(n_samples))))
    return out


# ---------------------------------------------------------------------- weak


def _map(fn, items, threads: int) -> list:
    items = list(items)
    if threads <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def terminal_sample(spec: NoiseSpec, T: float, seed: int, sample: int, kappa: int,
                    x0: CoeffField | None = None) -> np.ndarray:
    """Exact ``X^(kappa)(T)`` coefficients for one sample, drawn without time stepping."""
    deg = degrees(kappa)
    out = np.zeros(num_coeffs(kappa))
    if x0 is not None:
        out += np.exp(-deg * (deg + 1.0) * T) * x0.truncate(kappa).coeffs
    if T == 0.0:
        return out
    if spec.has_wiener:
        out += wiener_convolution(spec, TimeGrid(T, 1), seed, sample, kappa)[1]
    if spec.has_poisson:
        jumps = sample_jump_times(spec, T, seed, sample, kappa)
        out += poisson_convolution(spec, jumps, T, kappa)
    return out


def cumulative_norm_sq(coeffs: np.ndarray, kappa: int) -> np.ndarray:
    """``||X^(k)||^2`` for every truncation ``k = 0..kappa`` of one field."""
    per_degree = np.add.reduceat(coeffs**2, np.arange(kappa + 1) ** 2)
    return np.cumsum(per_degree)


def run_weak_mc(config: ExperimentConfig) -> RateReport:
    """Weak errors ``|E[phi_p(X^(ref)(T)) - phi_p(X^(kappa)(T))]|`` by Monte Carlo.

    ``estimator="coupled"`` averages differences over shared samples (a
    coarse field is the reference field restricted to ``l <= kappa``);
    ``"independent"`` uses disjoint samples for reference and level.
    """
    if config.mc_samples < 2:
        raise ConfigurationError("the weak study needs at least 2 samples")
    if not config.test_powers:
        raise ConfigurationError("the weak study needs at least one test power")
    if config.reference is None:
        raise ConfigurationError("the weak study needs a reference level")
    K = config.reference.kappa
    spec = config.noise.with_degree(K)
    N = config.mc_samples
    tfs = [TestFunctional(p) for p in config.test_powers]

    def norms(s):
        return cumulative_norm_sq(terminal_sample(spec, config.T, config.seed, s, K, config.x0), K)

    coupled = config.estimator == "coupled"
    ref = np.array(_map(norms, range(N), config.threads))          # (N, K+1)
    lev = ref if coupled else np.array(_map(norms, range(N, 2 * N), config.threads))
    rows = []
    for tf in tfs:
        ref_phi = tf.from_norm_sq(ref[:, K])
        for lv in config.levels:
            phi = tf.from_norm_sq(lev[:, lv.kappa])
            if coupled:
                d = ref_phi - phi
                err, se = abs(float(d.mean())), float(d.std(ddof=1) / math.sqrt(N))
            else:
                err = abs(float(ref_phi.mean() - phi.mean()))
                se = math.sqrt(float(ref_phi.var(ddof=1) + phi.var(ddof=1)) / N)
            rows.append(RateRow(lv.kappa, None, tf.p, err, se))
    return _report("weak", config, rows, "kappa", powers=config.test_powers,
                   estimator=config.estimator, coupling="common driving paths"
                   if coupled else "independent samples")


RUNNERS = {
    "spectral-strong": run_spectral_strong,
    "spectral-mean": run_spectral_mean,
    "spectral-m2": run_spectral_second_moment,
    "em-strong": run_em_strong,
    "em-mean": run_em_mean,
    "em-m2": run_em_second_moment,
    "weak": run_weak_mc,
}


def run(kind: str, config: ExperimentConfig) -> RateReport:
    try:
        runner = RUNNERS[kind]
    except KeyError:
        raise ConfigurationError(f"unknown experiment {kind!r}; choose from {', '.join(EXPERIMENTS)}") from None
    return runner(config)


# ---------------------------------------------------------------------- output


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value) if math.isfinite(value) else str(value)
    return str(value)


def report_csv(report: RateReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in report.rows:
        f = report.fits.get(r.p, report.fit)
        w.writerow([report.experiment, r.kappa, _fmt(r.h), _fmt(r.p), _fmt(r.error),
                    _fmt(f.slope), _fmt(f.stderr), _fmt(report.expected), report.seed])
    return buf.getvalue()


def write_report(report: RateReport, path, metadata: dict | None = None) -> list:
    """Write ``path`` (CSV) and ``path`` + ``.meta`` (key=value lines); return both paths."""
    from pathlib import Path
    path = Path(path)
    path.write_text(report_csv(report), encoding="utf-8")
    meta = dict(metadata or {})
    meta.update({f"report.{k}": v for k, v in report.metadata.items()})
    meta["fit_points"] = ";".join(f"{'' if k is None else k}:{f.points}" for k, f in report.fits.items())
    side = path.with_name(path.name + ".meta")
    side.write_text("".join(f"{k}={_fmt(v)}\n" for k, v in sorted(meta.items())), encoding="utf-8")
    return [path, side]
