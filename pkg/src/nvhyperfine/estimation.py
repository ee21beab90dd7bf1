"""Shot-noise-limited synthetic measurements and the global transverse hyperfine fit.

The measured Rabi frequency of manifold m_s at relative RF amplitude x is
modeled as

    Omega_m(x) = sqrt((k_ms sqrt(2) gamma_n B1max x alpha_ms(A_perp))^2 + delta_ms^2)

with alpha_ms from exact diagonalization.  Inside the fit each detuning
enters through its signed square d_ms = delta_ms^2, which keeps the model
smooth (and the Jacobian nonsingular) when the detuning is zero.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .dynamics import FrequencyEstimate, RabiTrace, extract_frequency, rabi_trace
from .lsq import ConvergenceError, covariance, levenberg_marquardt
from .mixing import enhancement_exact
from .model import MANIFOLDS, SQRT2, SpinSystemConfig


class RankDeficiencyError(ValueError):
    """The data cannot separate A_perp from B1max."""


class FitConvergenceError(RuntimeError):
    def __init__(self, message, best_cost=None, start=None):
        super().__init__(message)
        self.best_cost = best_cost
        self.start = start


@dataclass(frozen=True)
class ReadoutModel:
    photons_bright: float = 0.03
    contrast: float = 0.3
    repetitions: int = 100_000
    polarization_efficiency: float = 1.0
    pi_pulse_fidelity: float = 1.0
    # sequence timing, microseconds
    laser_us: float = 1.0
    mw_pi_us: float = 0.05
    selective_us: float = 0.7
    readout_us: float = 0.3

    def __post_init__(self):
        if not self.photons_bright > 0:
            raise ValueError("photons_bright must be positive")
        if not 0 < self.contrast < 1:
            raise ValueError("contrast must lie in (0, 1)")
        if self.repetitions < 1:
            raise ValueError("repetitions must be positive")
        for name in ("polarization_efficiency", "pi_pulse_fidelity"):
            if not 0 < getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in (0, 1]")

    def with_repetitions(self, repetitions: int) -> "ReadoutModel":
        return ReadoutModel(**{**asdict(self), "repetitions": int(repetitions)})

    def shot_duration_us(self, manifold: int, tau: float) -> float:
        prep = self.mw_pi_us if manifold != 0 else 0.0
        return self.laser_us + prep + tau + self.selective_us + self.readout_us


def dark_probability(population, readout: ReadoutModel, manifold: int):
    """Probability that a shot reads dark given the RF transfer probability.

    An unpolarized fraction starts in m_I=0 and is driven the opposite way;
    every MW pulse (preparation for m_s != 0, plus the selective mapping
    pulse) succeeds with ``pi_pulse_fidelity``.
    """
    p = readout.polarization_efficiency
    pulses = 2 if manifold != 0 else 1
    moved = p * np.asarray(population) + (1 - p) * (1 - np.asarray(population))
    return readout.pi_pulse_fidelity**pulses * moved


def expected_signal(population, readout: ReadoutModel, manifold: int):
    """Mean photons per shot (the infinite-repetition limit of the measured signal)."""
    return readout.photons_bright * (1 - readout.contrast * dark_probability(population, readout, manifold))


def _seed_sequence(seed) -> np.random.SeedSequence:
    return seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def synth_measurement(
    config: SpinSystemConfig,
    manifold: int,
    times,
    readout: ReadoutModel,
    seed=None,
    detuning: float = 0.0,
    frame: str = "rwa",
) -> RabiTrace:
    """Photon-count Rabi trace for one manifold with Poissonian shot noise."""
    clean = rabi_trace(config, manifold, times, frame=frame, detuning=detuning)
    mean = expected_signal(clean.population, readout, manifold)
    counts = _rng(seed).poisson(mean * readout.repetitions)
    signal = counts / readout.repetitions
    sigma = np.sqrt(np.maximum(counts, 1)) / readout.repetitions
    return RabiTrace(
        clean.times, clean.population, manifold, frame,
        signal=signal, sigma=sigma, repetitions=readout.repetitions,
    )


def fit_detuned_rabi(trace: RabiTrace) -> FrequencyEstimate:
    """Frequency of a noisy trace, with free amplitude and baseline."""
    return extract_frequency(trace)


@dataclass(frozen=True)
class ManifoldSweep:
    x: np.ndarray
    omega: np.ndarray
    sigma: np.ndarray


@dataclass
class SweepDataset:
    b_z: float
    sweeps: dict[int, ManifoldSweep]

    def manifolds(self) -> list[int]:
        return [m for m in MANIFOLDS if m in self.sweeps]

    def subset(self, manifolds: Sequence[int]) -> "SweepDataset":
        return SweepDataset(self.b_z, {m: self.sweeps[m] for m in manifolds})

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["manifold", "x_rel_amplitude", "omega_m_mhz", "sigma_mhz"])
            for m in self.manifolds():
                s = self.sweeps[m]
                for x, om, sg in zip(s.x, s.omega, s.sigma):
                    w.writerow([m, repr(float(x)), repr(float(om)), repr(float(sg))])

    @classmethod
    def read_csv(cls, path: str | Path, b_z: float) -> "SweepDataset":
        rows: dict[int, list[tuple[float, float, float]]] = {}
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            expected = {"manifold", "x_rel_amplitude", "omega_m_mhz", "sigma_mhz"}
            if reader.fieldnames is None or set(reader.fieldnames) != expected:
                raise ValueError(f"{path}: header must be {','.join(sorted(expected))}")
            for r in reader:
                m = int(r["manifold"])
                if m not in MANIFOLDS:
                    raise ValueError(f"{path}: invalid manifold {m}")
                x = float(r["x_rel_amplitude"])
                if not 0 < x <= 1:
                    raise ValueError(f"{path}: relative amplitude {x} outside (0, 1]")
                rows.setdefault(m, []).append((x, float(r["omega_m_mhz"]), float(r["sigma_mhz"])))
        if not rows:
            raise ValueError(f"{path}: no data rows")
        sweeps = {m: ManifoldSweep(*map(np.array, zip(*vals))) for m, vals in rows.items()}
        return cls(b_z, sweeps)


@dataclass(frozen=True)
class SweepDesign:
    """Amplitude grid, repetitions per point and time grid per trace.

    Each trace spans ``periods`` oscillations of the expected detuned Rabi
    frequency with ``points`` samples starting at tau=0.
    """

    amplitudes: tuple[float, ...] = tuple(np.round(np.linspace(0.2, 1.0, 5), 6))
    repetitions: int = 100_000
    periods: float = 3.0
    points: int = 40
    manifolds: tuple[int, ...] = MANIFOLDS

    def __post_init__(self):
        if any(not 0 < x <= 1 for x in self.amplitudes):
            raise ValueError("relative amplitudes must lie in (0, 1]")
        if self.periods < 1.5:
            raise ValueError("traces must span at least 1.5 periods")
        if self.points / self.periods < 8:
            raise ValueError("need at least 8 points per period")


def model_omega(config: SpinSystemConfig, manifold: int, x, detuning: float = 0.0, scale: float = 1.0):
    """Detuned Rabi frequency predicted for relative amplitude x (config.b1 is B1max)."""
    alpha = enhancement_exact(config)[manifold]
    drive = scale * SQRT2 * config.gamma_n * config.b1 * alpha * np.asarray(x, dtype=float)
    return np.sqrt(drive**2 + detuning**2)


def trace_times(config: SpinSystemConfig, manifold: int, x: float, design: SweepDesign, detuning: float = 0.0):
    omega = float(model_omega(config, manifold, x, detuning))
    return np.linspace(0.0, design.periods / omega, design.points)


@dataclass
class SweepOutcome:
    dataset: SweepDataset
    measurement_time_s: float
    failures: int


def synth_sweep(
    config: SpinSystemConfig,
    design: SweepDesign,
    readout: ReadoutModel,
    seed=None,
    detunings: Mapping[int, float] | None = None,
    scales: Mapping[int, float] | None = None,
) -> SweepOutcome:
    """Simulate the amplitude sweep at config.b_z with config.b1 as B1max.

    ``scales`` multiplies the RF amplitude seen by each manifold (k_ms).
    Failed trace fits are dropped and counted.
    """
    detunings = dict(detunings or {})
    scales = dict(scales or {})
    readout = readout.with_repetitions(design.repetitions)
    seeds = _seed_sequence(seed).spawn(len(design.manifolds) * len(design.amplitudes))
    sweeps = {}
    total_us = 0.0
    failures = 0
    k = 0
    for m in design.manifolds:
        delta = detunings.get(m, 0.0)
        k_m = scales.get(m, 1.0)
        xs, om, sg = [], [], []
        for x in design.amplitudes:
            times = trace_times(config, m, k_m * x, design, delta)
            total_us += readout.repetitions * sum(readout.shot_duration_us(m, t) for t in times)
            trace = synth_measurement(
                config.replace(b1=config.b1 * k_m * x), m, times, readout, np.random.default_rng(seeds[k]), delta
            )
            k += 1
            try:
                est = fit_detuned_rabi(trace)
            except ValueError:
                failures += 1
                continue
            xs.append(x)
            om.append(est.frequency)
            sg.append(est.stderr)
        if xs:
            sweeps[m] = ManifoldSweep(np.array(xs), np.array(om), np.array(sg))
    return SweepOutcome(SweepDataset(config.b_z, sweeps), total_us * 1e-6, failures)


def noiseless_dataset(
    config: SpinSystemConfig,
    amplitudes: Sequence[float],
    detunings: Mapping[int, float] | None = None,
    manifolds: Sequence[int] = MANIFOLDS,
    sigma: float = 1e-4,
    scales: Mapping[int, float] | None = None,
) -> SweepDataset:
    """Exact model values (no noise) with a uniform nominal uncertainty."""
    detunings = dict(detunings or {})
    scales = dict(scales or {})
    x = np.asarray(amplitudes, dtype=float)
    sweeps = {
        m: ManifoldSweep(
            x.copy(), model_omega(config, m, x, detunings.get(m, 0.0), scales.get(m, 1.0)), np.full(len(x), sigma)
        )
        for m in manifolds
    }
    return SweepDataset(config.b_z, sweeps)


@dataclass
class FitResult:
    a_perp: float
    a_perp_err: float
    b1_max: float
    b1_max_err: float
    detunings: dict[int, tuple[float, float]]
    detuning_sq: dict[int, tuple[float, float]]
    scales: dict[int, tuple[float, float]]
    param_names: list[str]
    params: np.ndarray
    covariance: np.ndarray
    residuals: np.ndarray
    chi2: float
    dof: int
    start: float
    n_iter: int

    @property
    def reduced_chi2(self) -> float:
        return self.chi2 / self.dof if self.dof > 0 else float("nan")

    def to_dict(self) -> dict:
        return {
            "a_perp_mhz": self.a_perp,
            "a_perp_err_mhz": self.a_perp_err,
            "b1_max_gauss": self.b1_max,
            "b1_max_err_gauss": self.b1_max_err,
            "detunings_mhz": {str(m): {"value": v, "err": e} for m, (v, e) in self.detunings.items()},
            "detuning_sq_mhz2": {str(m): {"value": v, "err": e} for m, (v, e) in self.detuning_sq.items()},
            "scales": {str(m): {"value": v, "err": e} for m, (v, e) in self.scales.items()},
            "parameters": self.param_names,
            "covariance": self.covariance.tolist(),
            "chi2": self.chi2,
            "dof": self.dof,
            "reduced_chi2": self.reduced_chi2,
            "a_perp_start_mhz": self.start,
            "iterations": self.n_iter,
        }


class _AlphaCache:
    def __init__(self, config: SpinSystemConfig):
        self.config = config
        self._cache: dict[float, object] = {}

    def __call__(self, a_perp: float):
        hit = self._cache.get(a_perp)
        if hit is None:
            hit = enhancement_exact(self.config.replace(a_perp=float(a_perp)))
            if len(self._cache) > 4096:
                self._cache.clear()
            self._cache[a_perp] = hit
        return hit


def fit_transverse_hyperfine(
    data: SweepDataset,
    config: SpinSystemConfig,
    scales: Mapping[int, float] | None = None,
    fit_scales: bool = False,
    a_perp_guess: float = 2.62,
) -> FitResult:
    """Global weighted fit of A_perp, B1max and per-manifold detunings.

    ``config`` supplies every constant except a_perp and b1 (ignored).  Two
    starts at +/-|a_perp_guess| are tried and the lower chi-square wins.
    ``scales`` holds known drive scale factors k_ms (default 1).  Free
    scale factors cannot be fitted from a single-field sweep: each manifold
    contributes one slope, so A_perp, B1max and two free k_ms would be four
    unknowns for three numbers, and ``fit_scales=True`` raises
    :class:`RankDeficiencyError`.
    """
    manifolds = data.manifolds()
    if len(manifolds) < 2:
        raise RankDeficiencyError(
            "a single manifold cannot separate A_perp from B1max; need at least two manifolds"
        )
    if fit_scales:
        raise RankDeficiencyError(
            "free per-manifold scale factors are degenerate with A_perp and B1max for a single-field "
            "sweep; pass calibrated values through `scales` instead"
        )
    for m in manifolds:
        if len(data.sweeps[m].x) < 3:
            raise ValueError(f"manifold {m:+d} has fewer than 3 amplitudes")
    scales = {m: float((scales or {}).get(m, 1.0)) for m in manifolds}
    if any(not k > 0 for k in scales.values()):
        raise ValueError("scale factors must be positive")
    config = config.replace(b_z=data.b_z)
    alpha_of = _AlphaCache(config)
    names = ["a_perp", "b1_max"] + [f"dsq_{m:+d}" for m in manifolds]
    x = np.concatenate([data.sweeps[m].x for m in manifolds])
    y = np.concatenate([data.sweeps[m].omega for m in manifolds])
    s = np.concatenate([data.sweeps[m].sigma for m in manifolds])
    if np.any(~(s > 0)):
        raise ValueError("all uncertainties must be positive")
    which = np.concatenate([np.full(len(data.sweeps[m].x), i) for i, m in enumerate(manifolds)])
    nm = len(manifolds)
    kx = np.array([scales[m] for m in manifolds])[which] * SQRT2 * config.gamma_n * x

    def model(p):
        alphas = alpha_of(p[0])
        a = np.array([alphas[m] for m in manifolds])
        drive = kx * p[1] * a[which]
        return np.sqrt(np.maximum(drive**2 + p[2 + which], 1e-30))

    def resid(p):
        return (model(p) - y) / s

    best = None
    errors = []
    for sign in (-1.0, 1.0):
        a0 = sign * abs(a_perp_guess)
        alphas = alpha_of(a0)
        a = np.array([alphas[m] for m in manifolds])
        b0 = float(np.median(y / np.abs(kx * a[which])))
        p0 = np.concatenate([[a0, b0], np.zeros(nm)])
        scale = np.concatenate([[1.0, max(abs(b0), 1e-3)], np.full(nm, max(np.min(y) ** 2, 1e-12))])
        try:
            res = levenberg_marquardt(resid, p0, scale=scale)
        except ConvergenceError as exc:
            errors.append((a0, exc))
            continue
        if best is None or res.cost < best[1].cost:
            best = (a0, res)
    if best is None:
        a0, exc = min(errors, key=lambda e: e[1].cost if e[1].cost is not None else np.inf)
        raise FitConvergenceError(
            f"fit did not converge from any start; best residual {exc.cost} from start A_perp={a0}",
            best_cost=exc.cost, start=a0,
        )
    a0, res = best
    try:
        cov = covariance(res.jacobian)
    except np.linalg.LinAlgError as exc:
        raise RankDeficiencyError(f"data cannot separate the fit parameters: {exc}") from None
    err = np.sqrt(np.clip(np.diag(cov), 0, None))
    p = res.params
    detuning_sq = {m: (float(p[2 + i]), float(err[2 + i])) for i, m in enumerate(manifolds)}
    detunings = {m: _detuning_from_square(*detuning_sq[m]) for m in manifolds}
    return FitResult(
        a_perp=float(p[0]), a_perp_err=float(err[0]),
        b1_max=float(p[1]), b1_max_err=float(err[1]),
        detunings=detunings, detuning_sq=detuning_sq, scales={m: (k, 0.0) for m, k in scales.items()},
        param_names=names, params=p.copy(), covariance=cov,
        residuals=res.residuals, chi2=res.cost, dof=len(y) - len(p),
        start=a0, n_iter=res.n_iter,
    )


def _detuning_from_square(d: float, d_err: float) -> tuple[float, float]:
    # delta = sign(d) sqrt|d|; the delta-method error diverges at d=0, where sqrt(d_err) is the resolution
    value = math.copysign(math.sqrt(abs(d)), d)
    if abs(d) > d_err:
        return value, d_err / (2 * math.sqrt(abs(d)))
    return value, math.sqrt(d_err)


@dataclass(frozen=True)
class Strategy:
    repetitions: int
    amplitudes: tuple[float, ...]
    periods: float = 3.0
    points: int = 40

    def design(self, manifolds=MANIFOLDS) -> SweepDesign:
        return SweepDesign(tuple(self.amplitudes), self.repetitions, self.periods, self.points, tuple(manifolds))


@dataclass
class StudyPoint:
    strategy: Strategy
    measurement_time_s: float
    sigma_a_perp: float  # Monte-Carlo spread of the estimates
    mean_reported_sigma: float
    bias: float
    failure_rate: float
    flagged: bool
    estimates: np.ndarray = field(repr=False, default_factory=lambda: np.empty(0))


def _one_run(args):
    config, design, readout, seed, detunings, truth = args
    try:
        out = synth_sweep(config, design, readout, seed, detunings)
        if out.failures:
            return out.measurement_time_s, None, None
        fit = fit_transverse_hyperfine(out.dataset, config, a_perp_guess=abs(truth))
        return out.measurement_time_s, fit.a_perp, fit.a_perp_err
    except (ValueError, RuntimeError):
        return None, None, None


def monte_carlo(
    strategy: Strategy,
    config: SpinSystemConfig,
    readout: ReadoutModel,
    n_seeds: int,
    seed: np.random.SeedSequence | int | None = None,
    detunings: Mapping[int, float] | None = None,
    workers: int = 1,
) -> StudyPoint:
    """Repeat synth -> fit over independent seeds and summarize the A_perp estimates."""
    ss = _seed_sequence(seed)
    design = strategy.design()
    jobs = [(config, design, readout, child, detunings, config.a_perp) for child in ss.spawn(n_seeds)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_one_run, jobs))
    else:
        results = [_one_run(j) for j in jobs]
    good = [(t, a, e) for t, a, e in results if a is not None]
    failure_rate = 1 - len(good) / n_seeds
    times = [t for t, _, _ in results if t is not None]
    est = np.array([a for _, a, _ in good])
    reported = np.array([e for _, _, e in good])
    return StudyPoint(
        strategy=strategy,
        measurement_time_s=float(np.mean(times)) if times else float("nan"),
        sigma_a_perp=float(np.std(est, ddof=1)) if len(est) > 1 else float("nan"),
        mean_reported_sigma=float(np.mean(reported)) if len(reported) else float("nan"),
        bias=float(np.mean(est) - config.a_perp) if len(est) else float("nan"),
        failure_rate=failure_rate,
        flagged=failure_rate > 0.2,
        estimates=est,
    )


def precision_study(
    strategies: Sequence[Strategy],
    config: SpinSystemConfig,
    readout: ReadoutModel,
    n_seeds: int = 50,
    seed: int | None = 0,
    detunings: Mapping[int, float] | None = None,
    workers: int = 1,
) -> list[StudyPoint]:
    """Monte-Carlo sigma(A_perp) and total measurement time for each strategy.

    Every strategy gets its own child of the master seed, so results do not
    depend on the order or parallelism of evaluation.
    """
    if not strategies:
        raise ValueError("need at least one strategy")
    children = np.random.SeedSequence(seed).spawn(len(strategies))
    return [
        monte_carlo(s, config, readout, n_seeds, child, detunings, workers)
        for s, child in zip(strategies, children)
    ]


def frontier(points: Sequence[StudyPoint]) -> list[StudyPoint]:
    """Pareto-optimal points (no other point is both faster and more precise), by time."""
    usable = [p for p in points if not p.flagged and np.isfinite(p.sigma_a_perp)]
    usable.sort(key=lambda p: (p.measurement_time_s, p.sigma_a_perp))
    out: list[StudyPoint] = []
    for p in usable:
        if not out or p.sigma_a_perp < out[-1].sigma_a_perp:
            out.append(p)
    return out
