"""Driven nuclear spin dynamics in the rotating-wave and lab frames.

Frequencies are in MHz and times in microseconds, so a Hamiltonian H
propagates as exp(-2 pi i H t).  The lab-frame drive is
2 B1 cos(2 pi omega_rf t) (gamma_e Sx + sqrt(2) gamma_n Ix) and its period
is T = 1 / omega_rf.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.linalg import schur
from scipy.optimize import OptimizeWarning, curve_fit

from . import kernels
from .mixing import diagonalize, enhancement_exact
from .model import SQRT2, SpinSystemConfig, build_rf, build_static

FRAMES = ("rwa", "lab-floquet", "lab-trotter")
STEPS_PER_CYCLE = 50


class PropagationError(RuntimeError):
    pass


class StepSizeError(PropagationError, ValueError):
    pass


class UnitarityDriftError(PropagationError):
    pass


class NoOscillationError(ValueError):
    pass


class InsufficientSamplingError(ValueError):
    pass


def max_frequency(config: SpinSystemConfig) -> float:
    """Largest frequency scale of the lab-frame Hamiltonian in MHz.

    The static part contributes its full spectral width, which exceeds
    both delta and gamma_e b_z.
    """
    w = np.linalg.eigvalsh(build_static(config).matrix)
    return max(config.omega_rf, w[-1] - w[0], config.delta, config.gamma_e * abs(config.b_z))


@dataclass(frozen=True)
class PropagationSettings:
    dt: float | None = None  # None: 1 / (50 f_max)
    tolerance: float = 1e-9

    def resolve_dt(self, config: SpinSystemConfig) -> float:
        limit = 1.0 / (STEPS_PER_CYCLE * max_frequency(config))
        if self.dt is None:
            return limit
        if not self.dt > 0:
            raise StepSizeError("dt must be positive")
        if self.dt > limit * (1 + 1e-12):
            raise StepSizeError(
                f"dt={self.dt:.3e} us exceeds 1/(50 f_max)={limit:.3e} us for this configuration"
            )
        return self.dt


def resonance_frequency(config: SpinSystemConfig, manifold: int) -> float:
    """|E(m_s,1) - E(m_s,0)| of the dressed states, in MHz."""
    eig = diagonalize(build_static(config))
    return abs(eig.energy((manifold, 1)) - eig.energy((manifold, 0)))


def on_resonance(config: SpinSystemConfig, manifold: int, detuning: float = 0.0) -> SpinSystemConfig:
    """Copy of ``config`` driven at the dressed nuclear resonance plus ``detuning``."""
    omega = resonance_frequency(config, manifold) + detuning
    if omega <= 0:
        raise ValueError("detuning pushes the drive frequency below zero")
    return config.replace(omega_rf=omega)


def dressed_pair(config: SpinSystemConfig, manifold: int) -> tuple[np.ndarray, np.ndarray]:
    """Dressed |m_s,1> and |m_s,0> vectors in the bare reduced basis."""
    eig = diagonalize(build_static(config))
    return eig.vector((manifold, 1)), eig.vector((manifold, 0))


def propagate_rwa(
    config: SpinSystemConfig, manifold: int, tau: float, detuning: float = 0.0
) -> np.ndarray:
    """Rotating-frame state after driving the dressed nuclear transition for ``tau``.

    Within the dressed pair the drive has off-diagonal element
    gamma_n B1 alpha / sqrt(2), i.e. Rabi frequency sqrt(2) gamma_n B1 alpha;
    ``detuning`` = omega_rf - resonance.  Starts from the dressed |m_s,1>.
    """
    rabi = SQRT2 * config.gamma_n * config.b1 * enhancement_exact(config)[manifold]
    upper, lower = dressed_pair(config, manifold)
    c1, c0 = _two_level_amplitudes(rabi, detuning, np.atleast_1d(float(tau)))
    return c1[0] * upper + c0[0] * lower


def _two_level_amplitudes(rabi: float, detuning: float, t: np.ndarray):
    # H = (detuning/2) sz + (rabi/2) sx in the rotating frame, start in |upper>
    big = math.hypot(rabi, detuning)
    t = np.asarray(t, dtype=float)
    if big == 0:
        return np.ones_like(t, dtype=complex), np.zeros_like(t, dtype=complex)
    phase = np.pi * big * t
    c1 = np.cos(phase) - 1j * (detuning / big) * np.sin(phase)
    c0 = -1j * (rabi / big) * np.sin(phase)
    return c1, c0


def rwa_population(rabi: float, detuning: float, t) -> np.ndarray:
    """Closed-form transfer probability of a detuned two-level Rabi drive."""
    big2 = rabi**2 + detuning**2
    if big2 == 0:
        return np.zeros_like(np.asarray(t, dtype=float))
    return rabi**2 / big2 * np.sin(np.pi * np.sqrt(big2) * np.asarray(t, dtype=float)) ** 2


@lru_cache(maxsize=4)
def _period_steps(config: SpinSystemConfig, dt: float):
    if config.omega_rf <= 0:
        raise ValueError("lab-frame propagation needs omega_rf > 0")
    period = 1.0 / config.omega_rf
    n = max(1, math.ceil(period / dt - 1e-9))
    dt_eff = period / n
    h0 = build_static(config).matrix
    v = build_rf(config, 0.0).matrix
    steps = kernels.step_unitaries(h0, v, config.omega_rf, 0.0, dt_eff, n)
    steps.setflags(write=False)
    return steps, dt_eff


def lab_steps(config: SpinSystemConfig, settings: PropagationSettings | None = None):
    """Midpoint step unitaries covering one drive period, and the step length used."""
    settings = settings or PropagationSettings()
    return _period_steps(config, settings.resolve_dt(config))


def _check_norms(states: np.ndarray, tolerance: float) -> None:
    drift = np.abs(np.linalg.norm(np.atleast_2d(states), axis=1) - 1.0).max()
    if drift > tolerance:
        raise UnitarityDriftError(f"state norm drifted by {drift:.2e} (tolerance {tolerance:.1e})")


def _check_unitary(u: np.ndarray, tolerance: float) -> None:
    drift = np.abs(u.conj().T @ u - np.eye(len(u))).max()
    if drift > tolerance:
        raise UnitarityDriftError(f"propagator unitarity drift {drift:.2e} (tolerance {tolerance:.1e})")


def propagate_lab(
    config: SpinSystemConfig,
    psi0: np.ndarray,
    tau: float,
    settings: PropagationSettings | None = None,
) -> np.ndarray:
    """Evolve ``psi0`` for ``tau`` under the full time-dependent Hamiltonian.

    Piecewise-constant midpoint steps; the step is shortened so that an
    integer number of steps fits in one drive period, and a final partial
    step covers any remainder of ``tau``.
    """
    settings = settings or PropagationSettings()
    psi0 = np.asarray(psi0, dtype=complex)
    if abs(np.linalg.norm(psi0) - 1) > 1e-12:
        raise ValueError("initial state must be normalized")
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    steps, dt = lab_steps(config, settings)
    n_full = int(math.floor(tau / dt + 1e-9))
    psi = kernels.evolve_periodic(steps, psi0, np.array([n_full]))[0]
    rest = tau - n_full * dt
    if rest > 1e-12 * max(dt, 1.0):
        h0 = build_static(config).matrix
        v = build_rf(config, 0.0).matrix
        last = kernels.step_unitaries(h0, v, config.omega_rf, n_full * dt, rest, 1)[0]
        psi = last @ psi
    _check_norms(psi, settings.tolerance)
    return psi


def period_propagator(config: SpinSystemConfig, settings: PropagationSettings | None = None) -> np.ndarray:
    settings = settings or PropagationSettings()
    steps, _ = lab_steps(config, settings)
    u = kernels.chain_product(steps)
    _check_unitary(u, settings.tolerance)
    return u


def _fold(values: np.ndarray, width: float) -> np.ndarray:
    return (values + width / 2) % width - width / 2


def floquet_quasienergies(
    config: SpinSystemConfig, settings: PropagationSettings | None = None
) -> np.ndarray:
    """Quasi-energies (MHz) in [-omega/2, omega/2), ascending."""
    if config.omega_rf <= 0:
        raise ValueError("Floquet analysis needs a periodic drive (omega_rf > 0)")
    u = period_propagator(config, settings)
    period = 1.0 / config.omega_rf
    eps = -np.angle(np.linalg.eigvals(u)) / (2 * np.pi * period)
    return np.sort(_fold(eps, config.omega_rf))


def floquet_rabi_splitting(
    config: SpinSystemConfig, manifold: int, settings: PropagationSettings | None = None
) -> float:
    """Quasi-energy splitting (MHz) of the dressed nuclear pair of one manifold.

    The one-period propagator is compressed onto the pair before its
    eigenphases are taken, so accidental quasi-energy coincidences with
    other manifolds cannot mix in.
    """
    u = period_propagator(config, settings)
    pair = np.column_stack(dressed_pair(config, manifold))
    block = pair.conj().T @ u @ pair
    period = 1.0 / config.omega_rf
    eps = -np.angle(np.linalg.eigvals(block)) / (2 * np.pi * period)
    gap = abs(eps[0] - eps[1]) % config.omega_rf
    return min(gap, config.omega_rf - gap)


@dataclass
class RabiTrace:
    times: np.ndarray
    population: np.ndarray
    manifold: int
    frame: str
    signal: np.ndarray | None = None
    sigma: np.ndarray | None = None
    repetitions: int | None = None

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time_us", "population", "manifold", "frame"])
            order = np.argsort(self.times, kind="stable")
            for t, p in zip(self.times[order], self.population[order]):
                w.writerow([repr(float(t)), repr(float(p)), self.manifold, self.frame])

    @classmethod
    def read_csv(cls, path: str | Path) -> "RabiTrace":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{path}: empty trace")
        return cls(
            times=np.array([float(r["time_us"]) for r in rows]),
            population=np.array([float(r["population"]) for r in rows]),
            manifold=int(rows[0]["manifold"]),
            frame=rows[0]["frame"],
        )


def rabi_trace(
    config: SpinSystemConfig,
    manifold: int,
    times: Sequence[float],
    frame: str = "rwa",
    detuning: float = 0.0,
    settings: PropagationSettings | None = None,
) -> RabiTrace:
    """Population of the dressed |m_s,0> state while driving from |m_s,1>.

    The drive frequency is set to the dressed resonance of ``manifold`` plus
    ``detuning`` (config.omega_rf is ignored).  Lab-frame times are snapped
    to the propagation grid (``lab-trotter``) or to whole drive periods
    (``lab-floquet``); the returned trace carries the snapped times.
    """
    if frame not in FRAMES:
        raise ValueError(f"frame must be one of {FRAMES}")
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or np.any(np.diff(times) < 0) or np.any(times < 0):
        raise ValueError("times must be a nondecreasing sequence of nonnegative values")
    cfg = on_resonance(config, manifold, detuning)
    settings = settings or PropagationSettings()

    if frame == "rwa":
        rabi = SQRT2 * cfg.gamma_n * cfg.b1 * enhancement_exact(cfg)[manifold]
        pop = rwa_population(rabi, detuning, times)
        return RabiTrace(times, pop, manifold, frame)

    upper, lower = dressed_pair(cfg, manifold)
    if frame == "lab-trotter":
        steps, dt = lab_steps(cfg, settings)
        idx = np.rint(times / dt).astype(np.int64)
        states = kernels.evolve_periodic(steps, upper, idx)
        snapped = idx * dt
    else:
        period = 1.0 / cfg.omega_rf
        u = period_propagator(cfg, settings)
        # U is normal, so its complex Schur form is diagonal up to roundoff
        tri, z = schur(u, output="complex")
        lam = np.diag(tri)
        lam = lam / np.abs(lam)
        coeffs = z.conj().T @ upper
        q = np.rint(times / period).astype(np.int64)
        states = (z @ (lam[:, None] ** q[None, :] * coeffs[:, None])).T
        snapped = q * period
    _check_norms(states, settings.tolerance)
    pop = np.abs(states @ lower.conj()) ** 2
    return RabiTrace(snapped, pop, manifold, frame)


@dataclass(frozen=True)
class FrequencyEstimate:
    frequency: float
    stderr: float
    amplitude: float
    phase: float
    offset: float
    chi2: float
    dof: int

    def __iter__(self):
        yield self.frequency
        yield self.stderr


def _cosine(t, a, f, phi, c):
    return a * np.cos(2 * np.pi * f * t + phi) + c


def _polish(t: np.ndarray, y: np.ndarray, w: np.ndarray, p: np.ndarray, iters: int = 8) -> np.ndarray:
    # curve_fit's relative tolerances stall near zero residual; Gauss-Newton with the exact Jacobian does not
    def cost(q):
        r = w * (y - _cosine(t, *q))
        return r @ r

    best = cost(p)
    for _ in range(iters):
        a, f, phi, _c = p
        arg = 2 * np.pi * f * t + phi
        jac = np.column_stack([np.cos(arg), -a * np.sin(arg) * 2 * np.pi * t, -a * np.sin(arg), np.ones_like(t)])
        r = w * (y - _cosine(t, *p))
        step, *_ = np.linalg.lstsq(w[:, None] * jac, r, rcond=None)
        trial = p + step
        c_trial = cost(trial)
        if not c_trial < best:
            break
        p, best = trial, c_trial
    return p


def spectral_peak(t: np.ndarray, y: np.ndarray, oversample: int = 8) -> float:
    """Frequency of the strongest periodogram peak, refined by parabolic interpolation."""
    span = t[-1] - t[0]
    if span <= 0:
        raise NoOscillationError("trace has zero duration")
    y0 = y - y.mean()
    df = 1.0 / (oversample * span)
    dt_min = np.min(np.diff(t)[np.diff(t) > 0]) if len(t) > 1 else span
    freqs = np.arange(0, 0.5 / dt_min + df, df)
    power = np.abs(np.exp(-2j * np.pi * np.outer(freqs, t - t[0])) @ y0) ** 2
    if not np.any(power > 1e-30 * max(1.0, float(np.sum(y0**2)))):
        raise NoOscillationError("trace carries no oscillating component")
    k = int(np.argmax(power[1:]) + 1)
    if freqs[k] < 0.75 / span:
        raise NoOscillationError("spectral peak is indistinguishable from the zero-frequency bin")
    if 0 < k < len(freqs) - 1:
        a, b, c = power[k - 1], power[k], power[k + 1]
        denom = a - 2 * b + c
        if denom < 0:
            return float(freqs[k] + 0.5 * (a - c) / denom * df)
    return float(freqs[k])


def extract_frequency(trace: RabiTrace, min_periods: float = 1.5, min_points: float = 8) -> FrequencyEstimate:
    """Fit a cos(2 pi f t + phi) + c to a trace, seeding f from its spectrum.

    Fits ``trace.signal`` when present, otherwise the population.  With
    per-point ``trace.sigma`` (known shot noise) the covariance uses those
    errors as absolute; without them it is scaled by the residual variance.
    """
    t = np.asarray(trace.times, dtype=float)
    y = np.asarray(trace.signal if trace.signal is not None else trace.population, dtype=float)
    if len(t) < 5:
        raise InsufficientSamplingError("need at least 5 samples")
    f0 = spectral_peak(t, y)
    # linear least squares for amplitude/phase at the seed frequency
    basis = np.column_stack([np.cos(2 * np.pi * f0 * t), np.sin(2 * np.pi * f0 * t), np.ones_like(t)])
    (ca, sa, c0), *_ = np.linalg.lstsq(basis, y, rcond=None)
    p0 = [math.hypot(ca, sa), f0, math.atan2(-sa, ca), c0]
    sigma = None if trace.sigma is None else np.asarray(trace.sigma, dtype=float)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", OptimizeWarning)
            popt, pcov = curve_fit(
                _cosine, t, y, p0=p0, sigma=sigma, absolute_sigma=sigma is not None,
                xtol=1e-15, ftol=1e-15, gtol=1e-15, maxfev=20000,
            )
    except RuntimeError as exc:
        raise NoOscillationError(f"cosine fit failed: {exc}") from None
    popt = _polish(t, y, np.ones_like(t) if sigma is None else 1.0 / sigma, np.asarray(popt, dtype=float))
    a, f, phi, c = popt
    if a < 0:
        a, phi = -a, phi + np.pi
    if f < 0:
        f, phi = -f, -phi
    span = t[-1] - t[0]
    if f * span < min_periods * (1 - 1e-9):
        raise InsufficientSamplingError(f"trace covers {f * span:.2f} periods, need {min_periods}")
    if len(t) / (f * span) < min_points * (1 - 1e-9):
        raise InsufficientSamplingError("fewer than 8 samples per oscillation period")
    resid = y - _cosine(t, *popt)
    if sigma is not None:
        resid = resid / sigma
    dof = len(t) - 4
    chi2 = float(resid @ resid)
    if np.all(np.isfinite(pcov)):
        err = float(np.sqrt(pcov[1, 1]))
    else:
        # a residual-free fit leaves the covariance scale undefined
        err = 0.0 if chi2 <= 1e-24 * float(y @ y) else float("inf")
    return FrequencyEstimate(
        float(f), err, float(a), float(np.angle(np.exp(1j * phi))), float(c), chi2, dof
    )
