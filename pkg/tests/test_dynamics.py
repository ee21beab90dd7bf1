import numpy as np
import pytest
from hypothesis import example, given, settings
from hypothesis import strategies as st

from nvhyperfine.dynamics import (
    InsufficientSamplingError,
    NoOscillationError,
    PropagationSettings,
    RabiTrace,
    StepSizeError,
    UnitarityDriftError,
    dressed_pair,
    extract_frequency,
    floquet_quasienergies,
    floquet_rabi_splitting,
    max_frequency,
    on_resonance,
    period_propagator,
    propagate_lab,
    propagate_rwa,
    rabi_trace,
    resonance_frequency,
)
from nvhyperfine.mixing import enhancement_exact, rabi_frequency
from nvhyperfine.model import SpinSystemConfig, build_static

C450 = SpinSystemConfig(b_z=450.0, b1=6.0)


def test_rwa_identity_and_pi_pulse():
    up, lo = dressed_pair(C450, 0)
    assert np.allclose(propagate_rwa(C450, 0, 0.0), up)
    alpha = enhancement_exact(C450).alpha_0
    tau = 1 / (2 * np.sqrt(2) * abs(C450.gamma_n * C450.b1 * alpha))
    psi = propagate_rwa(C450, 0, tau)
    assert abs(np.vdot(lo, psi)) ** 2 == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(tau=st.floats(0.0, 50.0), manifold=st.sampled_from([1, 0, -1]))
def test_rwa_closed_form(tau, manifold):
    up, _ = dressed_pair(C450, manifold)
    psi = propagate_rwa(C450, manifold, tau)
    rabi = rabi_frequency(C450, manifold)
    assert abs(np.vdot(up, psi)) ** 2 == pytest.approx(np.cos(np.pi * rabi * tau) ** 2, abs=1e-12)
    assert np.linalg.norm(psi) == pytest.approx(1.0, abs=1e-12)


def test_step_size_invariant():
    c = on_resonance(C450, 0)
    limit = 1 / (50 * max_frequency(c))
    assert PropagationSettings().resolve_dt(c) == pytest.approx(limit)
    with pytest.raises(StepSizeError):
        PropagationSettings(dt=2 * limit).resolve_dt(c)
    with pytest.raises(StepSizeError):
        PropagationSettings(dt=-1.0).resolve_dt(c)
    assert max_frequency(c) >= max(c.delta, c.gamma_e * c.b_z, c.omega_rf)


def test_lab_stationary_state_without_drive():
    c = SpinSystemConfig(b_z=450.0, b1=0.0, omega_rf=5.0)
    w, v = np.linalg.eigh(build_static(c).matrix)
    psi0 = v[:, 2]
    tau = 0.37
    psi = propagate_lab(c, psi0, tau)
    assert abs(np.vdot(psi0, psi)) ** 2 == pytest.approx(1.0, abs=1e-10)
    assert np.vdot(psi0, psi) == pytest.approx(np.exp(-2j * np.pi * w[2] * tau), abs=1e-7)


def test_lab_rejects_bad_inputs():
    c = on_resonance(C450, 0)
    up, _ = dressed_pair(c, 0)
    with pytest.raises(ValueError):
        propagate_lab(c, 2 * up, 0.1)
    with pytest.raises(ValueError):
        propagate_lab(c, up, -0.1)
    with pytest.raises(UnitarityDriftError):
        period_propagator(c, PropagationSettings(tolerance=1e-30))


def test_period_propagator_unitary_and_norm():
    c = on_resonance(C450, -1)
    u = period_propagator(c)
    assert np.abs(u.conj().T @ u - np.eye(6)).max() < 1e-9
    up, _ = dressed_pair(c, -1)
    psi = propagate_lab(c, up, 3.3 / c.omega_rf)
    assert abs(np.linalg.norm(psi) - 1) < 1e-9


def test_floquet_without_drive_matches_static_spectrum():
    c = SpinSystemConfig(b_z=300.0, b1=0.0, omega_rf=4.0)
    w = np.linalg.eigvalsh(build_static(c).matrix)
    folded = np.sort((w + c.omega_rf / 2) % c.omega_rf - c.omega_rf / 2)
    assert np.allclose(floquet_quasienergies(c), folded, atol=1e-6)
    with pytest.raises(ValueError):
        floquet_quasienergies(c.replace(omega_rf=0.0))


@pytest.mark.parametrize("manifold", [1, 0, -1])
def test_floquet_splitting_matches_rwa(manifold):
    c = on_resonance(C450, manifold)
    assert floquet_rabi_splitting(c, manifold) == pytest.approx(rabi_frequency(C450, manifold), rel=1e-2)


def test_trace_basics(tmp_path):
    tr = rabi_trace(C450, 1, [0.0])
    assert tr.population[0] == pytest.approx(0.0, abs=1e-15)
    times = np.linspace(0, 40, 200)
    tr = rabi_trace(C450, 0, times)
    assert np.all((tr.population >= -1e-9) & (tr.population <= 1 + 1e-9))
    tr.write_csv(tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "time_us,population,manifold,frame"
    back = RabiTrace.read_csv(tmp_path / "t.csv")
    assert np.array_equal(back.times, tr.times) and np.array_equal(back.population, tr.population)
    with pytest.raises(ValueError):
        rabi_trace(C450, 0, times, frame="bogus")
    with pytest.raises(ValueError):
        rabi_trace(C450, 0, times[::-1])


def test_rwa_trace_is_exact_cosine():
    times = np.linspace(0, 40, 300)
    tr = rabi_trace(C450, -1, times)
    est = extract_frequency(tr)
    assert est.chi2 < 1e-20
    assert est.frequency == pytest.approx(rabi_frequency(C450, -1), rel=1e-9)


def test_lab_floquet_trace_frequency_ordering():
    alphas = enhancement_exact(C450)
    freqs = {}
    for m in (1, 0, -1):
        f_nom = rabi_frequency(C450, m)
        tr = rabi_trace(C450, m, np.linspace(0, 3 / f_nom, 60), frame="lab-floquet")
        freqs[m] = extract_frequency(tr).frequency
        assert freqs[m] == pytest.approx(f_nom, rel=5e-3)
    order = sorted(freqs, key=freqs.get)
    assert order == sorted((1, 0, -1), key=lambda m: abs(alphas[m]))
    assert len({round(f, 4) for f in freqs.values()}) == 3


def test_resonance_frequency_positive():
    for m in (1, 0, -1):
        assert resonance_frequency(C450, m) > 0


@settings(max_examples=40, deadline=None)
@given(f=st.floats(0.2, 2.0), phi=st.floats(-3.0, 3.0), a=st.floats(0.1, 2.0), c=st.floats(-1.0, 1.0))
@example(f=0.2, phi=0.0, a=0.19921875, c=0.0)
def test_cosine_fit_exact_recovery(f, phi, a, c):
    t = np.linspace(0, 6 / f, 120)
    y = a * np.cos(2 * np.pi * f * t + phi) + c
    est = extract_frequency(RabiTrace(t, y, 0, "rwa"))
    assert abs(est.frequency - f) / f < 1e-9


def test_cosine_fit_noise_calibration():
    rng = np.random.default_rng(42)
    t = np.linspace(0, 10, 100)
    hits = 0
    for _ in range(100):
        y = 0.5 - 0.5 * np.cos(2 * np.pi * 0.5 * t) + rng.normal(0, 0.05, t.size)
        f, err = extract_frequency(RabiTrace(t, y, 0, "rwa"))
        hits += abs(f - 0.5) < 3 * err
    assert hits >= 95


def test_frequency_preconditions():
    t = np.linspace(0, 1, 50)
    with pytest.raises(NoOscillationError):
        extract_frequency(RabiTrace(t, np.full_like(t, 0.3), 0, "rwa"))
    with pytest.raises((NoOscillationError, InsufficientSamplingError)):
        extract_frequency(RabiTrace(t, np.cos(2 * np.pi * 1.0 * t), 0, "rwa"))  # one period only
    t = np.linspace(0, 10, 30)
    with pytest.raises(InsufficientSamplingError):
        extract_frequency(RabiTrace(t, np.cos(2 * np.pi * 0.6 * t), 0, "rwa"))  # 5 points per period
