import importlib
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from nvhyperfine import _kernels_py
from nvhyperfine.model import SpinSystemConfig, build_static, drive_operator

try:
    from nvhyperfine import _kernels as _compiled
except ImportError:  # pragma: no cover - depends on the build
    _compiled = None

BACKENDS = [pytest.param(_kernels_py, id="python"),
            pytest.param(_compiled, id="cython",
                         marks=pytest.mark.skipif(_compiled is None, reason="extension not built"))]


def random_hermitian(rng, n, scale=1.0):
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return scale * (a + a.conj().T) / 2


def system(b_z=450.0, b1=6.0, omega=4.9):
    c = SpinSystemConfig(b_z=b_z, b1=b1, omega_rf=omega)
    return build_static(c).matrix, 2 * c.b1 * drive_operator(c).matrix, c


@pytest.mark.parametrize("k", BACKENDS)
def test_step_unitaries_match_expm(k):
    h0, v, c = system()
    dt = 1e-5
    steps = k.step_unitaries(h0, v, c.omega_rf, 0.0, dt, 40)
    for j in (0, 17, 39):
        tm = (j + 0.5) * dt
        ref = expm(-2j * np.pi * dt * (h0 + np.cos(2 * np.pi * c.omega_rf * tm) * v))
        assert np.abs(steps[j] - ref).max() < 1e-12


@pytest.mark.parametrize("k", BACKENDS)
def test_step_unitaries_are_unitary(k):
    h0, v, c = system()
    steps = k.step_unitaries(h0, v, c.omega_rf, 0.0, 2e-5, 2000)
    eye = np.eye(6)
    defect = max(np.abs(u.conj().T @ u - eye).max() for u in steps[::97])
    assert defect < 1e-14


@pytest.mark.parametrize("k", BACKENDS)
def test_chain_product_order(k):
    rng = np.random.default_rng(0)
    us = np.array([expm(-1j * random_hermitian(rng, 6)) for _ in range(9)])
    ref = np.eye(6, dtype=complex)
    for u in us:
        ref = u @ ref
    assert np.allclose(k.chain_product(us), ref, atol=1e-13)


@pytest.mark.parametrize("k", BACKENDS)
def test_evolve_periodic_literal(k):
    rng = np.random.default_rng(1)
    us = np.array([expm(-1j * random_hermitian(rng, 6, 0.3)) for _ in range(7)])
    psi0 = rng.normal(size=6) + 1j * rng.normal(size=6)
    psi0 /= np.linalg.norm(psi0)
    samples = np.array([0, 1, 6, 7, 13, 30, 30, 50], dtype=np.int64)
    out = k.evolve_periodic(us, psi0, samples)
    psi, n = psi0.copy(), 0
    for q, s in enumerate(samples):
        while n < s:
            psi = us[n % 7] @ psi
            n += 1
        assert np.allclose(out[q], psi, atol=1e-12)


@pytest.mark.parametrize("k", BACKENDS)
def test_evolve_periodic_long_runs(k):
    rng = np.random.default_rng(2)
    us = np.array([expm(-1j * random_hermitian(rng, 6, 0.3)) for _ in range(5)])
    psi0 = np.eye(6, dtype=complex)[3]
    samples = np.array([0, 3, 3, 41, 250, 251, 999, 1000], dtype=np.int64)  # well past 6 periods
    out = k.evolve_periodic(us, psi0, samples)
    psi, n = psi0.copy(), 0
    for q, s in enumerate(samples):
        while n < s:
            psi = us[n % 5] @ psi
            n += 1
        assert np.allclose(out[q], psi, atol=1e-12)
    assert np.allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-12)


@pytest.mark.skipif(_compiled is None, reason="extension not built")
@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 9), nsteps=st.integers(1, 60),
       freq=st.floats(0.1, 50.0), t0=st.floats(0.0, 3.0))
def test_backends_equivalent(seed, n, nsteps, freq, t0):
    rng = np.random.default_rng(seed)
    h0 = random_hermitian(rng, n, 5.0)
    v = random_hermitian(rng, n, 2.0)
    dt = 1e-3
    a = _compiled.step_unitaries(h0, v, freq, t0, dt, nsteps)
    b = _kernels_py.step_unitaries(h0, v, freq, t0, dt, nsteps)
    assert np.abs(a - b).max() < 1e-12
    assert np.allclose(_compiled.chain_product(a), _kernels_py.chain_product(a), atol=1e-11)
    psi0 = np.eye(n, dtype=complex)[0]
    samples = np.sort(rng.integers(0, 3 * nsteps, size=5)).astype(np.int64)
    assert np.allclose(_compiled.evolve_periodic(a, psi0, samples),
                       _kernels_py.evolve_periodic(a, psi0, samples), atol=1e-11)


def test_env_var_forces_fallback():
    code = "import nvhyperfine.kernels as k; print(k.BACKEND)"
    env = dict(os.environ, NVHYPERFINE_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_default_backend_prefers_extension():
    import nvhyperfine.kernels as k

    k = importlib.reload(k) if os.environ.get("NVHYPERFINE_PURE_PYTHON") else k
    assert k.BACKEND == ("cython" if _compiled is not None and not os.environ.get("NVHYPERFINE_PURE_PYTHON")
                         else "python")
