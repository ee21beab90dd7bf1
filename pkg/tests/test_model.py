import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nvhyperfine.model import (
    SQRT2,
    BasisLabel,
    ConfigError,
    Operator,
    SpinSystemConfig,
    build_full_spin1,
    build_nonsecular,
    build_rf,
    build_rf_rwa,
    build_secular,
    build_static,
    full_basis,
    load_config,
    reduced_basis,
    save_config,
    spin_operators,
)

fields = st.floats(min_value=0.0, max_value=1200.0)
couplings = st.floats(min_value=-5.0, max_value=5.0)


def ket(label, basis=None):
    basis = basis or reduced_basis()
    v = np.zeros(len(basis))
    v[basis.index(BasisLabel(*label))] = 1.0
    return v


def test_defaults():
    c = SpinSystemConfig()
    assert (c.delta, c.q_quad, c.a_par, c.gamma_e, c.gamma_n) == (2870.0, -4.945, -2.162, 2.8, -3.08e-4)
    assert c.a_perp == -2.62


@pytest.mark.parametrize("bad", [{"delta": 0.0}, {"delta": -1.0}, {"gamma_e": 0.0}, {"b_z": float("nan")},
                                 {"omega_rf": -1.0}, {"a_perp": float("inf")}])
def test_invalid_config(bad):
    with pytest.raises(ConfigError):
        SpinSystemConfig(**bad)


def test_config_roundtrip(tmp_path):
    c = SpinSystemConfig(b_z=509.0, b1=6.0)
    save_config(c, tmp_path / "c.json")
    assert load_config(tmp_path / "c.json") == c


def test_config_unknown_key(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"b_z": 1.0, "bogus": 2}))
    with pytest.raises(ConfigError, match="bogus"):
        load_config(tmp_path / "c.json")
    (tmp_path / "d.json").write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "d.json")


def test_basis_order():
    assert reduced_basis() == ((1, 1), (1, 0), (0, 1), (0, 0), (-1, 1), (-1, 0))
    assert all(lab.m_i != -1 for lab in reduced_basis())
    assert len(full_basis()) == 9


def test_spin_operator_definitions():
    S = spin_operators("electron-1")
    assert np.allclose(S.z, np.diag([1, 0, -1]))
    assert np.allclose(S.x @ S.y - S.y @ S.x, 1j * S.z)
    I = spin_operators("nuclear-reduced-half")
    assert np.allclose(I.x, 0.5 * np.array([[0, 1], [1, 0]]))
    assert np.allclose(I.x @ I.y - I.y @ I.x, 1j * I.z)
    with pytest.raises(ValueError):
        spin_operators("nuclear-3/2")


def test_operator_shape_and_arithmetic():
    with pytest.raises(ValueError):
        Operator(np.eye(5))
    a = Operator(np.eye(6))
    assert np.allclose((a + 2 * a / 3).matrix, np.eye(6) * 5 / 3)
    with pytest.raises(ValueError):
        a + Operator(np.eye(9), full_basis())


def test_secular_zero_field_only_delta():
    c = SpinSystemConfig(q_quad=0.0, a_par=0.0, a_perp=0.0, gamma_n=0.0)
    h = build_secular(c).matrix
    assert np.allclose(h, np.diag([2870, 2870, 0, 0, 2870, 2870]))


def test_secular_diagonal_scalar_oracle():
    c = SpinSystemConfig(b_z=450.0)
    h = build_secular(c)
    ms, mi = 1, 0.5  # reduced m_I=+1 carries Iz=+1/2
    expected = (c.delta * ms**2 + (c.gamma_e * c.b_z + c.a_par / 2) * ms
                + (c.q_quad + c.gamma_n * c.b_z) * mi + c.a_par * ms * mi)
    assert h.element((1, 1), (1, 1)).real == pytest.approx(expected, rel=1e-14)
    gap = h.element((0, 1), (0, 1)) - h.element((0, 0), (0, 0))
    assert gap.real == pytest.approx(c.q_quad + c.gamma_n * c.b_z, rel=1e-13)


def test_nonsecular_pattern_and_magnitude():
    c = SpinSystemConfig()
    h = build_nonsecular(c)
    nz = {(h.basis[i], h.basis[j]) for i, j in zip(*np.nonzero(np.abs(h.matrix) > 1e-14))}
    pairs = {((1, 0), (0, 1)), ((0, 1), (1, 0)), ((0, 0), (-1, 1)), ((-1, 1), (0, 0))}
    assert nz == pairs
    # explicit matrix-product oracle for sqrt(2) A (Sx Ix + Sy Iy)
    sx = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]]) / SQRT2
    sy = np.array([[0, -1j, 0], [1j, 0, -1j], [0, 1j, 0]]) / SQRT2
    ix = np.array([[0, 1], [1, 0]]) / 2
    iy = np.array([[0, -1j], [1j, 0]]) / 2
    oracle = SQRT2 * c.a_perp * (np.kron(sx, ix) + np.kron(sy, iy))
    assert np.allclose(h.matrix, oracle, atol=1e-15)
    assert h.element((1, 0), (0, 1)).real == pytest.approx(c.a_perp)
    assert np.allclose(build_nonsecular(c.replace(a_perp=0.0)).matrix, 0)


def test_rf_terms():
    c = SpinSystemConfig(b1=6.0, omega_rf=5.0)
    assert np.allclose(build_rf(c, 1 / (4 * c.omega_rf)).matrix, 0, atol=1e-12)
    assert np.allclose(build_rf(c.replace(b1=0.0), 0.3).matrix, 0)
    assert np.allclose(build_rf_rwa(c).matrix, build_rf(c, 0.0).matrix / 2)
    assert np.allclose(build_rf_rwa(c.replace(b1=0.0)).matrix, 0)
    with pytest.raises(ValueError):
        build_rf(c, -1.0)
    # independent assembly of 2 B1 (gamma_e Sx + sqrt2 gamma_n Ix)
    sx = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]]) / SQRT2
    ix = np.array([[0, 1], [1, 0]]) / 2
    oracle = 2 * c.b1 * (c.gamma_e * np.kron(sx, np.eye(2)) + SQRT2 * c.gamma_n * np.kron(np.eye(3), ix))
    assert np.allclose(build_rf(c, 0.0).matrix, oracle)
    # Frobenius norm: 8 electron elements of gamma_e B1/sqrt2, 6 nuclear of gamma_n B1/sqrt2
    norm = c.b1 * np.sqrt(8 * c.gamma_e**2 / 2 + 6 * c.gamma_n**2 / 2)
    assert np.linalg.norm(build_rf_rwa(c).matrix) == pytest.approx(norm, rel=1e-14)


def test_full_model_structure():
    c = SpinSystemConfig(b_z=300.0)
    h = build_full_spin1(c)
    w = np.linalg.eigvalsh(h.matrix)
    assert len(w) == 9
    assert h.is_hermitian()
    # restriction to m_I in {+1, 0}: same diagonal as the reduced model up to one offset per m_s
    sec = build_secular(c)
    hc = build_full_spin1(c.replace(a_perp=0.0))
    assert np.count_nonzero(hc.matrix - np.diag(np.diag(hc.matrix))) == 0
    for ms in (1, 0, -1):
        d_full = [hc.element((ms, mi), (ms, mi)).real for mi in (1, 0)]
        d_red = [sec.element((ms, mi), (ms, mi)).real for mi in (1, 0)]
        assert d_full[0] - d_full[1] == pytest.approx(d_red[0] - d_red[1], abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(bz=fields, a_perp=couplings, a_par=couplings, q=couplings, b1=st.floats(0, 20), t=st.floats(0, 10))
def test_hermiticity(bz, a_perp, a_par, q, b1, t):
    c = SpinSystemConfig(b_z=bz, a_perp=a_perp, a_par=a_par, q_quad=q, b1=b1, omega_rf=3.0)
    for op in (build_secular(c), build_nonsecular(c), build_static(c), build_rf(c, t),
               build_rf_rwa(c), build_full_spin1(c)):
        assert op.is_hermitian(1e-12)


@settings(max_examples=40, deadline=None)
@given(bz=fields, a_par=couplings, q=couplings)
def test_secular_commutes_with_sz_and_iz(bz, a_par, q):
    h = build_secular(SpinSystemConfig(b_z=bz, a_par=a_par, q_quad=q)).matrix
    sz = np.kron(np.diag([1, 0, -1]), np.eye(2))
    iz = np.kron(np.eye(3), np.diag([0.5, -0.5]))
    assert np.allclose(h @ sz, sz @ h)
    assert np.allclose(h @ iz, iz @ h)


@settings(max_examples=40, deadline=None)
@given(a_perp=couplings)
def test_nonsecular_zero_outside_zq_pairs(a_perp):
    h = build_nonsecular(SpinSystemConfig(a_perp=a_perp))
    mask = np.ones((6, 6), dtype=bool)
    for a, b in (((1, 0), (0, 1)), ((0, 0), (-1, 1))):
        mask[h.index(a), h.index(b)] = mask[h.index(b), h.index(a)] = False
    assert np.all(h.matrix[mask] == 0)


@settings(max_examples=30, deadline=None)
@given(bz=fields)
def test_eigenvectors_approach_bare_basis(bz):
    c = SpinSystemConfig(b_z=bz, a_perp=1e-9)
    h = build_static(c).matrix
    _, v = np.linalg.eigh(h)
    assert np.all(np.max(np.abs(v) ** 2, axis=0) > 1 - 1e-10)
