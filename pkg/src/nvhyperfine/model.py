"""Spin system configuration, spin operators and Hamiltonian construction.

Units: energies and frequencies in MHz (ordinary, not angular), fields in
Gauss, times in microseconds.  Factors of 2*pi only appear in the
propagators.

Reduced basis order is (m_s = +1, 0, -1) x (m_I = +1, 0); the full model
uses (m_s = +1, 0, -1) x (m_I = +1, 0, -1).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

MANIFOLDS = (1, 0, -1)

SQRT2 = np.sqrt(2.0)


class ConfigError(ValueError):
    """Invalid configuration values or configuration file."""


@dataclass(frozen=True)
class SpinSystemConfig:
    delta: float = 2870.0
    q_quad: float = -4.945
    a_par: float = -2.162
    a_perp: float = -2.62
    gamma_e: float = 2.8
    gamma_n: float = -3.08e-4
    b_z: float = 0.0
    b1: float = 0.0
    omega_rf: float = 0.0

    def __post_init__(self):
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if not np.isfinite(value):
                raise ConfigError(f"{f.name} must be finite, got {value!r}")
        if self.delta <= 0:
            raise ConfigError("delta must be positive")
        if self.gamma_e <= 0:
            raise ConfigError("gamma_e must be positive")
        if self.omega_rf < 0:
            raise ConfigError("omega_rf must be nonnegative")

    def replace(self, **changes) -> "SpinSystemConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SpinSystemConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        try:
            values = {k: float(v) for k, v in data.items()}
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"non-numeric configuration value: {exc}") from None
        return cls(**values)


def load_config(path: str | Path) -> SpinSystemConfig:
    """Read a flat JSON object whose keys are SpinSystemConfig field names."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config file must contain a flat key-value object")
    return SpinSystemConfig.from_dict(data)


def save_config(config: SpinSystemConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2) + "\n")


class BasisLabel(NamedTuple):
    m_s: int
    m_i: int

    def __str__(self):
        return f"|{self.m_s:+d},{self.m_i:+d}>"


def reduced_basis() -> tuple[BasisLabel, ...]:
    return tuple(BasisLabel(ms, mi) for ms in MANIFOLDS for mi in (1, 0))


def full_basis() -> tuple[BasisLabel, ...]:
    return tuple(BasisLabel(ms, mi) for ms in MANIFOLDS for mi in (1, 0, -1))


@dataclass(frozen=True)
class Operator:
    """Dense matrix together with the labels of its basis states."""

    matrix: np.ndarray
    basis: tuple[BasisLabel, ...] = field(default_factory=reduced_basis)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (len(self.basis), len(self.basis)):
            raise ValueError(f"matrix shape {m.shape} does not match basis size {len(self.basis)}")
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return len(self.basis)

    def index(self, label: tuple[int, int]) -> int:
        return self.basis.index(BasisLabel(*label))

    def element(self, row: tuple[int, int], col: tuple[int, int]) -> complex:
        return self.matrix[self.index(row), self.index(col)]

    def is_hermitian(self, rtol: float = 1e-12) -> bool:
        scale = max(np.abs(self.matrix).max(), 1e-300)
        return np.abs(self.matrix - self.matrix.conj().T).max() <= rtol * scale

    def __add__(self, other: "Operator") -> "Operator":
        if self.basis != other.basis:
            raise ValueError("cannot add operators on different bases")
        return Operator(self.matrix + other.matrix, self.basis)

    def __mul__(self, scalar) -> "Operator":
        return Operator(self.matrix * scalar, self.basis)

    __rmul__ = __mul__

    def __truediv__(self, scalar) -> "Operator":
        return Operator(self.matrix / scalar, self.basis)


class SpinOps(NamedTuple):
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray


def _angular_momentum(j: float, m_values: Sequence[float]) -> SpinOps:
    m = np.asarray(m_values, dtype=float)
    jz = np.diag(m).astype(complex)
    # <m+1|J+|m> = sqrt(j(j+1) - m(m+1)); basis ordered by descending m
    jp = np.zeros((len(m), len(m)), dtype=complex)
    for k in range(1, len(m)):
        jp[k - 1, k] = np.sqrt(j * (j + 1) - m[k] * (m[k] + 1))
    jx = (jp + jp.conj().T) / 2
    jy = (jp - jp.conj().T) / 2j
    return SpinOps(jx, jy, jz)


@lru_cache(maxsize=None)
def _spin_operators(kind: str) -> SpinOps:
    if kind == "electron-1" or kind == "nuclear-full-1":
        ops = _angular_momentum(1.0, (1.0, 0.0, -1.0))
    elif kind == "nuclear-reduced-half":
        ops = _angular_momentum(0.5, (0.5, -0.5))
    else:
        raise ValueError(f"unknown spin kind {kind!r}")
    for m in ops:
        m.flags.writeable = False
    return ops


def spin_operators(kind: str) -> SpinOps:
    """Spin matrices for ``electron-1``, ``nuclear-reduced-half`` or ``nuclear-full-1``.

    The reduced nuclear operators are spin-1/2 matrices acting on
    {m_I=+1, m_I=0}; the sqrt(2) that appears with them in the hyperfine and
    RF terms is applied by the Hamiltonian builders, not here.  The returned
    arrays are shared and read-only.
    """
    return _spin_operators(kind)


def _electron(op: np.ndarray, nuclear_dim: int) -> np.ndarray:
    return np.kron(op, np.eye(nuclear_dim))


def _nuclear(op: np.ndarray) -> np.ndarray:
    return np.kron(np.eye(3), op)


@lru_cache(maxsize=None)
def _reduced_terms() -> dict[str, np.ndarray]:
    S = spin_operators("electron-1")
    I = spin_operators("nuclear-reduced-half")
    sz = _electron(S.z, 2)
    iz = _nuclear(I.z)
    terms = {
        "sz": sz,
        "sz2": sz @ sz,
        "iz": iz,
        "sziz": sz @ iz,
        "flipflop": np.kron(S.x, I.x) + np.kron(S.y, I.y),
        "sx": _electron(S.x, 2),
        "ix": _nuclear(I.x),
    }
    for m in terms.values():
        m.flags.writeable = False
    return terms


def build_secular(config: SpinSystemConfig) -> Operator:
    t = _reduced_terms()
    h = (
        config.delta * t["sz2"]
        + (config.gamma_e * config.b_z + config.a_par / 2) * t["sz"]
        + (config.q_quad + config.gamma_n * config.b_z) * t["iz"]
        + config.a_par * t["sziz"]
    )
    return Operator(h)


def build_nonsecular(config: SpinSystemConfig) -> Operator:
    return Operator(SQRT2 * config.a_perp * _reduced_terms()["flipflop"])


def build_static(config: SpinSystemConfig) -> Operator:
    """Secular plus nonsecular parts of the reduced Hamiltonian."""
    return build_secular(config) + build_nonsecular(config)


def drive_operator(config: SpinSystemConfig) -> Operator:
    """gamma_e Sx + sqrt(2) gamma_n Ix on the reduced space (per Gauss of B1)."""
    t = _reduced_terms()
    return Operator(config.gamma_e * t["sx"] + SQRT2 * config.gamma_n * t["ix"])


def build_rf(config: SpinSystemConfig, t: float) -> Operator:
    """Lab-frame RF term 2 B1 cos(2 pi omega_rf t) (gamma_e Sx + sqrt(2) gamma_n Ix)."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    c = np.cos(2 * np.pi * config.omega_rf * t)
    return drive_operator(config) * (2 * config.b1 * c)


def build_rf_rwa(config: SpinSystemConfig) -> Operator:
    return drive_operator(config) * config.b1


def build_full_spin1(config: SpinSystemConfig) -> Operator:
    """Static Hamiltonian with a genuine spin-1 nitrogen (9 levels).

    Quadrupole enters as Q Iz^2 and the hyperfine as A_par Sz Iz +
    A_perp (Sx Ix + Sy Iy).
    """
    S = spin_operators("electron-1")
    I = spin_operators("nuclear-full-1")
    e = lambda op: np.kron(op, np.eye(3))  # noqa: E731
    n = lambda op: np.kron(np.eye(3), op)  # noqa: E731
    h = (
        config.delta * e(S.z @ S.z)
        + config.gamma_e * config.b_z * e(S.z)
        + config.q_quad * n(I.z @ I.z)
        + config.gamma_n * config.b_z * n(I.z)
        + config.a_par * np.kron(S.z, I.z)
        + config.a_perp * (np.kron(S.x, I.x) + np.kron(S.y, I.y))
    )
    return Operator(h, full_basis())


def full_drive_operator(config: SpinSystemConfig) -> Operator:
    S = spin_operators("electron-1")
    I = spin_operators("nuclear-full-1")
    m = config.gamma_e * np.kron(S.x, np.eye(3)) + config.gamma_n * np.kron(np.eye(3), I.x)
    return Operator(m, full_basis())
