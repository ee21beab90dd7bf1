"""Zero-quantum mixing, labeled diagonalization and Rabi enhancement factors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .model import (
    SQRT2,
    BasisLabel,
    Operator,
    SpinSystemConfig,
    build_full_spin1,
    build_static,
    drive_operator,
    full_drive_operator,
)

DEGENERACY_THRESHOLD = 1e-6  # MHz


class DegenerateDenominatorError(ArithmeticError):
    """A zero-quantum energy denominator vanishes (operating at a level crossing)."""


class LabelingAmbiguityError(RuntimeError):
    """Two eigenvectors share the same dominant bare state."""


@dataclass(frozen=True)
class ZqAngles:
    theta_plus: float
    theta_minus: float


@dataclass(frozen=True)
class EnhancementSet:
    alpha_p1: float
    alpha_0: float
    alpha_m1: float
    method: str

    def __getitem__(self, manifold: int) -> float:
        return {1: self.alpha_p1, 0: self.alpha_0, -1: self.alpha_m1}[manifold]

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.alpha_p1, self.alpha_0, self.alpha_m1)


def zq_denominators(config: SpinSystemConfig) -> tuple[float, float]:
    """Energy gaps of the |+1,0>-|0,1> and |-1,1>-|0,0> pairs."""
    c = config
    d_plus = c.delta + c.gamma_e * c.b_z - c.gamma_n * c.b_z - c.q_quad
    d_minus = c.delta - c.gamma_e * c.b_z - c.a_par + c.gamma_n * c.b_z + c.q_quad
    for d in (d_plus, d_minus):
        if abs(d) < DEGENERACY_THRESHOLD:
            raise DegenerateDenominatorError(
                f"zero-quantum gap {d:.3e} MHz at b_z={c.b_z} G is degenerate"
            )
    return d_plus, d_minus


def zq_angles(config: SpinSystemConfig) -> ZqAngles:
    d_plus, d_minus = zq_denominators(config)
    return ZqAngles(
        0.5 * np.arctan(2 * config.a_perp / d_plus),
        0.5 * np.arctan(-2 * config.a_perp / d_minus),
    )


def _ket(label: tuple[int, int], basis) -> np.ndarray:
    v = np.zeros(len(basis), dtype=complex)
    v[basis.index(BasisLabel(*label))] = 1.0
    return v


def zq_generators() -> tuple[np.ndarray, np.ndarray]:
    """The sigma_y^+ and sigma_y^- rotation generators on the reduced basis."""
    basis = Operator(np.zeros((6, 6))).basis
    k = lambda *lab: _ket(lab, basis)  # noqa: E731
    sy_plus = 1j * (np.outer(k(1, 0), k(0, 1)) - np.outer(k(0, 1), k(1, 0)))
    sy_minus = 1j * (np.outer(k(0, 0), k(-1, 1)) - np.outer(k(-1, 1), k(0, 0)))
    return sy_plus, sy_minus


def zq_unitary(angles: ZqAngles) -> Operator:
    """U = exp(-i (sigma_y^- theta^- + sigma_y^+ theta^+)).

    With these conventions U H U^dagger is diagonal for the angles returned
    by :func:`zq_angles`.
    """
    sy_plus, sy_minus = zq_generators()
    return Operator(expm(-1j * (sy_minus * angles.theta_minus + sy_plus * angles.theta_plus)))


@dataclass(frozen=True)
class LabeledEigensystem:
    energies: np.ndarray  # ascending, MHz
    vectors: np.ndarray  # columns are eigenvectors in the bare basis
    labels: tuple[BasisLabel, ...]
    basis: tuple[BasisLabel, ...]

    def index(self, label: tuple[int, int]) -> int:
        return self.labels.index(BasisLabel(*label))

    def energy(self, label: tuple[int, int]) -> float:
        return float(self.energies[self.index(label)])

    def vector(self, label: tuple[int, int]) -> np.ndarray:
        return self.vectors[:, self.index(label)]

    def overlaps(self) -> np.ndarray:
        """|<bare_i|eigen_j>|^2 for the labeled bare state of each eigenvector."""
        rows = [self.basis.index(lab) for lab in self.labels]
        return np.abs(self.vectors[rows, np.arange(len(rows))]) ** 2


def _connected_blocks(pattern: np.ndarray) -> tuple[int, np.ndarray]:
    n = len(pattern)
    block_of = np.full(n, -1)
    n_blocks = 0
    for seed in range(n):
        if block_of[seed] >= 0:
            continue
        block_of[seed] = n_blocks
        stack = [seed]
        while stack:
            i = stack.pop()
            for j in np.flatnonzero(pattern[i]):
                if block_of[j] < 0:
                    block_of[j] = n_blocks
                    stack.append(j)
        n_blocks += 1
    return n_blocks, block_of


def diagonalize(h: Operator) -> LabeledEigensystem:
    """Exact eigensystem with adiabatic (maximum-overlap) labels.

    Blocks of the Hamiltonian that are not connected by nonzero elements are
    diagonalized separately, so exact crossings between uncoupled states
    never produce arbitrary mixtures.
    """
    m = h.matrix
    scale = max(np.abs(m).max(), 1.0)
    if np.abs(m - m.conj().T).max() > 1e-12 * scale:
        raise ValueError("diagonalize requires a Hermitian operator")
    n = h.dim
    pattern = np.abs(m) > 1e-15 * scale
    n_blocks, block_of = _connected_blocks(pattern)
    energies = np.empty(n)
    vectors = np.zeros((n, n), dtype=complex)
    col = 0
    for b in range(n_blocks):
        idx = np.flatnonzero(block_of == b)
        w, v = np.linalg.eigh(m[np.ix_(idx, idx)])
        energies[col : col + len(idx)] = w
        vectors[idx, col : col + len(idx)] = v
        col += len(idx)
    order = np.argsort(energies, kind="stable")
    energies = energies[order]
    vectors = vectors[:, order]

    dominant = np.argmax(np.abs(vectors), axis=0)
    for j, i in enumerate(dominant):
        phase = vectors[i, j] / abs(vectors[i, j])
        vectors[:, j] /= phase
    if len(set(dominant.tolist())) != n:
        raise LabelingAmbiguityError("two eigenvectors share the same dominant bare state")
    labels = tuple(h.basis[i] for i in dominant)
    return LabeledEigensystem(energies, vectors, labels, h.basis)


def enhancement_first_order(config: SpinSystemConfig) -> EnhancementSet:
    d_plus, d_minus = zq_denominators(config)
    ratio = config.gamma_e / config.gamma_n
    term_plus = ratio * config.a_perp / d_plus
    term_minus = ratio * config.a_perp / d_minus
    return EnhancementSet(
        alpha_p1=1 + term_plus,
        alpha_0=1 - (term_plus + term_minus),
        alpha_m1=1 + term_minus,
        method="first-order",
    )


def _dressed_ratio(eig: LabeledEigensystem, drive: np.ndarray, bare: float) -> EnhancementSet:
    alphas = []
    for ms in (1, 0, -1):
        upper = eig.vector((ms, 1))
        lower = eig.vector((ms, 0))
        alphas.append(float(np.real(upper.conj() @ drive @ lower) / bare))
    return EnhancementSet(*alphas, method="exact")


def enhancement_exact(config: SpinSystemConfig, model: str = "reduced") -> EnhancementSet:
    """Enhancement factors from dressed-state nuclear transition matrix elements.

    Each factor is <m_s,1|gamma_e Sx + sqrt(2) gamma_n Ix|m_s,0> between the
    exact (labeled) eigenstates, normalized by the bare nuclear element
    gamma_n / sqrt(2).  ``model="full"`` evaluates the same ratio on the
    nine-level Hamiltonian with a spin-1 nitrogen.
    """
    if model == "reduced":
        eig = diagonalize(build_static(config))
        drive = drive_operator(config).matrix
    elif model == "full":
        eig = diagonalize(build_full_spin1(config))
        drive = full_drive_operator(config).matrix
    else:
        raise ValueError(f"unknown model {model!r}")
    return _dressed_ratio(eig, drive, config.gamma_n / SQRT2)


def nuclear_transition_frequency(config: SpinSystemConfig, manifold: int) -> float:
    """Dressed |m_s,1> - |m_s,0> splitting in MHz (signed)."""
    eig = diagonalize(build_static(config))
    return eig.energy((manifold, 1)) - eig.energy((manifold, 0))


def bare_rabi_frequency(config: SpinSystemConfig) -> float:
    """sqrt(2) |gamma_n B1|: Rabi frequency of the m_I=1 <-> 0 pair without mixing.

    The rotating-frame drive sqrt(2) gamma_n B1 Ix has off-diagonal element
    gamma_n B1 / sqrt(2) between m_I=1 and m_I=0, which splits the pair by
    sqrt(2) gamma_n B1.
    """
    return SQRT2 * abs(config.gamma_n * config.b1)


def rabi_frequency(config: SpinSystemConfig, manifold: int, method: str = "exact") -> float:
    """On-resonance nuclear Rabi frequency sqrt(2) |gamma_n B1 alpha| in MHz."""
    alphas = enhancement_exact(config) if method == "exact" else enhancement_first_order(config)
    return bare_rabi_frequency(config) * abs(alphas[manifold])
