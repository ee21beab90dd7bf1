"""NV electron / 14N nuclear spin simulation and transverse hyperfine estimation."""

from types import ModuleType as _ModuleType

from .dynamics import (
    FRAMES,
    FrequencyEstimate,
    NoOscillationError,
    PropagationSettings,
    RabiTrace,
    extract_frequency,
    floquet_quasienergies,
    floquet_rabi_splitting,
    propagate_lab,
    propagate_rwa,
    rabi_trace,
)
from .estimation import (
    FitResult,
    ReadoutModel,
    RankDeficiencyError,
    Strategy,
    SweepDataset,
    SweepDesign,
    fit_detuned_rabi,
    fit_transverse_hyperfine,
    frontier,
    precision_study,
    synth_measurement,
    synth_sweep,
)
from .kernels import BACKEND
from .mixing import (
    DegenerateDenominatorError,
    EnhancementSet,
    diagonalize,
    enhancement_exact,
    enhancement_first_order,
    rabi_frequency,
    zq_angles,
    zq_unitary,
)
from .model import (
    MANIFOLDS,
    ConfigError,
    Operator,
    SpinSystemConfig,
    build_full_spin1,
    build_nonsecular,
    build_rf,
    build_rf_rwa,
    build_secular,
    build_static,
    load_config,
    spin_operators,
)

__version__ = "0.1.0"

__all__ = [n for n, v in dict(globals()).items() if not n.startswith("_") and not isinstance(v, _ModuleType)]
