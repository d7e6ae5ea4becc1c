"""Parity-graded open-system models, quantum jump records and filters.

Submodules: :mod:`~fermionfilter.algebra` (graded operators),
:mod:`~fermionfilter.models` (system models and presets),
:mod:`~fermionfilter.dynamics` (master equation),
:mod:`~fermionfilter.stochastics` (counting records and the quantum filter),
:mod:`~fermionfilter.classical` (Kalman and grid filters) and
:mod:`~fermionfilter.cli`.
"""

__version__ = "0.1.0"

from .algebra import (  # noqa: E402
    GradedOperator,
    GradedSpace,
    Parity,
    ampliate,
    anticommutator,
    build_fermion_mode,
    build_three_level,
    build_two_level,
    classify_parity,
    commutator,
    graded_tensor,
    parity_decompose,
    tau,
)
from .classical import (  # noqa: E402
    DoubleWellModel,
    GridDensity,
    LinearGaussianModel,
    kalman_run,
    ks_grid_run,
    simulate_linear,
    simulate_signal_batch,
)
from .dynamics import (  # noqa: E402
    ConditionalState,
    evolve_master,
    expectation,
    heisenberg_apply,
    liouvillian_apply,
    steady_state,
)
from .models import (  # noqa: E402
    DETECTOR_COMPONENTS,
    DetectorParams,
    DotParams,
    SystemModel,
    dot_scalar_filter,
    photodetector,
    photodetector_scalar_filter,
    preset,
    quantum_dot,
    validate,
)
from .records import MeasurementRecord  # noqa: E402
from .stochastics import (  # noqa: E402
    FilterRun,
    jump_apply,
    jump_intensity,
    no_jump_step,
    run_ensemble,
    run_filter,
    run_filters,
    simulate_record,
    simulate_records,
)
