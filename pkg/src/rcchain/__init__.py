"""rcchain: design and behavioral-simulation lab for the amplifier-less
RC-chain continuous-time ADC."""

from .chain import (
    ChainParameters,
    ElementValues,
    StateSpace,
    build_nominal_config,
    build_state_space,
    compute_kappas,
    compute_tau,
    nominal_elements,
)
from .designer import (
    DesignTarget,
    NoiseBudget,
    SnrSurface,
    design_search,
    expected_snr,
    noise_transfer,
    phi_factor,
    size_components,
    snr_surface,
    transfer_magnitude,
)
from .errors import InfeasibleDesign, QuadratureError, SimulationDiverged, TrainingError
from .metrics import PsdEstimate, input_current_stats, snr_enob, state_histogram, welch_psd
from .recon import (
    FilterBank,
    TrainingReport,
    decimate_controls,
    estimate,
    train_filters,
    train_filters_lms,
)
from .records import read_record, write_record
from .simulator import (
    ComparatorModel,
    ExternalInput,
    HeldRandom,
    NoiseSpec,
    SimRecord,
    Sine,
    ZeroInput,
    discretize,
    oracle_integrate,
    perturb_elements,
    simulate,
    thermal_noise,
)

__version__ = "0.1.0"
