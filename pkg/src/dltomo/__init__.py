"""Double-lambda phase-shift simulation and homodyne tomography pipeline."""

from .atomic import (
    AtomicParams,
    CellResponse,
    CoherencePair,
    DLInterference,
    FieldSet,
    PhasorDecomposition,
    cell_response,
    dl_interference,
    load_params,
    output_phase,
    polarizabilities,
    propagate_fields,
    steady_state_coherences,
    wrap_phase,
)
from .extract import (
    PhaseBin,
    QuadratureRecord,
    Shot,
    SinusoidFit,
    bin_records,
    calibrate_vacuum,
    extract_peaks,
    fit_sinusoid,
    phase_shifts,
    split_shots,
    to_quadrature_records,
)
from .synth import (
    GroundTruth,
    HomodyneTrace,
    NoiseConfig,
    PulseSchedule,
    ScanConfig,
    drift_step,
    mean_peak_voltage,
    synth_burst,
    vacuum_burst,
)
from .tomography import (
    DensityMatrix,
    QuadratureDataset,
    ReconstructionReport,
    WignerGrid,
    bootstrap_errors,
    coherent_dm,
    coherent_overlap,
    fidelity,
    fock_wavefunction,
    mean_photon,
    mle_reconstruct,
    povm_element,
    purity,
    rotate_dm,
    wigner,
)

__version__ = "0.1.0"
