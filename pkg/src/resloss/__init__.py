"""resloss: loss-channel extraction and surface-loss decomposition for
superconducting microwave resonators."""

from .decomposition import (
    DecompositionResult,
    DeviceGeometry,
    Measured,
    SprScalingFit,
    SurfaceLossTable,
    aggregate_triplets,
    extrapolate_oxide_thickness,
    fit_spr_scaling,
    q_tls_at_photon,
    rescale_intrinsic,
    solve_alternate_placement,
    solve_hydrocarbon,
    solve_pair,
)
from .design import CpwDesign, LumpedExtraction, coupling_capacitance, cpw_f0, extract_lumped
from .freqshift import (
    ConductivityState,
    FreqShiftDataset,
    FreqShiftFit,
    FreqShiftParams,
    FreqShiftResult,
    fit_freq_shift,
    freq_shift_model,
    qp_freq_shift,
    sigma_thermal,
    sigma_zero,
    tls_freq_shift,
)
from .lineshape import (
    LineshapeFit,
    LineshapeParams,
    LineshapeResult,
    NoDipFoundError,
    ResonatorTrace,
    detect_nonlinearity,
    fit_trace,
    qc_constancy,
    s21_model,
)
from .lossmodel import (
    LossFitResult,
    SweepDataset,
    SweepLossFit,
    correlation_report,
    fit_sweep,
    photon_number,
    q_int_model,
    q_qp,
    q_tls,
    qp_loss,
    tls_loss,
)
from .numerics import (
    FitDivergedError,
    FitOutcome,
    FitProblem,
    bessel_i0,
    bessel_i0_scaled,
    bessel_k0,
    bessel_k0_scaled,
    digamma_real_part,
    nlls_fit,
)

__version__ = "0.1.0"

__all__ = [
    "DecompositionResult",
    "DeviceGeometry",
    "Measured",
    "SprScalingFit",
    "SurfaceLossTable",
    "aggregate_triplets",
    "extrapolate_oxide_thickness",
    "fit_spr_scaling",
    "q_tls_at_photon",
    "rescale_intrinsic",
    "solve_alternate_placement",
    "solve_hydrocarbon",
    "solve_pair",
    "CpwDesign",
    "LumpedExtraction",
    "coupling_capacitance",
    "cpw_f0",
    "extract_lumped",
    "ConductivityState",
    "FreqShiftDataset",
    "FreqShiftFit",
    "FreqShiftParams",
    "FreqShiftResult",
    "fit_freq_shift",
    "freq_shift_model",
    "qp_freq_shift",
    "sigma_thermal",
    "sigma_zero",
    "tls_freq_shift",
    "LineshapeFit",
    "LineshapeParams",
    "LineshapeResult",
    "NoDipFoundError",
    "ResonatorTrace",
    "detect_nonlinearity",
    "fit_trace",
    "qc_constancy",
    "s21_model",
    "LossFitResult",
    "SweepDataset",
    "SweepLossFit",
    "correlation_report",
    "fit_sweep",
    "photon_number",
    "q_int_model",
    "q_qp",
    "q_tls",
    "qp_loss",
    "tls_loss",
    "FitDivergedError",
    "FitOutcome",
    "FitProblem",
    "bessel_i0",
    "bessel_i0_scaled",
    "bessel_k0",
    "bessel_k0_scaled",
    "digamma_real_part",
    "nlls_fit",
]
