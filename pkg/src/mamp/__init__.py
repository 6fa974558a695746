"""Memory AMP with AMP and OAMP/VAMP baselines for y = Ax + n."""
from .algorithms import RunReport, run_amp, run_mamp, run_oamp_vamp
from .harness import ExperimentConfig, load_config, run_experiment, write_csv
from .kernels import BACKEND
from .operators import LinearOperator, build_operator, compute_spectral_table
from .prior import BernoulliGaussianPrior, denoise, mmse_eval, orthogonal_nle, sample_signal
from .schedule import MampSchedule, optimal_damping
from .state_evolution import mamp_state_evolution, se_fixed_point

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "BernoulliGaussianPrior", "ExperimentConfig", "LinearOperator", "MampSchedule",
    "RunReport", "build_operator", "compute_spectral_table", "denoise", "load_config",
    "mamp_state_evolution", "mmse_eval", "optimal_damping", "orthogonal_nle", "run_amp",
    "run_experiment", "run_mamp", "run_oamp_vamp", "sample_signal", "se_fixed_point", "write_csv",
]
