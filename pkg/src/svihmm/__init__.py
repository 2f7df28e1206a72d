"""Stochastic variational inference for hidden Markov models with Gaussian emissions."""
from .batch import FitError, FitTrace, default_prior, run_batch_vb
from .messages import Beliefs, brute_force_beliefs, forward_backward
from .metrics import predictive_log_prob, transition_error
from .model import GlobalVariational, HmmParams, NiwNat, NiwParams, Prior, ValidationError, sample_hmm
from .svi import SviConfig, grow_buffer, run_svihmm
from .synthetic import make_dd_params, make_rc_params, read_dataset, write_dataset

__version__ = "0.1.0"

__all__ = [
    "Beliefs", "FitError", "FitTrace", "GlobalVariational", "HmmParams", "NiwNat", "NiwParams", "Prior",
    "SviConfig", "ValidationError", "brute_force_beliefs", "default_prior", "forward_backward", "grow_buffer",
    "make_dd_params", "make_rc_params", "predictive_log_prob", "read_dataset", "run_batch_vb", "run_svihmm",
    "sample_hmm", "transition_error", "write_dataset",
]
