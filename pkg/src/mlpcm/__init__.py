"""Variational inference and model selection for latent position cluster models
of weighted directed networks, with and without dyad-specific overt positions."""

__version__ = "0.1.0"

from .types import (  # noqa: E402
    DimensionError,
    Hyperparams,
    LatentConfig,
    Network,
    NumericalError,
    PointEstimates,
    ValidationError,
    VariationalState,
    point_estimates,
)
from .elbo import ElboBreakdown, elbo_mlpcm, elbo_poislpcm  # noqa: E402
from .fit import FitConfig, FitResult, fit_mlpcm, fit_model, fit_poislpcm  # noqa: E402
from .simulate import SimSpec, scenario_spec, simulate_mlpcm, simulate_poislpcm  # noqa: E402
from .initialization import initial_state  # noqa: E402
from .selection import PiclResult, picl_mlpcm, picl_poislpcm, select_k  # noqa: E402
from .metrics import FitSummary, procrustes_align, summarize_fit, vi_distance  # noqa: E402
from .io import read_network, write_network  # noqa: E402
from .preprocess import ego_extract, log2_round_transform  # noqa: E402

__all__ = [
    "__version__",
    "DimensionError", "Hyperparams", "LatentConfig", "Network", "NumericalError",
    "PointEstimates", "ValidationError", "VariationalState", "point_estimates",
    "ElboBreakdown", "elbo_mlpcm", "elbo_poislpcm",
    "FitConfig", "FitResult", "fit_mlpcm", "fit_model", "fit_poislpcm",
    "SimSpec", "scenario_spec", "simulate_mlpcm", "simulate_poislpcm",
    "initial_state",
    "PiclResult", "picl_mlpcm", "picl_poislpcm", "select_k",
    "FitSummary", "procrustes_align", "summarize_fit", "vi_distance",
    "read_network", "write_network",
    "ego_extract", "log2_round_transform",
]
