"""Generalized mutual information of generalized nearest-neighbor decoders.

Four decoder variants are covered: ``opt`` (posterior-variance weighted),
``csi`` (CSI-dependent scaling), ``csf`` (fixed scaling) and ``lin``
(linear processing).  :func:`evaluate_gmis` estimates their GMIs from
common random draws and :func:`simulate_bler` checks them operationally
with random Gaussian codebooks.
"""

__version__ = "0.1.0"

from .channels import (  # noqa: E402
    LINEAR, NO_QUANTIZER, ONE_BIT, PERFECT, PILOT, ChannelSpec, GaussianInputSpec, Quantizer,
    default_fixed_state, default_pilot, dithered, sample_uses,
)
from .config import ExperimentConfig, build_channel, config_from_dict, load_config  # noqa: E402
from .decoder import CodebookSpec, decode, ensemble_bler, gnndr_metric, simulate_bler  # noqa: E402
from .errors import (  # noqa: E402
    CapacityExceededError, ConfigError, DegeneratePosteriorError, GnndrError, InvalidArgumentError,
    InvalidFunctionError, InvalidStateError, NumericalSingularityError, UnstableWeightsError,
)
from .estimators import make_engine, moments_onebit_quadrature, moments_pilot_snis  # noqa: E402
from .gmi import (  # noqa: E402
    DecoderVariant, GmiEstimate, GmiReport, GnndrFunctions, bussgang_residual_check, bussgang_snr,
    evaluate_gmis, gmi_csf, gmi_csi, gmi_fixed_gf, gmi_lin, gmi_opt, gnndr_functions,
)
from .mathkernel import Rng  # noqa: E402
from .models import GmiAnalyzer, GnndrDecoder, PosteriorEstimator  # noqa: E402
