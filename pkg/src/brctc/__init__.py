"""CTC and Bayes-risk CTC losses as log-domain lattice programs."""

from .errors import (
    BRCTCError,
    DegenerateObjective,
    DivergedLoss,
    InfeasibleAlignment,
    LengthMismatch,
    MissingBias,
    NoMatchedTokens,
    NumericalCancellation,
    ParseError,
    TooLarge,
)
from .lattice import (
    ExtendedLabels,
    LabelSeq,
    LatticeVars,
    LossResult,
    PosteriorGrid,
    backward,
    ctc_grad,
    ctc_loss,
    ctc_loss_at_frame,
    extend_labels,
    forward,
    is_feasible,
    logsumexp,
    occupation,
)
from .risk import (
    GroupPosterior,
    RiskSpec,
    beta_hat,
    brctc_downsample_loss,
    brctc_earlyemit_loss,
    brctc_grad,
    brctc_loss,
    group_masses,
    group_posterior,
    risk_value,
    tau_star,
)
from .align import Alignment, TrimReport, best_path, greedy_path, trim, trim_point
from .latency import LatencyReport, drift_latency, latency_report, lcs_match

__version__ = "0.1.0"
