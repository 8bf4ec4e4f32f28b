"""Probabilistic precoding: Markov shaping for FIR pre-equalized ASK links."""

from .core import (
    ChannelSpec,
    Constellation,
    JointPmf,
    MarkovShapingModel,
    PrecodingFilter,
    conditional_entropy,
    entropy,
    joint_to_markov,
    make_constellation,
    markov_to_joint,
    precoder_from_channel,
    stationarity_residual,
    transmit_power,
)
from .errors import (
    ConvergenceError,
    DegenerateContextError,
    DegenerateIntervalError,
    InfeasibleRateError,
    InvalidArgumentError,
    MalformedFrameError,
    TruncatedFrameError,
)
from .madm import MadmFrame, QuantizedConditional, decode, encode, quantize_conditional
from .optimize import (
    MBDistribution,
    ShapingProblem,
    ShapingSolution,
    grid_oracle,
    kl_divergence,
    solve_markov_shaping,
    solve_maxwell_boltzmann,
)
from .sim import (
    GainResult,
    SimConfig,
    estimate_power,
    linear_precode,
    run_sweep,
    sample_iid,
    sample_markov,
    shaping_gain_db,
    thp_precode,
)

__version__ = "0.1.0"
