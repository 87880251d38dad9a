"""Oblivious lp subspace embeddings from hashed signs and exponential rescaling,
with sketch-condition-sample lp regression, centralized and simulated distributed."""

from .conditioning import (WellCondCertificate, delta_p_estimate, mvee_conditioner, qr_conditioner,
                           verify_well_conditioned)
from .distributed import CommLedger, MachineState, dist_regress, dist_regress_high, dist_regress_low, partition_rows
from .errors import (ConfigError, DimensionMismatch, ExpSketchError, IndexOutOfRange, NoConvergence, RankDeficient,
                     SampleTooSmall, SingularR, ZeroDirection)
from .generators import gen_matrix
from .linalg import apply_r_inverse, elementwise_pnorm, qr_thin, row_pnorms, vec_pnorm
from .randsource import SeedSpec, cauchy_sample, exp_sample, pstable_sample, recip_exp_pow_sample
from .regression import (PipelineParams, RegressionProblem, RegressionResult, base_solver, hyperplane_fit_l1,
                         lp_regress, lp_regress_high, lp_regress_low, residual_cost)
from .sampling import SamplingMatrix, apply_sampling, draw_sampling, leverage_probs, sampling_target
from .sketch import (GlobalParams, Mode, SketchOperator, SketchParams, apply_sketch, build_sketch,
                     distortion_report, target_dim)

__version__ = "0.1.0"

__all__ = [
    "CommLedger", "ConfigError", "DimensionMismatch", "ExpSketchError", "GlobalParams", "IndexOutOfRange",
    "MachineState", "Mode", "NoConvergence", "PipelineParams", "RankDeficient", "RegressionProblem",
    "RegressionResult", "SampleTooSmall", "SamplingMatrix", "SeedSpec", "SingularR", "SketchOperator",
    "SketchParams", "WellCondCertificate", "ZeroDirection", "apply_r_inverse", "apply_sampling", "apply_sketch",
    "base_solver", "build_sketch", "cauchy_sample", "delta_p_estimate", "dist_regress", "dist_regress_high",
    "dist_regress_low", "distortion_report", "draw_sampling", "elementwise_pnorm", "exp_sample", "gen_matrix",
    "hyperplane_fit_l1", "leverage_probs", "lp_regress", "lp_regress_high", "lp_regress_low", "mvee_conditioner",
    "partition_rows", "pstable_sample", "qr_conditioner", "qr_thin", "recip_exp_pow_sample", "residual_cost",
    "row_pnorms", "sampling_target", "target_dim", "vec_pnorm", "verify_well_conditioned",
]
