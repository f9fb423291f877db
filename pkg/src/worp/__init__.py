"""Composable sketches for without-replacement lp sampling of key streams.

Sampling keys proportionally to a power p in (0, 2] of their signed
frequency reduces, after a per-key random rescaling of element values,
to finding the keys with the largest transformed frequencies; those are
residual heavy hitters with calibrated probability, so off-the-shelf
heavy-hitter sketches of near-sample size recover them.  The package
provides the transform, the sketches, the Monte Carlo calibration that
sizes them, two-pass (exact) and one-pass (approximate) sampling
pipelines, a low-variation-distance sampler battery, and the
inverse-probability estimators consuming the samples.
"""

from .calibration import (
    Calibration,
    calibrate,
    choose_B,
    empirical_domination_check,
    erlang_tail,
    estimate_psi,
    estimate_psi_grid,
    sample_Gprime,
    sample_R,
)
from .core import (
    Element,
    FrequencyVector,
    Purpose,
    SeedRand,
    StatisticSpec,
    aggregate,
    draw_r,
    read_elements,
    tail_norm,
    top_k_order,
    write_elements,
)
from .estimate import (
    Estimate,
    bias_mse_report,
    covariance_sign_check,
    estimate_statistic,
    hypothesis_constant,
    inclusion_prob,
    nrmse,
    variance_bound_check,
)
from .rhh import CounterSketch, ProjectionSketch, RhhConfig, load_sketch, new_sketch
from .sample import SampleEntry, WorSample
from .transform import (
    TransformConfig,
    exact_bottomk_sample,
    invert_estimate,
    transform_element,
    transform_vector,
)
from .tvd import (
    ExactFrequencyOracle,
    OracleSingleSampler,
    RejectionSingleSampler,
    TvdConfig,
    TvdResult,
    build_oracle_samplers,
    oracle_single_sampler,
    trial_count_monitor,
    tv_distance,
    tvd_sample,
    wor_set_distribution,
)
from .worp import (
    CollectT,
    collect_pass,
    one_pass_sample,
    sample_from_collect,
    sketch_pass,
    two_pass_sample,
)

__version__ = "0.1.0"
