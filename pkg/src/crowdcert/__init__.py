"""Exact recovery probabilities, optimality certificates and simulations for
majority-vote aggregation of binary crowd labels."""
from .aggregate import EmConfig, dawid_skene_em, iwmv, majority_vote, map_aggregate
from .certify import (
    Certificate,
    Verdict,
    check_estimated,
    check_one_coin,
    check_two_coin,
    check_two_groups,
    emap_gap_bound,
    nu_error_bound,
    sigma_bound,
)
from .core import (
    AggregationResult,
    AnnotationSet,
    ClassPrior,
    TransitionMatrix,
    accuracy_against_gold,
    validate_annotation_set,
)
from .errors import CrowdCertError
from .estimate import EstimatedParams, anchor_estimate_t, empirical_noisy_prior, estimate_params, recover_prior
from .exact import (
    BinaryNoiseParams,
    binom_tail,
    brute_force_oracle,
    gap,
    map_threshold,
    mv_diag,
    omap_diag,
    success_probability,
)
from .simulate import SweepGrid, SweepMode, SweepSpec, gen_fixed, gen_perturbed, gen_two_groups, sweep

__version__ = "0.1.0"
