"""Statistical significance testing for vision-transformer attention regions.

The package tests whether the pixels a ViT classifier attends to differ in
mean intensity from the rest of the image, conditioning on the fact that the
region was selected by looking at the image itself.  The conditional test
reduces to a one-dimensional truncated Gaussian problem whose truncation set
is located by an adaptive, derivative-guided grid search over the attention
pipeline, differentiated in forward mode.

Typical use::

    from attnsi import (
        Covariance, GridSearchConfig, ViTConfig, random_init,
        make_attention_fn, run_single_test,
    )

    config = ViTConfig.from_arch("base", image_side=16)
    weights = random_init(config, seed=0)
    fn = make_attention_fn(config, weights)
    result = run_single_test(image, Covariance.identity(), fn, tau=0.6)
    print(result.p_selective, result.p_naive, result.p_bonferroni)
"""

from .dual import Dual, softmax_rows
from .engine import (
    AttentionLineFunctions,
    CallableLineFunctions,
    Covariance,
    GridSearchConfig,
    InferenceLine,
    TestResult,
    TestSetup,
    TruncatedRegion,
    adaptive_step,
    bonferroni_p,
    build_line,
    eta_vector,
    f_values,
    grid_width,
    identify_region,
    naive_p,
    permutation_p,
    run_single_test,
    selective_p,
    test_statistic,
)
from .errors import (
    ConfigError,
    CovarianceError,
    DegenerateRegionError,
    DomainError,
    RegionConsistencyError,
    WeightFormatError,
)
from .gaussian import (
    RealInterval,
    gauss_tail,
    interval_mass,
    merge_intervals,
    truncated_two_sided_p,
)
from .rollout import (
    AttentionRegion,
    attention_map,
    make_attention_fn,
    normalize_minmax,
    rollout,
    threshold_region,
    upsample_bilinear,
    write_scores_csv,
)
from .vit import (
    ARCH_TABLE,
    AttentionOutput,
    ViTConfig,
    ViTWeights,
    forward,
    random_init,
    zero_init,
)
from .weights_io import load_weights, save_weights

__version__ = "0.1.0"
