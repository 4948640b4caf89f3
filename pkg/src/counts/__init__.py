"""Self-interpretable time-series prediction with counterfactual explanations.

The package bundles seeded synthetic benchmarks, a variational model with
explicit exogenous (confounder) latents, an abduction-based counterfactual
explanation search with a regularized gradient-descent baseline, and the
evaluation metrics that score explanation feasibility.
"""

__version__ = "0.1.0"

from .counterfactual import (  # noqa: F401
    ExplainConfig,
    ExplanationResult,
    abduct,
    cf_likelihood,
    explain,
    explain_dataset,
    interventional_y,
    rgd_explain,
)
from .dataio import dataset_tensors, read_dataset, write_dataset  # noqa: F401
from .metrics import (  # noqa: F401
    MetricsReport,
    ccr_masked,
    ccr_pair,
    counterfactual_metric,
    evaluate,
    prediction_metric,
    spike_cf_target,
)
from .model import (  # noqa: F401
    ArchConfig,
    CountsModel,
    GaussianHead,
    LatentSample,
    OutputDist,
    build_model,
    load_model,
    reparam_sample,
    save_model,
    spike_arch,
    toy_arch,
)
from .objective import (  # noqa: F401
    LossBreakdown,
    McConfig,
    TrainConfig,
    elbo_terms,
    gaussian_kl,
    loss,
    supervised_term,
    train,
)
from .synthgen import (  # noqa: F401
    Dataset,
    PairConfig,
    SpikeConfig,
    ToyConfig,
    gen_pairs,
    gen_spike,
    gen_toy,
    narma_step,
)
