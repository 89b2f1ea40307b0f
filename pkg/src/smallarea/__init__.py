"""Design-based small-area prevalence estimation with automatic variance
repair, area-level smoothing, and a replicated-sampling study harness."""

from .aggregate import (
    AggregationError,
    AggregationFractions,
    AggregateSummary,
    aggregate_admin1,
    aggregate_national,
    design_weight_fractions,
    load_population_fractions,
    national_from_areas,
)
from .augment import (
    AugmentationError,
    PhantomCluster,
    PhantomPrior,
    Strategy,
    StrategyResult,
    apply_strategy,
    augmented_estimate,
    augmented_variance,
    build_phantom_clusters,
    national_priors,
    national_stratum_prior,
)
from .data import (
    ClusterAggregate,
    ExtendedDataset,
    StratumBlock,
    SurveyDataError,
    SurveyDataset,
    UnitRecord,
    UnknownDomainError,
    ValidationReport,
    extend_domain,
    load_survey,
    save_survey,
    validate,
)
from .direct import (
    DomainEstimate,
    Legality,
    NoStratumDataError,
    StratumSummary,
    VarianceDecomposition,
    classify_legality,
    hajek_domain,
    hajek_stratum,
    jackknife_variance,
    variance_decomposition,
    variance_domain,
)
from .fay_herriot import (
    AreaPosterior,
    FHFit,
    FHInput,
    FitError,
    RankTable,
    SpatialStructure,
    band_sizes,
    build_scaled_icar,
    fit_bym2_mcmc,
    fit_iid_eb,
    posterior_prevalence,
    rank_from_draws,
    ranking_probabilities,
)
from .interval import (
    BoundaryEstimateError,
    Interval,
    TransformedEstimate,
    estimate_interval,
    interval_score,
    logit_transform,
    normal_quantile,
    point_interval,
    wald_interval,
)
from .simulate import (
    AreaSpec,
    ConfigError,
    DrawResult,
    PopulationConfig,
    SimulationError,
    SimulationResults,
    SyntheticPopulation,
    draw_sample,
    parse_config,
    run_study,
    synthesize_population,
    true_domain_prevalence,
    true_prevalences,
)

__version__ = "0.1.0"
