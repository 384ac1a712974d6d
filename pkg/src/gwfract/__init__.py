"""Galton-Watson fractals: simulation, subtree-existence solvers, subset extraction."""

from .symbolic import (
    CapabilityError,
    DegenerateSampleError,
    FiniteTree,
    InvalidInputError,
    ResourceLimitError,
    Section,
    StarTree,
    Word,
    WeightedAlphabet,
    compress_along_pi_rho,
    compress_k,
    rho_index,
    section_pi_rho,
    validate_section,
)
from .branching import (
    Binomial,
    ExplicitTable,
    GWSample,
    LazyGW,
    PerLetterBernoulli,
    extinction_prob,
    labeled_seed,
    mc_extinction_frequency,
    offspring_from_json,
    parallel_map,
    pgf,
    sample_gw,
    thin,
)
from .fixpoint import (
    GFunction,
    MonotoneCollection,
    appendix_b_gap,
    ary_collection,
    collection_from_json,
    g_k_a_curve,
    generator_collection,
    smallest_fixed_point,
    smallest_fixed_point_bisect,
    star_sup_g,
)
from .geometry import (
    Hyperplane,
    MeasuredCloud,
    PointCloud,
    SimilarityIFS,
    SimilarityMap,
    ahlfors_ratio_check,
    box_dimension,
    cloud_from_csv,
    cloud_to_csv,
    cloud_to_pgm,
    diffuseness_constant,
    empirical_diffuse_check,
    ifs_from_json,
    ifs_to_json,
    moran_exponent,
    percolation_ifs,
    render,
    render_words,
    sierpinski_ifs,
    width,
)
from .extraction import (
    Ary,
    CardinalityAtLeast,
    DiffuseBlock,
    ExtractedSubset,
    Intersection,
    NotFoundError,
    SectionDiffuse,
    SectionLaw,
    diffuse_block_collection,
    find_subtree,
    general_pipeline,
    natural_measure,
    percolation_pipeline,
    predicted_presence,
    section_reduction,
)
from .experiments import (
    EXPERIMENTS,
    ExperimentReport,
    exp_convergence_g_k,
    exp_dimension_ladder,
    exp_non_diffuseness,
)

__version__ = "0.1.0"
