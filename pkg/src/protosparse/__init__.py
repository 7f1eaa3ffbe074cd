"""Energy-minimising prototype selection for K-nearest-neighbour databases."""
from .errors import (
    ConfigError,
    ContractViolation,
    EmptyInputError,
    EmptySetError,
    FormatError,
    InsufficientDataError,
    LoadError,
    ProtoSparseError,
)
from .store import (
    NeighborResult,
    Prototype,
    PrototypeDatabase,
    distance,
    ingest,
    knn_query,
    load,
    save,
    write_csv,
)
from .ranking import RankHistogram, RankScore, build_histogram, percentile, rank_all, rank_scores
from .sparsifier import SparsificationPlan, SparsifiedDatabase, reduction_report, sparsify
from .energy import (
    EnergyEvaluator,
    EnergyReport,
    EnergyWeights,
    PerturbationConfig,
    classify,
    evaluate,
    fidelity,
    robustness,
)
from .metrics import MetricReport, evaluate_classifier
from .optimizer import (
    OptimizationTrace,
    OptimizerConfig,
    OuterConfig,
    minimize_inner,
    optimize_outer,
    search_step,
)
from .datagen import BlobSpec, RaySpec, gen_blobs, gen_rays, split

__version__ = "0.1.0"
