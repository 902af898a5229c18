"""Person-fit statistics for spotting machine-generated answer patterns in MCQ data."""

__version__ = "0.1.0"

from .pfs import (  # noqa: E402
    ALL_MEASURES,
    ItemStats,
    Measure,
    NullMoments,
    PfsRecord,
    compute_all,
    flag_aberrant,
    g_star,
    guttman_errors,
    item_stats,
    null_moments,
    u3,
    zu3,
)
from .rank_stats import (  # noqa: E402
    Alternative,
    TestResult,
    dunn_posthoc,
    kruskal_wallis,
    wilcoxon_rank_sum,
)
from .response_data import (  # noqa: E402
    ResponseMatrix,
    ValidationError,
    filter_degenerate_items,
    parse_scored_csv,
    score,
)

__all__ = [
    "ALL_MEASURES",
    "Alternative",
    "ItemStats",
    "Measure",
    "NullMoments",
    "PfsRecord",
    "ResponseMatrix",
    "TestResult",
    "ValidationError",
    "compute_all",
    "dunn_posthoc",
    "filter_degenerate_items",
    "flag_aberrant",
    "g_star",
    "guttman_errors",
    "item_stats",
    "kruskal_wallis",
    "null_moments",
    "parse_scored_csv",
    "score",
    "u3",
    "wilcoxon_rank_sum",
    "zu3",
]
