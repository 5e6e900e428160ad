"""Multi-objective quality-diversity optimization.

A MAP-Elites archive that holds a bounded Pareto front per descriptor cell,
evolved by genetic variation and optional per-objective policy gradients,
together with the classic multi-objective baselines and a benchmark harness.
"""

from moqd.pareto import (
    crowding_distances,
    dominates,
    extract_front,
    hypervolume_2d,
    hypervolume_mc,
    non_dominated_sort,
)

__version__ = "0.1.0"

__all__ = [
    "crowding_distances",
    "dominates",
    "extract_front",
    "hypervolume_2d",
    "hypervolume_mc",
    "non_dominated_sort",
    "__version__",
]
