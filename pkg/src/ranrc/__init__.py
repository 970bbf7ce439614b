"""Robust asynchronous Newton-Raphson consensus over lossy directed networks."""

from .consensus import (
    AugmentedState,
    RatioState,
    StepMatrices,
    build_step_matrices,
    mass_residual,
    pushsum_step,
    robust_ratio_step,
)
from .costs import (
    BinomialDevianceCost,
    CostModel,
    DescentVariant,
    QuadraticCost,
    check_derivatives,
    local_g,
    local_gh,
    local_h,
)
from .graph import (
    DirectedGraph,
    DisconnectedGraphError,
    generate_connected_geometric,
    generate_random_geometric,
    is_strongly_connected,
)
from .ingest import Dataset, MalformedRowError, load_spambase, partition_dataset
from .protocol import (
    Message,
    NodeState,
    ProtocolError,
    broadcast_round,
    cmax,
    data_reception,
    data_transmission,
    estimate_update,
    initial_network,
)
from .sim import (
    NewtonDidNotConverge,
    SimConfig,
    SimulationDiverged,
    Trace,
    assumption_monitors,
    build_problem,
    centralized_newton,
    estimate_rate,
    mse,
    run_simulation,
)

__version__ = "0.1.0"

_ESTIMATORS = ("RaNRCClassifier", "RaNRCRegressor")


def __getattr__(name):
    # keep scikit-learn off the import path of the simulator and CLI
    if name in _ESTIMATORS:
        from . import estimators

        return getattr(estimators, name)
    raise AttributeError(f"module 'ranrc' has no attribute {name!r}")
