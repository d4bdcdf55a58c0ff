"""fedchain: simulate and analyze federated learning rounds committed to a proof-of-work chain.

The package models a cohort of clients that share a fixed computing-time
budget.  Each round every client trains locally, signs and broadcasts its
model, one client mines a block holding all models, and everyone aggregates.
Analysis tools evaluate a convergence upper bound for this process, locate
the round count that minimizes it, and compare both against simulation.
"""

__version__ = "0.1.0"

from .errors import (
    BadMagic,
    BudgetExceeded,
    CountMismatch,
    DegenerateProbe,
    DivergentBound,
    EmptyModelList,
    EmptyShard,
    IncompleteTxSet,
    IndivisibleShards,
    InsufficientBudget,
    NoFeasibleRounds,
    NoHonestVictim,
    NonPositiveParameter,
    TopologyMismatch,
    TruncatedFile,
    UnknownClient,
    ValidationFailure,
    VerificationFailure,
)

__all__ = [
    "__version__",
    "BadMagic",
    "BudgetExceeded",
    "CountMismatch",
    "DegenerateProbe",
    "DivergentBound",
    "EmptyModelList",
    "EmptyShard",
    "IncompleteTxSet",
    "IndivisibleShards",
    "InsufficientBudget",
    "NoFeasibleRounds",
    "NoHonestVictim",
    "NonPositiveParameter",
    "TopologyMismatch",
    "TruncatedFile",
    "UnknownClient",
    "ValidationFailure",
    "VerificationFailure",
]
