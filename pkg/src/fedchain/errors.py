"""Exception types shared across the package."""


class FedchainError(Exception):
    """Base class for every error raised by this package."""


class NonPositiveParameter(FedchainError, ValueError):
    """A quantity that must be strictly positive was zero or negative."""


class InsufficientBudget(FedchainError, ValueError):
    """The time budget cannot fit even one local iteration per round."""


class IndivisibleShards(FedchainError, ValueError):
    """Sample count does not split evenly into the requested shards."""


class BadMagic(FedchainError, ValueError):
    """An IDX file did not start with the expected magic number."""


class CountMismatch(FedchainError, ValueError):
    """Image and label files disagree on the number of records."""


class TruncatedFile(FedchainError, ValueError):
    """An IDX file ended early or carried unexpected trailing bytes."""


class EmptyShard(FedchainError, ValueError):
    """A loss or training call received zero samples."""


class TopologyMismatch(FedchainError, ValueError):
    """Weight vectors with different topologies cannot be combined."""


class EmptyModelList(FedchainError, ValueError):
    """Aggregation requires at least one model."""


class DegenerateProbe(FedchainError, ValueError):
    """Constant estimation drew a coincident probe pair."""


class UnknownClient(FedchainError, KeyError):
    """A transaction referenced a client id absent from the key registry."""


class IncompleteTxSet(FedchainError, ValueError):
    """A block was assembled without exactly one transaction per client."""


class VerificationFailure(FedchainError, RuntimeError):
    """A broadcast model transaction failed signature verification."""


class ValidationFailure(FedchainError, RuntimeError):
    """A mined block failed validation before aggregation."""


class BudgetExceeded(FedchainError, RuntimeError):
    """A round was started with less remaining time than it needs."""


class NoHonestVictim(FedchainError, RuntimeError):
    """Every client is lazy, so there is no model to plagiarize."""


class DivergentBound(FedchainError, ArithmeticError):
    """The bound denominator is non-positive; no finite guarantee exists."""


class NoFeasibleRounds(FedchainError, ValueError):
    """No round count in the search range yields a finite bound."""
