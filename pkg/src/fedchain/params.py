"""System parameters and computing-time accounting.

Every client spends the shared wall-clock budget on two activities per
round: local gradient iterations (``train_time`` seconds each) and one
proof-of-work block (``mine_time`` seconds, amortized over the cohort).
With ``rounds`` rounds in the budget, the per-round iteration count is
the largest integer that still fits; leftover time is discarded but
reported, never silently stretched.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import InsufficientBudget, NonPositiveParameter


@dataclass(frozen=True)
class HardwareModel:
    """Per-client CPU quantities from which the two time costs derive."""

    puzzle_difficulty: float      # dimensionless hardness of the block puzzle
    cycles_per_block: float       # mean CPU cycles to close one block
    cpu_rate: float               # CPU cycles per second, per client
    cycles_per_sample: float      # CPU cycles to train on one sample
    samples_per_client: int       # local dataset size

    def __post_init__(self) -> None:
        for name in (
            "puzzle_difficulty",
            "cycles_per_block",
            "cpu_rate",
            "cycles_per_sample",
            "samples_per_client",
        ):
            if not getattr(self, name) > 0:
                raise NonPositiveParameter(f"{name} must be > 0")


def derive_rates(hw: HardwareModel, n_clients: int) -> tuple[float, float]:
    """Return ``(train_time, mine_time)`` for a cohort of ``n_clients``.

    One local iteration costs ``samples_per_client * cycles_per_sample /
    cpu_rate`` seconds.  Mining is a race among all clients, so the mean
    time to close a block shrinks linearly with the cohort size.
    """
    if n_clients < 1:
        raise NonPositiveParameter("n_clients must be >= 1")
    train_time = hw.samples_per_client * hw.cycles_per_sample / hw.cpu_rate
    mine_time = hw.puzzle_difficulty * hw.cycles_per_block / (n_clients * hw.cpu_rate)
    return train_time, mine_time


def compute_tau(
    total_time: float, rounds: int, train_time: float, mine_time: float
) -> int:
    """Largest per-round iteration count that fits the budget.

    Satisfies ``rounds * (tau * train_time + mine_time) <= total_time <
    rounds * ((tau + 1) * train_time + mine_time)`` exactly; the floored
    estimate is corrected against those inequalities in product form so
    float division noise cannot shift the result.
    """
    _require_positive(
        total_time=total_time, train_time=train_time, mine_time=mine_time
    )
    if rounds < 1:
        raise NonPositiveParameter("rounds must be >= 1")
    tau = math.floor((total_time / rounds - mine_time) / train_time)
    while tau >= 0 and rounds * (tau * train_time + mine_time) > total_time:
        tau -= 1
    while rounds * ((tau + 1) * train_time + mine_time) <= total_time:
        tau += 1
    if tau < 1:
        raise InsufficientBudget(
            f"budget {total_time} cannot fit one iteration per round at rounds={rounds}"
        )
    return tau


def feasible_rounds_range(
    total_time: float, train_time: float, mine_time: float
) -> tuple[int, int]:
    """Inclusive range of round counts that allow at least one iteration each.

    The lower end is always 1.  Raises :class:`InsufficientBudget` when even
    a single round cannot hold one iteration plus one block.
    """
    _require_positive(
        total_time=total_time, train_time=train_time, mine_time=mine_time
    )
    upper = math.floor(total_time / (train_time + mine_time))
    while upper >= 1 and upper * (train_time + mine_time) > total_time:
        upper -= 1
    while (upper + 1) * (train_time + mine_time) <= total_time:
        upper += 1
    if upper < 1:
        raise InsufficientBudget(
            f"budget {total_time} cannot fit a single round "
            f"(needs {train_time + mine_time})"
        )
    return 1, upper


@dataclass(frozen=True)
class SystemParams:
    """Validated snapshot of one experiment's scalar parameters.

    ``local_iters`` is derived from the budget when left at 0; passing an
    explicit value that disagrees with the floor accounting is an error.
    """

    n_clients: int
    n_lazy: int
    noise_var: float          # variance of the noise lazy clients add
    total_time: float         # shared computing-time budget, seconds
    train_time: float         # seconds per local iteration
    mine_time: float          # mean seconds per mined block
    learning_rate: float
    rounds: int
    local_iters: int = 0

    def __post_init__(self) -> None:
        if self.n_clients < 1:
            raise NonPositiveParameter("n_clients must be >= 1")
        if not 0 <= self.n_lazy <= self.n_clients:
            raise ValueError("n_lazy must lie in [0, n_clients]")
        if self.noise_var < 0:
            raise ValueError("noise_var must be >= 0")
        _require_positive(
            total_time=self.total_time,
            train_time=self.train_time,
            mine_time=self.mine_time,
            learning_rate=self.learning_rate,
        )
        if self.rounds < 1:
            raise NonPositiveParameter("rounds must be >= 1")
        derived = compute_tau(
            self.total_time, self.rounds, self.train_time, self.mine_time
        )
        if self.local_iters == 0:
            object.__setattr__(self, "local_iters", derived)
        elif self.local_iters != derived:
            raise ValueError(
                f"local_iters={self.local_iters} conflicts with the budget "
                f"(accounting gives {derived})"
            )

    @property
    def round_cost(self) -> float:
        """Seconds consumed by one round: iterations plus one block."""
        return self.local_iters * self.train_time + self.mine_time

    @property
    def leftover_time(self) -> float:
        """Budget remainder that no extra iteration or round can use."""
        return self.total_time - self.rounds * self.round_cost

    @property
    def lazy_fraction(self) -> float:
        return self.n_lazy / self.n_clients


# JSON keys accepted by params_from_dict; extras are left to the caller.
_CONFIG_KEYS = ("n_clients", "n_lazy", "noise_var", "t_sum", "alpha", "beta", "eta", "k")
_HARDWARE_KEYS = ("kappa", "chi", "f", "rho", "d_i")


def params_from_dict(cfg: dict[str, Any]) -> SystemParams:
    """Build :class:`SystemParams` from a config mapping.

    Recognized keys: ``n_clients, n_lazy, noise_var, t_sum, alpha, beta,
    eta, k`` plus an optional ``hardware`` table with ``kappa, chi, f,
    rho, d_i``; when hardware is present it overrides ``alpha``/``beta``.
    Unrecognized keys are ignored so the mapping can carry caller state.
    """
    missing = [k for k in ("n_clients", "n_lazy", "noise_var", "t_sum", "eta", "k") if k not in cfg]
    if missing:
        raise KeyError(f"config missing keys: {missing}")
    if "hardware" in cfg:
        hw_cfg = cfg["hardware"]
        bad = [k for k in _HARDWARE_KEYS if k not in hw_cfg]
        if bad:
            raise KeyError(f"hardware table missing keys: {bad}")
        hw = HardwareModel(
            puzzle_difficulty=float(hw_cfg["kappa"]),
            cycles_per_block=float(hw_cfg["chi"]),
            cpu_rate=float(hw_cfg["f"]),
            cycles_per_sample=float(hw_cfg["rho"]),
            samples_per_client=int(hw_cfg["d_i"]),
        )
        train_time, mine_time = derive_rates(hw, int(cfg["n_clients"]))
    else:
        if "alpha" not in cfg or "beta" not in cfg:
            raise KeyError("config needs alpha and beta unless hardware is given")
        train_time, mine_time = float(cfg["alpha"]), float(cfg["beta"])
    return SystemParams(
        n_clients=int(cfg["n_clients"]),
        n_lazy=int(cfg["n_lazy"]),
        noise_var=float(cfg["noise_var"]),
        total_time=float(cfg["t_sum"]),
        train_time=train_time,
        mine_time=mine_time,
        learning_rate=float(cfg["eta"]),
        rounds=int(cfg["k"]),
    )


def load_config(path: str | Path) -> SystemParams:
    with open(path, "r", encoding="utf-8") as fh:
        return params_from_dict(json.load(fh))


@dataclass(frozen=True)
class BoundConstants:
    """Loss-landscape constants the convergence bound consumes.

    ``slack_sq`` defaults to ``divergence * lipschitz / phi``, the value
    under which the closed-form optimum is derived.  It is stored, not
    recomputed, so callers may vary one constant while pinning the rest.
    """

    lipschitz: float              # bound on |F(w) - F(w')| / ||w - w'||
    smoothness: float             # bound on gradient variation
    divergence: float             # client-vs-global gradient gap
    phi: float                    # (1 - eta * smoothness / 2) / ||w0 - w*||
    slack_sq: float = 0.0         # epsilon^2 appearing under the bracket
    lazy_gap: float = 0.0         # ||plagiarized - honest|| at the last round

    def __post_init__(self) -> None:
        _require_positive(
            lipschitz=self.lipschitz,
            smoothness=self.smoothness,
            divergence=self.divergence,
            phi=self.phi,
        )
        if self.slack_sq == 0.0:
            object.__setattr__(
                self, "slack_sq", self.divergence * self.lipschitz / self.phi
            )
        if not self.slack_sq > 0:
            raise NonPositiveParameter("slack_sq must be > 0")
        if self.lazy_gap < 0:
            raise ValueError("lazy_gap must be >= 0")


def _require_positive(**named: float) -> None:
    for name, value in named.items():
        if not value > 0:
            raise NonPositiveParameter(f"{name} must be > 0, got {value}")
