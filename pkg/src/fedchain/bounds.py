"""Convergence-bound evaluation and computing-time allocation analysis.

For a budget split into ``k`` rounds of ``tau`` local iterations each,
the expected gap between the aggregated model's loss and the optimum is
bounded by ``1 / (k * tau * bracket)`` where the bracket trades the
learning-rate progress term against a drift term that grows geometrically
with ``tau``.  Two algebraically equivalent forms of the bound exist, one
written against the time budget and one against per-round iterations;
every evaluation computes both and insists they agree, which guards the
implementation against transcription slips in either form.

``tau`` comes in two flavors: the continuous relaxation ``gamma / k``
used by the theory (smooth in ``k``, convex bound), and the floored
integer count the simulator actually runs.  Curves default to the
continuous flavor; comparisons against simulations use the floored one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Literal

import numpy as np

from .errors import DivergentBound, InsufficientBudget, NoFeasibleRounds
from .params import BoundConstants, SystemParams, compute_tau, feasible_rounds_range

TauMode = Literal["continuous", "floor"]

_FORM_AGREEMENT_RTOL = 1e-9
_CONVEXITY_RTOL = 1e-9
_SMALL_STEP_LIMIT = 0.1


@dataclass(frozen=True)
class LazySpec:
    """Lazy-cohort inputs to the degraded bound.

    ``fraction`` overrides the ratio implied by the params when set; the
    bound itself only ever sees the ratio, so non-integer cohort fractions
    are fine here even though a simulation needs whole clients.
    """

    lazy_gap: float        # distance between plagiarized and honest weights
    noise_var: float       # variance of the disguising noise
    fraction: float | None = None

    def __post_init__(self) -> None:
        if self.lazy_gap < 0 or self.noise_var < 0:
            raise ValueError("lazy_gap and noise_var must be >= 0")
        if self.fraction is not None and not 0 <= self.fraction <= 1:
            raise ValueError("fraction must lie in [0, 1]")


def divergence_growth(
    x: float, divergence: float, smoothness: float, eta: float
) -> float:
    """Accumulated drift of a client after ``x`` local iterations.

    Zero at ``x <= 1`` (one step cannot drift from itself) and grows
    geometrically afterwards.  Written so that the identity at ``x = 1``
    holds exactly in floating point.
    """
    lam = 1.0 + eta * smoothness
    return (divergence / smoothness) * (_pow(lam, x) - 1.0 - (lam - 1.0) * x)


def _pow(base: float, exponent: float) -> float:
    try:
        return base ** exponent
    except OverflowError:
        return math.inf


def _tau_gamma(k: int, p: SystemParams, tau_mode: TauMode) -> tuple[float, float]:
    if k < 1:
        raise ValueError("k must be >= 1")
    if tau_mode == "continuous":
        gamma = (p.total_time - k * p.mine_time) / p.train_time
        tau = gamma / k
        if tau < 1.0:
            raise InsufficientBudget(f"k={k} leaves less than one iteration per round")
        return tau, gamma
    if tau_mode == "floor":
        tau = compute_tau(p.total_time, k, p.train_time, p.mine_time)
        return float(tau), float(k * tau)
    raise ValueError(f"unknown tau_mode {tau_mode!r}")


def _reciprocal_gap(
    k: int,
    p: SystemParams,
    c: BoundConstants,
    lazy: LazySpec | None,
    tau_mode: TauMode,
) -> float:
    """Evaluate 1/bound through both algebraic forms and cross-check."""
    if not p.learning_rate * c.smoothness < 1.0:
        raise ValueError("bound requires learning_rate * smoothness < 1")
    tau, gamma = _tau_gamma(k, p, tau_mode)
    eta = p.learning_rate
    lam = 1.0 + eta * c.smoothness

    if lazy is None:
        lazy_load = 0.0
    else:
        fraction = lazy.fraction if lazy.fraction is not None else p.lazy_fraction
        m = fraction * p.n_clients
        lazy_load = (
            fraction * lazy.lazy_gap + math.sqrt(m) / p.n_clients * lazy.noise_var
        )

    # Budget form: everything under the bracket is divided by gamma.
    drift_budget = (c.divergence / c.smoothness) * (
        k * (_pow(lam, gamma / k) - 1.0) - (lam - 1.0) * gamma
    )
    numer = c.lipschitz * (drift_budget + k * lazy_load)
    bracket_a = eta * c.phi - numer / (c.slack_sq * gamma)
    g_a = gamma * bracket_a

    # Per-round form: the same quantity via the drift after tau iterations.
    h = divergence_growth(tau, c.divergence, c.smoothness, eta)
    bracket_b = (
        eta * c.phi
        - c.lipschitz * h / (tau * c.slack_sq)
        - c.lipschitz * lazy_load / (c.slack_sq * tau)
    )
    g_b = k * tau * bracket_b

    if math.isfinite(g_a) and math.isfinite(g_b):
        scale = max(abs(g_a), abs(g_b), 1e-300)
        if abs(g_a - g_b) > _FORM_AGREEMENT_RTOL * scale:
            raise ArithmeticError(
                f"bound forms disagree at k={k}: {g_a!r} vs {g_b!r}"
            )
    elif math.isfinite(g_a) != math.isfinite(g_b):
        raise ArithmeticError(f"bound forms disagree at k={k}: {g_a!r} vs {g_b!r}")
    return g_b


def loss_gap_bound(
    k: int,
    p: SystemParams,
    c: BoundConstants,
    tau_mode: TauMode = "continuous",
) -> float:
    """Upper bound on the final loss gap after ``k`` rounds.

    Raises :class:`DivergentBound` when the drift term swallows the
    bracket, i.e. no finite guarantee exists for this round count.
    """
    g = _reciprocal_gap(k, p, c, None, tau_mode)
    if not g > 0 or not math.isfinite(g):
        raise DivergentBound(f"no finite guarantee at k={k}")
    return 1.0 / g


def loss_gap_bound_lazy(
    k: int,
    p: SystemParams,
    c: BoundConstants,
    lazy_gap: float,
    noise_var: float,
    fraction: float | None = None,
    tau_mode: TauMode = "continuous",
) -> float:
    """Bound degraded by a lazy sub-cohort; equals the base bound when empty."""
    lazy = LazySpec(lazy_gap=lazy_gap, noise_var=noise_var, fraction=fraction)
    g = _reciprocal_gap(k, p, c, lazy, tau_mode)
    if not g > 0 or not math.isfinite(g):
        raise DivergentBound(f"no finite guarantee at k={k}")
    return 1.0 / g


@dataclass(frozen=True)
class BoundCurve:
    """Bound values across a round-count grid; ``inf`` marks divergence."""

    rounds: np.ndarray
    taus: np.ndarray
    values: np.ndarray
    tau_mode: TauMode
    params: SystemParams
    constants: BoundConstants
    lazy: LazySpec | None = None

    def finite_count(self) -> int:
        return int(np.isfinite(self.values).sum())


def evaluate_curve(
    p: SystemParams,
    c: BoundConstants,
    lazy: LazySpec | None = None,
    tau_mode: TauMode = "continuous",
    k_min: int = 1,
    k_max: int | None = None,
) -> BoundCurve:
    """Evaluate the bound over every feasible round count in the range."""
    if k_max is None:
        _, k_max = feasible_rounds_range(p.total_time, p.train_time, p.mine_time)
    if k_min < 1 or k_min > k_max:
        raise ValueError(f"k range [{k_min}, {k_max}] is empty or invalid")
    ks, taus, values = [], [], []
    for k in range(k_min, k_max + 1):
        try:
            tau, _ = _tau_gamma(k, p, tau_mode)
        except InsufficientBudget:
            continue
        ks.append(k)
        taus.append(tau)
        try:
            g = _reciprocal_gap(k, p, c, lazy, tau_mode)
            values.append(1.0 / g if g > 0 and math.isfinite(g) else math.inf)
        except DivergentBound:
            values.append(math.inf)
    return BoundCurve(
        rounds=np.array(ks, dtype=np.int64),
        taus=np.array(taus),
        values=np.array(values),
        tau_mode=tau_mode,
        params=p,
        constants=c,
        lazy=lazy,
    )


def optimal_rounds_scan(
    p: SystemParams,
    c: BoundConstants,
    lazy: LazySpec | None = None,
    tau_mode: TauMode = "continuous",
    k_min: int = 1,
    k_max: int | None = None,
) -> tuple[int, float]:
    """Exhaustive integer argmin of the bound; smallest round count on ties."""
    curve = evaluate_curve(p, c, lazy, tau_mode, k_min, k_max)
    if curve.finite_count() == 0:
        raise NoFeasibleRounds("the bound diverges everywhere in the range")
    best = int(np.argmin(curve.values))  # first minimum = smallest k
    return int(curve.rounds[best]), float(curve.values[best])


@dataclass(frozen=True)
class ClosedFormOptimum:
    k_star: float          # continuous minimizer of the approximated bound
    small_step_ok: bool    # drift-per-round small enough to trust it


def optimal_rounds_closed_form(
    p: SystemParams, c: BoundConstants
) -> ClosedFormOptimum:
    """Closed-form round count from the second-order drift approximation.

    Valid when one round's accumulated step ``eta * smoothness * tau``
    stays small (reported via ``small_step_ok``, checked at the rounded
    optimum against the 0.1 rule of thumb); derived under the default
    slack, so callers overriding ``slack_sq`` should prefer the scan.
    """
    eta_l = p.learning_rate * c.smoothness
    if not eta_l < 1.0:
        raise ValueError("bound requires learning_rate * smoothness < 1")
    a, b = p.train_time, p.mine_time
    k_star = p.total_time / math.sqrt(2.0 * a * b / eta_l + a * b + b * b)
    rounded = round(k_star)
    ok = rounded >= 1
    if ok:
        tau = (p.total_time / rounded - b) / a
        ok = tau >= 1.0 and eta_l * tau <= _SMALL_STEP_LIMIT
    return ClosedFormOptimum(k_star=k_star, small_step_ok=ok)


def check_convexity(curve: BoundCurve) -> int | None:
    """Second-difference convexity test over consecutive finite points.

    Returns the first violating round count, or ``None`` when the curve
    is convex up to a relative tolerance.
    """
    v = curve.values
    for i in range(1, len(v) - 1):
        window = v[i - 1 : i + 2]
        if not np.all(np.isfinite(window)):
            continue
        second = v[i - 1] - 2.0 * v[i] + v[i + 1]
        if second < -_CONVEXITY_RTOL * abs(v[i]):
            return int(curve.rounds[i])
    return None


_EXPECTED_DIRECTION = {
    "train_time": "non-increasing",
    "mine_time": "non-increasing",
    "divergence": "non-decreasing",
    "n_clients": "non-increasing",
    "learning_rate": "non-decreasing",
    "lazy_fraction": "non-increasing",
    "noise_var": "non-increasing",
}


@dataclass(frozen=True)
class MonotonicityScan:
    axis: str
    grid: tuple[float, ...]
    optima: tuple[int, ...]
    expected: str
    ok: bool


def scan_monotonicity(
    axis: str,
    grid: list[float] | tuple[float, ...],
    p: SystemParams,
    c: BoundConstants,
    lazy: LazySpec | None = None,
    tau_mode: TauMode = "continuous",
) -> MonotonicityScan:
    """How the optimal round count moves along one parameter axis.

    Axes: ``train_time``, ``mine_time`` (both shrink the optimum),
    ``divergence`` (grows it), ``n_clients`` (shrinks it, modeled through
    gradient divergence scaling as the reciprocal of the cohort size),
    ``learning_rate`` (grows it), and with a lazy spec ``lazy_fraction``
    and ``noise_var`` (both shrink it).  The slack constant is pinned at
    its incoming value across the scan so one axis moves at a time.
    """
    if axis not in _EXPECTED_DIRECTION:
        raise ValueError(f"unknown axis {axis!r}")
    if len(grid) < 2:
        raise ValueError("grid needs at least two points")
    if axis in ("lazy_fraction", "noise_var") and lazy is None:
        raise ValueError(f"axis {axis!r} needs a lazy spec")
    optima = []
    for v in grid:
        pv, cv, lz = p, c, lazy
        if axis == "train_time":
            pv = replace(p, train_time=float(v), rounds=1, local_iters=0)
        elif axis == "mine_time":
            pv = replace(p, mine_time=float(v), rounds=1, local_iters=0)
        elif axis == "learning_rate":
            pv = replace(p, learning_rate=float(v), rounds=1, local_iters=0)
        elif axis == "divergence":
            cv = replace(c, divergence=float(v))
        elif axis == "n_clients":
            cv = replace(c, divergence=c.divergence * p.n_clients / float(v))
        elif axis == "lazy_fraction":
            lz = replace(lazy, fraction=float(v))
        elif axis == "noise_var":
            lz = replace(lazy, noise_var=float(v))
        k_opt, _ = optimal_rounds_scan(pv, cv, lz, tau_mode)
        optima.append(k_opt)
    expected = _EXPECTED_DIRECTION[axis]
    pairs = zip(optima, optima[1:])
    if expected == "non-increasing":
        ok = all(b <= a for a, b in pairs)
    else:
        ok = all(b >= a for a, b in pairs)
    return MonotonicityScan(
        axis=axis,
        grid=tuple(float(v) for v in grid),
        optima=tuple(optima),
        expected=expected,
        ok=ok,
    )
