"""The integrated round: train, broadcast, mine, validate, aggregate.

Every round each client trains its local model for the budgeted number
of iterations, signs and broadcasts it, one client closes a block over
all broadcast models, everyone validates the block, and the new global
model is the plain mean of the block's contents.  Lazy clients skip the
training step: they copy a randomly chosen honest client's fresh model,
disguise it with Gaussian noise, and submit that instead, while still
mining and validating like everyone else.

Randomness is drawn from per-(seed, purpose, client, round) streams, so
results are bit-reproducible and independent of execution order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .chain import (
    KeyRegistry,
    Ledger,
    MiningClock,
    Transaction,
    validate_block,
    mine_block,
    sign_tx,
    verify_tx,
)
from .data import Dataset, Partition
from .errors import (
    BudgetExceeded,
    NoHonestVictim,
    ValidationFailure,
    VerificationFailure,
)
from .learner import (
    ModelSpec,
    WeightVector,
    accuracy,
    aggregate,
    local_train,
    loss_and_grad,
    weights_from_bytes,
    weights_to_bytes,
)
from .params import SystemParams

# rng stream tags; chain.KeyRegistry.generate uses 5, data uses 0-2
_STREAM_TRAIN = 10
_STREAM_LAZY = 11
_STREAM_DP = 12
_STREAM_MINE = 13
_STREAM_WINNER = 14
_STREAM_LAZY_SET = 15

_CLOCK_RTOL = 1e-9


@dataclass
class ClientState:
    client_id: int
    features: np.ndarray
    labels: np.ndarray
    weights: WeightVector
    lazy: bool


@dataclass(frozen=True)
class RoundRecord:
    round_index: int
    local_iters: int
    clock_before: float
    clock_after: float
    block_height: int
    global_loss: float            # cohort-mean loss of the fresh global model
    accuracy: float               # on the held-out set when one was given
    per_client_losses: tuple[float, ...]
    theta_hat: float              # mean plagiarized-vs-honest gap, 0 if no lazy
    frozen: bool                  # all-lazy fallback triggered this round


@dataclass
class SimulationState:
    params: SystemParams
    spec: ModelSpec
    clients: list[ClientState]
    registry: KeyRegistry
    ledger: Ledger
    clock: MiningClock
    seed: int
    difficulty_bits: int
    deterministic_mining: bool
    dp_noise_var: float
    batch_size: int | None
    eval_features: np.ndarray | None
    eval_labels: np.ndarray | None
    records: list[RoundRecord] = field(default_factory=list)
    any_frozen: bool = False

    @property
    def lazy_ids(self) -> tuple[int, ...]:
        return tuple(c.client_id for c in self.clients if c.lazy)


@dataclass(frozen=True)
class SimulationResult:
    params: SystemParams
    spec: ModelSpec
    records: tuple[RoundRecord, ...]
    ledger: Ledger
    registry: KeyRegistry
    final_weights: WeightVector
    final_train_loss: float
    final_eval_loss: float | None
    final_eval_accuracy: float | None
    theta_hat: float
    lazy_ids: tuple[int, ...]
    leftover_time: float
    any_frozen: bool


def _stream(seed: int, *path: int) -> np.random.Generator:
    return np.random.default_rng((seed, *path))


def lazy_update(
    victim: WeightVector, noise_var: float, rng: np.random.Generator
) -> WeightVector:
    """Plagiarize a model: copy it and add disguising Gaussian noise.

    Zero variance returns a bit-identical copy of the victim's weights.
    """
    if noise_var < 0:
        raise ValueError("noise_var must be >= 0")
    values = victim.values.copy()
    if noise_var > 0:
        values += rng.normal(0.0, math.sqrt(noise_var), size=values.shape)
    return WeightVector(values=values, topology=victim.topology)


def apply_dp_noise(
    w: WeightVector, noise_var: float, rng: np.random.Generator
) -> WeightVector:
    """Perturb an outgoing model for differential privacy; 0 is a no-op."""
    if noise_var < 0:
        raise ValueError("noise_var must be >= 0")
    if noise_var == 0:
        return w
    values = w.values + rng.normal(0.0, math.sqrt(noise_var), size=w.values.shape)
    return WeightVector(values=values, topology=w.topology)


def pick_victim(
    honest_ids: list[int], rng: np.random.Generator
) -> int:
    """Uniform choice of a fresh model to plagiarize this round."""
    if not honest_ids:
        raise NoHonestVictim("every client is lazy; nothing to copy")
    return honest_ids[int(rng.integers(len(honest_ids)))]


def init_simulation(
    params: SystemParams,
    dataset: Dataset,
    partition: Partition,
    seed: int,
    spec: ModelSpec | None = None,
    eval_set: Dataset | None = None,
    deterministic_mining: bool = True,
    difficulty_bits: int = 8,
    dp_noise_var: float = 0.0,
    batch_size: int | None = None,
) -> SimulationState:
    if partition.n_clients != params.n_clients:
        raise ValueError(
            f"partition has {partition.n_clients} clients, params say {params.n_clients}"
        )
    spec = spec or ModelSpec()
    ids = list(range(params.n_clients))
    lazy_ids: set[int] = set()
    if params.n_lazy:
        picks = _stream(seed, _STREAM_LAZY_SET).choice(
            params.n_clients, size=params.n_lazy, replace=False
        )
        lazy_ids = set(int(i) for i in picks)
    w0 = spec.init_weights(dataset.n_features, dataset.n_classes)
    clients = []
    for cid in ids:
        X, y = partition.shard(dataset, cid)
        clients.append(
            ClientState(
                client_id=cid,
                features=X,
                labels=y,
                weights=w0,
                lazy=cid in lazy_ids,
            )
        )
    clock = MiningClock(
        mine_time=params.mine_time,
        stochastic=not deterministic_mining,
        rng=None if deterministic_mining else _stream(seed, _STREAM_MINE),
    )
    return SimulationState(
        params=params,
        spec=spec,
        clients=clients,
        registry=KeyRegistry.generate(ids, seed),
        ledger=Ledger.new(),
        clock=clock,
        seed=seed,
        difficulty_bits=difficulty_bits,
        deterministic_mining=deterministic_mining,
        dp_noise_var=dp_noise_var,
        batch_size=batch_size,
        eval_features=None if eval_set is None else eval_set.features,
        eval_labels=None if eval_set is None else eval_set.labels,
    )


def run_integrated_round(state: SimulationState, round_index: int) -> RoundRecord:
    """One full train-broadcast-mine-validate-aggregate cycle."""
    p = state.params
    clock_before = state.clock.now
    training_time = p.local_iters * p.train_time
    needed = training_time + (p.mine_time if state.deterministic_mining else 0.0)
    if clock_before + needed > p.total_time * (1.0 + _CLOCK_RTOL):
        raise BudgetExceeded(
            f"round {round_index} needs {needed}s, "
            f"only {p.total_time - clock_before}s left"
        )

    # Step 1a: honest clients train from the current global model.
    trained: dict[int, WeightVector] = {}
    honest_ids = [c.client_id for c in state.clients if not c.lazy]
    for c in state.clients:
        if not c.lazy:
            trained[c.client_id] = local_train(
                c.weights, c.features, c.labels, state.spec,
                p.learning_rate, p.local_iters, state.batch_size,
                _stream(state.seed, _STREAM_TRAIN, c.client_id, round_index),
            )

    # Step 1b: lazy clients copy a fresh honest model instead of training.
    # Their honest counterfactual is replayed with the same rng stream a
    # real training pass would have used, which feeds the gap estimate.
    frozen = False
    theta_gaps = []
    uploads: dict[int, WeightVector] = dict(trained)
    for c in state.clients:
        if not c.lazy:
            continue
        rng = _stream(state.seed, _STREAM_LAZY, c.client_id, round_index)
        try:
            victim = pick_victim(honest_ids, rng)
            uploads[c.client_id] = lazy_update(trained[victim], p.noise_var, rng)
        except NoHonestVictim:
            frozen = True
            uploads[c.client_id] = c.weights
        shadow = local_train(
            c.weights, c.features, c.labels, state.spec,
            p.learning_rate, p.local_iters, state.batch_size,
            _stream(state.seed, _STREAM_TRAIN, c.client_id, round_index),
        )
        theta_gaps.append(
            float(np.linalg.norm(uploads[c.client_id].values - shadow.values))
        )
    if frozen:
        state.any_frozen = True
    state.clock.advance(training_time)

    if state.dp_noise_var > 0:
        for cid in list(uploads):
            uploads[cid] = apply_dp_noise(
                uploads[cid], state.dp_noise_var,
                _stream(state.seed, _STREAM_DP, cid, round_index),
            )

    # Step 2: sign, broadcast, verify everyone's transaction.
    txs = [
        sign_tx(state.registry.key_of(cid), cid, round_index,
                weights_to_bytes(uploads[cid]))
        for cid in sorted(uploads)
    ]
    for tx in txs:
        if not verify_tx(tx, state.registry):
            raise VerificationFailure(
                f"round {round_index}: bad signature from client {tx.client_id}"
            )

    # Step 3: one winner mines a block over the full transaction set.
    if state.deterministic_mining:
        winner = (round_index - 1) % p.n_clients
    else:
        winner = int(
            _stream(state.seed, _STREAM_WINNER, round_index).integers(p.n_clients)
        )
    block = mine_block(
        state.ledger.tip, txs, state.difficulty_bits, winner, state.clock,
        registry=state.registry,
    )

    # Step 4: every client validates the block before accepting it.
    reason = validate_block(
        state.ledger.tip, block, state.registry, state.difficulty_bits
    )
    if reason is not None:
        raise ValidationFailure(f"block at height {block.height}: {reason}")
    state.ledger.append(block)

    # Step 5: aggregate the block's models; everyone adopts the mean.
    new_global = aggregate([weights_from_bytes(tx.payload) for tx in block.txs])
    for c in state.clients:
        c.weights = new_global

    per_client = tuple(
        loss_and_grad(new_global, c.features, c.labels, state.spec)[0]
        for c in state.clients
    )
    global_loss = float(np.mean(per_client))
    if state.eval_features is not None:
        acc = accuracy(new_global, state.eval_features, state.eval_labels, state.spec)
    else:
        acc = accuracy(
            new_global,
            np.concatenate([c.features for c in state.clients]),
            np.concatenate([c.labels for c in state.clients]),
            state.spec,
        )
    record = RoundRecord(
        round_index=round_index,
        local_iters=p.local_iters,
        clock_before=clock_before,
        clock_after=state.clock.now,
        block_height=block.height,
        global_loss=global_loss,
        accuracy=acc,
        per_client_losses=per_client,
        theta_hat=float(np.mean(theta_gaps)) if theta_gaps else 0.0,
        frozen=frozen,
    )
    state.records.append(record)
    return record


def run_simulation(
    params: SystemParams,
    dataset: Dataset,
    partition: Partition,
    seed: int,
    spec: ModelSpec | None = None,
    eval_set: Dataset | None = None,
    deterministic_mining: bool = True,
    difficulty_bits: int = 8,
    dp_noise_var: float = 0.0,
    batch_size: int | None = None,
    checkpoint_dir: str | Path | None = None,
    checkpoint_every: int = 0,
) -> SimulationResult:
    """Run all budgeted rounds and return records plus the sealed ledger."""
    state = init_simulation(
        params, dataset, partition, seed, spec, eval_set,
        deterministic_mining, difficulty_bits, dp_noise_var, batch_size,
    )
    for k in range(1, params.rounds + 1):
        run_integrated_round(state, k)
        if checkpoint_dir is not None and checkpoint_every > 0 and k % checkpoint_every == 0:
            path = Path(checkpoint_dir) / f"round_{k:04d}.weights"
            path.write_bytes(weights_to_bytes(state.clients[0].weights))

    final_weights = state.clients[0].weights
    final_eval_loss = final_eval_acc = None
    if state.eval_features is not None:
        final_eval_loss, _ = loss_and_grad(
            final_weights, state.eval_features, state.eval_labels, state.spec
        )
        final_eval_acc = accuracy(
            final_weights, state.eval_features, state.eval_labels, state.spec
        )
    return SimulationResult(
        params=params,
        spec=state.spec,
        records=tuple(state.records),
        ledger=state.ledger,
        registry=state.registry,
        final_weights=final_weights,
        final_train_loss=state.records[-1].global_loss,
        final_eval_loss=final_eval_loss,
        final_eval_accuracy=final_eval_acc,
        theta_hat=state.records[-1].theta_hat,
        lazy_ids=state.lazy_ids,
        leftover_time=params.total_time - state.clock.now,
        any_frozen=state.any_frozen,
    )
