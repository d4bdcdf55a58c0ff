"""Hash-linked block ledger with keyed-MAC transaction signatures.

The chain is a simulation artifact, not a hardened protocol: signatures
are HMAC-SHA256 under per-client secret keys held in a registry, and the
proof-of-work puzzle runs at desk-scale difficulty.  Real CPU cost of the
puzzle is deliberately decoupled from simulated mining time, which is
tracked by a virtual clock owned by the caller.
"""

from __future__ import annotations

import hashlib
import hmac
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import IncompleteTxSet, TruncatedFile, UnknownClient

_SIG_LEN = 32
_HASH_LEN = 32
_LEDGER_MAGIC = b"FCL1"
_MAX_DIFFICULTY_BITS = 20
GENESIS_PREV = bytes(_HASH_LEN)


@dataclass(frozen=True)
class Transaction:
    client_id: int
    round_index: int
    payload: bytes
    signature: bytes


class KeyRegistry:
    """Maps client ids to their 32-byte signing keys."""

    def __init__(self, keys: dict[int, bytes]):
        for cid, key in keys.items():
            if len(key) != _SIG_LEN:
                raise ValueError(f"client {cid}: keys must be {_SIG_LEN} bytes")
        self._keys = dict(keys)

    @classmethod
    def generate(cls, client_ids: list[int], seed: int) -> "KeyRegistry":
        keys = {}
        for cid in client_ids:
            rng = np.random.default_rng((seed, 5, cid))
            keys[cid] = rng.bytes(_SIG_LEN)
        return cls(keys)

    def key_of(self, client_id: int) -> bytes:
        try:
            return self._keys[client_id]
        except KeyError:
            raise UnknownClient(f"client {client_id} not registered") from None

    @property
    def client_ids(self) -> list[int]:
        return sorted(self._keys)

    def __len__(self) -> int:
        return len(self._keys)

    def items(self):
        return self._keys.items()


def _tx_message(client_id: int, round_index: int, payload: bytes) -> bytes:
    return b"FCTX" + struct.pack("<II", client_id, round_index) + payload


def sign_tx(key: bytes, client_id: int, round_index: int, payload: bytes) -> Transaction:
    sig = hmac.new(key, _tx_message(client_id, round_index, payload), hashlib.sha256).digest()
    return Transaction(client_id, round_index, payload, sig)


def verify_tx(tx: Transaction, registry: KeyRegistry) -> bool:
    """True iff the signature matches under the signer's registered key."""
    key = registry.key_of(tx.client_id)
    expected = hmac.new(
        key, _tx_message(tx.client_id, tx.round_index, tx.payload), hashlib.sha256
    ).digest()
    return hmac.compare_digest(expected, tx.signature)


def tx_bytes(tx: Transaction) -> bytes:
    """Fixed-width canonical encoding used in hashes and on disk."""
    if len(tx.signature) != _SIG_LEN:
        raise ValueError("signature must be 32 bytes")
    return (
        struct.pack("<IIQ", tx.client_id, tx.round_index, len(tx.payload))
        + tx.payload
        + tx.signature
    )


@dataclass
class Block:
    height: int
    prev_hash: bytes
    txs: tuple[Transaction, ...]   # kept sorted by client_id
    nonce: int
    miner_id: int
    timestamp: float               # virtual seconds at which the block closed
    block_hash: bytes


def _canonical_txs(txs: tuple[Transaction, ...]) -> bytes:
    return b"".join(tx_bytes(t) for t in txs)


def block_hash_of(
    height: int, prev_hash: bytes, txs: tuple[Transaction, ...], nonce: int, miner_id: int
) -> bytes:
    preimage = (
        prev_hash
        + _canonical_txs(txs)
        + struct.pack("<QQI", nonce, height, miner_id)
    )
    return hashlib.sha256(preimage).digest()


def meets_difficulty(digest: bytes, difficulty_bits: int) -> bool:
    """Leading ``difficulty_bits`` bits of the digest are zero."""
    full, rem = divmod(difficulty_bits, 8)
    if any(digest[:full]):
        return False
    if rem and digest[full] >> (8 - rem):
        return False
    return True


def genesis_block() -> Block:
    h = block_hash_of(0, GENESIS_PREV, (), 0, 0)
    return Block(0, GENESIS_PREV, (), 0, 0, 0.0, h)


@dataclass
class MiningClock:
    """Single virtual clock shared by the whole cohort (no forks).

    Deterministic mode charges exactly ``mine_time`` per block; stochastic
    mode draws exponential times with that mean from ``rng``.
    """

    mine_time: float
    stochastic: bool = False
    rng: np.random.Generator | None = None
    now: float = 0.0

    def __post_init__(self) -> None:
        if self.mine_time <= 0:
            raise ValueError("mine_time must be > 0")
        if self.stochastic and self.rng is None:
            raise ValueError("stochastic mode needs an rng")

    def advance(self, dt: float) -> None:
        self.now += dt

    def draw_block_time(self) -> float:
        if self.stochastic:
            return float(self.rng.exponential(self.mine_time))
        return self.mine_time


def _check_difficulty_bits(difficulty_bits: int) -> None:
    if not 0 <= difficulty_bits <= _MAX_DIFFICULTY_BITS:
        raise ValueError(f"difficulty_bits must lie in [0, {_MAX_DIFFICULTY_BITS}]")


def mine_block(
    prev: Block,
    txs: list[Transaction] | tuple[Transaction, ...],
    difficulty_bits: int,
    miner_id: int,
    clock: MiningClock,
    registry: KeyRegistry | None = None,
) -> Block:
    """Solve the puzzle over the given transactions and advance the clock.

    The nonce scan is an ascending search from zero, so the mined block is
    a deterministic function of its inputs; elapsed virtual time comes
    from the clock and is independent of the scan's real CPU cost.  With a
    registry the transaction set must contain exactly one transaction per
    registered client, all for the same round.
    """
    _check_difficulty_bits(difficulty_bits)
    ordered = tuple(sorted(txs, key=lambda t: t.client_id))
    if registry is not None:
        ids = [t.client_id for t in ordered]
        if ids != registry.client_ids:
            raise IncompleteTxSet(
                f"block needs one tx per client {registry.client_ids}, got {ids}"
            )
        if len({t.round_index for t in ordered}) > 1:
            raise IncompleteTxSet("transactions mix different rounds")
    height = prev.height + 1
    nonce = 0
    while True:
        digest = block_hash_of(height, prev.block_hash, ordered, nonce, miner_id)
        if meets_difficulty(digest, difficulty_bits):
            break
        nonce += 1
    clock.advance(clock.draw_block_time())
    return Block(height, prev.block_hash, ordered, nonce, miner_id, clock.now, digest)


@dataclass
class Ledger:
    blocks: list[Block] = field(default_factory=list)

    @classmethod
    def new(cls) -> "Ledger":
        return cls(blocks=[genesis_block()])

    @property
    def tip(self) -> Block:
        return self.blocks[-1]

    @property
    def height(self) -> int:
        return self.tip.height

    def append(self, block: Block) -> None:
        self.blocks.append(block)


@dataclass(frozen=True)
class Violation:
    height: int
    reason: str


def validate_block(
    prev: Block, block: Block, registry: KeyRegistry | None, difficulty_bits: int
) -> str | None:
    if block.prev_hash != prev.block_hash:
        return "linkage"
    if block.height != prev.height + 1:
        return "height"
    recomputed = block_hash_of(
        block.height, block.prev_hash, block.txs, block.nonce, block.miner_id
    )
    if recomputed != block.block_hash:
        return "hash"
    if not meets_difficulty(block.block_hash, difficulty_bits):
        return "pow"
    if registry is not None:
        if [t.client_id for t in block.txs] != registry.client_ids:
            return "tx-set"
        if len({t.round_index for t in block.txs}) > 1:
            return "tx-set"
        for tx in block.txs:
            if not verify_tx(tx, registry):
                return "signature"
    return None


def validate_ledger(
    ledger: Ledger, registry: KeyRegistry | None, difficulty_bits: int
) -> Violation | None:
    """Walk the chain from genesis; report the earliest broken block.

    Checks, in order: hash linkage, height continuity, stored-vs-recomputed
    block hash, puzzle difficulty, transaction completeness, signatures.
    ``None`` means the ledger is intact.
    """
    _check_difficulty_bits(difficulty_bits)
    if not ledger.blocks:
        return Violation(0, "empty")
    g = ledger.blocks[0]
    if g.height != 0 or g.prev_hash != GENESIS_PREV:
        return Violation(0, "genesis")
    if block_hash_of(0, g.prev_hash, g.txs, g.nonce, g.miner_id) != g.block_hash:
        return Violation(0, "hash")
    for slot in range(1, len(ledger.blocks)):
        reason = validate_block(
            ledger.blocks[slot - 1], ledger.blocks[slot], registry, difficulty_bits
        )
        if reason is not None:
            return Violation(slot, reason)
    return None


def export_ledger(ledger: Ledger, registry: KeyRegistry, path: str | Path) -> None:
    """Self-contained binary dump: registry keys plus every block.

    Keys travel with the file so an importer can re-check signatures; the
    ledger is a simulation artifact, not secret material.
    """
    out = bytearray()
    out += _LEDGER_MAGIC
    out += struct.pack("<I", len(registry))
    for cid, key in sorted(registry.items()):
        out += struct.pack("<I", cid) + key
    out += struct.pack("<I", len(ledger.blocks))
    for block in ledger.blocks:
        rec = bytearray()
        rec += struct.pack("<Q", block.height)
        rec += block.prev_hash
        rec += struct.pack("<IQd", block.miner_id, block.nonce, block.timestamp)
        rec += struct.pack("<I", len(block.txs))
        for tx in block.txs:
            rec += tx_bytes(tx)
        rec += block.block_hash
        out += struct.pack("<Q", len(rec)) + rec
    Path(path).write_bytes(bytes(out))


class _Cursor:
    """Bounds-checked reader; any short read means a truncated file."""

    def __init__(self, blob: bytes):
        self.blob = blob
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.blob):
            raise TruncatedFile(
                f"ledger file ends {self.off + n - len(self.blob)} bytes early"
            )
        out = self.blob[self.off : self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def import_ledger(path: str | Path) -> tuple[Ledger, KeyRegistry]:
    blob = Path(path).read_bytes()
    cur = _Cursor(blob)
    if cur.take(4) != _LEDGER_MAGIC:
        raise ValueError("not a ledger file")
    (n_clients,) = cur.unpack("<I")
    keys = {}
    for _ in range(n_clients):
        (cid,) = cur.unpack("<I")
        keys[cid] = cur.take(_SIG_LEN)
    (n_blocks,) = cur.unpack("<I")
    blocks = []
    for _ in range(n_blocks):
        (rec_len,) = cur.unpack("<Q")
        end = cur.off + rec_len
        (height,) = cur.unpack("<Q")
        prev_hash = cur.take(_HASH_LEN)
        miner_id, nonce, timestamp = cur.unpack("<IQd")
        (ntx,) = cur.unpack("<I")
        txs = []
        for _ in range(ntx):
            cid, rnd, plen = cur.unpack("<IIQ")
            payload = cur.take(plen)
            sig = cur.take(_SIG_LEN)
            txs.append(Transaction(cid, rnd, payload, sig))
        block_hash = cur.take(_HASH_LEN)
        if cur.off != end:
            raise ValueError("corrupt block record")
        blocks.append(
            Block(height, prev_hash, tuple(txs), nonce, miner_id, timestamp, block_hash)
        )
    if cur.off != len(blob):
        raise TruncatedFile(
            f"{len(blob) - cur.off} trailing bytes after the last block"
        )
    return Ledger(blocks=blocks), KeyRegistry(keys)
