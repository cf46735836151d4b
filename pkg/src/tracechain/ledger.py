"""Transactions, blocks, chain, shared pool and canonical serialization.

Canonical byte layout (the sizes the storage accounting relies on):

    block header   = block hash (32) | previous hash (32) | miner device id (10)
                     | timestamp (4, unsigned BE)                       -> 78 bytes
    contact tx     = tx id (32) | generator device id (10) | timestamp (4)
                     | tuple records (217 each, contacts then witnesses) -> 46 + 217*k
    registration   = tx id (32) | device id (10) | timestamp (4)
                     | public key (132)                                  -> 178 bytes
    tuple record   = kind (1) | recipient key fingerprint (32)
                     | payload (128) | zero padding (56)                 -> 217 bytes

The tuple record size is configurable; 217 is the default and the
minimum content is 161 bytes (kind + fingerprint + payload).

The chain dump file wraps canonical bytes in framing that is *not*
counted by `serialized_size`:

    file   = b"TRCHAIN1" | block record ...
    block  = u32 BE record length | header (78) | tx record ...
    tx     = u16 BE tx length | u8 tx kind (0 registration, 1 contact) | canonical tx bytes
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

from . import crypto
from .crypto import RsaPublicKey

HASH_BYTES = 32
DEVICE_ID_BYTES = 10
TIMESTAMP_BYTES = 4
BLOCK_HEADER_BYTES = 2 * HASH_BYTES + DEVICE_ID_BYTES + TIMESTAMP_BYTES  # 78
TX_BASE_BYTES = HASH_BYTES + DEVICE_ID_BYTES + TIMESTAMP_BYTES  # 46
TUPLE_RECORD_BYTES = 217
TUPLE_RECORD_MIN_BYTES = 1 + HASH_BYTES + crypto.MODULUS_BYTES  # 161
REGISTRATION_TX_BYTES = TX_BASE_BYTES + crypto.PUBLIC_KEY_BYTES  # 178
GENESIS_HASH = b"\x00" * HASH_BYTES

_DUMP_MAGIC = b"TRCHAIN1"


class LedgerError(ValueError):
    pass


class UnknownRecipientError(LedgerError):
    """A contact or witness device id has no registered public key."""


class ChainIntegrityError(LedgerError):
    pass


class TupleListKind(IntEnum):
    CONTACT = 0
    WITNESS = 1


class PayloadState(IntEnum):
    ENCRYPTED = 0
    SIGNED_SECRET = 1
    SIGNED_WARNING = 2


@dataclass(eq=True)
class TupleEntry:
    """One (recipient key, payload) tuple of a contact or witness list."""

    list_kind: TupleListKind
    recipient_fingerprint: bytes
    payload_state: PayloadState
    payload: bytes
    recipient_key: RsaPublicKey | None = field(default=None, compare=False)

    def kind_byte(self) -> int:
        return (int(self.list_kind) << 2) | int(self.payload_state)

    def to_record(self, record_size: int = TUPLE_RECORD_BYTES) -> bytes:
        if record_size < TUPLE_RECORD_MIN_BYTES:
            raise LedgerError(f"tuple record size must be >= {TUPLE_RECORD_MIN_BYTES}")
        body = bytes([self.kind_byte()]) + self.recipient_fingerprint + self.payload
        return body.ljust(record_size, b"\x00")

    @classmethod
    def from_record(cls, raw: bytes) -> "TupleEntry":
        kind = raw[0]
        fingerprint = raw[1:1 + HASH_BYTES]
        payload = raw[1 + HASH_BYTES:TUPLE_RECORD_MIN_BYTES]
        return cls(TupleListKind(kind >> 2), fingerprint, PayloadState(kind & 0b11), payload)


@dataclass(eq=True)
class RegistrationTransaction:
    tx_id: bytes
    device_id: str
    public_key: RsaPublicKey
    timestamp: int

    def content_bytes(self) -> bytes:
        return self.device_id.encode("ascii") + self.public_key.to_bytes()

    def to_bytes(self) -> bytes:
        return (self.tx_id + self.device_id.encode("ascii")
                + self.timestamp.to_bytes(TIMESTAMP_BYTES, "big") + self.public_key.to_bytes())


@dataclass(eq=True)
class ContactTransaction:
    tx_id: bytes
    generator: str
    contacts: list[TupleEntry]
    witnesses: list[TupleEntry]
    timestamp: int
    # Held privately by the generator for signature checks; never serialized.
    secret: str | None = field(default=None, compare=False)
    tuple_record_bytes: int = field(default=TUPLE_RECORD_BYTES, compare=False)

    def to_bytes(self) -> bytes:
        parts = [self.tx_id, self.generator.encode("ascii"),
                 self.timestamp.to_bytes(TIMESTAMP_BYTES, "big")]
        for entry in self.contacts:
            parts.append(entry.to_record(self.tuple_record_bytes))
        for entry in self.witnesses:
            parts.append(entry.to_record(self.tuple_record_bytes))
        return b"".join(parts)


Transaction = RegistrationTransaction | ContactTransaction


@dataclass(eq=True)
class Block:
    block_hash: bytes
    previous_block_hash: bytes
    miner_device_id: str
    timestamp: int
    transactions: list[Transaction]

    def header_bytes(self) -> bytes:
        return (self.block_hash + self.previous_block_hash
                + self.miner_device_id.encode("ascii")
                + self.timestamp.to_bytes(TIMESTAMP_BYTES, "big"))

    def body_bytes(self) -> bytes:
        return b"".join(tx.to_bytes() for tx in self.transactions)

    def to_bytes(self) -> bytes:
        return self.header_bytes() + self.body_bytes()

    def compute_hash(self) -> bytes:
        unsigned = (self.previous_block_hash + self.miner_device_id.encode("ascii")
                    + self.timestamp.to_bytes(TIMESTAMP_BYTES, "big") + self.body_bytes())
        return bytes.fromhex(crypto.content_hash(unsigned, self.timestamp))

    def verify_hash(self) -> bool:
        return self.block_hash == self.compute_hash()


class KeyRegistry:
    """device id -> public key lookups built from registration transactions.

    Re-registration with a new key replaces the previous entry.
    """

    def __init__(self) -> None:
        self._by_device: dict[str, RsaPublicKey] = {}
        self._device_by_fingerprint: dict[bytes, str] = {}

    def register(self, tx: RegistrationTransaction) -> None:
        old = self._by_device.get(tx.device_id)
        if old is not None:
            self._device_by_fingerprint.pop(old.fingerprint(), None)
        self._by_device[tx.device_id] = tx.public_key
        self._device_by_fingerprint[tx.public_key.fingerprint()] = tx.device_id

    def public_key(self, device_id: str) -> RsaPublicKey:
        try:
            return self._by_device[device_id]
        except KeyError:
            raise UnknownRecipientError(f"device {device_id!r} has no registration") from None

    def device_for_fingerprint(self, fingerprint: bytes) -> str:
        try:
            return self._device_by_fingerprint[fingerprint]
        except KeyError:
            raise UnknownRecipientError("unknown key fingerprint") from None

    def __contains__(self, device_id: str) -> bool:
        return device_id in self._by_device

    def __len__(self) -> int:
        return len(self._by_device)


def make_registration_tx(device_id: str, public_key: RsaPublicKey, now: int) -> RegistrationTransaction:
    content = device_id.encode("ascii") + public_key.to_bytes()
    tx_id = bytes.fromhex(crypto.content_hash(content, now))
    return RegistrationTransaction(tx_id, device_id, public_key, now)


def make_contact_tx(
    generator_device_id: str,
    secret: str,
    contacts: list[str],
    witnesses: list[str],
    timestamp: int,
    registry: KeyRegistry,
    tuple_record_bytes: int = TUPLE_RECORD_BYTES,
) -> ContactTransaction:
    """Build a contact transaction with one fresh secret encrypted per recipient."""
    overlap = set(contacts) & set(witnesses)
    if overlap:
        raise LedgerError(f"contacts and witnesses overlap: {sorted(overlap)}")
    if generator_device_id in set(contacts) | set(witnesses):
        raise LedgerError("generator cannot appear in its own lists")

    def entries(device_ids: list[str], kind: TupleListKind) -> list[TupleEntry]:
        out = []
        for device_id in device_ids:
            key = registry.public_key(device_id)
            out.append(TupleEntry(
                list_kind=kind,
                recipient_fingerprint=key.fingerprint(),
                payload_state=PayloadState.ENCRYPTED,
                payload=crypto.encrypt(key, secret),
                recipient_key=key,
            ))
        return out

    contact_entries = entries(contacts, TupleListKind.CONTACT)
    witness_entries = entries(witnesses, TupleListKind.WITNESS)
    content = b"".join(
        [generator_device_id.encode("ascii")]
        + [e.to_record(tuple_record_bytes) for e in contact_entries + witness_entries]
    )
    tx_id = bytes.fromhex(crypto.content_hash(content, timestamp))
    return ContactTransaction(tx_id, generator_device_id, contact_entries,
                              witness_entries, timestamp, secret=secret,
                              tuple_record_bytes=tuple_record_bytes)


def serialized_size(entity) -> int:
    """Exact canonical byte count of a block, transaction or tuple entry."""
    if isinstance(entity, Block):
        return BLOCK_HEADER_BYTES + sum(serialized_size(tx) for tx in entity.transactions)
    if isinstance(entity, ContactTransaction):
        n_tuples = len(entity.contacts) + len(entity.witnesses)
        return TX_BASE_BYTES + n_tuples * entity.tuple_record_bytes
    if isinstance(entity, RegistrationTransaction):
        return REGISTRATION_TX_BYTES
    if isinstance(entity, TupleEntry):
        return TUPLE_RECORD_BYTES
    raise LedgerError(f"cannot size {type(entity).__name__}")


class TransactionPool:
    """Shared pool of finalized transactions keyed by tx id; drained atomically."""

    def __init__(self) -> None:
        self._pending: dict[bytes, Transaction] = {}

    def add(self, tx: Transaction) -> None:
        if tx.tx_id in self._pending:
            raise LedgerError(f"duplicate transaction {tx.tx_id.hex()}")
        self._pending[tx.tx_id] = tx

    def drain(self) -> list[Transaction]:
        txs = list(self._pending.values())
        self._pending.clear()
        return txs

    def __len__(self) -> int:
        return len(self._pending)

    def __contains__(self, tx_id: bytes) -> bool:
        return tx_id in self._pending


class Chain:
    """Append-only hash-linked block sequence."""

    def __init__(self) -> None:
        self.blocks: list[Block] = []

    @property
    def height(self) -> int:
        return len(self.blocks)

    def tip_hash(self) -> bytes:
        return self.blocks[-1].block_hash if self.blocks else GENESIS_HASH

    def append(self, block: Block) -> None:
        if block.previous_block_hash != self.tip_hash():
            raise ChainIntegrityError(
                f"previous hash mismatch at height {self.height}")
        if not block.verify_hash():
            raise ChainIntegrityError(f"block hash mismatch at height {self.height}")
        self.blocks.append(block)

    def verify(self) -> bool:
        prev = GENESIS_HASH
        for block in self.blocks:
            if block.previous_block_hash != prev or not block.verify_hash():
                return False
            prev = block.block_hash
        return True

    def total_bytes(self) -> int:
        return sum(serialized_size(b) for b in self.blocks)


def append_block(chain: Chain, pool: TransactionPool, miner_device_id: str, now: int) -> Block:
    """Package the whole pool into a new block; empty pools yield empty blocks."""
    txs = pool.drain()
    block = Block(
        block_hash=b"",
        previous_block_hash=chain.tip_hash(),
        miner_device_id=miner_device_id,
        timestamp=now,
        transactions=txs,
    )
    block.block_hash = block.compute_hash()
    chain.append(block)
    return block


def write_chain_dump(chain: Chain, path: str | Path) -> None:
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(_DUMP_MAGIC)
        for block in chain.blocks:
            records = []
            for tx in block.transactions:
                raw = tx.to_bytes()
                kind = 0 if isinstance(tx, RegistrationTransaction) else 1
                records.append(len(raw).to_bytes(2, "big") + bytes([kind]) + raw)
            body = b"".join(records)
            record = block.header_bytes() + body
            fh.write(len(record).to_bytes(4, "big"))
            fh.write(record)


def _tx_from_bytes(kind: int, raw: bytes, tuple_record_bytes: int) -> Transaction:
    tx_id = raw[:HASH_BYTES]
    device = raw[HASH_BYTES:HASH_BYTES + DEVICE_ID_BYTES].decode("ascii")
    ts = int.from_bytes(raw[HASH_BYTES + DEVICE_ID_BYTES:TX_BASE_BYTES], "big")
    rest = raw[TX_BASE_BYTES:]
    if kind == 0:
        return RegistrationTransaction(tx_id, device, RsaPublicKey.from_bytes(rest), ts)
    if len(rest) % tuple_record_bytes:
        raise LedgerError("contact transaction has a partial tuple record")
    contacts, witnesses = [], []
    for i in range(0, len(rest), tuple_record_bytes):
        entry = TupleEntry.from_record(rest[i:i + tuple_record_bytes])
        (contacts if entry.list_kind == TupleListKind.CONTACT else witnesses).append(entry)
    return ContactTransaction(tx_id, device, contacts, witnesses, ts,
                              tuple_record_bytes=tuple_record_bytes)


def read_chain_dump(path: str | Path, tuple_record_bytes: int = TUPLE_RECORD_BYTES) -> Chain:
    raw = Path(path).read_bytes()
    if not raw.startswith(_DUMP_MAGIC):
        raise LedgerError("not a chain dump file")
    chain = Chain()
    pos = len(_DUMP_MAGIC)
    while pos < len(raw):
        length = int.from_bytes(raw[pos:pos + 4], "big")
        record = raw[pos + 4:pos + 4 + length]
        pos += 4 + length
        header, body = record[:BLOCK_HEADER_BYTES], record[BLOCK_HEADER_BYTES:]
        txs = []
        tpos = 0
        while tpos < len(body):
            tx_len = int.from_bytes(body[tpos:tpos + 2], "big")
            kind = body[tpos + 2]
            txs.append(_tx_from_bytes(kind, body[tpos + 3:tpos + 3 + tx_len], tuple_record_bytes))
            tpos += 3 + tx_len
        block = Block(
            block_hash=header[:HASH_BYTES],
            previous_block_hash=header[HASH_BYTES:2 * HASH_BYTES],
            miner_device_id=header[2 * HASH_BYTES:2 * HASH_BYTES + DEVICE_ID_BYTES].decode("ascii"),
            timestamp=int.from_bytes(header[-TIMESTAMP_BYTES:], "big"),
            transactions=txs,
        )
        chain.blocks.append(block)
    return chain


def write_chain_index(chain: Chain, path: str | Path) -> None:
    """Per-block CSV index: height, timestamp, tx_count, byte_size."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["height", "timestamp", "tx_count", "byte_size"])
        for i, block in enumerate(chain.blocks, start=1):
            writer.writerow([i, block.timestamp, len(block.transactions), serialized_size(block)])
