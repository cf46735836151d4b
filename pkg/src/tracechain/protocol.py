"""Contact-transaction verification: responder checks, signature collection
within the allowed delay, the tuple-validity rule and finalization.

A tuple in a contact list is valid iff

    1) its payload is not a signed warning, and
    2) its payload is a correctly signed secret, or at least one witness
       tuple of the same transaction carries a correctly signed secret.

Responders that find no matching local record sign the fixed warning
message instead of the secret; responders that fail (network or device
failure) stay silent, which is different from disputing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import crypto
from .crypto import KeyPair, WARNING_MESSAGE
from .ledger import (
    ContactTransaction,
    KeyRegistry,
    PayloadState,
    TupleEntry,
    TupleListKind,
)


@dataclass
class TvmConfig:
    match_window_s: int = 180
    delay_d_s: int = 3600
    scan_period_s: int = 300

    def __post_init__(self) -> None:
        if not self.match_window_s < self.delay_d_s:
            raise ValueError("match window must be shorter than the response delay")


class LocalHistory:
    """Per-device record of observed contacts and witnessed contact cases."""

    def __init__(self) -> None:
        self.contacts: dict[str, list[int]] = {}
        self.witnessed: dict[tuple[str, str], list[int]] = {}

    def add_contact(self, peer: str, timestamp: int) -> None:
        self.contacts.setdefault(peer, []).append(timestamp)

    def add_witnessed(self, generator: str, peer: str, timestamp: int) -> None:
        self.witnessed.setdefault((generator, peer), []).append(timestamp)

    def has_contact(self, peer: str, timestamp: int, window_s: int) -> bool:
        return any(abs(t - timestamp) <= window_s for t in self.contacts.get(peer, ()))

    def has_witnessed(self, generator: str, peer: str, timestamp: int, window_s: int) -> bool:
        return any(abs(t - timestamp) <= window_s
                   for t in self.witnessed.get((generator, peer), ()))


@dataclass
class UserAccount:
    device_id: str
    keypair: KeyPair
    history: LocalHistory = field(default_factory=LocalHistory)

    @property
    def fingerprint(self) -> bytes:
        return self.keypair.public_key.fingerprint()


@dataclass(frozen=True)
class Response:
    """A responder's signed reply for one tuple of one transaction."""

    tx_id: bytes
    recipient_fingerprint: bytes
    list_kind: TupleListKind
    state: PayloadState
    signature: bytes


def _find_tuple(entries: list[TupleEntry], fingerprint: bytes) -> TupleEntry | None:
    for entry in entries:
        if entry.recipient_fingerprint == fingerprint:
            return entry
    return None


def respond_as_contact(user: UserAccount, tx: ContactTransaction,
                       config: TvmConfig) -> Response | None:
    """Decrypt the tuple addressed to `user` in the contact list and sign
    the secret if a matching local contact record exists, the warning
    otherwise.  Returns None when no tuple addresses the user or the
    payload does not decrypt."""
    entry = _find_tuple(tx.contacts, user.fingerprint)
    if entry is None:
        return None
    try:
        secret = crypto.decrypt(user.keypair.private_key, entry.payload)
    except crypto.CryptoError:
        return None
    if user.history.has_contact(tx.generator, tx.timestamp, config.match_window_s):
        state, message = PayloadState.SIGNED_SECRET, secret
    else:
        state, message = PayloadState.SIGNED_WARNING, WARNING_MESSAGE
    signature = crypto.sign(user.keypair.private_key, message)
    return Response(tx.tx_id, user.fingerprint, TupleListKind.CONTACT, state, signature)


def respond_as_witness(user: UserAccount, tx: ContactTransaction,
                       config: TvmConfig, registry: KeyRegistry) -> Response | None:
    """Sign the secret iff the user witnessed the generator contacting
    every device in the contact list; an empty contact list is vacuously
    witnessed."""
    entry = _find_tuple(tx.witnesses, user.fingerprint)
    if entry is None:
        return None
    try:
        secret = crypto.decrypt(user.keypair.private_key, entry.payload)
    except crypto.CryptoError:
        return None
    witnessed_all = all(
        user.history.has_witnessed(
            tx.generator,
            registry.device_for_fingerprint(contact.recipient_fingerprint),
            tx.timestamp,
            config.match_window_s,
        )
        for contact in tx.contacts
    )
    if witnessed_all:
        state, message = PayloadState.SIGNED_SECRET, secret
    else:
        state, message = PayloadState.SIGNED_WARNING, WARNING_MESSAGE
    signature = crypto.sign(user.keypair.private_key, message)
    return Response(tx.tx_id, user.fingerprint, entry.list_kind, state, signature)


@dataclass
class PendingVerification:
    """Generator-side state while responses are collected for one transaction."""

    tx: ContactTransaction
    deadline: int
    responses: dict[bytes, Response] = field(default_factory=dict)
    finalized: bool = False

    def all_resolved(self) -> bool:
        expected = len(self.tx.contacts) + len(self.tx.witnesses)
        return len(self.responses) == expected


def collect_response(pending: PendingVerification, response: Response,
                     registry: KeyRegistry, now: int) -> bool:
    """Record a response if it arrives in time and its signature verifies
    under the recipient's registered key; forged or late responses are
    dropped.  Returns True when the response was recorded."""
    if now > pending.deadline or pending.finalized:
        return False
    if response.tx_id != pending.tx.tx_id:
        return False
    try:
        device = registry.device_for_fingerprint(response.recipient_fingerprint)
    except Exception:
        return False
    key = registry.public_key(device)
    message = (pending.tx.secret if response.state == PayloadState.SIGNED_SECRET
               else WARNING_MESSAGE)
    if message is None or not crypto.verify(key, message, response.signature):
        return False
    pending.responses[response.recipient_fingerprint] = response
    return True


def tuple_valid(payload_state: PayloadState, witness_states: list[PayloadState]) -> bool:
    if payload_state == PayloadState.SIGNED_WARNING:
        return False
    return (payload_state == PayloadState.SIGNED_SECRET
            or any(w == PayloadState.SIGNED_SECRET for w in witness_states))


@dataclass
class FinalizationResult:
    tx: ContactTransaction | None  # pruned transaction, or None when discarded
    signer_fingerprints: list[bytes]  # every responder owed a verification reward
    pruned: int
    discarded: bool


def finalize_transaction(pending: PendingVerification) -> FinalizationResult:
    """Apply collected responses, prune invalid contact tuples and decide
    whether the transaction enters the shared pool.

    A transaction whose non-empty contact list loses every tuple is
    discarded; transactions with empty contact lists are kept.  Signers
    of either the secret or the warning are rewarded regardless of the
    transaction's fate.
    """
    if pending.finalized:
        raise ValueError("transaction already finalized")
    pending.finalized = True
    tx = pending.tx

    for entries in (tx.contacts, tx.witnesses):
        for entry in entries:
            response = pending.responses.get(entry.recipient_fingerprint)
            if response is not None and response.list_kind == entry.list_kind:
                entry.payload_state = response.state
                entry.payload = response.signature

    witness_states = [w.payload_state for w in tx.witnesses]
    kept = [c for c in tx.contacts if tuple_valid(c.payload_state, witness_states)]
    pruned = len(tx.contacts) - len(kept)
    signers = sorted(pending.responses)

    if tx.contacts and not kept:
        return FinalizationResult(None, signers, pruned, True)
    tx.contacts = kept
    return FinalizationResult(tx, signers, pruned, False)


def inject_failure(rng: np.random.Generator, p: float) -> bool:
    """True when this responder stays silent for this transaction."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("failure rate must lie in [0, 1]")
    return bool(rng.random() < p)
