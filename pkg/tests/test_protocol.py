import itertools

import numpy as np
import pytest

from tracechain import crypto, ledger, protocol
from tracechain.crypto import WARNING_MESSAGE
from tracechain.engine import make_stream
from tracechain.ledger import PayloadState, TupleListKind


@pytest.fixture(scope="module")
def world():
    """Registry plus six accounts: u0 generator, u1/u2 contacts, u3/u4
    witnesses, u5 bystander."""
    registry = ledger.KeyRegistry()
    accounts = []
    rng = make_stream(200, 0)
    for i in range(6):
        keypair = crypto.generate_keypair(make_stream(200, 9, i))
        account = protocol.UserAccount(crypto.new_device_id(rng), keypair)
        registry.register(ledger.make_registration_tx(
            account.device_id, keypair.public_key, 1_600_000_000))
        accounts.append(account)
    return registry, accounts


TS = 1_600_000_600
CONFIG = protocol.TvmConfig()


def fresh_tx(world, contacts=(1, 2), witnesses=(3, 4)):
    registry, accounts = world
    for account in accounts:
        account.history = protocol.LocalHistory()
    tx = ledger.make_contact_tx(
        accounts[0].device_id, "00ff00ff00",
        [accounts[i].device_id for i in contacts],
        [accounts[i].device_id for i in witnesses],
        TS, registry)
    return tx


def test_tvm_config_window_below_delay():
    with pytest.raises(ValueError):
        protocol.TvmConfig(match_window_s=3600, delay_d_s=3600)


def test_contact_with_matching_history_signs_secret(world):
    registry, accounts = world
    tx = fresh_tx(world)
    accounts[1].history.add_contact(accounts[0].device_id, TS + 120)  # +2 min
    response = protocol.respond_as_contact(accounts[1], tx, CONFIG)
    assert response.state == PayloadState.SIGNED_SECRET
    assert crypto.verify(accounts[1].keypair.public_key, "00ff00ff00", response.signature)


def test_contact_without_history_signs_warning(world):
    registry, accounts = world
    tx = fresh_tx(world)
    response = protocol.respond_as_contact(accounts[1], tx, CONFIG)
    assert response.state == PayloadState.SIGNED_WARNING
    assert crypto.verify(accounts[1].keypair.public_key, WARNING_MESSAGE, response.signature)


def test_contact_outside_window_signs_warning(world):
    registry, accounts = world
    tx = fresh_tx(world)
    accounts[1].history.add_contact(accounts[0].device_id, TS + 240)  # +4 min
    response = protocol.respond_as_contact(accounts[1], tx, CONFIG)
    assert response.state == PayloadState.SIGNED_WARNING


def test_uninvolved_user_ignores_transaction(world):
    registry, accounts = world
    tx = fresh_tx(world)
    assert protocol.respond_as_contact(accounts[5], tx, CONFIG) is None
    assert protocol.respond_as_witness(accounts[5], tx, CONFIG, registry) is None


def test_witness_signs_after_seeing_all_contacts(world):
    registry, accounts = world
    tx = fresh_tx(world)
    for c in (1, 2):
        accounts[3].history.add_witnessed(
            accounts[0].device_id, accounts[c].device_id, TS)
    response = protocol.respond_as_witness(accounts[3], tx, CONFIG, registry)
    assert response.state == PayloadState.SIGNED_SECRET


@pytest.mark.parametrize("seen", [(), (1,), (2,)])
def test_witness_with_partial_view_warns(world, seen):
    # enumerate the proper subsets of a two-contact list
    registry, accounts = world
    tx = fresh_tx(world)
    for c in seen:
        accounts[3].history.add_witnessed(
            accounts[0].device_id, accounts[c].device_id, TS)
    response = protocol.respond_as_witness(accounts[3], tx, CONFIG, registry)
    assert response.state == PayloadState.SIGNED_WARNING


def test_witness_of_empty_contact_list_signs(world):
    registry, accounts = world
    tx = fresh_tx(world, contacts=())
    response = protocol.respond_as_witness(accounts[3], tx, CONFIG, registry)
    assert response.state == PayloadState.SIGNED_SECRET


def test_collect_records_valid_response(world):
    registry, accounts = world
    tx = fresh_tx(world)
    accounts[1].history.add_contact(accounts[0].device_id, TS)
    pending = protocol.PendingVerification(tx, deadline=TS + 3600)
    response = protocol.respond_as_contact(accounts[1], tx, CONFIG)
    assert protocol.collect_response(pending, response, registry, now=TS + 30)
    assert accounts[1].fingerprint in pending.responses


def test_collect_drops_forged_signature(world):
    registry, accounts = world
    tx = fresh_tx(world)
    pending = protocol.PendingVerification(tx, deadline=TS + 3600)
    forged = protocol.Response(
        tx.tx_id, accounts[1].fingerprint, TupleListKind.CONTACT,
        PayloadState.SIGNED_SECRET,
        crypto.sign(accounts[2].keypair.private_key, "00ff00ff00"))
    assert not protocol.collect_response(pending, forged, registry, now=TS + 30)
    assert pending.responses == {}


def test_collect_drops_late_response(world):
    registry, accounts = world
    tx = fresh_tx(world)
    accounts[1].history.add_contact(accounts[0].device_id, TS)
    pending = protocol.PendingVerification(tx, deadline=TS + 3600)
    response = protocol.respond_as_contact(accounts[1], tx, CONFIG)
    assert not protocol.collect_response(pending, response, registry, now=TS + 3601)


def test_validity_truth_table_exhaustive():
    """All payload states crossed with every witness-state combination of
    up to three witnesses must match the two-clause rule."""
    states = list(PayloadState)
    for payload in states:
        for k in range(4):
            for witness_states in itertools.product(states, repeat=k):
                expected = (payload != PayloadState.SIGNED_WARNING and (
                    payload == PayloadState.SIGNED_SECRET
                    or PayloadState.SIGNED_SECRET in witness_states))
                assert protocol.tuple_valid(payload, list(witness_states)) == expected


def test_monotone_witness_benefit():
    """Adding a signing witness never flips a tuple valid -> invalid."""
    states = list(PayloadState)
    for payload in states:
        for k in range(3):
            for witness_states in itertools.product(states, repeat=k):
                before = protocol.tuple_valid(payload, list(witness_states))
                after = protocol.tuple_valid(
                    payload, list(witness_states) + [PayloadState.SIGNED_SECRET])
                assert not (before and not after)


def _finalize(world, respond_contacts, respond_witnesses):
    """Build a 2-contact 2-witness tx and play the given responders."""
    registry, accounts = world
    tx = fresh_tx(world)
    pending = protocol.PendingVerification(tx, deadline=TS + 3600)
    for i, honest in respond_contacts.items():
        if honest:
            accounts[i].history.add_contact(accounts[0].device_id, TS)
        response = protocol.respond_as_contact(accounts[i], tx, CONFIG)
        assert protocol.collect_response(pending, response, registry, now=TS + 10)
    for i, saw_all in respond_witnesses.items():
        if saw_all:
            for c in (1, 2):
                accounts[i].history.add_witnessed(
                    accounts[0].device_id, accounts[c].device_id, TS)
        response = protocol.respond_as_witness(accounts[i], tx, CONFIG, registry)
        assert protocol.collect_response(pending, response, registry, now=TS + 10)
    return protocol.finalize_transaction(pending)


def test_finalize_prunes_warned_tuple(world):
    result = _finalize(world, {1: True, 2: False}, {})
    assert not result.discarded
    assert len(result.tx.contacts) == 1
    assert result.pruned == 1
    assert len(result.signer_fingerprints) == 2  # the warner still earns credit


def test_finalize_discards_fully_unverified(world):
    result = _finalize(world, {}, {})
    assert result.discarded and result.tx is None
    assert result.signer_fingerprints == []


def test_finalize_keeps_unresponsive_tuple_with_witness(world):
    result = _finalize(world, {}, {3: True})
    assert not result.discarded
    assert len(result.tx.contacts) == 2
    assert all(c.payload_state == PayloadState.ENCRYPTED for c in result.tx.contacts)


def test_warning_overrides_witness(world):
    result = _finalize(world, {1: False, 2: False}, {3: True, 4: True})
    assert result.tx is None and result.discarded


def test_finalize_empty_contact_list_pools(world):
    registry, accounts = world
    tx = fresh_tx(world, contacts=(), witnesses=())
    pending = protocol.PendingVerification(tx, deadline=TS + 3600)
    result = protocol.finalize_transaction(pending)
    assert not result.discarded and result.tx is tx


def test_finalize_is_single_shot(world):
    registry, accounts = world
    tx = fresh_tx(world, contacts=(), witnesses=())
    pending = protocol.PendingVerification(tx, deadline=TS + 3600)
    protocol.finalize_transaction(pending)
    with pytest.raises(ValueError):
        protocol.finalize_transaction(pending)


def test_inject_failure_rate():
    rng = make_stream(3, 5)
    silent = sum(protocol.inject_failure(rng, 0.5) for _ in range(10_000))
    assert abs(silent / 10_000 - 0.5) < 0.015
    assert not protocol.inject_failure(rng, 0.0)
    assert protocol.inject_failure(rng, 1.0)
    with pytest.raises(ValueError):
        protocol.inject_failure(rng, 1.5)
