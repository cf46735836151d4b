"""Deterministic discrete-event simulation of the contact-tracing chain.

Time advances in 5-minute scan ticks; blocks are mined every tick.  All
randomness flows through named sub-streams of one seed, so that

* identical configs reproduce identical runs bit for bit,
* the generated contact cases (ground truth) depend only on the seed,
  the scenarios and the duration -- never on failure rate, witness mode
  or consensus mode, and
* the two engine implementations consume identical decision draws.

Engines:

* ``fast`` -- vectorized bookkeeping over the decision layer; used for
  chain heights in the thousands.  No key material is created; byte
  sizes use the canonical fixed-width record arithmetic.
* ``full`` -- every transaction is materialized with real RSA payloads
  and pushed through the verification protocol; supports chain dumps.
  Intended for short runs.

Both engines resolve a transaction the same way: every responder that
does not fail replies within the (one-minute) latency bound, so a
transaction with no failed responder is finalized before the next block
tick, and one with any failed responder waits for the full delay.
Failure draws are consumed for every responder regardless of the
failure rate, so runs that differ only in `failure_rate` share all
remaining randomness.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import consensus as cns
from . import crypto, ledger, metrics, protocol
from .config import (
    ATTACK_FAKE_CONTACTS,
    ATTACK_MALICIOUS_WITNESS,
    ENGINE_FULL,
    RATE_PER_SCENARIO,
    SIM_EPOCH,
    SimulationConfig,
)

STREAM_IDENTITY = 0
STREAM_ARRIVAL = 1
STREAM_CONTACT_LEN = 2
STREAM_WITNESS_LEN = 3
STREAM_RECIPIENTS = 4
STREAM_FAILURE = 5
STREAM_LATENCY = 6
STREAM_CONSENSUS = 7
STREAM_ATTACK = 8
STREAM_USER_CRYPTO = 9


def make_stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def _segment_sums(values: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Per-segment sums of a flat array split by `counts` (zeros allowed)."""
    cs = np.concatenate(([0], np.cumsum(values)))
    offsets = np.concatenate(([0], np.cumsum(counts)))
    return cs[offsets[1:]] - cs[offsets[:-1]]


@dataclass
class ScenarioTickPlan:
    """Everything random about one scenario's primary transactions at one tick."""

    scenario: int
    generators: np.ndarray      # global user indices
    contact_counts: np.ndarray
    witness_counts: np.ndarray
    contacts: np.ndarray        # flat, aligned with contact_counts
    witnesses: np.ndarray       # flat, aligned with witness_counts
    contact_silent: np.ndarray  # flat bools
    witness_silent: np.ndarray


@dataclass
class ReciprocalTickPlan:
    """Per-tick reciprocal confirmations: each named contact reports back
    every generator that named it, in one transaction without witnesses."""

    reporters: np.ndarray
    counts: np.ndarray
    generators: np.ndarray      # flat, aligned with counts
    silent: np.ndarray          # flat: the generator fails to countersign


@dataclass
class AttackTickPlan:
    generators: np.ndarray      # colluder user indices emitting fakes
    target_counts: np.ndarray
    targets: np.ndarray         # flat: colluders (fake_contacts) or honest users
    target_silent: np.ndarray   # flat; meaningful for malicious_witness only
    witness_colluders: np.ndarray  # one per fake tx (malicious_witness), else empty


class DecisionLayer:
    """Draws every per-tick decision from the named streams.

    Draw order inside one tick is fixed: for each scenario in config
    order -- arrivals, contact lengths, witness lengths, the recipient
    selection matrix, contact failure flags, witness failure flags --
    then reciprocal failure flags per scenario, then attack draws.
    """

    def __init__(self, config: SimulationConfig):
        self.config = config
        seed = config.seed
        self.arrival = make_stream(seed, STREAM_ARRIVAL)
        self.contact_len = make_stream(seed, STREAM_CONTACT_LEN)
        self.witness_len = make_stream(seed, STREAM_WITNESS_LEN)
        self.recipients = make_stream(seed, STREAM_RECIPIENTS)
        self.failure = make_stream(seed, STREAM_FAILURE)
        self.attack_rng = make_stream(seed, STREAM_ATTACK)

        self.bases = np.concatenate(
            ([0], np.cumsum([sc.population for sc in config.scenarios])))[:-1]
        self.tick_probs = [config.per_user_tick_probability(sc) for sc in config.scenarios]
        self.colluders = np.array([], dtype=np.int64)
        if config.attack is not None:
            self.colluders = np.arange(config.attack.colluder_count, dtype=np.int64)
        self.is_colluder = np.zeros(config.n_users, dtype=bool)
        self.is_colluder[self.colluders] = True
        self.honest_users = np.flatnonzero(~self.is_colluder)

    def _scenario_plan(self, s: int) -> ScenarioTickPlan:
        config = self.config
        sc = config.scenarios[s]
        pop, base = sc.population, self.bases[s]
        p_fail = config.failure_rate

        gen_mask = self.arrival.random(pop) < self.tick_probs[s]
        if len(self.colluders):
            gen_mask &= ~self.is_colluder[base:base + pop]
        gen_local = np.flatnonzero(gen_mask)
        n = len(gen_local)
        if n == 0:
            empty_i = np.array([], dtype=np.int64)
            empty_b = np.array([], dtype=bool)
            return ScenarioTickPlan(s, empty_i, empty_i, empty_i,
                                    empty_i, empty_i, empty_b, empty_b)

        k_c = np.rint(self.contact_len.normal(sc.contact_mu, sc.contact_sigma, n))
        k_c = np.clip(k_c, 0, pop - 1).astype(np.int64)
        if config.witness_enabled:
            k_w = np.rint(self.witness_len.normal(sc.witness_mu, sc.witness_sigma, n))
            k_w = np.clip(k_w, 0, pop - 1 - k_c).astype(np.int64)
        else:
            k_w = np.zeros(n, dtype=np.int64)

        k_total = k_c + k_w
        k_max = int(k_total.max()) if n else 0
        # drawn whenever events exist so the stream position does not depend
        # on sampled lengths or the witness switch
        selection = self.recipients.random((n, pop - 1))
        if k_max > 0:
            part = np.argpartition(selection, k_max - 1, axis=1)[:, :k_max] if k_max < pop - 1 \
                else np.argsort(selection, axis=1)
            vals = np.take_along_axis(selection, part, axis=1)
            order = np.argsort(vals, axis=1, kind="stable")
            chosen = np.take_along_axis(part, order, axis=1)
            # skip the generator's own slot
            chosen = chosen + (chosen >= gen_local[:, None])
            cols = np.arange(k_max)
            contact_sel = cols[None, :] < k_c[:, None]
            witness_sel = (cols[None, :] >= k_c[:, None]) & (cols[None, :] < k_total[:, None])
            contacts = (base + chosen[contact_sel]).astype(np.int64)
            witnesses = (base + chosen[witness_sel]).astype(np.int64)
        else:
            contacts = np.array([], dtype=np.int64)
            witnesses = np.array([], dtype=np.int64)

        contact_silent = self.failure.random(len(contacts)) < p_fail
        witness_silent = self.failure.random(len(witnesses)) < p_fail
        # colluders ignore verification duties entirely
        if len(self.colluders):
            contact_silent |= self.is_colluder[contacts]
            witness_silent |= self.is_colluder[witnesses]
        return ScenarioTickPlan(s, base + gen_local, k_c, k_w,
                                contacts, witnesses, contact_silent, witness_silent)

    def _reciprocal_plan(self, plan: ScenarioTickPlan) -> ReciprocalTickPlan | None:
        if len(plan.contacts) == 0:
            return None
        generators_per_contact = np.repeat(plan.generators, plan.contact_counts)
        order = np.argsort(plan.contacts, kind="stable")
        reporters_sorted = plan.contacts[order]
        generators_sorted = generators_per_contact[order]
        uniq, counts = np.unique(reporters_sorted, return_counts=True)
        silent = self.failure.random(len(generators_sorted)) < self.config.failure_rate
        if len(self.colluders):
            silent |= self.is_colluder[generators_sorted]
            keep = ~self.is_colluder[uniq]
            if not keep.all():
                seg = np.repeat(keep, counts)
                uniq, counts = uniq[keep], counts[keep]
                generators_sorted, silent = generators_sorted[seg], silent[seg]
        return ReciprocalTickPlan(uniq, counts, generators_sorted, silent)

    def _attack_plan(self, plans: list[ScenarioTickPlan]) -> AttackTickPlan | None:
        attack = self.config.attack
        if attack is None:
            return None
        n_coll = len(self.colluders)
        prob = min(1.0, attack.fake_tx_rate * self.config.tvm.scan_period_s / 3600.0)
        mask = self.attack_rng.random(n_coll) < prob
        gens = self.colluders[np.flatnonzero(mask)]
        n = len(gens)
        empty_i = np.array([], dtype=np.int64)
        empty_b = np.array([], dtype=bool)
        if n == 0:
            return AttackTickPlan(gens, empty_i, empty_i, empty_b, empty_i)

        # fake contact-list lengths follow the crowded-style profile
        raw = np.rint(self.attack_rng.normal(5.0, 2.0, n))
        if attack.strategy == ATTACK_FAKE_CONTACTS:
            k = np.clip(raw, 1, n_coll - 1).astype(np.int64)
            targets = []
            for gi, ki in zip(gens, k):
                others = self.colluders[self.colluders != gi]
                picks = self.attack_rng.permutation(len(others))[:ki]
                targets.append(others[picks])
            targets = np.concatenate(targets) if targets else empty_i
            silent = np.zeros(len(targets), dtype=bool)  # colluders always countersign
            return AttackTickPlan(gens, k, targets, silent, empty_i)

        # fabricated contacts must not coincide with a real contact case of
        # this tick, otherwise the "false" tuple would be genuinely valid
        real_peers: dict[int, set[int]] = {}
        for plan in plans:
            per_contact = np.repeat(plan.generators, plan.contact_counts)
            for contact, generator in zip(plan.contacts.tolist(), per_contact.tolist()):
                if self.is_colluder[contact]:
                    real_peers.setdefault(contact, set()).add(generator)

        k = np.clip(raw, 1, 12).astype(np.int64)
        targets = []
        for i, (gi, ki) in enumerate(zip(gens.tolist(), k)):
            banned = real_peers.get(gi, ())
            pool = self.honest_users[self.attack_rng.permutation(len(self.honest_users))]
            picked = [u for u in pool.tolist() if u not in banned][:ki]
            k[i] = len(picked)
            targets.append(np.array(picked, dtype=np.int64))
        targets = np.concatenate(targets) if targets else empty_i
        witness_pick = self.attack_rng.integers(0, n_coll - 1, size=n)
        gen_pos = np.searchsorted(self.colluders, gens)
        witness_pick = witness_pick + (witness_pick >= gen_pos)
        witnesses = self.colluders[witness_pick]
        # honest targets dispute unless their device fails
        silent = self.failure.random(len(targets)) < self.config.failure_rate
        return AttackTickPlan(gens, k, targets, silent, witnesses)

    def plan_tick(self) -> tuple[list[ScenarioTickPlan], list[ReciprocalTickPlan], AttackTickPlan | None]:
        plans = [self._scenario_plan(s) for s in range(len(self.config.scenarios))]
        reciprocal: list[ReciprocalTickPlan] = []
        if self.config.bilateral_reporting:
            for plan in plans:
                rec = self._reciprocal_plan(plan)
                if rec is not None:
                    reciprocal.append(rec)
        return plans, reciprocal, self._attack_plan(plans)


@dataclass
class BlockSummary:
    height: int
    timestamp: int
    miner: int
    n_tx: int
    n_bytes: int


@dataclass
class SnapshotRow:
    height: int
    gini_balance: float
    gini_credit: float
    gini_blocks: float


@dataclass
class AttackReport:
    colluder_ids: np.ndarray
    false_tuples_attempted: int = 0
    false_tuples_persisted: int = 0
    share_series: list[tuple[int, float, float]] = field(default_factory=list)


@dataclass
class RunResult:
    config: SimulationConfig
    device_ids: list[str]
    group_labels: np.ndarray
    state: cns.ConsensusState
    blocks: list[BlockSummary]
    snapshots: list[SnapshotRow]
    total_bytes: int
    sim_hours: float
    ground_truth: dict[tuple[int, int, int], bool] | None = None
    discarded_tx: int = 0
    attack: AttackReport | None = None
    chain: ledger.Chain | None = None
    rounds: list[cns.VoteRound] | None = None
    group_bytes: np.ndarray | None = None

    @property
    def scenario_names(self) -> list[str]:
        return [sc.name for sc in self.config.scenarios]

    def loss_percentage(self) -> float:
        if not self.ground_truth:
            raise ValueError("run did not track contact cases")
        recorded = sum(self.ground_truth.values())
        return 100.0 * (1.0 - recorded / len(self.ground_truth))


class _EngineBase:
    """Clock, consensus, pooling buckets and metrics shared by both engines."""

    def __init__(self, config: SimulationConfig):
        self.config = config
        self.decisions = DecisionLayer(config)
        self.consensus_rng = make_stream(config.seed, STREAM_CONSENSUS)
        identity_rng = make_stream(config.seed, STREAM_IDENTITY)
        self.device_ids = self._draw_device_ids(identity_rng, config.n_users)
        order = sorted(range(config.n_users), key=lambda i: self.device_ids[i])
        self.device_rank = np.empty(config.n_users, dtype=np.int64)
        self.device_rank[order] = np.arange(config.n_users)
        self.state = cns.ConsensusState(
            n_users=config.n_users,
            device_rank=self.device_rank,
            config=config.consensus,
            miner_failure_rate=config.miner_failure_rate,
        )
        self.group_labels = np.repeat(
            np.arange(len(config.scenarios)),
            [sc.population for sc in config.scenarios]).astype(np.int64)
        self.delay_ticks = -(-config.tvm.delay_d_s // config.tvm.scan_period_s)
        self.blocks: list[BlockSummary] = []
        self.snapshots: list[SnapshotRow] = []
        self.rounds: list[cns.VoteRound] | None = [] if config.engine == ENGINE_FULL else None
        self.ground_truth: dict[tuple[int, int, int], bool] | None = (
            {} if config.track_cases else None)
        self.discarded_tx = 0
        self.total_bytes = 0
        self.group_bytes = np.zeros(len(config.scenarios) + 1)  # +1 for attack traffic
        self.attack_report = (AttackReport(self.decisions.colluders.copy())
                              if config.attack is not None else None)

    @staticmethod
    def _draw_device_ids(rng: np.random.Generator, n: int) -> list[str]:
        seen: set[str] = set()
        ids: list[str] = []
        while len(ids) < n:
            device_id = crypto.new_device_id(rng)
            if device_id not in seen:
                seen.add(device_id)
                ids.append(device_id)
        return ids

    def tick_time(self, tick: int) -> int:
        return SIM_EPOCH + tick * self.config.tvm.scan_period_s

    def record_cases(self, generators: np.ndarray, counts: np.ndarray,
                     contacts: np.ndarray, recorded: np.ndarray, tick: int) -> None:
        if self.ground_truth is None:
            return
        gens = np.repeat(generators, counts)
        lo = np.minimum(gens, contacts)
        hi = np.maximum(gens, contacts)
        gt = self.ground_truth
        for a, b, ok in zip(lo.tolist(), hi.tolist(), recorded.tolist()):
            key = (a, b, tick)
            gt[key] = gt.get(key, False) or ok

    def mark_reciprocal(self, reporters: np.ndarray, counts: np.ndarray,
                        generators: np.ndarray, silent: np.ndarray, tick: int) -> None:
        if self.ground_truth is None:
            return
        reps = np.repeat(reporters, counts)
        lo = np.minimum(reps, generators)
        hi = np.maximum(reps, generators)
        gt = self.ground_truth
        for a, b, ok in zip(lo.tolist(), hi.tolist(), (~silent).tolist()):
            key = (a, b, tick)
            gt[key] = gt.get(key, False) or ok

    def take_snapshot(self, height: int) -> None:
        self.snapshots.append(SnapshotRow(
            height,
            metrics.gini_or_zero(self.state.stake_reward),
            metrics.gini_or_zero(self.state.credit_reward),
            metrics.gini_or_zero(self.state.mined_count),
        ))
        if self.attack_report is not None:
            coll = self.attack_report.colluder_ids
            stake_total = self.state.stake_reward.sum()
            credit_total = self.state.credit_reward.sum()
            self.attack_report.share_series.append((
                height,
                float(self.state.stake_reward[coll].sum() / stake_total) if stake_total > 0 else 0.0,
                float(self.state.credit_reward[coll].sum() / credit_total) if credit_total > 0 else 0.0,
            ))


class FastEngine(_EngineBase):
    """Vectorized engine: per-tick array bookkeeping, no key material."""

    def __init__(self, config: SimulationConfig):
        super().__init__(config)
        self.tuple_bytes = config.tuple_record_bytes
        # fin tick -> [generator ids, responder ids, n_tx, byte count, per-group bytes]
        self.buckets: dict[int, list] = {}

    def _bucket(self, tick: int) -> list:
        bucket = self.buckets.get(tick)
        if bucket is None:
            bucket = [[], [], 0, 0, np.zeros(len(self.group_bytes))]
            self.buckets[tick] = bucket
        return bucket

    def _queue_tx_batch(self, fin_tick: int, generators: np.ndarray,
                        responders: np.ndarray, tx_bytes: np.ndarray,
                        group_of_tx: np.ndarray) -> None:
        bucket = self._bucket(fin_tick)
        bucket[0].append(generators)
        bucket[1].append(responders)
        bucket[2] += len(generators)
        bucket[3] += int(tx_bytes.sum())
        np.add.at(bucket[4], group_of_tx, tx_bytes)

    def _process_scenario(self, plan: ScenarioTickPlan, tick: int) -> None:
        n = len(plan.generators)
        if n == 0:
            return
        witness_signed = _segment_sums(~plan.witness_silent, plan.witness_counts)
        vouched = witness_signed > 0
        vouch_per_contact = np.repeat(vouched, plan.contact_counts)
        contact_valid = ~plan.contact_silent | vouch_per_contact

        self.record_cases(plan.generators, plan.contact_counts,
                          plan.contacts, contact_valid, tick)

        n_valid = _segment_sums(contact_valid, plan.contact_counts)
        any_silent = (_segment_sums(plan.contact_silent, plan.contact_counts)
                      + _segment_sums(plan.witness_silent, plan.witness_counts)) > 0
        discarded = (plan.contact_counts > 0) & (n_valid == 0)
        pooled = ~discarded
        self.discarded_tx += int(discarded.sum())

        tx_bytes = ledger.TX_BASE_BYTES + self.tuple_bytes * (n_valid + plan.witness_counts)
        fin = np.where(any_silent, tick + self.delay_ticks, tick + 1)

        responders = np.concatenate([plan.contacts[~plan.contact_silent],
                                     plan.witnesses[~plan.witness_silent]])
        responder_fin = np.concatenate([
            np.repeat(fin, plan.contact_counts)[~plan.contact_silent],
            np.repeat(fin, plan.witness_counts)[~plan.witness_silent]])

        # responders of discarded transactions are still rewarded, so the
        # responder arrays are filtered by fin tick alone
        for fin_tick in np.unique(fin):
            sel = pooled & (fin == fin_tick)
            self._queue_tx_batch(
                int(fin_tick), plan.generators[sel],
                responders[responder_fin == fin_tick],
                tx_bytes[sel], np.full(int(sel.sum()), plan.scenario))

    def _process_reciprocal(self, plan: ReciprocalTickPlan, tick: int) -> None:
        self.mark_reciprocal(plan.reporters, plan.counts,
                             plan.generators, plan.silent, tick)
        n_valid = _segment_sums(~plan.silent, plan.counts)
        any_silent = _segment_sums(plan.silent, plan.counts) > 0
        discarded = n_valid == 0
        self.discarded_tx += int(discarded.sum())
        tx_bytes = ledger.TX_BASE_BYTES + self.tuple_bytes * n_valid
        fin = np.where(any_silent, tick + self.delay_ticks, tick + 1)
        responders = plan.generators[~plan.silent]
        responder_fin = np.repeat(fin, plan.counts)[~plan.silent]
        group = self.group_labels[plan.reporters]
        for fin_tick in np.unique(fin):
            sel = ~discarded & (fin == fin_tick)
            self._queue_tx_batch(
                int(fin_tick), plan.reporters[sel],
                responders[responder_fin == fin_tick],
                tx_bytes[sel], group[sel])

    def _process_attack(self, plan: AttackTickPlan, tick: int) -> None:
        report = self.attack_report
        strategy = self.config.attack.strategy
        n = len(plan.generators)
        if n == 0:
            return
        if strategy == ATTACK_FAKE_CONTACTS:
            # mutually confirmed; never names honest users
            n_valid = plan.target_counts
            fin = np.full(n, tick + 1)
            responders = plan.targets
            witness_extra = 0
        else:
            report.false_tuples_attempted += len(plan.targets)
            valid = plan.target_silent  # silent target + colluding witness vouch
            report.false_tuples_persisted += int(valid.sum())
            n_valid = _segment_sums(valid, plan.target_counts)
            any_silent = n_valid > 0
            fin = np.where(any_silent, tick + self.delay_ticks, tick + 1)
            responders = np.concatenate([plan.targets[~plan.target_silent],
                                         plan.witness_colluders])
            witness_extra = 1  # the colluding witness tuple stays on chain
        discarded = n_valid == 0
        self.discarded_tx += int(discarded.sum())
        tx_bytes = ledger.TX_BASE_BYTES + self.tuple_bytes * (n_valid + witness_extra)
        group = np.full(n, len(self.group_bytes) - 1)
        if strategy == ATTACK_FAKE_CONTACTS:
            sel = ~discarded
            self._queue_tx_batch(tick + 1, plan.generators[sel], responders,
                                 tx_bytes[sel], group[sel])
        else:
            responder_fin = np.concatenate([
                np.repeat(fin, plan.target_counts)[~plan.target_silent], fin])
            for fin_tick in np.unique(fin):
                sel = ~discarded & (fin == fin_tick)
                self._queue_tx_batch(
                    int(fin_tick), plan.generators[sel],
                    responders[responder_fin == fin_tick],
                    tx_bytes[sel], group[sel])

    def run(self) -> RunResult:
        config = self.config
        # registrations land in the first block
        reg_count = config.n_users
        reg_bytes = reg_count * ledger.REGISTRATION_TX_BYTES

        for tick in range(1, config.n_ticks + 1):
            plans, reciprocal, attack_plan = self.decisions.plan_tick()
            for plan in plans:
                self._process_scenario(plan, tick)
            for rec in reciprocal:
                self._process_reciprocal(rec, tick)
            if attack_plan is not None:
                self._process_attack(attack_plan, tick)

            bucket = self.buckets.pop(tick, None)
            n_tx, n_bytes = 0, ledger.BLOCK_HEADER_BYTES
            if tick == 1:
                n_tx += reg_count
                n_bytes += reg_bytes
            if bucket is not None:
                generators = np.concatenate(bucket[0]) if bucket[0] else np.array([], dtype=np.int64)
                responders = np.concatenate(bucket[1]) if bucket[1] else np.array([], dtype=np.int64)
                self.state.reward_tx_pooled(generators)
                self.state.reward_responses(responders)
                n_tx += bucket[2]
                n_bytes += bucket[3]
                self.group_bytes += bucket[4]
            miner, _reward, _fails = self.state.mine_block(self.consensus_rng, self.rounds)
            self.total_bytes += n_bytes
            self.blocks.append(BlockSummary(tick, self.tick_time(tick), miner, n_tx, n_bytes))
            if tick % config.snapshot_stride == 0 or tick == config.n_ticks:
                self.take_snapshot(tick)

        return RunResult(
            config=config, device_ids=self.device_ids, group_labels=self.group_labels,
            state=self.state, blocks=self.blocks, snapshots=self.snapshots,
            total_bytes=self.total_bytes, sim_hours=config.sim_hours,
            ground_truth=self.ground_truth, discarded_tx=self.discarded_tx,
            attack=self.attack_report, rounds=self.rounds, group_bytes=self.group_bytes,
        )


class FullEngine(_EngineBase):
    """Protocol-object engine: real keys, real payloads, a real chain."""

    def __init__(self, config: SimulationConfig):
        super().__init__(config)
        self.latency_rng = make_stream(config.seed, STREAM_LATENCY)
        self.registry = ledger.KeyRegistry()
        self.pool = ledger.TransactionPool()
        self.chain = ledger.Chain()
        self.accounts: list[protocol.UserAccount] = []
        self.user_rngs: list[np.random.Generator] = []
        self.index_by_device: dict[str, int] = {}
        # fin tick -> list of (generator index, PendingVerification, group, attack flag)
        self.pending: dict[int, list] = {}
        for i in range(config.n_users):
            rng = make_stream(config.seed, STREAM_USER_CRYPTO, i)
            keypair = crypto.generate_keypair(rng)
            account = protocol.UserAccount(self.device_ids[i], keypair)
            self.accounts.append(account)
            self.user_rngs.append(rng)
            self.index_by_device[account.device_id] = i
            self.pool.add(ledger.make_registration_tx(
                account.device_id, keypair.public_key, self.tick_time(0)))
        for account in self.accounts:
            self.registry.register(ledger.make_registration_tx(
                account.device_id, account.keypair.public_key, self.tick_time(0)))

    def _make_tx(self, generator: int, contacts: list[int], witnesses: list[int],
                 ts: int) -> ledger.ContactTransaction:
        secret = crypto.new_secret_message(self.user_rngs[generator])
        return ledger.make_contact_tx(
            self.device_ids[generator], secret,
            [self.device_ids[c] for c in contacts],
            [self.device_ids[w] for w in witnesses],
            ts, self.registry, self.config.tuple_record_bytes)

    def _collect(self, pending: protocol.PendingVerification,
                 response: protocol.Response | None, ts: int) -> None:
        if response is None:
            return
        latency = self.latency_rng.uniform(0, self.config.response_latency_max_s)
        recorded = protocol.collect_response(pending, response, self.registry,
                                             now=int(ts + latency))
        if not recorded:
            raise RuntimeError("honest response failed verification")

    def _process_event(self, generator: int, contacts: list[int], witnesses: list[int],
                       contact_silent: list[bool], witness_silent: list[bool],
                       tick: int, group: int) -> None:
        ts = self.tick_time(tick)
        gen_account = self.accounts[generator]
        for c in contacts:
            gen_account.history.add_contact(self.device_ids[c], ts)
            self.accounts[c].history.add_contact(gen_account.device_id, ts)
        for w in witnesses:
            for c in contacts:
                self.accounts[w].history.add_witnessed(
                    gen_account.device_id, self.device_ids[c], ts)
        if self.ground_truth is not None:
            for c in contacts:
                key = (min(generator, c), max(generator, c), tick)
                self.ground_truth.setdefault(key, False)

        tx = self._make_tx(generator, contacts, witnesses, ts)
        pending = protocol.PendingVerification(tx, deadline=ts + self.config.tvm.delay_d_s)
        for c, silent in zip(contacts, contact_silent):
            if silent:
                continue
            self._collect(pending, protocol.respond_as_contact(
                self.accounts[c], tx, self.config.tvm), ts)
        for w, silent in zip(witnesses, witness_silent):
            if silent:
                continue
            self._collect(pending, protocol.respond_as_witness(
                self.accounts[w], tx, self.config.tvm, self.registry), ts)
        fin_tick = tick + 1 if pending.all_resolved() else tick + self.delay_ticks
        self.pending.setdefault(fin_tick, []).append((generator, pending, group, False))

    def _malicious_response(self, user: int, tx: ledger.ContactTransaction,
                            kind: ledger.TupleListKind) -> protocol.Response:
        """A colluder countersigns the secret regardless of its history."""
        account = self.accounts[user]
        entries = tx.contacts if kind == ledger.TupleListKind.CONTACT else tx.witnesses
        entry = next(e for e in entries if e.recipient_fingerprint == account.fingerprint)
        secret = crypto.decrypt(account.keypair.private_key, entry.payload)
        signature = crypto.sign(account.keypair.private_key, secret)
        return protocol.Response(tx.tx_id, account.fingerprint, kind,
                                 ledger.PayloadState.SIGNED_SECRET, signature)

    def _process_attack(self, plan: AttackTickPlan, tick: int) -> None:
        ts = self.tick_time(tick)
        strategy = self.config.attack.strategy
        offset = 0
        for i, generator in enumerate(plan.generators.tolist()):
            k = int(plan.target_counts[i])
            targets = plan.targets[offset:offset + k].tolist()
            silents = plan.target_silent[offset:offset + k].tolist()
            offset += k
            witnesses = ([int(plan.witness_colluders[i])]
                         if strategy == ATTACK_MALICIOUS_WITNESS else [])
            tx = self._make_tx(generator, targets, witnesses, ts)
            pending = protocol.PendingVerification(tx, deadline=ts + self.config.tvm.delay_d_s)
            if strategy == ATTACK_FAKE_CONTACTS:
                for target in targets:
                    self._collect(pending, self._malicious_response(
                        target, tx, ledger.TupleListKind.CONTACT), ts)
            else:
                self.attack_report.false_tuples_attempted += k
                for target, silent in zip(targets, silents):
                    if silent:
                        continue
                    self._collect(pending, protocol.respond_as_contact(
                        self.accounts[target], tx, self.config.tvm), ts)
                self._collect(pending, self._malicious_response(
                    int(plan.witness_colluders[i]), tx, ledger.TupleListKind.WITNESS), ts)
            fin_tick = tick + 1 if pending.all_resolved() else tick + self.delay_ticks
            self.pending.setdefault(fin_tick, []).append(
                (generator, pending, len(self.group_bytes) - 1, True))

    def _finalize_due(self, tick: int) -> None:
        due = self.pending.pop(tick, None)
        if due is None:
            return
        scan = self.config.tvm.scan_period_s
        pooled_generators: list[int] = []
        responders: list[int] = []
        for generator, pending, group, is_attack in due:
            result = protocol.finalize_transaction(pending)
            for fingerprint in result.signer_fingerprints:
                responders.append(self.index_by_device[
                    self.registry.device_for_fingerprint(fingerprint)])
            if result.tx is None:
                self.discarded_tx += 1
                continue
            if is_attack and self.config.attack.strategy == ATTACK_MALICIOUS_WITNESS:
                self.attack_report.false_tuples_persisted += len(result.tx.contacts)
            if self.ground_truth is not None and not is_attack:
                case_tick = (result.tx.timestamp - SIM_EPOCH) // scan
                for entry in result.tx.contacts:
                    peer = self.index_by_device[
                        self.registry.device_for_fingerprint(entry.recipient_fingerprint)]
                    key = (min(generator, peer), max(generator, peer), case_tick)
                    if key in self.ground_truth:
                        self.ground_truth[key] = True
            self.pool.add(result.tx)
            pooled_generators.append(generator)
            self.group_bytes[group] += ledger.serialized_size(result.tx)
        self.state.reward_tx_pooled(np.array(pooled_generators, dtype=np.int64))
        self.state.reward_responses(np.array(responders, dtype=np.int64))

    def run(self) -> RunResult:
        config = self.config
        for tick in range(1, config.n_ticks + 1):
            plans, reciprocal, attack_plan = self.decisions.plan_tick()
            for plan in plans:
                c_off = w_off = 0
                for i, generator in enumerate(plan.generators.tolist()):
                    kc, kw = int(plan.contact_counts[i]), int(plan.witness_counts[i])
                    self._process_event(
                        generator,
                        plan.contacts[c_off:c_off + kc].tolist(),
                        plan.witnesses[w_off:w_off + kw].tolist(),
                        plan.contact_silent[c_off:c_off + kc].tolist(),
                        plan.witness_silent[w_off:w_off + kw].tolist(),
                        tick, plan.scenario)
                    c_off += kc
                    w_off += kw
            for rec in reciprocal:
                offset = 0
                for i, reporter in enumerate(rec.reporters.tolist()):
                    k = int(rec.counts[i])
                    gens = rec.generators[offset:offset + k].tolist()
                    silents = rec.silent[offset:offset + k].tolist()
                    offset += k
                    self._process_event(reporter, gens, [], silents, [], tick,
                                        int(self.group_labels[reporter]))
            if attack_plan is not None:
                self._process_attack(attack_plan, tick)

            self._finalize_due(tick)
            miner, _reward, _fails = self.state.mine_block(self.consensus_rng, self.rounds)
            block = ledger.append_block(self.chain, self.pool,
                                        self.device_ids[miner], self.tick_time(tick))
            n_bytes = ledger.serialized_size(block)
            self.total_bytes += n_bytes
            self.blocks.append(BlockSummary(
                tick, block.timestamp, miner, len(block.transactions), n_bytes))
            if tick % config.snapshot_stride == 0 or tick == config.n_ticks:
                self.take_snapshot(tick)

        self._drain_pending()
        return RunResult(
            config=config, device_ids=self.device_ids, group_labels=self.group_labels,
            state=self.state, blocks=self.blocks, snapshots=self.snapshots,
            total_bytes=self.total_bytes, sim_hours=config.sim_hours,
            ground_truth=self.ground_truth, discarded_tx=self.discarded_tx,
            attack=self.attack_report, chain=self.chain, rounds=self.rounds,
            group_bytes=self.group_bytes,
        )

    def _drain_pending(self) -> None:
        """Resolve verifications whose deadline falls past the end of the run.

        These transactions never reach a block, earn nothing and are not
        pooled; they are finalized only so that the recorded-case map and
        the false-tuple counter reflect the verification outcome, matching
        the fast engine which fixes outcomes at decision time.
        """
        scan = self.config.tvm.scan_period_s
        for tick in sorted(self.pending):
            for generator, pending, _group, is_attack in self.pending[tick]:
                result = protocol.finalize_transaction(pending)
                if result.tx is None:
                    self.discarded_tx += 1
                    continue
                if is_attack:
                    if self.config.attack.strategy == ATTACK_MALICIOUS_WITNESS:
                        self.attack_report.false_tuples_persisted += len(result.tx.contacts)
                    continue
                if self.ground_truth is None:
                    continue
                case_tick = (result.tx.timestamp - SIM_EPOCH) // scan
                for entry in result.tx.contacts:
                    peer = self.index_by_device[
                        self.registry.device_for_fingerprint(entry.recipient_fingerprint)]
                    key = (min(generator, peer), max(generator, peer), case_tick)
                    if key in self.ground_truth:
                        self.ground_truth[key] = True
        self.pending.clear()

def run_simulation(config: SimulationConfig) -> RunResult:
    if config.engine == ENGINE_FULL:
        return FullEngine(config).run()
    return FastEngine(config).run()
