"""Stake-and-reputation weighted miner delegation plus the reward policies.

Two modes share one machine:

* ``rc_dpos`` -- received vote weight is scaled by the votee's reputation
  correction factor; honest activity earns credit, only mining earns
  stake, and the per-block stake reward shrinks with the miner's
  transaction count.
* ``baseline_dpos`` -- votes are weighted by stake alone and every
  reward (generating, verifying, mining) pays stake; credit never moves.

Vote scores:  G_i = ((RF_i + 1) / 2) * sum_{k votes i} s_k / sum_j s_j
with RF_i = (c_i - min c) / (max c - min c), and RF = 1 for everyone
when all credits are equal.  Mining pays R_i = w * (TF_i + 1) / 2 with
TF_i = 1 - (t_i - min t) / (max t - min t), TF = 1 when all counts are
equal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MODE_RC_DPOS = "rc_dpos"
MODE_BASELINE_DPOS = "baseline_dpos"

BASELINE_TX_STAKE = 1.0
BASELINE_VERIFY_STAKE = 1.0
BASELINE_MINING_STAKE = 5.0


@dataclass
class ConsensusConfig:
    mode: str = MODE_RC_DPOS
    block_period_s: int = 300
    excusable_delay_s: int = 600
    initial_stake: float = 100.0
    initial_credit: float = 100.0
    mining_reward_w: float = 5.0
    miner_failure_penalty: float = 5.0
    candidate_fraction: float = 0.2

    def __post_init__(self) -> None:
        if self.mode not in (MODE_RC_DPOS, MODE_BASELINE_DPOS):
            raise ValueError(f"unknown consensus mode {self.mode!r}")
        for name in ("block_period_s", "excusable_delay_s", "initial_stake",
                     "initial_credit", "mining_reward_w", "miner_failure_penalty",
                     "candidate_fraction"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def _normalized_factors(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    lo, hi = values.min(), values.max()
    if hi == lo:
        return np.ones_like(values)
    return (values - lo) / (hi - lo)


def reputation_factors(credits: np.ndarray) -> np.ndarray:
    """RF for every user; all-equal credits degenerate to RF = 1."""
    return _normalized_factors(credits)


def reputation_factor(c_i: float, credits) -> float:
    credits = np.asarray(credits, dtype=float)
    lo, hi = credits.min(), credits.max()
    if hi == lo:
        return 1.0
    return float((c_i - lo) / (hi - lo))


def transaction_factors(tx_counts: np.ndarray) -> np.ndarray:
    """TF for every user; all-equal counts degenerate to TF = 1."""
    counts = np.asarray(tx_counts, dtype=float)
    lo, hi = counts.min(), counts.max()
    if hi == lo:
        return np.ones_like(counts)
    return 1.0 - (counts - lo) / (hi - lo)


def transaction_factor(t_i: float, tx_counts) -> float:
    counts = np.asarray(tx_counts, dtype=float)
    lo, hi = counts.min(), counts.max()
    if hi == lo:
        return 1.0
    return float(1.0 - (t_i - lo) / (hi - lo))


def mining_reward(tf: float, w: float) -> float:
    return w * (tf + 1.0) / 2.0


def vote_scores(votes: np.ndarray, stakes: np.ndarray, credits: np.ndarray,
                mode: str = MODE_RC_DPOS) -> np.ndarray:
    """Total vote score per user given `votes[k]` = the user voted by k."""
    votes = np.asarray(votes)
    stakes = np.asarray(stakes, dtype=float)
    n = len(stakes)
    if np.any(votes == np.arange(n)):
        raise ValueError("self-votes are not allowed")
    total = stakes.sum()
    if total <= 0:
        raise ValueError("total stake must be positive")
    received = np.bincount(votes, weights=stakes / total, minlength=n)
    if mode == MODE_RC_DPOS:
        factor = (reputation_factors(credits) + 1.0) / 2.0
        return factor * received
    return received


def vote_score(i: int, votes: np.ndarray, stakes: np.ndarray, credits: np.ndarray,
               mode: str = MODE_RC_DPOS) -> float:
    return float(vote_scores(votes, stakes, credits, mode)[i])


def candidate_count(n_users: int, fraction: float = 0.2) -> int:
    return math.ceil(n_users * fraction)


def select_candidates(scores: np.ndarray, device_rank: np.ndarray,
                      fraction: float = 0.2) -> list[int]:
    """Top ceil(N * fraction) users by score, ties broken by ascending
    device id (`device_rank` holds each user's lexicographic rank)."""
    scores = np.asarray(scores, dtype=float)
    order = np.lexsort((device_rank, -scores))
    return [int(i) for i in order[:candidate_count(len(scores), fraction)]]


def pick_miner(candidates: list[int], rng: np.random.Generator) -> int:
    if not candidates:
        raise ValueError("candidate set is empty; a new vote round is required")
    return candidates[int(rng.integers(len(candidates)))]


@dataclass
class VoteRound:
    index: int
    votes: np.ndarray
    scores: np.ndarray
    candidates: list[int]


@dataclass
class ConsensusState:
    """Per-user balances and the candidate-miner machinery.

    Balances are kept as cumulative rewards; the initial endowment enters
    only through vote weighting and the RF normalization.
    """

    n_users: int
    device_rank: np.ndarray
    config: ConsensusConfig
    miner_failure_rate: float = 0.0

    stake_reward: np.ndarray = field(init=False)
    credit_reward: np.ndarray = field(init=False)
    tx_count: np.ndarray = field(init=False)
    mined_count: np.ndarray = field(init=False)
    candidates: list[int] = field(init=False, default_factory=list)
    rounds_run: int = field(init=False, default=0)
    pooled_tx_total: int = field(init=False, default=0)
    responses_total: int = field(init=False, default=0)
    mined_total: int = field(init=False, default=0)
    failures_total: int = field(init=False, default=0)

    def __post_init__(self) -> None:
        self.stake_reward = np.zeros(self.n_users)
        self.credit_reward = np.zeros(self.n_users)
        self.tx_count = np.zeros(self.n_users, dtype=np.int64)
        self.mined_count = np.zeros(self.n_users, dtype=np.int64)

    @property
    def mode(self) -> str:
        return self.config.mode

    def stakes(self) -> np.ndarray:
        return self.config.initial_stake + self.stake_reward

    def credits(self) -> np.ndarray:
        return self.config.initial_credit + self.credit_reward

    def run_vote_round(self, rng: np.random.Generator) -> VoteRound:
        """Random voting: every user votes one uniform other user."""
        n = self.n_users
        votes = rng.integers(0, n - 1, size=n)
        votes = votes + (votes >= np.arange(n))
        scores = vote_scores(votes, self.stakes(), self.credits(), self.mode)
        self.candidates = select_candidates(scores, self.device_rank,
                                            self.config.candidate_fraction)
        self.rounds_run += 1
        return VoteRound(self.rounds_run, votes, scores, list(self.candidates))

    def reward_tx_pooled(self, users: np.ndarray) -> None:
        """Policy for transactions accepted by the shared pool (batched)."""
        if len(users) == 0:
            return
        self.pooled_tx_total += len(users)
        np.add.at(self.tx_count, users, 1)
        if self.mode == MODE_RC_DPOS:
            np.add.at(self.credit_reward, users, 1.0)
        else:
            np.add.at(self.stake_reward, users, BASELINE_TX_STAKE)

    def reward_responses(self, users: np.ndarray) -> None:
        """Policy for signed verification responses (batched)."""
        if len(users) == 0:
            return
        self.responses_total += len(users)
        if self.mode == MODE_RC_DPOS:
            np.add.at(self.credit_reward, users, 1.0)
        else:
            np.add.at(self.stake_reward, users, BASELINE_VERIFY_STAKE)

    def mine_block(self, rng: np.random.Generator,
                   rounds_log: list[VoteRound] | None = None) -> tuple[int, float, int]:
        """Delegate one mining job.  Failed miners lose credit and the job
        is re-delegated; returns (miner, stake reward, failures)."""
        failures = 0
        while True:
            if not self.candidates:
                round_record = self.run_vote_round(rng)
                if rounds_log is not None:
                    rounds_log.append(round_record)
            miner = pick_miner(self.candidates, rng)
            self.candidates.remove(miner)
            if self.miner_failure_rate > 0 and rng.random() < self.miner_failure_rate:
                self.credit_reward[miner] -= self.config.miner_failure_penalty
                self.failures_total += 1
                failures += 1
                continue
            if self.mode == MODE_RC_DPOS:
                tf = transaction_factor(self.tx_count[miner], self.tx_count)
                reward = mining_reward(tf, self.config.mining_reward_w)
                self.credit_reward[miner] += 1.0
            else:
                reward = BASELINE_MINING_STAKE
            self.stake_reward[miner] += reward
            self.mined_count[miner] += 1
            self.mined_total += 1
            return miner, reward, failures


_EVENTS = ("tx_pooled", "tuple_verified", "block_mined", "mining_failed")


def apply_incentive(state: ConsensusState, event: str, user: int,
                    rng: np.random.Generator | None = None) -> None:
    """Single-event reward dispatch; the batched ConsensusState methods are
    the hot path, this is the one-event surface over the same rules."""
    if event not in _EVENTS:
        raise ValueError(f"unknown incentive event {event!r}")
    if event == "tx_pooled":
        state.reward_tx_pooled(np.array([user]))
    elif event == "tuple_verified":
        state.reward_responses(np.array([user]))
    elif event == "block_mined":
        if state.mode == MODE_RC_DPOS:
            tf = transaction_factor(state.tx_count[user], state.tx_count)
            reward = mining_reward(tf, state.config.mining_reward_w)
            state.credit_reward[user] += 1.0
        else:
            reward = BASELINE_MINING_STAKE
        state.stake_reward[user] += reward
        state.mined_count[user] += 1
        state.mined_total += 1
    else:  # mining_failed
        state.credit_reward[user] -= state.config.miner_failure_penalty
        state.failures_total += 1
        if user in state.candidates:
            state.candidates.remove(user)


def baseline_dpos_incentive(state: ConsensusState, event: str, user: int) -> None:
    if state.mode != MODE_BASELINE_DPOS:
        raise ValueError("state is not in baseline mode")
    apply_incentive(state, event, user)
