"""Inequality, robustness and storage-cost analysis.

The Gini coefficient is computed two independent ways (the sorted
pairwise-difference identity as the primary, the trapezoidal area under
the Lorenz curve as the cross-check); tests hold them to 1e-9 of each
other.  The storage estimator reproduces the published byte arithmetic:
truncated-normal expected list lengths (in their closed form or the
arctan upper bound), 46 bytes of fixed transaction fields plus one
217-byte record per tuple, 78-byte block headers, 12 blocks per hour.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

TX_BASE_BYTES = 46
BLOCK_HEADER_BYTES = 78
TUPLE_RECORD_BYTES = 217
BLOCKS_PER_HOUR = 12


def _check_values(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.ndim != 1 or len(values) == 0:
        raise ValueError("expected a non-empty 1-d array of values")
    if (values < 0).any():
        raise ValueError("values must be non-negative")
    if values.sum() == 0:
        raise ValueError("all-zero distribution has undefined shares")
    return values


def lorenz_curve(values) -> np.ndarray:
    """Points (population share, cumulative value share) from (0,0) to (1,1)."""
    values = np.sort(_check_values(values))
    n = len(values)
    shares = np.cumsum(values) / values.sum()
    shares[-1] = 1.0  # guard the endpoint against cumsum rounding
    xs = np.arange(n + 1) / n
    ys = np.concatenate(([0.0], shares))
    return np.column_stack([xs, ys])


def gini(values) -> float:
    """Gini coefficient via the sorted pairwise-difference identity:
    G = sum_i (2i - n - 1) x_(i) / (n^2 mu)."""
    values = np.sort(_check_values(values))
    n = len(values)
    idx = np.arange(1, n + 1)
    return float(((2 * idx - n - 1) * values).sum() / (n * values.sum()))


def gini_lorenz_area(values) -> float:
    """Cross-check of `gini` as the area ratio between the equality line
    and the Lorenz curve (trapezoidal integration)."""
    points = lorenz_curve(values)
    area = np.trapezoid(points[:, 1], points[:, 0])
    return float((0.5 - area) / 0.5)


def gini_or_zero(values) -> float:
    """Snapshot helper: an all-zero distribution reports perfect equality."""
    values = np.asarray(values, dtype=float)
    if len(values) == 0 or values.sum() == 0:
        return 0.0
    return gini(values)


def group_stake_share(balances, labels, n_groups: int | None = None) -> np.ndarray:
    """Each group's fraction of the total balance; fractions sum to 1."""
    balances = np.asarray(balances, dtype=float)
    labels = np.asarray(labels)
    if n_groups is None:
        n_groups = int(labels.max()) + 1
    totals = np.bincount(labels, weights=balances, minlength=n_groups)
    grand = totals.sum()
    if grand <= 0:
        raise ValueError("total balance must be positive")
    return totals / grand


def loss_percentage(ground_truth: dict) -> float:
    """Share of generated contact cases with no valid recorded tuple in
    either direction, as a percentage."""
    if not ground_truth:
        raise ValueError("ground truth is empty")
    recorded = sum(bool(v) for v in ground_truth.values())
    return 100.0 * (1.0 - recorded / len(ground_truth))


def chain_recorded_cases(chain, fingerprint_to_user: dict[bytes, int],
                         device_to_user: dict[str, int],
                         scan_period_s: int, sim_epoch: int) -> set[tuple[int, int, int]]:
    """Cases covered by the valid contact tuples persisted on a chain."""
    from .ledger import ContactTransaction  # local import avoids a cycle

    recorded: set[tuple[int, int, int]] = set()
    for block in chain.blocks:
        for tx in block.transactions:
            if not isinstance(tx, ContactTransaction):
                continue
            generator = device_to_user[tx.generator]
            tick = (tx.timestamp - sim_epoch) // scan_period_s
            for entry in tx.contacts:
                peer = fingerprint_to_user[entry.recipient_fingerprint]
                recorded.add((min(generator, peer), max(generator, peer), tick))
    return recorded


def welch_t_test(samples_a, samples_b) -> tuple[float, float]:
    """Two-sample unequal-variance t statistic and two-sided p-value."""
    a = np.asarray(samples_a, dtype=float)
    b = np.asarray(samples_b, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each sample needs at least two observations")
    va, vb = a.var(ddof=1), b.var(ddof=1)
    mean_gap = a.mean() - b.mean()
    if va == 0 and vb == 0:
        return (0.0, 1.0) if mean_gap == 0 else (math.copysign(math.inf, mean_gap), 0.0)
    se2 = va / len(a) + vb / len(b)
    t = mean_gap / math.sqrt(se2)
    df = se2 ** 2 / (va ** 2 / (len(a) ** 2 * (len(a) - 1))
                     + vb ** 2 / (len(b) ** 2 * (len(b) - 1)))
    p = 2.0 * special.stdtr(df, -abs(t))
    return float(t), float(p)


def _phi(x: float) -> float:
    return math.exp(-x * x / 2.0) / math.sqrt(2.0 * math.pi)


def _cdf(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def expected_truncated_length(mu: float, sigma: float, bound: bool = False) -> float:
    """E[max(X, 0)] for X ~ N(mu, sigma).

    Exact closed form mu*Phi(mu/sigma) + sigma*phi(mu/sigma) by default;
    with ``bound=True`` the arctan upper bound on the tail integral is
    used instead (it reproduces the published byte numbers and equals
    the exact value when mu = 0).
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if not bound:
        return mu * _cdf(mu / sigma) + sigma * _phi(mu / sigma)
    t = mu / (math.sqrt(2.0) * sigma)
    z_bound = math.atan(t) + math.sqrt(math.pi) / 2.0
    return (1.0 / math.sqrt(math.pi)) * (
        sigma / math.sqrt(2.0) * math.exp(-mu * mu / (2.0 * sigma * sigma))
        + mu * z_bound)


@dataclass
class ScenarioStorageRow:
    name: str
    tx_rate: float
    expected_contacts: float
    expected_witnesses: float
    hourly_bytes_bound: int
    hourly_bytes_exact: float


@dataclass
class StorageEstimate:
    header_bytes: int
    blocks_per_hour: int
    header_bytes_per_hour: int
    scenarios: list[ScenarioStorageRow]
    total_hourly_bytes: int
    total_hourly_bytes_exact: float
    kb_per_hour: float
    daily_kb: float


def storage_analytic(scenarios, tuple_size: int = TUPLE_RECORD_BYTES,
                     header_size: int = BLOCK_HEADER_BYTES,
                     blocks_per_h: int = BLOCKS_PER_HOUR,
                     tx_base: int = TX_BASE_BYTES) -> StorageEstimate:
    """Expected hourly chain growth for a set of contact scenarios.

    The bound column evaluates the published arithmetic: expected list
    lengths under the arctan bound, rounded to two decimals, then the
    per-scenario hourly bytes taken as a ceiling (upper bounds).  The
    exact column integrates the truncated normal exactly and skips all
    rounding; empirical runs should land near it, below the bound.
    """
    rows = []
    for sc in scenarios:
        ec_bound = round(expected_truncated_length(sc.contact_mu, sc.contact_sigma, bound=True), 2)
        ew_bound = round(expected_truncated_length(sc.witness_mu, sc.witness_sigma, bound=True), 2)
        ec = expected_truncated_length(sc.contact_mu, sc.contact_sigma)
        ew = expected_truncated_length(sc.witness_mu, sc.witness_sigma)
        hourly_bound = math.ceil(sc.tx_rate * (tx_base + (ec_bound + ew_bound) * tuple_size))
        hourly_exact = sc.tx_rate * (tx_base + (ec + ew) * tuple_size)
        rows.append(ScenarioStorageRow(sc.name, sc.tx_rate, ec_bound, ew_bound,
                                       hourly_bound, hourly_exact))
    header_hourly = blocks_per_h * header_size
    total = header_hourly + sum(r.hourly_bytes_bound for r in rows)
    total_exact = header_hourly + sum(r.hourly_bytes_exact for r in rows)
    kb = round(total / 1024, 2)
    return StorageEstimate(
        header_bytes=header_size,
        blocks_per_hour=blocks_per_h,
        header_bytes_per_hour=header_hourly,
        scenarios=rows,
        total_hourly_bytes=total,
        total_hourly_bytes_exact=total_exact,
        kb_per_hour=kb,
        daily_kb=round(kb * 24, 2),
    )


def storage_empirical(chain, sim_hours: float) -> float:
    """Measured serialized chain bytes per simulated hour."""
    from .ledger import serialized_size

    if sim_hours <= 0:
        raise ValueError("simulated duration must be positive")
    return sum(serialized_size(b) for b in chain.blocks) / sim_hours


@dataclass
class DistributionSnapshot:
    height: int
    values: np.ndarray

    def gini(self) -> float:
        return gini(self.values)
