"""Run configuration: contact scenarios, simulation settings, attack setup,
and the flat ``key = value`` config-file format.

Precedence when assembling a run config: CLI flags > environment
variables (``TRACECHAIN_`` prefix, dots spelled ``__``) > config file >
built-in defaults.  The built-in defaults are the published experiment
settings: three density scenarios of 200 users each, 5-minute scan and
block cadence, 60-minute response delay, stake and credit starting at
100 units.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np

from .consensus import MODE_BASELINE_DPOS, MODE_RC_DPOS, ConsensusConfig
from .protocol import TvmConfig

RATE_PER_USER = "per_user"
RATE_PER_SCENARIO = "per_scenario"

ATTACK_FAKE_CONTACTS = "fake_contacts"
ATTACK_MALICIOUS_WITNESS = "malicious_witness"

ENGINE_FAST = "fast"
ENGINE_FULL = "full"

MAX_TX_PER_HOUR = 12

ENV_PREFIX = "TRACECHAIN_"

# Simulated wall-clock origin for 32-bit unix timestamps.
SIM_EPOCH = 1_600_000_000


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    name: str
    contact_mu: float
    contact_sigma: float
    witness_mu: float
    witness_sigma: float
    tx_rate: float  # contact cases per hour
    population: int

    def __post_init__(self) -> None:
        if self.tx_rate <= 0:
            raise ConfigError(f"scenario {self.name}: tx_rate must be positive")
        if self.contact_sigma <= 0 or self.witness_sigma <= 0:
            raise ConfigError(f"scenario {self.name}: sigma must be positive")
        if self.population < 2:
            raise ConfigError(f"scenario {self.name}: population must be >= 2")


def default_scenarios(population: int = 200) -> list[ScenarioConfig]:
    return [
        ScenarioConfig("sparse", 0.0, 2.0, 0.0, 1.0, 1.0, population),
        ScenarioConfig("medium", 2.0, 4.0, 2.0, 2.0, 3.0, population),
        ScenarioConfig("crowded", 5.0, 2.0, 7.0, 2.0, 12.0, population),
    ]


@dataclass
class AttackConfig:
    strategy: str = ATTACK_FAKE_CONTACTS
    colluder_count: int = 10
    fake_tx_rate: float = 12.0

    def __post_init__(self) -> None:
        if self.strategy not in (ATTACK_FAKE_CONTACTS, ATTACK_MALICIOUS_WITNESS):
            raise ConfigError(f"unknown attack strategy {self.strategy!r}")
        if self.colluder_count < 2:
            raise ConfigError("at least two colluders are required")
        if not 0 < self.fake_tx_rate <= MAX_TX_PER_HOUR:
            raise ConfigError(f"fake_tx_rate must lie in (0, {MAX_TX_PER_HOUR}]")


@dataclass
class SimulationConfig:
    seed: int = 0
    hours: float | None = None
    height: int | None = None
    failure_rate: float = 0.0
    witness_enabled: bool = True
    bilateral_reporting: bool = False
    rate_scope: str = RATE_PER_USER
    mode: str = "bdct"  # bdct | dpos
    engine: str = ENGINE_FAST
    response_latency_max_s: int = 60
    miner_failure_rate: float = 0.0
    track_cases: bool = False
    snapshot_stride: int = 100
    tuple_record_bytes: int = 217
    scenarios: list[ScenarioConfig] = field(default_factory=default_scenarios)
    attack: AttackConfig | None = None
    tvm: TvmConfig = field(default_factory=TvmConfig)
    consensus: ConsensusConfig = field(default_factory=ConsensusConfig)

    def __post_init__(self) -> None:
        if not 0.0 <= self.failure_rate <= 1.0:
            raise ConfigError("failure_rate must lie in [0, 1]")
        if not 0.0 <= self.miner_failure_rate <= 1.0:
            raise ConfigError("miner_failure_rate must lie in [0, 1]")
        if (self.hours is None) == (self.height is None):
            raise ConfigError("exactly one of hours / height must be set")
        if self.hours is not None and self.hours <= 0:
            raise ConfigError("hours must be positive")
        if self.height is not None and self.height <= 0:
            raise ConfigError("height must be positive")
        if self.rate_scope not in (RATE_PER_USER, RATE_PER_SCENARIO):
            raise ConfigError(f"unknown rate_scope {self.rate_scope!r}")
        if self.mode not in ("bdct", "dpos"):
            raise ConfigError(f"unknown mode {self.mode!r}; expected bdct or dpos")
        if self.engine not in (ENGINE_FAST, ENGINE_FULL):
            raise ConfigError(f"unknown engine {self.engine!r}")
        if not self.response_latency_max_s < self.tvm.delay_d_s:
            raise ConfigError("response latency bound must be below the response delay")
        if self.snapshot_stride < 1:
            raise ConfigError("snapshot_stride must be >= 1")
        if self.consensus.block_period_s != self.tvm.scan_period_s:
            raise ConfigError("block period and scan period must agree")
        consensus_mode = MODE_RC_DPOS if self.mode == "bdct" else MODE_BASELINE_DPOS
        if self.consensus.mode != consensus_mode:
            self.consensus = replace(self.consensus, mode=consensus_mode)
        if self.rate_scope == RATE_PER_USER:
            for sc in self.scenarios:
                if sc.tx_rate > MAX_TX_PER_HOUR:
                    raise ConfigError(
                        f"scenario {sc.name}: per-user rate above the "
                        f"{MAX_TX_PER_HOUR}/hr scan-frequency cap")

    @property
    def n_users(self) -> int:
        return sum(sc.population for sc in self.scenarios)

    @property
    def n_ticks(self) -> int:
        if self.height is not None:
            return self.height
        ticks_per_hour = 3600 / self.tvm.scan_period_s
        return max(1, round(self.hours * ticks_per_hour))

    @property
    def sim_hours(self) -> float:
        return self.n_ticks * self.tvm.scan_period_s / 3600.0

    def per_user_tick_probability(self, scenario: ScenarioConfig) -> float:
        """Probability that one user emits a contact event at one scan tick."""
        rate = scenario.tx_rate
        if self.rate_scope == RATE_PER_SCENARIO:
            rate = rate / scenario.population
        return min(1.0, rate * self.tvm.scan_period_s / 3600.0)


def sample_list_length(mu: float, sigma: float, rng: np.random.Generator) -> int:
    """Draw from N(mu, sigma), clamp below zero, round to nearest integer."""
    return int(np.rint(max(rng.normal(mu, sigma), 0.0)))


_SIM_KEYS: dict[str, type] = {
    "seed": int,
    "hours": float,
    "height": int,
    "failure_rate": float,
    "witness_enabled": bool,
    "bilateral_reporting": bool,
    "rate_scope": str,
    "mode": str,
    "engine": str,
    "response_latency_max_s": int,
    "miner_failure_rate": float,
    "track_cases": bool,
    "snapshot_stride": int,
    "tuple_record_bytes": int,
}

_TVM_KEYS = {"match_window_s": int, "delay_d_s": int, "scan_period_s": int}

_CONSENSUS_KEYS = {
    "block_period_s": int,
    "excusable_delay_s": int,
    "initial_stake": float,
    "initial_credit": float,
    "mining_reward_w": float,
    "miner_failure_penalty": float,
    "candidate_fraction": float,
}

_SCENARIO_KEYS = {
    "contact_mu": float,
    "contact_sigma": float,
    "witness_mu": float,
    "witness_sigma": float,
    "tx_rate": float,
    "population": int,
}

_ATTACK_KEYS = {"strategy": str, "colluder_count": int, "fake_tx_rate": float}


def _coerce(key: str, raw: str, kind: type):
    if kind is bool:
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"key {key!r}: expected a boolean, got {raw!r}")
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"key {key!r}: expected {kind.__name__}, got {raw!r}") from None


def _read_pairs(path: str) -> dict[str, str]:
    pairs: dict[str, str] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            pairs[key] = value
    return pairs


def _env_pairs() -> dict[str, str]:
    pairs = {}
    for name, value in os.environ.items():
        if name.startswith(ENV_PREFIX):
            key = name[len(ENV_PREFIX):].lower().replace("__", ".")
            pairs[key] = value
    return pairs


def build_config(file_path: str | None = None,
                 overrides: dict[str, str] | None = None,
                 defaults: dict[str, str] | None = None) -> SimulationConfig:
    """Assemble a SimulationConfig from weak defaults, a config file,
    environment variables and explicit overrides (in increasing precedence)."""
    pairs: dict[str, str] = {}
    if defaults:
        pairs.update({k: str(v) for k, v in defaults.items()})
    if file_path is not None:
        file_pairs = _read_pairs(file_path)
        if {"hours", "height"} & set(file_pairs):
            pairs.pop("hours", None)
            pairs.pop("height", None)
        pairs.update(file_pairs)
    env_pairs = _env_pairs()
    if {"hours", "height"} & set(env_pairs):
        pairs.pop("hours", None)
        pairs.pop("height", None)
    pairs.update(env_pairs)
    if overrides:
        if {"hours", "height"} & set(overrides):
            pairs.pop("hours", None)
            pairs.pop("height", None)
        pairs.update({k: str(v) for k, v in overrides.items()})

    sim_kwargs: dict = {}
    tvm_kwargs: dict = {}
    cons_kwargs: dict = {}
    scenario_over: dict[str, dict] = {}
    attack_kwargs: dict = {}
    active_scenarios: list[str] | None = None

    for key, raw in pairs.items():
        if key in _SIM_KEYS:
            sim_kwargs[key] = _coerce(key, raw, _SIM_KEYS[key])
        elif key in _TVM_KEYS:
            tvm_kwargs[key] = _coerce(key, raw, _TVM_KEYS[key])
        elif key in _CONSENSUS_KEYS:
            cons_kwargs[key] = _coerce(key, raw, _CONSENSUS_KEYS[key])
        elif key == "scenarios":
            active_scenarios = [name.strip() for name in raw.split(",") if name.strip()]
        elif key.startswith("scenario."):
            parts = key.split(".")
            if len(parts) != 3 or parts[2] not in _SCENARIO_KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            scenario_over.setdefault(parts[1], {})[parts[2]] = _coerce(
                key, raw, _SCENARIO_KEYS[parts[2]])
        elif key.startswith("attack."):
            sub = key.split(".", 1)[1]
            if sub not in _ATTACK_KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            attack_kwargs[sub] = _coerce(key, raw, _ATTACK_KEYS[sub])
        else:
            raise ConfigError(f"unknown config key {key!r}")

    scenarios = {sc.name: sc for sc in default_scenarios()}
    for name, fields in scenario_over.items():
        base = scenarios.get(name)
        if base is None:
            missing = set(_SCENARIO_KEYS) - set(fields)
            if missing:
                raise ConfigError(
                    f"new scenario {name!r} is missing keys: {sorted(missing)}")
            scenarios[name] = ScenarioConfig(name=name, **fields)
        else:
            scenarios[name] = replace(base, **fields)
    if active_scenarios is not None:
        unknown = [n for n in active_scenarios if n not in scenarios]
        if unknown:
            raise ConfigError(f"unknown scenarios requested: {unknown}")
        scenario_list = [scenarios[n] for n in active_scenarios]
    else:
        order = [sc.name for sc in default_scenarios()]
        scenario_list = [scenarios[n] for n in order if n in scenarios]
        scenario_list += [sc for n, sc in scenarios.items() if n not in order]

    if "hours" in sim_kwargs and "height" in sim_kwargs:
        raise ConfigError("set either hours or height, not both")
    if "hours" not in sim_kwargs and "height" not in sim_kwargs:
        sim_kwargs["height"] = 10_000

    return SimulationConfig(
        scenarios=scenario_list,
        attack=AttackConfig(**attack_kwargs) if attack_kwargs else None,
        tvm=TvmConfig(**tvm_kwargs),
        consensus=ConsensusConfig(**cons_kwargs),
        **sim_kwargs,
    )
