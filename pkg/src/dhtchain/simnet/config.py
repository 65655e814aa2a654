"""Scenario configuration: a flat ``key = value`` text file.

Blank lines and ``#`` comments are ignored. Lists are comma separated.
``forks`` entries are ``slot:branch_len`` and ``churn`` entries are
``node:leave_slot:rejoin_slot`` where ``node`` is an index into the sorted
node ids.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Union

from ..ledger import ChainParams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LatencyModel:
    dht_hop_delay: float = 0.2
    propagation_delay: float = 2.0
    jitter: float = 0.0

    def __post_init__(self):
        if min(self.dht_hop_delay, self.propagation_delay, self.jitter) < 0:
            raise ConfigError("delays must be nonnegative")


@dataclass(frozen=True)
class Churn:
    node: int
    leave_slot: int
    rejoin_slot: int


@dataclass(frozen=True)
class ForkSpec:
    slot: int
    branch_len: int


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    n_nodes: int = 16
    width: int = 16
    d: int = 8
    f: int = 12
    block_time: float = 15.0
    blocks: int = 100
    replication: int = 3
    storers: int = 0  # 0 means every node stores
    kb: int = 8
    accounts: int = 200
    initial_balance: int = 1_000_000
    max_amount: int = 1000
    tx_rate: float = 10.0  # mean transactions per slot
    elements_min: int = 2
    elements_max: int = 2
    max_txs: int = 90
    dht_hop_delay: float = 0.2
    propagation_delay: float = 2.0
    jitter: float = 0.0
    fork_prob: float = 0.0
    max_branch: int = 1
    forks: tuple[ForkSpec, ...] = ()
    churn: tuple[Churn, ...] = ()
    trust_anchor: str = "peer"
    oracle_check: bool = True
    base_tx_bytes: int = 200
    bytes_per_element: int = 500

    def __post_init__(self):
        try:
            self.chain_params
            self.latency
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.n_nodes < 2:
            raise ConfigError("need at least 2 nodes")
        if not 3 <= self.width <= 62:
            raise ConfigError("width must be in [3, 62] for simulation")
        if self.n_nodes > (1 << self.width) or self.accounts > (1 << self.width):
            raise ConfigError("key space too small")
        if self.blocks < 0 or self.replication < 1 or self.kb < 1 or self.max_txs < 0:
            raise ConfigError("blocks, replication, kb and max_txs out of range")
        if not 0 <= self.storers <= self.n_nodes:
            raise ConfigError("storers out of range")
        if not 2 <= self.elements_min <= self.elements_max:
            raise ConfigError("need 2 <= elements_min <= elements_max")
        if self.elements_max > self.accounts:
            raise ConfigError("elements_max exceeds accounts")
        if self.tx_rate < 0 or not 0 <= self.fork_prob <= 1:
            raise ConfigError("tx_rate or fork_prob out of range")
        if not 1 <= self.max_branch <= self.f:
            raise ConfigError("max_branch must be in [1, f]")
        for fk in self.forks:
            if not 1 <= fk.branch_len <= self.f:
                raise ConfigError(f"fork branch length {fk.branch_len} exceeds f={self.f}")
            if fk.slot < 1:
                raise ConfigError("fork slot must be positive")
        for c in self.churn:
            if not 0 <= c.node < self.n_nodes:
                raise ConfigError(f"churn node {c.node} out of range")
            if not 1 <= c.leave_slot < c.rejoin_slot:
                raise ConfigError("churn needs 1 <= leave_slot < rejoin_slot")
            if c.rejoin_slot < self.d + self.f:
                raise ConfigError("rejoin must happen once a full window exists")
        if self.trust_anchor not in ("peer", "checkpoint"):
            raise ConfigError("trust_anchor must be 'peer' or 'checkpoint'")

    @property
    def chain_params(self) -> ChainParams:
        return ChainParams(self.d, self.f, self.block_time, self.width, 20)

    @property
    def latency(self) -> LatencyModel:
        return LatencyModel(self.dht_hop_delay, self.propagation_delay, self.jitter)

    def with_overrides(self, **kw) -> "ScenarioConfig":
        return replace(self, **kw)


def _parse_value(name: str, kind, text: str):
    text = text.strip()
    if kind is bool or kind == "bool":
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: not a boolean: {text!r}")
    try:
        if kind in (int, "int"):
            return int(text)
        if kind in (float, "float"):
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from exc
    if name == "forks":
        return tuple(ForkSpec(*_ints(name, item, 2)) for item in _items(text))
    if name == "churn":
        return tuple(Churn(*_ints(name, item, 3)) for item in _items(text))
    return text


def _items(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _ints(name: str, item: str, n: int) -> list[int]:
    parts = item.split(":")
    if len(parts) != n:
        raise ConfigError(f"{name}: expected {n} ':'-separated integers, got {item!r}")
    try:
        return [int(p) for p in parts]
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def parse_config(text: str) -> ScenarioConfig:
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#",),
                                       inline_comment_prefixes=("#",))
    try:
        parser.read_string("[scenario]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    known = {fl.name: fl.type for fl in fields(ScenarioConfig)}
    kw = {}
    for key, value in parser["scenario"].items():
        if key not in known:
            raise ConfigError(f"unknown key {key!r}")
        kw[key] = _parse_value(key, known[key], value)
    try:
        return ScenarioConfig(**kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: Union[str, Path]) -> ScenarioConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_config(text)


def format_config(cfg: ScenarioConfig) -> str:
    """Inverse of ``parse_config``; one ``key = value`` line per field."""
    lines = []
    for fl in fields(cfg):
        v = getattr(cfg, fl.name)
        if fl.name == "forks":
            v = ",".join(f"{x.slot}:{x.branch_len}" for x in v)
        elif fl.name == "churn":
            v = ",".join(f"{c.node}:{c.leave_slot}:{c.rejoin_slot}" for c in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{fl.name} = {v}")
    return "\n".join(lines) + "\n"
