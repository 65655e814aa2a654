"""The discrete-event loop.

Virtual time is in seconds; slot ``s`` fires at ``s * block_time``. Events
are ordered by ``(time, sequence number)`` so equal-time events run in the
order they were scheduled. All randomness comes from seeded streams.
"""

from __future__ import annotations

import heapq
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Optional

from .. import pads
from ..dht import LookupFailed, Overlay, build_routing_tables
from ..ledger import (
    DEFAULT_SCHEME, Block, Transfer, encode_balance, encode_block,
    encode_transaction, genesis_block, new_transaction,
)
from ..node import ProposerSchedule, SimNode, SyncError, Verdict, sync_from_peer
from ..sizing import modeled_block_bytes, modeled_tx_bytes
from .config import ScenarioConfig, format_config
from .metrics import Metrics
from .trace import TraceWriter


@dataclass
class TxRecord:
    origin: int
    created: float
    keys: tuple[int, ...]
    amount: int
    served: dict[int, float] = field(default_factory=dict)
    witnesses: dict = field(default_factory=dict)
    hops: int = 0
    ready: Optional[float] = None
    tx_id: Optional[bytes] = None
    encoded_bytes: int = 0
    outcome: str = "pending"
    decided_at: Optional[float] = None


@dataclass
class OracleEntry:
    """Full state after a block, replayed independently of the nodes."""

    state: dict[int, int]
    tree: pads.Pads
    index: int
    parent: bytes


def oracle_step(cfg: pads.TreeConfig, parent: OracleEntry, block: Block) -> tuple[OracleEntry, bool]:
    """Apply ``block``'s transfers to a full state; the flag is False if any transfer fails."""
    state = dict(parent.state)
    ok = True
    touched: dict[int, int] = {}
    for tx in block.transactions:
        op = tx.op
        if not isinstance(op, Transfer):
            raise ValueError("oracle only replays transfers")
        src, dst = state.get(op.sender, 0), state.get(op.recipient, 0)
        if src < op.amount:
            ok = False
            continue
        state[op.sender] = src - op.amount
        state[op.recipient] = dst + op.amount
        touched[op.sender] = state[op.sender]
        touched[op.recipient] = state[op.recipient]
    state = {k: v for k, v in state.items() if v}
    writes = {k: encode_balance(v) for k, v in touched.items()}
    tree = pads.apply_writes(parent.tree, writes)
    return OracleEntry(state, tree, block.index, block.digest), ok


@dataclass
class SimResult:
    metrics: Metrics
    trace: list[str]
    nodes: dict[int, SimNode]
    records: list[TxRecord]
    blocks: dict[bytes, Block]
    oracle: dict[bytes, OracleEntry]

    @property
    def trace_digest(self) -> str:
        return self.metrics.values["trace_digest"]

    def trace_text(self) -> str:
        return "\n".join(self.trace) + "\n"


class Simulation:
    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.params = cfg.chain_params
        self.tree = self.params.tree
        w = cfg.width
        setup = random.Random(cfg.seed * 7 + 1)
        self.rng_tx = random.Random(cfg.seed * 7 + 2)
        self.rng_net = random.Random(cfg.seed * 7 + 3)
        self.rng_fork = random.Random(cfg.seed * 7 + 4)
        self.ids = sorted(setup.sample(range(1 << w), cfg.n_nodes))
        self.accounts = sorted(setup.sample(range(1 << w), cfg.accounts))
        if cfg.storers:
            storers = sorted(setup.sample(self.ids, cfg.storers))
        else:
            storers = list(self.ids)
        tables = build_routing_tables(self.ids, w, cfg.kb, random.Random(cfg.seed * 7 + 5))
        self.overlay = Overlay(w, cfg.replication, tables, tuple(storers))
        alloc = {a: cfg.initial_balance for a in self.accounts}
        self.genesis = genesis_block(self.tree, alloc, DEFAULT_SCHEME)
        self.nodes: dict[int, SimNode] = {}
        for i in self.ids:
            region = self.overlay.region(i) if i in storers else None
            self.nodes[i] = SimNode(i, self.params, self.genesis, DEFAULT_SCHEME, region,
                                    max_txs=cfg.max_txs)
        self.label = {i: f"n{k:02d}" for k, i in enumerate(self.ids)}
        self.schedule = ProposerSchedule(tuple(self.ids), cfg.seed)
        self.offline: set[int] = self.overlay.offline
        self.heap: list = []
        self.seq = 0
        self.now = 0.0
        self.nonce = 0
        self.trace = TraceWriter()
        self.records: list[TxRecord] = []
        self.by_id: dict[bytes, TxRecord] = {}
        self.blocks: dict[bytes, Block] = {self.genesis.digest: self.genesis}
        full = pads.build_full({a: encode_balance(v) for a, v in alloc.items()}, self.tree)
        self.oracle = {self.genesis.digest: OracleEntry(dict(alloc), full, 0, self.genesis.parent)}
        self.total = cfg.initial_balance * cfg.accounts
        self.partition: Optional[tuple[frozenset, frozenset]] = None
        self.held: list[tuple[Block, int]] = []
        self.pivot_seen: dict[int, dict[int, bytes]] = {i: {} for i in self.ids}
        self.rejoined: dict[int, int] = {}
        self.churned: set[int] = {self.ids[c.node] for c in cfg.churn}
        self.c = Counter()
        self.hops: list[int] = []
        self.block_bytes: list[int] = []
        self.block_modeled: list[int] = []
        self.tau_leaves: list[int] = []
        self.sync_reports: list[tuple[int, int, int]] = []
        self.forks_done: list[tuple[int, int]] = []

    # -- event plumbing --

    def at(self, time: float, fn: Callable, *args) -> None:
        heapq.heappush(self.heap, (time, self.seq, fn, args))
        self.seq += 1

    def online_ids(self) -> list[int]:
        return [i for i in self.ids if i not in self.offline]

    def delay(self) -> float:
        lat = self.cfg.latency
        return lat.propagation_delay + (self.rng_net.uniform(0, lat.jitter) if lat.jitter else 0.0)

    def log(self, node: Optional[int], event: str, size: int = 0, detail: str = "") -> None:
        self.trace.add(self.now, self.label[node] if node is not None else "-", event, size, detail)

    # -- setup --

    def schedule_all(self) -> None:
        cfg = self.cfg
        T = cfg.block_time
        self.log(None, "config", 0, format_config(cfg).strip().replace("\n", ";"))
        data = encode_block(self.tree, self.genesis)
        self.log(None, "genesis", len(data), data.hex())
        for s in range(1, cfg.blocks + 1):
            self.at(s * T, self.on_slot, s)
        if cfg.tx_rate > 0:
            rate = cfg.tx_rate / T
            t = self.rng_tx.expovariate(rate)
            horizon = cfg.blocks * T
            while t < horizon:
                self.at(t, self.on_tx_arrival)
                t += self.rng_tx.expovariate(rate)
        for c in cfg.churn:
            node = self.ids[c.node]
            self.at(c.leave_slot * T + T / 2, self.on_leave, node)
            self.at(c.rejoin_slot * T + T / 2, self.on_rejoin, node)

    def run(self) -> SimResult:
        self.schedule_all()
        while self.heap:
            self.now, _, fn, args = heapq.heappop(self.heap)
            fn(*args)
        self.final_checks()
        return self.result()

    # -- transactions --

    def on_tx_arrival(self) -> None:
        cfg = self.cfg
        online = self.online_ids()
        origin = self.rng_tx.choice(online)
        k = self.rng_tx.randint(cfg.elements_min, cfg.elements_max)
        keys = self.rng_tx.sample(self.accounts, k)
        amount = self.rng_tx.randint(0, cfg.max_amount)
        rec = TxRecord(origin, self.now, tuple(keys), amount)
        self.records.append(rec)
        self.c["txs_requested"] += 1
        queries = []
        try:
            for key in sorted(keys):
                queries.append((key, *self.overlay.lookup(origin, key)))
        except LookupFailed:
            rec.outcome = "lookup_failed"
            self.c["lookup_failures"] += 1
            return
        rec.hops = max(h for _, _, h in queries)
        h = cfg.dht_hop_delay
        for key, auth, hops in queries:
            self.hops.append(hops)
            self.at(self.now + hops * h, self.on_serve, rec, key, auth)

    def on_serve(self, rec: TxRecord, key: int, auth: int) -> None:
        if rec.outcome != "pending":
            return
        node = self.nodes[auth]
        if auth in self.offline or node.storage is None:
            rec.outcome = "lookup_failed"
            self.c["lookup_failures"] += 1
            return
        rec.witnesses[key] = node.witness(key)
        rec.served[key] = self.now
        if len(rec.witnesses) == len(rec.keys):
            self.at(rec.created + 2 * rec.hops * self.cfg.dht_hop_delay, self.on_tx_ready, rec)

    def on_tx_ready(self, rec: TxRecord) -> None:
        if rec.origin in self.offline:
            rec.outcome = "origin_offline"
            return
        sender, recipient, *extra = rec.keys
        op = Transfer(sender, recipient, rec.amount, tuple(extra))
        self.nonce += 1
        wits = [rec.witnesses[k] for k in sorted(rec.witnesses)]
        tx = new_transaction(self.tree, op, self.nonce, DEFAULT_SCHEME, wits)
        rec.tx_id = tx.tx_id
        rec.ready = self.now
        rec.encoded_bytes = len(encode_transaction(self.tree, tx))
        self.by_id[tx.tx_id] = rec
        self.c["txs_created"] += 1
        pivots = ",".join(str(w.pivot_index) for w in wits)
        self.log(rec.origin, "tx", rec.encoded_bytes,
                 f"id={tx.tx_id.hex()[:16]};elements={len(rec.keys)};hops={rec.hops};pivots={pivots}")
        self.nodes[rec.origin].receive_transaction(tx)
        for i in self.online_ids():
            if i != rec.origin:
                self.at(self.now + self.delay(), self.on_tx_delivery, i, tx)

    def on_tx_delivery(self, node: int, tx) -> None:
        if node not in self.offline:
            self.nodes[node].receive_transaction(tx)

    # -- blocks --

    def group_of(self, node: int) -> Optional[frozenset]:
        if self.partition is None:
            return None
        return self.partition[0] if node in self.partition[0] else self.partition[1]

    def on_slot(self, slot: int) -> None:
        self.checks()
        if self.partition is None:
            branch = self.fork_length(slot)
            if branch:
                self.start_partition(slot, branch)
        online = self.online_ids()
        if not online:
            return
        if self.partition is None:
            proposers = [self.schedule.proposer(slot, online)]
        else:
            proposers = []
            for group in self.partition:
                members = [i for i in online if i in group]
                if members:
                    proposers.append(self.schedule.proposer(slot, members))
        for p in proposers:
            self.mine(p)

    def fork_length(self, slot: int) -> int:
        for fk in self.cfg.forks:
            if fk.slot == slot:
                return fk.branch_len
        if self.cfg.fork_prob and self.rng_fork.random() < self.cfg.fork_prob:
            return self.rng_fork.randint(1, self.cfg.max_branch)
        return 0

    def start_partition(self, slot: int, branch_len: int) -> None:
        a = frozenset(self.ids[0::2])
        b = frozenset(self.ids[1::2])
        self.partition = (a, b)
        self.forks_done.append((slot, branch_len))
        self.log(None, "fork", branch_len, f"slot={slot};branch_len={branch_len}")
        T = self.cfg.block_time
        self.at((slot + branch_len - 1) * T + T / 2, self.heal)

    def heal(self) -> None:
        held, self.held = self.held, []
        part = self.partition
        self.partition = None
        self.log(None, "heal", len(held), "")
        for blk, origin in held:
            origin_group = part[0] if origin in part[0] else part[1]
            for i in self.online_ids():
                if i not in origin_group:
                    self.at(self.now + self.delay(), self.on_block_delivery, i, blk)

    def modeled(self, blk: Block) -> int:
        # each transaction carries its own copy of every element it touches
        n_elements = sum(len(tx.involved) for tx in blk.transactions)
        return modeled_block_bytes(len(blk.transactions), n_elements, self.cfg.base_tx_bytes,
                                   self.cfg.bytes_per_element)

    def mine(self, proposer: int) -> None:
        node = self.nodes[proposer]
        asm = node.mine()
        blk = asm.block
        for tx in asm.stale:
            self.decide(tx.tx_id, "stale")
        for tx in asm.bad_witness:
            self.decide(tx.tx_id, "bad_witness")
        for tx, _ in asm.invalid:
            self.decide(tx.tx_id, "invalid")
        for tx in asm.included:
            self.decide(tx.tx_id, "included")
        self.c["blocks_mined"] += 1
        self.c["stale_witness_rejections"] += len(asm.stale)
        parent = self.oracle[blk.parent]
        entry, ok = oracle_step(self.tree, parent, blk)
        if not ok:
            self.c["oracle_invalid_blocks"] += 1
        self.oracle[blk.digest] = entry
        self.blocks[blk.digest] = blk
        if sum(entry.state.values()) != self.total:
            self.c["conservation_violations"] += 1
        data = encode_block(self.tree, blk)
        self.block_bytes.append(len(data))
        self.block_modeled.append(self.modeled(blk))
        self.tau_leaves.append(len(blk.involved))
        self.log(proposer, "block", len(data),
                 f"index={blk.index};digest={blk.digest.hex()};oracle={entry.tree.root.hex()};"
                 f"data={data.hex()}")
        self.after_change(proposer)
        group = self.group_of(proposer)
        if group is not None:
            self.held.append((blk, proposer))
        for i in self.online_ids():
            if i != proposer and (group is None or i in group):
                self.at(self.now + self.delay(), self.on_block_delivery, i, blk)

    def decide(self, tx_id: bytes, outcome: str) -> None:
        rec = self.by_id.get(tx_id)
        if rec is None:
            return
        if outcome == "included" and rec.outcome == "included":
            return
        rec.outcome = outcome
        rec.decided_at = self.now
        if outcome == "stale":
            age = self.now - min(rec.served.values())
            if age < (self.cfg.d - 1) * self.cfg.block_time:
                self.c["stale_bound_violations"] += 1

    def on_block_delivery(self, node_id: int, blk: Block) -> None:
        if node_id in self.offline:
            return
        node = self.nodes[node_id]
        verdict = node.on_block(blk)
        self.log(node_id, "verdict", 0, f"{blk.index}:{blk.digest.hex()[:16]}:{verdict.value}")
        if verdict is Verdict.REJECTED:
            self.c["rejected_blocks"] += 1
        self.after_change(node_id)
        if node.needs_sync:
            self.at(self.now, self.resync, node_id, "catch_up")

    def after_change(self, node_id: int) -> None:
        node = self.nodes[node_id]
        if not self.cfg.oracle_check:
            return
        head = node.chain.head
        entry = self.oracle.get(head.digest)
        if entry is None or node.chain.post_state(head.index).root != entry.tree.root:
            self.c["oracle_root_mismatches"] += 1

    # -- churn and sync --

    def on_leave(self, node_id: int) -> None:
        self.offline.add(node_id)
        self.nodes[node_id].drop_state()
        self.pivot_seen[node_id] = {}
        self.log(node_id, "leave", 0, "")

    def on_rejoin(self, node_id: int) -> None:
        self.offline.discard(node_id)
        self.log(node_id, "rejoin", 0, "")
        self.resync(node_id, "rejoin")

    def resync(self, node_id: int, reason: str) -> None:
        node = self.nodes[node_id]
        if not node.needs_sync or node_id in self.offline:
            return
        peers = [self.nodes[i] for i in self.online_ids() if i != node_id
                 and not self.nodes[i].needs_sync and len(self.nodes[i].chain) == self.params.window]
        if not peers:
            self.c["sync_failures"] += 1
            return
        peer = max(peers, key=lambda n: (n.chain.head_index, -n.id))
        trusted = None
        if self.cfg.trust_anchor == "checkpoint":
            start = peer.chain.window_start
            votes = Counter(self.nodes[i].chain.block(start).digest for i in self.online_ids()
                            if self.nodes[i].chain.has_index(start) and i != node_id)
            trusted = min(votes, key=lambda d: (-votes[d], d))
        replicas = [self.nodes[i].storage for i in self.online_ids()
                    if i != node_id and self.nodes[i].storage is not None]
        try:
            report = sync_from_peer(node, peer, trusted, replicas)
        except SyncError as exc:
            self.c["sync_failures"] += 1
            self.log(node_id, "sync_failed", 0, str(exc))
            return
        modeled = sum(self.modeled(b) for b in report.blocks)
        self.sync_reports.append((report.n_blocks, report.encoded_bytes, modeled))
        self.rejoined[node_id] = len(node.verdicts)
        self.pivot_seen[node_id] = {}
        self.log(node_id, "sync", report.encoded_bytes,
                 f"reason={reason};peer={self.label[peer.id]};blocks={report.n_blocks};modeled={modeled}")
        self.after_change(node_id)

    # -- checks --

    def checks(self) -> None:
        for i in self.online_ids():
            node = self.nodes[i]
            if node.needs_sync:
                continue
            chain = node.chain
            if not chain.check_invariants():
                self.c["chain_invariant_violations"] += 1
            p = chain.pivot_index
            seen = self.pivot_seen[i]
            if chain.has_index(p):
                seen.setdefault(p, chain.block(p).digest)
            for idx in [x for x in seen if chain.has_index(x)]:
                if chain.block(idx).digest != seen[idx]:
                    self.c["pivot_rollbacks"] += 1
                    seen[idx] = chain.block(idx).digest
            for idx in [x for x in seen if x < chain.window_start]:
                del seen[idx]
            if node.storage is not None:
                if node.storage.pivot_index != p:
                    self.c["storage_pivot_lag"] += 1
                elif self.cfg.oracle_check:
                    blk = chain.block(p)
                    pre = self.oracle[blk.parent if p > 0 else blk.digest]
                    if node.storage.root != pre.tree.root:
                        self.c["storage_root_mismatches"] += 1

    def final_checks(self) -> None:
        self.checks()
        online = [self.nodes[i] for i in self.online_ids() if not self.nodes[i].needs_sync]
        self.c["head_digests_distinct"] = len({n.chain.head.digest for n in online})
        self.c["storage_roots_distinct"] = len({n.storage.root for n in online if n.storage})
        # pending outcomes resolved by the canonical chain
        head = min(online, key=lambda n: (-n.chain.head_index, n.chain.head.digest)).chain.head
        canonical = set()
        d = head.digest
        while d in self.blocks:
            blk = self.blocks[d]
            canonical.update(blk.tx_ids)
            if blk.index == 0:
                break
            d = blk.parent
        for rec in self.records:
            if rec.tx_id is not None and rec.tx_id in canonical:
                rec.outcome = "included"
        self.canonical_height = head.index
        # rejoined nodes agree with incumbents on the next 20 blocks
        votes: dict[bytes, set] = {}
        for i in self.ids:
            if i in self.churned:
                continue
            for _, digest, v in self.nodes[i].verdicts:
                if v in (Verdict.ACCEPTED, Verdict.REJECTED):
                    votes.setdefault(digest, set()).add(v)
        compared = 0
        for i, start in sorted(self.rejoined.items()):
            seen = 0
            for _, digest, v in self.nodes[i].verdicts[start:]:
                if v not in (Verdict.ACCEPTED, Verdict.REJECTED) or digest not in votes:
                    continue
                compared += 1
                if votes[digest] != {v}:
                    self.c["rejoin_verdict_mismatches"] += 1
                seen += 1
                if seen >= 20:
                    break
        self.c["rejoin_verdicts_compared"] = compared

    # -- output --

    def result(self) -> SimResult:
        outcomes = Counter(r.outcome for r in self.records)
        m = Metrics()
        c = self.c
        m.add("seed", self.cfg.seed)
        m.add("nodes", self.cfg.n_nodes)
        m.add("slots", self.cfg.blocks)
        m.add("blocks_mined", c["blocks_mined"])
        m.add("canonical_height", self.canonical_height)
        m.add("txs_requested", c["txs_requested"])
        m.add("txs_created", c["txs_created"])
        for name in ("included", "invalid", "stale", "bad_witness", "pending",
                     "lookup_failed", "origin_offline"):
            m.add(f"txs_{name}", outcomes.get(name, 0))
        m.add("stale_witness_rejections", c["stale_witness_rejections"])
        m.add("stale_bound_violations", c["stale_bound_violations"])
        m.add("lookup_failures", c["lookup_failures"])
        m.add("dht_queries", len(self.hops))
        m.add("dht_hops_max", max(self.hops, default=0))
        m.add("dht_hops_mean", _mean(self.hops))
        created = [r for r in self.records if r.ready is not None]
        m.add("dt_dht_max", max((r.ready - r.created for r in created), default=0.0))
        decided = [r for r in created if r.decided_at is not None and r.served]
        m.add("witness_age_max", max((r.decided_at - min(r.served.values()) for r in decided),
                                     default=0.0))
        tx_bytes = [r.encoded_bytes for r in created]
        m.add("tx_bytes_mean", _mean(tx_bytes))
        m.add("tx_bytes_max", max(tx_bytes, default=0))
        m.add("tx_modeled_bytes_mean", _mean([modeled_tx_bytes(len(r.keys), self.cfg.base_tx_bytes,
                                                               self.cfg.bytes_per_element)
                                              for r in created]))
        m.add("block_bytes_mean", _mean(self.block_bytes))
        m.add("block_bytes_max", max(self.block_bytes, default=0))
        m.add("block_modeled_bytes_mean", _mean(self.block_modeled))
        m.add("tau_leaves_max", max(self.tau_leaves, default=0))
        m.add("sync_count", len(self.sync_reports))
        m.add("sync_blocks", [s[0] for s in self.sync_reports])
        m.add("sync_bytes", [s[1] for s in self.sync_reports])
        m.add("sync_modeled_bytes", [s[2] for s in self.sync_reports])
        m.add("sync_failures", c["sync_failures"])
        storage = [n.storage.encoded_size() for i, n in sorted(self.nodes.items())
                   if n.storage is not None and i not in self.offline]
        m.add("storage_bytes_min", min(storage, default=0))
        m.add("storage_bytes_mean", _mean(storage))
        m.add("storage_bytes_max", max(storage, default=0))
        m.add("forks_injected", len(self.forks_done))
        m.add("reorgs", sum(n.reorgs for n in self.nodes.values()))
        m.add("rejected_blocks", c["rejected_blocks"])
        m.add("chain_invariant_violations", c["chain_invariant_violations"])
        m.add("oracle_root_mismatches", c["oracle_root_mismatches"])
        m.add("oracle_invalid_blocks", c["oracle_invalid_blocks"])
        m.add("storage_root_mismatches", c["storage_root_mismatches"])
        m.add("storage_pivot_lag", c["storage_pivot_lag"])
        m.add("pivot_rollbacks", c["pivot_rollbacks"])
        m.add("conservation_violations", c["conservation_violations"])
        m.add("conservation_checksum", self.total)
        m.add("head_digests_distinct", c["head_digests_distinct"])
        m.add("storage_roots_distinct", c["storage_roots_distinct"])
        m.add("rejoin_verdicts_compared", c["rejoin_verdicts_compared"])
        m.add("rejoin_verdict_mismatches", c["rejoin_verdict_mismatches"])
        m.add("trace_lines", len(self.trace.lines))
        m.add("trace_digest", self.trace.digest())
        return SimResult(m, self.trace.lines, self.nodes, self.records, self.blocks, self.oracle)


def _mean(xs) -> float:
    xs = list(xs)
    return round(sum(xs) / len(xs), 6) if xs else 0.0


def run(cfg: ScenarioConfig) -> SimResult:
    return Simulation(cfg).run()
