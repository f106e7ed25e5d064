"""Round-synchronous message-passing execution of the distributed solve.

Each station is an isolated agent that sees only its own region-files,
neighbor shares received through the message bus, and prices for region-files
it owns (ownership = lowest eligible station id). Global norm tests are
simulated as an all-reduce through a virtual coordinator and charged to the
message statistics, so the communication cost of the while-loop conditions is
explicit rather than hidden.

The runtime is a re-scheduling of :func:`cachefair.solver.solve_crp`, not an
approximation: summation orders and the bucket-fill kernel are shared, so the
iterates match the centralized solver bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .bucketfill import _fill_kernel
from .crp import CrpInstance, RoutingVector, objective
from .solver import SolveReport, SolverConfig

__all__ = [
    "MessageKind",
    "Message",
    "MessageStats",
    "MessageBus",
    "StationAgent",
    "build_topology",
    "run_distributed",
]

#: virtual all-reduce coordinator id used for norm aggregation messages
COORDINATOR = -1


class MessageKind(Enum):
    PRIMAL_SHARE = "primal-share"
    PRICE_UPDATE = "price-update"
    INNER_NORM = "inner-norm"
    CONTROL = "control"


@dataclass(frozen=True)
class Message:
    sender: int
    receiver: int
    round: int
    kind: MessageKind
    payload: tuple


@dataclass
class MessageStats:
    by_kind: dict[str, int] = field(default_factory=dict)
    per_round: list[dict[str, int]] = field(default_factory=list)

    def total(self, kind: MessageKind) -> int:
        return self.by_kind.get(kind.value, 0)


def build_topology(instance: CrpInstance):
    """Neighbor graph (stations sharing a region-file) and price ownership map."""
    neighbors: dict[int, set[int]] = {m: set() for m in instance.station_ids}
    owner: dict[int, int] = {}
    for q in instance.region_files:
        owner[q.id] = min(q.eligible)
        for m in q.eligible:
            for mm in q.eligible:
                if mm != m:
                    neighbors[m].add(mm)
    return neighbors, owner


class MessageBus:
    """Barrier-synchronous bus; validates locality and records statistics."""

    def __init__(self, instance: CrpInstance, owner: dict[int, int], trace=None):
        self._eligible = {q.id: frozenset(q.eligible) for q in instance.region_files}
        self._owner = owner
        self._pending: list[Message] = []
        self._round_counts: dict[str, int] = {}
        self.stats = MessageStats()
        self._trace = trace

    def post(self, msg: Message) -> None:
        if msg.kind is MessageKind.PRIMAL_SHARE:
            qid = msg.payload[0]
            elig = self._eligible[qid]
            if msg.sender not in elig or msg.receiver not in elig:
                raise ValueError(
                    f"primal share for region-file {qid} between non-eligible "
                    f"stations {msg.sender}->{msg.receiver}"
                )
        elif msg.kind is MessageKind.PRICE_UPDATE:
            qid = msg.payload[0]
            if msg.sender != self._owner[qid]:
                raise ValueError(f"price update for {qid} from non-owner {msg.sender}")
        self._pending.append(msg)
        self._round_counts[msg.kind.value] = self._round_counts.get(msg.kind.value, 0) + 1
        self.stats.by_kind[msg.kind.value] = self.stats.by_kind.get(msg.kind.value, 0) + 1
        if self._trace is not None:
            self._trace.write(
                json.dumps(
                    {
                        "round": msg.round,
                        "kind": msg.kind.value,
                        "sender": msg.sender,
                        "receiver": msg.receiver,
                        "payload": list(msg.payload),
                    }
                )
                + "\n"
            )

    def deliver(self) -> dict[int, list[Message]]:
        """Flush pending messages as sorted inboxes and close the round."""
        order = sorted(
            self._pending,
            key=lambda m: (m.sender, m.receiver, m.payload[0] if m.payload else -1),
        )
        inboxes: dict[int, list[Message]] = {}
        for msg in order:
            inboxes.setdefault(msg.receiver, []).append(msg)
        self._pending = []
        self.stats.per_round.append(dict(self._round_counts))
        self._round_counts = {}
        return inboxes


class StationAgent:
    """State machine for one station: local routing slice, neighbor cache, prices."""

    def __init__(self, m: int, instance: CrpInstance, owner: dict[int, int]):
        self.id = m
        util = instance.utilities[m]
        self.weight = util.weight
        self.soft_limit = util.soft_limit
        self.qids = instance.served_by(m)  # ascending
        self.demand = {qid: instance.region_file(qid).demand for qid in self.qids}
        self.peers = {
            qid: tuple(s for s in sorted(instance.region_file(qid).eligible) if s != m)
            for qid in self.qids
        }
        self.shares = {qid: {s: 0.0 for s in self.peers[qid]} for qid in self.qids}
        self.y = {qid: 0.0 for qid in self.qids}
        self.lam = {qid: 0.0 for qid in self.qids}
        self.owned = [qid for qid in self.qids if owner[qid] == m]

    def absorb(self, inbox: list[Message]) -> None:
        for msg in inbox:
            if msg.kind is MessageKind.PRIMAL_SHARE:
                qid, value = msg.payload
                self.shares[qid][msg.sender] = value
            elif msg.kind is MessageKind.PRICE_UPDATE:
                qid, value = msg.payload
                self.lam[qid] = value

    def inner_step(self, rho: float, alpha: float) -> float:
        """One bucket fill plus relaxation on the local slice; returns sup-change."""
        nq = len(self.qids)
        if nq == 0:
            return 0.0
        a = np.empty(nq)
        cap = np.empty(nq)
        for i, qid in enumerate(self.qids):
            claimed = 0.0
            for s in self.peers[qid]:
                claimed += self.shares[qid][s]
            a[i] = self.lam[qid] + rho * (self.demand[qid] - claimed)
            cap[i] = self.demand[qid]
        ystar, _ = _fill_kernel(a, cap, self.weight, self.soft_limit, rho)
        delta = 0.0
        for i, qid in enumerate(self.qids):
            old = self.y[qid]
            new = old + alpha * (ystar[i] - old)
            d = abs(new - old)
            if d > delta:
                delta = d
            self.y[qid] = new
        return delta

    def primal_messages(self, round_no: int) -> list[Message]:
        out = []
        for qid in self.qids:
            for peer in self.peers[qid]:
                out.append(
                    Message(self.id, peer, round_no, MessageKind.PRIMAL_SHARE,
                            (qid, self.y[qid]))
                )
        return out

    def dual_update(self, rho: float) -> tuple[float, float]:
        """Update prices of owned region-files; returns (max residual, max price move)."""
        max_resid = 0.0
        max_move = 0.0
        for qid in self.owned:
            served = 0.0
            for s in sorted([self.id, *self.peers[qid]]):
                served += self.y[qid] if s == self.id else self.shares[qid][s]
            resid = self.demand[qid] - served
            move = rho * resid
            self.lam[qid] = self.lam[qid] + move
            max_resid = max(max_resid, abs(resid))
            max_move = max(max_move, abs(move))
        return max_resid, max_move

    def price_messages(self, round_no: int) -> list[Message]:
        out = []
        for qid in self.owned:
            for peer in self.peers[qid]:
                out.append(
                    Message(self.id, peer, round_no, MessageKind.PRICE_UPDATE,
                            (qid, self.lam[qid]))
                )
        return out


def run_distributed(
    instance: CrpInstance, cfg: SolverConfig | None = None, trace=None
) -> tuple[SolveReport, MessageStats]:
    """Execute the solve as synchronized message-passing rounds.

    Returns the same report the centralized solver would produce on this
    instance and config, together with message statistics. ``trace`` may be a
    writable text stream receiving one JSON line per message.
    """
    if cfg is None:
        cfg = SolverConfig()
    neighbors, owner = build_topology(instance)
    bus = MessageBus(instance, owner, trace=trace)
    agents = {m: StationAgent(m, instance, owner) for m in sorted(instance.station_ids)}

    round_no = 0
    history: list[float] = []
    inner_total = 0
    inner_shortfalls = 0
    converged = False
    outer = 0

    for _ in range(cfg.max_outer):
        inner_ok = False
        for _ in range(cfg.max_inner):
            deltas = {}
            for m, agent in agents.items():
                deltas[m] = agent.inner_step(cfg.rho, cfg.alpha)
            for m, agent in agents.items():
                for msg in agent.primal_messages(round_no):
                    bus.post(msg)
            # simulated all-reduce of the inner stopping norm
            for m, d in deltas.items():
                bus.post(Message(m, COORDINATOR, round_no, MessageKind.INNER_NORM, (d,)))
            global_delta = max(deltas.values()) if deltas else 0.0
            stop = bool(global_delta <= cfg.eps_inner)
            for m in agents:
                bus.post(Message(COORDINATOR, m, round_no, MessageKind.CONTROL, (stop,)))
            inboxes = bus.deliver()
            for m, agent in agents.items():
                agent.absorb(inboxes.get(m, []))
            inner_total += 1
            round_no += 1
            if stop:
                inner_ok = True
                break
        if not inner_ok:
            inner_shortfalls += 1

        local_resid = {}
        local_move = {}
        for m, agent in agents.items():
            local_resid[m], local_move[m] = agent.dual_update(cfg.rho)
        for m, agent in agents.items():
            for msg in agent.price_messages(round_no):
                bus.post(msg)
        # simulated all-reduce of the outer stopping norm
        for m in agents:
            bus.post(Message(m, COORDINATOR, round_no, MessageKind.INNER_NORM,
                             (local_move[m],)))
        max_resid = max(local_resid.values()) if local_resid else 0.0
        max_move = max(local_move.values()) if local_move else 0.0
        history.append(max_resid)
        outer += 1
        stop = bool(max_move <= cfg.eps_outer)
        for m in agents:
            bus.post(Message(COORDINATOR, m, round_no, MessageKind.CONTROL, (stop,)))
        inboxes = bus.deliver()
        for m, agent in agents.items():
            agent.absorb(inboxes.get(m, []))
        round_no += 1
        if stop:
            converged = True
            break

    entries = {}
    duals = {}
    for m, agent in agents.items():
        for qid, v in agent.y.items():
            entries[(m, qid)] = float(v)
        for qid in agent.owned:
            duals[qid] = float(agent.lam[qid])
    routing = RoutingVector(entries)
    report = SolveReport(
        routing=routing,
        duals=duals,
        outer_iterations=outer,
        inner_iterations_total=inner_total,
        residual_history=history,
        objective=objective(instance, routing),
        converged=converged,
        inner_shortfalls=inner_shortfalls,
    )
    return report, bus.stats
