"""Event-driven simulation of LTE-LAA downlink and Wi-Fi channel access.

One shared channel, listen-before-talk contention for every node. Timing
is integer microseconds throughout: a defer of T_DEF plus a class-specific
number of observation slots precedes the backoff countdown, counters
freeze while a one-hop-audible transmission is in flight, and the full
defer is repeated after every busy period. Collisions happen exactly when
mutually-audible nodes' counters expire in the same instant; nodes that
cannot hear each other overlap freely.

Each run is deterministic for a given (scenario, seed): every node draws
backoffs, misbehavior coins and arrivals from its own seeded substreams,
so event ordering never perturbs the randomness.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional

import numpy as np

T_DEF_US = 16   # initial defer before the observation slots
T_SLOT_US = 9   # observation / backoff slot
SPEED_OF_LIGHT = 299_792_458.0
DEFAULT_FREQ_HZ = 5e9
COMPLIANT_CCA_DBM = -73.0


class ValidationError(ValueError):
    """Scenario or parameter set that cannot be simulated."""


class EmptyTraceError(ValueError):
    """Metric requested on a trace without events."""


@dataclass(frozen=True)
class PriorityClassParams:
    """Contention parameter bundle of one channel-access priority class."""

    class_id: str
    defer_slots: int      # observation slots before countdown
    cw_min: int
    cw_max: int
    mcop_us: int          # maximum channel occupancy

    def __post_init__(self):
        if self.cw_min <= 0 or self.cw_max < self.cw_min:
            raise ValidationError("need 0 < cw_min <= cw_max")
        if self.cw_min & (self.cw_min - 1) or self.cw_max & (self.cw_max - 1):
            raise ValidationError("contention windows must be powers of two")


_DOWNLINK_TABLE = {
    "C1": PriorityClassParams("C1", 1, 4, 8, 2_000),
    "C2": PriorityClassParams("C2", 1, 8, 16, 3_000),
    "C3": PriorityClassParams("C3", 3, 16, 64, 8_000),
    "C4": PriorityClassParams("C4", 7, 16, 1024, 8_000),
}


def class_params(class_id: str, mcop_ms: Optional[int] = None) -> PriorityClassParams:
    """Downlink parameters for C1..C4; C3/C4 may opt into 10 ms occupancy."""
    try:
        params = _DOWNLINK_TABLE[class_id]
    except KeyError:
        raise ValidationError(f"unknown priority class {class_id!r}") from None
    if mcop_ms is not None:
        if class_id in ("C3", "C4") and mcop_ms in (8, 10):
            params = replace(params, mcop_us=mcop_ms * 1000)
        elif mcop_ms * 1000 != params.mcop_us:
            raise ValidationError(f"{class_id} does not allow {mcop_ms} ms occupancy")
    return params


@dataclass(frozen=True)
class MisbehaviorPolicy:
    """How a node deviates from the contention rules, if at all.

    cw_reduction draws from {0..q_m-1} with probability 1 - alpha and
    behaves normally otherwise; no_cw_growth never doubles the window
    after collisions; defer_reduction replaces the class defer slots;
    cca_inflation raises the node's own sensing threshold.
    """

    variant: str = "compliant"
    q_m: Optional[int] = None
    alpha: float = 1.0
    coin_per: str = "draw"            # "draw" or "chain": granularity of the alpha coin
    defer_slots: Optional[int] = None
    cca_threshold_dbm: Optional[float] = None

    def __post_init__(self):
        if self.variant not in ("compliant", "cw_reduction", "no_cw_growth",
                                "defer_reduction", "cca_inflation"):
            raise ValidationError(f"unknown policy variant {self.variant!r}")
        if self.coin_per not in ("draw", "chain"):
            raise ValidationError("coin_per must be 'draw' or 'chain'")
        if self.variant == "cw_reduction":
            if not self.q_m or self.q_m < 1:
                raise ValidationError("cw_reduction needs q_m >= 1")
            if not 0.0 <= self.alpha <= 1.0:
                raise ValidationError("alpha must lie in [0, 1]")
        if self.variant == "defer_reduction" and (
                self.defer_slots is None or self.defer_slots < 0):
            raise ValidationError("defer_reduction needs defer_slots >= 0")
        if self.variant == "cca_inflation" and self.cca_threshold_dbm is None:
            raise ValidationError("cca_inflation needs a threshold")

    @classmethod
    def compliant(cls) -> "MisbehaviorPolicy":
        return cls()

    @classmethod
    def cw_reduction(cls, q_m: int, alpha: float,
                     coin_per: str = "draw") -> "MisbehaviorPolicy":
        return cls(variant="cw_reduction", q_m=q_m, alpha=alpha, coin_per=coin_per)

    @classmethod
    def no_cw_growth(cls) -> "MisbehaviorPolicy":
        return cls(variant="no_cw_growth")

    @classmethod
    def defer_reduction(cls, defer_slots: int) -> "MisbehaviorPolicy":
        return cls(variant="defer_reduction", defer_slots=defer_slots)

    @classmethod
    def cca_inflation(cls, threshold_dbm: float) -> "MisbehaviorPolicy":
        return cls(variant="cca_inflation", cca_threshold_dbm=threshold_dbm)


@dataclass(frozen=True)
class TrafficModel:
    """saturated (always backlogged), poisson arrivals, or idle (never sends)."""

    kind: str = "saturated"
    rate_per_s: float = 0.0

    def __post_init__(self):
        if self.kind not in ("saturated", "poisson", "idle"):
            raise ValidationError(f"unknown traffic model {self.kind!r}")
        if self.kind == "poisson" and not self.rate_per_s > 0:
            raise ValidationError("poisson traffic needs a positive rate")


@dataclass(frozen=True)
class NodeConfig:
    node_id: str
    kind: str                         # "enb" or "ap"
    position: tuple[float, float] = (0.0, 0.0)
    tx_power_dbm: float = 20.0
    cca_threshold_dbm: float = COMPLIANT_CCA_DBM
    traffic_class: PriorityClassParams = _DOWNLINK_TABLE["C3"]
    traffic: TrafficModel = TrafficModel()
    policy: MisbehaviorPolicy = MisbehaviorPolicy()
    frame_duration_us: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("enb", "ap"):
            raise ValidationError(f"node kind must be enb or ap, got {self.kind!r}")
        if self.frame_duration_us is not None and (
                self.frame_duration_us <= 0
                or self.frame_duration_us > self.traffic_class.mcop_us):
            raise ValidationError("frame duration must lie in (0, T_MCOP]")

    @property
    def frame_us(self) -> int:
        return self.frame_duration_us or self.traffic_class.mcop_us

    @property
    def sensing_threshold_dbm(self) -> float:
        # cca_inflation changes what the node itself senses, nothing else
        if self.policy.variant == "cca_inflation":
            return self.policy.cca_threshold_dbm
        return self.cca_threshold_dbm

    @property
    def effective_defer_slots(self) -> int:
        if self.policy.variant == "defer_reduction":
            return self.policy.defer_slots
        return self.traffic_class.defer_slots


@dataclass
class Scenario:
    name: str
    nodes: list[NodeConfig]
    seed: int = 0
    n_events: int = 10_000

    def __post_init__(self):
        ids = [n.node_id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate node ids")


def free_space_path_loss_db(distance_m: float, freq_hz: float = DEFAULT_FREQ_HZ) -> float:
    """Free-space loss; distances are floored at one meter."""
    d = max(float(distance_m), 1.0)
    return 20.0 * math.log10(d) + 20.0 * math.log10(freq_hz) \
        + 20.0 * math.log10(4.0 * math.pi / SPEED_OF_LIGHT)


def received_power_dbm(tx: NodeConfig, rx: NodeConfig,
                       path_loss_db: Callable[[float], float] = free_space_path_loss_db
                       ) -> float:
    d = math.dist(tx.position, rx.position)
    return tx.tx_power_dbm - path_loss_db(d)


@dataclass
class InterferenceGraph:
    """Directed audibility: edge x -> y present when y hears x."""

    hears: dict[str, frozenset[str]]

    def edge(self, x: str, y: str) -> bool:
        return x in self.hears.get(y, frozenset())

    def audible_to(self, y: str) -> frozenset[str]:
        return self.hears.get(y, frozenset())


def interference_graph(nodes: Iterable[NodeConfig],
                       path_loss_db: Callable[[float], float] = free_space_path_loss_db
                       ) -> InterferenceGraph:
    """Build the audibility graph from powers, positions and thresholds.

    Edges are directional because transmit powers and sensing thresholds
    differ per node; a station can be audible to a neighbor that it
    cannot itself hear.
    """
    nodes = list(nodes)
    hears: dict[str, frozenset[str]] = {}
    for rx in nodes:
        audible = set()
        for tx in nodes:
            if tx.node_id == rx.node_id:
                continue
            if received_power_dbm(tx, rx, path_loss_db) >= rx.sensing_threshold_dbm:
                audible.add(tx.node_id)
        hears[rx.node_id] = frozenset(audible)
    return InterferenceGraph(hears)


@dataclass(frozen=True)
class TxEvent:
    """One transmission attempt, including collisions."""

    node_id: str
    t_s_us: int
    t_e_us: int
    class_id: str
    backoff: int          # counter drawn for this attempt
    cw: int               # window the counter was drawn from
    retx_round: int       # 0 on first attempt of a frame
    collided: bool
    queue_gap_us: int     # idle-queue time preceding this access
    frame_id: int         # payload identity, stable across retransmissions

    @property
    def duration_us(self) -> int:
        return self.t_e_us - self.t_s_us


@dataclass
class EventTrace:
    """Ground-truth record of one simulation run."""

    events: list[TxEvent]
    nodes: dict[str, NodeConfig]
    graph: InterferenceGraph
    seed: int
    sim_end_us: int
    queue_empty_us: dict[str, int]
    scenario_name: str = ""

    def events_for(self, node_id: str) -> list[TxEvent]:
        return [e for e in self.events if e.node_id == node_id]

    def enb_ids(self) -> list[str]:
        return [n for n, c in self.nodes.items() if c.kind == "enb"]

    def ap_ids(self) -> list[str]:
        return [n for n, c in self.nodes.items() if c.kind == "ap"]


class _NodeState:
    __slots__ = ("idx", "cfg", "defer_us", "frame_us", "cw", "retx", "counter",
                 "draw_b", "draw_q", "busy_until", "head_arrival", "gap_pending",
                 "frame_seq", "last_service_end", "rng_backoff", "rng_coin",
                 "rng_arrival", "arrival_cursor", "chain_reduced")

    def __init__(self, idx: int, cfg: NodeConfig, seed_seq: np.random.SeedSequence):
        self.idx = idx
        self.cfg = cfg
        self.defer_us = T_DEF_US + cfg.effective_defer_slots * T_SLOT_US
        self.frame_us = cfg.frame_us
        self.cw = cfg.traffic_class.cw_min
        self.retx = 0
        self.counter = 0
        self.draw_b = 0
        self.draw_q = 0
        self.busy_until = 0
        self.gap_pending = 0
        self.frame_seq = 0
        self.last_service_end = 0
        backoff_seq, coin_seq, arrival_seq = seed_seq.spawn(3)
        self.rng_backoff = np.random.default_rng(backoff_seq)
        self.rng_coin = np.random.default_rng(coin_seq)
        self.rng_arrival = np.random.default_rng(arrival_seq)
        self.arrival_cursor = 0.0
        self.chain_reduced = False
        if cfg.traffic.kind == "saturated":
            self.head_arrival = 0
        elif cfg.traffic.kind == "poisson":
            self.head_arrival = self._next_arrival()
        else:
            self.head_arrival = math.inf

    def _next_arrival(self) -> int:
        mean_us = 1e6 / self.cfg.traffic.rate_per_s
        self.arrival_cursor += self.rng_arrival.exponential(mean_us)
        return int(math.ceil(self.arrival_cursor))

    def draw_backoff(self) -> None:
        policy = self.cfg.policy
        q = self.cw
        if policy.variant == "cw_reduction":
            if policy.coin_per == "chain":
                if self.retx == 0:
                    self.chain_reduced = self.rng_coin.random() >= policy.alpha
                reduced = self.chain_reduced
            else:
                reduced = self.rng_coin.random() >= policy.alpha
            if reduced:
                q = policy.q_m
        self.counter = int(self.rng_backoff.integers(0, q))
        self.draw_b = self.counter
        self.draw_q = q

    def on_outcome(self, end_us: int, collided: bool) -> None:
        cls = self.cfg.traffic_class
        if collided:
            self.retx += 1
            if self.cfg.policy.variant != "no_cw_growth":
                self.cw = min(2 * self.cw, cls.cw_max)
            self.gap_pending = 0
        else:
            self.retx = 0
            self.cw = cls.cw_min
            self.last_service_end = end_us
            if self.cfg.traffic.kind == "saturated":
                self.gap_pending = 0
            else:
                self.head_arrival = self._next_arrival()
                self.gap_pending = max(0, self.head_arrival - end_us)
                self.frame_seq += 1
        if self.cfg.traffic.kind == "saturated" and not collided:
            self.frame_seq += 1
        if self.head_arrival != math.inf:
            self.draw_backoff()


def run_sim(scenario: Scenario, seed: Optional[int] = None,
            n_events: Optional[int] = None,
            path_loss_db: Callable[[float], float] = free_space_path_loss_db
            ) -> EventTrace:
    """Simulate the scenario until ``n_events`` transmission attempts.

    Returns the ground-truth trace: every attempt with its drawn backoff,
    the window it was drawn from, the retransmission round, the collision
    outcome and the idle-queue gap that preceded it.
    """
    seed = scenario.seed if seed is None else seed
    n_events = scenario.n_events if n_events is None else n_events
    if n_events < 1:
        raise ValidationError("need at least one event")
    nodes = scenario.nodes
    if not nodes:
        raise ValidationError("scenario has no nodes")
    if all(n.traffic.kind == "idle" for n in nodes):
        raise ValidationError("every node is idle; nothing to simulate")

    graph = interference_graph(nodes, path_loss_db)
    n = len(nodes)
    index = {c.node_id: i for i, c in enumerate(nodes)}
    # hearers_of[i]: indices that hear node i (i present in their audible set)
    hearers_of = [[index[y] for y, heard in graph.hears.items()
                   if nodes[i].node_id in heard] for i in range(n)]
    mutual = [[False] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            if i != j:
                mutual[i][j] = (graph.edge(nodes[i].node_id, nodes[j].node_id)
                                and graph.edge(nodes[j].node_id, nodes[i].node_id))

    root = np.random.SeedSequence(seed)
    states = [_NodeState(i, cfg, child)
              for i, (cfg, child) in enumerate(zip(nodes, root.spawn(n)))]
    for st in states:
        if st.head_arrival != math.inf:
            st.draw_backoff()
            if st.cfg.traffic.kind == "poisson":
                st.gap_pending = st.head_arrival  # queue empty since time zero

    ready = np.full(n, np.inf)

    def recompute(i: int) -> None:
        st = states[i]
        if st.head_arrival == math.inf:
            ready[i] = math.inf
            return
        anchor = max(st.busy_until, st.head_arrival)
        ready[i] = anchor + st.defer_us + st.counter * T_SLOT_US

    for i in range(n):
        recompute(i)

    events: list[TxEvent] = []
    frame_tag = [st.idx * 1_000_000_007 for st in states]  # unique payload ids

    while len(events) < n_events:
        t_star = ready.min()
        if not np.isfinite(t_star):
            raise ValidationError("no node can ever transmit; check traffic models")
        t_star_i = int(t_star)
        starters = np.flatnonzero(ready == t_star).tolist()

        ends = {}
        for i in starters:
            ends[i] = t_star_i + states[i].frame_us

        collided = {}
        for i in starters:
            collided[i] = any(mutual[i][j] for j in starters if j != i)

        # freeze everyone who hears a starter, consuming their counted slots
        affected = set(starters)
        for i in starters:
            for z in hearers_of[i]:
                affected.add(z)
                st = states[z]
                if z not in ends and st.head_arrival != math.inf:
                    anchor = max(st.busy_until, st.head_arrival)
                    if anchor <= t_star_i:
                        consumed = (t_star_i - anchor - st.defer_us) // T_SLOT_US
                        if consumed > 0:
                            st.counter -= min(st.counter, int(consumed))
                st.busy_until = max(st.busy_until, ends[i])

        for i in starters:
            st = states[i]
            st.busy_until = max(st.busy_until, ends[i])
            events.append(TxEvent(
                node_id=st.cfg.node_id,
                t_s_us=t_star_i,
                t_e_us=ends[i],
                class_id=st.cfg.traffic_class.class_id,
                backoff=st.draw_b,
                cw=st.draw_q,
                retx_round=st.retx,
                collided=collided[i],
                queue_gap_us=st.gap_pending if st.retx == 0 else 0,
                frame_id=frame_tag[i] + st.frame_seq,
            ))
            st.on_outcome(ends[i], collided[i])

        for z in affected:
            recompute(z)

    sim_end = max(e.t_e_us for e in events)
    empty: dict[str, int] = {}
    for st in states:
        total = sum(e.queue_gap_us for e in events if e.node_id == st.cfg.node_id)
        if st.cfg.traffic.kind != "saturated":
            pending_since = st.last_service_end
            head = st.head_arrival if st.head_arrival != math.inf else sim_end
            tail = min(head, sim_end) - pending_since
            if tail > 0:
                # trailing idle-queue span not attached to any recorded event
                recorded = sum(e.queue_gap_us for e in events
                               if e.node_id == st.cfg.node_id and e.t_s_us > pending_since)
                total += max(0, tail - recorded)
        empty[st.cfg.node_id] = total

    return EventTrace(events=events, nodes={c.node_id: c for c in nodes},
                      graph=graph, seed=seed, sim_end_us=sim_end,
                      queue_empty_us=empty, scenario_name=scenario.name)


def attempt_rate(trace: EventTrace, node_id: str) -> float:
    """Share of all transmission attempts made by one node."""
    if not trace.events:
        raise EmptyTraceError("attempt rate undefined on an empty trace")
    mine = sum(1 for e in trace.events if e.node_id == node_id)
    return mine / len(trace.events)


def saturation_level(trace: EventTrace, node_id: str) -> float:
    """Fraction of simulated time the node's transmit queue sat empty."""
    cfg = trace.nodes[node_id]
    if cfg.traffic.kind == "saturated":
        return 0.0
    if trace.sim_end_us <= 0:
        return 0.0
    return min(1.0, trace.queue_empty_us.get(node_id, 0) / trace.sim_end_us)


def ground_truth_channel(trace: EventTrace, t_us: int,
                         observer: str) -> tuple[bool, list[str]]:
    """What the observer's receiver sees at instant ``t_us``.

    Returns (busy, active one-hop-audible transmitters); the observer's
    own transmissions are excluded, they are its activity rather than
    something it senses.
    """
    audible = trace.graph.audible_to(observer)
    active = [e.node_id for e in trace.events
              if e.node_id != observer and e.node_id in audible
              and e.t_s_us <= t_us < e.t_e_us]
    return bool(active), active


def ignored_transmissions(trace: EventTrace, enb_id: str,
                          compliant_cca_dbm: float = COMPLIANT_CCA_DBM) -> float:
    """Average number of disregarded Wi-Fi transmissions per channel access.

    Counts transmissions that would have been audible at the compliant
    sensing threshold but fell below the node's actual one, and that
    overlapped a window where the node was contending or transmitting.
    """
    cfg = trace.nodes[enb_id]
    own = [e for e in trace.events if e.node_id == enb_id]
    if not own:
        raise EmptyTraceError(f"{enb_id} never transmitted")
    ignored_set = set()
    for other_id, other_cfg in trace.nodes.items():
        if other_id == enb_id:
            continue
        power = received_power_dbm(other_cfg, cfg)
        if compliant_cca_dbm <= power < cfg.sensing_threshold_dbm:
            ignored_set.add(other_id)
    if not ignored_set:
        return 0.0
    count = 0
    prev_end = 0
    for e in own:
        window_lo, window_hi = prev_end, e.t_e_us
        count += sum(1 for o in trace.events
                     if o.node_id in ignored_set
                     and o.t_s_us < window_hi and o.t_e_us > window_lo)
        prev_end = e.t_e_us
    return count / len(own)


# -- trace serialization ------------------------------------------------

_COLUMNS = ["node_id", "t_s_us", "t_e_us", "class_id", "backoff", "cw",
            "retx_round", "collided", "queue_gap_us", "frame_id"]


def _node_to_json(cfg: NodeConfig) -> str:
    policy = {"variant": cfg.policy.variant}
    if cfg.policy.variant == "cw_reduction":
        policy.update(q_m=cfg.policy.q_m, alpha=cfg.policy.alpha)
    elif cfg.policy.variant == "defer_reduction":
        policy.update(defer_slots=cfg.policy.defer_slots)
    elif cfg.policy.variant == "cca_inflation":
        policy.update(cca_threshold_dbm=cfg.policy.cca_threshold_dbm)
    traffic = {"kind": cfg.traffic.kind}
    if cfg.traffic.kind == "poisson":
        traffic["rate_per_s"] = cfg.traffic.rate_per_s
    return json.dumps({
        "node_id": cfg.node_id, "kind": cfg.kind,
        "position": list(cfg.position), "tx_power_dbm": cfg.tx_power_dbm,
        "cca_threshold_dbm": cfg.cca_threshold_dbm,
        "class_id": cfg.traffic_class.class_id,
        "mcop_us": cfg.traffic_class.mcop_us,
        "frame_duration_us": cfg.frame_duration_us,
        "traffic": traffic, "policy": policy,
    }, sort_keys=True)


def _node_from_json(blob: str) -> NodeConfig:
    d = json.loads(blob)
    policy_d = d["policy"]
    policy = MisbehaviorPolicy(
        variant=policy_d["variant"],
        q_m=policy_d.get("q_m"),
        alpha=policy_d.get("alpha", 1.0),
        defer_slots=policy_d.get("defer_slots"),
        cca_threshold_dbm=policy_d.get("cca_threshold_dbm"),
    )
    traffic_d = d["traffic"]
    traffic = TrafficModel(kind=traffic_d["kind"],
                           rate_per_s=traffic_d.get("rate_per_s", 0.0))
    return NodeConfig(
        node_id=d["node_id"], kind=d["kind"], position=tuple(d["position"]),
        tx_power_dbm=d["tx_power_dbm"], cca_threshold_dbm=d["cca_threshold_dbm"],
        traffic_class=class_params(d["class_id"], d["mcop_us"] // 1000
                                   if d["class_id"] in ("C3", "C4") else None),
        traffic=traffic, policy=policy,
        frame_duration_us=d["frame_duration_us"],
    )


def write_trace(trace: EventTrace, path) -> None:
    lines = ["# laacoex-trace v1",
             f"# scenario={trace.scenario_name}",
             f"# seed={trace.seed}",
             f"# sim_end_us={trace.sim_end_us}"]
    for cfg in trace.nodes.values():
        lines.append(f"# node {_node_to_json(cfg)}")
    for node_id, us in sorted(trace.queue_empty_us.items()):
        lines.append(f"# queue_empty_us {node_id} {us}")
    lines.append("# " + "\t".join(_COLUMNS))
    for e in trace.events:
        lines.append("\t".join(str(v) for v in (
            e.node_id, e.t_s_us, e.t_e_us, e.class_id, e.backoff, e.cw,
            e.retx_round, int(e.collided), e.queue_gap_us, e.frame_id)))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_trace(path) -> EventTrace:
    nodes: list[NodeConfig] = []
    events: list[TxEvent] = []
    meta = {"seed": 0, "sim_end_us": 0, "scenario": ""}
    empty: dict[str, int] = {}
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("# node "):
                nodes.append(_node_from_json(line[len("# node "):]))
            elif line.startswith("# queue_empty_us "):
                _, _, node_id, us = line.split(" ", 3)
                empty[node_id] = int(us)
            elif line.startswith("# seed="):
                meta["seed"] = int(line.split("=", 1)[1])
            elif line.startswith("# sim_end_us="):
                meta["sim_end_us"] = int(line.split("=", 1)[1])
            elif line.startswith("# scenario="):
                meta["scenario"] = line.split("=", 1)[1]
            elif line.startswith("#"):
                continue
            else:
                f = line.split("\t")
                events.append(TxEvent(
                    node_id=f[0], t_s_us=int(f[1]), t_e_us=int(f[2]),
                    class_id=f[3], backoff=int(f[4]), cw=int(f[5]),
                    retx_round=int(f[6]), collided=bool(int(f[7])),
                    queue_gap_us=int(f[8]), frame_id=int(f[9])))
    graph = interference_graph(nodes)
    return EventTrace(events=events, nodes={c.node_id: c for c in nodes},
                      graph=graph, seed=meta["seed"],
                      sim_end_us=meta["sim_end_us"], queue_empty_us=empty,
                      scenario_name=meta["scenario"])
