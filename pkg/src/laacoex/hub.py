"""Central behavior evaluation over the reports of many monitoring APs.

The hub never sees ground truth. It merges per-AP observation sets into
per-transmitter records by timestamp agreement, infers each transmitter's
one-hop neighborhood from the reported hidden flags and from transmission
overlaps, reconstructs every backoff counter from inter-transmission
timing by subtracting defer and freeze intervals, and compares the
observed counter distribution against the one a compliant node would
produce. The distance between the two is a base-2 Jensen-Shannon
divergence, bounded in [0, 1], and a transmitter is flagged when it
exceeds the decision threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .macsim import T_DEF_US, T_SLOT_US, class_params
from .monitor import MonitorReport, ObservationVector


class AmbiguousIdError(ValueError):
    """One local id matched two distinct merged transmitters."""


class InsufficientDataError(ValueError):
    """Not enough usable observations to form a distribution."""


@dataclass(frozen=True)
class MergedObservation:
    """One transmission after multi-monitor duplicates were collapsed."""

    t_s_us: float
    t_e_us: float
    enb_id: str
    class_id: str
    retx_round: int
    h_flags: tuple[tuple[str, int], ...]

    @property
    def duration_us(self) -> float:
        return self.t_e_us - self.t_s_us


@dataclass(frozen=True)
class NeighborhoodGraph:
    """Per-transmitter one-hop sets as inferred by the hub."""

    ap_neighbors: dict[str, frozenset[str]]
    enb_neighbors: dict[str, frozenset[str]]

    def one_hop_aps(self, enb_id: str) -> frozenset[str]:
        return self.ap_neighbors.get(enb_id, frozenset())

    def one_hop_enbs(self, enb_id: str) -> frozenset[str]:
        return self.enb_neighbors.get(enb_id, frozenset())


@dataclass
class BackoffEstimate:
    """One reconstructed counter with its exclusion bookkeeping."""

    index: int
    raw_slots: float
    slots: int
    cw: int
    excluded: bool
    reason: str = ""


@dataclass
class BackoffDistribution:
    """Probability mass over backoff counter values."""

    values: np.ndarray
    mass: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.int64)
        self.mass = np.asarray(self.mass, dtype=np.float64)
        if len(self.values) != len(self.mass):
            raise ValueError("values and mass differ in length")
        if np.any(self.mass < 0):
            raise ValueError("negative probability mass")
        if abs(float(self.mass.sum()) - 1.0) > 1e-9:
            raise ValueError("mass does not sum to one")

    @classmethod
    def from_counts(cls, counts: dict[int, float]) -> "BackoffDistribution":
        if not counts:
            raise InsufficientDataError("empty counter set")
        values = np.array(sorted(counts), dtype=np.int64)
        mass = np.array([counts[v] for v in values], dtype=np.float64)
        return cls(values, mass / mass.sum())

    def as_dict(self) -> dict[int, float]:
        return {int(v): float(m) for v, m in zip(self.values, self.mass)}


@dataclass(frozen=True)
class DetectorVerdict:
    enb_id: str
    divergence: float
    threshold: float
    misbehaving: bool
    n_observations: int


# -- observation merging ---------------------------------------------------


class _UnionFind:
    def __init__(self, keys):
        self.parent = {k: k for k in keys}

    def find(self, k):
        while self.parent[k] != k:
            self.parent[k] = self.parent[self.parent[k]]
            k = self.parent[k]
        return k

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def _match_fraction(a: list[ObservationVector], b: list[ObservationVector],
                    eps_us: float, duration_tol_us: float) -> float:
    """Share of the smaller subset whose records agree across monitors."""
    matches = 0
    j = 0
    for o in a:
        while j < len(b) and b[j].t_s_us < o.t_s_us - eps_us:
            j += 1
        k = j
        while k < len(b) and b[k].t_s_us <= o.t_s_us + eps_us:
            if abs(b[k].duration_us - o.duration_us) <= duration_tol_us:
                matches += 1
                break
            k += 1
    return matches / min(len(a), len(b))


def match_ids(reports: Iterable[MonitorReport], eps_us: float = 1.0,
              min_match_fraction: float = 0.8,
              duration_tol_us: Optional[float] = None
              ) -> dict[str, list[MergedObservation]]:
    """Merge per-monitor local ids into hub-wide transmitter identities.

    Two local-id subsets from different monitors merge when, for at least
    ``min_match_fraction`` of the smaller subset, start times agree
    within ``eps_us`` and frame lengths agree within ``duration_tol_us``
    (defaults to ``eps_us``). Duplicated records collapse to one copy
    with the hidden flag widened into a per-monitor vector. A local id
    that would merge with two distinct ids of one monitor raises
    AmbiguousIdError.
    """
    if duration_tol_us is None:
        duration_tol_us = eps_us
    subsets: dict[tuple[str, int], list[ObservationVector]] = {}
    for report in reports:
        for o in report.observations:
            subsets.setdefault((report.monitor_id, o.local_id), []).append(o)
    for obs in subsets.values():
        obs.sort(key=lambda o: o.t_s_us)

    keys = sorted(subsets)
    uf = _UnionFind(keys)
    # each subset is tried against every current group through a few of
    # that group's members; full pairwise matching is quadratic in the
    # monitor count and adds nothing when records agree within eps
    group_members: list[list[tuple[str, int]]] = []
    for key in keys:
        matched_group = None
        for members in group_members:
            for other in members[:3]:
                if other[0] == key[0]:
                    continue
                if _match_fraction(subsets[key], subsets[other], eps_us,
                                   duration_tol_us) >= min_match_fraction:
                    matched_group = members
                    break
            if matched_group:
                break
        if matched_group is None:
            group_members.append([key])
        else:
            uf.union(matched_group[0], key)
            matched_group.append(key)

    groups: dict[tuple[str, int], list[tuple[str, int]]] = {}
    for k in keys:
        groups.setdefault(uf.find(k), []).append(k)
    for root, members in groups.items():
        monitors = [m for m, _ in members]
        if len(monitors) != len(set(monitors)):
            raise AmbiguousIdError(
                f"monitor ids collide within one merged transmitter: {members}")

    ordered = sorted(groups.values(),
                     key=lambda ms: min(subsets[k][0].t_s_us for k in ms))
    merged: dict[str, list[MergedObservation]] = {}
    for n, members in enumerate(ordered):
        enb_id = f"E{n}"
        rows: list[tuple[ObservationVector, str]] = []
        for key in members:
            rows.extend((o, key[0]) for o in subsets[key])
        rows.sort(key=lambda r: (r[0].t_s_us, r[1]))
        out: list[MergedObservation] = []
        cluster: list[tuple[ObservationVector, str]] = []

        def flush():
            if not cluster:
                return
            lead = cluster[0][0]
            flags = tuple(sorted((mon, o.hidden_flag) for o, mon in cluster))
            # monitors that missed earlier frames undercount the round, so
            # the deepest reported chain wins
            retx = max(o.retx_round for o, _ in cluster)
            out.append(MergedObservation(
                t_s_us=lead.t_s_us, t_e_us=lead.t_e_us, enb_id=enb_id,
                class_id=lead.class_id, retx_round=retx,
                h_flags=flags))

        for row in rows:
            if cluster and (row[0].t_s_us - cluster[0][0].t_s_us > eps_us
                            or abs(row[0].duration_us - cluster[0][0].duration_us)
                            > duration_tol_us):
                flush()
                cluster = []
            cluster.append(row)
        flush()
        merged[enb_id] = out
    return merged


# -- neighborhood inference -------------------------------------------------


def _count_overlaps(a: list[MergedObservation], b: list[MergedObservation]) -> int:
    count = 0
    j = 0
    for o in a:
        while j < len(b) and b[j].t_e_us <= o.t_s_us:
            j += 1
        k = j
        while k < len(b) and b[k].t_s_us < o.t_e_us:
            count += 1
            k += 1
    return count


def infer_enb_neighborhood(merged: dict[str, list[MergedObservation]],
                           gamma_int: Optional[float] = None,
                           recent_window: Optional[int] = None
                           ) -> NeighborhoodGraph:
    """One-hop sets per transmitter.

    An AP belongs when some recent observation carries its flag as heard
    (0). Two transmitters count as hidden from each other precisely when
    their recorded airtimes overlap more than ``gamma_int`` times; the
    default threshold scales as 3 overlaps per 1000 observations of the
    smaller set, and exactly reaching it still counts as neighbors.
    """
    ap_neighbors: dict[str, frozenset[str]] = {}
    for enb_id, obs in merged.items():
        window = obs if recent_window is None else obs[-recent_window:]
        heard = {mon for o in window for mon, flag in o.h_flags if flag == 0}
        ap_neighbors[enb_id] = frozenset(heard)

    enb_ids = sorted(merged)
    neighbors: dict[str, set[str]] = {e: set() for e in enb_ids}
    for i, a in enumerate(enb_ids):
        for b in enb_ids[i + 1:]:
            limit = gamma_int
            if limit is None:
                limit = 3.0 * min(len(merged[a]), len(merged[b])) / 1000.0
            if _count_overlaps(merged[a], merged[b]) <= limit:
                neighbors[a].add(b)
                neighbors[b].add(a)
    return NeighborhoodGraph(
        ap_neighbors=ap_neighbors,
        enb_neighbors={e: frozenset(v) for e, v in neighbors.items()})


# -- backoff pattern estimation ---------------------------------------------


def _merge_intervals(intervals: list[tuple[float, float]]) -> list[tuple[float, float]]:
    """Union of overlapping or touching spans, kept in time order."""
    out: list[tuple[float, float]] = []
    for lo, hi in sorted(intervals):
        if out and lo <= out[-1][1]:
            out[-1] = (out[-1][0], max(out[-1][1], hi))
        else:
            out.append((lo, hi))
    return out


def estimate_backoff(observations: list[MergedObservation],
                     neighborhood: NeighborhoodGraph,
                     activity: dict[str, list[tuple[float, float]]],
                     merged: dict[str, list[MergedObservation]],
                     negative_policy: str = "include"
                     ) -> list[BackoffEstimate]:
    """Reconstruct the counter behind every inter-transmission gap.

    Each gap decomposes into one defer per busy period, the freeze time
    spanned by one-hop intermediate transmissions (overlapping ones merge
    into a single interval), and the counted backoff slots; solving for
    the slots and rounding to the nearest integer yields the estimate.
    Estimates above the window limit are excluded as unsaturated
    artifacts. Negative estimates are evidence in their own right
    (something the transmitter should have deferred to was skipped) and
    stay in by default; ``negative_policy="exclude"`` drops them instead.
    """
    if negative_policy not in ("include", "exclude"):
        raise ValueError("negative_policy must be 'include' or 'exclude'")
    if not observations:
        return []
    enb_id = observations[0].enb_id

    sources: list[tuple[float, float]] = []
    for ap in neighborhood.one_hop_aps(enb_id):
        sources.extend(activity.get(ap, []))
    for other in neighborhood.one_hop_enbs(enb_id):
        if other == enb_id:
            continue
        sources.extend((o.t_s_us, o.t_e_us) for o in merged.get(other, []))
    sources.sort()
    starts = np.array([s for s, _ in sources])

    estimates: list[BackoffEstimate] = []
    for i in range(1, len(observations)):
        prev = observations[i - 1]
        cur = observations[i]
        gap = cur.t_s_us - prev.t_e_us
        lo = np.searchsorted(starts, prev.t_e_us, side="right")
        hi = np.searchsorted(starts, cur.t_s_us, side="left")
        inside = [sources[k] for k in range(lo, hi)
                  if prev.t_e_us < sources[k][0] < cur.t_s_us]
        intervals = _merge_intervals(inside)

        cls = class_params(cur.class_id)
        cw = min(2 ** cur.retx_round * cls.cw_min, cls.cw_max)

        freeze = sum(hi_ - lo_ for lo_, hi_ in intervals)
        if any(math.isnan(hi_ - lo_) for lo_, hi_ in intervals):
            estimates.append(BackoffEstimate(i, math.nan, 0, cw, True,
                                             "missing-length"))
            continue
        defer_slots = 0.0
        prev_end = prev.t_e_us
        for lo_, hi_ in intervals:
            # a busy period can cut the defer short; credit only the idle
            # slots that actually fit before the intermediate started
            idle = lo_ - prev_end
            defer_slots += min(cls.defer_slots, (idle - T_DEF_US) / T_SLOT_US)
            prev_end = hi_
        # the defer before the node's own transmission always runs in full;
        # anything shorter is evidence, not accounting slack
        defer_slots += cls.defer_slots

        n_defers = len(intervals) + 1
        raw = (gap - n_defers * T_DEF_US - defer_slots * T_SLOT_US - freeze) \
            / T_SLOT_US
        slots = math.floor(raw + 0.5)
        excluded = False
        reason = ""
        if slots > cw - 1:
            excluded, reason = True, "unsaturated"
        elif slots < 0 and negative_policy == "exclude":
            excluded, reason = True, "negative"
        estimates.append(BackoffEstimate(i, raw, slots, cw, excluded, reason))
    return estimates


# -- distributions and the divergence detector ------------------------------


def empirical_distribution(estimates: list[BackoffEstimate]) -> BackoffDistribution:
    """Appearance frequency of each reconstructed counter value."""
    counts: dict[int, float] = {}
    for est in estimates:
        if est.excluded:
            continue
        counts[est.slots] = counts.get(est.slots, 0.0) + 1.0
    if not counts:
        raise InsufficientDataError("every estimate was excluded")
    return BackoffDistribution.from_counts(counts)


def expected_distribution(estimates: list[BackoffEstimate]) -> BackoffDistribution:
    """Counter distribution a compliant transmitter would have produced.

    The window behind each observation follows from its class and
    retransmission round; within a window the counter is uniform, so the
    expectation mixes uniform laws weighted by window frequency. Computed
    over the same non-excluded index set as the empirical distribution.
    """
    windows: dict[int, float] = {}
    total = 0
    for est in estimates:
        if est.excluded:
            continue
        windows[est.cw] = windows.get(est.cw, 0.0) + 1.0
        total += 1
    if not windows:
        raise InsufficientDataError("every estimate was excluded")
    support = np.arange(max(windows), dtype=np.int64)
    mass = np.zeros(len(support))
    for cw, count in windows.items():
        mass[:cw] += (count / total) / cw
    return BackoffDistribution(support, mass)


def js_divergence(m: BackoffDistribution, w: BackoffDistribution) -> float:
    """Base-2 Jensen-Shannon divergence, in [0, 1], zero only at equality."""
    support = sorted(set(m.values.tolist()) | set(w.values.tolist()))
    pm = m.as_dict()
    pw = w.as_dict()
    div = 0.0
    for x in support:
        a = pm.get(x, 0.0)
        b = pw.get(x, 0.0)
        c = 0.5 * (a + b)
        if a > 0:
            div += 0.5 * a * math.log2(a / c)
        if b > 0:
            div += 0.5 * b * math.log2(b / c)
    return min(max(div, 0.0), 1.0)


def render_verdict(m: BackoffDistribution, w: BackoffDistribution, delta: float,
                   n_observations: int, min_observations: int = 1,
                   enb_id: str = "") -> Optional[DetectorVerdict]:
    """Threshold decision; None when the observation count is too small."""
    if n_observations < min_observations:
        return None
    div = js_divergence(m, w)
    return DetectorVerdict(enb_id=enb_id, divergence=div, threshold=delta,
                           misbehaving=div > delta, n_observations=n_observations)


# -- whole-pipeline convenience ----------------------------------------------


@dataclass(frozen=True)
class HubConfig:
    eps_us: float = 1.0
    min_match_fraction: float = 0.8
    duration_tol_us: Optional[float] = None
    gamma_int: Optional[float] = None
    delta: float = 0.05
    min_observations: int = 1
    max_observations: Optional[int] = None      # cap the evaluated set size
    negative_policy: str = "include"


@dataclass
class EnbEvaluation:
    enb_id: str
    observations: list[MergedObservation]
    estimates: list[BackoffEstimate]
    empirical: Optional[BackoffDistribution]
    expected: Optional[BackoffDistribution]
    verdict: Optional[DetectorVerdict]
    skip_reason: str = ""


def evaluate_reports(reports: list[MonitorReport],
                     cfg: HubConfig = HubConfig()) -> dict[str, EnbEvaluation]:
    """Run the complete evaluation over a set of monitor reports."""
    merged = match_ids(reports, cfg.eps_us, cfg.min_match_fraction,
                       cfg.duration_tol_us)
    graph = infer_enb_neighborhood(merged, cfg.gamma_int)
    activity = {r.monitor_id: sorted(r.activity) for r in reports}

    out: dict[str, EnbEvaluation] = {}
    for enb_id in sorted(merged):
        obs = merged[enb_id]
        if cfg.max_observations is not None:
            obs = obs[:cfg.max_observations]
        estimates = estimate_backoff(obs, graph, activity, merged,
                                     cfg.negative_policy)
        try:
            emp = empirical_distribution(estimates)
            exp = expected_distribution(estimates)
        except InsufficientDataError as err:
            out[enb_id] = EnbEvaluation(enb_id, obs, estimates, None, None,
                                        None, skip_reason=str(err))
            continue
        verdict = render_verdict(emp, exp, cfg.delta, len(obs),
                                 cfg.min_observations, enb_id)
        reason = "" if verdict else "below minimum observation count"
        out[enb_id] = EnbEvaluation(enb_id, obs, estimates, emp, exp, verdict,
                                    skip_reason=reason)
    return out
