"""Experiment orchestration: simulate, monitor, evaluate, aggregate.

An experiment reference names a base scenario plus either a sweep (a list
of labeled patches applied to the scenario document) or two arms
(compliant and misbehaving) for detector operating curves. Each (variant,
seed) pair runs the full simulate - monitor - evaluate pipeline; results
land in flat tables keyed by variant label and seed, deterministic for a
given specification.
"""

from __future__ import annotations

import copy
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from . import hub as hub_mod
from . import monitor as mon
from .macsim import EventTrace, attempt_rate, ignored_transmissions, run_sim, \
    saturation_level
from .scenario import build_scenario
from .macsim import ValidationError


@dataclass(frozen=True)
class RocPoint:
    """One operating point of the detector."""

    delta: float
    p_d: float
    p_fa: float
    n_trials: int

    def __post_init__(self):
        if not (0.0 <= self.p_d <= 1.0 and 0.0 <= self.p_fa <= 1.0):
            raise ValidationError("probabilities must lie in [0, 1]")


def roc_sweep(compliant_runs: Sequence[float], misbehaving_runs: Sequence[float],
              delta_grid: Iterable[float]) -> list[RocPoint]:
    """Detection and false-alarm rates over a threshold grid.

    Each run contributes its divergence value; a run counts as flagged
    when the divergence strictly exceeds the threshold.
    """
    compliant = list(compliant_runs)
    misbehaving = list(misbehaving_runs)
    if not compliant or not misbehaving:
        raise ValidationError("both run sets must be non-empty")
    points = []
    for delta in delta_grid:
        p_d = float(np.mean([d > delta for d in misbehaving]))
        p_fa = float(np.mean([d > delta for d in compliant]))
        points.append(RocPoint(float(delta), p_d, p_fa,
                               min(len(compliant), len(misbehaving))))
    return points


# -- experiment specification ------------------------------------------------


def apply_patch(doc: dict, patch: dict[str, Any]) -> dict:
    """Return a deep copy of the scenario document with paths overridden.

    Paths are dot-separated; the segment ``nodes[<id>]`` selects the node
    entry whose id matches. Example: ``nodes[enb0].policy``.
    """
    out = copy.deepcopy(doc)
    for path, value in patch.items():
        target = out
        parts = path.split(".")
        for k, part in enumerate(parts):
            last = k == len(parts) - 1
            if part.startswith("nodes[") and part.endswith("]"):
                node_id = part[len("nodes["):-1]
                entries = [n for n in target["nodes"] if n.get("id") == node_id]
                if not entries:
                    raise ValidationError(f"patch path {path!r}: no node {node_id!r}")
                nxt = entries[0]
            else:
                if last:
                    target[part] = copy.deepcopy(value)
                    break
                nxt = target.setdefault(part, {})
            target = nxt
    return out


@dataclass
class ExperimentSpec:
    """Everything needed to reproduce one experiment end to end."""

    name: str
    scenario: dict
    seeds: list[int]
    n_events: Optional[int] = None
    sweep: list[dict] = field(default_factory=list)       # {label, patch}
    arms: Optional[dict[str, dict]] = None                # name -> {patch}
    delta_grid: Optional[list[float]] = None
    j_values: list[Optional[int]] = field(default_factory=lambda: [None])
    hub: hub_mod.HubConfig = field(default_factory=hub_mod.HubConfig)
    target_enb: Optional[str] = None
    outputs: tuple[str, ...] = ("attempt_rates", "saturation", "verdicts",
                                "divergences")

    def __post_init__(self):
        if not self.seeds:
            raise ValidationError("at least one seed required")
        if self.sweep is not None and self.arms and self.sweep:
            raise ValidationError("an experiment uses either a sweep or arms")
        seen = set()
        for entry in self.sweep:
            if "label" not in entry:
                raise ValidationError("sweep entries need a label")
            if entry["label"] in seen:
                raise ValidationError(f"duplicate sweep label {entry['label']!r}")
            seen.add(entry["label"])

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentSpec":
        if "scenario" not in doc:
            raise ValidationError("experiment needs an inline scenario")
        seeds = doc.get("seeds", [1])
        if isinstance(seeds, int):
            seeds = list(range(1, seeds + 1))
        grid = doc.get("delta_grid")
        if isinstance(grid, dict):
            grid = list(np.arange(grid["start"], grid["stop"], grid["step"]))
        hub_cfg = hub_mod.HubConfig(**doc.get("hub", {}))
        return cls(
            name=doc.get("name", "experiment"),
            scenario=doc["scenario"],
            seeds=[int(s) for s in seeds],
            n_events=doc.get("n_events"),
            sweep=doc.get("sweep", []) or [],
            arms=doc.get("arms"),
            delta_grid=[float(g) for g in grid] if grid else None,
            j_values=doc.get("j_values", [None]),
            hub=hub_cfg,
            target_enb=doc.get("target_enb"),
            outputs=tuple(doc.get("outputs", ("attempt_rates", "saturation",
                                              "verdicts", "divergences"))),
        )


@dataclass
class Table:
    columns: list[str]
    rows: list[tuple]


@dataclass
class RunResult:
    """Metrics of one (variant, seed) pipeline run."""

    label: str
    seed: int
    attempt_rates: dict[str, float]
    eta: dict[str, float]
    node_kinds: dict[str, str]
    ignored: dict[str, float]
    divergence: dict[tuple[str, Optional[int]], tuple[int, float, bool]]
    distributions: dict[tuple[str, Optional[int]],
                        tuple[dict[int, float], dict[int, float]]]


def _map_hub_to_nodes(trace: EventTrace,
                      merged: dict[str, list[hub_mod.MergedObservation]],
                      eps_us: float = 1.0) -> dict[str, str]:
    """Best-effort mapping from hub transmitter ids to simulator node ids."""
    out = {}
    enb_events = {nid: [e.t_s_us for e in trace.events if e.node_id == nid]
                  for nid in trace.enb_ids()}
    for hub_id, obs in merged.items():
        votes: dict[str, int] = {}
        for o in obs[:20]:
            for nid, starts in enb_events.items():
                if any(abs(o.t_s_us - t) <= eps_us for t in starts):
                    votes[nid] = votes.get(nid, 0) + 1
        if votes:
            out[hub_id] = max(sorted(votes), key=lambda k: votes[k])
    return out


def run_single(doc: dict, seed: int, n_events: Optional[int],
               hub_cfg: hub_mod.HubConfig,
               j_values: Sequence[Optional[int]] = (None,),
               label: str = "", collect_distributions: bool = False
               ) -> RunResult:
    """One full pipeline pass: simulate, monitor at every AP, evaluate."""
    scen = build_scenario(doc, seed=seed, n_events=n_events)
    trace = run_sim(scen)

    rates = {nid: attempt_rate(trace, nid) for nid in trace.nodes}
    eta = {nid: saturation_level(trace, nid) for nid in trace.nodes}
    kinds = {nid: cfg.kind for nid, cfg in trace.nodes.items()}
    ignored = {}
    for nid in trace.enb_ids():
        try:
            ignored[nid] = ignored_transmissions(trace, nid)
        except Exception:
            ignored[nid] = 0.0

    reports = [mon.observe_trace(trace, ap) for ap in trace.ap_ids()]
    merged = hub_mod.match_ids(reports, hub_cfg.eps_us,
                               hub_cfg.min_match_fraction,
                               hub_cfg.duration_tol_us)
    graph = hub_mod.infer_enb_neighborhood(merged, hub_cfg.gamma_int)
    activity = {r.monitor_id: sorted(r.activity) for r in reports}
    naming = _map_hub_to_nodes(trace, merged, hub_cfg.eps_us)

    divergence = {}
    distributions = {}
    for hub_id in sorted(merged):
        node_name = naming.get(hub_id, hub_id)
        for j in j_values:
            obs = merged[hub_id] if j is None else merged[hub_id][:j]
            if len(obs) < 2:
                continue
            estimates = hub_mod.estimate_backoff(obs, graph, activity, merged,
                                                 hub_cfg.negative_policy)
            try:
                emp = hub_mod.empirical_distribution(estimates)
                exp = hub_mod.expected_distribution(estimates)
            except hub_mod.InsufficientDataError:
                continue
            div = hub_mod.js_divergence(emp, exp)
            flagged = div > hub_cfg.delta
            divergence[(node_name, j)] = (len(obs), div, flagged)
            if collect_distributions:
                distributions[(node_name, j)] = (emp.as_dict(), exp.as_dict())

    return RunResult(label=label, seed=seed, attempt_rates=rates, eta=eta,
                     node_kinds=kinds, ignored=ignored, divergence=divergence,
                     distributions=distributions)


def _job(args) -> RunResult:
    doc, seed, n_events, hub_cfg, j_values, label, collect = args
    return run_single(doc, seed, n_events, hub_cfg, j_values, label, collect)


def run_experiment(spec: ExperimentSpec, n_jobs: int = 1) -> dict[str, Table]:
    """Execute every (variant, seed) run and aggregate the metric tables."""
    variants: list[tuple[str, dict]] = []
    if spec.arms:
        for arm in sorted(spec.arms):
            variants.append((arm, apply_patch(spec.scenario,
                                              spec.arms[arm].get("patch", {}))))
    elif spec.sweep:
        for entry in spec.sweep:
            variants.append((str(entry["label"]),
                             apply_patch(spec.scenario, entry.get("patch", {}))))
    else:
        variants.append(("base", spec.scenario))

    jobs = []
    for label, doc in variants:
        for k, seed in enumerate(spec.seeds):
            collect = "distributions" in spec.outputs and k == 0
            jobs.append((doc, seed, spec.n_events, spec.hub, tuple(spec.j_values),
                         label, collect))

    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_job, jobs))
    else:
        results = [_job(j) for j in jobs]

    tables: dict[str, Table] = {}

    def want(name):
        return name in spec.outputs

    if want("attempt_rates"):
        rows = [(r.label, r.seed, nid, r.node_kinds[nid], rate)
                for r in results for nid, rate in sorted(r.attempt_rates.items())]
        tables["attempt_rates"] = Table(
            ["label", "seed", "node", "kind", "attempt_rate"], rows)
    if want("saturation"):
        rows = [(r.label, r.seed, nid, eta)
                for r in results for nid, eta in sorted(r.eta.items())]
        tables["saturation"] = Table(["label", "seed", "node", "eta"], rows)
    if want("ignored"):
        rows = [(r.label, r.seed, nid, v)
                for r in results for nid, v in sorted(r.ignored.items())]
        tables["ignored"] = Table(
            ["label", "seed", "enb", "ignored_per_access"], rows)
    if want("divergences") or want("verdicts"):
        div_rows = []
        verdict_rows = []
        for r in results:
            for (node, j), (n_obs, div, flagged) in sorted(
                    r.divergence.items(), key=lambda kv: (kv[0][0], str(kv[0][1]))):
                jtxt = "all" if j is None else j
                div_rows.append((r.label, r.seed, node, jtxt, n_obs, div))
                verdict_rows.append((r.label, r.seed, node, jtxt, n_obs, div,
                                     spec.hub.delta, int(flagged)))
        if want("divergences"):
            tables["divergences"] = Table(
                ["label", "seed", "enb", "j", "n_obs", "divergence"], div_rows)
        if want("verdicts"):
            tables["verdicts"] = Table(
                ["label", "seed", "enb", "j", "n_obs", "divergence", "delta",
                 "misbehaving"], verdict_rows)
    if want("distributions"):
        rows = []
        for r in results:
            for (node, j), (emp, exp) in sorted(
                    r.distributions.items(), key=lambda kv: (kv[0][0], str(kv[0][1]))):
                jtxt = "all" if j is None else j
                rows.extend((r.label, r.seed, node, jtxt, "observed", v, m)
                            for v, m in sorted(emp.items()))
                rows.extend((r.label, r.seed, node, jtxt, "expected", v, m)
                            for v, m in sorted(exp.items()))
        tables["distributions"] = Table(
            ["label", "seed", "enb", "j", "which", "value", "mass"], rows)

    if want("roc") and spec.arms and spec.delta_grid:
        target = spec.target_enb or _first_enb_id(spec.scenario)
        roc_rows = []
        pmd_rows = []
        for j in spec.j_values:
            per_arm: dict[str, list[float]] = {}
            for r in results:
                entry = r.divergence.get((target, j))
                if entry:
                    per_arm.setdefault(r.label, []).append(entry[1])
            arm_names = sorted(per_arm)
            if "compliant" in per_arm and len(arm_names) >= 2:
                jtxt = "all" if j is None else j
                for arm in arm_names:
                    if arm == "compliant":
                        continue
                    points = roc_sweep(per_arm["compliant"], per_arm[arm],
                                       spec.delta_grid)
                    roc_rows.extend((arm, jtxt, p.delta, p.p_d, p.p_fa, p.n_trials)
                                    for p in points)
                    pmd_rows.extend((arm, jtxt, p.delta, 1.0 - p.p_d)
                                    for p in points)
        tables["roc"] = Table(["arm", "j", "delta", "p_d", "p_fa", "n_trials"],
                              roc_rows)
        if want("pmd"):
            tables["pmd"] = Table(["arm", "j", "delta", "p_md"], pmd_rows)

    return tables


def _first_enb_id(doc: dict) -> str:
    for entry in doc.get("nodes", []):
        if entry.get("kind") == "enb":
            node_id = entry["id"]
            return node_id if int(entry.get("count", 1)) == 1 else f"{node_id}0"
    raise ValidationError("scenario declares no eNB")
