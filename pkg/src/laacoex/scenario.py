"""Scenario configuration files: human-readable YAML with nested node lists.

A scenario file names every node with its position, power, priority
class, traffic model and misbehavior policy, plus the run seed and event
budget. Node entries may carry ``count`` to expand into numbered
replicas, and ``position: random`` places nodes uniformly in the declared
area with a placement stream derived from the run seed, so a (file, seed)
pair always builds the same topology.
"""

from __future__ import annotations

import math
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .macsim import (MisbehaviorPolicy, NodeConfig, Scenario, TrafficModel,
                     ValidationError, class_params)


def _parse_policy(raw: Any) -> MisbehaviorPolicy:
    if raw in (None, "compliant"):
        return MisbehaviorPolicy.compliant()
    if isinstance(raw, str):
        if raw == "no_cw_growth":
            return MisbehaviorPolicy.no_cw_growth()
        raise ValidationError(f"unknown policy {raw!r}")
    if not isinstance(raw, dict) or len(raw) != 1:
        raise ValidationError(f"policy must be a name or one-key mapping, got {raw!r}")
    name, args = next(iter(raw.items()))
    args = args or {}
    if name == "cw_reduction":
        return MisbehaviorPolicy.cw_reduction(
            int(args["q_m"]), float(args["alpha"]),
            coin_per=args.get("coin_per", "draw"))
    if name == "no_cw_growth":
        return MisbehaviorPolicy.no_cw_growth()
    if name == "defer_reduction":
        return MisbehaviorPolicy.defer_reduction(int(args["defer_slots"]))
    if name == "cca_inflation":
        return MisbehaviorPolicy.cca_inflation(float(args["threshold_dbm"]))
    raise ValidationError(f"unknown policy {name!r}")


def _parse_traffic(raw: Any) -> TrafficModel:
    if raw in (None, "saturated"):
        return TrafficModel(kind="saturated")
    if raw == "idle":
        return TrafficModel(kind="idle")
    if isinstance(raw, dict) and "poisson" in raw:
        return TrafficModel(kind="poisson",
                            rate_per_s=float(raw["poisson"]["rate_per_s"]))
    raise ValidationError(f"unknown traffic model {raw!r}")


def load_scenario_dict(path) -> dict:
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict) or "nodes" not in doc:
        raise ValidationError(f"{path}: scenario file needs a 'nodes' list")
    return doc


def build_scenario(doc: dict, seed: Optional[int] = None,
                   n_events: Optional[int] = None) -> Scenario:
    """Materialize a scenario document into node configs.

    ``seed``/``n_events`` override the file's values; random placement is
    seeded from the effective run seed.
    """
    seed = int(doc.get("seed", 0)) if seed is None else int(seed)
    n_events = int(doc.get("n_events", 10_000)) if n_events is None else int(n_events)
    area = doc.get("area") or {}
    width = float(area.get("width_m", 100.0))
    height = float(area.get("height_m", 100.0))
    place_rng = np.random.default_rng(np.random.SeedSequence([seed, 0x9A7]))

    nodes: list[NodeConfig] = []
    auto_angle = 0
    for entry in doc["nodes"]:
        count = int(entry.get("count", 1))
        base_id = entry.get("id")
        if base_id is None:
            raise ValidationError("every node entry needs an id")
        for k in range(count):
            node_id = base_id if count == 1 else f"{base_id}{k}"
            raw_pos = entry.get("position", "auto")
            if raw_pos == "random":
                pos = (float(place_rng.uniform(0.0, width)),
                       float(place_rng.uniform(0.0, height)))
            elif raw_pos == "auto":
                # tight ring: everything mutually audible at default powers
                angle = 2.0 * math.pi * (auto_angle % 16) / 16.0
                radius = 3.0 + 0.5 * (auto_angle // 16)
                pos = (radius * math.cos(angle), radius * math.sin(angle))
                auto_angle += 1
            else:
                pos = (float(raw_pos[0]), float(raw_pos[1]))
            cls_raw = entry.get("class", "C3")
            if isinstance(cls_raw, dict):
                cls = class_params(cls_raw["id"], cls_raw.get("mcop_ms"))
            else:
                cls = class_params(cls_raw)
            frame_ms = entry.get("frame_ms")
            nodes.append(NodeConfig(
                node_id=node_id,
                kind=entry.get("kind", "ap"),
                position=pos,
                tx_power_dbm=float(entry.get("tx_power_dbm", 20.0)),
                cca_threshold_dbm=float(entry.get("cca_dbm", -73.0)),
                traffic_class=cls,
                traffic=_parse_traffic(entry.get("traffic")),
                policy=_parse_policy(entry.get("policy")),
                frame_duration_us=int(frame_ms * 1000) if frame_ms else None,
            ))
    return Scenario(name=str(doc.get("name", "scenario")), nodes=nodes,
                    seed=seed, n_events=n_events)


def load_scenario(path, seed: Optional[int] = None,
                  n_events: Optional[int] = None) -> Scenario:
    return build_scenario(load_scenario_dict(path), seed, n_events)


def preset_path(name: str) -> Path:
    """Resolve a shipped preset scenario by name (without extension)."""
    pkg = resources.files("laacoex") / "presets" / f"{name}.yaml"
    if not pkg.is_file():
        raise ValidationError(f"no preset scenario named {name!r}")
    return Path(str(pkg))


def resolve_scenario(ref: str) -> dict:
    """Accept either a filesystem path or a shipped preset name."""
    p = Path(ref)
    if p.is_file():
        return load_scenario_dict(p)
    return load_scenario_dict(preset_path(ref))
