"""Command-line harness: simulate, detect, experiment, roc.

The default output directory comes from the LAACOEX_OUT environment
variable (falling back to the current directory); any report-producing
verb writes tab-separated tables and renders the matching figures next
to them.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import hub as hub_mod
from . import macsim, monitor, reporting
from .experiments import ExperimentSpec, Table, roc_sweep, run_experiment
from .scenario import build_scenario, load_scenario_dict, preset_path


def _default_out() -> Path:
    return Path(os.environ.get("LAACOEX_OUT", "."))


def _resolve_doc(ref: str) -> dict:
    p = Path(ref)
    if p.is_file():
        return load_scenario_dict(p)
    return load_scenario_dict(preset_path(ref))


def _hub_config(args) -> hub_mod.HubConfig:
    return hub_mod.HubConfig(
        eps_us=args.eps, min_match_fraction=args.match_fraction,
        gamma_int=args.gamma_int, delta=args.delta,
        min_observations=args.min_obs, max_observations=args.max_obs,
        negative_policy=args.negative_policy)


def cmd_simulate(args) -> int:
    doc = _resolve_doc(args.scenario)
    scen = build_scenario(doc, seed=args.seed, n_events=args.events)
    trace = macsim.run_sim(scen)
    out = Path(args.out) if args.out else _default_out() / f"{scen.name}-trace.tsv"
    out.parent.mkdir(parents=True, exist_ok=True)
    macsim.write_trace(trace, out)
    print(f"wrote {len(trace.events)} events to {out}")
    if args.reports_dir:
        rep_dir = Path(args.reports_dir)
        rep_dir.mkdir(parents=True, exist_ok=True)
        for ap in trace.ap_ids():
            rep = monitor.observe_trace(trace, ap)
            monitor.write_report(rep, rep_dir / f"{ap}.obs.tsv",
                                 rep_dir / f"{ap}.act.tsv")
        print(f"wrote {len(trace.ap_ids())} monitor reports to {rep_dir}")
    return 0


def cmd_detect(args) -> int:
    rep_dir = Path(args.reports)
    obs_files = sorted(rep_dir.glob("*.obs.tsv"))
    if not obs_files:
        print(f"no *.obs.tsv files under {rep_dir}", file=sys.stderr)
        return 2
    reports = []
    for obs_path in obs_files:
        act_path = obs_path.with_name(obs_path.name.replace(".obs.", ".act."))
        reports.append(monitor.read_report(obs_path, act_path))
    result = hub_mod.evaluate_reports(reports, _hub_config(args))

    verdict_rows = []
    dist_rows = []
    for enb_id, ev in sorted(result.items()):
        if ev.verdict:
            v = ev.verdict
            verdict_rows.append((enb_id, v.n_observations, v.divergence,
                                 v.threshold, int(v.misbehaving)))
        else:
            verdict_rows.append((enb_id, len(ev.observations), float("nan"),
                                 args.delta, -1))
        if ev.empirical is not None:
            dist_rows.extend((enb_id, 0, enb_id, "all", "observed", v, m)
                             for v, m in sorted(ev.empirical.as_dict().items()))
            dist_rows.extend((enb_id, 0, enb_id, "all", "expected", v, m)
                             for v, m in sorted(ev.expected.as_dict().items()))

    out_dir = Path(args.out_dir) if args.out_dir else _default_out() / "detect"
    tables = {
        "verdicts": Table(["enb", "n_obs", "divergence", "delta", "misbehaving"],
                          verdict_rows),
        "distributions": Table(["label", "seed", "enb", "j", "which",
                                "value", "mass"], dist_rows),
    }
    reporting.emit_bundle(tables, out_dir)
    for row in verdict_rows:
        state = {1: "misbehaving", 0: "compliant", -1: "no-verdict"}[row[4]]
        print(f"{row[0]}\tn={row[1]}\tdivergence={row[2]:.4f}\t{state}")
    return 0


def cmd_experiment(args) -> int:
    doc = _resolve_doc(args.spec)
    spec = ExperimentSpec.from_dict(doc)
    if args.seeds:
        spec.seeds = [int(s) for s in args.seeds.split(",")]
    tables = run_experiment(spec, n_jobs=args.jobs)
    out_dir = Path(args.out_dir) if args.out_dir else _default_out() / spec.name
    written = reporting.emit_bundle(tables, out_dir, doc)
    for path in written:
        print(f"wrote {path}")
    return 0


def _parse_grid(text: str) -> list[float]:
    lo, hi, step = (float(x) for x in text.split(":"))
    return list(np.arange(lo, hi, step))


def _collect_divergences(root: Path) -> list[float]:
    values = []
    for path in sorted(root.rglob("divergences.tsv")):
        table = reporting.read_table(path)
        idx = table.columns.index("divergence")
        values.extend(float(r[idx]) for r in table.rows)
    for path in sorted(root.rglob("verdicts.tsv")):
        table = reporting.read_table(path)
        if "divergence" in table.columns:
            idx = table.columns.index("divergence")
            for r in table.rows:
                try:
                    v = float(r[idx])
                except ValueError:
                    continue
                if not np.isnan(v):
                    values.append(v)
        break
    return values


def cmd_roc(args) -> int:
    compliant = _collect_divergences(Path(args.compliant_dir))
    misbehaving = _collect_divergences(Path(args.misbehaving_dir))
    if not compliant or not misbehaving:
        print("need divergence tables under both directories", file=sys.stderr)
        return 2
    points = roc_sweep(compliant, misbehaving, _parse_grid(args.delta_grid))
    rows = [("misbehaving", "all", p.delta, p.p_d, p.p_fa, p.n_trials)
            for p in points]
    out_dir = Path(args.out_dir) if args.out_dir else _default_out() / "roc"
    reporting.emit_bundle(
        {"roc": Table(["arm", "j", "delta", "p_d", "p_fa", "n_trials"], rows)},
        out_dir)
    best = max(points, key=lambda p: p.p_d - p.p_fa)
    print(f"best operating point: delta={best.delta:.4f} "
          f"p_d={best.p_d:.3f} p_fa={best.p_fa:.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="laacoex",
        description="LTE-LAA / Wi-Fi coexistence simulation and "
                    "misbehavior detection")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run one scenario, write the trace")
    sim.add_argument("scenario", help="scenario file or preset name")
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--events", type=int, default=None)
    sim.add_argument("--out", default=None, help="trace output path")
    sim.add_argument("--reports-dir", default=None,
                     help="also write per-AP monitor reports here")
    sim.set_defaults(func=cmd_simulate)

    det = sub.add_parser("detect", help="evaluate monitor reports")
    det.add_argument("reports", help="directory of *.obs.tsv / *.act.tsv files")
    det.add_argument("--delta", type=float, default=0.05)
    det.add_argument("--min-obs", type=int, default=1)
    det.add_argument("--max-obs", type=int, default=None)
    det.add_argument("--eps", type=float, default=1.0)
    det.add_argument("--match-fraction", type=float, default=0.8)
    det.add_argument("--gamma-int", type=float, default=None)
    det.add_argument("--negative-policy", choices=("include", "exclude"),
                     default="include")
    det.add_argument("--out-dir", default=None)
    det.set_defaults(func=cmd_detect)

    exp = sub.add_parser("experiment", help="run a sweep or ROC experiment")
    exp.add_argument("spec", help="experiment file or preset name")
    exp.add_argument("--out-dir", default=None)
    exp.add_argument("--jobs", type=int, default=1)
    exp.add_argument("--seeds", default=None,
                     help="comma-separated seed override")
    exp.set_defaults(func=cmd_experiment)

    roc = sub.add_parser("roc", help="sweep thresholds over stored divergences")
    roc.add_argument("compliant_dir")
    roc.add_argument("misbehaving_dir")
    roc.add_argument("--delta-grid", default="0:0.5:0.005",
                     help="lo:hi:step")
    roc.add_argument("--out-dir", default=None)
    roc.set_defaults(func=cmd_roc)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
