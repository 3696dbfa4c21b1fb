"""Table and figure output for experiment results.

Tables are tab-separated with a comment header carrying the hash of the
full experiment specification, so any result file can be traced to the
exact configuration that produced it. Each table also renders to a PNG
next to the delimited file; figure files carry no volatile metadata, so
reruns are byte-identical.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .experiments import Table  # noqa: E402


def spec_hash(doc) -> str:
    canonical = json.dumps(doc, sort_keys=True, default=str)
    return hashlib.sha256(canonical.encode()).hexdigest()


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def write_table(table: Table, path, header_lines: Optional[list[str]] = None) -> None:
    lines = list(header_lines or [])
    lines.append("# " + "\t".join(table.columns))
    for row in table.rows:
        lines.append("\t".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_table(path) -> Table:
    columns: list[str] = []
    rows: list[tuple] = []
    for line in Path(path).read_text().splitlines():
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].strip().split("\t")
            if len(parts) > 1:
                columns = parts
            continue
        rows.append(tuple(line.split("\t")))
    return Table(columns, rows)


def _save(fig, path) -> None:
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)


def _numeric_or_text(labels):
    try:
        return [float(x) for x in labels], True
    except ValueError:
        return labels, False


def _mean_by(rows, key_idx, val_idx):
    acc: dict[tuple, list[float]] = {}
    for r in rows:
        key = tuple(r[i] for i in key_idx)
        acc.setdefault(key, []).append(float(r[val_idx]))
    return {k: sum(v) / len(v) for k, v in acc.items()}


def plot_attempt_rates(table: Table, path) -> None:
    """Mean attempt rate per node kind against the sweep label."""
    means = _mean_by(table.rows, (0, 3), 4)
    labels = sorted({k[0] for k in means}, key=str)
    xs, numeric = _numeric_or_text(labels)
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    for kind, marker in (("enb", "o"), ("ap", "s")):
        ys = [means.get((lab, kind)) for lab in labels]
        if any(y is not None for y in ys):
            ax.plot(xs if numeric else range(len(labels)), ys, marker=marker,
                    label={"enb": "LTE", "ap": "Wi-Fi (per AP)"}[kind])
    if not numeric:
        ax.set_xticks(range(len(labels)))
        ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=7)
    ax.set_xlabel("scenario variant")
    ax.set_ylabel("attempt rate")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def plot_saturation(table: Table, path) -> None:
    means = _mean_by(table.rows, (0, 2), 3)
    labels = sorted({k[0] for k in means}, key=str)
    nodes = sorted({k[1] for k in means})
    xs, numeric = _numeric_or_text(labels)
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    for node in nodes:
        ys = [means.get((lab, node)) for lab in labels]
        ax.plot(xs if numeric else range(len(labels)), ys, marker=".",
                label=node)
    if not numeric:
        ax.set_xticks(range(len(labels)))
        ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=7)
    ax.set_xlabel("scenario variant")
    ax.set_ylabel("queue idle fraction")
    if len(nodes) <= 8:
        ax.legend(fontsize=7)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def plot_roc(table: Table, path) -> None:
    groups: dict[tuple, list[tuple[float, float]]] = {}
    for arm, j, _delta, p_d, p_fa, _n in table.rows:
        groups.setdefault((arm, j), []).append((float(p_fa), float(p_d)))
    fig, ax = plt.subplots(figsize=(4.2, 4.0))
    for (arm, j), pts in sorted(groups.items()):
        pts = sorted(pts)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker=".",
                label=f"{arm}, J={j}")
    ax.plot([0, 1], [0, 1], ls="--", c="gray", lw=0.8)
    ax.set_xlabel("false alarm probability")
    ax.set_ylabel("detection probability")
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, 1.02)
    ax.legend(fontsize=7)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def plot_pmd(table: Table, path) -> None:
    groups: dict[tuple, list[tuple[float, float]]] = {}
    for arm, j, delta, p_md in table.rows:
        groups.setdefault((arm, j), []).append((float(delta), float(p_md)))
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    for (arm, j), pts in sorted(groups.items()):
        pts = sorted(pts)
        ax.plot([p[0] for p in pts], [p[1] for p in pts],
                label=f"{arm}, J={j}")
    ax.set_xlabel("decision threshold")
    ax.set_ylabel("misdetection probability")
    ax.legend(fontsize=7)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def plot_ignored(table: Table, path) -> None:
    means = _mean_by(table.rows, (0,), 3)
    labels = sorted(means, key=str)
    fig, ax = plt.subplots(figsize=(4.6, 3.2))
    ax.bar(range(len(labels)), [means[k] for k in labels])
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels([k[0] for k in labels], rotation=20, ha="right",
                       fontsize=8)
    ax.set_ylabel("disregarded Wi-Fi transmissions per access")
    ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    _save(fig, path)


def plot_distributions(table: Table, path) -> None:
    """Observed against expected counter mass for the first recorded run."""
    rows = table.rows
    if not rows:
        return
    first_key = rows[0][:4]
    emp = {int(r[5]): float(r[6]) for r in rows
           if r[:4] == first_key and r[4] == "observed"}
    exp = {int(r[5]): float(r[6]) for r in rows
           if r[:4] == first_key and r[4] == "expected"}
    support = sorted(set(emp) | set(exp))
    fig, ax = plt.subplots(figsize=(5.4, 3.4))
    width = 0.4
    ax.bar([v - width / 2 for v in support], [emp.get(v, 0) for v in support],
           width=width, label="observed")
    ax.bar([v + width / 2 for v in support], [exp.get(v, 0) for v in support],
           width=width, label="expected")
    ax.set_xlabel("backoff counter")
    ax.set_ylabel("probability mass")
    ax.set_title(f"{first_key[0]} seed={first_key[1]} {first_key[2]}", fontsize=8)
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


_RENDERERS = {
    "attempt_rates": plot_attempt_rates,
    "saturation": plot_saturation,
    "roc": plot_roc,
    "pmd": plot_pmd,
    "ignored": plot_ignored,
    "distributions": plot_distributions,
}


def emit_bundle(tables: dict[str, Table], out_dir, spec_doc=None) -> list[Path]:
    """Write every table as TSV plus its figure; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = []
    if spec_doc is not None:
        header.append(f"# spec_sha256={spec_hash(spec_doc)}")
    written = []
    for name in sorted(tables):
        table = tables[name]
        tsv = out / f"{name}.tsv"
        write_table(table, tsv, header)
        written.append(tsv)
        renderer = _RENDERERS.get(name)
        if renderer and table.rows:
            png = out / f"{name}.png"
            renderer(table, png)
            written.append(png)
    return written
