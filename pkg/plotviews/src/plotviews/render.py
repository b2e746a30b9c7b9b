"""Deterministic SVG figures from edgecache harness CSVs.

Input files carry their schema name on the first line (``# edgecache-…-v1``)
followed by a normal CSV header.  Two figure kinds are supported:

- ``sweep``: one line per series (policies by default) over the swept
  parameter, with a mean ± standard-error band per grid value.  Rows whose
  ``error`` column is non-empty are excluded from the statistics.
- ``loss``: training and test loss versus iteration; one file holds one
  quantizer variant's trace.

Rendering is a pure function of the CSV bytes: the SVG hash salt, fonts and
metadata are pinned, text is kept as text elements (diffable), and nothing
from the environment (paths, dates) leaks into the output.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

SWEEP_SCHEMA = "edgecache-sweep-v1"
LOSS_SCHEMA = "edgecache-loss-v1"

SWEEP_REQUIRED = ("param", "value", "policy", "energy_kj", "error")
LOSS_REQUIRED = ("iteration", "train_loss", "test_loss")

# axis captions for the swept parameters the harness emits; anything else
# falls back to the raw column value

X_LABELS = {
    "cache_capacity": "cache capacity (Mbit)",
    "deadline": "deadline (s)",
    "service_count": "number of services",
    "weight_server": "server energy weight",
    "replication": "replication",
}

_RC = {
    "svg.hashsalt": "plotviews",
    "svg.fonttype": "none",
    "font.family": "DejaVu Sans",
    "figure.figsize": (6.4, 4.2),
    "figure.dpi": 100.0,
    "axes.grid": True,
    "grid.alpha": 0.3,
}

_METADATA = {"Date": None}


class PlotSchemaError(ValueError):
    """The CSV does not match the expected harness schema."""


@dataclass
class PlotSpec:
    """What to read, how to group it, where the figure goes."""

    csv_path: str | Path
    kind: str  # "sweep" or "loss"
    out_path: str | Path
    series: str = "policy"

    def __post_init__(self):
        if self.kind not in ("sweep", "loss"):
            raise ValueError(f"unknown figure kind {self.kind!r} (expected 'sweep' or 'loss')")


def read_table(path) -> tuple[str, list[str], list[dict]]:
    """Schema name, header and data rows of a harness CSV."""
    with open(path, newline="", encoding="utf-8") as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise PlotSchemaError(f"{path}: missing '# <schema>' first line")
        schema = first[2:].strip()
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise PlotSchemaError(f"{path}: schema line but no header row") from None
        rows = [dict(zip(header, row)) for row in reader]
    return schema, header, rows


def _check(path, schema, header, expected_schema, required) -> None:
    if schema != expected_schema:
        raise PlotSchemaError(f"{path}: schema {schema!r}, expected {expected_schema!r}")
    missing = [c for c in required if c not in header]
    if missing:
        raise PlotSchemaError(f"{path}: missing columns {missing} (header has {header})")


@dataclass
class SweepSeries:
    name: str
    values: list[float] = field(default_factory=list)
    means: list[float] = field(default_factory=list)
    stderrs: list[float] = field(default_factory=list)


def _sweep_series(spec: PlotSpec, header, rows) -> tuple[str, list[SweepSeries]]:
    if spec.series not in header:
        raise PlotSchemaError(f"{spec.csv_path}: series column {spec.series!r} not in {header}")
    if not rows:
        raise PlotSchemaError(f"{spec.csv_path}: no data rows")
    groups: dict[str, dict[float, list[float]]] = {}
    for row in rows:
        if row.get("error"):
            continue
        groups.setdefault(row[spec.series], {}).setdefault(
            float(row["value"]), []
        ).append(float(row["energy_kj"]))
    out = []
    for name, by_value in groups.items():
        s = SweepSeries(name)
        for value in sorted(by_value):
            es = by_value[value]
            mean = sum(es) / len(es)
            if len(es) > 1:
                var = sum((e - mean) ** 2 for e in es) / (len(es) - 1)
                stderr = math.sqrt(var / len(es))
            else:
                stderr = 0.0
            s.values.append(value)
            s.means.append(mean)
            s.stderrs.append(stderr)
        out.append(s)
    if not out:
        raise PlotSchemaError(f"{spec.csv_path}: every row carries an error; nothing to plot")
    return rows[0]["param"], out


def _render_sweep(spec: PlotSpec, ax) -> None:
    schema, header, rows = read_table(spec.csv_path)
    _check(spec.csv_path, schema, header, SWEEP_SCHEMA, SWEEP_REQUIRED)
    param, series = _sweep_series(spec, header, rows)
    for s in series:
        ax.plot(s.values, s.means, marker="o", label=s.name)
        lo = [m - e for m, e in zip(s.means, s.stderrs)]
        hi = [m + e for m, e in zip(s.means, s.stderrs)]
        ax.fill_between(s.values, lo, hi, alpha=0.2)
    ax.set_xlabel(X_LABELS.get(param, param))
    ax.set_ylabel("expected weighted energy (kJ)")
    ax.legend()


def _render_loss(spec: PlotSpec, ax) -> None:
    schema, header, rows = read_table(spec.csv_path)
    _check(spec.csv_path, schema, header, LOSS_SCHEMA, LOSS_REQUIRED)
    if not rows:
        raise PlotSchemaError(f"{spec.csv_path}: no data rows")
    iters = [int(r["iteration"]) for r in rows]
    ax.plot(iters, [float(r["train_loss"]) for r in rows], label="train")
    ax.plot(iters, [float(r["test_loss"]) for r in rows], label="test")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.legend()


def render(spec: PlotSpec) -> Path:
    """Write the figure for ``spec`` and return its output path."""
    out = Path(spec.out_path)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        try:
            if spec.kind == "sweep":
                _render_sweep(spec, ax)
            else:
                _render_loss(spec, ax)
            fig.tight_layout()
            out.parent.mkdir(parents=True, exist_ok=True)
            fig.savefig(out, format="svg", metadata=dict(_METADATA))
        finally:
            plt.close(fig)
    return out
