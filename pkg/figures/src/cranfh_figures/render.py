"""Render experiment CSV outputs as figures.

Consumes the simulator's documented CSV schemas only; never imports the
simulator itself.  Three figure kinds are supported:

  fig_delay_vs_arrival   mean delay (ms) versus mean arrival rate (Mbps)
  fig_delay_vs_capacity  mean delay (ms) versus total fronthaul budget (Mbps)
  fig_timing             median per-slot allocation time (ms) per scheme

The first two read summary.csv (columns point, scheme, delay_ms,
delay_stderr_ms) and draw one error-bar line per scheme; the third reads
timing.csv (columns point, scheme, median_slot_ms) and draws a bar chart.
Rendering is deterministic: a fixed style, fixed scheme order and no
embedded timestamps, so re-rendering identical data gives identical bytes.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

KINDS = ("fig_delay_vs_arrival", "fig_delay_vs_capacity", "fig_timing")

# Aliases matching the experiment subcommands that produce the inputs.
KIND_ALIASES = {"fig3": "fig_delay_vs_arrival", "fig4": "fig_delay_vs_capacity",
                "timing": "fig_timing"}

_X_LABEL = {"fig_delay_vs_arrival": "Mean arrival rate (Mbps)",
            "fig_delay_vs_capacity": "Total fronthaul capacity (Mbps)"}

_SCHEME_ORDER = ("delay_aware", "throughput_optimal", "queue_weighted")
_SCHEME_LABEL = {"delay_aware": "Delay-aware allocation",
                 "throughput_optimal": "Baseline 1: throughput-optimal",
                 "queue_weighted": "Baseline 2: queue-weighted"}
_SCHEME_STYLE = {"delay_aware": ("o", "-", "tab:blue"),
                 "throughput_optimal": ("s", "--", "tab:orange"),
                 "queue_weighted": ("^", ":", "tab:green")}

_CAPTION = "Reproduced trend; absolute values depend on simulated topology draws."


class SchemaError(ValueError):
    """The input CSV does not match the documented schema."""


@dataclass
class FigureSpec:
    """One figure to render: input CSV, figure kind and output image path."""

    input_csv: str
    kind: str
    output_path: str
    xlabel: str | None = None
    ylabel: str = "Mean delay (ms)"
    title: str | None = None
    dpi: int = field(default=150)

    def __post_init__(self):
        self.kind = KIND_ALIASES.get(self.kind, self.kind)
        if self.kind not in KINDS:
            raise ValueError(f"unknown figure kind {self.kind!r}")
        if self.xlabel is None and self.kind in _X_LABEL:
            self.xlabel = _X_LABEL[self.kind]


def _required_columns(kind: str) -> tuple[str, ...]:
    if kind == "fig_timing":
        return ("point", "scheme", "median_slot_ms")
    return ("point", "scheme", "delay_ms", "delay_stderr_ms")


def read_rows(path: str, required: tuple[str, ...]) -> list[dict]:
    """Parse the CSV and validate the schema; never mutates the file."""
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames
            rows = list(reader)
    except OSError as exc:
        raise SchemaError(f"cannot read {path!r}: {exc}") from exc
    if header is None:
        raise SchemaError(f"{path}: empty CSV, no header row")
    for column in required:
        if column not in header:
            raise SchemaError(f"{path}: missing required column {column!r}")
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    out = []
    for i, row in enumerate(rows, 2):
        parsed = {"scheme": row["scheme"]}
        for column in required:
            if column == "scheme":
                continue
            try:
                parsed[column] = float(row[column])
            except (TypeError, ValueError) as exc:
                raise SchemaError(
                    f"{path}:{i}: column {column!r} is not numeric: "
                    f"{row[column]!r}") from exc
        out.append(parsed)
    return out


def _schemes_in_order(rows: list[dict]) -> list[str]:
    present = {row["scheme"] for row in rows}
    ordered = [s for s in _SCHEME_ORDER if s in present]
    ordered += sorted(present - set(_SCHEME_ORDER))
    return ordered


def _render_delay_lines(ax, rows: list[dict]) -> None:
    for scheme in _schemes_in_order(rows):
        pts = sorted((r["point"], r["delay_ms"], r["delay_stderr_ms"])
                     for r in rows if r["scheme"] == scheme)
        x, y, err = (np.array(col) for col in zip(*pts))
        marker, linestyle, color = _SCHEME_STYLE.get(scheme, ("x", "-", None))
        ax.errorbar(x, y, yerr=err, marker=marker, linestyle=linestyle,
                    color=color, capsize=3,
                    label=_SCHEME_LABEL.get(scheme, scheme))
    ax.legend()


def _render_timing_bars(ax, rows: list[dict]) -> None:
    schemes = _schemes_in_order(rows)
    medians = [float(np.median([r["median_slot_ms"] for r in rows
                                if r["scheme"] == s])) for s in schemes]
    colors = [_SCHEME_STYLE.get(s, ("x", "-", None))[2] for s in schemes]
    ax.bar([_SCHEME_LABEL.get(s, s) for s in schemes], medians, color=colors)
    ax.tick_params(axis="x", labelsize=8)


def render_figures(spec: FigureSpec):
    """Render one figure and write it to spec.output_path.

    Returns the matplotlib Figure (already saved) so callers and tests can
    inspect the drawn artists.
    """
    rows = read_rows(spec.input_csv, _required_columns(spec.kind))
    with plt.style.context("fast"):
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        if spec.kind == "fig_timing":
            _render_timing_bars(ax, rows)
            ax.set_ylabel("Median per-slot allocation time (ms)")
        else:
            _render_delay_lines(ax, rows)
            ax.set_xlabel(spec.xlabel)
            ax.set_ylabel(spec.ylabel)
        if spec.title:
            ax.set_title(spec.title)
        ax.grid(True, alpha=0.3)
        fig.text(0.5, 0.005, _CAPTION, ha="center", fontsize=7, style="italic")
        fig.tight_layout(rect=(0.0, 0.03, 1.0, 1.0))
        fig.savefig(spec.output_path, dpi=spec.dpi,
                    metadata={"Software": "cranfh-figures"})
    return fig


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="cranfh-figures",
        description="Render experiment summary/timing CSVs as figures.")
    parser.add_argument("kind", choices=sorted(KINDS) + sorted(KIND_ALIASES),
                        help="figure kind")
    parser.add_argument("input_csv", help="summary.csv or timing.csv path")
    parser.add_argument("output", help="output image path (png/pdf/svg)")
    parser.add_argument("--title", default=None)
    parser.add_argument("--dpi", type=int, default=150)
    args = parser.parse_args(argv)
    spec = FigureSpec(input_csv=args.input_csv, kind=args.kind,
                      output_path=args.output, title=args.title, dpi=args.dpi)
    try:
        fig = render_figures(spec)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 2
    plt.close(fig)
    print(f"wrote {spec.output_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
