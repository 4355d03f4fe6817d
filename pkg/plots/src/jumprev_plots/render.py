"""Render figures from jumprev CSV outputs.

Pure presentation: every number plotted comes straight out of a CSV written
by the primary pipeline; nothing is recomputed here.  Four figure kinds:

    marginal_heatmap    marginals.csv          (t, c0[, c1...], mass)
    backward_intensity  reversal_report.csv    empirical vs theoretical rates
    zscore_hist         reversal_report.csv    z histogram with N(0,1) overlay
    entropy_curve       entropy.csv            running term vs grid resolution

Usage: jumprev-plots --in CSV [--in CSV...] --kind KIND --out IMAGE
Output format (png/svg) follows the --out extension; writes are atomic
(temp file + rename).  Schema mismatches exit nonzero naming the missing
column; a header-only CSV renders empty axes and exits 0.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
import tempfile
from dataclasses import dataclass
from typing import List, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

KINDS = ("marginal_heatmap", "backward_intensity", "zscore_hist", "entropy_curve")

_REQUIRED = {
    "marginal_heatmap": ("t", "c0", "mass"),
    "backward_intensity": ("t_lo", "t_hi", "from", "to", "empirical",
                           "theoretical", "stderr", "usable"),
    "zscore_hist": ("z", "usable"),
    "entropy_curve": ("n_time_points", "running_term", "quadrature_error"),
}


class SchemaError(ValueError):
    """Input CSV does not match the documented schema."""


@dataclass(frozen=True)
class FigureSpec:
    inputs: Sequence[str]
    kind: str
    out: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"unknown figure kind {self.kind!r}")
        if not self.inputs:
            raise SchemaError("at least one input CSV is required")


def _read_rows(path: str, required: Sequence[str]) -> List[dict]:
    if not os.path.exists(path):
        raise SchemaError(f"input file {path} does not exist")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [col for col in required if col not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
        return list(reader)


def _atomic_save(fig, out: str) -> None:
    directory = os.path.dirname(os.path.abspath(out)) or "."
    os.makedirs(directory, exist_ok=True)
    suffix = os.path.splitext(out)[1] or ".png"
    fd, tmp = tempfile.mkstemp(suffix=suffix, dir=directory)
    os.close(fd)
    try:
        fig.savefig(tmp, format=suffix.lstrip("."), dpi=150)
        os.replace(tmp, out)
    finally:
        plt.close(fig)
        if os.path.exists(tmp):
            os.unlink(tmp)


def _empty_axes(title: str):
    fig, ax = plt.subplots(figsize=(7, 5))
    ax.set_title(title + " (no data)")
    return fig


def _marginal_heatmap(rows: List[dict], out: str) -> None:
    if not rows:
        _atomic_save(_empty_axes("marginal flow"), out)
        return
    times = sorted({float(r["t"]) for r in rows})
    cells = sorted({float(r["c0"]) for r in rows})
    t_idx = {t: i for i, t in enumerate(times)}
    c_idx = {c: i for i, c in enumerate(cells)}
    grid = [[0.0] * len(times) for _ in cells]
    for r in rows:
        grid[c_idx[float(r["c0"])]][t_idx[float(r["t"])]] = float(r["mass"])
    fig, ax = plt.subplots(figsize=(8, 5))
    mesh = ax.pcolormesh(times, cells, grid, shading="nearest", cmap="viridis")
    fig.colorbar(mesh, ax=ax, label="mass")
    ax.set_xlabel("t")
    ax.set_ylabel("state / bin center")
    ax.set_title("marginal flow")
    _atomic_save(fig, out)


def _backward_intensity(rows: List[dict], out: str) -> None:
    usable = [r for r in rows if r["usable"] == "1"]
    if not usable:
        _atomic_save(_empty_axes("backward intensity"), out)
        return
    # group by transition, keep the best-populated transitions readable
    by_pair: dict = {}
    for r in usable:
        by_pair.setdefault((r["from"], r["to"]), []).append(r)
    ranked = sorted(by_pair.items(),
                    key=lambda kv: -sum(float(r.get("count", 0) or 0) for r in kv[1]))
    fig, ax = plt.subplots(figsize=(8, 5))
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for color, ((src, dst), series) in zip(colors, ranked[:8]):
        series.sort(key=lambda r: float(r["t_lo"]))
        mid = [0.5 * (float(r["t_lo"]) + float(r["t_hi"])) for r in series]
        emp = [float(r["empirical"]) for r in series]
        err = [3.0 * float(r["stderr"]) for r in series]
        theo = [float(r["theoretical"]) for r in series]
        ax.errorbar(mid, emp, yerr=err, fmt="o", color=color, capsize=3,
                    label=f"{src}->{dst} empirical +-3 sigma")
        ax.plot(mid, theo, "-", color=color, alpha=0.6)
    ax.set_xlabel("t")
    ax.set_ylabel("backward jump rate")
    ax.set_title("empirical vs theoretical backward intensity")
    ax.legend(fontsize=7)
    _atomic_save(fig, out)


def _zscore_hist(rows: List[dict], out: str) -> None:
    zs = [float(r["z"]) for r in rows
          if r["usable"] == "1" and math.isfinite(float(r["z"]))]
    if not zs:
        _atomic_save(_empty_axes("z scores"), out)
        return
    fig, ax = plt.subplots(figsize=(7, 5))
    ax.hist(zs, bins=max(10, int(math.sqrt(len(zs)) * 2)), density=True,
            alpha=0.7, label="cells")
    lo, hi = min(min(zs), -4.0), max(max(zs), 4.0)
    xs = [lo + (hi - lo) * i / 200 for i in range(201)]
    ax.plot(xs, [math.exp(-x * x / 2) / math.sqrt(2 * math.pi) for x in xs],
            "k-", label="N(0,1)")
    ax.set_xlabel("z")
    ax.set_ylabel("density")
    ax.set_title("per-cell z scores")
    ax.legend()
    _atomic_save(fig, out)


def _entropy_curve(rows: List[dict], out: str) -> None:
    if not rows:
        _atomic_save(_empty_axes("entropy convergence"), out)
        return
    rows = sorted(rows, key=lambda r: int(r["n_time_points"]))
    ns = [int(r["n_time_points"]) for r in rows]
    running = [float(r["running_term"]) for r in rows]
    errs = [float(r["quadrature_error"]) for r in rows]
    fig, ax = plt.subplots(figsize=(7, 5))
    ax.errorbar(ns, running, yerr=errs, fmt="o-", capsize=4)
    ax.set_xlabel("time-grid points")
    ax.set_ylabel("running entropy term")
    ax.set_title("entropy vs time-grid resolution")
    _atomic_save(fig, out)


_RENDERERS = {
    "marginal_heatmap": _marginal_heatmap,
    "backward_intensity": _backward_intensity,
    "zscore_hist": _zscore_hist,
    "entropy_curve": _entropy_curve,
}


def render(spec: FigureSpec) -> None:
    """Read, validate, and draw; never mutates the inputs."""
    rows: List[dict] = []
    for path in spec.inputs:
        rows.extend(_read_rows(path, _REQUIRED[spec.kind]))
    _RENDERERS[spec.kind](rows, spec.out)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="jumprev-plots",
        description="render figures from jumprev CSV outputs")
    parser.add_argument("--in", dest="inputs", action="append", required=True,
                        metavar="CSV", help="input CSV (repeatable)")
    parser.add_argument("--kind", choices=KINDS, required=True)
    parser.add_argument("--out", required=True, help="output image (.png or .svg)")
    args = parser.parse_args(argv)
    try:
        render(FigureSpec(inputs=args.inputs, kind=args.kind, out=args.out))
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
