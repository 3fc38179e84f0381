"""Histogram tables and figures from simulation outputs."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.collections import LineCollection  # noqa: E402

from .errors import MalformedRow  # noqa: E402

HISTOGRAM_COLUMNS = ("bin_start", "bin_end", "count")


@dataclass(frozen=True)
class Family:
    name: str
    column: str
    xlabel: str
    integer: bool = False
    scale: float = 1.0


# one histogram per per-vehicle output column
VEHICLE_FAMILIES = (
    Family("departure_time", "departure_s", "departure time (h)", scale=1 / 3600),
    Family("edges_per_path", "n_edges", "edges per path", integer=True),
    Family("distance", "distance_m", "distance (km)", scale=1e-3),
    Family("fuel", "fuel_mL", "fuel (L)", scale=1e-3),
)


def histogram(values, bins: int = 30, integer: bool = False) -> list[tuple[float, float, int]]:
    """``(bin_start, bin_end, count)`` rows; integer data gets unit-wide bins."""
    values = np.asarray(values, dtype=float)
    values = values[np.isfinite(values)]
    if values.size == 0:
        return []
    if integer:
        lo, hi = math.floor(values.min()), math.floor(values.max())
        edges = np.arange(lo, hi + 2, dtype=float) - 0.5
    else:
        lo, hi = float(values.min()), float(values.max())
        if hi == lo:
            hi = lo + 1.0
        edges = np.linspace(lo, hi, bins + 1)
    counts, edges = np.histogram(values, bins=edges)
    return [(float(a), float(b), int(c)) for a, b, c in zip(edges[:-1], edges[1:], counts)]


def write_histogram_csv(rows, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTOGRAM_COLUMNS)
        for a, b, c in rows:
            w.writerow([repr(a), repr(b), c])


def read_histogram_csv(path) -> list[tuple[float, float, int]]:
    """Read and validate a histogram table (ordered, contiguous, counts >= 0)."""
    path = Path(path)
    rows = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != HISTOGRAM_COLUMNS:
            raise MalformedRow(path, 1, f"expected header {','.join(HISTOGRAM_COLUMNS)}")
        for line, row in enumerate(reader, start=2):
            try:
                a, b, c = float(row[0]), float(row[1]), int(row[2])
            except (IndexError, ValueError) as exc:
                raise MalformedRow(path, line, str(exc)) from None
            if not b > a or c < 0:
                raise MalformedRow(path, line, "need bin_end > bin_start and count >= 0")
            if rows and not math.isclose(rows[-1][1], a, rel_tol=1e-12, abs_tol=1e-12):
                raise MalformedRow(path, line, "bins are not contiguous")
            rows.append((a, b, c))
    return rows


def plot_histogram(rows, path, xlabel: str, title: str | None = None) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    if rows:
        starts = [r[0] for r in rows]
        widths = [r[1] - r[0] for r in rows]
        ax.bar(starts, [r[2] for r in rows], width=widths, align="edge", edgecolor="black", linewidth=0.4)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("count")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def read_vehicle_columns(path) -> dict[str, np.ndarray]:
    """Numeric columns of a per-vehicle CSV; blank cells become NaN."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        names = [f.column for f in VEHICLE_FAMILIES]
        missing = [n for n in names if n not in (reader.fieldnames or [])]
        if missing:
            raise MalformedRow(path, 1, f"missing columns {missing}")
        cols: dict = {n: [] for n in names}
        for line, row in enumerate(reader, start=2):
            for n in names:
                cell = row[n]
                try:
                    cols[n].append(float(cell) if cell not in ("", None) else math.nan)
                except ValueError:
                    raise MalformedRow(path, line, f"bad {n} value {cell!r}") from None
    return {n: np.array(v) for n, v in cols.items()}


def utilization_map(g, edge_means: dict, path, title: str = "mean utilization") -> None:
    """Draw each edge colored by its mean utilization (grey when never used)."""
    fig, ax = plt.subplots(figsize=(6, 6))
    segs, values = [], []
    for key, e in g.edges.items():
        a, b = g.nodes[e.u], g.nodes[e.v]
        segs.append([(a.lon, a.lat), (b.lon, b.lat)])
        values.append(edge_means.get(key, np.nan))
    values = np.array(values)
    used = ~np.isnan(values)
    if (~used).any():
        ax.add_collection(LineCollection([s for s, u in zip(segs, used) if not u],
                                         colors="lightgrey", linewidths=0.5))
    if used.any():
        lc = LineCollection([s for s, u in zip(segs, used) if u], cmap="inferno_r", linewidths=1.5)
        lc.set_array(values[used])
        lc.set_clim(0.0, 1.0)
        ax.add_collection(lc)
        fig.colorbar(lc, ax=ax, label="utilization")
    ax.autoscale()
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel("longitude")
    ax.set_ylabel("latitude")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def read_edge_series_means(path) -> dict:
    """Mean utilization per edge key ``(u, v, k)`` from an edge time-series CSV."""
    path = Path(path)
    sums: dict = {}
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if not {"edge", "utilization"} <= set(reader.fieldnames or []):
            raise MalformedRow(path, 1, "expected edge,interval_start_s,utilization,mean_speed_mps")
        for line, row in enumerate(reader, start=2):
            try:
                u, v, k = (int(x) for x in row["edge"].split("-"))
                util = float(row["utilization"])
            except ValueError:
                raise MalformedRow(path, line, "bad edge id or utilization") from None
            acc = sums.setdefault((u, v, k), [0.0, 0])
            acc[0] += util
            acc[1] += 1
    return {k: s / n for k, (s, n) in sums.items()}


def build_report(vehicles_csv, out_dir, g=None, edge_series_csv=None, bins: int = 30) -> list[Path]:
    """Write histogram CSV/PNG pairs for each family; returns the written paths.

    With a graph, a road-length histogram is added, and with an edge
    time-series as well, a utilization map.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cols = read_vehicle_columns(vehicles_csv)
    series = [(f, cols[f.column] * f.scale) for f in VEHICLE_FAMILIES]
    if g is not None:
        lengths = np.array([e.length for e in g.edges.values()]) / 1000.0
        series.append((Family("road_length", "length", "road length (km)"), lengths))
    written = []
    for fam, values in series:
        rows = histogram(values, bins, fam.integer)
        csv_path, png_path = out_dir / f"hist_{fam.name}.csv", out_dir / f"hist_{fam.name}.png"
        write_histogram_csv(rows, csv_path)
        plot_histogram(rows, png_path, fam.xlabel)
        written += [csv_path, png_path]
    if g is not None and edge_series_csv is not None:
        path = out_dir / "utilization_map.png"
        utilization_map(g, read_edge_series_means(edge_series_csv), path)
        written.append(path)
    return written
