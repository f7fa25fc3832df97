"""Success-by-orientation grids and error summaries.

Branch orientation is binned in 10 degree cells: azimuth ``atan2(y, x)`` in
the robot base frame (0 = straight ahead, away from the robot, positive
toward +y) and elevation ``asin(z)`` (-90 = pointing at the ground).
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .env import Cutpoint, check_success
from .episodes import (
    BranchMatch,
    Episode,
    NoiseBounds,
    ReachableRegion,
    _placer,
    sample_reachable_point,
)
from .robot import CutterFrame

__all__ = [
    "N_AZ",
    "N_EL",
    "OrientationBin",
    "BinStats",
    "GridReport",
    "error_metrics",
    "bin_orientation",
    "bin_center",
    "build_grid_eval_set",
    "aggregate",
    "emit_csv",
    "parse_csv",
    "emit_svg_heatmap",
    "histogram",
]

N_AZ = 36
N_EL = 18
CSV_HEADER = ["az_lo", "az_hi", "el_lo", "el_hi", "count", "success_rate", "mean_point_err", "mean_perp_err"]


@dataclass(frozen=True, order=True)
class OrientationBin:
    az: int
    el: int

    @property
    def index(self) -> int:
        return self.el * N_AZ + self.az


def bin_orientation(b) -> OrientationBin:
    b = np.asarray(b, dtype=float)
    az = math.degrees(math.atan2(b[1], b[0]))
    el = math.degrees(math.asin(max(-1.0, min(1.0, b[2]))))
    return OrientationBin(min(int(math.floor((az + 180.0) / 10.0)), N_AZ - 1),
                          min(int(math.floor((el + 90.0) / 10.0)), N_EL - 1))


def bin_center(cell: OrientationBin) -> tuple[float, float]:
    """(azimuth, elevation) of the cell center in degrees."""
    return cell.az * 10.0 - 175.0, cell.el * 10.0 - 85.0


def error_metrics(frame: CutterFrame, cut: Cutpoint) -> tuple[float, float, float]:
    rep = check_success(frame, cut)
    return rep.distance, rep.pointing_deg, rep.perpendicular_deg


# ------------------------------------------------------------------ eval set


def build_grid_eval_set(
    bank,
    per_cell: int = 5,
    region: ReachableRegion | None = None,
    rng: np.random.Generator | None = None,
    *,
    seed: int = 0,
    noise: NoiseBounds | None = None,
    max_tries: int = 100,
) -> tuple[list[Episode], list[OrientationBin]]:
    """Up to ``per_cell`` episodes per orientation cell.

    Candidates are the bank's prunable branches whose direction (or its
    opposite) falls in the cell; returns the episodes and the cells that
    could not be filled.
    """
    rng = rng or np.random.default_rng(seed)
    placer = _placer(bank, region, noise, None, None, None)
    by_cell: dict[OrientationBin, list] = {}
    for t, model in enumerate(bank):
        for br in model.prunable:
            for sign in (1, -1):
                by_cell.setdefault(bin_orientation(sign * br.direction), []).append((t, br.id, sign))
    episodes, unfilled = [], []
    if per_cell <= 0:
        return episodes, unfilled
    for el in range(N_EL):
        for az in range(N_AZ):
            cell = OrientationBin(az, el)
            cands = by_cell.get(cell, [])
            got = 0
            if cands:
                order = rng.permutation(len(cands))
                for k in order:
                    if got == per_cell:
                        break
                    t, bid, sign = cands[k]
                    d = sign * bank[t].branches[bid].direction
                    m = BranchMatch(t, bid, 0.0, sign)
                    for _ in range(max_tries):
                        p = sample_reachable_point(placer.region, rng)
                        ep = placer.place(m, p, rng, f"grid-{el:02d}-{az:02d}-{got}", seed, d)
                        if ep is not None:
                            episodes.append(ep)
                            got += 1
                            break
            if got < per_cell:
                unfilled.append(cell)
    return episodes, unfilled


# ------------------------------------------------------------------ aggregation


@dataclass(frozen=True)
class BinStats:
    count: int = 0
    successes: int = 0
    mean_point: float = 0.0
    mean_perp: float = 0.0

    @property
    def rate(self) -> float:
        return self.successes / self.count if self.count else 0.0


@dataclass
class GridReport:
    method: str
    bins: dict = field(default_factory=dict)  # OrientationBin -> BinStats
    total: int = 0
    successes: int = 0
    distributions: dict = field(default_factory=dict)

    @property
    def global_rate(self) -> float:
        return self.successes / self.total if self.total else 0.0

    def weighted_bin_rate(self) -> float:
        n = sum(s.count for s in self.bins.values())
        return sum(s.rate * s.count for s in self.bins.values()) / n if n else 0.0

    def rows(self) -> list[dict]:
        out = []
        for el in range(N_EL):
            for az in range(N_AZ):
                s = self.bins.get(OrientationBin(az, el), BinStats())
                out.append({
                    "az_lo": az * 10 - 180, "az_hi": az * 10 - 170, "el_lo": el * 10 - 90, "el_hi": el * 10 - 80,
                    "count": s.count, "success_rate": s.rate, "mean_point_err": s.mean_point,
                    "mean_perp_err": s.mean_perp,
                })
        return out


def histogram(values: Sequence[float], bins: int = 50) -> dict:
    v = np.asarray([x for x in values if np.isfinite(x)], dtype=float)
    if len(v) == 0:
        return {"quartiles": [math.nan] * 3, "edges": [], "counts": []}
    counts, edges = np.histogram(v, bins=bins)
    return {"quartiles": np.percentile(v, [25, 50, 75]).tolist(), "edges": edges.tolist(), "counts": counts.tolist()}


def _direction(ep: Episode) -> np.ndarray:
    return ep.requested if ep.requested is not None else ep.b


def aggregate(records: Iterable[Mapping], episodes: Sequence[Episode], method: str | None = None) -> GridReport:
    """Bin ``records`` (dicts with episode, success and error fields) by the
    orientation each episode was generated for."""
    by_id = {ep.id: ep for ep in episodes}
    records = list(records)
    rep = GridReport(method or (records[0].get("method", "") if records else ""))
    sums: dict[OrientationBin, list] = {}
    dist, point, perp = [], [], []
    for r in records:
        ep = by_id.get(r["episode"])
        if ep is None:
            raise KeyError(f"record for unknown episode {r['episode']!r}")
        ok = bool(r["success"])
        pe = float(r.get("pointing_error_deg", math.nan))
        pp = float(r.get("perpendicular_error_deg", math.nan))
        acc = sums.setdefault(bin_orientation(_direction(ep)), [0, 0, 0.0, 0.0])
        acc[0] += 1
        acc[1] += ok
        acc[2] += pe if np.isfinite(pe) else 0.0
        acc[3] += pp if np.isfinite(pp) else 0.0
        rep.total += 1
        rep.successes += ok
        dist.append(float(r.get("final_distance", math.nan)))
        point.append(pe)
        perp.append(pp)
    rep.bins = {c: BinStats(n, k, sp / n, sq / n) for c, (n, k, sp, sq) in sorted(sums.items())}
    rep.distributions = {"distance": histogram(dist), "pointing": histogram(point), "perpendicular": histogram(perp)}
    return rep


# ------------------------------------------------------------------ output


def emit_csv(report: GridReport, out_dir: str | Path, name: str = "grid.csv") -> Path:
    """One row per cell.  Empty reports produce a header-only file."""
    path = Path(out_dir) / name
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    buf.write("# azimuth = atan2(y, x) in the robot base frame; 0 = away from the robot, +90 = toward +y\n")
    w = csv.DictWriter(buf, CSV_HEADER, lineterminator="\n")
    w.writeheader()
    if report.total:
        for row in report.rows():
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    path.write_text(buf.getvalue())
    return path


def parse_csv(path: str | Path, method: str = "") -> GridReport:
    lines = [s for s in Path(path).read_text().splitlines() if not s.startswith("#")]
    rep = GridReport(method)
    for row in csv.DictReader(lines):
        n = int(row["count"])
        if n == 0:
            continue
        cell = bin_orientation_from_edges(float(row["az_lo"]), float(row["el_lo"]))
        rate = float(row["success_rate"])
        s = BinStats(n, int(round(rate * n)), float(row["mean_point_err"]), float(row["mean_perp_err"]))
        rep.bins[cell] = s
        rep.total += n
        rep.successes += s.successes
    return rep


def bin_orientation_from_edges(az_lo: float, el_lo: float) -> OrientationBin:
    return OrientationBin(int(round((az_lo + 180) / 10)), int(round((el_lo + 90) / 10)))


def emit_svg_heatmap(report: GridReport, out_dir: str | Path, name: str = "grid.svg", cell: int = 16) -> Path:
    """36 x 18 heatmap; azimuth left to right, elevation bottom to top."""
    path = Path(out_dir) / name
    path.parent.mkdir(parents=True, exist_ok=True)
    W, H = N_AZ * cell, N_EL * cell
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        "<!-- success rate per cell: gray level = round(255 * rate), so black = 0 and white = 1;"
        " empty cells are drawn as outlines only -->",
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<title>{report.method} success by branch orientation</title>',
    ]
    for el in range(N_EL):
        for az in range(N_AZ):
            x, y = az * cell, (N_EL - 1 - el) * cell
            s = report.bins.get(OrientationBin(az, el))
            if s is None or s.count == 0:
                parts.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="none" stroke="#cccccc"/>')
            else:
                g = int(round(255 * s.rate))
                parts.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="rgb({g},{g},{g})"/>')
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n")
    return path
