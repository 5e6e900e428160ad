"""Self-contained SVG emission: convergence curves with interquartile
bands, and archive heatmaps colored by per-cell hypervolume. No external
rendering dependency; axes are linear and colors fixed per algorithm."""

from __future__ import annotations

import numpy as np

from moqd.archive import MoqdArchive
from moqd.pareto import hypervolume_2d

__all__ = ["ALGORITHM_COLORS", "svg_curves", "svg_archive_heatmap"]

ALGORITHM_COLORS = {
    "mome_pgx": "#d62728",
    "mome": "#1f77b4",
    "mome_crowding": "#ff7f0e",
    "mo_pga": "#2ca02c",
    "pga_me": "#9467bd",
    "nsga2": "#8c564b",
    "spea2": "#e377c2",
}
_FALLBACK = ("#17becf", "#bcbd22", "#7f7f7f", "#aec7e8", "#ffbb78")

_W, _H = 640, 420
_ML, _MR, _MT, _MB = 70, 20, 30, 50


def _color_for(label: str, index: int) -> str:
    base = label.split("#")[0]
    return ALGORITHM_COLORS.get(base, _FALLBACK[index % len(_FALLBACK)])


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    step = (hi - lo) / (n - 1)
    return [lo + i * step for i in range(n)]


def _fmt(v: float) -> str:
    return f"{v:.4g}"


class _Frame:
    """Maps data coordinates into the plot rectangle."""

    def __init__(self, x_range, y_range):
        self.x0, self.x1 = x_range
        self.y0, self.y1 = y_range
        if self.x1 <= self.x0:
            self.x1 = self.x0 + 1.0
        if self.y1 <= self.y0:
            self.y1 = self.y0 + 1.0

    def x(self, v) -> float:
        return _ML + (v - self.x0) / (self.x1 - self.x0) * (_W - _ML - _MR)

    def y(self, v) -> float:
        return _H - _MB - (v - self.y0) / (self.y1 - self.y0) * (_H - _MT - _MB)


def _axes(frame: _Frame, x_label: str, y_label: str) -> list[str]:
    parts = [
        f'<rect x="{_ML}" y="{_MT}" width="{_W - _ML - _MR}" height="{_H - _MT - _MB}" '
        'fill="none" stroke="#333" stroke-width="1"/>'
    ]
    for tx in _ticks(frame.x0, frame.x1):
        px = frame.x(tx)
        parts.append(
            f'<line x1="{px:.1f}" y1="{_H - _MB}" x2="{px:.1f}" y2="{_H - _MB + 5}" stroke="#333"/>'
        )
        parts.append(
            f'<text x="{px:.1f}" y="{_H - _MB + 18}" font-size="11" text-anchor="middle">{_fmt(tx)}</text>'
        )
    for ty in _ticks(frame.y0, frame.y1):
        py = frame.y(ty)
        parts.append(f'<line x1="{_ML - 5}" y1="{py:.1f}" x2="{_ML}" y2="{py:.1f}" stroke="#333"/>')
        parts.append(
            f'<text x="{_ML - 8}" y="{py + 4:.1f}" font-size="11" text-anchor="end">{_fmt(ty)}</text>'
        )
    parts.append(
        f'<text x="{(_ML + _W - _MR) / 2}" y="{_H - 12}" font-size="12" text-anchor="middle">{x_label}</text>'
    )
    parts.append(
        f'<text x="16" y="{(_MT + _H - _MB) / 2}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 16 {(_MT + _H - _MB) / 2})">{y_label}</text>'
    )
    return parts


def _svg(parts: list[str]) -> str:
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">\n<rect width="100%" height="100%" fill="white"/>\n'
        + "\n".join(parts)
        + "\n</svg>\n"
    )


def svg_curves(series: dict[str, list[tuple[np.ndarray, np.ndarray]]], y_label: str) -> str:
    """Median curve per label with an interquartile band when the label has
    more than one replication. Each replication is (evaluations, values)
    and replications of one label must share their evaluation grid."""
    if not series:
        raise ValueError("no curves to plot")
    xs, ys = [], []
    prepared = {}
    for label, curves in series.items():
        grids = {tuple(np.asarray(e).tolist()) for e, _ in curves}
        if len(grids) != 1:
            raise ValueError(f"{label}: replications disagree on evaluation counts")
        evals = np.asarray(curves[0][0], dtype=float)
        stack = np.stack([np.asarray(v, dtype=float) for _, v in curves])
        median = np.median(stack, axis=0)
        lo = np.percentile(stack, 25, axis=0)
        hi = np.percentile(stack, 75, axis=0)
        prepared[label] = (evals, median, lo, hi, len(curves))
        xs.extend([evals.min(), evals.max()])
        ys.extend([lo.min(), hi.max()])
    frame = _Frame((min(xs), max(xs)), (min(ys), max(ys)))
    parts = _axes(frame, "evaluations", y_label)
    for i, (label, (evals, median, lo, hi, n_rep)) in enumerate(prepared.items()):
        color = _color_for(label, i)
        if n_rep > 1:
            upper = [f"{frame.x(e):.1f},{frame.y(v):.1f}" for e, v in zip(evals, hi)]
            lower = [
                f"{frame.x(e):.1f},{frame.y(v):.1f}" for e, v in zip(evals[::-1], lo[::-1])
            ]
            parts.append(
                f'<polygon points="{" ".join(upper + lower)}" fill="{color}" '
                'fill-opacity="0.18" stroke="none"/>'
            )
        points = " ".join(f"{frame.x(e):.1f},{frame.y(v):.1f}" for e, v in zip(evals, median))
        parts.append(
            f'<polyline points="{points}" fill="none" stroke="{color}" stroke-width="1.8"/>'
        )
        ly = _MT + 16 + 16 * i
        parts.append(
            f'<line x1="{_W - _MR - 120}" y1="{ly - 4}" x2="{_W - _MR - 96}" y2="{ly - 4}" '
            f'stroke="{color}" stroke-width="3"/>'
        )
        parts.append(f'<text x="{_W - _MR - 90}" y="{ly}" font-size="11">{label}</text>')
    return _svg(parts)


_HEAT_ANCHORS = [
    (0.0, (68, 1, 84)),
    (0.25, (59, 82, 139)),
    (0.5, (33, 145, 140)),
    (0.75, (94, 201, 98)),
    (1.0, (253, 231, 37)),
]
_EMPTY_FILL = "#e8e8e8"


def _heat_color(t: float) -> str:
    t = min(max(t, 0.0), 1.0)
    for (t0, c0), (t1, c1) in zip(_HEAT_ANCHORS, _HEAT_ANCHORS[1:]):
        if t <= t1:
            f = 0.0 if t1 == t0 else (t - t0) / (t1 - t0)
            rgb = tuple(round(a + f * (b - a)) for a, b in zip(c0, c1))
            return "#%02x%02x%02x" % rgb
    return "#%02x%02x%02x" % _HEAT_ANCHORS[-1][1]


def svg_archive_heatmap(archive: MoqdArchive, ref, resolution: int = 96) -> str:
    """Descriptor-space map of the archive, each Voronoi region colored by
    its cell front's hypervolume; empty cells stay gray. Two-dimensional
    descriptors only."""
    bounds = archive.centroids.bounds
    if bounds.shape[0] != 2:
        raise ValueError("heatmap needs a 2-D descriptor space")
    ref = np.asarray(ref, dtype=float)
    values = np.full(archive.num_cells, np.nan)
    for idx in archive.non_empty_cells():
        scores = np.array([s.scores for s in archive.cell(idx)])
        values[idx] = hypervolume_2d(scores, ref)
    finite = values[~np.isnan(values)]
    lo = float(finite.min()) if len(finite) else 0.0
    hi = float(finite.max()) if len(finite) else 1.0
    span = hi - lo if hi > lo else 1.0

    xs = np.linspace(bounds[0, 0], bounds[0, 1], resolution, endpoint=False)
    ys = np.linspace(bounds[1, 0], bounds[1, 1], resolution, endpoint=False)
    dx = (bounds[0, 1] - bounds[0, 0]) / resolution
    dy = (bounds[1, 1] - bounds[1, 0]) / resolution
    grid = np.stack(np.meshgrid(xs + dx / 2, ys + dy / 2), axis=-1).reshape(-1, 2)
    d2 = ((grid[:, None, :] - archive.centroids.points[None, :, :]) ** 2).sum(axis=2)
    nearest = np.argmin(d2, axis=1).reshape(resolution, resolution)

    frame = _Frame((bounds[0, 0], bounds[0, 1]), (bounds[1, 0], bounds[1, 1]))
    parts = []
    for row in range(resolution):
        col = 0
        while col < resolution:
            cell = nearest[row, col]
            run = col
            while run < resolution and nearest[row, run] == cell:
                run += 1
            v = values[cell]
            fill = _EMPTY_FILL if np.isnan(v) else _heat_color((v - lo) / span)
            x0 = frame.x(bounds[0, 0] + col * dx)
            x1 = frame.x(bounds[0, 0] + run * dx)
            y1 = frame.y(bounds[1, 0] + row * dy)
            y0 = frame.y(bounds[1, 0] + (row + 1) * dy)
            parts.append(
                f'<rect x="{x0:.1f}" y="{y0:.1f}" width="{x1 - x0:.1f}" '
                f'height="{y1 - y0 + 0.5:.1f}" fill="{fill}" stroke="none"/>'
            )
            col = run
    parts.extend(_axes(frame, "descriptor 1", "descriptor 2"))
    return _svg(parts)
