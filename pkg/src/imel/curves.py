"""Learning-curve aggregation across seeds, CSV emission and SVG rendering.

Percentiles use linear interpolation between the closest order statistics
(``numpy.percentile`` with its default method): for sorted values
``v_0 <= ... <= v_{n-1}`` the q-th percentile sits at fractional rank
``(n - 1) q / 100``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .errors import ShapeError

CSV_FIXED = ("k", "mean", "p20", "p80")
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


@dataclass(frozen=True)
class CurvePoint:
    k: int
    seed_returns: tuple  # ((seed, value), ...) sorted by seed
    mean: float
    p20: float
    p80: float


def _series(records):
    """Accept IterationRecords or ``(k, value)`` pairs."""
    out = []
    for r in records:
        if hasattr(r, "eval_mean"):
            out.append((int(r.k), float(r.eval_mean)))
        else:
            k, v = r
            out.append((int(k), float(v)))
    return out


def aggregate_curves(per_seed: dict) -> list[CurvePoint]:
    """Per-iteration mean and 20th/80th percentiles over seeds.

    ``per_seed`` maps seed to a sequence of IterationRecords (the eval mean
    is aggregated) or of ``(k, value)`` pairs. Every seed must report the
    same iteration grid.
    """
    if not per_seed:
        raise ValueError("no seeds to aggregate")
    seeds = sorted(per_seed)
    series = {s: _series(per_seed[s]) for s in seeds}
    grid = [k for k, _ in series[seeds[0]]]
    for s in seeds[1:]:
        if [k for k, _ in series[s]] != grid:
            raise ShapeError(f"seed {s} reports a different iteration grid than seed {seeds[0]}")
    points = []
    for i, k in enumerate(grid):
        values = np.array([series[s][i][1] for s in seeds])
        points.append(CurvePoint(
            k=k,
            seed_returns=tuple((s, float(v)) for s, v in zip(seeds, values)),
            mean=math.fsum(values) / len(values),
            p20=float(np.percentile(values, 20)),
            p80=float(np.percentile(values, 80)),
        ))
    return points


def csv_header(curves) -> list[str]:
    return [*CSV_FIXED, *(f"seed_{s}" for s, _ in curves[0].seed_returns)]


def format_csv(curves) -> str:
    """CSV text with header ``k,mean,p20,p80,seed_<s>...``; floats via ``repr``."""
    if not curves:
        raise ValueError("no curve points to write")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(csv_header(curves))
    for p in curves:
        w.writerow([p.k, repr(p.mean), repr(p.p20), repr(p.p80), *(repr(v) for _, v in p.seed_returns)])
    return buf.getvalue()


def write_csv(curves, path) -> Path:
    path = Path(path)
    try:
        path.write_text(format_csv(curves), encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def read_csv(path) -> list[CurvePoint]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0][:4]) != CSV_FIXED:
        raise ValueError(f"{path}: not a learning-curve CSV")
    seeds = [int(h[len("seed_"):]) for h in rows[0][4:]]
    points = []
    for row in rows[1:]:
        k, mean, p20, p80, *rest = row
        points.append(CurvePoint(int(k), tuple(zip(seeds, map(float, rest))),
                                 float(mean), float(p20), float(p80)))
    return points


def write_records_csv(records, path) -> Path:
    """One row per iteration of a single seed, without wall-clock times."""
    path = Path(path)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", "episode_return", "eval_mean", "eval_p20", "eval_p80", "eta", "sigma",
                "train_loss_mean", "model_hash"])
    for r in records:
        w.writerow([r.k, repr(r.episode_return), repr(r.eval_mean), repr(r.eval_p20), repr(r.eval_p80),
                    repr(r.eta), repr(r.sigma), repr(r.train_loss_mean), r.model_hash])
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


# -- SVG ---------------------------------------------------------------------

def _ticks(lo, hi, n=5):
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def render_svg(curves_by_label: dict, path=None, *, title="", width=640, height=400) -> str:
    """Overlay of mean curves with shaded 20-80 percentile bands.

    ``curves_by_label`` maps a legend label to a list of CurvePoints. Returns
    the SVG text and writes it to ``path`` when given.
    """
    if not curves_by_label or any(not c for c in curves_by_label.values()):
        raise ValueError("nothing to plot")
    left, right, top, bottom = 70, 20, 30, 50
    pw, ph = width - left - right, height - top - bottom
    ks = [p.k for c in curves_by_label.values() for p in c]
    ys = [v for c in curves_by_label.values() for p in c for v in (p.p20, p.p80, p.mean)]
    kmin, kmax = min(ks), max(ks)
    ymin, ymax = min(ys), max(ys)
    if kmax == kmin:
        kmax = kmin + 1
    if ymax == ymin:
        ymin, ymax = ymin - 1.0, ymax + 1.0

    def sx(k):
        return left + pw * (k - kmin) / (kmax - kmin)

    def sy(y):
        return top + ph * (ymax - y) / (ymax - ymin)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>']
    if title:
        out.append(f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>')
    out.append(f'<g id="axes" stroke="black" stroke-width="1">'
               f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}"/>'
               f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}"/></g>')
    out.append('<g id="ticks">')
    for k in _ticks(kmin, kmax):
        x = sx(k)
        out.append(f'<line x1="{x:.2f}" y1="{top + ph}" x2="{x:.2f}" y2="{top + ph + 4}" stroke="black"/>'
                   f'<text x="{x:.2f}" y="{top + ph + 16}" text-anchor="middle">{k:.0f}</text>')
    for y in _ticks(ymin, ymax):
        yy = sy(y)
        out.append(f'<line x1="{left - 4}" y1="{yy:.2f}" x2="{left}" y2="{yy:.2f}" stroke="black"/>'
                   f'<text x="{left - 6}" y="{yy + 4:.2f}" text-anchor="end">{y:.4g}</text>')
    out.append('</g>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 12}" text-anchor="middle">iteration</text>')
    out.append(f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + ph / 2:.1f})">return</text>')

    for i, (label, curve) in enumerate(curves_by_label.items()):
        color = PALETTE[i % len(PALETTE)]
        upper = " ".join(f"{sx(p.k):.2f},{sy(p.p80):.2f}" for p in curve)
        lower = " ".join(f"{sx(p.k):.2f},{sy(p.p20):.2f}" for p in reversed(curve))
        line = " ".join(f"{sx(p.k):.2f},{sy(p.mean):.2f}" for p in curve)
        out.append(f'<g class="series" id="series-{i}">'
                   f'<polygon class="band" points="{upper} {lower}" fill="{color}" fill-opacity="0.2" stroke="none"/>'
                   f'<polyline class="mean" points="{line}" fill="none" stroke="{color}" stroke-width="1.5"/>'
                   f'<rect x="{left + 10}" y="{top + 8 + 16 * i}" width="12" height="3" fill="{color}"/>'
                   f'<text x="{left + 28}" y="{top + 12 + 16 * i}">{escape(str(label))}</text></g>')
    out.append('</svg>')
    text = "\n".join(out) + "\n"
    if path is not None:
        path = Path(path)
        try:
            path.write_text(text, encoding="utf-8")
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc}") from exc
    return text
