"""Static SVG diagnostics, written by hand for byte-stable output.

No plotting library: every coordinate is formatted with fixed precision
and elements are emitted in sorted order, so identical inputs produce
identical bytes.
"""

import numpy as np

from .assoc import TrackSet
from .synth import GroundTruth

_PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
            "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def _color(i: int) -> str:
    return _PALETTE[i % len(_PALETTE)]


def track_overlay_svg(tracks: TrackSet, gt: GroundTruth | None = None,
                      size: int = 640, margin: int = 48) -> str:
    """Bird's-eye polylines of track centers; ground truth dashed gray."""
    xs, ys = [], []
    for track in tracks.tracks:
        for e in track.entries:
            xs.append(e.center[0])
            ys.append(e.center[1])
    if gt is not None:
        for t in range(gt.n_frames):
            for m in range(gt.n_objects):
                xs.append(gt.first_centers[t, m, 0])
                ys.append(gt.first_centers[t, m, 1])
    if not xs:
        xs, ys = [0.0, 1.0], [0.0, 1.0]
    x_min, x_max = min(xs), max(xs)
    y_min, y_max = min(ys), max(ys)
    span = max(x_max - x_min, y_max - y_min, 1e-6)
    scale = (size - 2 * margin) / span

    def sx(x: float) -> str:
        return _fmt(margin + (x - x_min) * scale)

    def sy(y: float) -> str:
        return _fmt(size - margin - (y - y_min) * scale)  # BEV y points up

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" '
        f'height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
        f'<text x="{margin}" y="24" font-family="monospace" font-size="14">'
        f'track centers, bird&apos;s-eye view ({len(tracks.tracks)} tracks)'
        f'</text>',
    ]
    if gt is not None:
        for m in range(gt.n_objects):
            pts = " ".join(f"{sx(gt.first_centers[t, m, 0])},"
                           f"{sy(gt.first_centers[t, m, 1])}"
                           for t in range(gt.n_frames))
            parts.append(f'<polyline points="{pts}" fill="none" '
                         f'stroke="#999999" stroke-width="1" '
                         f'stroke-dasharray="4 3"/>')
    for track in sorted(tracks.tracks, key=lambda t: t.track_id):
        color = _color(track.track_id)
        pts = " ".join(f"{sx(e.center[0])},{sy(e.center[1])}"
                       for e in track.entries)
        parts.append(f'<polyline points="{pts}" fill="none" '
                     f'stroke="{color}" stroke-width="1.5"/>')
        last = track.entries[-1]
        parts.append(f'<circle cx="{sx(last.center[0])}" '
                     f'cy="{sy(last.center[1])}" r="3" fill="{color}"/>')
        parts.append(f'<text x="{sx(last.center[0])}" '
                     f'y="{sy(last.center[1])}" dx="5" dy="-4" '
                     f'font-family="monospace" font-size="11" '
                     f'fill="{color}">{track.track_id}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def length_histogram_svg(tracks: TrackSet, width: int = 480,
                         height: int = 320, margin: int = 40) -> str:
    """Bar chart of track lengths (number of entries per track)."""
    lengths = [len(t.entries) for t in tracks.tracks]
    max_len = max(lengths, default=1)
    counts = np.bincount(lengths, minlength=max_len + 1)[1:]
    top = max(int(counts.max()), 1) if len(counts) else 1

    plot_w = width - 2 * margin
    plot_h = height - 2 * margin
    bar_w = plot_w / max(max_len, 1)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{margin}" y="22" font-family="monospace" font-size="13">'
        f'track length histogram ({len(lengths)} tracks)</text>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black" stroke-width="1"/>',
    ]
    for i, count in enumerate(counts):
        if count == 0:
            continue
        h = plot_h * count / top
        x = margin + i * bar_w
        y = height - margin - h
        parts.append(f'<rect x="{_fmt(x + 1)}" y="{_fmt(y)}" '
                     f'width="{_fmt(max(bar_w - 2, 1.0))}" '
                     f'height="{_fmt(h)}" fill="#1f77b4"/>')
        parts.append(f'<text x="{_fmt(x + bar_w / 2)}" y="{_fmt(y - 4)}" '
                     f'text-anchor="middle" font-family="monospace" '
                     f'font-size="10">{count}</text>')
    for i in range(1, max_len + 1):
        x = margin + (i - 0.5) * bar_w
        parts.append(f'<text x="{_fmt(x)}" y="{height - margin + 14}" '
                     f'text-anchor="middle" font-family="monospace" '
                     f'font-size="10">{i}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
