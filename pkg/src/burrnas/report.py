"""Text tables and hand-written SVG charts (search progress, AP grid)."""

from __future__ import annotations

from typing import Mapping, Sequence

from .errors import IncompleteGrid

# Published AP grid (fractions) for the FPN baseline and the searched detector,
# trained on A or B and tested on A-D.
PUBLISHED_GRID = {
    "FPN": {
        "A": {"A": 0.314, "B": 0.132, "C": 0.360, "D": 0.476},
        "B": {"A": 0.179, "B": 0.397, "C": 0.143, "D": 0.088},
    },
    "Proposed": {
        "A": {"A": 0.317, "B": 0.306, "C": 0.489, "D": 0.588},
        "B": {"A": 0.334, "B": 0.521, "C": 0.411, "D": 0.445},
    },
}

PALETTE = ("#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860")


def _grid_axes(grid: Mapping, methods: Sequence[str] | None):
    methods = list(methods) if methods is not None else list(grid)
    trains, tests = [], []
    for m in methods:
        if m not in grid:
            raise IncompleteGrid(f"no results for method {m!r}")
        for tr, row in grid[m].items():
            if tr not in trains:
                trains.append(tr)
            for te in row:
                if te not in tests:
                    tests.append(te)
    for m in methods:
        for tr in trains:
            for te in tests:
                v = grid[m].get(tr, {}).get(te)
                if v is None:
                    raise IncompleteGrid(f"missing cell: method {m!r}, trained on {tr!r}, tested on {te!r}")
    return methods, sorted(trains), sorted(tests)


def format_row(values_by_group: Sequence[Sequence[float]]) -> str:
    return " | ".join(" ".join(f"{100 * v:.1f}" for v in group) for group in values_by_group)


def render_table(grid: Mapping, methods: Sequence[str] | None = None) -> str:
    """AP grid in percent: rows are methods, column groups are training sets."""
    methods, trains, tests = _grid_axes(grid, methods)
    width = max(len("training set"), *(len(m) for m in methods))
    group_w = len(" ".join(["00.0"] * len(tests)))
    lines = [
        f"{'training set':<{width}}  " + " | ".join(f"{tr:<{group_w}}" for tr in trains).rstrip(),
        f"{'test set':<{width}}  " + " | ".join(" ".join(f"{te:>4}" for te in tests) for _ in trains),
    ]
    for m in methods:
        lines.append(f"{m:<{width}}  " + format_row([[grid[m][tr][te] for te in tests] for tr in trains]))
    return "\n".join(lines) + "\n"


def _svg_open(width: int, height: int) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
    ]


def render_grid_svg(grid: Mapping, methods: Sequence[str] | None = None) -> str:
    methods, trains, tests = _grid_axes(grid, methods)
    bar_w, gap, left, top, plot_h = 14, 12, 50, 30, 200
    groups = [(tr, te) for tr in trains for te in tests]
    group_w = bar_w * len(methods) + gap
    width = left + group_w * len(groups) + 20 + 110
    height = top + plot_h + 60
    out = _svg_open(width, height)
    y0 = top + plot_h
    for tick in range(0, 101, 20):
        y = y0 - plot_h * tick / 100
        out.append(f'<line x1="{left}" y1="{y:.1f}" x2="{left + group_w * len(groups)}" y2="{y:.1f}" '
                   f'stroke="#dddddd"/>')
        out.append(f'<text x="{left - 6}" y="{y + 4:.1f}" text-anchor="end">{tick}</text>')
    out.append(f'<text x="14" y="{top + plot_h / 2:.1f}" transform="rotate(-90 14 {top + plot_h / 2:.1f})" '
               f'text-anchor="middle">AP [%]</text>')
    for g, (tr, te) in enumerate(groups):
        gx = left + g * group_w + gap / 2
        for i, m in enumerate(methods):
            v = grid[m][tr][te]
            h = plot_h * v
            out.append(f'<rect x="{gx + i * bar_w:.1f}" y="{y0 - h:.2f}" width="{bar_w - 2}" height="{h:.2f}" '
                       f'fill="{PALETTE[i % len(PALETTE)]}"><title>{m} {tr}/{te}: {100 * v:.1f}</title></rect>')
        cx = gx + bar_w * len(methods) / 2
        out.append(f'<text x="{cx:.1f}" y="{y0 + 14}" text-anchor="middle">{te}</text>')
    for t, tr in enumerate(trains):
        x_mid = left + (t + 0.5) * group_w * len(tests)
        out.append(f'<text x="{x_mid:.1f}" y="{y0 + 32}" text-anchor="middle">trained on {tr}</text>')
    lx = left + group_w * len(groups) + 20
    for i, m in enumerate(methods):
        out.append(f'<rect x="{lx}" y="{top + 16 * i}" width="10" height="10" fill="{PALETTE[i % len(PALETTE)]}"/>')
        out.append(f'<text x="{lx + 14}" y="{top + 16 * i + 9}">{m}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_progress_svg(rewards: Sequence[float], baselines: Sequence[float],
                        best: Sequence[float] | None = None, title: str = "NAS progress") -> str:
    """Reward per trial as dots, with the moving-average baseline (and best so far) as lines."""
    n = len(rewards)
    width, height, left, top, pw, ph = 640, 320, 50, 30, 560, 240
    out = _svg_open(width, height)
    lo = min(0.0, *rewards, *baselines) if n else 0.0
    hi = max(1.0, *rewards, *baselines) if n else 1.0

    def px(i):
        return left + (pw * (i / (n - 1)) if n > 1 else pw / 2)

    def py(v):
        return top + ph - ph * (v - lo) / (hi - lo)

    out.append(f'<text x="{left + pw / 2}" y="18" text-anchor="middle" font-size="13">{title}</text>')
    out.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#888888"/>')
    for k in range(6):
        v = lo + (hi - lo) * k / 5
        out.append(f'<text x="{left - 6}" y="{py(v) + 4:.1f}" text-anchor="end">{v:.2f}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{top + ph + 28}" text-anchor="middle">trial (1..{n})</text>')
    for i, r in enumerate(rewards):
        out.append(f'<circle cx="{px(i):.2f}" cy="{py(r):.2f}" r="1.8" fill="#4c72b0" fill-opacity="0.6"/>')
    if n:
        pts = " ".join(f"{px(i):.2f},{py(b):.2f}" for i, b in enumerate(baselines))
        out.append(f'<polyline points="{pts}" fill="none" stroke="#dd8452" stroke-width="2"/>')
        if best is not None:
            pts = " ".join(f"{px(i):.2f},{py(b):.2f}" for i, b in enumerate(best))
            out.append(f'<polyline points="{pts}" fill="none" stroke="#55a868" stroke-width="1.5" '
                       f'stroke-dasharray="4 3"/>')
    legend = (("reward", "#4c72b0"), ("baseline (EMA)", "#dd8452"), ("best so far", "#55a868"))
    for i, (name, colour) in enumerate(legend):
        out.append(f'<rect x="{left + 8 + 120 * i}" y="{top + 6}" width="10" height="10" fill="{colour}"/>')
        out.append(f'<text x="{left + 22 + 120 * i}" y="{top + 15}">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
