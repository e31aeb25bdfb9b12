"""Minimal deterministic SVG line charts (fixed layout, no timestamps)."""

from __future__ import annotations

from .errors import ConfigurationError

__all__ = ["render_line_chart"]

WIDTH, HEIGHT = 640, 420
MARGIN_LEFT, MARGIN_RIGHT, MARGIN_TOP, MARGIN_BOTTOM = 70, 24, 42, 52
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b")


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


def _label(v: float) -> str:
    return f"{v:.6g}"


def render_line_chart(
    x_values,
    series,
    title: str = "",
    x_label: str = "",
    y_label: str = "",
) -> str:
    """SVG line chart with optional symmetric error bars.

    series is a list of (name, y_values, errors-or-None) triples sharing
    x_values. Output is a pure function of the inputs, so identical data
    renders byte-identical files.
    """
    x_values = [float(v) for v in x_values]
    if not x_values or not series:
        raise ConfigurationError("nothing to plot: empty data")
    for name, ys, errs in series:
        if len(ys) != len(x_values) or (errs is not None and len(errs) != len(x_values)):
            raise ConfigurationError(f"series {name!r} length does not match x values")

    lo = min(
        (y - (e or 0.0))
        for _, ys, errs in series
        for y, e in zip(ys, errs if errs is not None else [0.0] * len(ys))
    )
    hi = max(
        (y + (e or 0.0))
        for _, ys, errs in series
        for y, e in zip(ys, errs if errs is not None else [0.0] * len(ys))
    )
    if hi == lo:
        hi, lo = hi + 0.5, lo - 0.5
    pad = 0.05 * (hi - lo)
    lo, hi = lo - pad, hi + pad
    x_lo, x_hi = min(x_values), max(x_values)
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 0.5, x_hi + 0.5

    plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT
    plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM

    def sx(v):
        return MARGIN_LEFT + (v - x_lo) / (x_hi - x_lo) * plot_w

    def sy(v):
        return MARGIN_TOP + (hi - v) / (hi - lo) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.0f}" y="24" text-anchor="middle" '
        f'font-family="sans-serif" font-size="15">{title}</text>',
    ]

    # axes
    parts.append(
        f'<line x1="{MARGIN_LEFT}" y1="{MARGIN_TOP}" x2="{MARGIN_LEFT}" '
        f'y2="{HEIGHT - MARGIN_BOTTOM}" stroke="black"/>'
    )
    parts.append(
        f'<line x1="{MARGIN_LEFT}" y1="{HEIGHT - MARGIN_BOTTOM}" '
        f'x2="{WIDTH - MARGIN_RIGHT}" y2="{HEIGHT - MARGIN_BOTTOM}" stroke="black"/>'
    )
    for i in range(5):
        yv = lo + (hi - lo) * i / 4
        y = sy(yv)
        parts.append(
            f'<line x1="{MARGIN_LEFT - 4}" y1="{_fmt(y)}" x2="{MARGIN_LEFT}" '
            f'y2="{_fmt(y)}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{MARGIN_LEFT - 8}" y="{_fmt(y + 4)}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{_label(yv)}</text>'
        )
    for xv in sorted(set(x_values)):
        x = sx(xv)
        parts.append(
            f'<line x1="{_fmt(x)}" y1="{HEIGHT - MARGIN_BOTTOM}" x2="{_fmt(x)}" '
            f'y2="{HEIGHT - MARGIN_BOTTOM + 4}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{_fmt(x)}" y="{HEIGHT - MARGIN_BOTTOM + 18}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{_label(xv)}</text>'
        )
    parts.append(
        f'<text x="{MARGIN_LEFT + plot_w / 2:.0f}" y="{HEIGHT - 12}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">{x_label}</text>'
    )
    parts.append(
        f'<text x="18" y="{MARGIN_TOP + plot_h / 2:.0f}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 18 {MARGIN_TOP + plot_h / 2:.0f})">{y_label}</text>'
    )

    for index, (name, ys, errs) in enumerate(series):
        color = PALETTE[index % len(PALETTE)]
        points = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in zip(x_values, ys))
        parts.append(f'<polyline points="{points}" fill="none" stroke="{color}" stroke-width="2"/>')
        for x, y in zip(x_values, ys):
            parts.append(f'<circle cx="{_fmt(sx(x))}" cy="{_fmt(sy(y))}" r="3" fill="{color}"/>')
        if errs is not None:
            for x, y, e in zip(x_values, ys, errs):
                cx, top, bot = sx(x), sy(y + e), sy(y - e)
                parts.append(
                    f'<line x1="{_fmt(cx)}" y1="{_fmt(top)}" x2="{_fmt(cx)}" '
                    f'y2="{_fmt(bot)}" stroke="{color}"/>'
                )
                for yy in (top, bot):
                    parts.append(
                        f'<line x1="{_fmt(cx - 4)}" y1="{_fmt(yy)}" x2="{_fmt(cx + 4)}" '
                        f'y2="{_fmt(yy)}" stroke="{color}"/>'
                    )
        legend_y = MARGIN_TOP + 14 + 16 * index
        parts.append(
            f'<line x1="{WIDTH - MARGIN_RIGHT - 120}" y1="{legend_y}" '
            f'x2="{WIDTH - MARGIN_RIGHT - 96}" y2="{legend_y}" stroke="{color}" stroke-width="2"/>'
        )
        parts.append(
            f'<text x="{WIDTH - MARGIN_RIGHT - 90}" y="{legend_y + 4}" '
            f'font-family="sans-serif" font-size="11">{name}</text>'
        )

    parts.append("</svg>")
    return "\n".join(parts) + "\n"
