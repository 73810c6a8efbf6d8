"""Tiny SVG writer: panels with axes, arrows and polylines. No plotting dependency."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class Panel:
    title: str
    xlim: tuple[float, float]
    ylim: tuple[float, float]
    size: float = 300.0
    items: list[str] = field(default_factory=list)

    def _px(self, x: float, y: float) -> tuple[float, float]:
        (x0, x1), (y0, y1) = self.xlim, self.ylim
        return (x - x0) / (x1 - x0) * self.size, (1.0 - (y - y0) / (y1 - y0)) * self.size

    def arrow(self, x, y, dx, dy, color="#333") -> None:
        ax, ay = self._px(x, y)
        bx, by = self._px(x + dx, y + dy)
        self.items.append(
            f'<line x1="{ax:.2f}" y1="{ay:.2f}" x2="{bx:.2f}" y2="{by:.2f}" stroke="{color}" '
            f'stroke-width="1" marker-end="url(#head)"/>'
        )

    def polyline(self, xs, ys, color="#c33", width=1.5) -> None:
        pts = " ".join("{:.2f},{:.2f}".format(*self._px(x, y)) for x, y in zip(xs, ys))
        self.items.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"/>')

    def dot(self, x, y, r=2.5, color="#888") -> None:
        cx, cy = self._px(x, y)
        self.items.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="{r}" fill="{color}"/>')

    def render(self, ox: float, oy: float) -> str:
        s = self.size
        ax0, ay0 = self._px(0.0, 0.0)
        head = [
            f'<g transform="translate({ox:.1f},{oy:.1f})">',
            f'<rect width="{s}" height="{s}" fill="white" stroke="black"/>',
            f'<text x="{s / 2}" y="-8" text-anchor="middle" font-size="13">{self.title}</text>',
        ]
        if 0 <= ax0 <= s:
            head.append(f'<line x1="{ax0:.2f}" y1="0" x2="{ax0:.2f}" y2="{s}" stroke="#ccc"/>')
        if 0 <= ay0 <= s:
            head.append(f'<line x1="0" y1="{ay0:.2f}" x2="{s}" y2="{ay0:.2f}" stroke="#ccc"/>')
        return "\n".join(head + self.items + ["</g>"])


def write_svg(path, panels: list[Panel], timestamp: str | None = None) -> None:
    """Lay panels out left to right. ``timestamp`` (if any) goes into a comment only."""
    pad = 30.0
    width = sum(p.size for p in panels) + pad * (len(panels) + 1)
    height = max((p.size for p in panels), default=0.0) + 2 * pad
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height:.0f}">',
        '<defs><marker id="head" markerWidth="6" markerHeight="6" refX="5" refY="3" orient="auto">'
        '<path d="M0,0 L6,3 L0,6 z" fill="#333"/></marker></defs>',
    ]
    if timestamp:
        parts.append(f"<!-- generated {timestamp} -->")
    x = pad
    for p in panels:
        parts.append(p.render(x, pad))
        x += p.size + pad
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
