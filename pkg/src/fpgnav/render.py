"""SVG and PPM pictures of worlds, rollouts and benchmark summaries."""

from __future__ import annotations

import numpy as np

from .maze import MazeWorld

CANDIDATE_COLOURS = ("#1f77b4", "#2ca02c", "#9467bd", "#8c564b", "#e377c2", "#17becf")


def _tsdf_rgb(world: MazeWorld) -> np.ndarray:
    """Per-cell colours: obstacles dark, free space shaded by clearance."""
    s = world.tsdf / (world.truncation_radius * world.cell_width)
    rgb = np.empty(s.shape + (3,), dtype=np.float64)
    free = np.clip(s, 0.0, 1.0)
    rgb[..., 0] = 1.0 - 0.55 * (1.0 - free)
    rgb[..., 1] = 1.0 - 0.25 * (1.0 - free)
    rgb[..., 2] = 1.0
    rgb[world.grid] = (0.15, 0.15, 0.18)
    return (255 * np.clip(rgb, 0, 1)).astype(np.uint8)


def _to_px(p, size):
    """Workspace point (x, y) to pixel coordinates with row 0 at the top."""
    p = np.asarray(p, dtype=np.float64).reshape(-1, 2)
    return np.stack([(p[:, 0] + 1) * 0.5 * size, (p[:, 1] + 1) * 0.5 * size], axis=1)


def world_svg(world: MazeWorld, candidates=None, blended=None, expert: bool = True,
              size: int = 512, title: str | None = None) -> str:
    G = world.grid_size
    cell = size / G
    rgb = _tsdf_rgb(world)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
           f'viewBox="0 0 {size} {size}">']
    for i in range(G):
        for j in range(G):
            r, g, b = rgb[i, j]
            out.append(f'<rect x="{j * cell:.2f}" y="{i * cell:.2f}" width="{cell:.2f}" '
                       f'height="{cell:.2f}" fill="#{r:02x}{g:02x}{b:02x}"/>')

    def poly(pts, colour, width, dash=None):
        px = _to_px(pts, size)
        d = " ".join(f"{x:.2f},{y:.2f}" for x, y in px)
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        out.append(f'<polyline points="{d}" fill="none" stroke="{colour}" '
                   f'stroke-width="{width}"{extra}/>')

    if expert:
        poly(world.expert.waypoints, "#7f7f7f", 1.5, "4,3")
    for k, c in enumerate([] if candidates is None else candidates):
        poly(c, CANDIDATE_COLOURS[k % len(CANDIDATE_COLOURS)], 1.2)
    if blended is not None:
        poly(blended, "#d62728", 2.5)
    for p, colour in ((world.start, "#2ca02c"), (world.goal, "#ff7f0e")):
        x, y = _to_px(p, size)[0]
        out.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{max(3.0, cell):.2f}" fill="{colour}"/>')
    if title:
        out.append(f'<text x="6" y="16" font-family="monospace" font-size="13">{title}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def world_ppm(world: MazeWorld, candidates=None, blended=None, scale: int = 8) -> bytes:
    """Binary P6 image; trajectories are drawn as densely sampled dots."""
    img = np.repeat(np.repeat(_tsdf_rgb(world), scale, axis=0), scale, axis=1)
    size = img.shape[0]

    def draw(pts, colour):
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        for p, q in zip(pts[:-1], pts[1:]):
            n = max(2, int(np.ceil(np.linalg.norm(q - p) * size)))
            for s in np.linspace(0, 1, n):
                x, y = _to_px(p + s * (q - p), size)[0]
                i, j = min(int(y), size - 1), min(int(x), size - 1)
                img[max(i - 1, 0):i + 1, max(j - 1, 0):j + 1] = colour

    draw(world.expert.waypoints, (127, 127, 127))
    for c in [] if candidates is None else candidates:
        draw(c, (31, 119, 180))
    if blended is not None:
        draw(blended, (214, 39, 40))
    return f"P6 {size} {size} 255\n".encode("ascii") + img.tobytes()


def benchmark_svg(summary: dict, width: int = 480, height: int = 300) -> str:
    """Bar chart of mean collisions per method with bootstrap intervals."""
    names = list(summary)
    vals = [summary[n]["mean_collisions"] or 0.0 for n in names]
    his = [(summary[n]["collisions_ci"][1] or v) for n, v in zip(names, vals)]
    los = [(summary[n]["collisions_ci"][0] or v) for n, v in zip(names, vals)]
    top = max(his + [1e-9]) * 1.15
    pad, base = 40, height - 40
    bw = (width - 2 * pad) / max(len(names), 1)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
           f'<text x="{pad}" y="20" font-family="sans-serif" font-size="13">mean collisions (95% CI)</text>',
           f'<line x1="{pad}" y1="{base}" x2="{width - pad}" y2="{base}" stroke="black"/>']
    for k, (n, v, lo, hi) in enumerate(zip(names, vals, los, his)):
        x = pad + k * bw + 0.15 * bw
        h = (base - 30) * v / top
        out.append(f'<rect x="{x:.1f}" y="{base - h:.1f}" width="{0.7 * bw:.1f}" height="{h:.1f}" '
                   f'fill="{CANDIDATE_COLOURS[k % len(CANDIDATE_COLOURS)]}"/>')
        cx = x + 0.35 * bw
        y0, y1 = base - (base - 30) * lo / top, base - (base - 30) * hi / top
        out.append(f'<line x1="{cx:.1f}" y1="{y0:.1f}" x2="{cx:.1f}" y2="{y1:.1f}" stroke="black"/>')
        out.append(f'<text x="{cx:.1f}" y="{base + 15}" text-anchor="middle" font-family="sans-serif" '
                   f'font-size="11">{n}</text>')
        out.append(f'<text x="{cx:.1f}" y="{base - h - 4:.1f}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="10">{v:.3f}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
