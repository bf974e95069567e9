"""DOT and SVG emission for learned KAN structures.

Edges carry the mean-absolute-activation importance computed over a sample;
edges under the relative threshold are omitted so the surviving structure
shows which inputs actually drive each unit. Both writers are plain string
builders with fixed formatting, so output is byte-stable for a given
checkpoint and threshold.
"""

from __future__ import annotations

import numpy as np

from .kan import KanNetwork, basis_values, edge_importance

SWEEP_POINTS = 64


def grid_sweep_sample(net: KanNetwork) -> np.ndarray:
    """A deterministic probe: every input swept uniformly over the grid range."""
    grid = net.layers[0].grid
    n_in = net.layers[0].n_in
    line = np.linspace(grid.lo, grid.hi, SWEEP_POINTS)
    return np.tile(line[:, None], (1, n_in))


def layer_importances(net: KanNetwork, sample: np.ndarray | None = None) -> list[np.ndarray]:
    if sample is None:
        sample = grid_sweep_sample(net)
    return [
        edge_importance(layer, layer_in)
        for layer, layer_in in zip(net.layers, net.layer_inputs(sample))
    ]


def surviving_edges(imp: np.ndarray, threshold: float) -> np.ndarray:
    """Boolean keep-mask under the capped relative threshold."""
    cutoff = min(threshold, 1.0) * imp.max()
    keep = imp >= cutoff
    if threshold > 0:
        keep &= imp > 0
    return keep


def _node_name(layer_idx: int, unit: int, n_layers: int) -> str:
    if layer_idx == 0:
        return f"in{unit}"
    if layer_idx == n_layers:
        return f"out{unit}"
    return f"h{layer_idx}_{unit}"


def kan_dot(net: KanNetwork, threshold: float = 0.0,
            sample: np.ndarray | None = None, name: str = "kan") -> str:
    """Render the network as a deterministic DOT document."""
    imps = layer_importances(net, sample)
    widths = net.widths
    n_layers = len(net.layers)
    lines = [f"digraph {name} {{"]
    lines.append("  rankdir=LR;")
    lines.append("  node [shape=circle, fontsize=10];")
    for li, width in enumerate(widths):
        for u in range(width):
            lines.append(f"  {_node_name(li, u, n_layers)};")
    for li, imp in enumerate(imps):
        keep = surviving_edges(imp, threshold)
        max_imp = imp.max()
        scale = 1.0 / max_imp if max_imp > 0 else 0.0
        for q in range(imp.shape[0]):
            for p in range(imp.shape[1]):
                if not keep[q, p]:
                    continue
                src = _node_name(li, p, n_layers)
                dst = _node_name(li + 1, q, n_layers)
                w = 0.5 + 3.5 * imp[q, p] * scale
                lines.append(
                    f"  {src} -> {dst} [penwidth={w:.3f}, importance={imp[q, p]:.6f}];"
                )
    lines.append("}")
    return "\n".join(lines) + "\n"


def _phi_polyline(layer, q: int, p: int, x0: float, y0: float,
                  w: float, h: float) -> str:
    """An inline sparkline of one edge function over the grid range."""
    grid = layer.grid
    xs = np.linspace(grid.lo, grid.hi, 24)
    bases = basis_values(xs.reshape(-1, 1), grid)[:, 0, :]
    s = 1.0 / (1.0 + np.exp(-xs))
    phi = bases @ layer.spline_coeffs.values[q, p] + layer.base_weight.values[q, p] * xs * s
    lo, hi = phi.min(), phi.max()
    span = hi - lo if hi > lo else 1.0
    pts = []
    for i, v in enumerate(phi):
        px = x0 + w * i / (len(phi) - 1)
        py = y0 + h * (1.0 - (v - lo) / span)
        pts.append(f"{px:.1f},{py:.1f}")
    return (
        f'<polyline points="{" ".join(pts)}" fill="none" '
        f'stroke="#c0392b" stroke-width="1.0"/>'
    )


def kan_svg(net: KanNetwork, threshold: float = 0.0,
            sample: np.ndarray | None = None) -> str:
    """Self-contained SVG: circles per unit, line thickness by importance,
    plus a small curve sample of every surviving edge function."""
    imps = layer_importances(net, sample)
    widths = net.widths
    layer_gap, unit_gap, margin, radius = 180.0, 60.0, 50.0, 10.0
    height = margin * 2 + unit_gap * (max(widths) - 1)
    width = margin * 2 + layer_gap * (len(widths) - 1)

    def pos(li: int, u: int) -> tuple[float, float]:
        x = margin + li * layer_gap
        offset = (max(widths) - widths[li]) * unit_gap / 2.0
        y = margin + offset + u * unit_gap
        return x, y

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" '
        f'height="{height:.0f}" viewBox="0 0 {width:.0f} {height:.0f}">',
        '<rect width="100%" height="100%" fill="white"/>',
    ]
    for li, imp in enumerate(imps):
        keep = surviving_edges(imp, threshold)
        max_imp = imp.max()
        scale = 1.0 / max_imp if max_imp > 0 else 0.0
        layer = net.layers[li]
        for q in range(imp.shape[0]):
            for p in range(imp.shape[1]):
                if not keep[q, p]:
                    continue
                x1, y1 = pos(li, p)
                x2, y2 = pos(li + 1, q)
                sw = 0.5 + 3.0 * imp[q, p] * scale
                parts.append(
                    f'<line x1="{x1:.1f}" y1="{y1:.1f}" x2="{x2:.1f}" y2="{y2:.1f}" '
                    f'stroke="#7f8c8d" stroke-width="{sw:.2f}"/>'
                )
                mx, my = (x1 + x2) / 2.0 - 20.0, (y1 + y2) / 2.0 - 12.0
                parts.append(
                    f'<rect x="{mx:.1f}" y="{my:.1f}" width="40" height="24" '
                    f'fill="white" stroke="#bdc3c7" stroke-width="0.5"/>'
                )
                parts.append(_phi_polyline(layer, q, p, mx, my, 40.0, 24.0))
    n_layers = len(net.layers)
    for li, w in enumerate(widths):
        for u in range(w):
            x, y = pos(li, u)
            parts.append(
                f'<circle cx="{x:.1f}" cy="{y:.1f}" r="{radius:.1f}" '
                f'fill="#ecf0f1" stroke="#2c3e50"/>'
            )
            parts.append(
                f'<text x="{x:.1f}" y="{y + 3:.1f}" font-size="8" '
                f'text-anchor="middle">{_node_name(li, u, n_layers)}</text>'
            )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
