"""Pixel-edge boundary tracing, polygon simplification, and scanline rasterization.

Polygon vertices live on the pixel-corner lattice: pixel (row r, col c)
occupies the unit square [c, c+1] x [r, r+1]. A full h x w mask therefore
traces to (0,0)-(w,0)-(w,h)-(0,h). Rasterization samples pixel centers with
the even-odd rule, so tracing followed by rasterization reproduces the mask
exactly before simplification.
"""
from __future__ import annotations

import numpy as np
from scipy import ndimage

from .errors import EmptyMask
from .masks import Mask, bbox_of

DEFAULT_EPSILON = 0.5
DEFAULT_MIN_COMPONENT_AREA = 4
FIDELITY_MIN_IOU = 0.95

_EIGHT_CONNECTED = np.ones((3, 3), dtype=int)

# Direction encoding: 0 = +x, 1 = +y, 2 = -x, 3 = -y (y grows downward).
_STEP = ((1, 0), (0, 1), (-1, 0), (0, -1))
_LEFT_OF = (3, 0, 1, 2)
_RIGHT_OF = (1, 2, 3, 0)
# Ahead-left / ahead-right pixel offsets (row, col) relative to the corner,
# per direction. Preferring the left turn whenever the ahead-left pixel is
# foreground makes the walk pinch through diagonal contacts, which matches
# 8-connected components.
_AHEAD_LEFT = ((-1, 0), (0, 0), (0, -1), (-1, -1))
_AHEAD_RIGHT = ((0, 0), (0, -1), (-1, -1), (-1, 0))


def trace_boundary(component: np.ndarray) -> list[tuple[int, int]]:
    """Outer boundary of one 8-connected component as pixel-corner vertices.

    The walk starts at the top-left corner of the topmost-leftmost pixel and
    keeps foreground on its right; collinear corners are collapsed. Interior
    holes are ignored.
    """
    grid = np.asarray(component, dtype=bool)
    rows, cols = np.nonzero(grid)
    if rows.size == 0:
        raise EmptyMask("cannot trace an empty component")
    first = np.argmin(rows * grid.shape[1] + cols)
    start = (int(cols[first]), int(rows[first]))

    # 1-pixel padding keeps every 2x2 corner lookup in bounds; plain lists
    # make the per-step reads cheap.
    padded = np.zeros((grid.shape[0] + 2, grid.shape[1] + 2), dtype=bool)
    padded[1:-1, 1:-1] = grid
    cells = padded.tolist()

    ring: list[tuple[int, int]] = []
    x, y = start
    direction = 0
    while True:
        ring.append((x, y))
        dx, dy = _STEP[direction]
        x += dx
        y += dy
        al_r, al_c = _AHEAD_LEFT[direction]
        ar_r, ar_c = _AHEAD_RIGHT[direction]
        if cells[y + al_r + 1][x + al_c + 1]:
            direction = _LEFT_OF[direction]
        elif not cells[y + ar_r + 1][x + ar_c + 1]:
            direction = _RIGHT_OF[direction]
        if (x, y) == start and direction == 0:
            break

    # Collapse runs of collinear corners; pinch corners are visited twice and
    # correctly survive twice.
    out: list[tuple[int, int]] = []
    n = len(ring)
    for k in range(n):
        prev_pt = ring[k - 1]
        pt = ring[k]
        nxt = ring[(k + 1) % n]
        din = (pt[0] - prev_pt[0], pt[1] - prev_pt[1])
        dout = (nxt[0] - pt[0], nxt[1] - pt[1])
        if din != dout:
            out.append(pt)
    return out


def _perpendicular_distance(point: np.ndarray, start: np.ndarray, end: np.ndarray) -> float:
    dx, dy = end[0] - start[0], end[1] - start[1]
    px, py = point[0] - start[0], point[1] - start[1]
    if dx == 0.0 and dy == 0.0:
        return float(np.hypot(px, py))
    return float(abs(dx * py - dy * px) / np.hypot(dx, dy))


def simplify_polygon(points: list[tuple[float, float]], epsilon: float) -> list[tuple[float, float]]:
    """Ramer-Douglas-Peucker on a closed ring; keeps vertices deviating > epsilon."""
    if len(points) <= 3 or epsilon <= 0:
        return list(points)
    pts = np.asarray(points + [points[0]], dtype=np.float64)
    keep = np.zeros(len(pts), dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, len(pts) - 1)]
    while stack:
        s, e = stack.pop()
        if e <= s + 1:
            continue
        seg_start, seg_end = pts[s], pts[e]
        max_dist = epsilon
        split = -1
        for k in range(s + 1, e):
            d = _perpendicular_distance(pts[k], seg_start, seg_end)
            if d > max_dist:
                max_dist = d
                split = k
        if split >= 0:
            keep[split] = True
            stack.append((s, split))
            stack.append((split, e))
    simplified = [tuple(p) for p in pts[:-1][keep[:-1]]]
    if len(simplified) < 3:
        return list(points)
    return simplified


def mask_to_polygons(
    mask: Mask,
    epsilon: float = DEFAULT_EPSILON,
    min_component_area: int = DEFAULT_MIN_COMPONENT_AREA,
) -> list[list[tuple[float, float]]]:
    """Outer boundary polygon per 8-connected component, simplified at epsilon.

    Components smaller than min_component_area are dropped; interior holes are
    not represented. Every returned polygon has at least 3 vertices.
    """
    if mask.area == 0:
        raise EmptyMask(f"mask {mask.id} has no set pixels")
    labels, count = ndimage.label(mask.bitmap, structure=_EIGHT_CONNECTED)
    polygons: list[list[tuple[float, float]]] = []
    for comp_idx in range(1, count + 1):
        component = labels == comp_idx
        if int(np.count_nonzero(component)) < min_component_area:
            continue
        # Trace inside the component's tight box to keep the padded walk small.
        x, y, w, h = bbox_of(component)
        ring = trace_boundary(component[y : y + h, x : x + w])
        shifted = [(float(px + x), float(py + y)) for px, py in ring]
        polygons.append(simplify_polygon(shifted, epsilon))
    return polygons


def rasterize_polygons(
    polygons: list[list[tuple[float, float]]], height: int, width: int
) -> np.ndarray:
    """Fill polygons onto a boolean grid: even-odd rule sampled at pixel centers.

    Multiple polygons are OR-ed together (disjoint components of one mask).
    """
    out = np.zeros((height, width), dtype=bool)
    for poly in polygons:
        if len(poly) < 3:
            continue
        pts = np.asarray(poly, dtype=np.float64)
        x1 = pts[:, 0]
        y1 = pts[:, 1]
        x2 = np.roll(x1, -1)
        y2 = np.roll(y1, -1)
        row_lo = max(0, int(np.floor(y1.min())))
        row_hi = min(height - 1, int(np.ceil(y1.max())))
        for row in range(row_lo, row_hi + 1):
            yc = row + 0.5
            crossing = (y1 <= yc) != (y2 <= yc)
            if not crossing.any():
                continue
            t = (yc - y1[crossing]) / (y2[crossing] - y1[crossing])
            xs = np.sort(x1[crossing] + t * (x2[crossing] - x1[crossing]))
            for left, right in zip(xs[0::2], xs[1::2]):
                # centers c + 0.5 in [left, right)
                c_first = int(np.ceil(left - 0.5))
                c_last = int(np.ceil(right - 0.5)) - 1
                if c_last < 0 or c_first >= width:
                    continue
                out[row, max(0, c_first) : min(width - 1, c_last) + 1] = True
    return out


def polygon_fidelity(mask: Mask, polygons: list[list[tuple[float, float]]]) -> float:
    """IoU between a mask and its polygons rasterized back onto the same grid."""
    raster = rasterize_polygons(polygons, mask.height, mask.width)
    inter = int(np.count_nonzero(raster & mask.bitmap))
    union = int(np.count_nonzero(raster | mask.bitmap))
    return inter / union if union else 0.0
