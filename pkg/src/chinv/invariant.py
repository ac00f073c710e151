"""Raster minimal invariant sets, certification of candidate sets and the
closed-form oracle sets.

A point z joins the minimal set exactly when its associated ray z + t R(z)
meets the set already built, so the minimal set is the least fixed point of
"mark every cell whose ray hits a marked cell", started from the roots of PQ.
Rays are walked cell by cell (supercover traversal) so that one-cell-thick
sets cannot be tunnelled through.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numba
import numpy as np
from scipy import ndimage

from .cpoly import ComplexPoly, peval
from .field import Window, all_separatrices, as_window, forward_orbit, grid_shape, root_box
from .operator import Operator, classify, fully_irregular_family, reduce_common_factor

LINE_NUDGE = 1e-9
MAX_SWEEPS = 100_000
HIT_RADIUS = 0.1
TILE = 8
BLOCK = 64
MAX_DIRTY_BOXES = 256

# probing an outdated TBB only produces a warning; try OpenMP first
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]


@dataclass
class GridMask:
    window: Window
    nx: int
    ny: int
    cells: np.ndarray            # (ny, nx) bool, row 0 = lowest imaginary part
    meta: dict = field(default_factory=dict)
    # per-cell representative point in grid units (centres unless a seed point
    # was placed in the cell); rays are hit-tested against it
    anchors: Optional[np.ndarray] = field(default=None, repr=False)

    @classmethod
    def empty(cls, window, resolution) -> "GridMask":
        window = as_window(window)
        nx, ny = grid_shape(window, resolution)
        return cls(window, nx, ny, np.zeros((ny, nx), dtype=bool))

    @property
    def dx(self) -> float:
        return self.window.width / self.nx

    @property
    def dy(self) -> float:
        return self.window.height / self.ny

    def centers(self) -> np.ndarray:
        xs = self.window.re0 + (np.arange(self.nx) + 0.5) * self.dx
        ys = self.window.im0 + (np.arange(self.ny) + 0.5) * self.dy
        return xs[None, :] + 1j * ys[:, None]

    def grid_coords(self, z):
        z = np.asarray(z)
        return (z.real - self.window.re0) / self.dx, (z.imag - self.window.im0) / self.dy

    def cells_of(self, z: complex) -> list[tuple[int, int]]:
        """(j, i) of every cell whose closure contains z."""
        gx, gy = self.grid_coords(complex(z))
        out = []
        for i in _closed_index(gx, self.nx):
            for j in _closed_index(gy, self.ny):
                out.append((j, i))
        return out

    def anchor_array(self) -> np.ndarray:
        if self.anchors is None:
            a = np.empty((self.ny, self.nx, 2))
            a[..., 0] = np.arange(self.nx)[None, :] + 0.5
            a[..., 1] = np.arange(self.ny)[:, None] + 0.5
            self.anchors = a
        return self.anchors

    def mark_points(self, pts) -> None:
        """Mark the cells containing each point and anchor them at the point."""
        anchors = self.anchor_array()
        for z in np.atleast_1d(pts):
            gx, gy = self.grid_coords(complex(z))
            for j, i in self.cells_of(z):
                self.cells[j, i] = True
                anchors[j, i] = gx, gy

    def contains(self, z, dilation: int = 0) -> np.ndarray:
        """Whether each point lies in a marked cell of the dilated mask; NaN-free
        points outside the window give False."""
        cells = self.dilated(dilation) if dilation else self.cells
        gx, gy = self.grid_coords(np.asarray(z))
        i = np.floor(gx).astype(int)
        j = np.floor(gy).astype(int)
        # points on the far edges belong to the last cell
        i = np.where(gx == self.nx, self.nx - 1, i)
        j = np.where(gy == self.ny, self.ny - 1, j)
        ok = (i >= 0) & (i < self.nx) & (j >= 0) & (j < self.ny)
        out = np.zeros(np.shape(gx), dtype=bool)
        out[ok] = cells[j[ok], i[ok]]
        return out

    def in_window(self, z) -> np.ndarray:
        return self.window.contains(z)

    def dilated(self, k: int) -> np.ndarray:
        if k <= 0:
            return self.cells.copy()
        return ndimage.binary_dilation(self.cells, structure=np.ones((3, 3), bool), iterations=k)

    def interior(self) -> np.ndarray:
        """Marked cells whose 8 neighbours are marked (outside the window counts as marked)."""
        return ndimage.binary_erosion(self.cells, structure=np.ones((3, 3), bool), border_value=1)

    def boundary(self) -> np.ndarray:
        return self.cells & ~self.interior()

    def same_geometry(self, other: "GridMask") -> bool:
        return (self.nx, self.ny) == (other.nx, other.ny) and np.allclose(self.window, other.window)

    def copy(self) -> "GridMask":
        anchors = None if self.anchors is None else self.anchors.copy()
        return GridMask(self.window, self.nx, self.ny, self.cells.copy(), dict(self.meta), anchors)


def _closed_index(g: float, n: int) -> list[int]:
    k = math.floor(g)
    out = [k]
    if g == k:
        out.append(k - 1)
    return [x for x in out if 0 <= x < n]


# ---------------------------------------------------------------------------
# ray traversal kernels
# ---------------------------------------------------------------------------

@numba.njit(cache=True)
def _near(mask, rep, gx, gy, vx, vy, i, j, rad):
    """Whether a ray entering the marked cell (i, j) counts as a hit: always for
    interior cells, otherwise only if the ray line passes within ``rad`` cells
    of the cell anchor."""
    if rad >= 0.75:
        return True
    ny, nx = mask.shape
    inner = True
    for jj in range(j - 1, j + 2):
        for ii in range(i - 1, i + 2):
            if 0 <= ii < nx and 0 <= jj < ny and not mask[jj, ii]:
                inner = False
    if inner:
        return True
    cx = rep[j, i, 0] - gx
    cy = rep[j, i, 1] - gy
    return abs(vx * cy - vy * cx) <= rad * math.hypot(vx, vy) * (1 + 1e-12)


@numba.njit(cache=True)
def _dda_at(gx, gy, vx, vy, t):
    """Cell and next x/y crossing parameters of the ray at parameter t
    (nudged along the ray so that points on grid lines pick a side)."""
    px = gx + t * vx
    py = gy + t * vy
    nrm = abs(vx) + abs(vy)
    i = int(math.floor(px + 1e-12 * vx / nrm))
    j = int(math.floor(py + 1e-12 * vy / nrm))
    if vx > 0:
        tmx = (i + 1 - gx) / vx
    elif vx < 0:
        tmx = (i - gx) / vx
    else:
        tmx = math.inf
    if vy > 0:
        tmy = (j + 1 - gy) / vy
    elif vy < 0:
        tmy = (j - gy) / vy
    else:
        tmy = math.inf
    return i, j, tmx, tmy


@numba.njit(cache=True)
def _hit(mask, rep, stamp, since, gx, gy, vx, vy, i, j, i0, i1, j0, j1, rad):
    ny, nx = mask.shape
    if i < 0 or i >= nx or j < 0 or j >= ny:
        return False
    if not mask[j, i] or (i0 <= i <= i1 and j0 <= j <= j1):
        return False
    if stamp[j // TILE, i // TILE] < since:
        return False
    return _near(mask, rep, gx, gy, vx, vy, i, j, rad)


@numba.njit(cache=True)
def _jump(mask, rep, stamp, since, gx, gy, vx, vy, sx, sy, i, j, size, i0, i1, j0, j1, rad):
    """Cross the clean square of side ``size`` holding cell (i, j).

    Returns (hit, t, i, j): the exit parameter and the first cell beyond the
    square, or a hit on one of the two side cells when leaving through a
    corner.
    """
    ti = i // size
    tj = j // size
    if vx > 0:
        txe = ((ti + 1) * size - gx) / vx
    elif vx < 0:
        txe = (ti * size - gx) / vx
    else:
        txe = math.inf
    if vy > 0:
        tye = ((tj + 1) * size - gy) / vy
    elif vy < 0:
        tye = (tj * size - gy) / vy
    else:
        tye = math.inf
    te = min(txe, tye)
    tol = 1e-12 * max(1.0, te)
    if txe < tye - tol:
        i = (ti + 1) * size if sx > 0 else ti * size - 1
        j = min(max(int(math.floor(gy + te * vy)), tj * size), tj * size + size - 1)
    elif tye < txe - tol:
        j = (tj + 1) * size if sy > 0 else tj * size - 1
        i = min(max(int(math.floor(gx + te * vx)), ti * size), ti * size + size - 1)
    else:
        ci = (ti + 1) * size if sx > 0 else ti * size - 1
        cj = (tj + 1) * size if sy > 0 else tj * size - 1
        if _hit(mask, rep, stamp, since, gx, gy, vx, vy, ci, cj - sy, i0, i1, j0, j1, rad) or \
                _hit(mask, rep, stamp, since, gx, gy, vx, vy, ci - sx, cj, i0, i1, j0, j1, rad):
            return True, te, ci, cj
        i, j = ci, cj
    return False, te, i, j


@numba.njit(cache=True)
def _walk(mask, rep, stamp, stamp2, since, gx, gy, vx, vy, i0, i1, j0, j1, rad):
    """First ray parameter at which the ray enters a marked cell outside the
    start box [i0, i1] x [j0, j1]; -1 if it leaves the grid first.

    The ray is (gx, gy) + t (vx, vy) in grid units. Passing exactly through a
    grid vertex visits both side cells as well (supercover). Tiles whose
    stamp is below ``since`` hold no change the ray has not already been
    checked against, and are crossed in one jump.
    """
    ny, nx = mask.shape
    sx = 1 if vx > 0 else (-1 if vx < 0 else 0)
    sy = 1 if vy > 0 else (-1 if vy < 0 else 0)
    tdx = 1.0 / abs(vx) if vx != 0 else math.inf
    tdy = 1.0 / abs(vy) if vy != 0 else math.inf
    i, j, tmx, tmy = _dda_at(gx, gy, vx, vy, 0.0)
    t = 0.0
    while True:
        if i < 0 or i >= nx or j < 0 or j >= ny:
            # the grid is convex: once outside and moving away, done
            if (sx >= 0 and i >= nx) or (sx <= 0 and i < 0) or (sy >= 0 and j >= ny) or (sy <= 0 and j < 0):
                return -1.0
        elif stamp2[j // BLOCK, i // BLOCK] < since or stamp[j // TILE, i // TILE] < since:
            size = BLOCK if stamp2[j // BLOCK, i // BLOCK] < since else TILE
            hit, t, i, j = _jump(mask, rep, stamp, since, gx, gy, vx, vy, sx, sy, i, j, size,
                                 i0, i1, j0, j1, rad)
            if hit:
                return t
            tmx = (i + 1 - gx) / vx if vx > 0 else ((i - gx) / vx if vx < 0 else math.inf)
            tmy = (j + 1 - gy) / vy if vy > 0 else ((j - gy) / vy if vy < 0 else math.inf)
            continue
        elif _hit(mask, rep, stamp, since, gx, gy, vx, vy, i, j, i0, i1, j0, j1, rad):
            return t
        tol = 1e-12 * max(1.0, min(tmx, tmy))
        if tmx < tmy - tol:
            t = tmx
            i += sx
            tmx += tdx
        elif tmy < tmx - tol:
            t = tmy
            j += sy
            tmy += tdy
        else:
            # through a vertex: the two side cells touch the ray as well
            t = tmx
            if _hit(mask, rep, stamp, since, gx, gy, vx, vy, i + sx, j, i0, i1, j0, j1, rad) or \
                    _hit(mask, rep, stamp, since, gx, gy, vx, vy, i, j + sy, i0, i1, j0, j1, rad):
                return t
            i += sx
            j += sy
            tmx += tdx
            tmy += tdy


@numba.njit(cache=True)
def _trace(mask, rep, stamp, stamp2, since, gx, gy, vx, vy, i0, i1, j0, j1, rad):
    """_walk, traced on both sides when the ray runs along a grid line."""
    on_h = vy == 0.0 and gy == math.floor(gy)
    on_v = vx == 0.0 and gx == math.floor(gx)
    if not (on_h or on_v):
        return _walk(mask, rep, stamp, stamp2, since, gx, gy, vx, vy, i0, i1, j0, j1, rad)
    best = -1.0
    for s in (-1.0, 1.0):
        hx = gx + (s * 1e-9 if on_v else 0.0)
        hy = gy + (s * 1e-9 if on_h else 0.0)
        r = _walk(mask, rep, stamp, stamp2, since, hx, hy, vx, vy, i0, i1, j0, j1, rad)
        if r >= 0 and (best < 0 or r < best):
            best = r
    return best


@numba.njit(cache=True)
def _touch(stamp, stamp2, i, j, nx, ny, s):
    """Stamp the tiles and blocks of cell (i, j) and of its neighbours (whose
    interior status may have changed)."""
    for jj in range(max(j - 1, 0), min(j + 2, ny)):
        for ii in range(max(i - 1, 0), min(i + 2, nx)):
            stamp[jj // TILE, ii // TILE] = s
            stamp2[jj // BLOCK, ii // BLOCK] = s


@numba.njit(cache=True)
def _meets_any(gx, gy, vx, vy, boxes):
    """Whether the ray meets any of the tile boxes (slab test)."""
    for b in range(boxes.shape[0]):
        x0 = boxes[b, 0] - 1e-9
        x1 = boxes[b, 1] + 1e-9
        y0 = boxes[b, 2] - 1e-9
        y1 = boxes[b, 3] + 1e-9
        lo = 0.0
        hi = math.inf
        if vx != 0:
            a = (x0 - gx) / vx
            c = (x1 - gx) / vx
            lo = max(lo, min(a, c))
            hi = min(hi, max(a, c))
        elif gx < x0 or gx > x1:
            continue
        if vy != 0:
            a = (y0 - gy) / vy
            c = (y1 - gy) / vy
            lo = max(lo, min(a, c))
            hi = min(hi, max(a, c))
        elif gy < y0 or gy > y1:
            continue
        if lo <= hi:
            return True
    return False


def _dirty_boxes(stamp: np.ndarray, sweep: int) -> np.ndarray:
    """Grid-unit boxes of the tiles changed in the given sweep."""
    tj, ti = np.nonzero(stamp == sweep)
    return np.stack([ti * TILE, (ti + 1) * TILE, tj * TILE, (tj + 1) * TILE], axis=1).astype(np.float64)


@numba.njit(parallel=True, cache=True)
def _sweep_jacobi(mask, rep, stamp, stamp2, last, sweep, ci, cj, vx, vy, rad, boxes, use_boxes):
    """One sweep against a snapshot of the mask (rays traced in parallel,
    marks merged afterwards). Returns the number of new cells.

    With ``use_boxes``, rays last checked in the previous sweep are first
    tested against the boxes of the tiles that changed in it and skipped
    when they meet none.
    """
    ny, nx = mask.shape
    n = ci.shape[0]
    hit = np.zeros(n, dtype=np.uint8)
    for k in numba.prange(n):
        i, j = ci[k], cj[k]
        if mask[j, i]:
            continue
        if use_boxes and last[k] == sweep - 1 and not _meets_any(i + 0.5, j + 0.5, vx[k], vy[k], boxes):
            last[k] = sweep
            continue
        if _trace(mask, rep, stamp, stamp2, last[k], i + 0.5, j + 0.5, vx[k], vy[k], i, i, j, j, rad) >= 0:
            hit[k] = 1
        last[k] = sweep
    changed = 0
    for k in range(n):
        if hit[k]:
            mask[cj[k], ci[k]] = 1
            _touch(stamp, stamp2, ci[k], cj[k], nx, ny, sweep)
            changed += 1
    return changed


@numba.njit(cache=True)
def _sweep_inplace(mask, rep, stamp, stamp2, last, sweep, ci, cj, vx, vy, order, rad):
    ny, nx = mask.shape
    changed = 0
    for kk in range(order.shape[0]):
        k = order[kk]
        i, j = ci[k], cj[k]
        if mask[j, i]:
            continue
        if _trace(mask, rep, stamp, stamp2, last[k], i + 0.5, j + 0.5, vx[k], vy[k], i, i, j, j, rad) >= 0:
            mask[j, i] = 1
            _touch(stamp, stamp2, i, j, nx, ny, sweep)
            changed += 1
        last[k] = sweep
    return changed


@numba.njit(parallel=True, cache=True)
def _first_entries(target, rep, stamp, stamp2, ci, cj, vx, vy, slack):
    """Ray parameter of the first entry into target outside the start cell's
    ``slack`` neighbourhood, for every sample; -1 for none."""
    n = ci.shape[0]
    out = np.empty(n)
    for k in numba.prange(n):
        i, j = ci[k], cj[k]
        out[k] = _trace(target, rep, stamp, stamp2, 0, i + 0.5, j + 0.5, vx[k], vy[k],
                        i - slack, i + slack, j - slack, j + slack, 1.0)
    return out


def _stamps(cells: np.ndarray, size: int = 0):
    """Tile and block stamps: 0 where a square holds a marked cell, -1 elsewhere."""
    if size == 0:
        return _stamps(cells, TILE), _stamps(cells, BLOCK)
    ny, nx = cells.shape
    ty, tx = -(-ny // size), -(-nx // size)
    pad = np.zeros((ty * size, tx * size), dtype=bool)
    pad[:ny, :nx] = cells
    occ = pad.reshape(ty, size, tx, size).any(axis=(1, 3))
    return np.where(occ, 0, -1).astype(np.int64)


# ---------------------------------------------------------------------------
# samples
# ---------------------------------------------------------------------------

def _directions(mask: GridMask, op: Operator, sel: np.ndarray):
    """Cell indices and ray directions (grid units) of the selected cell
    centres, dropping poles and zeros of R."""
    jj, ii = np.nonzero(sel)
    z = mask.window.re0 + (ii + 0.5) * mask.dx + 1j * (mask.window.im0 + (jj + 0.5) * mask.dy)
    with np.errstate(all="ignore"):
        R = peval(op.Q, z) / peval(op.P, z)
    ok = np.isfinite(R) & (R != 0)
    return (ii[ok].astype(np.int64), jj[ok].astype(np.int64), z[ok],
            R.real[ok] / mask.dx, R.imag[ok] / mask.dy)


def _rasterize_polyline(mask: GridMask, pl: np.ndarray) -> None:
    """Mark every cell touched by the polyline (dense resampling), anchored at
    the first curve point in the cell so the hit test stays on the curve."""
    found: dict = {}
    _rasterize_path(mask, pl, found)
    anchors = mask.anchor_array()
    for (j, i), z in found.items():
        gx, gy = mask.grid_coords(z)
        anchors[j, i] = gx, gy


# ---------------------------------------------------------------------------
# minimal set
# ---------------------------------------------------------------------------

def _seed_points(op: Operator) -> tuple[Operator, list[complex]]:
    red, common = reduce_common_factor(op)
    pts = list(red.pq_roots()) + [c.value for c in common]
    return red, pts


def _fine_grid(window: Window, nx: int, ny: int) -> GridMask:
    """Grid of (2nx+1) x (2ny+1) cells whose centres are the centres, edge
    midpoints and vertices of the coarse cells."""
    hx, hy = window.width / (4 * nx), window.height / (4 * ny)
    w = Window(window.re0 - hx, window.re1 + hx, window.im0 - hy, window.im1 + hy)
    return GridMask(w, 2 * nx + 1, 2 * ny + 1, np.zeros((2 * ny + 1, 2 * nx + 1), dtype=bool))


def _coarsen(fine: np.ndarray, nx: int, ny: int) -> np.ndarray:
    """A coarse cell is marked when any sample in its closure is marked."""
    out = np.zeros((ny, nx), dtype=bool)
    for dj in range(3):
        for di in range(3):
            out |= fine[dj:dj + 2 * ny:2, di:di + 2 * nx:2]
    return out


def _fixed_point(grid: GridMask, red: Operator, order: str, seed: int, rad: float,
                 max_sweeps: int) -> int:
    ci, cj, _, vx, vy = _directions(grid, red, np.ones_like(grid.cells))
    anchors = grid.anchor_array()
    cells = grid.cells.astype(np.uint8)
    stamp, stamp2 = _stamps(grid.cells)
    last = np.zeros(len(ci), dtype=np.int64)
    sweeps = 0
    if order == "jacobi":
        while sweeps < max_sweeps:
            sweeps += 1
            boxes = _dirty_boxes(stamp, sweeps - 1)
            use = sweeps > 1 and len(boxes) <= MAX_DIRTY_BOXES
            if _sweep_jacobi(cells, anchors, stamp, stamp2, last, sweeps, ci, cj, vx, vy, rad, boxes, use) == 0:
                break
    elif order == "shuffled":
        rng = np.random.default_rng(seed)
        while sweeps < max_sweeps:
            sweeps += 1
            perm = rng.permutation(len(ci)).astype(np.int64)
            if _sweep_inplace(cells, anchors, stamp, stamp2, last, sweeps, ci, cj, vx, vy, perm, rad) == 0:
                break
    else:
        raise ValueError(f"unknown sweep order {order!r}")
    grid.cells = cells.astype(bool)
    return sweeps


def minimal_set_grid(op: Operator, window=None, resolution=400, *, supersample: bool = True,
                     separatrices: bool = False, orbits=(), order: str = "jacobi", seed: int = 0,
                     threads: Optional[int] = None, max_sweeps: int = MAX_SWEEPS,
                     hit_radius: float = HIT_RADIUS) -> GridMask:
    """Least fixed point of the dual ray sweep, as a raster over the window.

    A ray counts as meeting the set when it enters an interior marked cell, or
    passes within ``hit_radius`` cells of the anchor of a boundary marked cell
    (its centre, or the root seeded in it). With ``supersample`` the sweep runs
    on the centres, edge midpoints and vertices of the cells (4x the samples)
    and a cell is marked when any of its samples is; this resolves sets lying
    on grid lines. ``order`` is "jacobi" (snapshot sweeps, parallel) or
    "shuffled" (in-place sweeps in a random order drawn from ``seed``); both
    reach the same fixed point. ``separatrices`` pre-seeds the separatrices
    leaving the roots of P, ``orbits`` the forward orbits of the given points.
    """
    window = as_window(window) if window is not None else auto_window(op)
    mask = GridMask.empty(window, resolution)
    if threads:
        numba.set_num_threads(int(threads))
    rep = classify(op)
    mask.meta.update(order=order, supersample=supersample, separatrices=separatrices,
                     hit_radius=hit_radius)
    if rep.special_case in ("P_zero", "Q_zero"):
        # the finite root set of the non-vanishing coefficient is invariant
        zs = op.zerosQ if rep.special_case == "P_zero" else op.zerosP
        mask.mark_points([r.value for r in zs])
        mask.meta["sweeps"] = 0
        return mask
    if not rep.nontrivial_exists:
        mask.cells[:] = True
        mask.meta.update(sweeps=0, whole_plane=True)
        return mask
    red, pts = _seed_points(op)
    grid = _fine_grid(window, mask.nx, mask.ny) if supersample else mask
    grid.mark_points(pts)
    if separatrices and red.zerosP:
        for pl in all_separatrices(red, window).polylines:
            _rasterize_polyline(grid, pl)
    for z0 in orbits:
        _rasterize_polyline(grid, forward_orbit(red, z0, 1e6, window).polylines[0])
    sweeps = _fixed_point(grid, red, order, seed, hit_radius, max_sweeps)
    if supersample:
        mask.cells = _coarsen(grid.cells, mask.nx, mask.ny)
        mask.meta["fine"] = grid
    mask.meta["sweeps"] = sweeps
    return mask


def sweep_once(op: Operator, mask: GridMask, hit_radius: Optional[float] = None) -> GridMask:
    """One extra Jacobi sweep over the grid the mask was computed on (the
    fixed-point check)."""
    red, _ = _seed_points(op)
    rad = mask.meta.get("hit_radius", HIT_RADIUS) if hit_radius is None else hit_radius
    fine = mask.meta.get("fine")
    grid = (fine if fine is not None else mask).copy()
    ci, cj, _, vx, vy = _directions(grid, red, np.ones_like(grid.cells))
    cells = grid.cells.astype(np.uint8)
    last = np.zeros(len(ci), dtype=np.int64)
    _sweep_jacobi(cells, grid.anchor_array(), *_stamps(grid.cells), last, 1, ci, cj, vx, vy, rad,
                  np.zeros((0, 4)), False)
    out = mask.copy()
    out.cells = _coarsen(cells.astype(bool), mask.nx, mask.ny) if fine is not None else cells.astype(bool)
    return out


def auto_window(op: Operator, max_doublings: int = 8, resolution: int = 128) -> Window:
    """Bounding box of the roots of PQ inflated by 4; in the compact case it is
    doubled until the inscribed disk certifies as invariant."""
    w = root_box(op)
    rep = classify(op)
    if not rep.compact_exists or rep.special_case != "none":
        return w
    for _ in range(max_doublings):
        half = 0.5 * w.width
        disk = oracle_set(op, "disk", w, resolution, radius=0.95 * half, center=w.center)
        if certify_invariant(op, disk).passed:
            return w
        c = w.center
        w = Window(c.real - 2 * half, c.real + 2 * half, c.imag - 2 * half, c.imag + 2 * half)
    return w


# ---------------------------------------------------------------------------
# certification
# ---------------------------------------------------------------------------

@dataclass
class CertificationReport:
    passed: bool
    violations: list
    boundary_cells_checked: int
    zeros_inside: bool
    zeros_interior: bool
    method: str


def certify_invariant(op: Operator, mask: GridMask, method: str = "auto", slack: int = 1,
                      max_violations: int = 1000) -> CertificationReport:
    """Check the ray condition on a candidate mask.

    "boundary_rays": rays from boundary cell centres must not enter the
    interior. "complement_rays": rays from unmarked cell centres must not enter
    the mask (for sets without interior). Hits within ``slack`` cells of the
    start are raster noise and ignored. "auto" picks by whether the mask has an
    interior.
    """
    red, pts = _seed_points(op)
    interior = mask.interior() & mask.cells
    if method == "auto":
        method = "boundary_rays" if interior.any() else "complement_rays"
    inside = all(any(mask.cells[j, i] for j, i in mask.cells_of(z)) for z in pts
                 if mask.window.contains(z))
    inside = inside and all(mask.window.contains(z) for z in pts)
    in_int = inside and all(any(interior[j, i] for j, i in mask.cells_of(z)) for z in pts)
    if method == "boundary_rays":
        src, target = mask.boundary(), interior
    elif method == "complement_rays":
        src, target = ~mask.cells, mask.cells
    else:
        raise ValueError(f"unknown certification method {method!r}")
    ci, cj, z, vx, vy = _directions(mask, red, src)
    hits = _first_entries(target.astype(np.uint8), mask.anchor_array(), *_stamps(target), ci, cj, vx, vy, int(slack))
    bad = np.flatnonzero(hits >= 0)
    violations = [(complex(z[k]), float(hits[k])) for k in bad[:max_violations]]
    zeros_ok = inside and (in_int or not interior.any())
    return CertificationReport(bool(zeros_ok and len(bad) == 0), violations, int(len(z)),
                               bool(inside), bool(in_int), method)


# ---------------------------------------------------------------------------
# forward cross-check
# ---------------------------------------------------------------------------

def trail_closure_set(op: Operator, seeds, sweeps: int = 50, samples_per_trail: int = 64,
                      window=None, resolution=200, t_max: float = 1e6) -> GridMask:
    """Forward construction: rasterize the trails started at the seeds, then
    the trails started in every newly marked cell, and repeat.

    Each new cell restarts from the trail point that first landed in it, not
    from its centre: a centre can lie outside the set, and trails from such
    points would leak outwards sweep after sweep. Consecutive samples of a
    branch are joined by chords.
    """
    from .trails import T_START, s_of_t, track_batch

    window = as_window(window) if window is not None else auto_window(op)
    mask = GridMask.empty(window, resolution)
    red, _ = reduce_common_factor(op)
    seeds = np.array([complex(s) for s in np.atleast_1d(seeds)])
    mask.mark_points(seeds)
    lo = s_of_t(T_START)
    s_grid = lo + (s_of_t(t_max) - lo) * np.arange(1, samples_per_trail + 1) / samples_per_trail
    frontier = seeds
    rounds = 0
    for rounds in range(1, sweeps + 1):
        if len(frontier) == 0:
            break
        found = {}
        for k in range(0, len(frontier), 512):
            chunk = frontier[k:k + 512]
            Z, D0, _ = track_batch(red, chunk, s_grid[None, :], base_steps=samples_per_trail)
            for b in range(len(chunk)):
                for n in range(Z.shape[2]):
                    path = Z[b, :, n]
                    if n < D0.shape[1]:
                        path = np.concatenate([[D0[b, n]], path])
                    _rasterize_path(mask, path, found)
        frontier = np.array(list(found.values()), dtype=complex)
    mask.meta["sweeps"] = rounds
    return mask


def _rasterize_path(mask: GridMask, pl: np.ndarray, found: dict) -> None:
    """Mark the cells along a polyline; the first point landing in each newly
    marked cell is recorded in ``found``."""
    pl = np.asarray(pl)
    pl = pl[np.isfinite(pl)]
    if len(pl) == 0:
        return
    h = 0.25 * min(mask.dx, mask.dy)
    pts = [pl[:1]]
    for a, b in zip(pl[:-1], pl[1:]):
        n = max(1, int(math.ceil(abs(b - a) / h)))
        pts.append(a + (b - a) * np.arange(1, n + 1) / n)
    pts = np.concatenate(pts)
    pts = pts[mask.window.contains(pts)]
    gx, gy = mask.grid_coords(pts)
    i = np.clip(np.floor(gx).astype(int), 0, mask.nx - 1)
    j = np.clip(np.floor(gy).astype(int), 0, mask.ny - 1)
    for jj, ii, z in zip(j, i, pts):
        if not mask.cells[jj, ii]:
            mask.cells[jj, ii] = True
            found[(jj, ii)] = z


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------

def is_cochleoid(op: Operator) -> bool:
    P, Q = op.P, op.Q
    if P.degree != 1 or Q.degree != 2:
        return False
    lam = op.lam
    zp, zq = op.zerosP, op.zerosQ
    return (abs(lam - 1) < 1e-12 and len(zp) == 1 and abs(zp[0].value - 1) < 1e-12
            and len(zq) == 1 and zq[0].mult == 2 and abs(zq[0].value) < 1e-12)


def cochleoid_boundary(theta):
    """Boundary point with argument theta: r = sin(theta)/theta."""
    theta = np.asarray(theta, dtype=float)
    r = np.where(theta == 0, 1.0, np.sin(theta) / np.where(theta == 0, 1.0, theta))
    return r * np.exp(1j * theta)


def oracle_set(op: Operator, name: str, window, resolution, **params) -> GridMask:
    """Rasterize a closed-form set at cell centres.

    Names: cochleoid (only for P = z - 1, Q = z^2), disk(radius, center),
    halfplane(level, theta): Re(z e^{-i theta}) <= level,
    cone_complement(apex, axis, opening): the complement of the open cone of
    the given opening angle around the axis direction,
    interval: the fully irregular interval of a class I operator.
    """
    mask = GridMask.empty(window, resolution)
    z = mask.centers()
    if name == "cochleoid":
        if not is_cochleoid(op):
            raise ValueError("the cochleoid oracle needs P = z - 1, Q = z^2")
        th = np.angle(z)
        r = np.abs(cochleoid_boundary(th))
        mask.cells = np.abs(z) <= r
        mask.mark_points([0, 1])
    elif name == "disk":
        c = complex(params.get("center", 0))
        mask.cells = np.abs(z - c) <= float(params["radius"])
    elif name == "halfplane":
        th = float(params.get("theta", 0.0))
        mask.cells = (z * np.exp(-1j * th)).real <= float(params["level"])
    elif name == "cone_complement":
        apex = complex(params.get("apex", 0))
        axis = float(params["axis"])
        half = 0.5 * float(params["opening"])
        ang = np.angle((z - apex) * np.exp(-1j * axis))
        mask.cells = ~((np.abs(ang) < half) & (z != apex))
    elif name == "interval":
        fam = fully_irregular_family(op)
        if fam.kind != "interval":
            raise ValueError(f"operator has a fully irregular {fam.kind}, not an interval")
        a, b = fam.endpoints()
        _rasterize_polyline(mask, np.array([a, b]))
        mask.mark_points([a, b])
    else:
        raise ValueError(f"unknown oracle {name!r}")
    mask.meta["oracle"] = name
    return mask


# ---------------------------------------------------------------------------
# comparison and I/O
# ---------------------------------------------------------------------------

def mask_distance(a: GridMask, b: GridMask) -> dict:
    """Boundary Hausdorff distance (chessboard metric, in cells) and the sizes
    of both set differences."""
    if not a.same_geometry(b):
        raise ValueError("masks have different windows or resolutions")
    ba, bb = a.boundary(), b.boundary()
    out = {"a_minus_b_cells": int((a.cells & ~b.cells).sum()),
           "b_minus_a_cells": int((b.cells & ~a.cells).sum())}
    if not ba.any() and not bb.any():
        out["hausdorff_cells"] = 0
    elif not ba.any() or not bb.any():
        out["hausdorff_cells"] = max(a.nx, a.ny)
    else:
        da = ndimage.distance_transform_cdt(~bb, metric="chessboard")
        db = ndimage.distance_transform_cdt(~ba, metric="chessboard")
        out["hausdorff_cells"] = int(max(da[ba].max(), db[bb].max()))
    return out


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def write_pgm(mask: GridMask, path, values: Optional[np.ndarray] = None) -> None:
    """Binary PGM (P5), rows top to bottom = decreasing imaginary part, plus a
    JSON sidecar with the window."""
    img = values if values is not None else np.where(mask.cells, 255, 0)
    img = np.asarray(img, dtype=np.uint8)[::-1]
    with open(path, "wb") as f:
        f.write(f"P5\n{mask.nx} {mask.ny}\n255\n".encode("ascii"))
        f.write(img.tobytes())
    meta = {"window": list(map(float, mask.window)), "nx": mask.nx, "ny": mask.ny}
    sidecar_path(path).write_text(json.dumps(meta))


def read_pgm(path) -> GridMask:
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end].decode("ascii"))
        pos = end
    pos += 1
    if tokens[0] != "P5":
        raise ValueError(f"{path}: not a binary PGM")
    nx, ny, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval > 255:
        raise ValueError(f"{path}: 16-bit PGM not supported")
    img = np.frombuffer(data[pos:pos + nx * ny], dtype=np.uint8).reshape(ny, nx)
    meta = json.loads(sidecar_path(path).read_text())
    if (meta["nx"], meta["ny"]) != (nx, ny):
        raise ValueError(f"{path}: sidecar geometry does not match the image")
    return GridMask(as_window(meta["window"]), nx, ny, img[::-1] > 127)
