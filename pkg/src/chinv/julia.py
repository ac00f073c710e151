"""Julia sets of f_t(z) = z + t R(z) by backward iteration, and the random
iteration over t >= t_min whose attractor fills the minimal invariant set.

A preimage of u under f_t is a root of t Q(z) + (z - u) P(z), so each step
solves the trail equation and picks one of its N roots uniformly.
Independent chains are advanced together through the batched root finder.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .cpoly import aberth_batch, solve_trail_poly
from .invariant import GridMask, write_pgm
from .operator import Operator

BURN_IN = 100
DEFAULT_CHAINS = 1000
STAGNATION_STEPS = 20
STAGNATION_TOL = 1e-12
MERGE_RADIUS = 1e-6


class JuliaDegenerateError(ValueError):
    pass


@dataclass
class PointCloud:
    t_parameter: object          # a float, or (t_min, inf) for the chaos game
    points: np.ndarray
    seed: Optional[int]
    burn_in: int
    stagnated_chains: int = 0
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.points)

    def to_csv(self) -> str:
        lines = ["re,im"]
        lines += [f"{float(z.real)!r},{float(z.imag)!r}" for z in self.points]
        return "\n".join(lines) + "\n"


def _check_degree(op: Operator) -> None:
    if op.P.is_zero or op.Q.is_zero:
        raise JuliaDegenerateError("Julia set degenerate: a coefficient vanishes identically")
    if max(op.q, op.p) < 2:
        raise JuliaDegenerateError("Julia set degenerate: max(deg Q, deg P) < 2")


def _trail_coeffs(op: Operator, us: np.ndarray, ts: np.ndarray) -> np.ndarray:
    """Rows of ascending coefficients of t Q(z) + (z - u) P(z)."""
    N = max(op.q, op.p + 1)
    P = np.zeros(N + 1, dtype=complex)
    Q = np.zeros(N + 1, dtype=complex)
    P[:op.p + 1] = op.P.coeffs
    Q[:op.q + 1] = op.Q.coeffs
    zP = np.zeros(N + 1, dtype=complex)
    zP[1:] = P[:-1]
    return ts[:, None] * Q[None, :] + zP[None, :] - us[:, None] * P[None, :]


def _merge_clusters(Z: np.ndarray) -> np.ndarray:
    """Replace each root by the mean of the roots within MERGE_RADIUS of it.

    A k-fold root comes back from Aberth as a ring of radius ~eps^(1/k);
    averaging restores it, so an exceptional point maps back onto itself.
    """
    d = np.abs(Z[:, :, None] - Z[:, None, :])
    W = d <= MERGE_RADIUS * np.maximum(1.0, np.abs(Z))[:, :, None]
    return (W * Z[:, None, :]).sum(axis=2) / W.sum(axis=2)


def preimages(op: Operator, us, ts) -> list[np.ndarray]:
    """Finite preimages of each u under f_t (roots of the trail polynomial)."""
    us = np.atleast_1d(np.asarray(us, dtype=complex))
    ts = np.broadcast_to(np.asarray(ts, dtype=float), us.shape)
    C = _trail_coeffs(op, us, ts)
    lead = np.abs(C[:, -1])
    ok = lead > 1e-12 * np.max(np.abs(C), axis=1)
    out: list = [None] * len(us)
    if ok.any():
        Z, done = aberth_batch(C[ok], raise_on_fail=False, return_done=True)
        Z = _merge_clusters(Z)
        for k, r in enumerate(np.flatnonzero(ok)):
            out[r] = Z[k] if done[k].all() else None
    for r in range(len(us)):
        if out[r] is None:
            # leading cancellation or a stubborn solve: the scalar path
            out[r] = np.array(solve_trail_poly(op.P, op.Q, us[r], float(ts[r])).finite(), dtype=complex)
    return out


def _run_chains(op: Operator, t_of: Callable, u0: complex, n: int, seed, burn_in: int,
                chains: int):
    rng = np.random.default_rng(seed)
    B = max(1, min(chains, n)) if n > 0 else 0
    if B == 0:
        return np.zeros(0, dtype=complex), 0
    per = -(-n // B)
    u = np.full(B, complex(u0))
    still = np.zeros(B, dtype=int)
    pts = np.empty((per, B), dtype=complex)
    for k in range(burn_in + per):
        ts = t_of(rng, B)
        pre = preimages(op, u, ts)
        pick = rng.random(B)
        nxt = np.array([p[min(int(x * len(p)), len(p) - 1)] if len(p) else np.nan
                        for p, x in zip(pre, pick)])
        bad = ~np.isfinite(nxt)
        nxt[bad] = u[bad]
        same = np.abs(nxt - u) <= STAGNATION_TOL * (1.0 + np.abs(u))
        still = np.where(same, still + 1, 0)
        u = nxt
        if k >= burn_in:
            pts[k - burn_in] = u
    stagnated = int((still >= STAGNATION_STEPS).sum())
    return pts.ravel()[:n], stagnated


def inverse_orbit(op: Operator, t: float, u0: complex = 0.0, n: int = 100_000, seed=0,
                  burn_in: int = BURN_IN, chains: int = DEFAULT_CHAINS) -> PointCloud:
    """Backward orbit samples of f_t: n points after discarding burn_in steps.

    ``chains`` independent backward orbits from u0 are advanced together and
    their samples interleaved. Chains whose orbit stopped moving (an
    exceptional point, all of whose preimages are itself) are counted in
    ``stagnated_chains``.
    """
    _check_degree(op)
    if not t > 0:
        raise ValueError("t must be positive")
    pts, stag = _run_chains(op, lambda rng, B: np.full(B, float(t)), u0, n, seed, burn_in, chains)
    return PointCloud(float(t), pts, seed, burn_in, stag)


def default_t_sampler(t_min: float) -> Callable:
    """t = t_min / (1 - v) with v uniform in [0, 1); for t_min = 0, t = v / (1 - v)."""
    def sample(rng, B):
        v = np.minimum(rng.random(B), 1.0 - 1e-12)
        return (t_min if t_min > 0 else v) / (1.0 - v)
    return sample


def chaos_game(op: Operator, t_min: float, n: int = 100_000, t_sampler: Optional[Callable] = None,
               seed=0, u0: Optional[complex] = None, burn_in: int = BURN_IN,
               chains: int = DEFAULT_CHAINS) -> PointCloud:
    """Random backward iteration with t redrawn from [t_min, inf) at every step.

    ``t_sampler(rng, B)`` returns B values of t. The chains start from a root
    of PQ unless u0 is given.
    """
    _check_degree(op)
    if t_min < 0:
        raise ValueError("t_min must be non-negative")
    if u0 is None:
        u0 = op.pq_roots()[0]
    sampler = t_sampler or default_t_sampler(t_min)
    pts, stag = _run_chains(op, sampler, u0, n, seed, burn_in, chains)
    return PointCloud((float(t_min), math.inf), pts, seed, burn_in, stag)


def containment(cloud: PointCloud, mask: GridMask, dilation_cells: int = 2) -> dict:
    """Counts of cloud points inside the dilated mask, among those in the window."""
    pts = np.asarray(cloud.points)
    inw = mask.window.contains(pts)
    inside = mask.contains(pts[inw], dilation_cells)
    n_in = int(inw.sum())
    return {"fraction": float(inside.mean()) if n_in else 1.0, "in_window": n_in,
            "out_of_window": int(len(pts) - n_in), "inside": int(inside.sum())}


def containment_fraction(cloud: PointCloud, mask: GridMask, dilation_cells: int = 2) -> float:
    """Fraction of the in-window points lying in the mask dilated by the given
    number of cells (1.0 for a cloud with no point in the window)."""
    return containment(cloud, mask, dilation_cells)["fraction"]


def density_raster(cloud: PointCloud, window, resolution) -> tuple[GridMask, np.ndarray]:
    """Hit counts per cell, log-scaled to 0-255."""
    mask = GridMask.empty(window, resolution)
    pts = np.asarray(cloud.points)
    pts = pts[mask.window.contains(pts)]
    gx, gy = mask.grid_coords(pts)
    i = np.clip(np.floor(gx).astype(int), 0, mask.nx - 1)
    j = np.clip(np.floor(gy).astype(int), 0, mask.ny - 1)
    counts = np.zeros((mask.ny, mask.nx))
    np.add.at(counts, (j, i), 1)
    mask.cells = counts > 0
    top = np.log1p(counts.max()) if counts.max() > 0 else 1.0
    return mask, np.round(255 * np.log1p(counts) / top).astype(np.uint8)


def write_density_pgm(cloud: PointCloud, window, resolution, path) -> GridMask:
    mask, img = density_raster(cloud, window, resolution)
    write_pgm(mask, path, img)
    return mask
