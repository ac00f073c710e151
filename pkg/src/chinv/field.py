"""The autonomous field zdot = -R(z): inflection curve Im R' = 0, separatrices
leaving the poles, forward orbits and the type of simple zeros.

The inflection contour is extracted from |P|^4 Im R' = Im((Q'P - QP') conj(P)^2),
a polynomial in x and y with the same sign as Im R' away from the poles, so the
marching squares interpolation never sees the blow-up of R'.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy.integrate import solve_ivp

from .cpoly import ComplexPoly, peval
from .operator import Operator

Q_ROOT_STOP = 1e-6
CENTER_TOL = 1e-10
RK_RTOL = 1e-9
RK_ATOL = 1e-12


class Window(NamedTuple):
    re0: float
    re1: float
    im0: float
    im1: float

    @property
    def width(self) -> float:
        return self.re1 - self.re0

    @property
    def height(self) -> float:
        return self.im1 - self.im0

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)

    @property
    def center(self) -> complex:
        return complex(0.5 * (self.re0 + self.re1), 0.5 * (self.im0 + self.im1))

    def contains(self, z) -> np.ndarray:
        z = np.asarray(z)
        return ((z.real >= self.re0) & (z.real <= self.re1)
                & (z.imag >= self.im0) & (z.imag <= self.im1))


def as_window(w) -> Window:
    w = Window(*(float(x) for x in w))
    if not all(np.isfinite(w)) or w.re1 <= w.re0 or w.im1 <= w.im0:
        raise ValueError(f"empty window {tuple(w)}")
    return w


def grid_shape(window: Window, resolution) -> tuple[int, int]:
    """(nx, ny). An integer resolution gives nx cells and square-ish cells."""
    if np.ndim(resolution) == 0:
        nx = int(resolution)
        ny = max(1, int(round(nx * window.height / window.width)))
    else:
        nx, ny = (int(r) for r in resolution)
    if nx <= 0 or ny <= 0:
        raise ValueError("resolution must be positive")
    return nx, ny


def root_box(op: Operator, inflate: float = 4.0) -> Window:
    """Square window around the finite roots of PQ, inflated about its center."""
    pts = np.array(op.pq_roots(), dtype=complex)
    if len(pts) == 0:
        return Window(-1.0, 1.0, -1.0, 1.0)
    lo = complex(pts.real.min(), pts.imag.min())
    hi = complex(pts.real.max(), pts.imag.max())
    c = 0.5 * (lo + hi)
    half = 0.5 * max(hi.real - lo.real, hi.imag - lo.imag)
    if half == 0:
        half = 0.25 * max(1.0, abs(c))
    half *= inflate
    return Window(c.real - half, c.real + half, c.imag - half, c.imag + half)


@dataclass
class CurveSet:
    window: Window
    polylines: list = field(default_factory=list)
    tags: list = field(default_factory=list)
    starts: list = field(default_factory=list)
    stop_reasons: list = field(default_factory=list)

    def add(self, pts, tag: str, start=None, stop=None):
        self.polylines.append(np.asarray(pts, dtype=complex))
        self.tags.append(tag)
        self.starts.append(start)
        self.stop_reasons.append(stop)

    def extend(self, other: "CurveSet"):
        for k in range(len(other.polylines)):
            self.add(other.polylines[k], other.tags[k], other.starts[k], other.stop_reasons[k])

    def vertices(self) -> np.ndarray:
        if not self.polylines:
            return np.zeros(0, dtype=complex)
        return np.concatenate(self.polylines)

    def __len__(self):
        return len(self.polylines)


# ---------------------------------------------------------------------------
# inflection curve
# ---------------------------------------------------------------------------

# segment table: case -> list of (edge, edge); edges 0 bottom, 1 right, 2 top, 3 left
_SEGS = {
    1: [(3, 0)], 2: [(0, 1)], 3: [(3, 1)], 4: [(1, 2)], 6: [(0, 2)], 7: [(3, 2)],
    8: [(2, 3)], 9: [(0, 2)], 11: [(1, 2)], 12: [(1, 3)], 13: [(0, 1)], 14: [(3, 0)],
}
# saddles, resolved by the sign at the cell center
_SADDLE = {
    (5, True): [(0, 1), (2, 3)], (5, False): [(3, 0), (1, 2)],
    (10, True): [(3, 0), (1, 2)], (10, False): [(0, 1), (2, 3)],
}


def _flex_numerator(op: Operator):
    """Polynomials W = Q'P - QP' and W' (for R' = W / P^2)."""
    W = op.dQ * op.P - op.Q * op.dP
    return W, W.derivative()


def _flex_poly(op: Operator, W: ComplexPoly, z):
    """|P|^4 Im R'(z), vectorized and pole free."""
    p = peval(op.P, z)
    return (peval(W, z) * np.conj(p) ** 2).imag


def _d2R(op: Operator, W: ComplexPoly, dW: ComplexPoly, z):
    p, dp = peval(op.P, z), peval(op.dP, z)
    return (peval(dW, z) * p - 2 * peval(W, z) * dp) / p ** 3


def march(F: np.ndarray, xs: np.ndarray, ys: np.ndarray, skip=None) -> list[np.ndarray]:
    """Zero contour of vertex values F[j, i] at (xs[i], ys[j]) as polylines.

    Cells flagged in ``skip`` (shape (ny, nx)) produce no segments.
    """
    ny, nx = F.shape[0] - 1, F.shape[1] - 1
    inside = (F >= 0).astype(np.int8)
    case = (inside[:-1, :-1] | (inside[:-1, 1:] << 1)
            | (inside[1:, 1:] << 2) | (inside[1:, :-1] << 3))
    active = (case != 0) & (case != 15)
    if skip is not None:
        active &= ~skip
    H = (ny + 1) * nx

    def edge_id(j, i, e):
        if e == 0:
            return j * nx + i
        if e == 2:
            return (j + 1) * nx + i
        if e == 3:
            return H + j * (nx + 1) + i
        return H + j * (nx + 1) + i + 1

    def edge_point(eid):
        if eid < H:
            j, i = divmod(eid, nx)
            f0, f1 = F[j, i], F[j, i + 1]
            s = f0 / (f0 - f1)
            return complex(xs[i] + s * (xs[i + 1] - xs[i]), ys[j])
        j, i = divmod(eid - H, nx + 1)
        f0, f1 = F[j, i], F[j + 1, i]
        s = f0 / (f0 - f1)
        return complex(xs[i], ys[j] + s * (ys[j + 1] - ys[j]))

    adj: dict[int, list[int]] = {}
    for j, i in zip(*np.nonzero(active)):
        c = int(case[j, i])
        if c in (5, 10):
            centre = F[j, i] + F[j, i + 1] + F[j + 1, i + 1] + F[j + 1, i] >= 0
            segs = _SADDLE[(c, bool(centre))]
        else:
            segs = _SEGS[c]
        for a, b in segs:
            ea, eb = edge_id(j, i, a), edge_id(j, i, b)
            adj.setdefault(ea, []).append(eb)
            adj.setdefault(eb, []).append(ea)

    lines = []
    seen: set = set()
    # open chains first (start at degree-one edges), then closed loops
    starts = [e for e, nb in adj.items() if len(nb) == 1] + list(adj)
    for e0 in starts:
        if e0 in seen:
            continue
        chain = [e0]
        seen.add(e0)
        prev, cur = None, e0
        while True:
            nxt = [e for e in adj[cur] if e != prev and e not in seen]
            if not nxt:
                if len(chain) > 2 and e0 in adj[cur] and prev is not None:
                    chain.append(e0)
                break
            prev, cur = cur, nxt[0]
            chain.append(cur)
            seen.add(cur)
        if len(chain) >= 2:
            lines.append(np.array([edge_point(e) for e in chain]))
    return lines


def _vertex_grid(window: Window, nx: int, ny: int):
    xs = np.linspace(window.re0, window.re1, nx + 1)
    ys = np.linspace(window.im0, window.im1, ny + 1)
    return xs, ys


def _pole_cells(op: Operator, xs, ys, halo: int = 1) -> np.ndarray:
    nx, ny = len(xs) - 1, len(ys) - 1
    skip = np.zeros((ny, nx), dtype=bool)
    for r in op.zerosP:
        z = r.value
        i = int(np.searchsorted(xs, z.real)) - 1
        j = int(np.searchsorted(ys, z.imag)) - 1
        if -halo <= i < nx + halo and -halo <= j < ny + halo:
            skip[max(0, j - halo): j + halo + 1, max(0, i - halo): i + halo + 1] = True
    return skip


def _polish(op: Operator, W, dW, z: np.ndarray, cell: float, steps: int = 4) -> np.ndarray:
    """Newton along the gradient of Im R': z <- z - i Im R'(z) / R''(z)."""
    out = z.copy()
    with np.errstate(all="ignore"):
        f0 = np.abs(op.dR(z).imag)
        w = z.copy()
        for _ in range(steps):
            d1 = op.dR(w)
            d2 = _d2R(op, W, dW, w)
            w = w - 1j * d1.imag / d2
        f1 = np.abs(op.dR(w).imag)
        ok = np.isfinite(w) & (np.abs(w - z) <= cell) & (f1 <= f0)
    out[ok] = w[ok]
    return out


def inflection_curve(op: Operator, window, resolution=400) -> CurveSet:
    """Zero contour of Im R' in the window, tagged by the sign of Re R'."""
    window = as_window(window)
    nx, ny = grid_shape(window, resolution)
    xs, ys = _vertex_grid(window, nx, ny)
    out = CurveSet(window)
    if op.P.is_zero or op.Q.is_zero:
        return out
    W, dW = _flex_numerator(op)
    Z = xs[None, :] + 1j * ys[:, None]
    F = _flex_poly(op, W, Z)
    cell = math.hypot(xs[1] - xs[0], ys[1] - ys[0])
    for line in march(F, xs, ys, _pole_cells(op, xs, ys)):
        line = _polish(op, W, dW, line, 0.5 * cell)
        with np.errstate(all="ignore"):
            re = op.dR(line).real
        good = np.isfinite(re)
        sign = np.where(re > 0, 1, -1)
        # split into runs of constant tag and finite values
        start = 0
        for k in range(1, len(line) + 1):
            if k == len(line) or sign[k] != sign[start] or good[k] != good[start]:
                if good[start] and k - start >= 2:
                    tag = "inflection_plus" if sign[start] > 0 else "inflection_minus"
                    out.add(line[start:k], tag)
                start = k
    return out


def flex(op: Operator, z):
    """Im R'(z)."""
    return op.dR(z).imag


# ---------------------------------------------------------------------------
# integral curves of zdot = -R(z)
# ---------------------------------------------------------------------------

def _integrate(op: Operator, z0: complex, window: Window, s_cap: float, t_cap: float,
               spacing: float, rtol: float, atol: float, head: float = 0.0):
    """Arclength parametrized integral curve; returns (points, times, stop reason).

    State (x, y, t) with dz/ds = -R/|R| and dt/ds = 1/|R|.
    """
    zq = np.array([r.value for r in op.zerosQ], dtype=complex)
    zp = np.array([r.value for r in op.zerosP], dtype=complex)
    pole_r = Q_ROOT_STOP * max(1.0, window.diagonal)

    def rhs(s, y):
        z = complex(y[0], y[1])
        R = complex(op.R(z))
        a = abs(R)
        if a == 0 or not math.isfinite(a):
            return [0.0, 0.0, 0.0]
        v = -R / a
        return [v.real, v.imag, 1.0 / a]

    def ev_q(s, y):
        if len(zq) == 0:
            return 1.0
        return float(np.min(np.abs(complex(y[0], y[1]) - zq))) - Q_ROOT_STOP
    ev_q.terminal = True
    ev_q.direction = -1

    def ev_p(s, y):
        if len(zp) == 0:
            return 1.0
        return float(np.min(np.abs(complex(y[0], y[1]) - zp))) - pole_r
    ev_p.terminal = True
    ev_p.direction = -1

    def ev_win(s, y):
        return min(y[0] - window.re0, window.re1 - y[0], y[1] - window.im0, window.im1 - y[1])
    ev_win.terminal = True
    ev_win.direction = -1

    def ev_t(s, y):
        return t_cap - y[2]
    ev_t.terminal = True
    ev_t.direction = -1

    sol = solve_ivp(rhs, (0.0, s_cap), [z0.real, z0.imag, 0.0], method="RK45",
                    rtol=rtol, atol=atol, dense_output=True,
                    events=[ev_q, ev_p, ev_win, ev_t], max_step=max(spacing, 1e-12) * 8)
    s_end = float(sol.t[-1])
    reason = "arclength_cap"
    for name, te in zip(("Q_root", "pole", "window", "time"), sol.t_events):
        if len(te):
            reason = name
            s_end = float(te[0])
            break
    if sol.status == -1:
        reason = "integration_failure"
    n = max(2, int(math.ceil(s_end / spacing)) + 1)
    ss = np.linspace(0.0, s_end, n)
    if 0 < head < ss[1]:
        ss = np.insert(ss, 1, head)
    Y = sol.sol(ss)
    return Y[0] + 1j * Y[1], Y[2], reason


@dataclass(frozen=True)
class SeparatrixSeed:
    z0: complex
    direction: complex
    order: int


def separatrix_directions(op: Operator, z0: complex) -> list[SeparatrixSeed]:
    """Unit directions e with e^(m+1) parallel to -Q(z0)/G(z0), P = (z-z0)^m G."""
    z0 = complex(z0)
    best = min(op.zerosP, key=lambda r: abs(r.value - z0), default=None)
    if best is None or abs(best.value - z0) > 1e-6 * max(1.0, abs(z0)):
        raise ValueError(f"{z0} is not a root of P")
    z0, m = best.value, best.mult
    q0 = complex(peval(op.Q, z0))
    if abs(q0) <= 1e-9 * op.Q.scale * max(1.0, abs(z0)) ** max(op.q, 0):
        raise ValueError(f"{z0} is a common root of P and Q: reduce first")
    g0 = complex(op.P.taylor(z0)[m])
    w = -q0 / g0
    k = m + 1
    a = cmath.phase(w) / k
    return [SeparatrixSeed(z0, cmath.exp(1j * (a + 2 * math.pi * j / k)), k) for j in range(k)]


def separatrices_from_pole(op: Operator, z0: complex, arclength_cap: Optional[float] = None,
                           window=None, *, eps: Optional[float] = None, spacing: Optional[float] = None,
                           rtol: float = RK_RTOL, atol: float = RK_ATOL, t_cap: float = 1e12) -> CurveSet:
    """The m+1 separatrices leaving the pole z0 of -R (a root of P of order m)."""
    window = as_window(window) if window is not None else root_box(op)
    seeds = separatrix_directions(op, z0)
    diag = window.diagonal
    eps = 1e-4 * diag if eps is None else eps
    spacing = diag / 2000 if spacing is None else spacing
    cap = 10 * diag if arclength_cap is None else float(arclength_cap)
    out = CurveSet(window)
    for sd in seeds:
        start = sd.z0 + eps * sd.direction
        pts, _, reason = _integrate(op, start, window, cap, t_cap, spacing, rtol, atol, head=eps)
        out.add(np.concatenate([[sd.z0], pts]), "separatrix", sd.z0, reason)
    return out


def all_separatrices(op: Operator, window=None, **kw) -> CurveSet:
    window = as_window(window) if window is not None else root_box(op)
    out = CurveSet(window)
    for r in op.zerosP:
        out.extend(separatrices_from_pole(op, r.value, window=window, **kw))
    return out


def forward_orbit(op: Operator, z0: complex, t_max: float, window=None, *,
                  arclength_cap: Optional[float] = None, spacing: Optional[float] = None,
                  rtol: float = RK_RTOL, atol: float = RK_ATOL) -> CurveSet:
    """Integral curve of zdot = -R(z) from z0 for times up to t_max."""
    z0 = complex(z0)
    if peval(op.P, z0) == 0:
        raise ZeroDivisionError(f"{z0} is a pole of R")
    window = as_window(window) if window is not None else root_box(op)
    if not window.contains(z0):
        raise ValueError(f"start {z0} lies outside the window")
    diag = window.diagonal
    spacing = diag / 2000 if spacing is None else spacing
    cap = 10 * diag if arclength_cap is None else float(arclength_cap)
    out = CurveSet(window)
    if peval(op.Q, z0) == 0:
        out.add([z0, z0], "forward_orbit", z0, "fixed_point")
        return out
    pts, _, reason = _integrate(op, z0, window, cap, float(t_max), spacing, rtol, atol)
    out.add(pts, "forward_orbit", z0, reason)
    return out


def orbit_with_times(op: Operator, z0: complex, t_max: float, window=None, **kw):
    """(points, times) along the forward orbit; used to check against closed forms."""
    window = as_window(window) if window is not None else root_box(op)
    diag = window.diagonal
    return _integrate(op, complex(z0), window, kw.get("arclength_cap", 10 * diag), float(t_max),
                      kw.get("spacing", diag / 2000), kw.get("rtol", RK_RTOL), kw.get("atol", RK_ATOL))[:2]


# ---------------------------------------------------------------------------
# simple zeros
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ZeroType:
    kind: str
    residue: complex
    boundary_sensitive: bool


def classify_simple_zero(op: Operator, zstar: complex) -> ZeroType:
    """Sink, source or center of zdot = -R(z) at a simple root of Q."""
    zstar = complex(zstar)
    best = min(op.zerosQ, key=lambda r: abs(r.value - zstar), default=None)
    if best is None or abs(best.value - zstar) > 1e-6 * max(1.0, abs(zstar)):
        raise ValueError(f"{zstar} is not a root of Q")
    if best.mult > 1:
        raise ValueError(f"order {best.mult} > 1: elliptic sectors, not a sink/source/center")
    z = best.value
    if peval(op.P, z) == 0:
        raise ValueError(f"{z} is a common root of P and Q: reduce first")
    d = complex(op.dR(z))
    centre = abs(d.real) <= CENTER_TOL * abs(d)
    if centre:
        kind = "center"
    else:
        kind = "sink" if d.real > 0 else "source"
    return ZeroType(kind, -1.0 / d, centre)


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def curves_to_csv(cs: CurveSet) -> str:
    lines = ["curve_id,tag,re,im"]
    for k, (pl, tag) in enumerate(zip(cs.polylines, cs.tags)):
        for z in pl:
            lines.append(f"{k},{tag},{float(z.real)!r},{float(z.imag)!r}")
    return "\n".join(lines) + "\n"


def curves_to_svg(cs: CurveSet, width: int = 800) -> str:
    w = cs.window
    height = max(1, int(round(width * w.height / w.width)))
    sx, sy = width / w.width, height / w.height
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">']
    for pl, tag, st in zip(cs.polylines, cs.tags, cs.starts):
        pts = " ".join(f"{(z.real - w.re0) * sx:.3f},{(w.im1 - z.imag) * sy:.3f}" for z in pl)
        extra = f' data-start="{float(st.real)!r},{float(st.imag)!r}"' if st is not None else ""
        out.append(f'<path data-tag="{tag}"{extra} fill="none" stroke="black" '
                   f'stroke-width="1" d="M {pts.replace(" ", " L ")}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
