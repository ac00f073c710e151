"""Root trails of t*Q(z) + (z - u)*P(z) = 0 for t in [0, inf).

Every branch is continued in the homogenized time s = t / (1 + t). A step
predicts with the time-dependent field V, corrects all N roots at once with
warm-started Aberth iterations, and accepts only when each corrected root is
unambiguously the nearest one to its own prediction. Rejected steps are
bisected in s; a step still ambiguous after MAX_BISECT halvings is a genuine
collision and is recorded as a merge.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .cpoly import aberth_batch, expand, peval
from .field import CurveSet, inflection_curve
from .operator import Operator, reduce_common_factor

T_START = 1e-6
BASE_STEPS = 512
MAX_BISECT = 40
MERGE_SHRINK = 2.0 ** -30
MERGE_JUMP = 1e-6
GUARD = 0.25
Q_ROOT_RADIUS = 1e-6
MOVING_POLE_FLAG = 1e-6


class WholePlaneError(ValueError):
    """The trail equation vanishes identically for this start point."""


class MovingPoleError(ZeroDivisionError):
    """t*R'(z) + 1 = 0: the velocity field has a pole here."""


# ---------------------------------------------------------------------------
# pointwise quantities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FieldSample:
    z: complex
    t: float
    V: complex
    du: complex
    near_moving_pole: bool


def field_V(op: Operator, z: complex, t: float) -> FieldSample:
    z = complex(z)
    if peval(op.P, z) == 0:
        raise ZeroDivisionError(f"{z} is a pole of R")
    R, dR = op.R_and_dR(z)
    den = t * dR + 1.0
    if den == 0 or not np.isfinite(den):
        raise MovingPoleError(f"moving pole at z={z}, t={t}")
    return FieldSample(z, float(t), complex(-R / den), complex(1.0 / den),
                       bool(abs(den) < MOVING_POLE_FLAG))


def velocity(op: Operator, z, t):
    """Vectorized V(z, t); non-finite where undefined."""
    with np.errstate(all="ignore"):
        R, dR = op.R_and_dR(z)
        return -R / (t * dR + 1.0)


@dataclass(frozen=True)
class StartDirection:
    z0: complex
    eta_dot: complex
    direction: complex
    order: int


def start_directions(op: Operator, u: complex) -> list[StartDirection]:
    """Initial directions of the traces leaving each root of P.

    For a root z0 of multiplicity m and eta(t) = gamma(t**m) (or t**(m+1) when
    u = z0), eta'(0) solves eta'^m = -Q(z0)/((z0-u) G(z0)), respectively
    eta'^(m+1) = -Q(z0)/G(z0), with P = (z-z0)^m G.
    """
    u = complex(u)
    out = []
    for r in op.zerosP:
        z0, m = r.value, r.mult
        q0 = peval(op.Q, z0)
        if abs(q0) <= 1e-9 * op.Q.scale * max(1.0, abs(z0)) ** max(op.q, 0):
            raise ValueError(f"{z0} is a common root of P and Q: reduce first")
        g0 = op.P.taylor(z0)[m]
        if abs(z0 - u) <= 1e-12 * max(1.0, abs(z0)):
            w, k = -q0 / g0, m + 1
        else:
            w, k = -q0 / ((z0 - u) * g0), m
        mod, arg = abs(w) ** (1.0 / k), cmath.phase(w) / k
        for j in range(k):
            e = cmath.exp(1j * (arg + 2 * math.pi * j / k))
            out.append(StartDirection(z0, mod * e, e, k))
    return out


@dataclass(frozen=True)
class Membership:
    on_trail: bool
    t_value: Optional[float]


def trail_membership(op: Operator, u: complex, z: complex, tol: float = 1e-9) -> Membership:
    """Semi-algebraic test: Im(P conj(Q) (z-u)) = 0 and Re(...) <= 0."""
    z, u = complex(z), complex(u)
    q = complex(peval(op.Q, z))
    w = complex(peval(op.P, z)) * q.conjugate() * (z - u)
    if q == 0:
        # final divisor: roots of Q belong to every trail as t -> infinity
        return Membership(True, None)
    scale = abs(w)
    ok = abs(w.imag) <= tol * scale and w.real <= tol * scale
    return Membership(bool(ok), -w.real / abs(q) ** 2)


@dataclass(frozen=True)
class Ray:
    origin: complex
    direction: complex
    degenerate: bool

    def point(self, t):
        return self.origin + np.asarray(t) * self.direction


def associated_ray(op: Operator, z: complex) -> Ray:
    z = complex(z)
    p = complex(peval(op.P, z))
    if p == 0:
        raise ZeroDivisionError(f"{z} is a pole of R")
    d = complex(peval(op.Q, z)) / p
    return Ray(z, d, d == 0)


def nongeneric_locus(op: Operator, window, resolution=400):
    """Negative inflection branch (R' real and < 0) and its image u = z - R/R'.

    Returns two CurveSets: the branch itself (tag inflection_minus) and its
    pointwise image (tag nongeneric_image).
    """
    cs = inflection_curve(op, window, resolution)
    big, small = CurveSet(cs.window), CurveSet(cs.window)
    for line, tag in zip(cs.polylines, cs.tags):
        if tag != "inflection_minus":
            continue
        z = np.asarray(line)
        big.add(z, tag)
        P, Q = peval(op.P, z), peval(op.Q, z)
        dP, dQ = peval(op.dP, z), peval(op.dQ, z)
        with np.errstate(all="ignore"):
            img = z + P * Q / (dP * Q - dQ * P)
        small.add(img[np.isfinite(img)], "nongeneric_image")
    return big, small


# ---------------------------------------------------------------------------
# continuation core
# ---------------------------------------------------------------------------

def s_of_t(t):
    return np.asarray(t, dtype=float) / (1.0 + np.asarray(t, dtype=float))


def t_of_s(s):
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore"):
        return s / (1.0 - s)


class _System:
    """Coefficient arrays of the trail polynomial for a fixed operator."""

    def __init__(self, op: Operator):
        self.op = op
        self.N = op.N
        n1 = self.N + 1
        self.Qc = np.zeros(n1, dtype=complex)
        self.Qc[: op.q + 1] = op.Q.array()
        self.Pz = np.zeros(n1, dtype=complex)   # z * P
        self.Pz[1 : op.p + 2] = op.P.array()
        self.P0 = np.zeros(n1, dtype=complex)   # P
        self.P0[: op.p + 1] = op.P.array()
        self.lead_cancel = op.q == op.p + 1

    def coeffs(self, us: np.ndarray, ts: np.ndarray) -> np.ndarray:
        return (ts[:, None] * self.Qc[None, :] + self.Pz[None, :]
                - us[:, None] * self.P0[None, :])

    def safe_s(self, s: np.ndarray) -> np.ndarray:
        """Nudge s off the isolated time where the leading coefficient cancels."""
        if not self.lead_cancel:
            return s
        t = t_of_s(s)
        lead = t * self.op.q_inf + self.op.p_inf
        bad = np.abs(lead) <= 1e-9 * max(abs(self.op.p_inf), 1e-300) * (1 + t)
        if bad.any():
            s = s.copy()
            s[bad] = s[bad] * (1 - 1e-9)
        return s

    def roots(self, us, ts, init):
        if init is not None:
            # real coefficients with real starting points keep Aberth on the
            # real line; a tiny complex jitter lets conjugate pairs split off
            n = init.shape[1]
            jit = np.exp(1j * (0.7 + 2.399963 * np.arange(n)))
            init = init + 1e-9 * (1.0 + np.abs(init)) * jit[None, :]
        return aberth_batch(self.coeffs(us, ts), init=init, max_iter=80,
                            raise_on_fail=False, return_done=True)


def _guard_ok(Z1, pred, done):
    n = Z1.shape[1]
    if n == 1:
        sep = np.full(Z1.shape, np.inf)
    else:
        dist = np.abs(Z1[:, :, None] - Z1[:, None, :])
        dist[:, np.arange(n), np.arange(n)] = np.inf
        sep = dist.min(axis=2)
    disp = np.abs(Z1 - pred)
    fin = np.isfinite(Z1).all(axis=1)
    return fin & done.all(axis=1) & (disp <= GUARD * sep).all(axis=1)


def _assign(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Permutation of B's columns matching A row-wise (Hungarian)."""
    out = np.empty_like(B)
    for i in range(A.shape[0]):
        cost = np.abs(A[i][:, None] - B[i][None, :])
        cost[~np.isfinite(cost)] = 1e300
        r, c = linear_sum_assignment(cost)
        out[i, r] = B[i, c]
    return out


class _Recorder:
    def __init__(self, B):
        self.rows = [[] for _ in range(B)]

    def add(self, rows, s, Z, merged):
        for k, i in enumerate(rows):
            self.rows[i].append((float(s[k]), Z[k].copy(), bool(merged[k])))


def _try_step(sysm: _System, us, Z0, s0, s1, retry: np.ndarray):
    """One predictor-corrector step; returns (Z1, accepted, prediction)."""
    s1 = sysm.safe_s(s1)
    t0, t1 = t_of_s(s0), t_of_s(s1)
    V = velocity(sysm.op, Z0, t0[:, None])
    pred = Z0 + (t1 - t0)[:, None] * V
    bad = ~np.isfinite(pred)
    pred[bad] = Z0[bad]
    Z1, done = sysm.roots(us, t1, pred)
    ok = _guard_ok(Z1, pred, done)
    again = ~ok & retry
    if again.any():
        # the Euler predictor can overshoot near turning points; retry from
        # the previous positions before shrinking the step
        Z1b, doneb = sysm.roots(us[again], t1[again], Z0[again])
        okb = _guard_ok(Z1b, Z0[again], doneb)
        idx = np.flatnonzero(again)
        Z1[idx[okb]] = Z1b[okb]
        ok[idx[okb]] = True
    return Z1, ok, pred, s1


def _advance(sysm: _System, rows, us, Z0, s0, s1, rec, merges):
    """Move rows from s0 to s1 with step halving on rejection; returns Z at s1.

    Each row starts with the full step; a rejected step is halved, an accepted
    one lets the next step double. A row whose step has shrunk below
    MERGE_SHRINK of its starting size, or that failed MAX_BISECT times in a
    row, sits on a collision: it jumps MERGE_JUMP of the starting size past it
    and the fresh divisor is matched to the prediction.
    """
    Z = Z0.copy()
    s = s0.astype(float).copy()
    h = s1 - s
    h0 = np.maximum(h, 1e-300)
    fails = np.zeros(len(s), dtype=int)
    live = h > 0
    while live.any():
        k = np.flatnonzero(live)
        stuck = (fails[k] >= MAX_BISECT) | (h[k] < MERGE_SHRINK * h0[k])
        h[k[stuck]] = np.maximum(h[k[stuck]], MERGE_JUMP * h0[k[stuck]])
        tgt = np.minimum(s[k] + h[k], s1[k])
        Z1, ok, pred, tgt = _try_step(sysm, us[k], Z[k], s[k], tgt, fails[k] > 0)
        merged = ~ok & stuck
        if merged.any():
            m = np.flatnonzero(merged)
            fresh = np.where(np.isfinite(Z1[m]), Z1[m], pred[m])
            Z1[m] = _assign(pred[m], fresh)
            for i, tt in zip(rows[k[m]], t_of_s(tgt[m])):
                merges.append((int(i), float(tt)))
        take = ok | merged
        if rec is not None and take.any():
            rec.add(rows[k[take]], tgt[take], Z1[take], merged[take])
        kt = k[take]
        Z[kt] = Z1[take]
        s[kt] = np.where(tgt[take] >= s1[kt] * (1 - 1e-15), s1[kt], tgt[take])
        h[kt] = 2 * h[kt]
        fails[kt] = 0
        kf = k[~take]
        h[kf] = 0.5 * h[kf]
        fails[kf] += 1
        live = s < s1
    return Z


def _initial(sysm: _System, us: np.ndarray, t_start: float):
    """Initial divisor points (B, p+1), positions at t_start (B, N) and birth mask."""
    op = sysm.op
    init = np.array(expand(op.zerosP), dtype=complex)
    B = len(us)
    D0 = np.concatenate([np.repeat(init[None, :], B, axis=0), us[:, None]], axis=1)
    Zs, done = sysm.roots(us, np.full(B, t_start), None)
    if not done.all():
        rows = np.flatnonzero(~done.all(axis=1))
        Zs[rows] = sysm.roots(us[rows], np.full(len(rows), t_start), None)[0]
    N = sysm.N
    Z = np.empty((B, N), dtype=complex)
    born = np.zeros((B, N), dtype=bool)
    k0 = D0.shape[1]
    for i in range(B):
        cost = np.abs(D0[i][:, None] - Zs[i][None, :])
        r, c = linear_sum_assignment(cost)
        Z[i, r] = Zs[i, c]
        rest = np.setdiff1d(np.arange(N), c)
        Z[i, k0:] = Zs[i, rest]
        born[i, k0:] = True
    return D0, Z, born


def track_batch(op: Operator, us: Sequence[complex], s_targets, t_start: float = T_START,
                base_steps: int = BASE_STEPS):
    """Positions of all branches for many start points at per-row s targets.

    ``s_targets`` is (B, T), increasing along each row, all in (s(t_start), 1).
    The integration also passes through a shared base grid of ``base_steps``
    points so that long gaps between targets never become single steps.
    Returns (Z of shape (B, T, N), initial divisors (B, p+1), merge list).
    """
    op = _reduced(op)
    sysm = _System(op)
    us = np.asarray(us, dtype=complex).ravel()
    S = np.atleast_2d(np.asarray(s_targets, dtype=float))
    if S.shape[0] == 1 and len(us) > 1:
        S = np.repeat(S, len(us), axis=0)
    B, T = S.shape
    _check_whole_plane(op, us)
    D0, Z, _ = _initial(sysm, us, t_start)
    s_cur = np.full(B, s_of_t(t_start))
    out = np.empty((B, T, sysm.N), dtype=complex)
    merges: list = []
    rows = np.arange(B)
    smax = S.max()
    base = np.linspace(s_cur[0], smax, base_steps + 1)[1:]
    for j in range(T):
        target = S[:, j]
        # walk through the base grid points below this target
        while True:
            nxt = np.array([base[np.searchsorted(base, s, side="right")]
                            if np.searchsorted(base, s, side="right") < len(base) else np.inf
                            for s in s_cur])
            step = np.minimum(nxt, target)
            m = step > s_cur
            if not m.any():
                break
            Z[m] = _advance(sysm, rows[m], us[m], Z[m], s_cur[m], step[m], None, merges)
            s_cur = np.where(m, step, s_cur)
            if np.all(s_cur >= target):
                break
        out[:, j] = Z
    return out, D0, merges


def _reduced(op: Operator) -> Operator:
    red, _ = reduce_common_factor(op)
    return red


def _check_whole_plane(op: Operator, us):
    if op.p == 0 and op.q == 1:
        lam = op.lam
        if abs(lam.imag) <= 1e-12 * abs(lam) and lam.real < 0:
            z0 = op.zerosQ[0].value
            for u in np.atleast_1d(us):
                if abs(u - z0) <= 1e-12 * max(1.0, abs(z0)):
                    raise WholePlaneError(
                        "trail equation vanishes identically at t = -1/lambda: roots are the whole plane")


# ---------------------------------------------------------------------------
# single-start traces
# ---------------------------------------------------------------------------

@dataclass
class Trace:
    u: complex
    t: np.ndarray
    z: np.ndarray
    status: list
    origin: tuple
    terminus: tuple
    merges: list = field(default_factory=list)

    def at(self, t: float) -> complex:
        k = int(np.argmin(np.abs(self.t - t)))
        return complex(self.z[k])


def _s_grid(t_max: float, t_start: float, base_steps: int, t_eval=None) -> np.ndarray:
    s0, s1 = s_of_t(t_start), s_of_t(t_max)
    g = np.linspace(s0, s1, base_steps + 1)[1:]
    if t_eval is not None:
        te = np.asarray(t_eval, dtype=float)
        te = te[(te > t_start) & (te <= t_max)]
        g = np.union1d(g, s_of_t(te))
    return g


def track_trail(op: Operator, u: complex, t_max: float = 1e6, *, t_start: float = T_START,
                base_steps: int = BASE_STEPS, t_eval=None) -> list[Trace]:
    """All N branches of the trail of u, sampled on [0, t_max]."""
    if not np.isfinite(t_max) or t_max <= t_start:
        raise ValueError("t_max must be finite and above the start time")
    u = complex(u)
    red, common = reduce_common_factor(op)
    _check_whole_plane(red, [u])
    sysm = _System(red)
    us = np.array([u])
    D0, Z, born = _initial(sysm, us, t_start)
    rec = _Recorder(1)
    merges: list = []
    rec.add(np.array([0]), np.array([s_of_t(t_start)]), Z, np.zeros(1, bool))
    s_cur = np.array([s_of_t(t_start)])
    for s in _s_grid(t_max, t_start, base_steps, t_eval):
        Z = _advance(sysm, np.array([0]), us, Z, s_cur, np.array([s]), rec, merges)
        s_cur = np.array([s])
    samples = rec.rows[0]
    ts = np.concatenate([[0.0], t_of_s(np.array([x[0] for x in samples]))])
    Zs = np.array([x[1] for x in samples])
    mflag = [False] + [x[2] for x in samples]
    traces = []
    N = sysm.N
    k0 = D0.shape[1]
    lead_ratio = red.p_inf / red.q_inf if red.N > red.p + 1 else None
    for k in range(N):
        if k < k0:
            z0 = D0[0, k]
            origin = ("start_at_u", u) if k == k0 - 1 else ("start_at_P_root", z0)
            zz = np.concatenate([[z0], Zs[:, k]])
            tt = ts
            st = ["merged" if m else "ok" for m in mflag]
        else:
            zz = Zs[:, k]
            tt = ts[1:]
            st = ["merged" if m else "ok" for m in mflag[1:]]
            origin = ("born_at_infinity", _birth_arg(zz[0], red))
        traces.append(Trace(u, tt, zz, st, origin, ("truncated", float(t_max))))
    _set_termini(traces, red, t_max)
    for c in common:
        for _ in range(c.mult):
            tt = ts
            traces.append(Trace(u, tt, np.full(len(tt), c.value), ["ok"] * len(tt),
                                ("start_at_P_root", c.value), ("Q_root", c.value)))
    for i, t in merges:
        for tr in traces:
            tr.merges.append(t)
    return traces


def _birth_arg(z: complex, op: Operator) -> float:
    """Argument of the nearest solution of z^L + p_inf/q_inf = 0."""
    L = op.L
    w = -op.p_inf / op.q_inf
    cands = [cmath.phase(w) / L + 2 * math.pi * j / L for j in range(L)]
    a = cmath.phase(z)
    best = min(cands, key=lambda c: abs(cmath.exp(1j * c) - cmath.exp(1j * a)))
    return math.remainder(best, 2 * math.pi)


def escape_args(op: Operator) -> list[float]:
    """Arguments of the solutions of z^(-L) + q_inf/p_inf = 0 (L < 0)."""
    k = -op.L
    w = -op.q_inf / op.p_inf
    return [math.remainder(cmath.phase(w) / k + 2 * math.pi * j / k, 2 * math.pi) for j in range(k)]


def _set_termini(traces: list[Trace], op: Operator, t_max: float):
    zq = np.array(expand(op.zerosQ), dtype=complex)
    last = np.array([tr.z[-1] for tr in traces])
    n_final = len(zq)
    assigned = np.full(len(traces), -1)
    if n_final:
        cost = np.abs(last[:, None] - zq[None, :])
        r, c = linear_sum_assignment(cost)
        assigned[r] = c
    for i, tr in enumerate(traces):
        j = assigned[i]
        if j >= 0 and abs(last[i] - zq[j]) <= Q_ROOT_RADIUS:
            tr.terminus = ("Q_root", complex(zq[j]))
        elif j < 0 and op.L < 0:
            tr.terminus = ("escaped_to_infinity", cmath.phase(last[i]))
            tr.status[-1] = "escaped"
        else:
            tr.terminus = ("truncated", float(t_max))
            tr.status[-1] = "truncated"


def traces_to_csv(traces: list[Trace]) -> str:
    lines = ["trace_id,t,re,im,status"]
    for k, tr in enumerate(traces):
        for t, z, s in zip(tr.t, tr.z, tr.status):
            lines.append(f"{k},{float(t)!r},{float(z.real)!r},{float(z.imag)!r},{s}")
    return "\n".join(lines) + "\n"
