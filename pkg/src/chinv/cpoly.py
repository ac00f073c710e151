"""Complex polynomials, a simultaneous-iteration root finder and the trail
polynomial ``t*Q(z) + (z - u)*P(z)``.

Coefficients are stored in ascending degree order throughout.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

DEFAULT_TOL = 1e-12
CLUSTER_RADIUS = 1e-7
MAX_ITER = 500

_EPS = np.finfo(float).eps


class RootFindingError(RuntimeError):
    """Raised when the simultaneous iteration does not converge.

    ``partial`` holds the last iterates and ``converged`` flags which of them
    met the stopping rule.
    """

    def __init__(self, msg, partial=None, converged=None):
        super().__init__(msg)
        self.partial = partial
        self.converged = converged


class Root(NamedTuple):
    value: complex
    mult: int


# ---------------------------------------------------------------------------
# complex literal text format ("1.5-0.25i", "2i", "3", "-i")
# ---------------------------------------------------------------------------

_BARE_I = re.compile(r"(?<![0-9.eE])([ij])")


def parse_complex(text: str) -> complex:
    s = text.strip().replace(" ", "")
    if not s:
        raise ValueError("empty complex literal")
    s = _BARE_I.sub(r"1\1", s).replace("i", "j")
    try:
        return complex(s)
    except ValueError:
        raise ValueError(f"malformed complex literal: {text!r}") from None


def format_complex(z: complex) -> str:
    z = complex(z)
    re_, im = z.real, z.imag
    if im == 0.0:
        return repr(re_ + 0.0)
    if re_ == 0.0:
        return f"{im!r}i"
    sign = "-" if math.copysign(1.0, im) < 0 else "+"
    return f"{re_!r}{sign}{abs(im)!r}i"


def parse_coeffs(text: str) -> list[complex]:
    """Comma separated complex literals, ascending degree."""
    parts = [p for p in text.split(",")]
    if any(not p.strip() for p in parts):
        raise ValueError(f"malformed coefficient list: {text!r}")
    return [parse_complex(p) for p in parts]


# ---------------------------------------------------------------------------
# polynomial type
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ComplexPoly:
    """Polynomial with complex coefficients in ascending order.

    The zero polynomial has an empty coefficient tuple and ``degree == -1``.
    """

    coeffs: tuple

    def __init__(self, coeffs: Iterable = ()):
        c = [complex(x) for x in coeffs]
        while c and c[-1] == 0:
            c.pop()
        object.__setattr__(self, "coeffs", tuple(c))

    @classmethod
    def from_roots(cls, roots: Iterable[complex], lead: complex = 1.0) -> "ComplexPoly":
        c = np.array([complex(lead)])
        for r in roots:
            c = np.convolve(c, [-complex(r), 1.0])
        return cls(c)

    @classmethod
    def monomial(cls, n: int, c: complex = 1.0) -> "ComplexPoly":
        return cls([0.0] * n + [c])

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    @property
    def is_zero(self) -> bool:
        return not self.coeffs

    @property
    def lead(self) -> complex:
        return self.coeffs[-1] if self.coeffs else 0j

    @property
    def scale(self) -> float:
        return max((abs(c) for c in self.coeffs), default=0.0)

    def array(self) -> np.ndarray:
        return np.array(self.coeffs, dtype=complex)

    def __call__(self, z):
        return peval(self, z)

    def derivative(self) -> "ComplexPoly":
        return derivative(self)

    def roots(self, tol: float = DEFAULT_TOL) -> list[Root]:
        return roots(self, tol)

    def __add__(self, other):
        a, b = self.array(), _as_array(other)
        n = max(len(a), len(b))
        out = np.zeros(n, dtype=complex)
        out[: len(a)] += a
        out[: len(b)] += b
        return ComplexPoly(out)

    __radd__ = __add__

    def __neg__(self):
        return ComplexPoly(-self.array())

    def __sub__(self, other):
        return self + (-_as_poly(other))

    def __rsub__(self, other):
        return _as_poly(other) - self

    def __mul__(self, other):
        if self.is_zero:
            return ComplexPoly()
        b = _as_array(other)
        if len(b) == 0:
            return ComplexPoly()
        return ComplexPoly(np.convolve(self.array(), b))

    __rmul__ = __mul__

    def compose_affine(self, a: complex, b: complex) -> "ComplexPoly":
        """Coefficients of w -> p(a*w + b)."""
        out = np.zeros(1, dtype=complex)
        lin = np.array([b, a], dtype=complex)
        for c in reversed(self.coeffs):
            out = np.convolve(out, lin)
            out[0] += c
        return ComplexPoly(out)

    def taylor(self, alpha: complex) -> np.ndarray:
        """Coefficients of h -> p(alpha + h)."""
        return self.compose_affine(1.0, alpha).array()

    def deflate(self, alpha: complex, times: int = 1) -> "ComplexPoly":
        """Divide out (z - alpha)**times by synthetic division, dropping the remainder."""
        c = list(self.coeffs)
        for _ in range(times):
            if len(c) <= 1:
                break
            n = len(c) - 1
            q = [0j] * n
            acc = c[-1]
            q[n - 1] = acc
            for k in range(n - 1, 0, -1):
                acc = c[k] + alpha * acc
                q[k - 1] = acc
            c = q
        return ComplexPoly(c)

    def __str__(self):
        if self.is_zero:
            return "0"
        terms = []
        for k, c in enumerate(self.coeffs):
            if c == 0:
                continue
            terms.append(f"({format_complex(c)})" + ("" if k == 0 else f"z^{k}"))
        return " + ".join(terms)


def _as_array(x) -> np.ndarray:
    if isinstance(x, ComplexPoly):
        return x.array()
    x = complex(x)
    return np.array([x]) if x != 0 else np.zeros(0, dtype=complex)


def _as_poly(x) -> ComplexPoly:
    return x if isinstance(x, ComplexPoly) else ComplexPoly([x])


def peval(p: ComplexPoly, z):
    """Horner evaluation; works elementwise on arrays."""
    if p.is_zero:
        return np.zeros_like(np.asarray(z, dtype=complex)) if np.ndim(z) else 0j
    acc = p.coeffs[-1]
    for c in p.coeffs[-2::-1]:
        acc = acc * z + c
    if np.ndim(z) and np.ndim(acc) == 0:
        acc = np.full(np.shape(z), acc, dtype=complex)
    return acc


def derivative(p: ComplexPoly) -> ComplexPoly:
    return ComplexPoly([k * c for k, c in enumerate(p.coeffs)][1:])


# ---------------------------------------------------------------------------
# Aberth-Ehrlich
# ---------------------------------------------------------------------------

def _initial_guesses(a: np.ndarray) -> np.ndarray:
    """Points on a circle around the root centroid; a is (B, n+1) ascending."""
    B, m = a.shape
    n = m - 1
    lead = a[:, -1:]
    center = -a[:, -2] / (n * a[:, -1])
    # Fujiwara-type bound on |root - center| using the shifted polynomial is
    # overkill here; the unshifted bound is enough to enclose every root.
    ratios = np.abs(a[:, :-1] / lead)
    powers = 1.0 / (n - np.arange(n))
    bound = 2.0 * np.max(ratios ** powers[None, :], axis=1)
    radius = np.maximum(bound - np.abs(center), 1e-3 * np.maximum(bound, 1.0))
    ang = 2 * np.pi * np.arange(n) / n + 0.4
    return center[:, None] + radius[:, None] * np.exp(1j * ang)[None, :]


def _horner_both(a: np.ndarray, z: np.ndarray):
    """p(z) and p'(z) for a (B, n+1) and z (B, n)."""
    p = np.repeat(a[:, -1:], z.shape[1], axis=1)
    dp = np.zeros_like(z)
    for k in range(a.shape[1] - 2, -1, -1):
        dp = dp * z + p
        p = p * z + a[:, k : k + 1]
    return p, dp


def _abs_horner(absa: np.ndarray, r: np.ndarray) -> np.ndarray:
    acc = np.repeat(absa[:, -1:], r.shape[1], axis=1)
    for k in range(absa.shape[1] - 2, -1, -1):
        acc = acc * r + absa[:, k : k + 1]
    return acc


def aberth_batch(a, init=None, tol: float = DEFAULT_TOL, max_iter: int = MAX_ITER,
                 raise_on_fail: bool = True, return_done: bool = False):
    """Simultaneous roots of B polynomials of equal degree.

    ``a`` is (B, n+1), ascending, with nonzero leading column. ``init`` may
    supply warm-start iterates of shape (B, n). With ``return_done`` the
    per-iterate convergence mask is returned as well.
    """
    a = np.atleast_2d(np.asarray(a, dtype=complex))
    n = a.shape[1] - 1
    if n < 1:
        z = np.zeros((a.shape[0], 0), dtype=complex)
        return (z, np.ones(z.shape, dtype=bool)) if return_done else z
    scale = np.max(np.abs(a), axis=1, keepdims=True)
    a = a / scale
    if n == 1:
        z = -a[:, :1] / a[:, 1:]
        return (z, np.ones(z.shape, dtype=bool)) if return_done else z
    z = _initial_guesses(a) if init is None else np.array(init, dtype=complex, copy=True)
    done = np.zeros(z.shape, dtype=bool)
    absa = np.abs(a)
    eye = np.eye(n, dtype=bool)
    for _ in range(max_iter):
        p, dp = _horner_both(a, z)
        with np.errstate(divide="ignore", invalid="ignore"):
            w = p / dp
            diff = z[:, :, None] - z[:, None, :]
            inv = np.where(eye[None], 0.0, 1.0 / np.where(eye[None], 1.0, diff))
            s = inv.sum(axis=2)
            step = w / (1.0 - w * s)
        bad = ~np.isfinite(step)
        if bad.any():
            # p'(z) == 0 or coincident iterates: nudge instead of stepping
            step[bad] = -1e-3 * (1.0 + np.abs(z[bad])) * np.exp(1j * 0.7)
        step[done] = 0.0
        # backward-error stop: |p(z)| within rounding noise of sum |a_k| |z|^k
        noise = _abs_horner(absa, np.abs(z))
        z = z - step
        small = np.abs(step) <= 4 * _EPS * np.maximum(1.0, np.abs(z))
        done |= small | (np.abs(p) <= 8 * _EPS * noise)
        if done.all():
            break
    else:
        if raise_on_fail:
            raise RootFindingError("Aberth iteration did not converge", partial=z, converged=done)
    return (z, done) if return_done else z


def _polish(c: np.ndarray, z: np.ndarray, steps: int = 2) -> np.ndarray:
    """A few guarded Newton steps on each root (ascending coeffs c)."""
    dc = c[1:] * np.arange(1, len(c))
    out = z.copy()
    for k, r in enumerate(z):
        best, fbest = r, abs(np.polyval(c[::-1], r))
        x = r
        for _ in range(steps):
            d = np.polyval(dc[::-1], x)
            if d == 0:
                break
            x = x - np.polyval(c[::-1], x) / d
            fx = abs(np.polyval(c[::-1], x))
            if fx < fbest:
                best, fbest = x, fx
        out[k] = best
    return out


def cluster_roots(zs: Sequence[complex], radius: float) -> list[Root]:
    """Merge numerically coincident roots.

    A cluster of k roots is accepted as one root of multiplicity k when its
    diameter is below ``radius**(2/k)``: the spread of a computed k-fold root
    grows like eps**(1/k), and ``radius`` is calibrated for k = 2.
    """
    zs = [complex(z) for z in zs]
    if not zs:
        return []
    n = len(zs)
    loose = radius ** (2.0 / max(n, 2))
    groups = _single_linkage(zs, loose)
    out: list[Root] = []
    for g in groups:
        pts = [zs[i] for i in g]
        # relative to the cluster's own magnitude, not the largest root overall
        scale = max(1.0, max(abs(z) for z in pts))
        out.extend(_split_group(pts, radius, scale))
    out.sort(key=lambda r: (round(r.value.real, 12), round(r.value.imag, 12)))
    return out


def _single_linkage(zs, thr):
    n = len(zs)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if abs(zs[i] - zs[j]) <= thr * max(1.0, abs(zs[i]), abs(zs[j])):
                parent[find(i)] = find(j)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return list(groups.values())


def _split_group(pts, radius, scale) -> list[Root]:
    k = len(pts)
    if k == 1:
        return [Root(pts[0], 1)]
    diam = max(abs(a - b) for a in pts for b in pts)
    if diam <= scale * radius ** (2.0 / k):
        return [Root(complex(np.mean(pts)), k)]
    # too wide for a k-fold root: re-cluster with the threshold for k-1
    thr = radius ** (2.0 / (k - 1)) if k > 2 else 0.0
    sub = _single_linkage(pts, thr)
    if len(sub) == 1:
        # chain-linked but wide: split off the farthest point
        c = np.mean(pts)
        far = max(range(k), key=lambda i: abs(pts[i] - c))
        rest = [p for i, p in enumerate(pts) if i != far]
        return [Root(pts[far], 1)] + _split_group(rest, radius, scale)
    out = []
    for g in sub:
        out.extend(_split_group([pts[i] for i in g], radius, scale))
    return out


def roots(p: ComplexPoly, tol: float = DEFAULT_TOL, cluster_radius: float = CLUSTER_RADIUS,
          init=None) -> list[Root]:
    """Roots of ``p`` with multiplicities.

    Exact zero roots (vanishing low-order coefficients) are split off first;
    the rest come from Aberth-Ehrlich on the normalized coefficients followed
    by Newton polishing and cluster merging.
    """
    if p.is_zero:
        raise ValueError("no root set: zero polynomial")
    c = p.array()
    k0 = 0
    while k0 < len(c) - 1 and c[k0] == 0:
        k0 += 1
    c = c[k0:]
    found: list[complex] = [0j] * k0
    if len(c) > 1:
        cn = c / np.max(np.abs(c))
        z = aberth_batch(cn[None, :], init=None if init is None else np.asarray(init)[None, :],
                         tol=tol)[0]
        z = _polish(cn, z)
        found.extend(z.tolist())
    out = [_refine_multiple(p, r) for r in cluster_roots(found, cluster_radius)]
    _check_residuals(p, out, tol)
    return out


def _refine_multiple(p: ComplexPoly, r: Root) -> Root:
    """A k-fold root is a simple root of the (k-1)-th derivative; polish there."""
    if r.mult == 1:
        return r
    g = p
    for _ in range(r.mult - 1):
        g = derivative(g)
    dg = derivative(g)
    x = r.value
    for _ in range(3):
        d = peval(dg, x)
        if d == 0:
            break
        nx = x - peval(g, x) / d
        if abs(nx - r.value) > 10 * abs(x - r.value) + 1e-6 * max(1.0, abs(r.value)):
            break
        x = nx
    return Root(complex(x), r.mult)


def _check_residuals(p: ComplexPoly, rts: list[Root], tol: float) -> None:
    # multiple roots are only as accurate as eps**(1/m); scale the check accordingly
    c = p.scale
    for r in rts:
        bound = max(tol, _EPS ** (1.0 / r.mult) * 1e3 if r.mult > 1 else tol)
        lim = bound * c * max(1.0, abs(r.value)) ** p.degree
        res = abs(peval(p, r.value))
        if res > lim * 1e4:
            raise RootFindingError(
                f"root {r.value} has residual {res:.3g} above {lim:.3g}",
                partial=[x.value for x in rts], converged=None)


def expand(rts: Iterable[Root]) -> list[complex]:
    out = []
    for r in rts:
        out.extend([r.value] * r.mult)
    return out


# ---------------------------------------------------------------------------
# trail polynomial
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RootDivisor:
    """Solutions of t*Q(z) + (z-u)*P(z) = 0 on the Riemann sphere.

    ``whole_plane`` marks the degenerate case where the combined polynomial
    vanishes identically; every point then counts as a root.
    """

    t: float
    points: tuple
    includes_infinity: int = 0
    whole_plane: bool = False

    @property
    def total(self) -> int:
        return sum(r.mult for r in self.points) + self.includes_infinity

    def finite(self) -> list[complex]:
        return expand(self.points)


def trail_poly(P: ComplexPoly, Q: ComplexPoly, u: complex, t: float) -> ComplexPoly:
    return t * Q + ComplexPoly([-u, 1.0]) * P


def trail_degree(P: ComplexPoly, Q: ComplexPoly) -> int:
    """N = max(deg Q, deg P + 1), with the zero polynomial contributing nothing."""
    dq = Q.degree if not Q.is_zero else -1
    dp = P.degree + 1 if not P.is_zero else -1
    return max(dq, dp)


def solve_trail_poly(P: ComplexPoly, Q: ComplexPoly, u: complex, t: float,
                     tol: float = DEFAULT_TOL, init=None) -> RootDivisor:
    if P.is_zero and Q.is_zero:
        raise ValueError("P and Q both vanish identically")
    if t < 0:
        raise ValueError("t must be non-negative")
    u = complex(u)
    N = trail_degree(P, Q)
    if t == 0:
        if P.is_zero:
            return RootDivisor(0.0, (), 0, whole_plane=True)
        pts = expand(roots(P, tol)) + [u]
        merged = cluster_roots(pts, CLUSTER_RADIUS)
        return RootDivisor(0.0, tuple(merged), N - (P.degree + 1))
    C = trail_poly(P, Q, u, t)
    if C.is_zero or C.scale <= 1e-14 * max(P.scale * max(1.0, abs(u)), t * Q.scale):
        return RootDivisor(float(t), (), 0, whole_plane=True)
    C = _trim_relative(C)
    if C.degree == 0:
        return RootDivisor(float(t), (), N)
    rts = roots(C, tol, init=init)
    return RootDivisor(float(t), tuple(rts), N - C.degree)


def _trim_relative(C: ComplexPoly, rel: float = 1e-14) -> ComplexPoly:
    """Drop leading coefficients that are cancellation noise."""
    c = list(C.coeffs)
    s = C.scale
    while len(c) > 1 and abs(c[-1]) <= rel * s:
        c.pop()
    return ComplexPoly(c)
