"""The operator T = Q d/dz + P, its derived asymptotic data and the
existence / compactness / regularity decision procedures."""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .cpoly import ComplexPoly, Root, derivative, expand, peval, roots

COMMON_ROOT_TOL = 1e-6
BOUNDARY_TOL = 1e-12
SENSITIVE_TOL = 1e-9
REAL_TOL = 1e-9
INTERLACE_GAP = 1e-9

CLASSES = ("Ia", "Ib", "Ic", "II", "III")


class ReduceFirstError(ValueError):
    """Raised when a computation meets a common root of P and Q."""


@dataclass(frozen=True)
class Operator:
    P: ComplexPoly
    Q: ComplexPoly
    zerosP: tuple = ()
    zerosQ: tuple = ()
    coprime: bool = True

    # degrees (-1 for an identically zero coefficient)
    @property
    def p(self) -> int:
        return self.P.degree

    @property
    def q(self) -> int:
        return self.Q.degree

    @property
    def p_inf(self) -> complex:
        return self.P.lead

    @property
    def q_inf(self) -> complex:
        return self.Q.lead

    @property
    def lam(self) -> Optional[complex]:
        if self.P.is_zero or self.Q.is_zero:
            return None
        return self.q_inf / self.p_inf

    @property
    def phi_inf(self) -> Optional[float]:
        lam = self.lam
        if lam is None:
            return None
        phi = cmath.phase(lam)
        return math.pi if phi == -math.pi else phi

    @property
    def d(self) -> int:
        return self.q - self.p

    @property
    def N(self) -> int:
        return max(self.q, self.p + 1)

    @property
    def L(self) -> int:
        return self.q - self.p - 1

    @property
    def dP(self) -> ComplexPoly:
        return derivative(self.P)

    @property
    def dQ(self) -> ComplexPoly:
        return derivative(self.Q)

    def R(self, z):
        return peval(self.Q, z) / peval(self.P, z)

    def dR(self, z):
        """R' = (Q'P - QP') / P^2."""
        p = peval(self.P, z)
        return (peval(self.dQ, z) * p - peval(self.Q, z) * peval(self.dP, z)) / (p * p)

    def R_and_dR(self, z):
        p, q = peval(self.P, z), peval(self.Q, z)
        dp, dq = peval(self.dP, z), peval(self.dQ, z)
        return q / p, (dq * p - q * dp) / (p * p)

    def pq_roots(self) -> list[complex]:
        """Distinct finite roots of PQ."""
        out = [r.value for r in self.zerosP]
        for r in self.zerosQ:
            if all(abs(r.value - x) > COMMON_ROOT_TOL * max(1.0, abs(x)) for x in out):
                out.append(r.value)
        return out

    def scale(self) -> float:
        return max(self.P.scale, self.Q.scale)


def _safe_roots(p: ComplexPoly) -> tuple:
    if p.is_zero or p.degree == 0:
        return ()
    return tuple(roots(p))


def _match(a: complex, b: complex) -> bool:
    return abs(a - b) <= COMMON_ROOT_TOL * max(1.0, abs(a), abs(b))


def _common(zp, zq) -> list[Root]:
    out = []
    for r in zp:
        for s in zq:
            if _match(r.value, s.value):
                out.append(Root(0.5 * (r.value + s.value), min(r.mult, s.mult)))
    return out


def build(P, Q) -> Operator:
    P = P if isinstance(P, ComplexPoly) else ComplexPoly(P)
    Q = Q if isinstance(Q, ComplexPoly) else ComplexPoly(Q)
    if P.is_zero and Q.is_zero:
        raise ValueError("P and Q both vanish identically")
    zp, zq = _safe_roots(P), _safe_roots(Q)
    return Operator(P, Q, zp, zq, coprime=not _common(zp, zq))


# ---------------------------------------------------------------------------
# local data and reduction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LocalData:
    alpha: complex
    m_alpha: int
    r_alpha: complex


def _mult_at(zeros, alpha) -> tuple[int, complex]:
    for r in zeros:
        if _match(r.value, alpha):
            return r.mult, r.value
    return 0, alpha


def local_data(op: Operator, alpha: complex) -> LocalData:
    """Order m and leading coefficient r of R(z) = r (z - alpha)^m + ..."""
    alpha = complex(alpha)
    mp, ap = _mult_at(op.zerosP, alpha)
    mq, aq = _mult_at(op.zerosQ, alpha)
    if mp and mq:
        raise ReduceFirstError(f"{alpha} is a common root of P and Q: reduce first")
    centre = ap if mp else aq
    tq = op.Q.taylor(centre)
    tp = op.P.taylor(centre)
    cq = tq[mq] if mq < len(tq) else 0j
    cp = tp[mp] if mp < len(tp) else 0j
    return LocalData(alpha, mq - mp, complex(cq / cp))


def reduce_common_factor(op: Operator) -> tuple[Operator, list[Root]]:
    if op.coprime or op.P.is_zero or op.Q.is_zero:
        return op, []
    common = _common(op.zerosP, op.zerosQ)
    P, Q = op.P, op.Q
    zp, zq = list(op.zerosP), list(op.zerosQ)
    for c in common:
        P = P.deflate(c.value, c.mult)
        Q = Q.deflate(c.value, c.mult)
        zp = _drop(zp, c)
        zq = _drop(zq, c)
    return Operator(P, Q, tuple(zp), tuple(zq), coprime=True), common


def _drop(zeros, c: Root) -> list[Root]:
    out = []
    for r in zeros:
        if _match(r.value, c.value):
            if r.mult > c.mult:
                out.append(Root(r.value, r.mult - c.mult))
        else:
            out.append(r)
    return out


# ---------------------------------------------------------------------------
# real forms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RealForm:
    """Chart z = a*w + b with s*P(aw+b) and (s/a)*Q(aw+b) real."""

    a: complex
    b: complex
    s: complex

    def to_z(self, w):
        return self.a * w + self.b

    def to_w(self, z):
        return (z - self.b) / self.a

    def transform(self, op: Operator) -> tuple[ComplexPoly, ComplexPoly]:
        Ph = self.s * op.P.compose_affine(self.a, self.b)
        Qh = (self.s / self.a) * op.Q.compose_affine(self.a, self.b)
        return Ph, Qh


def _max_imag_rel(p: ComplexPoly) -> float:
    if p.is_zero:
        return 0.0
    return max(abs(c.imag) for c in p.coeffs) / p.scale


def _try_chart(op: Operator, a: complex, b: complex) -> Optional[RealForm]:
    Pa = op.P.compose_affine(a, b)
    if Pa.is_zero:
        return None
    s = 1.0 / Pa.lead
    rf = RealForm(a, b, s)
    Ph, Qh = rf.transform(op)
    if _max_imag_rel(Ph) <= REAL_TOL and _max_imag_rel(Qh) <= REAL_TOL:
        return rf
    return None


def _centroid(zeros) -> Optional[complex]:
    pts = expand(zeros)
    return complex(np.mean(pts)) if pts else None


def _unit(theta: float) -> complex:
    """exp(i*theta) with exact axis directions snapped."""
    a = cmath.exp(1j * theta)
    if abs(a.imag) < 1e-14:
        return complex(math.copysign(1.0, a.real), 0.0)
    if abs(a.real) < 1e-14:
        return complex(0.0, math.copysign(1.0, a.imag))
    return a


def _candidate_charts(op: Operator) -> list[tuple[complex, complex]]:
    """(a, b) pairs describing the finitely many lines that can carry a real form."""
    cp, cq = _centroid(op.zerosP), _centroid(op.zerosQ)
    lines: list[tuple[float, complex]] = []
    if cp is not None and cq is not None and not _match(cp, cq):
        lines.append((cmath.phase(cq - cp), cp))
    else:
        c = cp if cp is not None else cq
        pts = [(r.value, 0) for r in op.zerosP] + [(r.value, 1) for r in op.zerosQ]
        if c is None:
            # constant coefficients: R = lambda, real along arg(lambda)
            lines.append((cmath.phase(op.lam), 0j))
        else:
            far = max(pts, key=lambda x: abs(x[0] - c))
            rad = abs(far[0] - c)
            tol = COMMON_ROOT_TOL * max(1.0, abs(c), rad)
            if rad <= tol:
                d = op.d
                phi = cmath.phase(op.lam)
                if d == 1:
                    lines += [(0.0, c), (math.pi / 2, c)]
                else:
                    k = abs(1 - d)
                    for j in range(2 * k):
                        lines.append(((phi + j * math.pi) / (1 - d), c))
            else:
                for z, kind in pts:
                    if kind == far[1] and abs(abs(z - c) - rad) <= tol:
                        lines.append((0.5 * cmath.phase((z - c) * (far[0] - c)), c))
    out = []
    for theta, b in lines:
        a = _unit(theta)
        for aa in (a, -a):
            if not any(abs(aa - x) < 1e-12 and abs(b - y) < 1e-12 for x, y in out):
                out.append((aa, b))
    return out


def real_forms(op: Operator) -> list[RealForm]:
    """All verified real-form charts among the candidate lines."""
    if op.P.is_zero or op.Q.is_zero:
        return []
    out = []
    for a, b in _candidate_charts(op):
        if abs(b.imag) <= 1e-14 * max(1.0, abs(b)) and abs(a.imag) < 1e-15:
            b = complex(b.real, 0.0)
        rf = _try_chart(op, a, b)
        if rf is not None:
            out.append(rf)
    # prefer the identity orientation and origin-anchored charts
    out.sort(key=lambda f: (abs(f.a - 1) > 1e-12, abs(f.b) > 1e-12))
    return out


def _ia_data(op: Operator, rf: RealForm):
    """Sorted real-form roots tagged 'P'/'Q' if the chart meets the Ia conditions, else None."""
    if op.p < 1 or op.Q.is_zero:
        return None
    tagged = []
    for tag, zeros in (("P", op.zerosP), ("Q", op.zerosQ)):
        for r in zeros:
            if r.mult != 1:
                return None
            tagged.append((rf.to_w(r.value), tag))
    ws = [w for w, _ in tagged]
    span = max(1.0, max(w.real for w in ws) - min(w.real for w in ws))
    if any(abs(w.imag) > REAL_TOL * span for w in ws):
        return None
    tagged.sort(key=lambda x: x[0].real)
    for (w0, t0), (w1, t1) in zip(tagged, tagged[1:]):
        if t0 == t1 or (w1.real - w0.real) <= INTERLACE_GAP * span:
            return None
    Ph, Qh = rf.transform(op)
    dPh = derivative(Ph)
    for w, tag in tagged:
        if tag == "P":
            r = peval(Qh, w.real) / peval(dPh, w.real)
            if not r.real < 0:
                return None
    return [(w.real, tag) for w, tag in tagged]


def detect_real_form(op: Operator) -> Optional[RealForm]:
    forms = real_forms(op)
    if not forms:
        return None
    for rf in forms:
        if _ia_data(op, rf) is not None:
            return rf
    return forms[0]


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AsymptoticInfo:
    expected_complement_components: object = "unknown"
    direction_intervals: tuple = ()
    cone_axis: Optional[float] = None


@dataclass(frozen=True)
class FullyIrregularFamily:
    """Fully irregular invariant sets on the line z = a*w + b.

    ``lo``/``hi`` are chart coordinates of the minimal member (None = infinite).
    ``anchored`` is False when no minimal member exists and any start point works.
    """

    kind: str
    a: complex
    b: complex
    lo: Optional[float]
    hi: Optional[float]
    anchored: bool = True

    def endpoints(self) -> tuple:
        f = lambda w: None if w is None else self.a * w + self.b
        return f(self.lo), f(self.hi)


@dataclass(frozen=True)
class ClassificationReport:
    special_case: str
    nontrivial_exists: bool
    compact_exists: bool
    regularity_class: Optional[str]
    real_form: Optional[RealForm]
    fully_irregular_family: Optional[FullyIrregularFamily]
    asymptotic_info: AsymptoticInfo
    xi: Optional[complex] = None
    boundary_sensitive: bool = False
    common_roots: tuple = ()
    degP: int = 0
    degQ: int = 0
    lam: Optional[complex] = None
    phi_inf: Optional[float] = None


def _neg_real(lam: complex) -> bool:
    return abs(lam.imag) <= BOUNDARY_TOL * abs(lam) and lam.real < 0


def _existence_flags(op: Operator) -> tuple[bool, bool, bool]:
    p, q, d, lam = op.p, op.q, op.d, op.lam
    third = d == 1 and p >= 1 and lam.real >= -BOUNDARY_TOL * abs(lam)
    fourth = q == 1 and p == 0 and not _neg_real(lam)
    nontrivial = d in (-1, 0) or third or fourth
    compact = d == 1 and (third or fourth)
    sensitive = (d == 1 and p >= 1 and abs(lam.real) <= SENSITIVE_TOL * abs(lam)) or (
        q == 1 and p == 0 and lam.real < 0 and abs(lam.imag) <= SENSITIVE_TOL * abs(lam))
    return nontrivial, compact, sensitive


def _wrap(a: float) -> float:
    a = math.remainder(a, 2 * math.pi)
    return math.pi if a == -math.pi else a


def asymptotic_info(op: Operator, nontrivial: bool, compact: bool) -> AsymptoticInfo:
    if not nontrivial:
        return AsymptoticInfo(0, ())
    phi = op.phi_inf
    if op.d == -1:
        arcs = (((phi - math.pi) / 2, (phi + math.pi) / 2),
                ((phi + math.pi) / 2, (phi + 3 * math.pi) / 2))
        return AsymptoticInfo(2, arcs)
    if op.d == 0:
        return AsymptoticInfo("unknown", (), _wrap(phi + math.pi))
    if compact:
        return AsymptoticInfo("unknown", ((-math.pi, math.pi),))
    return AsymptoticInfo("unknown", ())


def _class_of(op: Operator) -> tuple[str, Optional[RealForm]]:
    lam = op.lam
    if op.p == 0 and op.q == 0:
        return "Ib", _try_chart(op, _unit(cmath.phase(lam)), 0j)
    if op.p == 0 and op.q == 1 and not _neg_real(lam):
        alpha = op.zerosQ[0].value
        rf = _try_chart(op, 1.0 + 0j, alpha)
        return "Ic", rf
    forms = real_forms(op)
    for rf in forms:
        if _ia_data(op, rf) is not None:
            return "Ia", rf
    if abs(op.d) <= 1:
        for rf in forms:
            if abs(op.d) == 1:
                lh = lam * rf.a ** (op.d - 1)
                if not (abs(lh.imag) <= REAL_TOL * abs(lh) and lh.real > 0):
                    continue
            return "II", rf
    return "III", (forms[0] if forms else None)


def classify(op: Operator) -> ClassificationReport:
    common_kw = dict(degP=op.p, degQ=op.q, lam=op.lam, phi_inf=op.phi_inf)
    if op.P.is_zero or op.Q.is_zero:
        # every set containing the roots of the nonzero coefficient is invariant
        kind = "P_zero" if op.P.is_zero else "Q_zero"
        return ClassificationReport(kind, True, True, None, None, None,
                                    AsymptoticInfo("unknown", ()), **common_kw)
    red, common = reduce_common_factor(op)
    nontrivial, compact, sensitive = _existence_flags(red)
    cls, rf = _class_of(red)
    special, xi = "none", None
    if red.p == 0 and red.q == 0:
        special, xi = "constant_coefficients", -red.Q.lead / red.P.lead
    elif red.p == 0 and red.q == 1 and _neg_real(red.lam):
        special = "scaled_translation_degenerate"
    fam = _family(red, cls, rf) if cls in ("Ia", "Ib", "Ic") else None
    if fam is not None and common:
        fam = _extend(fam, [c.value for c in common], red.lam)
    return ClassificationReport(
        special, nontrivial, compact, cls, rf, fam,
        asymptotic_info(red, nontrivial, compact), xi=xi,
        boundary_sensitive=sensitive, common_roots=tuple(common), **common_kw)


def _extend(fam: FullyIrregularFamily, pts: list[complex], lam: complex) -> Optional[FullyIrregularFamily]:
    """Smallest member of the family that also holds the given common roots.

    Returns None when the common roots cannot sit on one member.
    """
    if not fam.anchored:
        # rays in direction a: anchor at the rearmost common root
        ws = [(z - pts[0]) / fam.a for z in pts]
        if any(abs(w.imag) > REAL_TOL * max(1.0, abs(w)) for w in ws):
            return None
        b = pts[0] + fam.a * min(w.real for w in ws)
        return replace(fam, b=b, lo=0.0, anchored=True)
    if fam.kind == "interval" and fam.lo == fam.hi:
        # R = lam (z - alpha): segments towards alpha exist only for lam > 0
        if not (abs(lam.imag) <= REAL_TOL * abs(lam) and lam.real > 0):
            return None
        alpha = fam.b + fam.a * fam.lo
        far = max(pts, key=lambda z: abs(z - alpha))
        if abs(far - alpha) > 0:
            fam = replace(fam, a=(far - alpha) / abs(far - alpha), b=alpha, lo=0.0, hi=0.0)
    ws = [(z - fam.b) / fam.a for z in pts]
    if any(abs(w.imag) > REAL_TOL * max(1.0, abs(w)) for w in ws):
        return None
    xs = [w.real for w in ws]
    lo = None if fam.lo is None else min(xs + [fam.lo])
    hi = None if fam.hi is None else max(xs + [fam.hi])
    return replace(fam, lo=lo, hi=hi)


def _family(op: Operator, cls: str, rf: Optional[RealForm]) -> FullyIrregularFamily:
    if cls == "Ib":
        xi = -op.lam
        a = xi / abs(xi)
        return FullyIrregularFamily("half_line_right", a, 0j, 0.0, None, anchored=False)
    if cls == "Ic":
        alpha = op.zerosQ[0].value
        return FullyIrregularFamily("interval", 1.0 + 0j, alpha, 0.0, 0.0)
    tagged = _ia_data(op, rf)
    qs = [w for w, t in tagged if t == "Q"]
    lo_tag, hi_tag = tagged[0][1], tagged[-1][1]
    if lo_tag == "Q" and hi_tag == "Q":
        return FullyIrregularFamily("interval", rf.a, rf.b, min(qs), max(qs))
    if lo_tag == "P" and hi_tag == "P":
        return FullyIrregularFamily("line", rf.a, rf.b, None, None)
    if lo_tag == "P":
        return FullyIrregularFamily("half_line_left", rf.a, rf.b, None, max(qs))
    return FullyIrregularFamily("half_line_right", rf.a, rf.b, min(qs), None)


def fully_irregular_family(op: Operator) -> FullyIrregularFamily:
    rep = classify(op)
    if rep.regularity_class not in ("Ia", "Ib", "Ic"):
        raise ValueError(f"operator is class {rep.regularity_class}, not class I")
    if rep.fully_irregular_family is None:
        raise ValueError("common roots fall off the irregular line")
    return rep.fully_irregular_family


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------

def cjson(z) -> Optional[dict]:
    if z is None:
        return None
    z = complex(z)
    return {"re": z.real, "im": z.imag}


def report_to_json(rep: ClassificationReport) -> dict:
    rf = rep.real_form
    fam = rep.fully_irregular_family
    fam_js = None
    if fam is not None:
        lo, hi = fam.endpoints()
        fam_js = {"kind": fam.kind, "a": cjson(fam.a), "b": cjson(fam.b),
                  "lo": fam.lo, "hi": fam.hi, "anchored": fam.anchored,
                  "endpoints": [cjson(lo), cjson(hi)]}
    ai = rep.asymptotic_info
    return {
        "degP": rep.degP,
        "degQ": rep.degQ,
        "d": rep.degQ - rep.degP,
        "lambda": cjson(rep.lam),
        "phi_inf": rep.phi_inf,
        "special_case": rep.special_case,
        "xi": cjson(rep.xi),
        "nontrivial_exists": rep.nontrivial_exists,
        "compact_exists": rep.compact_exists,
        "boundary_sensitive": rep.boundary_sensitive,
        "class": rep.regularity_class,
        "real_form": None if rf is None else {"a": cjson(rf.a), "b": cjson(rf.b), "s": cjson(rf.s)},
        "fully_irregular": fam_js,
        "common_roots": [{"z": cjson(r.value), "mult": r.mult} for r in rep.common_roots],
        "asymptotic": {
            "components": ai.expected_complement_components,
            "arcs": [list(a) for a in ai.direction_intervals],
            "cone_axis": ai.cone_axis,
        },
    }
