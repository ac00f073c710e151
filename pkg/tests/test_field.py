import cmath
import math

import numpy as np
import pytest
from scipy.optimize import brentq

from chinv.cpoly import ComplexPoly
from chinv.field import (
    CurveSet,
    Window,
    as_window,
    classify_simple_zero,
    curves_to_csv,
    curves_to_svg,
    flex,
    forward_orbit,
    grid_shape,
    inflection_curve,
    march,
    orbit_with_times,
    separatrices_from_pole,
    separatrix_directions,
)
from chinv.operator import build

COCH = build([-1, 1], [0, 0, 1])


def ex5_operator():
    z = ComplexPoly([0, 1])
    a = ComplexPoly([-1j, 1])
    b = ComplexPoly([-1 - 1j, 1])
    P = z * a * b
    Q = ComplexPoly([0, 1 + 1j]) * P + 2 * (a * b) + z * b + 4 * (z * a)
    return build(P, Q)


# -- window helpers -------------------------------------------------------------

def test_window_validation():
    assert as_window((0, 1, 0, 2)).height == 2
    with pytest.raises(ValueError):
        as_window((1, 1, 0, 1))
    assert grid_shape(Window(-2, 2, -1, 1), 400) == (400, 200)
    assert grid_shape(Window(-2, 2, -1, 1), (10, 7)) == (10, 7)
    with pytest.raises(ValueError):
        grid_shape(Window(0, 1, 0, 1), 0)


# -- marching squares ------------------------------------------------------------

def test_march_circle():
    xs = np.linspace(-1, 1, 81)
    ys = np.linspace(-1, 1, 81)
    X, Y = np.meshgrid(xs, ys)
    lines = march(0.25 - X ** 2 - Y ** 2, xs, ys)
    assert len(lines) == 1
    pl = lines[0]
    assert abs(pl[0] - pl[-1]) < 1e-12   # closed
    assert np.max(np.abs(np.abs(pl) - 0.5)) < 2e-3
    # consecutive vertices within one cell
    assert np.max(np.abs(np.diff(pl))) <= math.hypot(xs[1] - xs[0], ys[1] - ys[0])


def test_march_saddle_is_consistent():
    xs = np.linspace(-1, 1, 2)
    ys = np.linspace(-1, 1, 2)
    F = np.array([[1.0, -1.0], [-1.0, 1.0]])
    lines = march(F, xs, ys)
    assert len(lines) == 2


# -- inflection curve --------------------------------------------------------------

def test_inflection_z_squared_is_real_axis():
    cs = inflection_curve(build([1], [0, 0, 1]), (-1, 1, -1, 1), 100)
    v = cs.vertices()
    assert len(v) > 50 and np.max(np.abs(v.imag)) == 0
    for pl, tag in zip(cs.polylines, cs.tags):
        assert tag == ("inflection_plus" if pl.real.mean() > 0 else "inflection_minus")


def test_inflection_empty_for_rotated_linear():
    cs = inflection_curve(build([1], [0, 1 + 2j]), (-3, 3, -3, 3), 60)
    assert len(cs) == 0


def test_ex5_flex_value():
    op = ex5_operator()
    assert abs(flex(op, 1 - 1j) - (-4 / 25)) <= 1e-12
    assert op.dR(1 - 1j) == pytest.approx(2 + (3 - 4j) / 25, abs=1e-12)


def test_inflection_vertices_polished():
    op = ex5_operator()
    cs = inflection_curve(op, (-3, 3, -3, 3), 300)
    v = cs.vertices()
    d = op.dR(v)
    assert np.all(np.abs(d.imag) <= 1e-3 * (np.abs(d) + 1))
    for pl, tag in zip(cs.polylines, cs.tags):
        re = op.dR(pl).real
        assert np.all(re > -1e-9) if tag == "inflection_plus" else np.all(re < 1e-9)


def test_inflection_matches_scanline_roots():
    op = ex5_operator()
    w = Window(-3, 3, -3, 3)
    res = 300
    cell = w.width / res
    cs = inflection_curve(op, w, res)
    v = cs.vertices()
    rng = np.random.default_rng(5)
    poles = [r.value for r in op.zerosP]
    found = 0
    for _ in range(20):
        y = rng.uniform(w.im0, w.im1)
        xs = np.linspace(w.re0, w.re1, 4001)
        f = flex(op, xs + 1j * y)
        for k in np.flatnonzero(np.sign(f[:-1]) * np.sign(f[1:]) < 0):
            x = brentq(lambda s: flex(op, s + 1j * y), xs[k], xs[k + 1], xtol=1e-14)
            z = x + 1j * y
            if min(abs(z - p) for p in poles) < 3 * cell:
                continue
            assert np.min(np.abs(v - z)) <= cell
            found += 1
    assert found > 10


# -- separatrices ---------------------------------------------------------------------

def test_cochleoid_separatrices():
    cs = separatrices_from_pole(COCH, 1, window=(-0.25, 1.25, -0.75, 0.75))
    assert len(cs) == 2 and cs.tags == ["separatrix", "separatrix"]
    assert sorted(cs.stop_reasons) == ["Q_root", "Q_root"]
    first = sorted(pl[1] - 1 for pl in cs.polylines)
    assert sorted(np.sign(f.imag) for f in first) == [-1, 1]
    for pl in cs.polylines:
        z = pl[1:-1]
        th = np.angle(z)
        assert np.max(np.abs(np.abs(z) - np.sin(th) / th)) < 1e-6


def test_separatrices_real_segment():
    op = build([0, 1], [-1, 0, 1])
    cs = separatrices_from_pole(op, 0, window=(-2, 2, -1, 1))
    ends = sorted(pl[-1].real for pl in cs.polylines)
    assert ends == pytest.approx([-1, 1], abs=1e-5)
    assert max(np.max(np.abs(pl.imag)) for pl in cs.polylines) < 1e-12


def test_separatrices_inverse_field():
    op = build([0, 1], [1])
    cs = separatrices_from_pole(op, 0, window=(-2, 2, -2, 2))
    assert sorted(cs.stop_reasons) == ["window", "window"]
    for pl in cs.polylines:
        assert np.max(np.abs(pl.real)) < 1e-12
    assert sorted(np.sign(pl[-1].imag) for pl in cs.polylines) == [-1, 1]


def test_separatrix_initial_angle():
    op = ex5_operator()
    w = Window(-3, 3, -3, 3)
    for r in op.zerosP:
        cs = separatrices_from_pole(op, r.value, window=w)
        for pl, sd in zip(cs.polylines, separatrix_directions(op, r.value)):
            seg = pl[2] - pl[1]
            assert abs(cmath.phase(seg / sd.direction)) <= 1e-2


def test_separatrix_spacing_higher_order():
    op = build([0, 0, 1], [1 + 1j])   # double pole: three separatrices
    sd = separatrix_directions(op, 0)
    assert len(sd) == 3
    ang = sorted(cmath.phase(s.direction) % (2 * math.pi) for s in sd)
    gaps = np.diff(ang + [ang[0] + 2 * math.pi])
    np.testing.assert_allclose(gaps, 2 * math.pi / 3, atol=1e-12)
    for s in sd:
        assert s.direction ** 3 == pytest.approx(-(1 + 1j) / abs(1 + 1j))


def test_separatrix_not_a_pole():
    with pytest.raises(ValueError, match="not a root of P"):
        separatrices_from_pole(COCH, 0.5)


def test_step_doubling():
    w = (-0.25, 1.25, -0.75, 0.75)
    a = separatrices_from_pole(COCH, 1, window=w, rtol=1e-9, atol=1e-12, arclength_cap=1.0)
    b = separatrices_from_pole(COCH, 1, window=w, rtol=5e-10, atol=5e-13, arclength_cap=1.0)
    for pa, pb in zip(a.polylines, b.polylines):
        n = min(len(pa), len(pb))
        assert np.max(np.abs(pa[:n] - pb[:n])) <= 10 * 1e-9 * 1.5


# -- forward orbits -----------------------------------------------------------------

def test_forward_orbit_linear_decay():
    pts, ts = orbit_with_times(build([1], [0, 1]), 1, 5, window=(-2, 2, -2, 2))
    np.testing.assert_allclose(pts, np.exp(-ts), atol=1e-7)
    assert ts[-1] == pytest.approx(5)


def test_forward_orbit_constant_field():
    lam = 0.3 - 0.4j
    op = build([1], [lam])
    cs = forward_orbit(op, 0.1j, 2.0, window=(-2, 2, -2, 2))
    pl = cs.polylines[0]
    assert pl[-1] == pytest.approx(0.1j - 2.0 * lam, abs=1e-8)
    # a straight line
    d = (pl - pl[0]) / (-lam)
    assert np.max(np.abs(d.imag)) < 1e-9


def test_forward_orbit_to_q_root():
    # -R = z^2 / (1 - z) is positive on the real axis left of 1: from -0.5 the
    # orbit creeps into the double root 0, from 0.5 it runs into the pole 1
    cs = forward_orbit(COCH, -0.5, 1e9, window=(-1, 2, -1, 1))
    assert cs.stop_reasons == ["Q_root"]
    assert abs(cs.polylines[0][-1]) < 2e-6
    cs = forward_orbit(COCH, 0.5, 1e9, window=(-1, 2, -1, 1))
    assert cs.stop_reasons == ["pole"]
    assert abs(cs.polylines[0][-1] - 1) < 1e-5


def test_forward_orbit_errors():
    with pytest.raises(ZeroDivisionError):
        forward_orbit(COCH, 1, 1.0)
    with pytest.raises(ValueError):
        forward_orbit(COCH, 10, 1.0, window=(-1, 1, -1, 1))


# -- simple zeros ------------------------------------------------------------------------

def test_classify_simple_zero_examples():
    z = classify_simple_zero(build([0, 1], [-1, 0, 1]), 1)
    assert z.kind == "sink" and z.residue == pytest.approx(-0.5)
    z = classify_simple_zero(build([1], [0, 1j]), 0)
    assert z.kind == "center" and z.boundary_sensitive
    with pytest.raises(ValueError, match="elliptic sectors"):
        classify_simple_zero(COCH, 0)


def test_classify_source():
    z = classify_simple_zero(build([1], [0, -1]), 0)
    assert z.kind == "source" and z.residue == pytest.approx(1)


# -- output ----------------------------------------------------------------------------

def test_curve_outputs():
    cs = CurveSet(Window(0, 1, 0, 1))
    cs.add([0.1 + 0.1j, 0.5 + 0.5j], "separatrix", 0.1 + 0.1j, "window")
    text = curves_to_csv(cs)
    assert text.splitlines()[0] == "curve_id,tag,re,im"
    assert len(text.splitlines()) == 3
    cs.add(np.array([0.2 + 0.3j, 0.4 + 0.1j]), "inflection_plus", np.complex128(0.2 + 0.3j), "window")
    for ln in curves_to_csv(cs).splitlines()[1:]:
        [float(x) for x in ln.split(",")[2:]]
    svg = curves_to_svg(cs, 100)
    assert svg.count("<path") == 2 and 'data-start="0.2,0.3"' in svg and 'data-tag="separatrix"' in svg
