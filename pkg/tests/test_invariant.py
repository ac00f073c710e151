import math

import numpy as np
import pytest

from chinv.field import Window
from chinv.invariant import (
    GridMask,
    auto_window,
    certify_invariant,
    cochleoid_boundary,
    mask_distance,
    minimal_set_grid,
    oracle_set,
    read_pgm,
    sidecar_path,
    sweep_once,
    trail_closure_set,
    write_pgm,
)
from chinv.operator import build

COCH = build([-1, 1], [0, 0, 1])
COCH_WIN = (-0.25, 1.25, -0.75, 0.75)


@pytest.fixture(scope="module")
def coch100():
    return minimal_set_grid(COCH, COCH_WIN, 100)


# -- GridMask ------------------------------------------------------------------------

def test_gridmask_geometry():
    m = GridMask.empty((0, 2, 0, 1), (4, 2))
    assert (m.nx, m.ny) == (4, 2) and m.dx == 0.5 and m.dy == 0.5
    assert m.centers()[0, 0] == 0.25 + 0.25j
    assert sorted(m.cells_of(1 + 0.5j)) == [(0, 1), (0, 2), (1, 1), (1, 2)]
    assert m.cells_of(0.1 + 0.1j) == [(0, 0)]
    m.mark_points([1.9 + 0.9j])
    assert m.cells[1, 3] and m.cells.sum() == 1
    assert m.contains([1.8 + 0.8j, 0.1 + 0.1j, 5 + 5j]).tolist() == [True, False, False]
    assert m.contains([1.2 + 0.8j], dilation=1).tolist() == [True]


def test_gridmask_interior_counts_outside_as_marked():
    m = GridMask.empty((0, 1, 0, 1), 5)
    m.cells[:] = True
    assert m.interior().all() and not m.boundary().any()
    m.cells[2, 2] = False
    assert m.boundary().sum() == 8


def test_gridmask_copy_is_independent():
    m = GridMask.empty((0, 1, 0, 1), 3)
    c = m.copy()
    c.cells[0, 0] = True
    assert not m.cells.any() and not m.same_geometry(GridMask.empty((0, 1, 0, 1), 4))


# -- minimal sets ----------------------------------------------------------------------

def test_cochleoid_matches_oracle(coch100):
    ref = oracle_set(COCH, "cochleoid", COCH_WIN, 100)
    assert mask_distance(coch100, ref)["hausdorff_cells"] <= 3
    assert coch100.contains([0, 1, 0.5]).all()


def test_fixed_point_is_stable(coch100):
    again = sweep_once(COCH, coch100)
    assert np.array_equal(again.cells, coch100.cells)


def test_shuffled_order_gives_same_set():
    a = minimal_set_grid(COCH, COCH_WIN, 48, order="jacobi")
    b = minimal_set_grid(COCH, COCH_WIN, 48, order="shuffled", seed=7)
    assert np.array_equal(a.cells, b.cells)


def test_center_only_mode_runs():
    m = minimal_set_grid(COCH, COCH_WIN, 60, supersample=False)
    ref = oracle_set(COCH, "cochleoid", COCH_WIN, 60)
    assert mask_distance(m, ref)["hausdorff_cells"] <= 3


def test_interval_mask():
    m = minimal_set_grid(build([0, 1], [-1, 0, 1]), (-2, 2, -1, 1), (200, 100))
    z = m.centers()[m.cells]
    assert np.abs(z.imag).max() <= 2 * m.dy
    assert z.real.min() >= -1 - 2 * m.dx and z.real.max() <= 1 + 2 * m.dx
    assert m.contains(np.linspace(-0.99, 0.99, 50)).all()


def test_imaginary_axis_mask():
    m = minimal_set_grid(build([0, 1], [1]), (-2, 2, -2, 2), 100)
    z = m.centers()[m.cells]
    assert np.abs(z.real).max() <= 2 * m.dx
    assert m.contains(1j * np.linspace(-1.95, 1.95, 40)).all()


def test_resolution_stability(coch100):
    fine = minimal_set_grid(COCH, COCH_WIN, 200)
    up = GridMask(fine.window, 200, 200, np.kron(coch100.cells, np.ones((2, 2), bool)))
    assert mask_distance(up, fine)["hausdorff_cells"] <= 2


def test_window_stability():
    small = minimal_set_grid(COCH, COCH_WIN, 60)
    big = minimal_set_grid(COCH, (-1.0, 2.0, -1.5, 1.5), 120)
    sub = GridMask(small.window, 60, 60, big.cells[30:90, 30:90])
    assert big.cells.sum() == sub.cells.sum()
    assert mask_distance(small, sub)["hausdorff_cells"] <= 2


def test_root_on_vertex_seeds_all_adjacent_cells():
    m = minimal_set_grid(build([-1, 0, 1], [0]), (-2, 2, -2, 2), 40)
    assert m.cells.sum() == 8


def test_special_cases():
    # Q = 0: only the roots of P
    m = minimal_set_grid(build([-1, 0, 1], [0]), (-2, 2, -2, 2), 41)
    assert m.cells.sum() == 2 and m.contains([1, -1]).all()
    # no nontrivial invariant set: the whole plane
    m = minimal_set_grid(build([1], [0, -1]), (-1, 1, -1, 1), 20)
    assert m.cells.all() and m.meta["whole_plane"]
    # constant coefficients have no seed
    m = minimal_set_grid(build([1], [2]), (-1, 1, -1, 1), 20)
    assert not m.cells.any()


def test_separatrix_seeding_only_thickens_the_boundary():
    # the seeded curves are boundary trails, so grazing rays from outside can
    # add a thin rim; the rim shrinks in cell units as the grid refines
    a = minimal_set_grid(COCH, COCH_WIN, 60)
    b = minimal_set_grid(COCH, COCH_WIN, 60, separatrices=True)
    assert not (a.cells & ~b.cells).any()
    assert mask_distance(b, oracle_set(COCH, "cochleoid", COCH_WIN, 60))["hausdorff_cells"] <= 4


def test_auto_window_contains_set():
    w = auto_window(COCH)
    assert w.re0 < -0.2 and w.re1 > 1.1 and w.im0 < -0.7 and w.im1 > 0.7


# -- certification ------------------------------------------------------------------

def test_certify_disk_and_halfplane():
    m = oracle_set(COCH, "disk", (-5, 5, -5, 5), 100, radius=4)
    rep = certify_invariant(COCH, m)
    assert rep.passed and rep.method == "boundary_rays" and rep.zeros_interior
    m = oracle_set(COCH, "disk", (-5, 5, -5, 5), 100, radius=0.5)
    rep = certify_invariant(COCH, m)
    assert not rep.passed and not rep.zeros_inside
    op = build([0, 1], [2, 1])
    m = oracle_set(op, "halfplane", (-10, 10, -10, 10), 100, level=5.0)
    assert certify_invariant(op, m).passed


def test_certify_small_disk_fails_by_rays():
    # holds both roots of PQ but not the whole cochleoid
    m = oracle_set(COCH, "disk", (-2, 2, -2, 2), 100, radius=0.55, center=0.5)
    rep = certify_invariant(COCH, m)
    assert rep.zeros_inside and not rep.passed and rep.violations


def test_certify_interval_uses_complement():
    op = build([0, 1], [-1, 0, 1])
    m = oracle_set(op, "interval", (-2, 2, -1, 1), (200, 100))
    rep = certify_invariant(op, m)
    assert rep.method == "complement_rays" and rep.passed


def test_certify_unknown_method():
    with pytest.raises(ValueError):
        certify_invariant(COCH, GridMask.empty((0, 1, 0, 1), 4), method="nope")


# -- forward closure -------------------------------------------------------------------

def test_trail_closure_cochleoid(coch100):
    tc = trail_closure_set(COCH, [0], window=COCH_WIN, resolution=60)
    ms = minimal_set_grid(COCH, COCH_WIN, 60)
    assert mask_distance(tc, ms)["hausdorff_cells"] <= 2
    assert not (tc.cells & ~ms.dilated(2)).any()


def test_trail_closure_small_examples():
    tc = trail_closure_set(build([1], [-1, 1]), [1], window=(-1, 3, -2, 2), resolution=40)
    assert tc.cells.sum() <= 4 and tc.contains([1]).all()
    tc = trail_closure_set(build([0, 1], [0, -1, 1]), [0], window=(-1, 2, -1, 1), resolution=(60, 40))
    z = tc.centers()[tc.cells]
    assert np.abs(z.imag).max() <= tc.dy
    assert tc.contains(np.linspace(0.02, 0.98, 30)).all()


# -- oracles ----------------------------------------------------------------------------

def test_cochleoid_boundary_values():
    assert cochleoid_boundary(math.pi / 2) == pytest.approx(2j / math.pi)
    assert cochleoid_boundary(1e-9) == pytest.approx(1)
    assert cochleoid_boundary(0.0) == pytest.approx(1)


def test_oracle_interval_and_errors():
    op = build([0, 1], [-1, 0, 1])
    m = oracle_set(op, "interval", (-2, 2, -1, 1), (200, 100))
    z = m.centers()[m.cells]
    assert z.real.min() == pytest.approx(-1, abs=m.dx) and z.real.max() == pytest.approx(1, abs=m.dx)
    with pytest.raises(ValueError):
        oracle_set(op, "cochleoid", (-2, 2, -1, 1), 10)
    with pytest.raises(ValueError):
        oracle_set(COCH, "no_such_set", (-2, 2, -1, 1), 10)


def test_oracle_cone_complement():
    m = oracle_set(COCH, "cone_complement", (-4, 4, -4, 4), 80, axis=0.0, opening=math.pi / 2)
    assert not m.contains([3 + 0.5j]).any() and m.contains([-3, 3j]).all()


# -- distances and files -------------------------------------------------------------------

def test_mask_distance():
    m = oracle_set(COCH, "disk", (-2, 2, -2, 2), 40, radius=1)
    assert mask_distance(m, m)["hausdorff_cells"] == 0
    d = GridMask(m.window, m.nx, m.ny, m.dilated(1))
    r = mask_distance(m, d)
    assert r["hausdorff_cells"] == 1 and r["a_minus_b_cells"] == 0 and r["b_minus_a_cells"] > 0
    with pytest.raises(ValueError):
        mask_distance(m, GridMask.empty((-2, 2, -2, 2), 41))


def test_pgm_round_trip(tmp_path):
    m = GridMask.empty(Window(-1, 2, 0, 1), (6, 3))
    m.cells[0, 0] = True   # lowest row, leftmost column
    path = tmp_path / "m.pgm"
    write_pgm(m, path)
    raw = path.read_bytes()
    assert raw.startswith(b"P5\n6 3\n255\n")
    img = np.frombuffer(raw[-18:], dtype=np.uint8).reshape(3, 6)
    assert img[2, 0] == 255 and img.sum() == 255   # bottom row in the file
    back = read_pgm(path)
    assert back.same_geometry(m) and np.array_equal(back.cells, m.cells)
    assert sidecar_path(path).exists()
