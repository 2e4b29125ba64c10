import numpy as np
import pytest
from hypothesis import given, strategies as st

from crowdgraph.density import (
    DensityHead, DensityHeadConfig, gt_density_map, read_density_csv, read_pgm,
    write_density_csv, write_pgm,
)
from crowdgraph.errors import InputError
from crowdgraph.gradcheck import CHECKS, run_checks
from crowdgraph.tensor import Tensor


def test_zero_final_conv_gives_zero_map():
    rng = np.random.default_rng(0)
    head = DensityHead(rng, 64, DensityHeadConfig())
    head.out.weight.data[:] = 0
    head.out.bias.data[:] = 0
    out = head(Tensor(rng.normal(size=(64, 8, 8))))
    assert out.shape == (1, 8, 8) and not out.data.any()


def test_head_gradcheck():
    check = next(c for c in CHECKS if c.module == "density-head")
    assert max(r.max_rel_err for r in run_checks([check], seeds=range(3))) < 1e-5


def test_gt_empty_and_single():
    assert not gt_density_map([], 64, 64, 8, 2.0).any()
    m = gt_density_map([(32.0, 32.0)], 64, 64, 8, 1.0)
    assert m.shape == (1, 8, 8)
    assert abs(m.sum() - 1.0) < 1e-6


def test_gt_fifty_points():
    rng = np.random.default_rng(5)
    pts = rng.uniform(1, 127, size=(50, 2))
    assert abs(gt_density_map(pts, 128, 128, 8, 2.0).sum() - 50) < 0.5


def test_gt_rejects_outside_point():
    with pytest.raises(InputError, match=r"\(70.0, 3.0\)"):
        gt_density_map([(70.0, 3.0)], 64, 64, 8, 2.0)


def test_gt_hand_values():
    # point at a cell centre, sigma 1: weights exp(-d^2/2) over offsets with d <= 3
    m = gt_density_map([(8 * 4.5, 8 * 4.5)], 80, 80, 8, 1.0)[0]
    offs = np.arange(-3, 4)
    d2 = offs[:, None] ** 2 + offs[None, :] ** 2
    k = np.where(d2 <= 9, np.exp(-d2 / 2), 0)
    np.testing.assert_allclose(m[1:8, 1:8], k / k.sum(), atol=1e-15)
    assert m[0].sum() == 0


@given(st.lists(st.tuples(st.floats(0, 63.99), st.floats(0, 63.99)), max_size=10),
       st.lists(st.tuples(st.floats(0, 63.99), st.floats(0, 63.99)), max_size=10))
def test_gt_additive(p1, p2):
    a = gt_density_map(p1, 64, 64, 8, 2.0)
    b = gt_density_map(p2, 64, 64, 8, 2.0)
    np.testing.assert_allclose(gt_density_map(p1 + p2, 64, 64, 8, 2.0), a + b, atol=1e-12)
    assert (a >= 0).all()
    # mass 1 per point, wherever it lies
    assert abs(a.sum() - len(p1)) < 1e-9


@given(st.floats(24, 40), st.floats(24, 40))
def test_gt_translation_equivariance(x, y):
    a = gt_density_map([(x, y)], 128, 128, 8, 1.0)[0]
    b = gt_density_map([(x + 8, y + 8)], 128, 128, 8, 1.0)[0]
    np.testing.assert_allclose(b[1:, 1:], a[:-1, :-1], atol=1e-14)


def test_pgm_and_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    m = rng.random((1, 5, 7))
    write_pgm(tmp_path / "d.pgm", m)
    pgm = read_pgm(tmp_path / "d.pgm")
    assert pgm.shape == (5, 7) and pgm.max() == 255
    np.testing.assert_array_equal(pgm, np.rint(m[0] / m.max() * 255))
    write_density_csv(tmp_path / "d.csv", m)
    assert read_density_csv(tmp_path / "d.csv").tobytes() == m[0].tobytes()
