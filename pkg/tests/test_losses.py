import numpy as np
import pytest
from hypothesis import given, strategies as st

from crowdgraph import functional as fn
from crowdgraph.errors import DimensionError
from crowdgraph.losses import LossConfig, density_loss, joint_loss, point_loss, point_loss_parts
from crowdgraph.points import Assignment, PointPrediction
from crowdgraph.tensor import Tensor

from oracles import density_loss_loops, point_loss_loops


def pred(points, conf, grad=False):
    points = np.asarray(points, dtype=float)
    return PointPrediction(np.zeros_like(points), Tensor(points, requires_grad=grad),
                           Tensor(np.asarray(conf, dtype=float), requires_grad=grad))


def test_density_examples(rng):
    m = rng.random((1, 4, 4))
    assert density_loss(Tensor(m), m).item() == 0
    assert density_loss(Tensor(np.ones((1, 1, 2))), np.zeros((1, 1, 2))).item() == 1
    a, b = rng.random((8, 8)), rng.random((8, 8))
    assert density_loss(Tensor(a[None]), b[None]).item() == pytest.approx(density_loss_loops(a, b), abs=1e-12)
    with pytest.raises(DimensionError):
        density_loss(Tensor(np.ones((1, 2, 2))), np.ones((1, 2, 3)))


def test_point_loss_examples():
    cfg = LossConfig()
    perfect = pred([[1.0, 2], [5, 5]], [1.0, 0.0])
    assert point_loss(perfect, [[1.0, 2]], Assignment(np.array([0]), 2), cfg).item() == 0
    one = pred([[3.0, 4]], [0.5])
    for lam in (0.0, 7.0):
        val = point_loss(one, [[3.0, 4]], Assignment(np.array([0]), 1), LossConfig(lambda1=lam)).item()
        assert val == pytest.approx(0.69315, abs=1e-5)


def test_point_loss_hand_three_proposals():
    # proposals at (0,0), (4,0), (0,3), confidences .8, .3, .6; GT (1,1) matched to proposal 0
    p = pred([[0.0, 0], [4, 0], [0, 3]], [0.8, 0.3, 0.6])
    cfg = LossConfig(lambda1=0.1, lambda2=0.5)
    got = point_loss(p, [[1.0, 1.0]], Assignment(np.array([0]), 3), cfg).item()
    cls = -(np.log(0.8) + 0.5 * (np.log(0.7) + np.log(0.4))) / 3
    assert got == pytest.approx(cls + 0.1 * 2.0, abs=1e-10)


def test_no_gt_all_negative_and_zero_loc():
    p = pred([[0.0, 0], [1, 1]], [0.2, 0.9])
    parts = point_loss_parts(p, np.zeros((0, 2)), Assignment(np.zeros(0, dtype=int), 2), LossConfig())
    assert parts.loc.item() == 0
    assert parts.cls.item() == pytest.approx(-0.5 * (np.log(0.8) + np.log(0.1)) / 2, abs=1e-12)


def test_log_floor_saturation():
    p = pred([[0.0, 0]], [0.0])
    val = point_loss(p, [[0.0, 0]], Assignment(np.array([0]), 1), LossConfig()).item()
    assert val == pytest.approx(-np.log(1e-12))


def test_joint_examples():
    assert joint_loss(Tensor(0.0), Tensor(0.0)).item() == 0
    assert joint_loss(Tensor(2.5), Tensor(1.5)).item() == 4.0
    a, b = Tensor(2.0, requires_grad=True), Tensor(3.0, requires_grad=True)
    joint_loss(a, b).backward()
    assert a.grad == 1 and b.grad == 1


@given(st.integers(0, 4), st.integers(0, 4), st.integers(0, 2**31))
def test_point_loss_matches_loops(n_gt, extra, seed):
    r = np.random.default_rng(seed)
    m = n_gt + extra + 1
    points = r.uniform(0, 20, size=(m, 2))
    conf = r.uniform(0.01, 0.99, size=m)
    gt = r.uniform(0, 20, size=(n_gt, 2))
    match = r.permutation(m)[:n_gt]
    cfg = LossConfig(lambda1=r.uniform(0, 1), lambda2=r.uniform(0, 1))
    parts = point_loss_parts(pred(points, conf), gt, Assignment(match, m), cfg)
    total, cls, loc = point_loss_loops(points, conf, gt, match, cfg.lambda1, cfg.lambda2)
    assert parts.total.item() == pytest.approx(total, abs=1e-10)
    assert parts.cls.item() >= 0 and parts.loc.item() >= 0


@given(st.floats(0.1, 5), st.integers(0, 2**31))
def test_loc_scales_quadratically(alpha, seed):
    r = np.random.default_rng(seed)
    gt = r.uniform(0, 10, size=(3, 2))
    err = r.normal(size=(3, 2))
    a = Assignment(np.arange(3), 4)

    def loc(scale):
        pts = np.vstack([gt + scale * err, [[50.0, 50.0]]])
        return point_loss_parts(pred(pts, np.full(4, 0.5)), gt, a, LossConfig()).loc.item()

    assert loc(alpha) == pytest.approx(alpha**2 * loc(1.0), rel=1e-9)


def test_gradient_does_not_flow_through_matching():
    p = pred([[0.0, 0], [4, 0]], [0.7, 0.2], grad=True)
    a = Assignment(np.array([1]), 2)
    point_loss(p, [[1.0, 1.0]], a, LossConfig(lambda1=1.0)).backward()
    # only the matched proposal's coordinates receive localisation gradient
    assert p.offsets.grad[0].tolist() == [0, 0]
    np.testing.assert_allclose(p.offsets.grad[1], 2 * (np.array([4.0, 0]) - [1, 1]))
