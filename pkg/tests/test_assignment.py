"""Assignment-matrix checks: stochasticity, symmetry, MLP gradients."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from artifit.assignment import (
    AssignmentState, Mlp, bbox_normalizer, normalize_points, part_probs,
    point_part_probs, point_primitive_probs,
)
from artifit.autodiff import Tensor

from helpers import check_grads

rng = np.random.default_rng(21)


def test_uniform_logits_give_uniform_parts():
    v = part_probs(Tensor(np.zeros((3, 4)))).data
    np.testing.assert_allclose(v, 0.25, atol=1e-15)


def test_peaked_logit_near_one_hot():
    v = part_probs(Tensor(np.array([[10.0, 0.0, 0.0, 0.0]]))).data
    # exact value is e^10/(e^10+3) = 0.999863...
    assert v[0, 0] == pytest.approx(np.exp(10) / (np.exp(10) + 3), rel=1e-12)
    assert v[0, 0] > 0.999
    assert v[0, 1:].max() < 1e-4


def test_part_rows_stochastic():
    v = part_probs(Tensor(rng.normal(size=(6, 4)) * 5)).data
    np.testing.assert_allclose(v.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(v >= 0)


def test_identical_primitive_features_give_uniform_w():
    mlp = Mlp.init(rng)
    g = np.tile(rng.normal(size=16), (5, 1))
    pts = rng.uniform(-1, 1, size=(20, 3))
    w = point_primitive_probs(pts, mlp, Tensor(g)).data
    np.testing.assert_allclose(w, 0.2, atol=1e-12)


def test_point_rows_stochastic():
    mlp = Mlp.init(rng)
    g = rng.normal(size=(6, 16))
    pts = rng.uniform(-1, 1, size=(50, 3))
    w = point_primitive_probs(pts, mlp, Tensor(g)).data
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)


def test_point_part_product():
    w = np.abs(rng.normal(size=(30, 5)))
    w /= w.sum(axis=1, keepdims=True)
    # identity-like v: one-hot rows collapse u to w
    u = point_part_probs(Tensor(w), Tensor(np.eye(5))).data
    np.testing.assert_allclose(u, w, atol=1e-15)
    # uniform everything stays uniform
    u2 = point_part_probs(Tensor(np.full((4, 3), 1 / 3)), Tensor(np.full((3, 2), 0.5))).data
    np.testing.assert_allclose(u2, 0.5, atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_property_u_row_stochastic(seed):
    r = np.random.default_rng(seed)
    w = r.dirichlet(np.ones(4), size=12)
    v = r.dirichlet(np.ones(3), size=4)
    u = point_part_probs(Tensor(w), Tensor(v)).data
    np.testing.assert_allclose(u.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(u >= -1e-15)


def test_argmax_invariant_to_row_shift():
    h = rng.normal(size=(5, 4))
    v1 = part_probs(Tensor(h)).data
    v2 = part_probs(Tensor(h + rng.normal(size=(5, 1)))).data
    np.testing.assert_array_equal(v1.argmax(axis=1), v2.argmax(axis=1))


def test_mlp_deterministic():
    mlp = Mlp.init(np.random.default_rng(5))
    pts = rng.uniform(-1, 1, size=(10, 3))
    a = mlp(pts).data
    b = mlp(pts).data
    np.testing.assert_array_equal(a, b)


def test_w_gradient_wrt_mlp_weights():
    r = np.random.default_rng(9)
    g = r.normal(size=(3, 16)) * 0.5
    pts = r.uniform(-1, 1, size=(6, 3))
    target = r.normal(size=(6, 3))
    base = Mlp.init(r)

    def f(*weights):
        mlp = Mlp(list(weights))
        w = point_primitive_probs(pts, mlp, Tensor(g))
        return (w * target).sum()

    ana, num = check_grads(f, [w.data for w in base.weights], rtol=2e-4, atol=1e-8)
    for a, n in zip(ana, num):
        denom = max(np.linalg.norm(n), 1e-12)
        assert np.linalg.norm(a - n) / denom < 1e-4


def test_state_init_shapes():
    st_ = AssignmentState.init(6, 4, rng)
    assert st_.h.data.shape == (6, 4)
    np.testing.assert_array_equal(st_.h.data, 0.0)
    assert len(st_.parameters()) == 7
    shapes = [w.data.shape for w in st_.mlp.weights]
    assert shapes == [(3, 64), (64,), (64, 64), (64,), (64, 16), (16,)]


def test_bbox_normalizer_unit_cube():
    pts = rng.uniform(-4.0, 2.0, size=(500, 3))
    center, scale = bbox_normalizer(pts)
    n = normalize_points(pts, center, scale).data
    assert n.min() >= -1.0 - 1e-12 and n.max() <= 1.0 + 1e-12
    # isotropic: relative distances preserved up to one global factor
    d_orig = np.linalg.norm(pts[0] - pts[1])
    d_norm = np.linalg.norm(n[0] - n[1])
    assert d_norm * scale == pytest.approx(d_orig, rel=1e-12)


def test_bbox_normalizer_rejects_empty():
    with pytest.raises(ValueError):
        bbox_normalizer(np.zeros((0, 3)))
