import math
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from saido.model import (
    ClassifierHead,
    Detector,
    FrozenBackbone,
    LoraAdapter,
    SGDMomentum,
    adapt,
    ce_loss,
    contrastive_loss,
    forward,
    gradients,
    loglik_gradients,
    predict_label,
    prompt_embedding,
    total_loss,
)
from saido.numcore import SeededRng


def tiny_instance(seed, n=3, d=6, r=2):
    rng = np.random.default_rng(seed)
    H = rng.standard_normal((n, d))
    U = rng.standard_normal((n, d))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    y = rng.integers(0, 2, size=n)
    adapter = LoraAdapter(rng.standard_normal((r, d)) / np.sqrt(r), 0.3 * rng.standard_normal((d, r)))
    head = ClassifierHead(0.5 * rng.standard_normal((2, d)), 0.1 * rng.standard_normal(2))
    return H, y, U, adapter, head


def finite_difference(H, y, U, adapter, head, lam, h=1e-4):
    params = {"A": adapter.A, "B": adapter.B, "W": head.W, "b": head.b}
    out = {}
    for name, p in params.items():
        g = np.zeros_like(p)
        for i in np.ndindex(p.shape):
            old = p[i]
            p[i] = old + h
            up = total_loss(H, y, U, adapter, head, lam).total
            p[i] = old - h
            down = total_loss(H, y, U, adapter, head, lam).total
            p[i] = old
            g[i] = (up - down) / (2 * h)
        out[name] = g
    return out


def assert_close_rel(analytic, numeric, rtol=1e-3, floor=1e-6):
    for k in analytic:
        err = np.abs(analytic[k] - numeric[k])
        scale = np.maximum(np.abs(numeric[k]), floor)
        assert np.all(err <= rtol * scale + 1e-8), (k, float(np.max(err / scale)))


@pytest.mark.parametrize("seed", range(5))
def test_gradients_match_finite_differences(seed):
    H, y, U, adapter, head = tiny_instance(seed)
    _, g = gradients(H, y, U, adapter, head, lam=0.7)
    assert_close_rel(g, finite_difference(H, y, U, adapter, head, 0.7))


def test_gradients_loss_matches_total_loss():
    H, y, U, adapter, head = tiny_instance(9, n=5)
    parts, _ = gradients(H, y, U, adapter, head, lam=1.0)
    ref = total_loss(H, y, U, adapter, head, 1.0)
    assert abs(parts.total - ref.total) < 1e-12
    V, _ = adapt(H, adapter)
    assert abs(ref.total - (contrastive_loss(V, U) + ce_loss(V @ head.W.T + head.b, y))) < 1e-12


def test_bias_gradient_vanishes_without_ce():
    H, y, _, adapter, head = tiny_instance(3, n=4, d=6)
    U = np.eye(6)[:4]  # orthogonal prompts
    _, g = gradients(H, y, U, adapter, head, lam=0.0)
    assert np.array_equal(g["b"], np.zeros(2))
    assert np.array_equal(g["W"], np.zeros((2, 6)))


def test_optimizer_fixed_point():
    # on a separable toy batch the optimizer must be able to drive the analytic gradient to zero
    scipy_opt = pytest.importorskip("scipy.optimize")
    H, y, U, adapter, head = tiny_instance(4, n=4, d=6)
    shapes = [adapter.A.shape, adapter.B.shape, head.W.shape, head.b.shape]
    sizes = [int(np.prod(s)) for s in shapes]

    def unpack(theta):
        parts = np.split(theta, np.cumsum(sizes)[:-1])
        return [p.reshape(s) for p, s in zip(parts, shapes)]

    def fun(theta):
        A, B, W, b = unpack(theta)
        loss, g = gradients(H, y, U, LoraAdapter(A, B), ClassifierHead(W, b), lam=1.0)
        return loss.total, np.concatenate([g[k].ravel() for k in ("A", "B", "W", "b")])

    theta0 = np.concatenate([adapter.A.ravel(), adapter.B.ravel(), head.W.ravel(), head.b.ravel()])
    res = scipy_opt.minimize(fun, theta0, jac=True, method="L-BFGS-B", options={"gtol": 1e-9, "maxiter": 5000})
    assert np.linalg.norm(fun(res.x)[1]) < 1e-5


def test_loglik_gradients_are_per_sample_ce_gradients():
    H, y, U, adapter, head = tiny_instance(5, n=4)
    per = loglik_gradients(H, y, adapter, head)
    for i in range(4):
        # d/dθ log p(y_i|x_i) = -d/dθ CE of the single sample, contrastive part excluded
        _, g = gradients(H[i:i + 1], y[i:i + 1], U[i:i + 1], adapter, head, lam=1.0)
        # a singleton batch has zero contrastive loss and zero contrastive gradient
        for k in g:
            assert np.allclose(per[k][i], -g[k], atol=1e-12)


def test_zero_init_adapter_is_transparent():
    det = Detector.create(seed=3, d_raw=8, d_feat=5, rank=2)
    det.add_expert(SeededRng(3).stream("adapter", 0))
    x = np.random.default_rng(0).standard_normal((7, 8))
    logits, v = forward(x, det.experts[0], det.backbone, det.head)
    h = det.backbone(x)
    assert np.array_equal(v, h)


def test_forward_examples():
    bb = FrozenBackbone(1, 4, 3)
    head = ClassifierHead(np.arange(6.0).reshape(2, 3), np.zeros(2))
    ad = LoraAdapter(np.zeros((2, 3)), np.zeros((3, 2)))
    logits, _ = forward(np.zeros(4), ad, bb, head)
    assert logits.tolist() == [0.0, 0.0]
    assert predict_label(logits) == 0

    # B A = I on a rank-3 adapter doubles the feature
    eye = LoraAdapter(np.eye(3), np.eye(3))
    x = np.random.default_rng(2).standard_normal(4)
    _, v = forward(x, eye, bb, head)
    assert np.allclose(v, 2 * bb(x), atol=1e-14)


def test_dimension_mismatch_raises():
    bb = FrozenBackbone(1, 4, 3)
    with pytest.raises(ValueError):
        bb(np.zeros(5))
    with pytest.raises(ValueError):
        adapt(np.zeros((2, 4)), LoraAdapter(np.zeros((1, 3)), np.zeros((3, 1))))


def test_backbone_is_frozen_and_seeded():
    a, b = FrozenBackbone(11, 6, 4), FrozenBackbone(11, 6, 4)
    assert np.array_equal(a.projection, b.projection)
    with pytest.raises(ValueError):
        a.projection[0, 0] = 1.0
    assert abs(np.var(FrozenBackbone(0, 400, 50).projection) - 1 / 400) < 2e-4


def test_contrastive_examples():
    assert contrastive_loss([[0.3, -2.0]], [[1.0, 5.0]]) == 0.0
    eye = np.eye(2)
    assert math.isclose(contrastive_loss(eye, eye), -math.log(math.e / (math.e + 1)), rel_tol=1e-12)
    same = np.ones((2, 2))
    assert math.isclose(contrastive_loss(same, same), math.log(2), rel_tol=1e-12)
    with pytest.raises(ValueError):
        contrastive_loss(np.zeros((0, 2)), np.zeros((0, 2)))


def test_ce_examples():
    assert ce_loss([0.0, 0.0], 1) == pytest.approx(math.log(2), abs=1e-15)
    assert ce_loss([math.log(3), 0.0], 0) == pytest.approx(-math.log(0.75), abs=1e-15)
    assert ce_loss([800.0, 0.0], 0) == 0.0


def test_total_loss_weighting():
    H, y, U, adapter, head = tiny_instance(1)
    parts = total_loss(H, y, U, adapter, head, lam=0.0)
    assert parts.total == parts.contrastive
    parts = total_loss(H, y, U, adapter, head, lam=2.5)
    assert parts.total == parts.contrastive + 2.5 * parts.ce
    with pytest.raises(ValueError):
        total_loss(H, y, U, adapter, head, lam=-1.0)


batches = st.integers(1, 5).flatmap(
    lambda n: st.tuples(
        arrays(np.float64, (n, 3), elements=st.floats(-5, 5)),
        arrays(np.float64, (n, 3), elements=st.floats(-5, 5)),
    )
)


@settings(max_examples=100)
@given(batches)
def test_contrastive_symmetric_and_nonnegative(vu):
    V, U = vu
    a, b = contrastive_loss(V, U), contrastive_loss(U, V)
    assert a >= -1e-12
    assert abs(a - b) < 1e-9


@settings(max_examples=100)
@given(arrays(np.float64, 2, elements=st.floats(-50, 50)), st.integers(0, 1))
def test_ce_nonnegative(z, y):
    assert ce_loss(z, y) >= 0


def test_prompt_embedding_unit_and_deterministic():
    u = prompt_embedding("a dog photo | scene: Animal | real", 16)
    assert abs(np.linalg.norm(u) - 1) < 1e-9
    assert not np.array_equal(u, prompt_embedding("a dog photo | scene: Animal | fake", 16))
    code = "from saido.model import prompt_embedding; print(repr(prompt_embedding('x | scene: y | real', 16).tolist()))"
    other = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True).stdout
    assert eval(other) == prompt_embedding("x | scene: y | real", 16).tolist()


def test_sgd_momentum_and_reset():
    opt = SGDMomentum(lr=0.1, momentum=0.5)
    p = np.array([1.0])
    opt.step("p", p, np.array([1.0]))
    opt.step("p", p, np.array([1.0]))
    # buffers 1.0 then 1.5
    assert p[0] == pytest.approx(1.0 - 0.1 - 0.15)
    opt.reset()
    opt.step("p", p, np.array([2.0]))
    assert p[0] == pytest.approx(0.75 - 0.2)
