import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from proxytrain.autodiff import ShapeError, Tensor, finite_diff_check, gradients, log_softmax
from proxytrain.semi import (IGNORE, PseudoLabelSet, consistency_feature_loss, contrastive_loss,
                             ema_update, erase_low_confidence, masked_cross_entropy,
                             self_perturbation_loss, soften_logits)

seeds = st.integers(0, 2 ** 31)


def test_self_perturbation_examples(rng):
    z = rng.standard_normal((3, 4))
    assert self_perturbation_loss(z, z).item() == 0.0
    assert self_perturbation_loss([[1.0, 0.0]], [[0.0, 1.0]]).item() == 1.0
    zs = rng.standard_normal((3, 4))
    loop = sum((z[i, j] - zs[i, j]) ** 2 for i in range(3) for j in range(4)) / 12
    assert self_perturbation_loss(z, zs).item() == pytest.approx(loop, abs=1e-14)
    with pytest.raises(ShapeError):
        self_perturbation_loss(z, zs[:2])


def test_contrastive_examples():
    v = [0.3, -0.2, 1.0]
    assert contrastive_loss(v, v, True).item() == 0.0
    assert contrastive_loss(v, v, False).item() == 1.0
    # Dist = mean([1.5*2]) = 1.5
    a, b = [0.0, 0.0], [math.sqrt(1.5), math.sqrt(1.5)]
    assert contrastive_loss(a, b, True).item() == pytest.approx(1.5)
    assert contrastive_loss(a, b, False).item() == 0.0


def test_contrastive_hinge_boundary_has_zero_gradient():
    a = Tensor([0.0, 0.0], requires_grad=True)
    loss = contrastive_loss(a, [1.0, 1.0], False)  # Dist exactly 1
    assert loss.item() == 0.0
    assert np.array_equal(gradients(loss, {"a": a})["a"], [0.0, 0.0])


def test_contrastive_and_perturbation_fd_away_from_hinge(rng):
    for same in (True, False):
        a = Tensor(0.3 * rng.standard_normal(4), requires_grad=True)
        b = Tensor(0.3 * rng.standard_normal(4), requires_grad=True)
        err = finite_diff_check(lambda: contrastive_loss(a, b, same), {"a": a, "b": b})
        assert err <= 1e-5
    z = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
    zs = rng.standard_normal((2, 3))
    assert finite_diff_check(lambda: self_perturbation_loss(z, zs), {"z": z}) <= 1e-5


def test_masked_cross_entropy_examples(rng):
    o = np.array([[50.0, -50.0], [-50.0, 50.0]])
    assert masked_cross_entropy(o, [0, 1]).item() < 1e-30
    with pytest.raises(ValueError):
        masked_cross_entropy(o, [IGNORE, IGNORE])
    o3 = rng.standard_normal((3, 4))
    y = np.array([2, IGNORE, 0])
    plain = -(log_softmax(Tensor(o3[[0, 2]]), axis=1).data[[0, 1], [2, 0]]).mean()
    assert masked_cross_entropy(o3, y).item() == pytest.approx(plain, abs=1e-14)
    assert masked_cross_entropy(o3, PseudoLabelSet(y, 4)).item() == pytest.approx(plain, abs=1e-14)


@given(seeds)
def test_masked_cross_entropy_gradient_zero_at_ignore(seed):
    r = np.random.default_rng(seed)
    o = Tensor(r.standard_normal((2, 5, 3)), requires_grad=True)
    y = r.integers(0, 3, (2, 5))
    y[r.random((2, 5)) < 0.4] = IGNORE
    y[0, 0] = 1
    g = gradients(masked_cross_entropy(o, y), {"o": o})["o"]
    assert np.all(g[y == IGNORE] == 0.0)
    assert np.all(np.abs(g[y != IGNORE]).sum(-1) > 0)


def test_ema_examples():
    t, s = {"w": np.ones(3)}, {"w": np.zeros(3)}
    assert np.array_equal(ema_update(t, s, 1.0)["w"], t["w"])
    assert np.array_equal(ema_update(t, s, 0.0)["w"], s["w"])
    np.testing.assert_allclose(ema_update(t, s, 0.9)["w"], 0.9, atol=1e-15)
    with pytest.raises(ShapeError):
        ema_update(t, {"w": np.zeros(2)})
    with pytest.raises(ValueError):
        ema_update(t, s, 1.5)


@given(seeds, st.floats(0, 1))
def test_ema_contracts_toward_student(seed, beta):
    r = np.random.default_rng(seed)
    t, s = r.standard_normal(5), r.standard_normal(5)
    new = ema_update({"w": Tensor(t)}, {"w": Tensor(s)}, beta)["w"]
    np.testing.assert_allclose(np.abs(new - s), beta * np.abs(t - s), atol=1e-12)


def test_consistency_examples():
    f = np.array([[1.0, 2.0]])
    assert consistency_feature_loss(f, f, 0.0).item() == 0.0
    assert consistency_feature_loss([[2.0]], [[0.0]], 0.0).item() == 2.0
    # spatial axis is averaged before dropout
    g = np.array([[[1.0], [3.0]]])
    assert consistency_feature_loss(g, np.zeros_like(g), 0.0).item() == 2.0


def test_consistency_with_frozen_masks_is_l1_on_survivors(rng):
    fs, ft = rng.standard_normal((4, 6)), rng.standard_normal((4, 6))
    p = 0.5
    draw = np.random.default_rng(7)
    ks, kt = draw.random((4, 6)) >= p, draw.random((4, 6)) >= p
    want = np.abs(fs * ks / (1 - p) - ft * kt / (1 - p)).mean()
    got = consistency_feature_loss(fs, ft, p, np.random.default_rng(7)).item()
    assert got == pytest.approx(want, abs=1e-14)


def test_erase_examples():
    assert erase_low_confidence([[0.9995, 0.0005]], 0.999).labels.tolist() == [0]
    assert erase_low_confidence([[0.2, 0.8]], 0.999).labels.tolist() == [IGNORE]
    c = np.array([[0.5, 0.5], [0.3, 0.7], [0.9, 0.1]])
    assert erase_low_confidence(c, 0.0).fraction_ignored == 0.0
    with pytest.raises(ValueError):
        erase_low_confidence([[0.5, 0.6]], 0.5)
    with pytest.raises(ValueError):
        erase_low_confidence([[0.5, 0.5]], 1.5)


@given(hnp.arrays(np.float64, (12, 3), elements=st.floats(0.01, 1)), st.floats(0, 1),
       st.floats(0, 1))
def test_erase_is_monotone_in_phi(raw, a, b):
    c = raw / raw.sum(1, keepdims=True)
    lo, hi = sorted((a, b))
    kept_lo = erase_low_confidence(c, lo).labels != IGNORE
    kept_hi = erase_low_confidence(c, hi).labels != IGNORE
    assert np.all(kept_lo[kept_hi])


def test_soften_examples():
    y = np.array([1.0, -0.5, 2.0])
    e = np.exp(y)
    np.testing.assert_allclose(soften_logits(y, 1.0), e / e.sum(), atol=1e-15)
    np.testing.assert_allclose(soften_logits(y, 1e-12), np.full(3, 1 / 3), atol=1e-11)
    np.testing.assert_allclose(soften_logits([2.0, 0.0], 0.2), [0.599, 0.401], atol=5e-4)
    with pytest.raises(ValueError):
        soften_logits(y, 0.0)


@given(hnp.arrays(np.float64, (4, 5), elements=st.floats(-20, 20)), st.floats(0.01, 50))
def test_soften_preserves_argmax(y, beta):
    y = y + np.arange(5) * 1e-3  # break exact ties
    assert np.array_equal(np.argmax(soften_logits(y, beta), -1), np.argmax(y, -1))


def test_pseudo_label_file_format():
    labels = PseudoLabelSet(np.array([0, IGNORE, 2, 1]), 3)
    text = labels.dumps()
    assert text.splitlines()[0] == "n: 4 k: 3"
    assert text.splitlines()[2] == "-1"
    back = PseudoLabelSet.loads(text)
    assert np.array_equal(back.labels, labels.labels) and back.n_classes == 3
    assert back.checksum() == labels.checksum()
    assert labels.fraction_ignored == 0.25
    with pytest.raises(ValueError):
        PseudoLabelSet(np.array([3]), 3)
    with pytest.raises(ValueError):
        PseudoLabelSet.loads("n: 5 k: 3\n0\n")
