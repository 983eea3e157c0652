import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sparseodt.autodiff import Tensor, gradcheck, precision
from sparseodt.losses import LossParams, flow_weight, total_loss, weighted_mse
from sparseodt.metrics import eval_mask, evaluate, gaussian_window, mip, psnr, ssim, ssim_map
from sparseodt.optim import Adam, adam_step, cosine_lr
from sparseodt.phantom import PhantomTemplate, gen_phantom, realized_spec


@pytest.fixture(autouse=True)
def float64():
    with precision(np.float64):
        yield


def test_flow_weight_values():
    assert flow_weight(0.0) == pytest.approx(0.1, abs=1e-15)
    assert flow_weight(1.0) == pytest.approx(1.1, abs=1e-15)
    assert flow_weight(0.25) == pytest.approx(0.6, abs=1e-15)


def test_weighted_mse_double_loop_oracle():
    rng = np.random.default_rng(0)
    pred, target, w = rng.random((3, 4, 4))
    num = den = 0.0
    for i in range(4):
        for j in range(4):
            num += w[i, j] * (pred[i, j] - target[i, j]) ** 2
            den += w[i, j]
    assert abs(weighted_mse(pred, target, w).item() - num / den) < 1e-12
    assert weighted_mse(pred, pred, w).item() == 0.0


def test_weighted_mse_reductions_and_errors():
    rng = np.random.default_rng(1)
    pred, target = rng.random((2, 6, 5))
    plain = np.mean((pred - target) ** 2)
    assert abs(weighted_mse(pred, target, np.full((6, 5), 0.37)).item() - plain) < 1e-12
    w = rng.random((6, 5))
    base = weighted_mse(pred, target, w).item()
    assert abs(weighted_mse(pred, target, w * 123.4).item() - base) < 1e-12
    with pytest.raises(ValueError):
        weighted_mse(pred, target, np.zeros((6, 5)))
    with pytest.raises(ValueError):
        weighted_mse(pred, target[:, :4], w[:, :4])


def _case(rng, shape=(1, 1, 6, 5)):
    y = rng.random(shape)
    m = rng.random(shape)
    p = rng.uniform(-np.pi, np.pi, shape)
    return y, m, p


def test_total_loss_degenerate_cases():
    rng = np.random.default_rng(2)
    y, m, p = _case(rng)
    yh, mh, ph = _case(rng)
    loss, parts = total_loss(Tensor(yh), y, Tensor(mh), m, Tensor(ph), p, LossParams(lam=0.0))
    assert loss.item() == parts["L_Y"]
    loss, parts = total_loss(Tensor(y), y, Tensor(m), m, Tensor(p + 2 * np.pi), p)
    assert loss.item() < 1e-28
    with pytest.raises(ValueError):
        LossParams(alpha=0.0)


def test_total_loss_gradcheck():
    rng = np.random.default_rng(3)
    y, m, p = _case(rng)
    yh, mh, ph = (Tensor(a, requires_grad=True) for a in _case(rng))
    gradcheck(lambda: total_loss(yh, y, mh, m, ph, p)[0], [yh, mh, ph], rtol=1e-6, atol=1e-8)


def test_gradient_mass_on_flow_pixels():
    spec = realized_spec(PhantomTemplate(noise_sigma=0.0), seed=11, index=0)
    gt = gen_phantom(spec).gt_flow
    rng = np.random.default_rng(4)
    yh = Tensor(rng.random(gt.shape), requires_grad=True)
    z = np.zeros_like(gt)
    loss, _ = total_loss(yh, gt, Tensor(z), z, Tensor(z), z, LossParams(alpha=0.05, beta=0.0))
    loss.backward()
    g = np.abs(yh.grad)
    assert g[gt > 0].sum() >= 0.9 * g.sum()


def test_psnr_cases():
    a = np.random.default_rng(5).random((8, 8)) * 0.8
    assert abs(psnr(a, a + 0.1) - 20.0) < 1e-6
    assert psnr(a, a) == math.inf
    assert math.isnan(psnr(a, a + 0.1, mask=np.zeros((8, 8), bool)))
    b = np.random.default_rng(6).random((8, 8))
    direct = 10 * math.log10(1.0 / (sum((x - y) ** 2 for x, y in zip(a.ravel(), b.ravel())) / 64))
    assert abs(psnr(a, b) - direct) < 1e-10
    assert psnr(a, b) == psnr(b, a)


def _ssim_direct(a, b, size=11, sigma=1.5):
    """Window-by-window SSIM written from the textbook formula."""
    g = gaussian_window(size, sigma)
    w = np.outer(g, g)
    c1, c2 = 0.01**2, 0.03**2
    vals = []
    for i in range(a.shape[0] - size + 1):
        for j in range(a.shape[1] - size + 1):
            pa, pb = a[i : i + size, j : j + size], b[i : i + size, j : j + size]
            ma, mb = (w * pa).sum(), (w * pb).sum()
            va = (w * (pa - ma) ** 2).sum()
            vb = (w * (pb - mb) ** 2).sum()
            cov = (w * (pa - ma) * (pb - mb)).sum()
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma**2 + mb**2 + c1) * (va + vb + c2)))
    return np.array(vals).reshape(a.shape[0] - size + 1, -1)


def test_ssim_matches_direct_formula():
    rng = np.random.default_rng(7)
    a, b = rng.random((2, 15, 17))
    np.testing.assert_allclose(ssim_map(a, b), _ssim_direct(a, b), atol=1e-10)


def test_ssim_cases():
    x = np.random.default_rng(8).random((20, 20))
    assert abs(ssim(x, x) - 1.0) < 1e-9
    checker = (np.indices((16, 16)).sum(0) % 2).astype(float)
    value = ssim(checker, 1 - checker)
    assert value < 0
    assert abs(value - _ssim_direct(checker, 1 - checker).mean()) < 1e-10
    c = np.full((16, 16), 0.2)
    expected = (2 * 0.2 * 0.7 + 1e-4) / (0.2**2 + 0.7**2 + 1e-4)
    assert abs(ssim(c, c + 0.5) - expected) < 1e-9
    y = np.random.default_rng(9).random((20, 20))
    assert ssim(x, y) == pytest.approx(ssim(y, x), abs=1e-15)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (12, 12), elements=st.floats(0, 1)), arrays(np.float64, (12, 12), elements=st.floats(0, 1)))
def test_ssim_bounded_and_symmetric(a, b):
    s = ssim(a, b)
    assert -1 - 1e-9 <= s <= 1 + 1e-9
    assert s == pytest.approx(ssim(b, a), abs=1e-12)


def test_eval_mask_cases():
    assert not eval_mask(np.zeros((4, 4))).any()
    gt = np.zeros((4, 4))
    gt[1, 2] = 0.06
    assert eval_mask(gt).sum() == 1
    gt[0, 0] = 0.05
    assert not eval_mask(gt)[0, 0]
    report = evaluate([np.zeros((16, 16))], [np.zeros((16, 16))], with_mip=False)
    assert math.isnan(report.psnr[0]) and report.psnr_mean is None


def test_mip_oracle():
    rng = np.random.default_rng(10)
    vol = rng.random((3, 5, 4))
    out = mip(list(vol))
    ref = np.zeros((3, 4))
    for s in range(3):
        for x in range(4):
            ref[s, x] = max(vol[s, z, x] for z in range(5))
    assert np.array_equal(out, ref)
    assert np.array_equal(mip([vol[0]]), vol[0].max(axis=0)[None])
    assert not mip([np.zeros((3, 3))] * 2).any()


def test_cosine_lr():
    assert cosine_lr(0, 2000) == 2e-4
    assert cosine_lr(2000, 2000) == 1e-6
    assert cosine_lr(1000, 2000) == pytest.approx((2e-4 + 1e-6) / 2, rel=1e-12)
    lrs = [cosine_lr(t, 100) for t in range(101)]
    assert all(x >= y for x, y in zip(lrs, lrs[1:]))


def test_adam_zero_grad_and_first_step():
    p = [np.array([1.0, -2.0, 3.0])]
    state = {}
    adam_step(p, [np.zeros(3)], state, lr=1e-3)
    assert np.array_equal(p[0], [1.0, -2.0, 3.0])
    p = [np.array([1.0, -2.0, 3.0])]
    g = np.array([0.5, -4.0, 1e-3])
    adam_step(p, [g], {}, lr=1e-3)
    step = p[0] - np.array([1.0, -2.0, 3.0])
    np.testing.assert_allclose(step, -1e-3 * np.sign(g), rtol=1e-4)


def test_adam_quadratic_bowl():
    target = np.array([0.3, -1.2, 2.0])
    x = Tensor(np.zeros(3), requires_grad=True)
    opt = Adam([x], beta1=0.5)
    for t in range(100):
        opt.zero_grad()
        ((x - target) * (x - target)).sum().backward()
        opt.step(cosine_lr(t, 99, 0.3, 0.0))
    assert np.max(np.abs(x.data - target)) < 1e-4
