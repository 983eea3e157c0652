import numpy as np
import pytest

from sparseodt.autodiff import Tensor, gradcheck, precision
from sparseodt.scan import a_rss_scan, discretize, linear_recurrence, scan_op, selective_scan


def instance(rng, L, ci=3, n=4, lead=()):
    return dict(
        x=rng.normal(size=lead + (L, ci)),
        delta=np.exp(rng.normal(size=lead + (L, ci)) - 2.0),
        A=-np.exp(rng.normal(size=(ci, n))),
        B=rng.normal(size=lead + (L, n)),
        C=rng.normal(size=lead + (L, n)),
        D=rng.normal(size=ci),
        R=rng.normal(size=lead + (L, ci)),
    )


def loop_reference(x, delta, A, B, C, D, R):
    """Scalar triple loop straight from the recurrence."""
    L, ci = x.shape
    n = A.shape[1]
    y = np.zeros((L, ci))
    for c in range(ci):
        h = np.zeros(n)
        for k in range(L):
            for s in range(n):
                z = delta[k, c] * A[c, s]
                bbar = (np.exp(z) - 1.0) / z * delta[k, c] * B[k, s]
                h[s] = np.exp(z) * h[s] + R[k, c] * bbar * x[k, c]
            y[k, c] = C[k] @ h + D[c] * x[k, c]
    return y


def test_matches_loop_reference():
    p = instance(np.random.default_rng(0), 12)
    np.testing.assert_allclose(a_rss_scan(**p), loop_reference(**p), rtol=1e-10, atol=1e-12)


def test_mask_of_ones_is_unmasked_scan_bitwise():
    p = instance(np.random.default_rng(1), 40, lead=(2,))
    p["R"] = np.ones_like(p["R"])
    masked = a_rss_scan(**p)
    p.pop("R")
    assert masked.tobytes() == selective_scan(**p).tobytes()


@pytest.mark.parametrize("mode", ["sequential", "parallel"])
def test_mask_of_zeros_leaves_skip_only(mode):
    p = instance(np.random.default_rng(2), 33)
    p["R"] = np.zeros_like(p["R"])
    y = a_rss_scan(**p, mode=mode)
    assert np.array_equal(y, p["D"] * p["x"])


def test_parallel_matches_sequential():
    rng = np.random.default_rng(3)
    lengths = rng.integers(1, 4097, size=20)
    for L in lengths:
        p = instance(rng, int(L), ci=2, n=3)
        seq = a_rss_scan(**p, mode="sequential")
        par = a_rss_scan(**p, mode="parallel")
        assert np.max(np.abs(seq - par)) < 1e-10


def test_linearity_in_x():
    rng = np.random.default_rng(4)
    p = instance(rng, 50)
    x1, x2 = rng.normal(size=(2,) + p["x"].shape)
    a, b = 0.7, -1.9
    lhs = a_rss_scan(**{**p, "x": a * x1 + b * x2})
    rhs = a * a_rss_scan(**{**p, "x": x1}) + b * a_rss_scan(**{**p, "x": x2})
    assert np.max(np.abs(lhs - rhs)) < 1e-10


def test_stability_and_decay():
    rng = np.random.default_rng(5)
    p = instance(rng, 30)
    abar, _ = discretize(p["delta"], p["A"], p["B"])
    assert np.all(abar < 1) and np.all(abar > 0)
    # impulse then zero input: |h| decays monotonically
    a = abar[:, 0, 0]
    b = np.zeros(30)
    b[0] = 1.0
    h = linear_recurrence(a, b)
    assert np.all(np.diff(np.abs(h)) < 0)


def test_small_delta_limit():
    A = np.array([[-1.0]])
    delta = np.array([[1e-8]])
    B = np.array([[2.0]])
    _, bbar = discretize(delta, A, B)
    assert bbar[0, 0, 0] == pytest.approx(2e-8, rel=1e-12)


def test_rejects_bad_delta_and_shapes():
    p = instance(np.random.default_rng(6), 5)
    with pytest.raises(ValueError):
        a_rss_scan(**{**p, "delta": -p["delta"]})
    with pytest.raises(ValueError):
        a_rss_scan(**{**p, "R": p["R"][:-1]})
    with pytest.raises(ValueError):
        a_rss_scan(**p, mode="bogus")


@pytest.mark.parametrize("mode", ["sequential", "parallel"])
@pytest.mark.parametrize("masked", [True, False])
def test_scan_op_gradcheck(mode, masked):
    rng = np.random.default_rng(7)
    with precision(np.float64):
        p = instance(rng, 7, ci=3, n=2, lead=(2,))
        t = {k: Tensor(v, requires_grad=True, name=k) for k, v in p.items()}
        g = rng.normal(size=p["x"].shape)
        R = t["R"] if masked else None
        inputs = [t[k] for k in ("x", "delta", "A", "B", "C", "D")] + ([R] if masked else [])

        def loss():
            y = scan_op(t["x"], t["delta"], t["A"], t["B"], t["C"], t["D"], R, mode)
            return (y * g).sum()

        gradcheck(loss, inputs, rtol=1e-6, atol=1e-8)


def test_scan_op_forward_matches_kernel():
    p = instance(np.random.default_rng(8), 9)
    with precision(np.float64):
        y = scan_op(*(Tensor(p[k]) for k in ("x", "delta", "A", "B", "C", "D", "R")))
    assert np.array_equal(y.data, a_rss_scan(**p))
