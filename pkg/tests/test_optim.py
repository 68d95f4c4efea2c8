"""Adam update rule against a hand-rolled reference."""

import numpy as np

from motionforge.optim import Adam


def _reference_adam(params, grads_seq, lr, betas=(0.9, 0.999), eps=1e-8):
    """Independent textbook implementation, one parameter array."""
    b1, b2 = betas
    p = params.copy()
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    for t, g in enumerate(grads_seq, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        p = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    return p


def test_matches_reference_over_several_steps():
    rng = np.random.default_rng(3)
    p = rng.standard_normal((4, 3))
    grads = [rng.standard_normal((4, 3)) for _ in range(5)]
    expected = _reference_adam(p, grads, lr=0.01)

    live = p.copy()
    opt = Adam(lr=0.01)
    for g in grads:
        opt.step([live], [g.copy()])
    np.testing.assert_allclose(live, expected, rtol=0, atol=1e-12)


def test_first_step_moves_by_lr_signwise():
    # With bias correction the very first step is ~lr * sign(grad).
    p = np.zeros(5)
    g = np.array([3.0, -0.2, 0.0, 1e-4, -7.0])
    opt = Adam(lr=0.1)
    opt.step([p], [g.copy()])
    expected = -0.1 * g / (np.abs(g) + 1e-8)
    nonzero = g != 0
    np.testing.assert_allclose(p[nonzero], expected[nonzero], rtol=1e-9)
    assert p[2] == 0.0


def test_gradient_clipping_rescales_globally():
    p1, p2 = np.zeros(2), np.zeros(2)
    g1, g2 = np.array([3.0, 0.0]), np.array([0.0, 4.0])  # joint norm 5
    opt = Adam(lr=1.0, max_grad_norm=1.0)
    opt.step([p1, p2], [g1, g2])

    ref1, ref2 = np.zeros(2), np.zeros(2)
    ref = Adam(lr=1.0)
    ref.step([ref1, ref2], [g1 / 5.0, g2 / 5.0])
    np.testing.assert_allclose(p1, ref1, atol=1e-9)
    np.testing.assert_allclose(p2, ref2, atol=1e-9)


def test_clipping_skipped_below_threshold():
    p = np.zeros(2)
    g = np.array([0.3, 0.4])  # norm 0.5 < 1
    a = Adam(lr=0.05, max_grad_norm=1.0)
    b = Adam(lr=0.05)
    pa, pb = p.copy(), p.copy()
    a.step([pa], [g.copy()])
    b.step([pb], [g.copy()])
    np.testing.assert_array_equal(pa, pb)


def test_lr_mutable_between_steps():
    p = np.zeros(1)
    opt = Adam(lr=0.0)
    opt.step([p], [np.ones(1)])
    assert p[0] == 0.0
    opt.lr = 0.1
    opt.step([p], [np.ones(1)])
    assert p[0] < 0.0


def test_state_roundtrip_resumes_identically():
    rng = np.random.default_rng(9)
    p = rng.standard_normal(6)
    grads = [rng.standard_normal(6) for _ in range(6)]

    solo = Adam(lr=0.02)
    ps = p.copy()
    for g in grads:
        solo.step([ps], [g.copy()])

    first = Adam(lr=0.02)
    pr = p.copy()
    for g in grads[:3]:
        first.step([pr], [g.copy()])
    resumed = Adam(lr=0.02)
    resumed.load_state([x.copy() for x in first.state_tensors()], first.t)
    for g in grads[3:]:
        resumed.step([pr], [g.copy()])
    np.testing.assert_allclose(pr, ps, atol=1e-12)


def test_mismatched_lists_rejected():
    opt = Adam()
    try:
        opt.step([np.zeros(1)], [])
    except ValueError:
        return
    raise AssertionError("expected ValueError")
