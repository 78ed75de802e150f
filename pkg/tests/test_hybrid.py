import numpy as np
import pytest
from hypothesis import given, strategies as st

from lpae.errors import ContractError
from lpae.hybrid import (AnnealSchedule, HybridLossConfig, LpBatch, batch_hybrid_grad,
                         gap_bound, gap_report, hybrid_grad, hybrid_loss, lambda_at)
from lpae.lp import LinearProgram
from lpae.net import Mlp, backward, forward, xavier_init

from _oracles import (central_difference, hybrid_margin, hybrid_terms_loop,
                      random_hybrid_instance)


def _constant_encoder(d, z):
    z = np.asarray(z, dtype=np.float64)
    return Mlp((d, len(z)), [np.zeros((len(z), d))], [z.copy()])


def test_feasible_latent_has_zero_violation():
    lp = LinearProgram(np.eye(2), [1.0, 1.0], [1.0, 2.0])
    enc = _constant_encoder(3, [0.5, 0.5])
    dec = xavier_init([2, 4, 3], 0)
    x = np.array([0.1, 0.2, 0.3])
    br = hybrid_loss(x, enc, dec, lp, HybridLossConfig(lam=5.0, mu=0.1))
    assert br.viol == 0.0
    assert br.obj == pytest.approx(1.5)
    assert br.total == pytest.approx(br.rec - 0.15)


def test_terms_match_scalar_loop():
    rng = np.random.default_rng(0)
    for _ in range(20):
        x, enc, dec, lp = random_hybrid_instance(rng, 4, 3, 5)
        cfg = HybridLossConfig(lam=float(rng.uniform(0, 10)), mu=float(rng.uniform(0, 1)))
        br = hybrid_loss(x, enc, dec, lp, cfg)
        rec, viol, obj, total = hybrid_terms_loop(x, enc, dec, lp, cfg.lam, cfg.mu)
        assert br.rec == pytest.approx(rec, rel=1e-12, abs=1e-14)
        assert br.viol == pytest.approx(viol, rel=1e-12, abs=1e-14)
        assert br.obj == pytest.approx(obj, rel=1e-12, abs=1e-14)
        assert br.total == pytest.approx(total, rel=1e-10, abs=1e-12)
        assert br.total == br.rec + cfg.lam * br.viol - cfg.mu * br.obj


def test_plain_autoencoder_when_weights_zero():
    rng = np.random.default_rng(1)
    x, enc, dec, lp = random_hybrid_instance(rng, 4, 3, 5)
    ge, gd, br = hybrid_grad(x, enc, dec, lp, HybridLossConfig(0.0, 0.0))
    z, te = forward(enc, x)
    xh, td = forward(dec, z)
    assert br.total == pytest.approx(np.sum((xh - x) ** 2))
    ref_d = backward(dec, td, 2 * (xh - x))
    ref_e = backward(enc, te, ref_d.inputs)
    for a, b in zip(gd.params() + ge.params(), ref_d.params() + ref_e.params()):
        np.testing.assert_array_equal(a, b)


def test_penalty_inactive_inside_polytope():
    """Strictly feasible latent and mu = 0: lam has no effect on gradients."""
    rng = np.random.default_rng(2)
    x, enc, dec, _ = random_hybrid_instance(rng, 4, 3, 5)
    z = enc(x)
    lp = LinearProgram(np.eye(3), np.abs(z) + 1.0, np.ones(3))
    g0 = hybrid_grad(x, enc, dec, lp, HybridLossConfig(0.0, 0.0))
    g1 = hybrid_grad(x, enc, dec, lp, HybridLossConfig(100.0, 0.0))
    for a, b in zip(g0[0].params(), g1[0].params()):
        np.testing.assert_array_equal(a, b)


def test_gradients_finite_difference():
    rng = np.random.default_rng(3)
    checked = 0
    while checked < 30:
        x, enc, dec, lp = random_hybrid_instance(rng, 4, 3, 4)
        if hybrid_margin(x, enc, dec, lp) < 1e-3:
            continue
        cfg = HybridLossConfig(lam=float(rng.uniform(0.5, 5)), mu=float(rng.uniform(0, 1)))
        ge, gd, _ = hybrid_grad(x, enc, dec, lp, cfg)
        f = lambda: hybrid_loss(x, enc, dec, lp, cfg).total  # noqa: E731
        fd = central_difference(f, enc.params() + dec.params())
        for a, b in zip(ge.params() + gd.params(), fd):
            np.testing.assert_allclose(a, b, rtol=1e-4, atol=1e-7)
        checked += 1


def test_batch_is_mean_of_singles():
    rng = np.random.default_rng(4)
    _, enc, dec, _ = random_hybrid_instance(rng, 4, 3, 5)
    lps = [random_hybrid_instance(rng, 4, 3, 5)[3] for _ in range(6)]
    X = rng.uniform(0, 1, (6, 4))
    cfg = HybridLossConfig(2.0, 0.3)
    res = batch_hybrid_grad(X, enc, dec, LpBatch.from_lps(lps), cfg)
    singles = [hybrid_grad(x, enc, dec, lp, cfg) for x, lp in zip(X, lps)]
    assert res.breakdown.total == pytest.approx(np.mean([s[2].total for s in singles]))
    for k, g in enumerate(res.encoder_grads.params()):
        np.testing.assert_allclose(g, np.mean([s[0].params()[k] for s in singles], 0),
                                   atol=1e-12)


def test_shared_and_stacked_batches_agree():
    rng = np.random.default_rng(5)
    x, enc, dec, lp = random_hybrid_instance(rng, 4, 3, 5)
    X = rng.uniform(0, 1, (3, 4))
    shared = LpBatch.from_lps([lp] * 3)
    assert shared.A.ndim == 2
    stacked = LpBatch(np.stack([lp.A] * 3), np.stack([lp.b] * 3), np.stack([lp.c] * 3))
    cfg = HybridLossConfig(1.0, 0.1)
    a = batch_hybrid_grad(X, enc, dec, shared, cfg)
    b = batch_hybrid_grad(X, enc, dec, stacked, cfg)
    assert a.breakdown.total == pytest.approx(b.breakdown.total, rel=1e-14)


def test_penalty_monotone_in_lambda():
    rng = np.random.default_rng(6)
    x, enc, dec, lp = random_hybrid_instance(rng, 4, 3, 5, b_shift=-1.0)
    totals = [hybrid_loss(x, enc, dec, lp, HybridLossConfig(lam, 0.1)).total
              for lam in (0.0, 1.0, 10.0, 100.0)]
    assert hybrid_loss(x, enc, dec, lp, HybridLossConfig(1.0, 0.1)).viol > 0
    assert all(a < b for a, b in zip(totals, totals[1:]))


def test_dimension_mismatch():
    rng = np.random.default_rng(7)
    x, enc, dec, _ = random_hybrid_instance(rng, 4, 3, 5)
    lp = LinearProgram(np.eye(2), np.ones(2), np.ones(2))
    with pytest.raises(ContractError):
        hybrid_loss(x, enc, dec, lp, HybridLossConfig())


def test_config_validation():
    with pytest.raises(ContractError):
        HybridLossConfig(lam=-1.0)
    with pytest.raises(ContractError):
        AnnealSchedule(alpha=0.5)
    with pytest.raises(ContractError):
        AnnealSchedule(lambda0=10, lambda_max=1)


def test_lambda_schedule_values():
    s = AnnealSchedule(lambda0=1.0, alpha=1.5, lambda_max=1e3)
    assert lambda_at(s, 0) == 1.0
    assert lambda_at(s, 2) == 2.25
    assert lambda_at(s, 100) == 1000.0
    assert lambda_at(s, 10**9) == 1000.0
    with pytest.raises(ContractError):
        lambda_at(s, -1)


@given(st.floats(0.01, 10), st.floats(1.0, 3.0), st.floats(1.0, 1e4), st.integers(0, 500))
def test_lambda_schedule_monotone_and_capped(l0, alpha, ratio, t):
    s = AnnealSchedule(l0, alpha, l0 * ratio)
    a, b = lambda_at(s, t), lambda_at(s, t + 1)
    assert l0 <= a <= b <= s.lambda_max


def test_gap_bound_examples():
    lp = LinearProgram([[1.0]], [0.0], [1.0])
    assert gap_bound(lp, [np.sqrt(3.0)], HybridLossConfig(2.0, 0.5)) == pytest.approx(12.0)
    assert gap_bound(lp, [0.0], HybridLossConfig(2.0, 0.5)) == 0.0
    with pytest.raises(ContractError):
        gap_bound(lp, [1.0], HybridLossConfig(2.0, 0.0))


def test_gap_report_true_gap():
    lp = LinearProgram([[1, 0], [0, 2], [3, 2]], [4, 12, 18], [3, 5])
    bound, gap = gap_report(lp, [0.0, 0.0], HybridLossConfig(1.0, 0.1))
    # feasible but far from optimal: the diagnostic is 0 while the gap is 36
    assert bound == 0.0
    assert gap == pytest.approx(36.0)
