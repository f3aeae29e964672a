import numpy as np
import pytest

from oracles import cross_scores_enum, within_scores_enum
from stcae import scoring as S
from stcae.errors import ContractError


def test_recon_error_closed_forms():
    x = np.random.default_rng(0).normal(size=(3, 8, 64, 64, 1)).astype(np.float32)
    assert not S.recon_error_matrix(x, x).values.any()
    R = S.recon_error_matrix(x + np.float32(0.1), x)
    np.testing.assert_allclose(R.values, 40.96, rtol=1e-4)


def test_recon_error_vs_pixel_loop():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(2, 3, 4, 4, 1)).astype(np.float32)
    b = rng.normal(size=a.shape).astype(np.float32)
    R = S.recon_error_matrix(a, b)
    for i in range(2):
        for t in range(3):
            ref = sum((float(a[i, t, h, w, 0]) - float(b[i, t, h, w, 0])) ** 2
                      for h in range(4) for w in range(4))
            assert abs(R.values[i, t] - ref) <= 1e-4 * ref


def test_shape_mismatch():
    with pytest.raises(ContractError):
        S.recon_error_matrix(np.zeros((1, 8, 4, 4, 1)), np.zeros((1, 8, 4, 4, 2)))


def test_get_and_dense():
    R = S.ReconErrorMatrix("v", np.arange(6.0).reshape(3, 2))
    assert R.num_frames == 4
    assert R.get(1, 2) == 3.0 and R.get(1, 0) is None
    assert np.isnan(R.dense()[0, 3])


def test_cross_constant_and_first_frame():
    R = S.ReconErrorMatrix("v", np.full((5, 8), 2.5))
    fs = S.cross_context_scores(R)
    np.testing.assert_allclose(fs.c_mu, 2.5)
    np.testing.assert_allclose(fs.c_sigma, 0.0, atol=1e-12)
    R = S.ReconErrorMatrix("v", np.random.default_rng(2).uniform(size=(5, 8)))
    fs = S.cross_context_scores(R)
    assert fs.c_mu[0] == R.values[0, 0] and fs.c_sigma[0] == 0.0


def test_within_examples():
    ws = S.within_context_scores(S.ReconErrorMatrix("v", np.array([[1.0, 3.0], [4.0, 4.0]])))
    np.testing.assert_allclose(ws.w_mu, [2.0, 4.0])
    np.testing.assert_allclose(ws.w_sigma, [1.0, 0.0])


def test_scores_match_enumeration_oracles():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        T = int(rng.integers(1, 10))
        D = int(rng.integers(1, 30))
        R = S.ReconErrorMatrix("v", rng.gamma(2.0, 5.0, (D, T)))
        fs = S.cross_context_scores(R)
        mu, sd = cross_scores_enum(R.values)
        np.testing.assert_allclose(fs.c_mu, mu, rtol=1e-6, atol=1e-6)
        np.testing.assert_allclose(fs.c_sigma, sd, rtol=1e-6, atol=1e-6)
        ws = S.within_context_scores(R)
        mu, sd = within_scores_enum(R.values)
        np.testing.assert_allclose(ws.w_mu, mu, rtol=1e-6, atol=1e-6)
        np.testing.assert_allclose(ws.w_sigma, sd, rtol=1e-6, atol=1e-6)


def test_invariants():
    rng = np.random.default_rng(4)
    for _ in range(1000):
        T = int(rng.integers(1, 10))
        D = int(rng.integers(1, 20))
        vals = rng.gamma(2.0, 5.0, (D, T))
        c = float(rng.uniform(-3, 3))
        a = S.cross_context_scores(S.ReconErrorMatrix("v", vals))
        b = S.cross_context_scores(S.ReconErrorMatrix("v", vals + c))
        np.testing.assert_allclose(b.c_mu, a.c_mu + c, atol=1e-9)
        np.testing.assert_allclose(b.c_sigma, a.c_sigma, atol=1e-6)
        wa = S.within_context_scores(S.ReconErrorMatrix("v", vals))
        wb = S.within_context_scores(S.ReconErrorMatrix("v", vals + c))
        np.testing.assert_allclose(wb.w_mu, wa.w_mu + c, atol=1e-9)
        np.testing.assert_allclose(wb.w_sigma, wa.w_sigma, atol=1e-6)
        # one window: every frame is seen once, so C_mu is that row and C_sigma vanishes
        single = S.cross_context_scores(S.ReconErrorMatrix("v", vals[:1]))
        np.testing.assert_array_equal(single.c_mu, vals[0])
        assert not single.c_sigma.any()


def test_window_labels():
    labels = np.zeros(20, bool)
    labels[7] = True
    y, counts = S.label_windows(labels, 8, 1)
    assert y[0] and counts[0] == 1
    labels = np.zeros(8, bool)
    labels[1:] = True
    y, _ = S.label_windows(labels, 8, 8)
    assert not y[0]
    with pytest.raises(ContractError):
        S.label_windows(labels, 8, 9)


def test_alpha_sweep_vs_counting():
    rng = np.random.default_rng(5)
    labels = rng.random(60) < 0.4
    for alpha in range(1, 9):
        y, _ = S.label_windows(labels, 8, alpha)
        ref = [sum(labels[i:i + 8]) >= alpha for i in range(53)]
        assert y.tolist() == ref
