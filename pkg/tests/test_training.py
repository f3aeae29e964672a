import numpy as np
import pytest

from oracles import mse_sum
from stcae.architectures import ModelParams, build_model, init_params
from stcae.errors import ContractError, TrainingDiverged
from stcae.training import (
    AdadeltaState,
    TrainConfig,
    adadelta_step,
    augment_hflip,
    fit,
    mse_loss,
    read_loss_csv,
    write_loss_csv,
)


def blob_windows(n, T=4, size=16, seed=0):
    """Windows of a Gaussian blob drifting horizontally at a random speed."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size]
    out = np.empty((n, T, size, size, 1), np.float32)
    for k in range(n):
        x0, y0 = rng.uniform(3, size - 3, 2)
        vx = rng.uniform(-1, 1)
        for t in range(T):
            img = np.exp(-((xx - x0 - vx * t) ** 2 + (yy - y0) ** 2) / 6.0)
            out[k, t, :, :, 0] = img - img.mean()
    return out


# -- loss ----------------------------------------------------------------------------

def test_mse_examples():
    x = np.random.default_rng(0).normal(size=(2, 3, 4)).astype(np.float32)
    loss, g = mse_loss(x, x)
    assert loss == 0.0 and not g.any()
    i = np.full((1, 8, 64, 64, 1), 0.5, np.float32)
    loss, _ = mse_loss(i, np.zeros_like(i))
    assert loss == 8192.0


def test_mse_vs_scalar_sum():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(3, 4, 5, 5, 1)).astype(np.float32)
    b = rng.normal(size=a.shape).astype(np.float32)
    loss, g = mse_loss(a, b)
    ref = mse_sum(a.astype(np.float64), b.astype(np.float64))
    assert abs(loss - ref) <= 1e-4 * ref
    np.testing.assert_allclose(g, 2.0 / 3 * (b - a), rtol=1e-5, atol=1e-7)


def test_mse_shape_mismatch():
    with pytest.raises(ContractError):
        mse_loss(np.zeros((1, 2)), np.zeros((1, 3)))


# -- optimiser -----------------------------------------------------------------------

def one_param(value):
    return ModelParams("x", {0: [np.array([value], np.float32)]})


def test_adadelta_first_step_hand_value():
    p = one_param(0.0)
    state = AdadeltaState.zeros(p)
    adadelta_step(p, one_param(1.0), state, TrainConfig(epochs=1))
    assert state.sq_grad[0][0][0] == pytest.approx(0.05)
    expected = -np.sqrt(1e-6) / np.sqrt(0.05 + 1e-6)
    assert p.tensors[0][0][0] == pytest.approx(expected, rel=1e-5)
    assert expected == pytest.approx(-4.4721e-3, rel=1e-4)


def test_adadelta_zero_gradient():
    p = one_param(2.0)
    state = AdadeltaState.zeros(p)
    state.sq_grad[0][0][:] = 1.0
    state.sq_update[0][0][:] = 1.0
    adadelta_step(p, one_param(0.0), state, TrainConfig(epochs=1))
    assert p.tensors[0][0][0] == 2.0
    assert state.sq_grad[0][0][0] == pytest.approx(0.95)
    assert state.sq_update[0][0][0] == pytest.approx(0.95)


def test_adadelta_scale_invariance():
    rng = np.random.default_rng(2)
    grads = rng.normal(size=(100, 5)).astype(np.float32)
    steps = []
    for scale in (1.0, 100.0):
        p = ModelParams("x", {0: [np.zeros(5, np.float32)]})
        state = AdadeltaState.zeros(p)
        for g in grads:
            before = p.tensors[0][0].copy()
            adadelta_step(p, ModelParams("x", {0: [g * np.float32(scale)]}), state, TrainConfig(epochs=1))
        steps.append(np.abs(p.tensors[0][0] - before))
    np.testing.assert_allclose(steps[1], steps[0], rtol=0.05)


def test_non_finite_gradient_names_layer():
    p = one_param(0.0)
    with pytest.raises(TrainingDiverged) as info:
        adadelta_step(p, one_param(np.nan), AdadeltaState.zeros(p), TrainConfig(epochs=1))
    assert info.value.layer == 0


# -- augmentation --------------------------------------------------------------------

def test_hflip():
    rng = np.random.default_rng(3)
    batch = rng.normal(size=(3, 4, 5, 1)).astype(np.float32)
    out = augment_hflip(batch)
    assert out.shape == (6, 4, 5, 1)
    np.testing.assert_array_equal(out[3:], batch[:, :, ::-1])
    np.testing.assert_array_equal(augment_hflip(out[3:])[3:], batch)
    sym = np.ones((1, 4, 4, 1), np.float32)
    out = augment_hflip(sym)
    np.testing.assert_array_equal(out[0], out[1])


def test_variant_defaults():
    assert TrainConfig.for_variant("dstcae-c3d").batch_size == 16
    assert not TrainConfig.for_variant("dstcae-c3d").augment
    cfg = TrainConfig.for_variant("cae-upsampling")
    assert cfg.batch_size == 32 and cfg.augment
    assert TrainConfig().epochs == 500
    with pytest.raises(ContractError):
        TrainConfig(epochs=0)


# -- loop -----------------------------------------------------------------------------

SMALL = dict(input_shape=(4, 16, 16, 1), filters=(4, 2))


def test_convergence_on_moving_blobs():
    spec = build_model("dstcae-upsampling", **SMALL)
    data = blob_windows(200)
    _, hist = fit(spec, data, TrainConfig(epochs=30, batch_size=16, seed=0))
    assert len(hist) == 30
    assert hist[-1] < 0.5 * hist[0]


def test_same_seed_same_history(tmp_path):
    spec = build_model("dstcae-deconv", **SMALL)
    data = blob_windows(20)
    runs = []
    for k in range(2):
        _, hist = fit(spec, data, TrainConfig(epochs=3, batch_size=8, seed=4))
        write_loss_csv(hist, tmp_path / f"loss{k}.csv")
        runs.append((tmp_path / f"loss{k}.csv").read_bytes())
    assert runs[0] == runs[1]
    assert read_loss_csv(tmp_path / "loss0.csv") == hist


def test_2d_training_with_flips():
    spec = build_model("cae-deconv", (16, 16, 1), filters=(4, 2))
    data = blob_windows(40, T=1)[:, 0]
    _, hist = fit(spec, data, TrainConfig.for_variant("cae-deconv", epochs=2))
    assert np.all(np.isfinite(hist))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reports_epoch():
    spec = build_model("dae", (4, 4, 1), units=(6, 4, 2))
    data = np.random.default_rng(5).normal(size=(8, 4, 4, 1)).astype(np.float32)
    data[3, 0, 0, 0] = np.inf
    with pytest.raises(TrainingDiverged) as info:
        fit(spec, data, TrainConfig(epochs=2, batch_size=4))
    assert info.value.epoch == 1


def test_checkpoint_written(tmp_path):
    from stcae.architectures import load_checkpoint
    spec = build_model("dstcae-c3d", (4, 16, 16, 1), filters=(2, 2))
    params = init_params(spec, 0)
    path = tmp_path / "c.stcae"
    fit(spec, blob_windows(4), TrainConfig(epochs=2, checkpoint_interval=1), params, path)
    assert load_checkpoint(path).variant == "dstcae-c3d"


def test_wrong_sample_shape():
    spec = build_model("dstcae-c3d", (4, 16, 16, 1), filters=(2, 2))
    with pytest.raises(ContractError):
        fit(spec, np.zeros((2, 4, 8, 8, 1), np.float32), TrainConfig(epochs=1))
