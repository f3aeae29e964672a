import numpy as np
import pytest

from oracles import numeric_grad
from stcae import architectures as A
from stcae.errors import CheckpointMismatch, ContractError
from stcae.training import mse_loss

# Architecture tables transcribed row by row. Two rows are given in their
# corrected form: the decode convolution feeding the last upsampling layer
# has 16 feature maps (the table prints 8, which an upsampling layer could
# not turn into 16). The DAE's first "(4096)" row is the flattened input.
TABLES = {
    "dstcae-upsampling": [
        ("Input", (8, 64, 64, 1)),
        ("3D Convolution", (8, 64, 64, 16)),
        ("3D Max-pooling", (4, 32, 32, 16)),
        ("3D Convolution", (4, 32, 32, 8)),
        ("3D Max-pooling", (2, 16, 16, 8)),
        ("3D Convolution", (2, 16, 16, 8)),
        ("3D UpSampling", (4, 32, 32, 8)),
        ("3D Convolution", (4, 32, 32, 16)),  # corrected from 8
        ("3D UpSampling", (8, 64, 64, 16)),
        ("3D Convolution", (8, 64, 64, 1)),
    ],
    "dstcae-deconv": [
        ("Input", (8, 64, 64, 1)),
        ("3D Convolution", (8, 64, 64, 16)),
        ("3D Max-pooling", (4, 32, 32, 16)),
        ("3D Convolution", (4, 32, 32, 8)),
        ("3D Max-pooling", (2, 16, 16, 8)),
        ("3D Deconvolution", (4, 32, 32, 8)),
        ("3D Deconvolution", (8, 64, 64, 16)),
        ("3D Deconvolution", (8, 64, 64, 1)),
    ],
    "dstcae-c3d": [
        ("Input", (8, 64, 64, 1)),
        ("3D Convolution", (8, 64, 64, 16)),
        ("3D Max-pooling", (8, 32, 32, 16)),
        ("3D Convolution", (8, 32, 32, 8)),
        ("3D Max-pooling", (4, 16, 16, 8)),
        ("3D Convolution", (4, 16, 16, 8)),
        ("3D Max-pooling", (2, 8, 8, 8)),
        ("3D Convolution", (2, 8, 8, 8)),
        ("3D UpSampling", (4, 16, 16, 8)),
        ("3D Convolution", (4, 16, 16, 8)),
        ("3D UpSampling", (8, 32, 32, 8)),
        ("3D Convolution", (8, 32, 32, 16)),  # corrected from 8
        ("3D UpSampling", (8, 64, 64, 16)),
        ("3D Convolution", (8, 64, 64, 1)),
    ],
}
CAE_ENCODER = [
    ("Input", (64, 64, 1)),
    ("2D Convolution", (64, 64, 16)),
    ("2D Max-pooling", (32, 32, 16)),
    ("2D Convolution", (32, 32, 8)),
    ("2D Max-pooling", (16, 16, 8)),
    ("2D Convolution", (16, 16, 8)),
    ("2D Max-pooling", (8, 8, 8)),
]
TABLES["cae-upsampling"] = CAE_ENCODER + [
    ("2D Convolution", (8, 8, 8)),
    ("2D UpSampling", (16, 16, 8)),
    ("2D Convolution", (16, 16, 8)),
    ("2D UpSampling", (32, 32, 8)),
    ("2D Convolution", (32, 32, 16)),
    ("2D UpSampling", (64, 64, 16)),
    ("2D Convolution", (64, 64, 1)),
]
TABLES["cae-deconv"] = CAE_ENCODER + [
    ("2D Deconvolution", (16, 16, 8)),
    ("2D Deconvolution", (32, 32, 8)),
    ("2D Deconvolution", (64, 64, 16)),
    ("2D Deconvolution", (64, 64, 1)),
]
TABLES["dae"] = [
    ("Input", (64, 64, 1)),
    ("Flatten", (4096,)),
    ("Fully Connected", (150,)),
    ("Fully Connected", (100,)),
    ("Fully Connected", (50,)),
    ("Fully Connected", (100,)),
    ("Fully Connected", (150,)),
    ("Fully Connected", (4096,)),
    ("Reshape", (64, 64, 1)),
]


@pytest.mark.parametrize("variant", A.VARIANTS)
def test_shape_table_matches(variant):
    assert A.shape_table(A.build_model(variant)) == TABLES[variant]


def test_named_shapes():
    up = A.build_model("dstcae-upsampling")
    assert A.layer_shapes(up)[4] == (2, 16, 16, 8)
    c3d = A.build_model("dstcae-c3d")
    assert A.layer_shapes(c3d)[6] == (2, 8, 8, 8)
    dae = A.build_model("dae")
    assert min(s[0] for s in A.layer_shapes(dae) if len(s) == 1) == 50
    assert A.format_shape_table(A.build_model("dstcae-deconv")).splitlines()[-1] == \
        "3D Deconvolution - (8, 64, 64, 1)"


def test_dropout_placement():
    for v in ("dstcae-upsampling", "dstcae-deconv", "dstcae-c3d"):
        kinds = [layer.kind for layer in A.build_model(v).layers]
        assert kinds.index("dropout") == 2  # after the first pooling layer
    kinds = [layer.kind for layer in A.build_model("dae").layers]
    assert kinds.index("dropout") == 2  # after the first fully connected layer
    for v in ("cae-upsampling", "cae-deconv"):
        assert "dropout" not in [layer.kind for layer in A.build_model(v).layers]


def test_unknown_variant():
    with pytest.raises(ContractError):
        A.build_model("dstcae-lstm")
    assert A.build_model("DSTCAE_C3D").variant == "dstcae-c3d"


@pytest.mark.parametrize("variant", A.VARIANTS)
def test_forward_contract(variant):
    spec = A.build_model(variant)
    params = A.init_params(spec, seed=1)
    x = np.random.default_rng(0).uniform(-1, 1, (2,) + spec.input_shape).astype(np.float32)
    y, _ = A.model_forward(spec, params, x)
    assert y.shape == x.shape
    assert np.all(np.abs(y) <= 1.0)
    zero = params.zeros_like()
    y0, _ = A.model_forward(spec, zero, x)
    assert not y0.any()


def test_zero_grad_output_gives_zero_grads():
    spec = A.build_model("dstcae-upsampling", (4, 8, 8, 1), filters=(2, 2))
    params = A.init_params(spec, 0)
    x = np.random.default_rng(0).normal(size=(2, 4, 8, 8, 1)).astype(np.float32)
    y, caches = A.model_forward(spec, params, x)
    grads = A.model_backward(spec, params, caches, np.zeros_like(y))
    assert all(not t.any() for _, ts in grads.items() for t in ts)


def test_gradients_deterministic():
    spec = A.build_model("dstcae-upsampling", (4, 8, 8, 1), filters=(2, 2))
    params = A.init_params(spec, 0)
    x = np.random.default_rng(0).normal(size=(2, 4, 8, 8, 1)).astype(np.float32)
    runs = []
    for _ in range(2):
        y, caches = A.model_forward(spec, params, x, training=True, rng=np.random.default_rng(5))
        _, g = mse_loss(x, y)
        runs.append(A.model_backward(spec, params, caches, g))
    for i, ts in runs[0].items():
        for a, b in zip(ts, runs[1].tensors[i]):
            np.testing.assert_array_equal(a, b)


def _regime(caches):
    parts = []
    for c in caches:
        if c.activation == "relu" and c.preact is not None:
            parts.append((c.preact > 0).tobytes())
        if c.argmax is not None:
            parts.append(c.argmax.tobytes())
    return tuple(parts)


def end_to_end_fd(variant, n_samples=500, seed=0):
    """Relative error between backprop and central differences over sampled parameters."""
    spec = A.build_model(variant, (4, 8, 8, 1), filters=(2, 2))
    params = A.init_params(spec, seed)
    for _, ts in params.items():  # non-zero biases so their gradients are exercised
        ts[1][:] = np.random.default_rng(seed + 1).normal(0, 0.05, ts[1].shape)
    x = np.random.default_rng(seed).uniform(-0.5, 0.5, (2, 4, 8, 8, 1)).astype(np.float32)
    y, caches = A.model_forward(spec, params, x)
    _, g = mse_loss(x, y)
    grads = A.model_backward(spec, params, caches, g)

    flat = [(i, k, ix) for i, ts in params.items() for k, t in enumerate(ts) for ix in np.ndindex(t.shape)]
    rng = np.random.default_rng(seed + 2)
    pick = rng.choice(len(flat), size=min(n_samples, len(flat)), replace=False)
    state = {}

    def loss():
        out, cs = A.model_forward(spec, params, x)
        state["regime"] = _regime(cs)
        return mse_loss(x, out)[0]

    analytic, numeric = [], []
    for j in pick:
        i, k, ix = flat[j]
        t = params.tensors[i][k]
        num = numeric_grad(loss, t, 1e-3, index=[ix], state=lambda: state["regime"])[0]
        if np.isnan(num):
            continue
        analytic.append(float(grads.tensors[i][k][ix]))
        numeric.append(num)
    a, b = np.array(analytic), np.array(numeric)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b))), len(a)


@pytest.mark.parametrize("variant", ["dstcae-upsampling", "dstcae-deconv", "dstcae-c3d"])
def test_end_to_end_finite_differences(backend, variant):
    err, n = end_to_end_fd(variant, n_samples=200)
    assert n >= 150
    assert err <= 1e-2


def test_param_counts():
    spec = A.build_model("dstcae-upsampling")
    shapes = A.param_shapes(spec)
    assert shapes[0] == [(16, 1, 5, 3, 3), (16,)]
    dae = A.init_params(A.build_model("dae"), 0)
    assert dae.weight(1).shape == (4096, 150)


def test_checkpoint_round_trip(tmp_path):
    spec = A.build_model("dstcae-c3d")
    params = A.init_params(spec, 3)
    path = tmp_path / "m.stcae"
    A.save_checkpoint(params, path)
    back = A.load_checkpoint(path)
    assert back.variant == "dstcae-c3d"
    A.check_params(spec, back)
    for i, ts in params.items():
        for a, b in zip(ts, back.tensors[i]):
            np.testing.assert_array_equal(a, b)


def test_checkpoint_mismatch(tmp_path):
    params = A.init_params(A.build_model("dstcae-c3d"), 3)
    path = tmp_path / "m.stcae"
    A.save_checkpoint(params, path)
    with pytest.raises(CheckpointMismatch):
        A.check_params(A.build_model("dstcae-upsampling"), A.load_checkpoint(path))
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(CheckpointMismatch):
        A.load_checkpoint(path)
    (tmp_path / "bad").write_bytes(b"hello")
    with pytest.raises(CheckpointMismatch):
        A.load_checkpoint(tmp_path / "bad")
