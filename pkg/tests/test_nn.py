import io
from fractions import Fraction

import numpy as np
import pytest

from positnn import kernels as K
from positnn import posit as P
from positnn.harness import verify as V
from positnn.nn import (SGD, BatchNorm, CheckpointError, Conv2d, CrossEntropy, Dropout, Linear,
                        MixedParam, MSELoss, ReLU, StagePrecisions, build_cifarnet, build_lenet5,
                        load_model, save_model, scale_gradients)
from positnn.nn import checkpoint as ckpt
from positnn.posit import PositConfig
from positnn.tensor import FLOAT32, FLOAT64, a_convert, a_from_float64, a_to_float64

P8 = PositConfig(8, 2)
P12 = PositConfig(12, 2)
P10 = PositConfig(10, 2)
O12L10 = StagePrecisions.build(P8, optimizer=P12, loss=P10, quire=True)


@pytest.mark.parametrize("case", V._layer_cases(), ids=lambda c: c[0])
def test_layer_gradients_match_finite_differences(case):
    _, factory, shape = case
    for seed in range(5):
        assert V.gradcheck_layer(factory, shape, seed) < 1e-6


@pytest.mark.parametrize("loss", ["cross_entropy", "mse"])
def test_loss_gradients_match_finite_differences(loss):
    for seed in range(5):
        assert V.gradcheck_loss(loss, seed) < 1e-6


def test_stage_precision_defaults():
    p = StagePrecisions.build("8:2", optimizer="12:2", loss="10:2", quire=True)
    assert p.forward == p.backward == p.gradient == P8
    assert p.optimizer == P12 and p.loss == P10
    assert p.quire("forward") and not p.quire("optimizer")
    f = StagePrecisions.uniform(FLOAT32, quire=True)
    assert not f.quire("forward") and f.all_float
    g = StagePrecisions.build("8:2", backward="10:2")
    assert g.gradient == PositConfig(10, 2)


def test_mixed_param_copies_track_master():
    rng = np.random.default_rng(0)
    p = MixedParam.from_float64("w", rng.normal(size=(3, 4)), O12L10)
    assert p.master.dtype == np.uint64
    assert np.array_equal(p.copy("forward"), K.convert(p.master, P12, P8))
    new = a_from_float64(rng.normal(size=(3, 4)), P12)
    p.set_master(new)
    assert np.array_equal(p.copy("forward"), K.convert(new, P12, P8))
    assert np.array_equal(p.copy("optimizer"), new)
    with pytest.raises(ValueError):
        p.set_master(np.zeros((4, 3), dtype=np.uint64))


def test_sgd_update_matches_scalar_arithmetic():
    prec = StagePrecisions.build(P8, optimizer=P12, quire=True)
    p = MixedParam.from_float64("w", np.array([0.5, -1.25, 3.0]), prec)
    g = a_from_float64(np.array([0.25, 0.5, -2.0]), P8)
    opt = SGD([p], lr=0.01, momentum=0.9)
    w0 = p.master.copy()
    for step in range(2):
        p.grad = g
        opt.step()
    lr, mom = P.encode_round(Fraction("0.01"), P12), P.encode_round(Fraction("0.9"), P12)
    for i in range(3):
        gi = P.convert(P.PositValue(P8, int(g[i])), P12)
        w = P.PositValue(P12, int(w0[i]))
        w = P.sub(w, P.mul(gi, lr))                  # first step: v = g
        v = P.add(P.mul(gi, mom), gi)
        w = P.sub(w, P.mul(v, lr))
        assert int(p.master[i]) == w.bits


def test_sgd_validation_and_scaling():
    p = MixedParam.from_float64("w", np.zeros(2), StagePrecisions.uniform(FLOAT64))
    with pytest.raises(ValueError):
        SGD([p], lr=0)
    with pytest.raises(ValueError):
        SGD([], lr=0.1)
    g = a_from_float64(np.array([0.75, -3.0]), P8)
    up = scale_gradients(g, 4, P8)
    assert np.array_equal(a_to_float64(up, P8), [12.0, -48.0])
    assert np.array_equal(scale_gradients(up, -4, P8), g)


def test_grad_scaling_is_undone_by_optimizer():
    prec = StagePrecisions.uniform(FLOAT64)
    a = MixedParam.from_float64("w", np.array([1.0, 2.0]), prec)
    b = MixedParam.from_float64("w", np.array([1.0, 2.0]), prec)
    a.grad = np.array([0.5, 0.25])
    b.grad = np.array([8.0, 4.0])
    SGD([a], 0.1).step()
    SGD([b], 0.1, grad_scale_log2=4).step()
    assert np.array_equal(a.master, b.master)


def test_lenet5_shape_and_parameter_count():
    m = build_lenet5(StagePrecisions.uniform(FLOAT32))
    assert m.num_parameters() == 61706
    out = m(np.zeros((2, 1, 28, 28), dtype=np.float32))
    assert out.shape == (2, 10)
    assert m.layers[0].need_input_grad is False


def test_cifarnet_forward_shape():
    m = build_cifarnet(StagePrecisions.uniform(FLOAT32))
    assert m(np.zeros((1, 3, 32, 32), dtype=np.float32)).shape == (1, 10)


def test_same_seed_same_init():
    a = build_lenet5(O12L10, seed=3)
    b = build_lenet5(O12L10, seed=3)
    c = build_lenet5(O12L10, seed=4)
    assert all(np.array_equal(p.master, q.master) for p, q in zip(a.params(), b.params()))
    assert not np.array_equal(a.params()[0].master, c.params()[0].master)


def test_posit_training_step_keeps_formats():
    m = build_lenet5(O12L10, seed=0)
    loss = CrossEntropy(O12L10)
    x = a_from_float64(np.random.default_rng(0).normal(size=(4, 1, 28, 28)), P8)
    logits = m(x)
    assert logits.dtype == np.uint64
    out = loss.forward(logits, np.array([1, 2, 3, 4]))
    assert 0 < float(a_to_float64(out, P10)) < 10
    m.backward(loss.backward())
    for p in m.params():
        assert p.grad is not None and p.grad.shape == p.shape
    before = [p.master.copy() for p in m.params()]
    SGD(m.params(), 0.01, 0.9).step()
    assert any(not np.array_equal(b, p.master) for b, p in zip(before, m.params()))
    for p in m.params():
        assert np.array_equal(p.copy("forward"), K.convert(p.master, P12, P8))


def test_backward_before_forward_raises():
    layer = Linear(3, 2)
    layer.bind(StagePrecisions.uniform(FLOAT64))
    layer.init_params(np.random.default_rng(0), "")
    with pytest.raises(RuntimeError):
        layer.backward(np.zeros((1, 2)))


def test_dropout_eval_is_identity_and_batchnorm_uses_running_stats():
    prec = StagePrecisions.uniform(FLOAT64)
    d = Dropout(0.5, seed=1)
    d.bind(prec)
    x = np.random.default_rng(0).normal(size=(4, 6))
    d.training = False
    assert np.array_equal(d.forward(x), x)
    bn = BatchNorm(2)
    bn.bind(prec)
    bn.init_params(np.random.default_rng(0), "")
    xb = np.random.default_rng(1).normal(3.0, 2.0, size=(16, 2, 3, 3))
    for _ in range(60):
        bn.forward(xb)
    bn.training = False
    y = bn.forward(xb)
    assert abs(y.mean()) < 0.1 and abs(y.std() - 1) < 0.1


def test_mse_loss_value():
    prec = StagePrecisions.uniform(FLOAT64)
    mse = MSELoss(prec)
    assert float(mse.forward(np.array([[1.0, 2.0]]), np.array([[0.0, 0.0]]))) == 2.5


def test_cross_entropy_rejects_bad_targets():
    ce = CrossEntropy(StagePrecisions.uniform(FLOAT64))
    with pytest.raises(ValueError):
        ce.forward(np.zeros((2, 3)), np.array([0, 5]))


def test_checkpoint_round_trip(tmp_path):
    m = build_lenet5(O12L10, seed=1)
    path = tmp_path / "m.pnn"
    save_model(m, path)
    m2 = load_model(build_lenet5(O12L10, seed=2), path)
    for (n1, p1), (n2, p2) in zip(m.named_params(), m2.named_params()):
        assert n1 == n2 and np.array_equal(p1.master, p2.master)
        assert np.array_equal(p1.copy("forward"), p2.copy("forward"))
    assert path.read_bytes() == ckpt.dumps(m2)


def test_checkpoint_float_and_batchnorm_buffers(tmp_path):
    prec = StagePrecisions.uniform(FLOAT32)
    m = build_cifarnet(prec, batchnorm=True, seed=0)
    m(np.random.default_rng(0).normal(size=(2, 3, 32, 32)).astype(np.float32))
    path = tmp_path / "c.pnn"
    save_model(m, path)
    m2 = load_model(build_cifarnet(prec, batchnorm=True, seed=5), path)
    for (_, a), (_, b) in zip(m.named_buffers(), m2.named_buffers()):
        assert np.array_equal(a, b)


def test_checkpoint_errors(tmp_path):
    m = build_lenet5(O12L10)
    path = tmp_path / "m.pnn"
    save_model(m, path)
    with pytest.raises(CheckpointError):
        load_model(build_lenet5(StagePrecisions.uniform(FLOAT32)), path)
    m32 = load_model(build_lenet5(StagePrecisions.uniform(FLOAT32)), path, convert=True)
    w = m32.params()[0].master
    assert np.array_equal(w, a_convert(m.params()[0].master, P12, FLOAT32))
    raw = path.read_bytes()
    (tmp_path / "t.pnn").write_bytes(raw[:-3])
    with pytest.raises(CheckpointError):
        load_model(build_lenet5(O12L10), tmp_path / "t.pnn")
    (tmp_path / "b.pnn").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(CheckpointError):
        load_model(build_lenet5(O12L10), tmp_path / "b.pnn")
    with pytest.raises(CheckpointError):
        load_model(build_cifarnet(O12L10), path)


def test_checkpoint_record_encoding():
    buf = io.BytesIO()
    vals = np.array([[1, 2, 3], [4, 5, 0xFFF]], dtype=np.uint64)
    ckpt.write_records(buf, [("x", P12, vals)])
    raw = buf.getvalue()
    assert raw[:4] == b"PNN1"
    # name length, name, nbits, es, rank, two extents, 6 elements x 2 bytes
    assert len(raw) == 4 + 4 + 1 + 3 + 8 + 12
    buf.seek(0)
    [(name, kind, back)] = ckpt.read_records(buf)
    assert name == "x" and kind == P12 and np.array_equal(back, vals)


def test_conv_layer_posit_forward_matches_tensor_op():
    prec = StagePrecisions.uniform(P8, quire=True)
    conv = Conv2d(1, 2, 3, padding=1)
    conv.bind(prec)
    conv.init_params(np.random.default_rng(0), "")
    relu = ReLU()
    relu.bind(prec)
    x = a_from_float64(np.random.default_rng(1).normal(size=(1, 1, 4, 4)), P8)
    y = relu.forward(conv.forward(x))
    vals = a_to_float64(y, P8)
    assert vals.shape == (1, 2, 4, 4) and (vals >= 0).all()
