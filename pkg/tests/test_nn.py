"""Network primitive tests: reference ops, tape gradients, AdamW, checkpoints."""

import math

import numpy as np
import pytest

from gfsense.errors import (
    DataError,
    ShapeError,
    TapeError,
    TrainingDivergenceError,
)
from gfsense.nn import (
    AdamW,
    GradTape,
    LayerNormParams,
    LstmCellParams,
    backward,
    bilstm_forward,
    gated_fuse,
    init_lstm_params,
    layer_norm,
    load_checkpoint,
    lstm_cell_step,
    save_checkpoint,
    softmax_cross_entropy,
)
from gfsense.nn import autodiff as ad
from gfsense.rng import SplitMix64


def scalar_sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v))


def scalar_lstm_step(p, x, h_prev, c_prev):
    """Direct per-element transcription of the recurrence (oracle)."""
    h = p.hidden
    h_t, c_t = [], []
    for j in range(h):
        ai = sum(p.wx[j, m] * x[m] for m in range(len(x)))
        af = sum(p.wx[h + j, m] * x[m] for m in range(len(x)))
        ag = sum(p.wx[2 * h + j, m] * x[m] for m in range(len(x)))
        ao = sum(p.wx[3 * h + j, m] * x[m] for m in range(len(x)))
        for m in range(h):
            ai += p.wh[j, m] * h_prev[m]
            af += p.wh[h + j, m] * h_prev[m]
            ag += p.wh[2 * h + j, m] * h_prev[m]
            ao += p.wh[3 * h + j, m] * h_prev[m]
        i = scalar_sigmoid(ai + p.b[j])
        f = scalar_sigmoid(af + p.b[h + j])
        g = math.tanh(ag + p.b[2 * h + j])
        o = scalar_sigmoid(ao + p.b[3 * h + j])
        c = f * c_prev[j] + i * g
        h_t.append(o * math.tanh(c))
        c_t.append(c)
    return np.array(h_t), np.array(c_t)


def random_cell(seed, d, h):
    rng = SplitMix64(seed)
    return LstmCellParams(
        rng.uniform(size=(4 * h, d), low=-0.5, high=0.5),
        rng.uniform(size=(4 * h, h), low=-0.5, high=0.5),
        rng.uniform(size=(4 * h,), low=-0.5, high=0.5),
    )


class TestLstmCell:
    def test_zero_params_zero_state(self):
        p = LstmCellParams(np.zeros((8, 3)), np.zeros((8, 2)), np.zeros(8))
        h, c = lstm_cell_step(p, np.ones(3), np.zeros(2), np.zeros(2))
        np.testing.assert_array_equal(h, 0.0)
        np.testing.assert_array_equal(c, 0.0)

    def test_zero_params_carry_cell(self):
        p = LstmCellParams(np.zeros((8, 3)), np.zeros((8, 2)), np.zeros(8))
        c_prev = np.array([0.4, -1.2])
        h, c = lstm_cell_step(p, np.zeros(3), np.zeros(2), c_prev)
        np.testing.assert_allclose(c, 0.5 * c_prev, atol=1e-15)
        np.testing.assert_allclose(h, 0.5 * np.tanh(0.5 * c_prev), atol=1e-15)

    def test_matches_scalar_transcription(self):
        p = random_cell(99, d=3, h=2)
        rng = SplitMix64(5)
        x = rng.uniform(size=3, low=-1, high=1)
        h_prev = rng.uniform(size=2, low=-1, high=1)
        c_prev = rng.uniform(size=2, low=-1, high=1)
        h, c = lstm_cell_step(p, x, h_prev, c_prev)
        h_ref, c_ref = scalar_lstm_step(p, x, h_prev, c_prev)
        np.testing.assert_allclose(h, h_ref, atol=1e-12)
        np.testing.assert_allclose(c, c_ref, atol=1e-12)

    def test_shape_mismatch(self):
        p = random_cell(1, d=3, h=2)
        with pytest.raises(ShapeError):
            lstm_cell_step(p, np.zeros(4), np.zeros(2), np.zeros(2))

    def test_forget_bias_init(self):
        p = init_lstm_params(3, 4, SplitMix64(0))
        np.testing.assert_array_equal(p.b[4:8], 1.0)
        np.testing.assert_array_equal(p.b[:4], 0.0)
        np.testing.assert_array_equal(p.b[8:], 0.0)
        assert np.abs(p.wx).max() <= 0.5  # 1/sqrt(4)


class TestBiLstm:
    def test_length_one(self):
        fwd, bwd = random_cell(1, 3, 2), random_cell(2, 3, 2)
        x = SplitMix64(3).uniform(size=(1, 3), low=-1, high=1)
        out = bilstm_forward(fwd, bwd, x)
        hf, _ = lstm_cell_step(fwd, x[0], np.zeros(2), np.zeros(2))
        hb, _ = lstm_cell_step(bwd, x[0], np.zeros(2), np.zeros(2))
        np.testing.assert_allclose(out[0], np.concatenate([hf, hb]), atol=1e-12)

    def test_palindrome_symmetry(self):
        p = random_cell(7, 2, 3)
        x = np.array([[0.3, -0.1], [0.9, 0.2], [0.3, -0.1]])
        out = bilstm_forward(p, p, x)
        t_len = x.shape[0]
        for t in range(t_len):
            np.testing.assert_allclose(
                out[t, :3], out[t_len - 1 - t, 3:], atol=1e-12
            )

    def test_matches_two_unidirectional_passes(self):
        fwd, bwd = random_cell(11, 3, 2), random_cell(12, 3, 2)
        x = SplitMix64(13).uniform(size=(4, 3), low=-1, high=1)
        out = bilstm_forward(fwd, bwd, x)

        hs, cs = np.zeros(2), np.zeros(2)
        for t in range(4):
            hs, cs = lstm_cell_step(fwd, x[t], hs, cs)
            np.testing.assert_allclose(out[t, :2], hs, atol=1e-12)
        hs, cs = np.zeros(2), np.zeros(2)
        for t in range(3, -1, -1):
            hs, cs = lstm_cell_step(bwd, x[t], hs, cs)
            np.testing.assert_allclose(out[t, 2:], hs, atol=1e-12)

    def test_empty_sequence(self):
        p = random_cell(1, 3, 2)
        with pytest.raises(DataError):
            bilstm_forward(p, p, np.zeros((0, 3)))


class TestLayerNorm:
    def test_constant_input(self):
        p = LayerNormParams(np.ones(4), np.zeros(4))
        out = layer_norm(p, np.full(4, 3.3))
        assert np.max(np.abs(out)) < 1e-9

    def test_three_point_values(self):
        p = LayerNormParams(np.ones(3), np.zeros(3), epsilon=1e-12)
        out = layer_norm(p, np.array([1.0, 2.0, 3.0]))
        np.testing.assert_allclose(out, [-1.22474, 0.0, 1.22474], atol=1e-4)

    def test_zero_gamma_gives_beta(self):
        beta = np.array([0.5, -0.5, 1.0])
        p = LayerNormParams(np.zeros(3), beta)
        out = layer_norm(p, np.array([9.0, -3.0, 4.4]))
        np.testing.assert_array_equal(out, beta)

    def test_statistics_property(self):
        rng = SplitMix64(31)
        for _ in range(10):
            x = rng.normal(size=16, std=4.0)
            p = LayerNormParams(np.ones(16), np.zeros(16))
            out = layer_norm(p, x)
            assert abs(out.mean()) < 1e-6
            assert abs(np.mean(out**2) - 1.0) < 1e-4


class TestGatedFuse:
    def test_zero_gate_params_average(self):
        ua, up = np.array([1.0, 3.0]), np.array([2.0, -1.0])
        z, g = gated_fuse(np.zeros((2, 4)), np.zeros(2), ua, up)
        np.testing.assert_allclose(g, 0.5)
        np.testing.assert_allclose(z, (ua + up) / 2)

    def test_equal_streams(self):
        rng = SplitMix64(2)
        ua = rng.normal(size=3)
        wg = rng.normal(size=(3, 6))
        z, _ = gated_fuse(wg, rng.normal(size=3), ua, ua.copy())
        np.testing.assert_allclose(z, ua, atol=1e-12)

    def test_saturated_gate(self):
        ua, up = np.array([1.0, -2.0]), np.array([5.0, 5.0])
        z, g = gated_fuse(np.zeros((2, 4)), np.full(2, 30.0), ua, up)
        assert np.max(np.abs(z - ua)) < 1e-9

    def test_convexity_and_range(self):
        rng = SplitMix64(77)
        for _ in range(25):
            h = 4
            ua, up = rng.normal(size=h), rng.normal(size=h)
            wg = rng.normal(size=(h, 2 * h))
            z, g = gated_fuse(wg, rng.normal(size=h), ua, up)
            assert (g > 0).all() and (g < 1).all()
            lo, hi = np.minimum(ua, up), np.maximum(ua, up)
            assert (z >= lo - 1e-12).all() and (z <= hi + 1e-12).all()


class TestSoftmaxCrossEntropy:
    def test_uniform(self):
        loss, p = softmax_cross_entropy(np.zeros(2), 0)
        assert loss == pytest.approx(math.log(2), abs=1e-12)
        np.testing.assert_allclose(p, [0.5, 0.5])

    def test_confident_correct(self):
        loss, _ = softmax_cross_entropy(np.array([10.0, -10.0]), 0)
        assert loss < 1e-8

    def test_shift_invariance(self):
        logits = np.array([0.3, -1.2, 2.0])
        l0, p0 = softmax_cross_entropy(logits, 2)
        l1, p1 = softmax_cross_entropy(logits + 123.4, 2)
        assert l0 == pytest.approx(l1, abs=1e-9)
        np.testing.assert_allclose(p0, p1, atol=1e-12)
        assert p0.sum() == pytest.approx(1.0, abs=1e-6)

    def test_label_out_of_range(self):
        with pytest.raises(DataError):
            softmax_cross_entropy(np.zeros(3), 3)


def numeric_grad(fn, arr, step=1e-6):
    """Central finite differences of scalar fn w.r.t. an array, in place."""
    g = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = g.reshape(-1)
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + step
        hi = fn()
        flat[idx] = orig - step
        lo = fn()
        flat[idx] = orig
        gflat[idx] = (hi - lo) / (2 * step)
    return g


def max_rel_err(a, b):
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return np.max(np.abs(a - b) / denom)


class TestTapeGradients:
    def test_sum_of_parameters_gives_ones(self):
        tape = GradTape()
        w = tape.watch(np.arange(6.0).reshape(2, 3), "w")
        loss = ad.sum_all(w)
        grads = backward(tape, loss)
        np.testing.assert_array_equal(grads["w"], np.ones((2, 3)))

    def test_unused_parameter_gets_zeros(self):
        tape = GradTape()
        w = tape.watch(np.ones(3), "w")
        unused = tape.watch(np.ones(4), "unused")
        grads = backward(tape, ad.sum_all(w))
        np.testing.assert_array_equal(grads["unused"], np.zeros(4))

    def test_consumed_tape_raises(self):
        tape = GradTape()
        w = tape.watch(np.ones(3), "w")
        loss = ad.sum_all(w)
        backward(tape, loss)
        with pytest.raises(TapeError):
            backward(tape, loss)

    @pytest.mark.parametrize("op_name", ["sigmoid", "tanh", "relu"])
    def test_elementwise_ops(self, op_name):
        rng = SplitMix64(hash(op_name) & 0xFFFF)
        x0 = rng.normal(size=(3, 4)) + 0.01  # keep relu off its kink
        tape = GradTape()
        x = tape.watch(x0.copy(), "x")
        loss = ad.sum_all(ad.mul(getattr(ad, op_name)(x), tape.const(x0 * 0 + 0.7)))
        grads = backward(tape, loss)

        def f():
            tape2 = GradTape()
            xx = tape2.watch(x0, "x")
            return float(
                ad.sum_all(ad.mul(getattr(ad, op_name)(xx), tape2.const(x0 * 0 + 0.7))).value
            )

        num = numeric_grad(f, x0)
        assert max_rel_err(grads["x"], num) < 1e-4

    def test_affine_layer_norm_and_loss(self):
        rng = SplitMix64(404)
        x0 = rng.normal(size=(2, 5, 3))
        w0 = rng.normal(size=(4, 3), std=0.5)
        b0 = rng.normal(size=4, std=0.1)
        gamma0 = rng.uniform(size=3, low=0.5, high=1.5)
        beta0 = rng.normal(size=3, std=0.2)
        labels = np.array([1, 3])
        arrays = {"w": w0, "b": b0, "gamma": gamma0, "beta": beta0, "x": x0}

        def run(record=True):
            tape = GradTape()
            x = tape.watch(arrays["x"], "x")
            gam = tape.watch(arrays["gamma"], "gamma")
            bet = tape.watch(arrays["beta"], "beta")
            w = tape.watch(arrays["w"], "w")
            b = tape.watch(arrays["b"], "b")
            y = ad.layer_norm(x, gam, bet, eps=1e-5)
            y = ad.affine(y, w, b)
            y = ad.mean_over_time(y)
            loss, _ = ad.softmax_cross_entropy_mean(y, labels)
            return tape, loss

        tape, loss = run()
        grads = backward(tape, loss)
        for name, arr in arrays.items():
            num = numeric_grad(lambda: float(run()[1].value), arr)
            assert max_rel_err(grads[name], num) < 1e-4, name

    @pytest.mark.parametrize("reverse", [False, True])
    def test_lstm_op_gradients(self, reverse):
        rng = SplitMix64(1234 + reverse)
        bsz, t_len, d, h = 2, 5, 3, 2
        arrays = {
            "x": rng.normal(size=(bsz, t_len, d), std=0.8),
            "wx": rng.uniform(size=(4 * h, d), low=-0.5, high=0.5),
            "wh": rng.uniform(size=(4 * h, h), low=-0.5, high=0.5),
            "b": rng.normal(size=4 * h, std=0.3),
        }
        coeff = rng.normal(size=(bsz, t_len, h))

        def run():
            tape = GradTape()
            leaves = {k: tape.watch(v, k) for k, v in arrays.items()}
            out = ad.lstm(
                leaves["x"], leaves["wx"], leaves["wh"], leaves["b"],
                reverse=reverse,
            )
            return tape, ad.sum_all(ad.mul(out, tape.const(coeff)))

        tape, loss = run()
        grads = backward(tape, loss)
        for name, arr in arrays.items():
            num = numeric_grad(lambda: float(run()[1].value), arr)
            assert max_rel_err(grads[name], num) < 1e-4, name

    def test_lstm_op_matches_cell_reference(self):
        p = random_cell(50, d=3, h=2)
        x = SplitMix64(51).normal(size=(1, 6, 3))
        out = ad.lstm(
            ad.Var(x), ad.Var(p.wx), ad.Var(p.wh), ad.Var(p.b)
        ).value[0]
        hs, cs = np.zeros(2), np.zeros(2)
        for t in range(6):
            hs, cs = lstm_cell_step(p, x[0, t], hs, cs)
            np.testing.assert_allclose(out[t], hs, atol=1e-12)

    def test_bilstm_op_matches_reference(self):
        fwd, bwd = random_cell(60, 3, 2), random_cell(61, 3, 2)
        x = SplitMix64(62).normal(size=(1, 4, 3))
        got = ad.bilstm(
            ad.Var(x),
            (ad.Var(fwd.wx), ad.Var(fwd.wh), ad.Var(fwd.b)),
            (ad.Var(bwd.wx), ad.Var(bwd.wh), ad.Var(bwd.b)),
        ).value[0]
        ref = bilstm_forward(fwd, bwd, x[0])
        np.testing.assert_allclose(got, ref, atol=1e-12)


class TestAdamW:
    def test_first_step_without_decay(self):
        params = {"t": np.array([1.0])}
        opt = AdamW(lr=0.1, weight_decay=0.0)
        opt.step(params, {"t": np.array([1.0])})
        assert params["t"][0] == pytest.approx(0.9, abs=1e-6)

    def test_zero_gradient_is_a_fixed_point(self):
        params = {"t": np.array([1.0])}
        opt = AdamW(lr=0.1, weight_decay=0.0)
        opt.step(params, {"t": np.array([0.0])})
        assert params["t"][0] == 1.0
        assert np.all(opt._m["t"] == 0.0)
        assert np.all(opt._v["t"] == 0.0)

    def test_first_step_with_decay(self):
        params = {"t": np.array([1.0])}
        opt = AdamW(lr=0.1, weight_decay=2e-5)
        opt.step(params, {"t": np.array([1.0])})
        assert params["t"][0] == pytest.approx(0.899998, abs=1e-6)

    def test_nonfinite_gradient_names_parameter(self):
        opt = AdamW(lr=0.1)
        with pytest.raises(TrainingDivergenceError, match="bad_param"):
            opt.step({"bad_param": np.ones(2)}, {"bad_param": np.array([1.0, np.nan])})


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        rng = SplitMix64(8)
        tensors = {
            "b.weight": rng.normal(size=(3, 4)).astype(np.float32).astype(np.float64),
            "a.bias": rng.normal(size=5).astype(np.float32).astype(np.float64),
        }
        path = tmp_path / "model.gfbw"
        save_checkpoint(path, tensors)
        back = load_checkpoint(path)
        assert set(back) == set(tensors)
        for k in tensors:
            np.testing.assert_array_equal(back[k], tensors[k])

    def test_deterministic_bytes_regardless_of_insert_order(self, tmp_path):
        a = {"x": np.ones(2), "y": np.zeros(3)}
        b = {"y": np.zeros(3), "x": np.ones(2)}
        p1, p2 = tmp_path / "1.gfbw", tmp_path / "2.gfbw"
        save_checkpoint(p1, a)
        save_checkpoint(p2, b)
        assert p1.read_bytes() == p2.read_bytes()

    def test_truncation_detected(self, tmp_path):
        path = tmp_path / "m.gfbw"
        save_checkpoint(path, {"x": np.ones(4)})
        blob = path.read_bytes()
        path.write_bytes(blob[:-2])
        from gfsense.errors import CorruptFileError

        with pytest.raises(CorruptFileError):
            load_checkpoint(path)
