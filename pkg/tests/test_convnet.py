import numpy as np
import pytest

from cadet.convnet import (
    ConvLayerSpec,
    LocalLayerSpec,
    NetworkParams,
    NetworkSpec,
    TrainSchedule,
    first_layer_kernels,
    forward,
    init_params,
    kernels_to_ascii,
    load_checkpoint,
    loss_and_gradients,
    predict,
    predict_batch,
    save_checkpoint,
    train,
)
from cadet.errors import InvalidArgumentError, TrainingDivergedError
from cadet.seeding import rng_for

TINY = NetworkSpec(
    input_spatial=(8, 8),
    input_channels=3,
    conv=(ConvLayerSpec(4, 3, 1, 1),),
    pool=(3, 2),
    locally_connected=(LocalLayerSpec(4, 3),),
    fully_connected=(16,),
    dropconnect_rate=0.5,
    sigma_init=0.3,
    dtype="float64",
)


def conv_oracle(x, w, b, stride, pad):
    """Naive direct convolution: explicit loops over every output element."""
    n, c_in, h, w_in = x.shape
    f, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w_in + 2 * pad - kw) // stride + 1
    out = np.zeros((n, f, oh, ow))
    for bi in range(n):
        for fi in range(f):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for ci in range(c_in):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[bi, ci, i * stride + u, j * stride + v] * w[fi, ci, u, v]
                    out[bi, fi, i, j] = acc + b[fi]
    return out


def pool_oracle(x, window, stride):
    n, c, h, w = x.shape
    oh = (h - window) // stride + 1
    ow = (w - window) // stride + 1
    out = np.zeros((n, c, oh, ow))
    for bi in range(n):
        for ci in range(c):
            for i in range(oh):
                for j in range(ow):
                    out[bi, ci, i, j] = x[bi, ci, i * stride : i * stride + window, j * stride : j * stride + window].max()
    return out


def _zero_params(spec):
    p = init_params(spec, seed=0)
    for k in p.tensors:
        p.tensors[k] = np.zeros_like(p.tensors[k])
    return p


def relative_errors(params, x, y, eps=1e-4, weight_decay=0.0, rng_key=99):
    """Central finite differences vs analytic gradients, fixed DropConnect masks."""

    def loss_fn():
        loss, _ = loss_and_gradients(
            params, x, y, train_mode=True, rng=rng_for(rng_key, "gc"), weight_decay=weight_decay
        )
        return loss

    _, grads = loss_and_gradients(
        params, x, y, train_mode=True, rng=rng_for(rng_key, "gc"), weight_decay=weight_decay
    )
    worst = 0.0
    for name, tensor in params.tensors.items():
        flat = tensor.reshape(-1)
        gflat = grads[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_fn()
            flat[i] = orig - eps
            down = loss_fn()
            flat[i] = orig
            numeric = (up - down) / (2 * eps)
            denom = max(abs(numeric), abs(gflat[i]), 1e-6)
            worst = max(worst, abs(numeric - gflat[i]) / denom)
    return worst


class TestSpecValidation:
    def test_shape_chain_is_computed(self):
        shapes = [layer["out"] for layer in TINY.layer_plan]
        assert shapes == [(4, 8, 8), (4, 3, 3), (4, 1, 1), (4,), (16,), (2,)]

    def test_rejects_collapsing_chain(self):
        with pytest.raises(InvalidArgumentError):
            NetworkSpec(input_spatial=(6, 6), input_channels=1, conv=(ConvLayerSpec(2, 3),), pool=(3, 2), locally_connected=(LocalLayerSpec(2, 5),), fully_connected=())

    def test_rejects_bad_dropconnect(self):
        with pytest.raises(InvalidArgumentError):
            NetworkSpec(dropconnect_rate=1.0)

    def test_round_trips_through_dict(self):
        assert NetworkSpec.from_dict(TINY.to_dict()) == TINY


class TestInit:
    def test_same_seed_identical(self):
        a, b = init_params(TINY, 5), init_params(TINY, 5)
        for k in a.tensors:
            np.testing.assert_array_equal(a.tensors[k], b.tensors[k])

    def test_zero_sigma_gives_zero_weights(self):
        spec = NetworkSpec.from_dict({**TINY.to_dict(), "sigma_init": 0.0})
        p = init_params(spec, 1)
        assert all(np.all(t == 0) for t in p.tensors.values())

    def test_empirical_stddev_matches_sigma(self):
        spec = NetworkSpec(
            input_spatial=(8, 8),
            input_channels=1,
            conv=(),
            pool=None,
            locally_connected=(),
            fully_connected=(200,),
            sigma_init=0.05,
        )
        p = init_params(spec, 3)
        w = p.tensors["fc0_w"]  # 64 x 200 = 12800 elements
        assert w.size >= 10_000
        assert abs(w.std() - 0.05) / 0.05 < 0.05

    def test_biases_are_zero(self):
        p = init_params(TINY, 7)
        assert all(np.all(p.tensors[k] == 0) for k in p.tensors if k.endswith("_b"))


class TestForward:
    def test_rows_are_distributions(self):
        p = init_params(TINY, 2)
        x = rng_for(0, "x").uniform(-1, 1, size=(9, 3, 8, 8))
        probs = forward(p, x)
        assert probs.shape == (9, 2)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)
        assert np.all(probs >= 0) and np.all(probs <= 1)

    def test_zero_params_give_uniform(self):
        p = _zero_params(TINY)
        x = rng_for(1, "x").uniform(-1, 1, size=(4, 3, 8, 8))
        np.testing.assert_allclose(forward(p, x), 0.5, atol=1e-12)

    def test_shape_mismatch_rejected(self):
        p = init_params(TINY, 2)
        with pytest.raises(InvalidArgumentError):
            forward(p, np.zeros((2, 3, 9, 9)))

    def test_conv_forward_matches_triple_loop_oracle(self):
        rng = rng_for(4, "oracle")
        for stride, pad in [(1, 0), (1, 2), (2, 1)]:
            spec = NetworkSpec(
                input_spatial=(6, 6),
                input_channels=2,
                conv=(ConvLayerSpec(3, 3, stride, pad),),
                pool=None,
                locally_connected=(),
                fully_connected=(),
                dropconnect_rate=0.0,
                dtype="float64",
            )
            p = init_params(spec, 8)
            x = rng.uniform(-1, 1, size=(2, 2, 6, 6))
            from cadet.convnet import _conv_forward

            out, _ = _conv_forward(x, p.tensors["conv0_w"], p.tensors["conv0_b"], stride, pad)
            expected = conv_oracle(x, p.tensors["conv0_w"], p.tensors["conv0_b"], stride, pad)
            np.testing.assert_allclose(out, expected, atol=1e-6)

    def test_maxpool_matches_window_oracle_exactly(self):
        from cadet.convnet import _pool_forward

        rng = rng_for(5, "pool")
        x = rng.uniform(-1, 1, size=(3, 4, 9, 9))
        out, _ = _pool_forward(x, 3, 2)
        np.testing.assert_array_equal(out, pool_oracle(x, 3, 2))

    def test_locally_connected_with_tied_weights_equals_conv(self):
        from cadet.convnet import _conv_forward, _local_forward

        rng = rng_for(6, "lc")
        x = rng.uniform(-1, 1, size=(2, 3, 7, 7))
        kernel_w = rng.uniform(-1, 1, size=(4, 3, 3, 3))
        kernel_b = rng.uniform(-1, 1, size=(4,))
        out_sp = (5, 5)
        lc_w = np.broadcast_to(kernel_w, out_sp + kernel_w.shape).copy()
        lc_b = np.broadcast_to(kernel_b, out_sp + (4,)).copy()
        conv_out, _ = _conv_forward(x, kernel_w, kernel_b, 1, 0)
        lc_out, _ = _local_forward(x, lc_w, lc_b)
        np.testing.assert_allclose(lc_out, conv_out, atol=1e-10)

    def test_dropconnect_rate_zero_train_equals_test(self):
        spec = NetworkSpec.from_dict({**TINY.to_dict(), "dropconnect_rate": 0.0})
        p = init_params(spec, 3)
        x = rng_for(7, "x").uniform(-1, 1, size=(5, 3, 8, 8))
        a = forward(p, x, train_mode=True, rng=rng_for(0, "dc"))
        b = forward(p, x, train_mode=False)
        np.testing.assert_array_equal(a, b)

    def test_volumetric_path_runs_and_normalizes(self):
        spec = NetworkSpec(
            input_spatial=(10, 10, 10),
            input_channels=1,
            conv=(ConvLayerSpec(3, 3),),
            pool=(3, 2),
            locally_connected=(),
            fully_connected=(8,),
            dropconnect_rate=0.2,
        )
        p = init_params(spec, 4)
        x = rng_for(8, "x3").uniform(-1, 1, size=(3, 1, 10, 10, 10))
        probs = forward(p, x)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)


class TestLoss:
    def test_zero_params_loss_is_ln2(self):
        p = _zero_params(TINY)
        x = rng_for(9, "x").uniform(-1, 1, size=(6, 3, 8, 8))
        loss, _ = loss_and_gradients(p, x, [0, 1, 0, 1, 1, 0], rng=rng_for(0, "dc"))
        assert loss == pytest.approx(np.log(2.0), abs=1e-9)

    def test_confident_correct_predictions_drive_loss_to_zero(self):
        spec = NetworkSpec(
            input_spatial=(4, 4),
            input_channels=1,
            conv=(),
            pool=None,
            locally_connected=(),
            fully_connected=(),
            dropconnect_rate=0.0,
            dtype="float64",
        )
        p = init_params(spec, 0)
        p.tensors["out_w"] = np.zeros((16, 2))
        p.tensors["out_w"][0] = [-50.0, 50.0]  # first pixel decides, emphatically
        x = np.zeros((2, 1, 4, 4))
        x[0, 0, 0, 0] = 1.0
        x[1, 0, 0, 0] = -1.0
        loss, _ = loss_and_gradients(p, x, [1, 0], train_mode=False, weight_decay=0.0)
        assert loss < 1e-9

    def test_label_validation(self):
        p = init_params(TINY, 1)
        x = np.zeros((2, 3, 8, 8))
        with pytest.raises(InvalidArgumentError):
            loss_and_gradients(p, x, [0, 2], rng=rng_for(0, "dc"))


class TestGradients:
    def _check(self, spec, batch=3, wd=0.0, seed=11):
        p = init_params(spec, seed)
        rng = rng_for(seed, "data")
        # evaluate at a generic point: zero biases with DropConnect can park a
        # preactivation exactly on the ReLU kink, where finite differences are
        # meaningless
        for name in p.tensors:
            if name.endswith("_b"):
                p.tensors[name] = rng.normal(0.0, 0.1, size=p.tensors[name].shape)
        x = rng.uniform(-1, 1, size=(batch, *spec.input_shape))
        y = rng.integers(0, 2, size=batch)
        return relative_errors(p, x, y, weight_decay=wd)

    def test_dense_and_dropconnect(self):
        spec = NetworkSpec(
            input_spatial=(4, 4),
            input_channels=1,
            conv=(),
            pool=None,
            locally_connected=(),
            fully_connected=(8, 5),
            dropconnect_rate=0.4,
            sigma_init=0.5,
            dtype="float64",
        )
        assert self._check(spec) < 1e-4

    def test_conv_pool_stack(self):
        spec = NetworkSpec(
            input_spatial=(8, 8),
            input_channels=2,
            conv=(ConvLayerSpec(3, 3, 1, 1), ConvLayerSpec(2, 3, 1, 1)),
            pool=(3, 2),
            locally_connected=(),
            fully_connected=(),
            dropconnect_rate=0.0,
            sigma_init=0.4,
            dtype="float64",
        )
        assert self._check(spec) < 1e-4

    def test_strided_padded_conv(self):
        spec = NetworkSpec(
            input_spatial=(7, 7),
            input_channels=1,
            conv=(ConvLayerSpec(3, 3, 2, 1),),
            pool=None,
            locally_connected=(),
            fully_connected=(4,),
            dropconnect_rate=0.3,
            sigma_init=0.4,
            dtype="float64",
        )
        assert self._check(spec) < 1e-4

    def test_locally_connected(self):
        spec = NetworkSpec(
            input_spatial=(6, 6),
            input_channels=2,
            conv=(),
            pool=None,
            locally_connected=(LocalLayerSpec(3, 3), LocalLayerSpec(2, 2)),
            fully_connected=(),
            dropconnect_rate=0.0,
            sigma_init=0.4,
            dtype="float64",
        )
        assert self._check(spec) < 1e-4

    def test_full_tiny_stack_with_weight_decay(self):
        assert self._check(TINY, wd=1e-3) < 1e-4

    def test_volumetric_layers(self):
        spec = NetworkSpec(
            input_spatial=(6, 6, 6),
            input_channels=1,
            conv=(ConvLayerSpec(2, 3),),
            pool=(2, 2),
            locally_connected=(LocalLayerSpec(2, 2),),
            fully_connected=(4,),
            dropconnect_rate=0.25,
            sigma_init=0.4,
            dtype="float64",
        )
        assert self._check(spec, batch=2) < 1e-4


class TestTraining:
    def _toy(self, n=32):
        # linearly separable: class 1 has a bright center block
        rng = rng_for(0, "toy")
        x = rng.uniform(0.0, 0.2, size=(n, 1, 8, 8))
        y = np.array([i % 2 for i in range(n)])
        x[y == 1, 0, 3:5, 3:5] += 0.8
        x -= x.mean(axis=0, keepdims=True)
        return x, y

    def _toy_spec(self, **over):
        base = dict(
            input_spatial=(8, 8),
            input_channels=1,
            conv=(ConvLayerSpec(4, 3, 1, 1),),
            pool=(3, 2),
            locally_connected=(),
            fully_connected=(8,),
            dropconnect_rate=0.0,
            sigma_init=0.05,
            dtype="float64",
        )
        base.update(over)
        return NetworkSpec(**base)

    def test_overfits_separable_toy_set(self):
        x, y = self._toy()
        spec = self._toy_spec()
        schedule = TrainSchedule(phases=((200, 8),), learning_rate=0.05, momentum=0.9, weight_decay=0.0, seed=1)
        params, trace = train(init_params(spec, 1), x, y, schedule)
        assert all(np.isfinite(trace))
        preds = (predict_batch(params, x) > 0.5).astype(int)
        assert np.array_equal(preds, y)

    def test_zero_learning_rate_leaves_params(self):
        x, y = self._toy(8)
        spec = self._toy_spec()
        p0 = init_params(spec, 2)
        schedule = TrainSchedule(phases=((3, 4),), learning_rate=0.0, weight_decay=0.0, seed=0)
        p1, _ = train(p0, x, y, schedule)
        for k in p0.tensors:
            np.testing.assert_array_equal(p0.tensors[k], p1.tensors[k])

    def test_training_is_bit_deterministic(self):
        x, y = self._toy(16)
        spec = self._toy_spec(dropconnect_rate=0.3)
        schedule = TrainSchedule(phases=((5, 4), (3, 8)), learning_rate=0.01, seed=7)
        a, ta = train(init_params(spec, 3), x, y, schedule)
        b, tb = train(init_params(spec, 3), x, y, schedule)
        assert ta == tb
        for k in a.tensors:
            np.testing.assert_array_equal(a.tensors[k], b.tensors[k])

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_raises_with_epoch(self):
        x, y = self._toy(16)
        spec = self._toy_spec(sigma_init=1e3, dtype="float32")
        schedule = TrainSchedule(phases=((20, 4),), learning_rate=1e8, weight_decay=0.0, seed=0)
        with pytest.raises(TrainingDivergedError, match="epoch"):
            train(init_params(spec, 1), x.astype(np.float32), y, schedule)

    def test_phase_lr_scaling_accepted(self):
        x, y = self._toy(8)
        schedule = TrainSchedule(phases=((2, 4), (2, 4)), learning_rate=0.01, lr_phase_scale=(1.0, 0.1), seed=0)
        _, trace = train(init_params(self._toy_spec(), 0), x, y, schedule)
        assert len(trace) == 4


class TestPredictAndCheckpoint:
    def test_predict_equals_forward_row(self):
        p = init_params(TINY, 1)
        x = rng_for(2, "pp").uniform(-1, 1, size=(1, 3, 8, 8))
        assert predict(p, x[0]) == pytest.approx(forward(p, x)[0, 1], abs=1e-12)
        assert 0.0 <= predict(p, x[0]) <= 1.0

    def test_zero_params_predict_half(self):
        p = _zero_params(TINY)
        assert predict(p, np.zeros((3, 8, 8))) == 0.5

    def test_checkpoint_round_trip_and_determinism(self, tmp_path):
        spec = NetworkSpec.from_dict({**TINY.to_dict(), "dtype": "float32"})
        p = init_params(spec, 9)
        mean = rng_for(3, "m").uniform(0, 1, size=(3, 8, 8)).astype(np.float32)
        save_checkpoint(p, tmp_path / "model", mean_image=mean)
        save_checkpoint(p, tmp_path / "model2", mean_image=mean)
        assert (tmp_path / "model.bin").read_bytes() == (tmp_path / "model2.bin").read_bytes()
        assert (tmp_path / "model.json").read_text() == (tmp_path / "model2.json").read_text()
        loaded, mean_back = load_checkpoint(tmp_path / "model")
        assert loaded.spec == spec
        np.testing.assert_array_equal(mean_back, mean)
        x = rng_for(4, "cx").uniform(-1, 1, size=(2, 3, 8, 8)).astype(np.float32)
        np.testing.assert_allclose(forward(loaded, x), forward(p, x), atol=1e-7)

    def test_truncated_checkpoint_rejected(self, tmp_path):
        p = init_params(NetworkSpec.from_dict({**TINY.to_dict(), "dtype": "float32"}), 0)
        _, bin_path = save_checkpoint(p, tmp_path / "m")
        bin_path.write_bytes(bin_path.read_bytes()[:-8])
        with pytest.raises(InvalidArgumentError):
            load_checkpoint(tmp_path / "m")

    def test_kernel_export_shapes(self):
        p = init_params(TINY, 0)
        k = first_layer_kernels(p)
        assert k.shape == (4, 3, 3, 3)
        art = kernels_to_ascii(p)
        assert "filter 0" in art and len(art.splitlines()) == 4 * 4
