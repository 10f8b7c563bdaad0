"""Network presets, the combined loss, SGD training, and checkpoints."""

import numpy as np
import pytest

from vadreg.autodiff import ShapeError, Tensor, backward
from vadreg.dataset import to_training_set
from vadreg.model import (
    Dimension,
    NetworkConfig,
    TrainConfig,
    build_model,
    load_checkpoint,
    loss_components,
    lr_at,
    orth_penalty,
    predict,
    save_checkpoint,
    total_loss,
)
from vadreg.oracles import identity_target_reference, self_conv_reference
from vadreg.synth import make_fixture
from vadreg.train import TrainingDivergedError, sgd_step, train

MINI = NetworkConfig(preset="mini", seed=3)

# closed-form parameter count of the mini preset:
#   stem  4x1x3x3 + 4      = 40
#   block (4x4x3x3 + 4) x2 = 296
#   neck  8x4x3x3 + 8      = 296
#   fc    1x8 + 1          = 9
MINI_PARAM_COUNT = 40 + 296 + 296 + 9


def tiny_batch(n=4, seed=0):
    rng = np.random.default_rng(seed)
    return rng.random((n, 1, 48, 48)), rng.uniform(-2, 2, size=n)


def set_exactly_orthogonal_weights(model):
    """One-hot filter taps chosen so every layer's self-conv hits its target
    exactly (distinct channels / taps that no stride-aligned shift connects)."""
    convs = model.net.conv_layers()
    stem, conv_a, conv_b, neck = convs
    w = np.zeros_like(stem.weights.data)          # 4 filters, 1 channel, stride 2
    for i, (u, v) in enumerate([(0, 0), (0, 1), (1, 0), (1, 1)]):
        w[i, 0, u, v] = 1.0
    stem.weights.data = w
    for layer in (conv_a, conv_b):                # 4 filters, 4 channels, stride 1
        w = np.zeros_like(layer.weights.data)
        for i in range(4):
            w[i, i, 1, 1] = 1.0
        layer.weights.data = w
    w = np.zeros_like(neck.weights.data)          # 8 filters, 4 channels, stride 2
    for i in range(4):
        w[i, i, 1, 1] = 1.0
        w[4 + i, i, 0, 0] = 1.0
    neck.weights.data = w


class TestBuildModel:
    def test_mini_parameter_count(self):
        model = build_model(MINI, "v")
        assert model.net.parameter_count() == MINI_PARAM_COUNT

    def test_same_seed_bit_identical(self):
        a = build_model(MINI, "v")
        b = build_model(MINI, "v")
        for (na, ta), (nb, tb) in zip(a.net.parameters(), b.net.parameters()):
            assert na == nb
            np.testing.assert_array_equal(ta.data, tb.data)

    def test_resnet18_has_17_convs_and_one_fc(self):
        model = build_model(NetworkConfig(preset="resnet18", seed=0), "v")
        assert len(model.net.conv_layers()) == 17
        fc_params = [n for n, _ in model.net.parameters() if n.startswith("fc.")]
        assert sorted(fc_params) == ["fc.bias", "fc.weight"]

    def test_mini_has_4_convs(self):
        assert len(build_model(MINI, "v").net.conv_layers()) == 4

    def test_both_presets_have_residual_blocks(self):
        for preset in ("mini", "resnet18"):
            model = build_model(NetworkConfig(preset=preset, seed=0), "v")
            assert len(model.net.blocks) >= 1

    def test_output_is_exactly_one_scalar(self):
        x, _ = tiny_batch(3)
        for preset in ("mini", "resnet18"):
            model = build_model(NetworkConfig(preset=preset, seed=0), "a")
            out = model.net.forward(Tensor(x))
            assert out.shape == (3,)

    def test_dimensions_get_distinct_inits(self):
        v = build_model(MINI, "v")
        a = build_model(MINI, "a")
        assert not np.array_equal(v.net.stem.weights.data, a.net.stem.weights.data)

    def test_unknown_preset_rejected(self):
        with pytest.raises(ValueError):
            NetworkConfig(preset="resnet50")


class TestLrSchedule:
    def test_paper_defaults(self):
        cfg = TrainConfig()
        assert lr_at(0, cfg) == 0.01
        assert lr_at(9999, cfg) == 0.01
        assert lr_at(10_000, cfg) == pytest.approx(0.001)
        assert lr_at(25_000, cfg) == pytest.approx(0.0001)


class TestTotalLoss:
    def test_lambda_zero_is_task_loss_exactly(self):
        model = build_model(MINI, "v")
        x, y = tiny_batch()
        loss = total_loss(model, x, y, orth_weight=0.0)
        task, _ = loss_components(model, x, y)
        assert loss.item() == task.item()

    def test_orthogonal_kernels_leave_only_task_loss(self):
        model = build_model(MINI, "v")
        set_exactly_orthogonal_weights(model)
        assert orth_penalty(model).item() == 0.0
        x, y = tiny_batch()
        task, _ = loss_components(model, x, y)
        assert total_loss(model, x, y, orth_weight=0.5).item() == task.item()

    def test_composes_mse_and_bruteforce_orth(self):
        model = build_model(MINI, "d")
        x, y = tiny_batch(1, seed=9)
        got = total_loss(model, x, y, orth_weight=0.1).item()
        # oracle composition: numpy MSE of the forward + brute-force penalties
        pred = model.net.forward(Tensor(x)).data
        mse = float(np.mean((pred - y) ** 2))
        orth = 0.0
        for kern in model.net.regularized_kernels():
            z = self_conv_reference(kern.weights.data, kern.stride)
            tgt = identity_target_reference(kern.out_channels, *kern.kernel_hw, kern.stride)
            orth += ((z - tgt) ** 2).sum()
        assert got == pytest.approx(mse + 0.1 * orth, rel=1e-12)

    def test_empty_batch_rejected(self):
        model = build_model(MINI, "v")
        from vadreg.autodiff import EmptyInputError
        with pytest.raises(EmptyInputError):
            total_loss(model, np.zeros((0, 1, 48, 48)), np.zeros(0), 0.1)

    def test_gradient_matches_finite_differences(self):
        from helpers import model_grad_check
        model = build_model(MINI, "v")
        x, y = tiny_batch(2, seed=4)
        for lam in (0.0, 0.1):
            err, checked, skipped = model_grad_check(
                model, x, y, lam, rng=np.random.default_rng(1))
            assert err < 1e-4, f"lam={lam}: {err}"
            assert checked > 0 and skipped <= checked // 10


class TestTrain:
    def test_same_seed_identical_parameters(self):
        x, y = tiny_batch(20, seed=1)
        cfg = TrainConfig(batch_size=8, epochs=3, orth_weight=0.1, seed=5)
        results = []
        for _ in range(2):
            model = build_model(MINI, "v")
            train(model, x, y, cfg)
            results.append({n: t.data.copy() for n, t in model.net.parameters()})
        for name in results[0]:
            np.testing.assert_array_equal(results[0][name], results[1][name])

    def test_overfits_single_sample(self):
        images, labels = make_fixture(1, seed=3)
        x, y = to_training_set(images, labels)
        model = build_model(MINI, "v")
        cfg = TrainConfig(batch_size=1, epochs=500, orth_weight=0.0, seed=0)
        result = train(model, x, y[:, 0], cfg)
        assert result.trace[-1].l_task < 1e-3

    def test_lambda_zero_step_equals_pure_mse_step(self):
        x, y = tiny_batch(8, seed=2)
        cfg = TrainConfig(batch_size=8, epochs=1, orth_weight=0.0, seed=7)
        model = build_model(MINI, "v")
        train(model, x, y, cfg)

        # independently coded pure-MSE step: same init, same single batch
        ref = build_model(MINI, "v")
        rng = np.random.default_rng(cfg.seed)
        idx = rng.permutation(8)[:8]
        from vadreg import autodiff as ad
        preds = ref.net.forward(Tensor(x[idx]), training=True)
        loss = ad.mse_loss(preds, Tensor(y[idx]))
        backward(loss)
        for _, p in ref.net.parameters():
            if p.grad is not None:
                p.data -= 0.01 * p.grad

        for (na, ta), (nb, tb) in zip(model.net.parameters(), ref.net.parameters()):
            np.testing.assert_allclose(ta.data, tb.data, atol=1e-12, err_msg=na)

    def test_lambda_only_adds_orth_gradient(self):
        x, y = tiny_batch(8, seed=2)
        lam = 0.1
        base = build_model(MINI, "v")
        reg = build_model(MINI, "v")
        train(base, x, y, TrainConfig(batch_size=8, epochs=1, orth_weight=0.0, seed=7))
        train(reg, x, y, TrainConfig(batch_size=8, epochs=1, orth_weight=lam, seed=7))

        grads = {}
        fresh = build_model(MINI, "v")
        backward(orth_penalty(fresh))
        for name, p in fresh.net.parameters():
            grads[name] = np.zeros_like(p.data) if p.grad is None else p.grad

        for (name, pb), (_, pr) in zip(base.net.parameters(), reg.net.parameters()):
            want = -0.01 * lam * grads[name]
            np.testing.assert_allclose(pr.data - pb.data, want, atol=1e-12, err_msg=name)

    def test_training_v_never_touches_a_or_d(self):
        x, y = tiny_batch(8, seed=6)
        models = {dim: build_model(MINI, dim) for dim in Dimension}
        before = {dim: {n: t.data.copy() for n, t in m.net.parameters()}
                  for dim, m in models.items()}
        train(models[Dimension.V], x, y, TrainConfig(batch_size=8, epochs=2, seed=0))
        for dim in (Dimension.A, Dimension.D):
            for name, t in models[dim].net.parameters():
                np.testing.assert_array_equal(t.data, before[dim][name])

    def test_divergence_raises_with_last_entry(self):
        x, y = tiny_batch(8, seed=8)
        model = build_model(MINI, "v")
        cfg = TrainConfig(batch_size=8, epochs=50, orth_weight=0.1, seed=0, lr0=1e12)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(TrainingDivergedError) as exc:
                train(model, x, y, cfg)
        assert exc.value.last_entry is None or np.isfinite(exc.value.last_entry.l_task)

    def test_trace_records_schedule(self):
        x, y = tiny_batch(8, seed=2)
        model = build_model(MINI, "v")
        cfg = TrainConfig(batch_size=4, epochs=2, orth_weight=0.1, seed=1)
        result = train(model, x, y, cfg)
        assert [e.iteration for e in result.trace] == list(range(4))
        assert all(e.lr == 0.01 for e in result.trace)
        assert all(np.isfinite(e.l_task) and np.isfinite(e.l_orth) for e in result.trace)

    def test_max_iters_stops_early(self):
        x, y = tiny_batch(8, seed=2)
        model = build_model(MINI, "v")
        result = train(model, x, y,
                       TrainConfig(batch_size=2, epochs=100, seed=1, max_iters=5))
        assert len(result.trace) == 5
        assert model.iteration == 5

    def test_progress_sink_sees_every_iteration(self):
        x, y = tiny_batch(8, seed=2)
        model = build_model(MINI, "v")
        seen = []
        train(model, x, y, TrainConfig(batch_size=4, epochs=2, seed=1),
              progress=seen.append)
        assert [e.iteration for e in seen] == list(range(4))


class TestPredict:
    def test_zeroed_final_layer_returns_bias(self):
        model = build_model(MINI, "v")
        model.net.fc.weights.data = np.zeros_like(model.net.fc.weights.data)
        model.net.fc.bias.data = np.array([0.75])
        x, _ = tiny_batch(1)
        assert predict(model, x[0]) == 0.75

    def test_clamp(self):
        model = build_model(MINI, "v")
        model.net.fc.weights.data = np.zeros_like(model.net.fc.weights.data)
        model.net.fc.bias.data = np.array([2.7])
        x, _ = tiny_batch(1)
        assert predict(model, x[0]) == 2.7
        assert predict(model, x[0], clamp=True) == 2.0
        model.net.fc.bias.data = np.array([-3.1])
        assert predict(model, x[0], clamp=True) == -2.0

    def test_wrong_shape_rejected(self):
        model = build_model(MINI, "v")
        with pytest.raises(ShapeError):
            predict(model, np.zeros((48, 48)))

    def test_trained_fixture_prediction_close(self):
        images, labels = make_fixture(20, seed=12)
        x, y = to_training_set(images, labels)
        model = build_model(MINI, "v")
        train(model, x, y[:, 0], TrainConfig(batch_size=10, epochs=150, seed=2,
                                             orth_weight=0.1))
        assert abs(predict(model, x[0]) - y[0, 0]) < 1.0


class TestCheckpoint:
    @pytest.mark.parametrize("preset", ["mini", "resnet18"])
    def test_roundtrip_bit_exact(self, preset, tmp_path):
        model = build_model(NetworkConfig(preset=preset, seed=9), "d")
        if preset == "mini":
            x, y = tiny_batch(6, seed=3)
            train(model, x, y, TrainConfig(batch_size=3, epochs=2, seed=0))
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        assert loaded.dimension == model.dimension
        assert loaded.iteration == model.iteration
        img = np.random.default_rng(0).random((1, 48, 48))
        assert predict(loaded, img) == predict(model, img)

    def test_roundtrip_preserves_bn_buffers(self, tmp_path):
        model = build_model(NetworkConfig(preset="resnet18", seed=1), "v")
        bn = model.net.stem_bn
        bn.state["mean"][:] = np.arange(64, dtype=np.float64)
        save_checkpoint(model, tmp_path / "m.ckpt")
        loaded = load_checkpoint(tmp_path / "m.ckpt")
        np.testing.assert_array_equal(loaded.net.stem_bn.state["mean"],
                                      np.arange(64, dtype=np.float64))

    def test_identical_models_serialize_identically(self, tmp_path):
        for i in (0, 1):
            save_checkpoint(build_model(MINI, "v"), tmp_path / f"m{i}.ckpt")
        assert (tmp_path / "m0.ckpt").read_bytes() == (tmp_path / "m1.ckpt").read_bytes()

    def test_garbage_rejected(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(ValueError):
            load_checkpoint(path)


class TestBatchNormModes:
    def test_train_and_eval_differ_after_updates(self):
        model = build_model(NetworkConfig(preset="resnet18", seed=2), "v")
        x, _ = tiny_batch(2, seed=5)
        out_train = model.net.forward(Tensor(x), training=True).data.copy()
        out_eval = model.net.forward(Tensor(x), training=False).data.copy()
        assert not np.allclose(out_train, out_eval)
