import math

import numpy as np
import pytest

from skgcn import tensor as T
from skgcn.data import PreprocessConfig, prepare_dataset, synth_generate
from skgcn.errors import ShapeError, TrainingDiverged
from skgcn.gradcheck import finite_difference_grad
from skgcn.model import ModelConfig
from skgcn.tensor import Tape, Tensor
from skgcn.training import (
    AdamState,
    EpochStats,
    TrainConfig,
    adam_init,
    adam_step,
    evaluate,
    lr_at_epoch,
    read_epoch_log,
    read_predictions,
    smoothed_ce_loss,
    train,
    write_epoch_log,
    write_predictions,
)


def small_dataset(seed=0, classes=2, joints=5, frames=10, per_class=4):
    ds = synth_generate(classes, joints, frames, per_class, seed=seed, test_per_class=2)
    return prepare_dataset(
        ds.topology, ds.n_classes, ds.train, ds.test, PreprocessConfig(target_frames=frames)
    )


def small_model_cfg(data, **kw):
    defaults = dict(
        n_joints=data.topology.n_joints,
        in_channels=data.in_channels,
        class_count=data.n_classes,
        gcn_channels=(6, 6, 8),
        adjacency="identity+res",
        temporal_kernel=3,
    )
    defaults.update(kw)
    return ModelConfig(**defaults)


# --- schedule ------------------------------------------------------------------


def test_lr_schedule_full_scale_values():
    cfg = TrainConfig()
    assert lr_at_epoch(cfg, 0) == 0.001
    assert lr_at_epoch(cfg, 39) == 0.001
    assert abs(lr_at_epoch(cfg, 40) - 0.0001) < 1e-18
    assert abs(lr_at_epoch(cfg, 80) - 0.00001) < 1e-18
    assert abs(lr_at_epoch(cfg, 119) - 0.00001) < 1e-18


def test_lr_schedule_is_non_increasing():
    cfg = TrainConfig.desk()
    rates = [lr_at_epoch(cfg, e) for e in range(cfg.total_epochs)]
    assert all(a >= b for a, b in zip(rates, rates[1:]))


def test_lr_schedule_epoch_bounds():
    cfg = TrainConfig()
    with pytest.raises(ValueError):
        lr_at_epoch(cfg, -1)
    with pytest.raises(ValueError):
        lr_at_epoch(cfg, 120)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(decay_epochs=(80, 40))
    with pytest.raises(ValueError):
        TrainConfig(decay_epochs=(40, 200))
    with pytest.raises(ValueError):
        TrainConfig(label_smoothing=1.0)
    with pytest.raises(ValueError):
        TrainConfig(initial_lr=0.0)
    desk = TrainConfig.desk()
    assert desk.total_epochs == 30 and desk.decay_epochs == (15, 25)
    assert TrainConfig.desk(total_epochs=10, decay_epochs=(5,)).decay_epochs == (5,)


# --- loss ------------------------------------------------------------------------


def test_ce_matches_textbook_softmax_form():
    rng = np.random.default_rng(0)
    for _ in range(20):
        c = int(rng.integers(2, 7))
        logits = rng.normal(scale=3.0, size=c)
        label = int(rng.integers(c))
        got = smoothed_ce_loss(Tensor(logits.copy()), label, 0.0).data
        probs = np.exp(logits - logits.max())
        probs /= probs.sum()
        assert abs(got - (-math.log(probs[label]))) < 1e-12


def test_ce_uniform_logits_cost_log_c_for_any_smoothing():
    for c in (2, 3, 10):
        for eps in (0.0, 0.05, 0.5):
            loss = smoothed_ce_loss(Tensor(np.zeros(c)), 0, eps).data
            assert abs(loss - math.log(c)) < 1e-12


def test_ce_smoothing_penalizes_confident_correct_answers():
    logits = Tensor(np.array([10.0, -10.0]))
    plain = smoothed_ce_loss(logits, 0, 0.0).data
    smoothed = smoothed_ce_loss(logits, 0, 0.05).data
    assert smoothed > plain


def test_ce_constant_shift_invariance():
    rng = np.random.default_rng(1)
    logits = rng.normal(size=4)
    a = smoothed_ce_loss(Tensor(logits), 2, 0.05).data
    b = smoothed_ce_loss(Tensor(logits + 123.456), 2, 0.05).data
    assert abs(a - b) < 1e-10


def test_ce_input_validation():
    with pytest.raises(ShapeError):
        smoothed_ce_loss(Tensor(np.zeros((2, 2))), 0, 0.0)
    with pytest.raises(ValueError):
        smoothed_ce_loss(Tensor(np.zeros(1)), 0, 0.0)
    with pytest.raises(ValueError):
        smoothed_ce_loss(Tensor(np.zeros(3)), 3, 0.0)
    with pytest.raises(ValueError):
        smoothed_ce_loss(Tensor(np.zeros(3)), 0, 1.0)


def test_ce_gradient_matches_softmax_minus_target():
    # d loss / d logits = softmax(z) - q, the classic result
    rng = np.random.default_rng(2)
    logits = Tensor(rng.normal(size=5), requires_grad=True)
    eps = 0.1
    with Tape():
        T.backward(smoothed_ce_loss(logits, 3, eps))
    probs = np.exp(logits.data - logits.data.max())
    probs /= probs.sum()
    target = np.full(5, eps / 5)
    target[3] += 1.0 - eps
    assert np.max(np.abs(logits.grad - (probs - target))) < 1e-12


def test_ce_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    logits = Tensor(rng.normal(size=4), requires_grad=True)
    with Tape():
        T.backward(smoothed_ce_loss(logits, 1, 0.05))
    fd = finite_difference_grad(lambda: smoothed_ce_loss(logits, 1, 0.05), logits)
    assert np.max(np.abs(logits.grad - fd)) < 1e-6


# --- adam ------------------------------------------------------------------------


def test_adam_zero_gradient_is_fixed_point():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    params = {"p": p}
    state = adam_init(params)
    before = p.data.copy()
    adam_step(params, {"p": np.zeros(2)}, state, lr=0.1)
    assert np.array_equal(p.data, before)
    assert state.t == 1


def test_adam_first_step_size_is_about_lr():
    # with bias correction, |step| = lr * g / (|g| + eps) for the first update
    p = Tensor(np.array([0.0]), requires_grad=True)
    state = adam_init({"p": p})
    adam_step({"p": p}, {"p": np.array([7.0])}, state, lr=0.01)
    assert abs(p.data[0] + 0.01) < 1e-8


def test_adam_step_direction_opposes_gradient():
    rng = np.random.default_rng(4)
    p = Tensor(rng.normal(size=6), requires_grad=True)
    g = rng.normal(size=6)
    before = p.data.copy()
    adam_step({"p": p}, {"p": g}, adam_init({"p": p}), lr=0.05)
    moved = p.data - before
    assert np.all(np.sign(moved[g != 0]) == -np.sign(g[g != 0]))


def test_adam_is_deterministic():
    def run():
        p = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
        state = adam_init({"p": p})
        for t in range(5):
            adam_step({"p": p}, {"p": p.data * 0.3 + t}, state, lr=0.02, weight_decay=0.01)
        return p.data

    assert np.array_equal(run(), run())


def test_adam_weight_decay_shrinks_parameters():
    p = Tensor(np.array([5.0]), requires_grad=True)
    adam_step({"p": p}, {"p": np.zeros(1)}, adam_init({"p": p}), lr=0.1, weight_decay=0.1)
    assert p.data[0] < 5.0


def test_adam_validates_gradients():
    p = Tensor(np.zeros(3), requires_grad=True)
    with pytest.raises(ValueError):
        adam_step({"p": p}, {}, adam_init({"p": p}), lr=0.1)
    with pytest.raises(ShapeError):
        adam_step({"p": p}, {"p": np.zeros(4)}, adam_init({"p": p}), lr=0.1)


def test_adam_state_tracks_moments():
    p = Tensor(np.array([0.0]), requires_grad=True)
    state = adam_init({"p": p})
    g = np.array([2.0])
    adam_step({"p": p}, {"p": g}, state, lr=0.01)
    assert abs(state.m["p"][0] - 0.1 * 2.0) < 1e-15
    assert abs(state.v["p"][0] - 0.001 * 4.0) < 1e-15
    assert isinstance(state, AdamState) and state.t == 1


# --- evaluate ---------------------------------------------------------------------


def test_evaluate_accuracy_and_confusion_consistency():
    data = small_dataset(seed=5)
    cfg = small_model_cfg(data)
    result = train(cfg, TrainConfig.desk(total_epochs=3, decay_epochs=(), seed=1), data)
    report = evaluate(result.final, data.test, data.n_classes)
    assert report.confusion.sum() == len(data.test)
    assert report.confusion.trace() / len(data.test) == report.top1_accuracy
    assert np.array_equal(np.diag(report.confusion), report.per_class_correct)
    assert len(report.predictions) == len(data.test)
    for sid, true, pred in report.predictions:
        assert 0 <= true < data.n_classes and 0 <= pred < data.n_classes


def test_evaluate_empty_split_rejected():
    data = small_dataset(seed=6)
    cfg = small_model_cfg(data)
    result = train(cfg, TrainConfig.desk(total_epochs=1, decay_epochs=(), seed=1), data)
    with pytest.raises(ValueError):
        evaluate(result.final, [], data.n_classes)


# --- the loop ----------------------------------------------------------------------


def test_train_loss_decreases_on_small_task():
    data = small_dataset(seed=7)
    cfg = small_model_cfg(data)
    result = train(
        cfg,
        TrainConfig.desk(total_epochs=8, decay_epochs=(), initial_lr=0.01, batch_size=4, seed=2),
        data,
    )
    assert result.history[-1].train_loss < result.history[0].train_loss
    assert len(result.history) == 8


def test_train_rerun_is_bit_identical():
    data = small_dataset(seed=8)
    cfg = small_model_cfg(data)
    tcfg = TrainConfig.desk(total_epochs=3, decay_epochs=(), batch_size=4, seed=3)
    a = train(cfg, tcfg, data)
    b = train(cfg, tcfg, data)
    assert a.final.content_equal(b.final)
    assert a.best.content_equal(b.best)
    assert [(s.epoch, s.lr, s.train_loss, s.test_top1) for s in a.history] == [
        (s.epoch, s.lr, s.train_loss, s.test_top1) for s in b.history
    ]


def test_train_seed_changes_the_run():
    data = small_dataset(seed=9)
    cfg = small_model_cfg(data)
    a = train(cfg, TrainConfig.desk(total_epochs=2, decay_epochs=(), seed=0), data)
    b = train(cfg, TrainConfig.desk(total_epochs=2, decay_epochs=(), seed=1), data)
    assert not a.final.content_equal(b.final)


def test_train_best_checkpoint_tracks_peak_accuracy():
    data = small_dataset(seed=10)
    cfg = small_model_cfg(data)
    result = train(
        cfg,
        TrainConfig.desk(total_epochs=6, decay_epochs=(), initial_lr=0.01, batch_size=4, seed=4),
        data,
    )
    accs = [s.test_top1 for s in result.history]
    assert result.best_epoch == int(np.argmax(accs))  # argmax takes the earliest tie
    best_acc = evaluate(result.best, data.test, data.n_classes).top1_accuracy
    assert best_acc == max(accs)


def test_train_aborts_on_non_finite_loss():
    # Adam's bias-corrected steps are ~lr regardless of gradient size, so only
    # an enormous rate drives the weights far enough that the forward pass
    # overflows; the first post-update batch then sees a nan loss and the loop
    # must abort instead of carrying on.
    data = small_dataset(seed=11)
    cfg = small_model_cfg(data)
    with pytest.raises(TrainingDiverged):
        with np.errstate(invalid="ignore", over="ignore"):
            train(
                cfg,
                TrainConfig.desk(
                    total_epochs=1, decay_epochs=(), initial_lr=1e60, batch_size=4, seed=5
                ),
                data,
            )


def test_train_memorizes_single_sample():
    data = small_dataset(seed=12)
    data.train = data.train[:2]
    data.test = data.train
    cfg = small_model_cfg(data)
    result = train(
        cfg,
        TrainConfig.desk(total_epochs=12, decay_epochs=(), initial_lr=0.02, batch_size=2, seed=6),
        data,
    )
    assert evaluate(result.best, data.test, data.n_classes).top1_accuracy == 1.0


# --- artifacts ----------------------------------------------------------------------


def test_epoch_log_round_trip(tmp_path):
    history = [
        EpochStats(0, 0.001, 1.2345678901234567, 0.5),
        EpochStats(1, 0.0001, 0.9, 2.0 / 3.0),
    ]
    path = tmp_path / "log.csv"
    write_epoch_log(history, path)
    back = read_epoch_log(path)
    assert back == history  # repr round-trip keeps floats bit-exact


def test_predictions_round_trip(tmp_path):
    data = small_dataset(seed=13)
    cfg = small_model_cfg(data)
    result = train(cfg, TrainConfig.desk(total_epochs=1, decay_epochs=(), seed=7), data)
    report = evaluate(result.final, data.test, data.n_classes)
    path = tmp_path / "preds.csv"
    write_predictions(report, path)
    assert read_predictions(path) == report.predictions
