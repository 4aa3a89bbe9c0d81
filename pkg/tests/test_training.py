import gzip
import struct

import numpy as np
import pytest

from normkit.errors import BadMagicError, ConfigError, ContractError, MissingFileError, TruncatedPayloadError
from normkit.models import ModelConfig, init_params
from normkit.normalizers import NormState, spec_preset
from normkit.tensor import Tape, Tensor, backward, grad_check, reduce_sum, square, sub
from normkit.training import (
    OptimizerState,
    TrainConfig,
    cross_entropy_loss,
    evaluate,
    fit,
    l1_activation_penalty,
    load_dataset,
    optimizer_step,
    read_idx_images,
    read_idx_labels,
    total_objective,
)
from normkit.training.data import DatasetHandle, write_idx_images, write_idx_labels
from normkit.training.loop import accuracy, batch_order


def _state(v):
    v = Tensor(v) if not isinstance(v, Tensor) else v
    return NormState(v=v, denom=Tensor(np.ones(v.shape)), y=v)


def _blobs_model(kind, sigma=1.0, **kw):
    return ModelConfig("mlp", (2,), (16,), 3, norm=spec_preset(kind, 16, sigma=sigma, dn_window=(5, 5, 5),
                                                                 ndim=2, affine=True, **kw))


# ---------------------------------------------------------------- losses

def test_l1_penalty_example():
    assert l1_activation_penalty([_state([[1.0, -2.0, 3.0]])], 0.5).item() == pytest.approx(1.0, abs=1e-15)
    assert l1_activation_penalty([_state([[1.0, -2.0, 3.0]])], 0.0).item() == 0.0


def test_l1_gradient_is_zero_at_zero_and_sign_elsewhere():
    tape = Tape()
    v = tape.leaf(Tensor([[0.0, 2.0, -1.0, 0.0]]))
    g = backward(tape, l1_activation_penalty([_state(v)], 4.0))[v.node]
    np.testing.assert_array_equal(g.data, [[0.0, 1.0, -1.0, 0.0]])


def test_l1_negative_lambda_rejected():
    with pytest.raises(ContractError):
        l1_activation_penalty([_state([[1.0]])], -1.0)


def test_cross_entropy_examples():
    assert cross_entropy_loss(Tensor([[0.0, 0.0]]), [0]).item() == pytest.approx(np.log(2.0), rel=1e-15)
    assert cross_entropy_loss(Tensor([[10.0, -10.0]]), [0]).item() == pytest.approx(2.0611536e-9, rel=1e-7)
    with pytest.raises(ContractError):
        cross_entropy_loss(Tensor([[0.0, 0.0]]), [2])


def test_cross_entropy_gradient():
    logits = Tensor(np.random.default_rng(0).normal(size=(4, 5)))
    assert grad_check(lambda t: cross_entropy_loss(t, [0, 4, 2, 2]), logits, 1e-5) <= 1e-6


def test_total_objective():
    assert total_objective(Tensor(1.5), Tensor(0.25)).item() == 1.75
    with pytest.raises(ContractError):
        total_objective(Tensor([1.0, 2.0]), Tensor(0.0))


# ---------------------------------------------------------------- optimizers

def test_sgd_example():
    cfg = TrainConfig(optimizer="sgd", lr=0.1)
    new, state = optimizer_step({"w": Tensor([1.0])}, {"w": Tensor([0.5])}, cfg)
    assert new["w"].data[0] == pytest.approx(0.95, abs=1e-15)
    assert state.step == 1


def test_adam_first_step_moves_by_lr():
    cfg = TrainConfig(optimizer="adam", lr=0.01)
    new, _ = optimizer_step({"w": Tensor([1.0])}, {"w": Tensor([3.0])}, cfg)
    assert new["w"].data[0] - 1.0 == pytest.approx(-0.01, rel=1e-6)


def test_zero_gradient_leaves_params_but_advances_step():
    state = OptimizerState()
    for opt in ("sgd", "adam"):
        new, state = optimizer_step({"w": Tensor([2.0])}, {"w": Tensor([0.0])}, TrainConfig(optimizer=opt), state)
        assert new["w"].data[0] == 2.0
    assert state.step == 2


def test_gradient_keys_must_match():
    with pytest.raises(ContractError):
        optimizer_step({"w": Tensor([1.0])}, {"v": Tensor([1.0])}, TrainConfig())


def test_sgd_converges_on_quadratic():
    cfg = TrainConfig(optimizer="sgd", lr=0.1)
    params, state = {"w": Tensor([0.0])}, OptimizerState()
    for _ in range(100):
        tape = Tape()
        w = tape.leaf(params["w"])
        grad = backward(tape, reduce_sum(square(sub(w, 3.0))))[w.node]
        params, state = optimizer_step(params, {"w": grad}, cfg, state)
    assert abs(params["w"].data[0] - 3.0) <= 1e-4


# ---------------------------------------------------------------- data

def test_idx_round_trip_and_count(tmp_path):
    images = np.arange(3 * 4 * 5, dtype=np.uint8).reshape(3, 4, 5)
    write_idx_images(tmp_path / "img", images)
    write_idx_labels(tmp_path / "lbl", np.array([1, 2, 3]))
    np.testing.assert_array_equal(read_idx_images(tmp_path / "img"), images)
    assert len(read_idx_labels(tmp_path / "lbl")) == 3
    (tmp_path / "img.gz").write_bytes(gzip.compress((tmp_path / "img").read_bytes()))
    np.testing.assert_array_equal(read_idx_images(tmp_path / "img.gz", limit=2), images[:2])


def test_idx_errors(tmp_path):
    bad = tmp_path / "bad"
    bad.write_bytes(struct.pack(">IIII", 1234, 1, 2, 2) + bytes(4))
    with pytest.raises(BadMagicError):
        read_idx_images(bad)
    short = tmp_path / "short"
    short.write_bytes(struct.pack(">IIII", 2051, 10, 2, 2) + bytes(8))
    with pytest.raises(TruncatedPayloadError):
        read_idx_images(short)
    with pytest.raises(MissingFileError):
        read_idx_labels(tmp_path / "nope")


def test_blobs_are_deterministic_and_split_disjoint():
    a, b = load_dataset("blobs", seed=3), load_dataset("blobs", seed=3)
    np.testing.assert_array_equal(a.x, b.x)
    assert a.handle.train_idx == b.handle.train_idx
    assert len(a.handle.train_idx) == 480 and len(a.handle.valid_idx) == 120
    assert not set(a.handle.train_idx) & set(a.handle.valid_idx)
    with pytest.raises(ContractError):
        DatasetHandle("blobs", 3, (2,), 3, (0, 1), (1, 2), "x")


def test_char_corpus_targets_are_shifted_inputs():
    data = load_dataset("tiny-chars")
    np.testing.assert_array_equal(data.x[:, 1:], data.y[:, :-1])
    assert data.handle.num_classes == len(data.vocab)


# ---------------------------------------------------------------- loop

def test_accuracy_ties_go_to_lowest_index():
    assert accuracy(np.array([[1.0, 1.0], [0.0, 0.0]]), np.array([0, 1])) == 0.5


def test_batch_order_is_a_seeded_permutation():
    a = batch_order(10, 5, 1)
    np.testing.assert_array_equal(a, batch_order(10, 5, 1))
    assert sorted(a) == list(range(10))
    assert not np.array_equal(a, batch_order(10, 5, 2))


def test_config_validation_names_the_field():
    with pytest.raises(ConfigError) as info:
        TrainConfig(sigma=-1.0)
    assert info.value.field == "sigma"


def test_zero_learning_rate_is_a_fixed_point():
    data = load_dataset("blobs", seed=0)
    model = _blobs_model("BN")
    start = init_params(model, 0)
    params, records = fit(model, data, TrainConfig(lr=0.0, epochs=2), start)
    for k in start:
        np.testing.assert_array_equal(params[k].data, start[k].data)
    assert len(records) == 2 * (480 // 50 + 1) + 2


def test_blobs_bn_mlp_learns():
    data = load_dataset("blobs", seed=0)
    model = _blobs_model("BN")
    params, _ = fit(model, data, TrainConfig(epochs=5))
    assert evaluate(model, params, data, "train").accuracy >= 0.99


def test_fit_is_deterministic():
    data = load_dataset("blobs", seed=1)
    model = _blobs_model("DN")
    cfg = TrainConfig(epochs=2, seed=1, lambda_l1=0.01)
    _, a = fit(model, data, cfg)
    _, b = fit(model, data, cfg)
    assert a == b


def test_evaluate_is_pure():
    data = load_dataset("blobs", seed=0)
    model = _blobs_model("LN")
    params = init_params(model, 0)
    snapshot = {k: v.data.copy() for k, v in params.items()}
    first = evaluate(model, params, data, "valid")
    assert evaluate(model, params, data, "valid") == first
    for k in params:
        np.testing.assert_array_equal(params[k].data, snapshot[k])
    with pytest.raises(ContractError):
        evaluate(model, params, data, "test")


@pytest.mark.parametrize("kind", ["BN", "LN", "DN"])
def test_l1_penalty_lowers_activation_magnitude(kind):
    data = load_dataset("blobs", seed=0)
    model = _blobs_model(kind)
    for seed in range(3):
        _, plain = fit(model, data, TrainConfig(epochs=3, seed=seed))
        _, sparse = fit(model, data, TrainConfig(epochs=3, seed=seed, lambda_l1=0.001))
        assert sparse[-1].mean_abs_v < plain[-1].mean_abs_v


@pytest.mark.parametrize("kind", ["BN", "LN", "DN", "DN-no-center", "identity-like"])
def test_objective_decreases_for_every_preset(kind):
    data = load_dataset("blobs", seed=0)
    _, records = fit(_blobs_model(kind), data, TrainConfig(epochs=3))
    train = [r for r in records if r.split == "train"]
    first = np.mean([r.loss for r in train if r.epoch == 1])
    last = np.mean([r.loss for r in train if r.epoch == 3])
    assert last < first


def test_lstm_training_step_runs_on_corpus():
    data = load_dataset({"kind": "tiny-chars", "seq_len": 8})
    vocab = data.handle.num_classes
    model = ModelConfig("charlstm", (vocab,), (8,), vocab, norm=spec_preset("LN", 8, ndim=2))
    _, records = fit(model, data, TrainConfig(epochs=1, batch_size=64))
    assert records[-1].split == "valid" and np.isfinite(records[-1].loss)
