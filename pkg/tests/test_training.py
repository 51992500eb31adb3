import numpy as np
import pytest

from czsl_stagewise.autodiff import Tensor, make_rng
from czsl_stagewise.errors import NonFiniteLossError
from czsl_stagewise.layers import checksum
from czsl_stagewise.model import CompositionalModel
from czsl_stagewise.training import (Adam, TrainConfig, fit, load_checkpoint, save_checkpoint,
                                     step_decay, train_step)
from czsl_stagewise.workbench.config import ExperimentConfig
from czsl_stagewise.workbench.diagnostics import micro_instance
from czsl_stagewise.workbench.synthetic import SyntheticTaskSpec, gen_synthetic


def micro_batch(seed=0):
    model, _ = micro_instance(seed, lora_rank=0)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((4, 8))
    pairs = np.array([(0, 0), (0, 1), (1, 0), (1, 1)])
    labels = np.arange(4)
    return model, model.features(x), pairs, labels, pairs[:, 0], pairs[:, 1]


def frozen(model):
    return checksum([(n, p) for n, p in model.named_parameters() if not p.requires_grad])


def test_zero_lr_leaves_parameters():
    model, stack, pairs, lab, s, o = micro_batch()
    before = model.state_dict()
    opt = Adam(model.trainable_parameters(), lr=0.0, weight_decay=1e-5)
    train_step(model, opt, stack, pairs, lab, s, o)
    after = model.state_dict()
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_overfit_single_batch():
    model, stack, pairs, lab, s, o = micro_batch()
    opt = Adam(model.trainable_parameters(), lr=1e-2)
    for _ in range(500):
        res = train_step(model, opt, stack, pairs, lab, s, o)
        if res.loss < 0.05:
            break
    assert res.loss < 0.05


def test_small_step_decreases_loss():
    for lr in (1e-3, 1e-4):
        model, stack, pairs, lab, s, o = micro_batch(1)
        opt = Adam(model.trainable_parameters(), lr=lr)
        first = train_step(model, opt, stack, pairs, lab, s, o).loss
        after = model.loss(stack, pairs, lab, s, o).total.item()
        assert after < first


def test_frozen_untouched_by_optimizer():
    model, stack, pairs, lab, s, o = micro_batch()
    c0 = frozen(model)
    frozen_leaf = Tensor(np.ones(3))
    opt = Adam({**model.trainable_parameters(), "frozen": frozen_leaf}, lr=1e-2, weight_decay=0.1)
    assert "frozen" not in opt.params
    for _ in range(3):
        train_step(model, opt, stack, pairs, lab, s, o)
    assert frozen(model) == c0 and np.array_equal(frozen_leaf.data, np.ones(3))


def test_grad_norms_reported():
    model, stack, pairs, lab, s, o = micro_batch()
    res = train_step(model, Adam(model.trainable_parameters()), stack, pairs, lab, s, o)
    assert set(res.branch_losses) == {"state", "obj", "com"}
    assert res.grad_norms and all(np.isfinite(v) for v in res.grad_norms.values())


def test_non_finite_loss_aborts():
    model, stack, pairs, lab, s, o = micro_batch()
    model.heads.com.fc2.bias.data[0] = np.nan
    with pytest.raises(NonFiniteLossError, match="branch losses"):
        train_step(model, Adam(model.trainable_parameters()), stack, pairs, lab, s, o)


def test_step_decay_monotone():
    lrs = [step_decay(5e-4, e, 0.5, 5) for e in range(30)]
    assert lrs[0] == 5e-4 and lrs[5] == 2.5e-4
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def tiny_setup(seed=0, epochs=2):
    data = gen_synthetic(SyntheticTaskSpec(n_states=3, n_objects=4, samples_per_pair=10,
                                           unseen_ratio=0.25, seed=seed))
    cfg = ExperimentConfig()
    cfg.encoder.width = 16
    cfg.encoder.layers = 4
    cfg.aggregation.n_low = cfg.aggregation.m_high = 2
    tc = TrainConfig(epochs=epochs, batch_size=32, lr=2e-3, seed=seed)
    return cfg.model_config(), tc, data


def test_fit_deterministic_and_frozen():
    mc, tc, data = tiny_setup()
    a = fit(mc, tc, data)
    b = fit(mc, tc, data)
    assert a.history == b.history
    assert a.best_val["AUC"] == max(h["val_AUC"] for h in a.history)
    fresh = CompositionalModel(mc, len(data.state_names), len(data.object_names), seed=0)
    assert frozen(fresh) == frozen(a.model)


def test_checkpoint_round_trip(tmp_path):
    mc, tc, data = tiny_setup(epochs=1)
    model = fit(mc, tc, data).model
    save_checkpoint(tmp_path / "m.npz", model, {"note": "x"})
    state, meta = load_checkpoint(tmp_path / "m.npz")
    assert meta == {"note": "x"}
    ref = dict(model.named_parameters())
    assert set(state) == set(ref)
    assert all(np.array_equal(state[k], ref[k].data) and state[k].shape == ref[k].shape for k in ref)


def test_dropout_generator_reproducible():
    a, b = make_rng(5).random(4), make_rng(5).random(4)
    assert np.array_equal(a, b)


@pytest.mark.slow
def test_default_task_early_epochs_and_improvement():
    cfg = ExperimentConfig()
    monotone, improved = 0, 0
    for seed in range(5):
        c = cfg.with_seed(seed)
        c.train.epochs = 3
        res = fit(c.model_config(), c.train, gen_synthetic(c.data))
        losses = [h["train_loss"] for h in res.history]
        monotone += all(a >= b for a, b in zip(losses, losses[1:]))
        improved += res.best_val["AUC"] > res.initial_val["AUC"]
    assert monotone >= 4
    assert improved == 5
