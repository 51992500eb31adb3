import numpy as np
import pytest

from czsl_stagewise.aggregation import AggregationConfig, Window, concat_window
from czsl_stagewise.encoders import EncoderConfig
from czsl_stagewise.errors import ConfigurationError, UsageError
from czsl_stagewise.interaction import InteractionConfig
from czsl_stagewise.model import VARIANTS, CompositionalModel, ModelConfig


def small(variant="full", n=2, m=2, lam=0.1):
    return ModelConfig(EncoderConfig(input_dim=8, width=8, tokens=3, layers=4, heads=2),
                       AggregationConfig(n, m), InteractionConfig(heads=2, lambda_init=lam),
                       variant=variant)


def names(variant, **kw):
    return set(CompositionalModel(small(variant, **kw), 2, 3).trainable_parameters())


def test_window_validation():
    with pytest.raises(ConfigurationError):
        CompositionalModel(small(n=3, m=2), 2, 2)
    with pytest.raises(UsageError):
        CompositionalModel(small("nope"), 2, 2)


def test_variants_differ_only_in_documented_component():
    full = names("full")
    agg = {n for n in full if n.startswith(("agg_low.", "agg_high."))}
    assert full - names("agg_a") == agg and not names("agg_a") - full
    assert full - names("agg_b") == agg
    stage1 = {n for n in full if ".stage1." in n}
    stage2 = {n for n in full if ".stage2." in n}
    assert full - names("ms_a") == stage1 and not names("ms_a") - full
    assert full - names("ms_b") == stage2
    assert names("df") == full


def test_agg_a_matches_size_one_windows(rng):
    a = CompositionalModel(small("agg_a"), 2, 3, seed=0)
    f = CompositionalModel(small("full", n=1, m=1), 2, 3, seed=0)
    stack = a.features(rng.standard_normal((2, 8)))
    lo, hi = a.visual_context(stack)
    assert lo is concat_window(stack, f.agg_low.window) and hi is concat_window(stack, f.agg_high.window)
    assert lo is stack.layers[0] and hi is stack.layers[-1]
    diff = set(f.trainable_parameters()) - set(a.trainable_parameters())
    assert all(n.startswith(("agg_low.", "agg_high.")) for n in diff)


def test_df_lambda1_gets_no_gradient(rng):
    model = CompositionalModel(small("df"), 2, 2)
    stack = model.features(rng.standard_normal((3, 8)))
    pairs = np.array([(0, 0), (1, 1), (0, 1)])
    model.loss(stack, pairs, [0, 1, 2], [0, 1, 0], [0, 1, 1]).total.backward()
    for b in ("com", "state", "obj"):
        fw = model.interact[b].fusion
        assert fw.lambda1.grad is None or np.all(fw.lambda1.grad == 0)
        assert fw.lambda2.grad is not None


def test_zero_lambdas_reduce_to_plain_prompts(rng):
    model = CompositionalModel(small(lam=0.0), 2, 2)
    stack = model.features(rng.standard_normal((3, 8)))
    pairs = np.array([(0, 0), (1, 1)])
    T = model.prompt_embeddings(stack, pairs)
    bank = model.prompts(pairs)
    for b, raw in (("com", bank.t_com), ("state", bank.t_state), ("obj", bank.t_obj)):
        assert np.array_equal(T[b].data, np.broadcast_to(raw.data, T[b].shape))


def test_forward_shapes(rng):
    for v in VARIANTS:
        model = CompositionalModel(small(v), 2, 3)
        stack = model.features(rng.standard_normal((4, 8)))
        sc = model.forward(stack, np.array([(0, 0), (1, 2)]))
        assert sc.probs_com.shape == (4, 2) and sc.probs_state.shape == (4, 2)
        assert sc.probs_obj.shape == (4, 3)
        assert np.all(np.abs(sc.probs_obj.data.sum(1) - 1) < 1e-12)
