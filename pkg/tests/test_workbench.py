import json
import shutil

import numpy as np
import pytest

from czsl_stagewise.errors import (ConfigurationError, GenerationError, IntegrityError, UsageError,
                                   VocabularyError)
from czsl_stagewise.workbench import experiments as ex
from czsl_stagewise.workbench.cli import main
from czsl_stagewise.workbench.config import config_from_dict, load_config
from czsl_stagewise.workbench.splits import BUNDLED, bundled_path, load_splits, write_manifest
from czsl_stagewise.workbench.synthetic import SyntheticTaskSpec, gen_synthetic

TINY = {"data": {"n_states": 3, "n_objects": 4, "samples_per_pair": 8},
        "encoder": {"width": 8, "layers": 4, "heads": 2},
        "aggregation": {"n_low": 2, "m_high": 2},
        "train": {"epochs": 2, "batch_size": 32}}


def test_generator_locality_one_linear_probe():
    d = gen_synthetic(SyntheticTaskSpec(locality=1.0, seed=0))
    tr, te = d.indices("train"), d.indices("test")
    X = np.c_[d.features, np.ones(len(d.features))]
    W = np.linalg.lstsq(X[tr], np.eye(8)[d.states[tr]], rcond=None)[0]
    assert ((X[te] @ W).argmax(1) == d.states[te]).mean() >= 0.9


def test_generator_counts_and_determinism():
    spec = SyntheticTaskSpec(noise=0.0, samples_per_pair=1, unseen_ratio=0.0, seed=4)
    d = gen_synthetic(spec)
    assert len(d.features) == spec.n_states * spec.n_objects
    assert len(np.unique(d.features, axis=0)) == len(d.features)
    a, b = gen_synthetic(SyntheticTaskSpec(seed=9)), gen_synthetic(SyntheticTaskSpec(seed=9))
    assert np.array_equal(a.features, b.features) and a.test_unseen_pairs == b.test_unseen_pairs


def test_generator_split_invariants():
    d = gen_synthetic(SyntheticTaskSpec(seed=2))
    seen = set(d.train_pairs)
    assert not seen & set(d.val_unseen_pairs) and not seen & set(d.test_unseen_pairs)
    assert {s for s, _ in seen} == set(range(8)) and {o for _, o in seen} == set(range(10))
    assert len(d.space("test").candidates()) == 70
    assert len(d.space("test", "open").candidates()) == 80


def test_generator_infeasible():
    with pytest.raises(GenerationError):
        gen_synthetic(SyntheticTaskSpec(n_states=2, n_objects=2, unseen_ratio=0.75))


@pytest.mark.parametrize("name,split,want", [
    ("mit-states", "train", (1262, 30338)),
    ("ut-zappos", "test", (18, 18, 2914)),
    ("cgqa", "val", (1252, 1040, 7280)),
])
def test_bundled_examples(name, split, want):
    manifest, space = load_splits(bundled_path(name))
    assert manifest.counts()[split] == want
    assert not set(space.seen_pairs) & set(space.unseen_pairs)


def copy_manifest(tmp_path, name="ut-zappos"):
    dst = tmp_path / name
    shutil.copytree(bundled_path(name), dst)
    return dst


def test_splits_unknown_token(tmp_path):
    d = copy_manifest(tmp_path)
    with open(d / "val_unseen_pairs.txt", "a") as fh:
        fh.write("nosuchstate ob000\n")
    with pytest.raises(VocabularyError):
        load_splits(d)


def test_splits_overlap(tmp_path):
    d = copy_manifest(tmp_path)
    first = (d / "train_pairs.txt").read_text().splitlines()[0]
    with open(d / "test_unseen_pairs.txt", "a") as fh:
        fh.write(first + "\n")
    with pytest.raises(IntegrityError):
        load_splits(d)


def test_splits_order_independent(tmp_path):
    d = copy_manifest(tmp_path)
    ref = load_splits(d)[0].counts()
    for f in ("train_pairs.txt", "test_seen_pairs.txt"):
        lines = (d / f).read_text().splitlines()
        (d / f).write_text("\n".join(reversed(lines)) + "\n")
    assert load_splits(d)[0].counts() == ref == load_splits(d)[0].counts()


def test_write_manifest_round_trip(tmp_path):
    data = gen_synthetic(SyntheticTaskSpec(seed=1))
    manifest, _ = load_splits(write_manifest(tmp_path / "syn", data))
    assert manifest.counts()["train"] == (len(data.train_pairs), len(data.indices("train")))
    assert manifest.pairs["test_unseen_pairs"] == sorted(data.test_unseen_pairs)


def test_config_strict_keys():
    with pytest.raises(UsageError, match="train.foo.*|.*trian"):
        config_from_dict({"trian": {}, "train": {"foo": 1}})
    with pytest.raises(UsageError):
        config_from_dict({"variant": "nope"})
    cfg = config_from_dict(TINY)
    assert config_from_dict(cfg.to_dict()) == cfg
    assert cfg.with_seed(3).digest() == cfg.digest()
    assert config_from_dict({**TINY, "variant": "df"}).digest() != cfg.digest()


def test_run_single_writes_directory(runs_dir):
    res = ex.run_single(config_from_dict(TINY), seed=1)
    files = {p.name for p in res.directory.iterdir()}
    assert {"config.json", "seed.txt", "history.csv", "metrics.json", "summary.csv",
            "curve_val.csv", "curve_test.csv", "checkpoint.npz"} <= files
    assert res.directory.name.endswith("-seed1")
    stored = json.loads((res.directory / "metrics.json").read_text())["val"]
    assert ex.eval_run(res.directory) == stored
    again = ex.run_single(load_config(res.directory / "config.json"), write=False)
    assert again.fit.history == res.fit.history


def test_ablation_and_report(runs_dir):
    rep = ex.run_ablation(config_from_dict(TINY), ["full", "ms_a"], [0, 1])
    assert [(r["variant"], r["seed"]) for r in rep.rows] == [("full", 0), ("full", 1),
                                                             ("ms_a", 0), ("ms_a", 1)]
    table = rep.table()
    aucs = [r["AUC"] for r in rep.rows if r["variant"] == "full"]
    assert table["full"]["AUC"][0] == pytest.approx(np.mean(aucs), abs=1e-15)
    assert table["full"]["AUC"][1] == pytest.approx(np.std(aucs, ddof=1), abs=1e-15)
    merged = ex.report(runs_dir)
    assert sorted(v["n"] for v in merged.values()) == [2, 2]
    with pytest.raises(UsageError):
        ex.run_ablation(config_from_dict(TINY), ["bogus"], [0])


def test_layer_sweep_rows(runs_dir):
    res = ex.run_layer_sweep(config_from_dict(TINY), [1, 2], seeds=[0])
    assert [r["n"] for r in res.rows] == [1, 2]
    assert res.auc_at(res.best_n()) >= res.auc_at(1)
    with pytest.raises(ConfigurationError):
        ex.run_layer_sweep(config_from_dict(TINY), [3])


def test_cli_flow(tmp_path, runs_dir, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(TINY))
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"modle": {}}))
    assert main(["train", "--config", str(bad)]) == 2
    assert "modle" in capsys.readouterr().err
    assert main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "data")]) == 0
    assert load_splits(tmp_path / "data")[0].counts()["train"][0] > 0
    assert main(["train", "--config", str(cfg), "--seed", "2"]) == 0
    run = json.loads(capsys.readouterr().out.strip().splitlines()[-1])["run"]
    assert main(["eval", run, "--check"]) == 0
    assert main(["eval", run, "--split", "test", "--world", "open", "--theta", "auto"]) == 0
    assert main(["report"]) == 0
    assert "± " in capsys.readouterr().out


def test_cli_gradcheck_gate(capsys):
    assert main(["gradcheck", "--max-coords", "3", "--skip-ops"]) == 0
    assert main(["gradcheck", "--max-coords", "3", "--skip-ops", "--tolerance", "1e-14"]) == 1
    assert "tolerance" in capsys.readouterr().err
