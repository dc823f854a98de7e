import json

import numpy as np
import pytest

from appformer.config import load_config
from appformer.errors import ConfigError, MissingInputError
from appformer.pipeline import (
    ABLATION_AXES,
    RunManifest,
    ablation_grid,
    cmd_ablate,
    cmd_cluster,
    cmd_eval,
    cmd_preprocess,
    cmd_synth,
    git_blob_hash,
    run_all,
    station_features,
)
from appformer.data import PoiVector


def test_git_blob_hash_matches_git(tmp_path):
    # `printf 'hello\n' | git hash-object --stdin`
    (tmp_path / "f").write_bytes(b"hello\n")
    assert git_blob_hash(tmp_path / "f") == "ce013625030ba8dba906f756967f9e9ca394464a"


def test_full_run_writes_artifacts_and_manifests(tiny_overrides):
    cfg = load_config(overrides=tiny_overrides, env={})
    manifests = run_all(cfg)
    root = cfg.out_dir
    for rel in ("synth/records.csv", "preprocess/vocab.json", "cluster/clusters.json", "cluster/pca.csv", "train/model.ckpt", "train/history.jsonl", "eval/metrics.json"):
        assert (root / rel).is_file(), rel
    ev = RunManifest.read(root / "manifests" / "eval.json")
    assert ev.inputs["train/model.ckpt"] == git_blob_hash(root / "train" / "model.ckpt")
    assert ev.outputs == manifests["eval"].outputs
    assert ev.config["model"]["d_model"] == 16
    metrics = json.loads((root / "eval" / "metrics.json").read_text())
    assert 0.0 <= metrics["test"]["hit"]["1"] <= metrics["test"]["hit"]["5"] <= 1.0
    history = [json.loads(l) for l in (root / "train" / "history.jsonl").read_text().splitlines()]
    assert [h["epoch"] for h in history] == [1, 2]


def test_stages_name_their_missing_inputs(tiny_overrides):
    cfg = load_config(overrides=tiny_overrides, env={})
    with pytest.raises(MissingInputError, match="app synth"):
        cmd_preprocess(cfg)
    cmd_synth(cfg)
    with pytest.raises(MissingInputError, match="app train"):
        cmd_eval(cfg)


def test_cluster_k_zero_passes_raw_vectors(tiny_overrides):
    cfg = load_config(overrides=tiny_overrides + ["clustering.k=0"], env={})
    cmd_synth(cfg)
    cmd_cluster(cfg)
    doc = json.loads((cfg.out_dir / "cluster" / "clusters.json").read_text())
    assert doc["k"] == 0 and doc["algorithm"] == "none"


def test_station_features_modes():
    poi = {1: PoiVector(1, (2,) + (0,) * 16), 2: PoiVector(2, (4,) + (0,) * 16)}
    np.testing.assert_array_equal(station_features(poi, [2, 1], None)[:, 0], [4.0, 2.0])
    with pytest.raises(ConfigError):
        station_features(poi, [3], None)


def test_ablation_grids():
    cfg = load_config(env={})
    kt = ablation_grid(cfg, "module_kt")
    assert [(r[0], r[1].time_encoding, r[3]) for r in kt] == [
        ("Appformer", "none", 0),
        ("Appformer + T", "appformer", 0),
        ("Appformer + K", "none", 5),
        ("Appformer + K + T", "appformer", 5),
    ]
    assert [r[1].decoder_input for r in ablation_grid(cfg, "decoder_input")] == ["l+t+u", "u+t", "u+l", "t+l", "u", "t", "l"]
    assert [r[3] for r in ablation_grid(cfg, "cluster_count")][:3] == [0, 1, 2]
    assert [r[2] for r in ablation_grid(cfg, "cluster_method")][-1] == "kmodes"
    assert len(ABLATION_AXES) == 5
    with pytest.raises(ConfigError):
        ablation_grid(cfg, "depth")


def test_ablate_writes_one_row_per_variant(tiny_overrides):
    cfg = load_config(overrides=tiny_overrides + ["train.epochs=1"], env={})
    cmd_synth(cfg)
    m = cmd_ablate(cfg, "time_encoding")
    assert m.stage == "ablate-time_encoding"
    lines = (cfg.out_dir / "ablate" / "time_encoding.csv").read_text().splitlines()
    assert [l.split(",")[0] for l in lines] == ["variant", "baseline_additive", "appformer"]
    assert (cfg.out_dir / "manifests" / "ablate-time_encoding.json").is_file()
