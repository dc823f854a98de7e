"""
Stage functions behind the ``app`` command and the ablation grids.

Layout under the output root::

    synth/       records.csv  poi.csv  ground_truth.json
    preprocess/  train.jsonl  val.jsonl  test.jsonl  vocab.json  split.json
    cluster/     clusters.json  pca.csv
    train/       model.ckpt  history.jsonl
    eval/        metrics.json  metrics.csv
    ablate/      <axis>.csv
    manifests/   <stage>.json

Each stage writes one manifest naming its outputs, so every file belongs to
exactly one manifest.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .clustering import ALGORITHMS, CLUSTER_COUNT_SWEEP, ClusterModel, fit_poi, pca_project, poi_matrix, replace_with_centers, write_clusters_json, write_pca_csv
from .config import ExperimentConfig
from .data import parse_poi, parse_records, synth_corpus, write_poi, write_records
from .errors import ConfigError, MissingInputError
from .metrics import MetricReport, evaluate_logits, write_metrics_csv, write_metrics_json
from .model import AppformerModel, ModelConfig, TrainConfig, TrainResult, load_model, most_frequent_baseline, save_model, train, write_history
from .preprocess import PreparedData, Vocabulary, prepare, read_windows, write_windows

ABLATION_AXES = ("module_kt", "time_encoding", "decoder_input", "cluster_count", "cluster_method")
# row order follows the comparison tables
DECODER_ROWS = ("l+t+u", "u+t", "u+l", "t+l", "u", "t", "l")
CLUSTER_METHOD_ROWS = ("kmeans", "minibatch_kmeans", "kmeanspp", "kharmonic", "kmodes")


def git_blob_hash(path) -> str:
    """SHA-1 of ``b"blob <size>\\0" + content``, as ``git hash-object`` prints it."""
    data = Path(path).read_bytes()
    h = hashlib.sha1()
    h.update(b"blob %d\0" % len(data))
    h.update(data)
    return h.hexdigest()


@dataclass
class RunManifest:
    stage: str
    config: dict
    seed: int
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)

    def write(self, root: Path) -> Path:
        path = Path(root) / "manifests" / f"{self.stage}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path

    @classmethod
    def read(cls, path) -> "RunManifest":
        with open(path, encoding="utf-8") as fh:
            return cls(**json.load(fh))


class _Stage:
    """Collects inputs, outputs and timings for one manifest."""

    def __init__(self, name: str, cfg: ExperimentConfig):
        self.name, self.cfg, self.root = name, cfg, cfg.out_dir
        self.dir = self.root / name
        self.dir.mkdir(parents=True, exist_ok=True)
        self.manifest = RunManifest(name, cfg.to_dict(), cfg.seed)
        self.t0 = time.perf_counter()
        self._lap = self.t0

    def _rel(self, path: Path) -> str:
        try:
            return Path(path).relative_to(self.root).as_posix()
        except ValueError:
            return Path(path).as_posix()

    def need(self, path, producer: str | None = None) -> Path:
        path = Path(path)
        if not path.is_file():
            raise MissingInputError(path, self.name, producer)
        self.manifest.inputs[self._rel(path)] = git_blob_hash(path)
        return path

    def made(self, path) -> Path:
        self.manifest.outputs[self._rel(path)] = git_blob_hash(path)
        return Path(path)

    def lap(self, label: str) -> None:
        now = time.perf_counter()
        self.manifest.timings[label] = round(now - self._lap, 6)
        self._lap = now

    def finish(self) -> RunManifest:
        self.manifest.timings["total"] = round(time.perf_counter() - self.t0, 6)
        self.manifest.write(self.root)
        return self.manifest


def _write_json(path: Path, payload) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path: Path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def input_paths(cfg: ExperimentConfig) -> tuple[Path, Path]:
    synth_dir = cfg.out_dir / "synth"
    records = Path(cfg.paths.records) if cfg.paths.records else synth_dir / "records.csv"
    poi = Path(cfg.paths.poi) if cfg.paths.poi else synth_dir / "poi.csv"
    return records, poi


# -- shared building blocks --------------------------------------------------------
def cluster_stations(poi_map, algorithm: str, k: int, seed: int) -> ClusterModel | None:
    """``k == 0`` means no clustering: stations keep their raw POI vectors."""
    if k == 0:
        return None
    if k > len(poi_map):
        raise ConfigError(f"clustering.k={k} exceeds the {len(poi_map)} stations with POI vectors")
    return fit_poi(poi_map, algorithm, k, seed=seed)


def station_features(poi_map, stations, cluster_model: ClusterModel | None) -> np.ndarray:
    """POI matrix row-aligned with the vocabulary's station order."""
    try:
        replaced = replace_with_centers(cluster_model, poi_map, stations)
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from None
    return np.array([replaced[s] for s in stations], dtype=np.float64)


@dataclass
class VariantResult:
    label: str
    reports: dict[str, MetricReport]
    train_result: TrainResult
    model: AppformerModel
    baseline_hit1: float


def run_variant(
    prep: PreparedData,
    poi_map,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    algorithm: str = "kmodes",
    k: int = 5,
    seed: int = 0,
    label: str = "",
    log=None,
) -> VariantResult:
    """Cluster, train and evaluate one configuration in memory."""
    seeds = replace(ExperimentConfig(), seed=seed).stage_seeds()
    cm = cluster_stations(poi_map, algorithm, k, seeds["cluster"])
    feats = station_features(poi_map, prep.vocab.stations, cm)
    tr, va, te = (prep.vocab.encode(w) for w in (prep.train, prep.val, prep.test))
    model = AppformerModel(model_cfg, prep.vocab.n_apps, prep.vocab.n_users, feats, seed=seeds["init"])
    result = train(model, tr, va if len(va) else None, replace(train_cfg, seed=seeds["train"]), log=log)
    reports = {}
    if len(va):
        reports["val"] = evaluate_logits(model.predict_logits(va), va.labels)
    reports["test"] = evaluate_logits(model.predict_logits(te), te.labels)
    base = most_frequent_baseline(tr.labels, te.labels, prep.vocab.n_apps)
    return VariantResult(label, reports, result, model, base)


# -- stages -------------------------------------------------------------------------
def cmd_synth(cfg: ExperimentConfig) -> RunManifest:
    stage = _Stage("synth", cfg)
    records, poi_map, truth = synth_corpus(cfg.synth)
    stage.lap("generate")
    write_records(stage.dir / "records.csv", records)
    write_poi(stage.dir / "poi.csv", poi_map)
    _write_json(stage.dir / "ground_truth.json", truth)
    for name in ("records.csv", "poi.csv", "ground_truth.json"):
        stage.made(stage.dir / name)
    stage.lap("write")
    return stage.finish()


def cmd_preprocess(cfg: ExperimentConfig) -> RunManifest:
    stage = _Stage("preprocess", cfg)
    rec_path, poi_path = input_paths(cfg)
    records = parse_records(stage.need(rec_path, "synth"))
    poi_map = parse_poi(stage.need(poi_path, "synth"))
    stage.lap("read")
    prep = prepare(records, cfg.protocol, cfg.model.m, stations=sorted(poi_map))
    stage.lap("prepare")
    for part in ("train", "val", "test"):
        write_windows(stage.dir / f"{part}.jsonl", getattr(prep, part))
        stage.made(stage.dir / f"{part}.jsonl")
    _write_json(stage.dir / "vocab.json", prep.vocab.to_json())
    split_info = prep.split.manifest()
    split_info["windows"] = {p: len(getattr(prep, p)) for p in ("train", "val", "test")}
    _write_json(stage.dir / "split.json", split_info)
    stage.made(stage.dir / "vocab.json")
    stage.made(stage.dir / "split.json")
    stage.lap("write")
    return stage.finish()


def cmd_cluster(cfg: ExperimentConfig) -> RunManifest:
    stage = _Stage("cluster", cfg)
    _, poi_path = input_paths(cfg)
    poi_map = parse_poi(stage.need(poi_path, "synth"))
    seeds = cfg.stage_seeds()
    cm = cluster_stations(poi_map, cfg.clustering.algorithm, cfg.clustering.k, seeds["cluster"])
    stage.lap("fit")
    ids, X = poi_matrix(poi_map)
    if cm is None:
        _write_json(stage.dir / "clusters.json", {"algorithm": "none", "k": 0, "station_ids": ids})
        labels = [-1] * len(ids)
    else:
        write_clusters_json(stage.dir / "clusters.json", cm)
        labels = list(cm.labels)
    write_pca_csv(stage.dir / "pca.csv", ids, pca_project(X.astype(float)), labels)
    stage.made(stage.dir / "clusters.json")
    stage.made(stage.dir / "pca.csv")
    stage.lap("write")
    return stage.finish()


def _load_cluster(path: Path) -> ClusterModel | None:
    doc = _read_json(path)
    return None if doc.get("k") == 0 else ClusterModel.from_json(doc)


def _load_prepared(stage: _Stage) -> tuple[Vocabulary, dict]:
    pre = stage.root / "preprocess"
    vocab = Vocabulary.from_json(_read_json(stage.need(pre / "vocab.json", "preprocess")))
    windows = {p: read_windows(stage.need(pre / f"{p}.jsonl", "preprocess")) for p in ("train", "val", "test")}
    return vocab, windows


def _features_for(stage: _Stage, cfg: ExperimentConfig, vocab: Vocabulary) -> np.ndarray:
    _, poi_path = input_paths(cfg)
    poi_map = parse_poi(stage.need(poi_path, "synth"))
    cm = _load_cluster(stage.need(stage.root / "cluster" / "clusters.json", "cluster"))
    return station_features(poi_map, vocab.stations, cm)


def cmd_train(cfg: ExperimentConfig, log=None) -> RunManifest:
    stage = _Stage("train", cfg)
    vocab, windows = _load_prepared(stage)
    feats = _features_for(stage, cfg, vocab)
    seeds = cfg.stage_seeds()
    stage.lap("read")
    tr, va = vocab.encode(windows["train"]), vocab.encode(windows["val"])
    model = AppformerModel(cfg.model, vocab.n_apps, vocab.n_users, feats, seed=seeds["init"])
    result = train(model, tr, va if len(va) else None, replace(cfg.train, seed=seeds["train"]), log=log)
    stage.lap("fit")
    save_model(stage.dir / "model.ckpt", model, result, seed=cfg.seed, extra={"n_apps": vocab.n_apps, "n_users": vocab.n_users})
    write_history(stage.dir / "history.jsonl", result.history)
    stage.made(stage.dir / "model.ckpt")
    stage.made(stage.dir / "history.jsonl")
    stage.lap("write")
    return stage.finish()


def cmd_eval(cfg: ExperimentConfig) -> RunManifest:
    stage = _Stage("eval", cfg)
    ckpt = stage.need(stage.root / "train" / "model.ckpt", "train")
    vocab, windows = _load_prepared(stage)
    feats = _features_for(stage, cfg, vocab)
    model, _ = load_model(ckpt, vocab.n_apps, vocab.n_users, feats)
    stage.lap("read")
    reports = {}
    for part in ("val", "test"):
        arrays = vocab.encode(windows[part])
        if len(arrays):
            reports[part] = evaluate_logits(model.predict_logits(arrays), arrays.labels)
    stage.lap("predict")
    write_metrics_json(stage.dir / "metrics.json", reports)
    write_metrics_csv(stage.dir / "metrics.csv", {p: r.row() for p, r in reports.items()})
    stage.made(stage.dir / "metrics.json")
    stage.made(stage.dir / "metrics.csv")
    return stage.finish()


# -- ablations ----------------------------------------------------------------------
def ablation_grid(cfg: ExperimentConfig, axis: str) -> list[tuple[str, ModelConfig, str, int]]:
    """Rows of ``(label, model config, clustering algorithm, k)`` for one axis."""
    m, algo, k = cfg.model, cfg.clustering.algorithm, cfg.clustering.k
    if axis == "module_kt":
        no_t = replace(m, time_encoding="none", decoder_input="l")
        return [
            ("Appformer", no_t, algo, 0),
            ("Appformer + T", replace(m, time_encoding="appformer"), algo, 0),
            ("Appformer + K", no_t, algo, k),
            ("Appformer + K + T", replace(m, time_encoding="appformer"), algo, k),
        ]
    if axis == "time_encoding":
        return [(t, replace(m, time_encoding=t), algo, k) for t in ("baseline_additive", "appformer")]
    if axis == "decoder_input":
        return [(f"Decoder({v})", replace(m, decoder_input=v), algo, k) for v in DECODER_ROWS]
    if axis == "cluster_count":
        # the count sweep is run with plain K-Means
        return [(str(n), m, "kmeans", n) for n in CLUSTER_COUNT_SWEEP]
    if axis == "cluster_method":
        return [(a, m, a, k) for a in CLUSTER_METHOD_ROWS]
    raise ConfigError(f"unknown ablation axis {axis!r}; expected one of {ABLATION_AXES}")


def cmd_ablate(cfg: ExperimentConfig, axis: str, log=None) -> RunManifest:
    grid = ablation_grid(cfg, axis)
    stage = _Stage("ablate", cfg)
    stage.manifest.stage = f"ablate-{axis}"
    rec_path, poi_path = input_paths(cfg)
    records = parse_records(stage.need(rec_path, "synth"))
    poi_map = parse_poi(stage.need(poi_path, "synth"))
    prep = prepare(records, cfg.protocol, cfg.model.m, stations=sorted(poi_map))
    stage.lap("prepare")
    rows = {}
    for label, mcfg, algo, k in grid:
        res = run_variant(prep, poi_map, mcfg, cfg.train, algo, k, cfg.seed, label)
        rows[label] = res.reports["test"].row()
        stage.lap(label)
        if log is not None:
            log({"variant": label, **rows[label]})
    out = stage.dir / f"{axis}.csv"
    write_metrics_csv(out, rows)
    stage.made(out)
    return stage.finish()


STAGES = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "cluster": cmd_cluster,
    "train": cmd_train,
    "eval": cmd_eval,
}


def run_all(cfg: ExperimentConfig, log=None) -> dict[str, RunManifest]:
    out = {}
    for name, fn in STAGES.items():
        out[name] = fn(cfg, log=log) if name == "train" else fn(cfg)
    return out
