"""
The full predictor: encoders, progressive fusion, an encoder stack of
unmasked self-attention blocks, a decoder stack of fusion blocks that attend
to the encoder output, and a linear head on the last decoder position.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .encoders import EncoderConfig, MultiModalEncoder
from .errors import AppformerError, ConfigError, NonFiniteError, ShapeError
from .fusion import CrossModalFusion, FusionConfig, ProgressiveFusion, multi_head_attention, parse_decoder_variant
from .metrics import MetricReport, RankedPrediction, evaluate_logits, rank_from_logits
from .nn import Adam, LayerNorm, Linear, Module, clip_grad_norm, load_checkpoint, save_checkpoint, uniform_init
from .preprocess import WindowArrays
from .tensor import Parameter, Tensor, add, cross_entropy, dropout, index, matmul, relu


@dataclass(frozen=True)
class ModelConfig:
    m: int = 4
    d_app: int = 64
    d_user: int = 16
    d_time_unit: int = 12
    d_model: int = 128
    num_heads: int = 8
    d_ff: int = 512
    dropout: float = 0.05
    n_layers: int = 2
    decoder_input: str = "l"
    time_encoding: str = "appformer"
    single_final_norm: bool = False
    label_smoothing: float = 0.0

    def __post_init__(self):
        if self.m < 1 or self.n_layers < 1:
            raise ConfigError("m and n_layers must be >= 1")
        if self.d_model % self.num_heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by num_heads={self.num_heads}")
        if self.time_encoding not in ("appformer", "baseline_additive", "none"):
            raise ConfigError(f"unknown time encoding {self.time_encoding!r}")
        parse_decoder_variant(self.decoder_input)
        if "t" in self.decoder_input.split("+") and self.time_encoding == "none":
            raise ConfigError("decoder input uses time but time encoding is disabled")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError("label_smoothing must lie in [0, 1)")

    @property
    def fusion(self) -> FusionConfig:
        return FusionConfig(self.d_model, self.num_heads, self.d_ff, self.dropout, self.single_final_norm)


class EncoderBlock(Module):
    """Unmasked multi-head self-attention and a ReLU feed-forward, each with residual + layer norm."""

    def __init__(self, cfg: FusionConfig, rng):
        d, dff = cfg.d_model, cfg.d_ff
        self.cfg = cfg
        self.wq = Parameter(uniform_init(rng, d, (d, d)))
        self.wk = Parameter(uniform_init(rng, d, (d, d)))
        self.wv = Parameter(uniform_init(rng, d, (d, d)))
        self.wo = Parameter(uniform_init(rng, d, (d, d)))
        self.w1 = Parameter(uniform_init(rng, d, (d, dff)))
        self.w2 = Parameter(uniform_init(rng, dff, (dff, d)))
        self.norm_attn = LayerNorm(d, cfg.ln_eps)
        self.norm_ffn = LayerNorm(d, cfg.ln_eps)

    def __call__(self, x: Tensor, training=False, rng=None) -> Tensor:
        rate = self.cfg.dropout
        att = multi_head_attention(x, x, self.wq, self.wk, self.wv, self.cfg.num_heads, None, rate, training, rng)
        h = self.norm_attn(add(matmul(att, self.wo), x))
        ff = matmul(dropout(relu(matmul(h, self.w1)), rate, training, rng), self.w2)
        return self.norm_ffn(add(ff, h))


class AppformerModel(Module):
    def __init__(self, cfg: ModelConfig, n_apps: int, n_users: int, poi_matrix: np.ndarray, seed: int = 0):
        self.cfg = cfg
        self.n_apps = n_apps
        rng = np.random.default_rng(seed)
        fcfg = cfg.fusion
        enc_cfg = EncoderConfig(n_apps=n_apps, n_users=n_users, d_app=cfg.d_app, d_user=cfg.d_user, d_time_unit=cfg.d_time_unit, d_model=cfg.d_model, poi_dim=np.asarray(poi_matrix).shape[1])
        self.encoders = MultiModalEncoder(enc_cfg, poi_matrix, rng, time_mode=cfg.time_encoding)
        self.fusion = ProgressiveFusion(fcfg, cfg.d_app, cfg.d_user, rng, decoder_variant=cfg.decoder_input, time_mode=cfg.time_encoding)
        self.encoder_blocks = [EncoderBlock(fcfg, rng) for _ in range(cfg.n_layers)]
        self.decoder_blocks = [CrossModalFusion(fcfg, rng) for _ in range(cfg.n_layers)]
        self.head = Linear(cfg.d_model, n_apps, rng)
        self.assign_names()

    def forward(self, batch: WindowArrays, training: bool = False, rng=None, trace: dict | None = None) -> Tensor:
        """Logits of shape ``batch x n_apps``."""
        if batch.app_idx.ndim != 2 or batch.app_idx.shape[1] != self.cfg.m:
            raise ShapeError(f"model expects windows of m={self.cfg.m} events, got app ids {batch.app_idx.shape}")
        try:
            enc = self.encoders(batch.app_idx, batch.user_idx, batch.time_idx, batch.station_idx)
            x = self.fusion.build_encoder_input(enc.a, enc.u, enc.l, enc.t, training, rng)
            for block in self.encoder_blocks:
                x = block(x, training, rng)
            memory = x
            y = self.fusion.build_decoder_input(enc.a, enc.l, enc.t, enc.u, training, rng)
            for block in self.decoder_blocks:
                y = block(y, memory, training, rng)
            logits = self.head(index(y, (slice(None), -1, slice(None))))
        except (ShapeError, NonFiniteError) as exc:
            raise type(exc)(f"forward pass failed: {exc}") from exc
        if trace is not None:
            trace.update(encoded=enc, encoder_output=memory, decoder_output=y)
        return logits

    __call__ = forward

    def loss(self, logits: Tensor, labels) -> Tensor:
        return loss(logits, labels, self.cfg.label_smoothing)

    def predict_logits(self, arrays: WindowArrays, batch_size: int = 512) -> np.ndarray:
        self.eval()
        out = []
        for start in range(0, len(arrays), batch_size):
            part = arrays.take(slice(start, start + batch_size))
            out.append(self.forward(part, training=False).data)
        return np.concatenate(out, axis=0) if out else np.zeros((0, self.n_apps))


def loss(logits: Tensor, labels, label_smoothing: float = 0.0) -> Tensor:
    """Mean cross-entropy with log-sum-exp stabilisation."""
    return cross_entropy(logits, labels, label_smoothing)


def predict_ranking(model: AppformerModel, arrays: WindowArrays, window_ids=None) -> list[RankedPrediction]:
    """Full app ranking per window: descending logit, ascending app index on ties."""
    logits = model.predict_logits(arrays)
    order = rank_from_logits(logits)
    ids = window_ids if window_ids is not None else [str(i) for i in range(len(arrays))]
    return [RankedPrediction(str(w), tuple(int(a) for a in row), int(y)) for w, row, y in zip(ids, order, arrays.labels)]


# -- training -----------------------------------------------------------------------
@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 128
    lr: float = 1e-3
    seed: int = 0
    grad_clip: float = 0.0
    select_best: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ConfigError("epochs, batch_size and lr must be positive")


@dataclass
class TrainResult:
    history: list[dict]
    best_epoch: int
    best_state: dict[str, np.ndarray]
    optimizer: Adam
    seconds: float = 0.0


def train(model: AppformerModel, train_arrays: WindowArrays, val_arrays: WindowArrays | None, cfg: TrainConfig, log=None) -> TrainResult:
    """Adam over seeded-shuffled mini-batches.

    After each epoch the training loss and validation metrics are recorded;
    the parameters with the best validation Hit@1 are restored at the end
    (ties keep the earlier epoch).
    """
    if len(train_arrays) == 0:
        raise AppformerError("training set is empty")
    rng = np.random.default_rng(cfg.seed)
    shuffle_rng = np.random.default_rng(rng.integers(2**63))
    dropout_rng = np.random.default_rng(rng.integers(2**63))
    opt = Adam(model.named_parameters(), lr=cfg.lr)
    history = []
    best_hit, best_epoch, best_state = -np.inf, 0, model.state_dict()
    t0 = time.perf_counter()
    n = len(train_arrays)
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        order = shuffle_rng.permutation(n)
        total, seen = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = train_arrays.take(idx)
            opt.zero_grad()
            logits = model.forward(batch, training=True, rng=dropout_rng)
            batch_loss = model.loss(logits, batch.labels)
            batch_loss.backward()
            if cfg.grad_clip > 0:
                clip_grad_norm(model.parameters(), cfg.grad_clip)
            opt.step()
            total += batch_loss.item() * len(idx)
            seen += len(idx)
        record = {"epoch": epoch, "train_loss": total / seen}
        if val_arrays is not None and len(val_arrays):
            report = evaluate_logits(model.predict_logits(val_arrays), val_arrays.labels)
            record["val"] = report.row()
            hit1 = report.hit[1]
        else:
            hit1 = -record["train_loss"]
        if not cfg.select_best or hit1 > best_hit:
            best_hit, best_epoch, best_state = hit1, epoch, model.state_dict()
        history.append(record)
        if log is not None:
            log(record)
    model.load_state_dict(best_state)
    model.eval()
    return TrainResult(history, best_epoch, best_state, opt, time.perf_counter() - t0)


def most_frequent_baseline(train_labels: np.ndarray, test_labels: np.ndarray, n_apps: int) -> float:
    """Hit@1 of always predicting the most common training label (lowest index on ties)."""
    top = int(np.argmax(np.bincount(np.asarray(train_labels), minlength=n_apps)))
    return float((np.asarray(test_labels) == top).mean())


def write_history(path, history: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in history:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def save_model(path, model: AppformerModel, result: TrainResult | None = None, seed: int | None = None, extra: dict | None = None) -> None:
    extra = dict(extra or {})
    extra["model_config"] = asdict(model.cfg)
    if result is not None:
        extra["best_epoch"] = result.best_epoch
    save_checkpoint(path, model.state_dict(), result.optimizer.state if result is not None else None, seed, extra)


def load_model(path, n_apps: int, n_users: int, poi_matrix: np.ndarray) -> tuple[AppformerModel, dict]:
    params, _, seed, extra = load_checkpoint(path)
    cfg = ModelConfig(**extra["model_config"])
    model = AppformerModel(cfg, n_apps, n_users, poi_matrix, seed=seed or 0)
    model.load_state_dict(params)
    model.eval()
    return model, extra
