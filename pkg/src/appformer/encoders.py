"""Encoders for the four input streams: apps, users, POIs and time."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError, VocabLookupError
from .nn import Embedding, Linear, Module
from .tensor import Tensor, add, concat

# month, day, weekday, hour, minute (0-based table indices)
TIME_CARDINALITIES = (12, 31, 7, 24, 60)
TIME_UNITS = ("month", "day", "weekday", "hour", "minute")


@dataclass(frozen=True)
class EncoderConfig:
    n_apps: int
    n_users: int
    d_app: int = 64
    d_user: int = 16
    d_time_unit: int = 12
    d_model: int = 128
    poi_dim: int = 17

    def __post_init__(self):
        if self.n_apps < 1 or self.n_users < 1:
            raise ConfigError("vocabularies must be non-empty")


@dataclass
class EncodedBatch:
    a: Tensor  # batch x m x d_app
    u: Tensor  # batch x m x d_user
    l: Tensor  # batch x m x d_model
    t: Tensor | None  # batch x m x d_model


def _check_ids(ids: np.ndarray, n: int, what: str) -> None:
    bad = ids[(ids < 0) | (ids >= n)]
    if bad.size:
        raise VocabLookupError(f"{what} id {int(bad.flat[0])} outside vocabulary of {n}")


class AppEncoder(Module):
    def __init__(self, n_apps: int, d_app: int, rng):
        self.embedding = Embedding(n_apps, d_app, rng)

    def __call__(self, app_ids) -> Tensor:
        ids = np.asarray(app_ids)
        _check_ids(ids, self.embedding.table.shape[0], "app")
        return self.embedding(ids)


class UserEncoder(Module):
    """One user id per window, repeated across the ``m`` positions."""

    def __init__(self, n_users: int, d_user: int, rng):
        self.embedding = Embedding(n_users, d_user, rng)

    def __call__(self, user_ids, m: int) -> Tensor:
        ids = np.asarray(user_ids)
        if ids.ndim != 1:
            raise ShapeError(f"user ids must be one per window, got shape {ids.shape}")
        _check_ids(ids, self.embedding.table.shape[0], "user")
        return self.embedding(np.repeat(ids[:, None], m, axis=1))


class PoiEncoder(Module):
    """Looks up each station's (center-replaced) POI vector and maps it to ``d_model``.

    Counts are compressed with ``log1p`` first; raw counts run into the
    tens and otherwise swamp the unit-scale app and user embeddings.
    """

    def __init__(self, poi_matrix: np.ndarray, d_model: int, rng):
        counts = np.asarray(poi_matrix, dtype=np.float64)
        if counts.ndim != 2:
            raise ShapeError(f"POI matrix must be 2-D, got {counts.shape}")
        if (counts < 0).any():
            raise ConfigError("POI counts must be non-negative")
        self.poi_matrix = np.log1p(counts)
        self.linear = Linear(self.poi_matrix.shape[1], d_model, rng)

    def __call__(self, station_idx) -> Tensor:
        idx = np.asarray(station_idx)
        _check_ids(idx, self.poi_matrix.shape[0], "station")
        return self.linear(Tensor(self.poi_matrix[idx]))


class TimeEncoder(Module):
    """Five per-unit embeddings concatenated, then a linear map to ``d_model``."""

    def __init__(self, d_unit: int, d_model: int, rng):
        self.tables = [Embedding(n, d_unit, rng) for n in TIME_CARDINALITIES]
        self.linear = Linear(d_unit * len(TIME_CARDINALITIES), d_model, rng)

    def __call__(self, time_idx) -> Tensor:
        idx = _check_time(time_idx)
        parts = [table(idx[..., j]) for j, table in enumerate(self.tables)]
        return self.linear(concat(parts, axis=-1))


class AdditiveTimeEncoder(Module):
    """Baseline: per-unit ``d_model``-wide embeddings summed, meant to be added to the input."""

    def __init__(self, d_model: int, rng):
        self.tables = [Embedding(n, d_model, rng) for n in TIME_CARDINALITIES]

    def __call__(self, time_idx) -> Tensor:
        idx = _check_time(time_idx)
        out = self.tables[0](idx[..., 0])
        for j in range(1, len(self.tables)):
            out = add(out, self.tables[j](idx[..., j]))
        return out


def _check_time(time_idx) -> np.ndarray:
    idx = np.asarray(time_idx)
    if idx.shape[-1] != len(TIME_CARDINALITIES):
        raise ShapeError(f"time features need {len(TIME_CARDINALITIES)} units on the last axis, got {idx.shape}")
    for j, (n, unit) in enumerate(zip(TIME_CARDINALITIES, TIME_UNITS)):
        col = idx[..., j]
        bad = col[(col < 0) | (col >= n)]
        if bad.size:
            raise VocabLookupError(f"{unit} index {int(bad.flat[0])} outside [0, {n})")
    return idx


def time_indices(month: int, day: int, weekday: int, hour: int, minute: int) -> tuple[int, int, int, int, int]:
    """Calendar values (month 1-12, day 1-31, Monday=0) to 0-based table indices."""
    return (month - 1, day - 1, weekday, hour, minute)


class MultiModalEncoder(Module):
    """Produces the ``a, u, l, t`` streams for a batch of index arrays."""

    def __init__(self, cfg: EncoderConfig, poi_matrix: np.ndarray, rng, time_mode: str = "appformer"):
        self.cfg = cfg
        self.time_mode = time_mode
        self.apps = AppEncoder(cfg.n_apps, cfg.d_app, rng)
        self.users = UserEncoder(cfg.n_users, cfg.d_user, rng)
        self.poi = PoiEncoder(poi_matrix, cfg.d_model, rng)
        if time_mode == "appformer":
            self.time = TimeEncoder(cfg.d_time_unit, cfg.d_model, rng)
        elif time_mode == "baseline_additive":
            self.time = AdditiveTimeEncoder(cfg.d_model, rng)
        elif time_mode == "none":
            self.time = None
        else:
            raise ConfigError(f"unknown time encoding {time_mode!r}")

    def __call__(self, app_idx, user_idx, time_idx, station_idx) -> EncodedBatch:
        app_idx = np.asarray(app_idx)
        if app_idx.ndim != 2:
            raise ShapeError(f"app ids must be batch x m, got {app_idx.shape}")
        m = app_idx.shape[1]
        a = self.apps(app_idx)
        u = self.users(user_idx, m)
        l = self.poi(station_idx)
        t = self.time(time_idx) if self.time is not None else None
        return EncodedBatch(a=a, u=u, l=l, t=t)
