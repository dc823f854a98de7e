"""
Cleaning, day-based splitting and window extraction.

Two published protocols are supported:

``paulci``
    Collapse runs of the same (user, station, app) lasting more than a
    minute into their first record. Days ``1..D-2`` train, ``D-1``
    validation, ``D`` test (5/1/1 for a week).
``dugn``
    Drop users with fewer than 50 records, then apps with fewer than 5.
    Records less than 300 s apart form a session. Days ``1..D-1`` train,
    day ``D`` test; windows never cross a session boundary.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from datetime import date, datetime, timedelta
from itertools import groupby
from pathlib import Path

import numpy as np

from .data import UsageRecord, format_timestamp, parse_timestamp
from .encoders import time_indices
from .errors import ConfigError, VocabLookupError

PROTOCOLS = ("paulci", "dugn")
PAULCI_MERGE_SECONDS = 60
DUGN_MIN_USER_RECORDS = 50
DUGN_MIN_APP_RECORDS = 5
DUGN_SESSION_GAP_SECONDS = 300
DUGN_VAL_FRACTION = 0.1


def _check_protocol(protocol: str) -> None:
    if protocol not in PROTOCOLS:
        raise ConfigError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")


def sort_records(records) -> list[UsageRecord]:
    """Order by (user, timestamp); ties keep their input order."""
    return sorted(records, key=lambda r: (r.user_id, r.timestamp))


def decode_time(ts: datetime) -> tuple[int, int, int, int, int]:
    """(month 1-12, day 1-31, weekday Monday=0, hour, minute)."""
    return (ts.month, ts.day, ts.weekday(), ts.hour, ts.minute)


# -- cleaning ---------------------------------------------------------------------
def clean_paulci(records) -> list[UsageRecord]:
    """Collapse maximal same-(user, station, app) runs whose span exceeds 60 s.

    The merged record keeps the run's first timestamp. Runs spanning 60 s or
    less are kept unchanged.
    """
    out: list[UsageRecord] = []
    for _, run in groupby(sort_records(records), key=lambda r: (r.user_id,)):
        stream = list(run)
        i = 0
        while i < len(stream):
            j = i
            key = (stream[i].base_station_id, stream[i].app_id)
            while j + 1 < len(stream) and (stream[j + 1].base_station_id, stream[j + 1].app_id) == key:
                j += 1
            span = (stream[j].timestamp - stream[i].timestamp).total_seconds()
            if j > i and span > PAULCI_MERGE_SECONDS:
                out.append(stream[i])
            else:
                out.extend(stream[i : j + 1])
            i = j + 1
    return out


@dataclass(frozen=True)
class Session:
    session_id: int
    user_id: int
    start: datetime
    end: datetime
    n_records: int


def filter_dugn(records) -> list[UsageRecord]:
    """Drop users with fewer than 50 records, then apps with fewer than 5 among the rest."""
    records = sort_records(records)
    per_user = Counter(r.user_id for r in records)
    records = [r for r in records if per_user[r.user_id] >= DUGN_MIN_USER_RECORDS]
    per_app = Counter(r.app_id for r in records)
    return [r for r in records if per_app[r.app_id] >= DUGN_MIN_APP_RECORDS]


def sessionize(records, gap_seconds: int = DUGN_SESSION_GAP_SECONDS) -> tuple[list[UsageRecord], list[Session]]:
    """Number sessions per user; a gap of ``gap_seconds`` or more starts a new one."""
    out: list[UsageRecord] = []
    sessions: list[Session] = []
    prev = None
    for r in sort_records(records):
        if prev is None or r.user_id != prev.user_id or (r.timestamp - prev.timestamp).total_seconds() >= gap_seconds:
            sessions.append(Session(len(sessions), r.user_id, r.timestamp, r.timestamp, 0))
        s = sessions[-1]
        sessions[-1] = replace(s, end=r.timestamp, n_records=s.n_records + 1)
        out.append(replace(r, session_id=s.session_id))
        prev = r
    return out, sessions


def clean_dugn(records) -> tuple[list[UsageRecord], list[Session]]:
    """Filter sparse users, then rare apps, then cut sessions at gaps of 300 s or more."""
    return sessionize(filter_dugn(records))


def clean(records, protocol: str):
    _check_protocol(protocol)
    if protocol == "paulci":
        return clean_paulci(records), []
    return clean_dugn(records)


# -- splitting --------------------------------------------------------------------
@dataclass
class SplitResult:
    protocol: str
    train: list[UsageRecord]
    val: list[UsageRecord]
    test: list[UsageRecord]
    day_roles: dict[str, str]

    def manifest(self) -> dict:
        return {
            "protocol": self.protocol,
            "day_roles": self.day_roles,
            "counts": {"train": len(self.train), "val": len(self.val), "test": len(self.test)},
        }


def day_roles(first: date, last: date, protocol: str) -> dict[str, str]:
    _check_protocol(protocol)
    n_days = (last - first).days + 1
    need = 3 if protocol == "paulci" else 2
    if n_days < need:
        raise ConfigError(f"{protocol} split needs at least {need} calendar days, corpus spans {n_days}")
    roles = {}
    for i in range(n_days):
        day = (first + timedelta(days=i)).isoformat()
        if protocol == "paulci":
            roles[day] = "train" if i < n_days - 2 else ("val" if i == n_days - 2 else "test")
        else:
            roles[day] = "train" if i < n_days - 1 else "test"
    return roles


def split(records, protocol: str) -> SplitResult:
    """Partition records by calendar day of their timestamp."""
    _check_protocol(protocol)
    records = list(records)
    if not records:
        raise ConfigError("cannot split an empty corpus")
    days = [r.timestamp.date() for r in records]
    roles = day_roles(min(days), max(days), protocol)
    parts: dict[str, list[UsageRecord]] = {"train": [], "val": [], "test": []}
    for r, d in zip(records, days):
        parts[roles[d.isoformat()]].append(r)
    return SplitResult(protocol, parts["train"], parts["val"], parts["test"], roles)


# -- windows ----------------------------------------------------------------------
@dataclass(frozen=True)
class Window:
    window_id: str
    user_id: int
    app_ids: tuple[int, ...]
    time_feats: tuple[tuple[int, int, int, int, int], ...]
    station_ids: tuple[int, ...]
    label_app_id: int
    label_timestamp: datetime
    session_id: int | None = None

    @property
    def m(self) -> int:
        return len(self.app_ids)

    def to_json(self) -> dict:
        d = asdict(self)
        d["label_timestamp"] = format_timestamp(self.label_timestamp)
        d["app_ids"] = list(self.app_ids)
        d["station_ids"] = list(self.station_ids)
        d["time_feats"] = [list(t) for t in self.time_feats]
        return d

    @classmethod
    def from_json(cls, d: dict) -> "Window":
        return cls(
            window_id=d["window_id"],
            user_id=int(d["user_id"]),
            app_ids=tuple(d["app_ids"]),
            time_feats=tuple(tuple(t) for t in d["time_feats"]),
            station_ids=tuple(d["station_ids"]),
            label_app_id=int(d["label_app_id"]),
            label_timestamp=parse_timestamp(d["label_timestamp"]),
            session_id=d.get("session_id"),
        )


def extract_windows(records, m: int = 4, protocol: str = "paulci", tag: str = "") -> list[Window]:
    """Stride-1 windows of ``m`` events plus the next event's app as the label.

    Streams are per user, and additionally per session under ``dugn``.
    """
    _check_protocol(protocol)
    if m < 1:
        raise ConfigError(f"window length must be >= 1, got {m}")
    if protocol == "dugn":
        key = lambda r: (r.user_id, r.session_id)  # noqa: E731
    else:
        key = lambda r: (r.user_id,)  # noqa: E731
    windows = []
    for group, run in groupby(sort_records(records), key=key):
        stream = list(run)
        for i in range(len(stream) - m):
            ctx = stream[i : i + m]
            nxt = stream[i + m]
            windows.append(
                Window(
                    window_id=f"{tag}u{stream[0].user_id}-{format_timestamp(nxt.timestamp)}-{i}",
                    user_id=stream[0].user_id,
                    app_ids=tuple(r.app_id for r in ctx),
                    time_feats=tuple(decode_time(r.timestamp) for r in ctx),
                    station_ids=tuple(r.base_station_id for r in ctx),
                    label_app_id=nxt.app_id,
                    label_timestamp=nxt.timestamp,
                    session_id=stream[0].session_id if protocol == "dugn" else None,
                )
            )
    return windows


def write_windows(path, windows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for w in windows:
            fh.write(json.dumps(w.to_json(), sort_keys=True) + "\n")


def read_windows(path) -> list[Window]:
    with open(path, encoding="utf-8") as fh:
        return [Window.from_json(json.loads(line)) for line in fh if line.strip()]


# -- vocabulary and batching ------------------------------------------------------
@dataclass
class WindowArrays:
    app_idx: np.ndarray  # batch x m
    user_idx: np.ndarray  # batch
    time_idx: np.ndarray  # batch x m x 5
    station_idx: np.ndarray  # batch x m
    labels: np.ndarray  # batch

    def __len__(self) -> int:
        return len(self.labels)

    def take(self, idx) -> "WindowArrays":
        return WindowArrays(self.app_idx[idx], self.user_idx[idx], self.time_idx[idx], self.station_idx[idx], self.labels[idx])


@dataclass
class Vocabulary:
    """Sorted raw-id lists for apps, users and stations; positions are model indices."""

    apps: list[int]
    users: list[int]
    stations: list[int]
    _app_index: dict = field(default=None, repr=False)
    _user_index: dict = field(default=None, repr=False)
    _station_index: dict = field(default=None, repr=False)

    def __post_init__(self):
        self._app_index = {a: i for i, a in enumerate(self.apps)}
        self._user_index = {u: i for i, u in enumerate(self.users)}
        self._station_index = {s: i for i, s in enumerate(self.stations)}

    @classmethod
    def build(cls, records, stations=None) -> "Vocabulary":
        records = list(records)
        station_ids = set(r.base_station_id for r in records)
        if stations is not None:
            station_ids |= set(stations)
        return cls(
            apps=sorted({r.app_id for r in records}),
            users=sorted({r.user_id for r in records}),
            stations=sorted(station_ids),
        )

    @property
    def n_apps(self) -> int:
        return len(self.apps)

    @property
    def n_users(self) -> int:
        return len(self.users)

    def app_index(self, app_id: int) -> int:
        try:
            return self._app_index[app_id]
        except KeyError:
            raise VocabLookupError(f"app id {app_id} not in vocabulary") from None

    def encode(self, windows) -> WindowArrays:
        windows = list(windows)
        if not windows:
            m = 0
            return WindowArrays(np.zeros((0, m), int), np.zeros(0, int), np.zeros((0, m, 5), int), np.zeros((0, m), int), np.zeros(0, int))
        try:
            app = np.array([[self._app_index[a] for a in w.app_ids] for w in windows], dtype=np.int64)
            user = np.array([self._user_index[w.user_id] for w in windows], dtype=np.int64)
            station = np.array([[self._station_index[s] for s in w.station_ids] for w in windows], dtype=np.int64)
            labels = np.array([self._app_index[w.label_app_id] for w in windows], dtype=np.int64)
        except KeyError as exc:
            raise VocabLookupError(f"id {exc.args[0]} missing from vocabulary") from None
        times = np.array([[time_indices(*t) for t in w.time_feats] for w in windows], dtype=np.int64)
        return WindowArrays(app, user, times, station, labels)

    def to_json(self) -> dict:
        return {"apps": self.apps, "users": self.users, "stations": self.stations}

    @classmethod
    def from_json(cls, d: dict) -> "Vocabulary":
        return cls(apps=list(d["apps"]), users=list(d["users"]), stations=list(d["stations"]))


# -- end to end -------------------------------------------------------------------
@dataclass
class PreparedData:
    protocol: str
    m: int
    train: list[Window]
    val: list[Window]
    test: list[Window]
    vocab: Vocabulary
    split: SplitResult
    sessions: list[Session]


def prepare(records, protocol: str = "paulci", m: int = 4, stations=None) -> PreparedData:
    """Clean, build the vocabulary on the cleaned corpus, split by day, and window.

    Under ``dugn`` there is no validation day; the latest 10% of training
    windows (by label time) are held out instead.
    """
    cleaned, sessions = clean(records, protocol)
    vocab = Vocabulary.build(cleaned, stations)
    parts = split(cleaned, protocol)
    train = extract_windows(parts.train, m, protocol, tag="train-")
    test = extract_windows(parts.test, m, protocol, tag="test-")
    if protocol == "paulci":
        val = extract_windows(parts.val, m, protocol, tag="val-")
    else:
        ordered = sorted(train, key=lambda w: (w.label_timestamp, w.window_id))
        n_val = int(round(DUGN_VAL_FRACTION * len(ordered)))
        cut = len(ordered) - n_val
        held = {w.window_id for w in ordered[cut:]}
        val = [w for w in train if w.window_id in held]
        train = [w for w in train if w.window_id not in held]
    return PreparedData(protocol, m, train, val, test, vocab, parts, sessions)
