"""
Usage-record and POI file formats, plus a synthetic corpus generator.

``records.csv`` has the header ``user_id,timestamp,base_station_id,app_id``
with 14-digit local timestamps (``YYYYMMDDHHMMSS``). ``poi.csv`` has a
``base_station_id`` column followed by the 17 POI category counts in
:data:`POI_CATEGORIES` order.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError

RECORD_HEADER = ("user_id", "timestamp", "base_station_id", "app_id")

POI_CATEGORIES = (
    "Medical care",
    "Hotel",
    "Business affairs",
    "Life service",
    "Transportation hub",
    "Culture",
    "Sports",
    "Residence",
    "Entertainment and leisure",
    "Scenic spot",
    "Government",
    "Factory",
    "Shopping",
    "Restaurant",
    "Education",
    "Landmark",
    "Other",
)
POI_DIM = len(POI_CATEGORIES)


@dataclass(frozen=True, order=True)
class UsageRecord:
    user_id: int
    timestamp: datetime
    base_station_id: int
    app_id: int
    # filled in by session-based cleaning; not part of the file format
    session_id: int | None = field(default=None, compare=False)


@dataclass(frozen=True)
class PoiVector:
    base_station_id: int
    counts: tuple[int, ...]

    def __post_init__(self):
        if len(self.counts) != POI_DIM:
            raise ValueError(f"POI vector needs {POI_DIM} counts, got {len(self.counts)}")
        if any(c < 0 for c in self.counts):
            raise ValueError(f"POI counts must be non-negative: {self.counts}")


def parse_timestamp(text: str) -> datetime:
    """Parse ``YYYYMMDDHHMMSS`` into a naive datetime; rejects impossible dates."""
    if len(text) != 14 or not text.isdigit():
        raise ValueError(f"timestamp must be 14 digits, got {text!r}")
    try:
        return datetime(int(text[0:4]), int(text[4:6]), int(text[6:8]), int(text[8:10]), int(text[10:12]), int(text[12:14]))
    except ValueError as exc:
        raise ValueError(f"invalid calendar datetime {text!r}: {exc}") from None


def format_timestamp(ts: datetime) -> str:
    return ts.strftime("%Y%m%d%H%M%S")


def _int_field(text: str, name: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise ValueError(f"{name} is not an integer: {text!r}") from None
    if value < 0:
        raise ValueError(f"{name} must be >= 0, got {value}")
    return value


def parse_records(path) -> list[UsageRecord]:
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != RECORD_HEADER:
            raise ParseError(f"expected header {','.join(RECORD_HEADER)}, got {header}", line=1, path=path)
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != 4:
                raise ParseError(f"expected 4 columns, got {len(row)}", line=line, path=path)
            try:
                records.append(
                    UsageRecord(
                        _int_field(row[0], "user_id"),
                        parse_timestamp(row[1].strip()),
                        _int_field(row[2], "base_station_id"),
                        _int_field(row[3], "app_id"),
                    )
                )
            except ValueError as exc:
                raise ParseError(str(exc), line=line, path=path) from None
    return records


def parse_poi(path) -> dict[int, PoiVector]:
    out: dict[int, PoiVector] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) != POI_DIM + 1:
            raise ParseError(f"expected {POI_DIM + 1} header columns, got {0 if header is None else len(header)}", line=1, path=path)
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != POI_DIM + 1:
                raise ParseError(f"expected {POI_DIM + 1} columns, got {len(row)}", line=line, path=path)
            try:
                sid = _int_field(row[0], "base_station_id")
                counts = tuple(_int_field(c, POI_CATEGORIES[i]) for i, c in enumerate(row[1:]))
            except ValueError as exc:
                raise ParseError(str(exc), line=line, path=path) from None
            if sid in out:
                raise ParseError(f"duplicate base station id {sid}", line=line, path=path)
            out[sid] = PoiVector(sid, counts)
    return out


def write_records(path, records) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RECORD_HEADER)
        for r in records:
            writer.writerow((r.user_id, format_timestamp(r.timestamp), r.base_station_id, r.app_id))


def write_poi(path, poi_map: dict[int, PoiVector]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("base_station_id",) + POI_CATEGORIES)
        for sid in sorted(poi_map):
            writer.writerow((sid,) + tuple(poi_map[sid].counts))


# -- synthetic corpora ----------------------------------------------------------
@dataclass(frozen=True)
class SynthConfig:
    n_users: int = 50
    n_apps: int = 40
    n_stations: int = 60
    days: int = 7
    records_per_user_day: int = 10
    n_latent_poi_clusters: int = 5
    seed: int = 0
    zipf_exponent: float = 1.0
    start_date: str = "2016-04-20"
    # log-weight added to favoured apps by each factor of the mixture
    user_strength: float = 2.5
    hour_strength: float = 2.0
    cluster_strength: float = 2.5
    favourites_per_factor: int = 3
    transition_strength: float = 5.0
    poi_noise: float = 0.08

    def __post_init__(self):
        for name in ("n_users", "n_apps", "n_stations", "days", "records_per_user_day", "n_latent_poi_clusters"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"synth.{name} must be positive")
        if self.days < 3:
            raise ConfigError("synth.days must be >= 3 so both split protocols have data")
        if self.n_latent_poi_clusters > self.n_stations:
            raise ConfigError("more latent POI clusters than stations")
        if not 0.0 <= self.poi_noise <= 1.0:
            raise ConfigError("synth.poi_noise must lie in [0, 1]")
        try:
            datetime.strptime(self.start_date, "%Y-%m-%d")
        except ValueError:
            raise ConfigError(f"synth.start_date must be YYYY-MM-DD, got {self.start_date!r}") from None


# hour-of-day buckets: night, morning, afternoon, evening
DAY_PARTS = ((0, 6), (6, 12), (12, 18), (18, 24))
# relative chance of an event in each hour of the day
_HOUR_WEIGHTS = np.array([0.3, 0.2, 0.1, 0.1, 0.1, 0.3, 0.8, 1.5, 2.0, 1.8, 1.5, 1.5, 2.0, 1.8, 1.5, 1.5, 1.6, 1.8, 2.0, 2.2, 2.3, 2.2, 1.6, 0.8])


def day_part(hour: int) -> int:
    for i, (lo, hi) in enumerate(DAY_PARTS):
        if lo <= hour < hi:
            return i
    raise ValueError(f"hour out of range: {hour}")


def _favourites(rng, n_apps, k):
    return np.sort(rng.choice(n_apps, size=min(k, n_apps), replace=False))


def synth_corpus(cfg: SynthConfig) -> tuple[list[UsageRecord], dict[int, PoiVector], dict]:
    """Generate records, POI vectors and a ground-truth manifest in memory."""
    rng = np.random.default_rng(cfg.seed)
    n_c = cfg.n_latent_poi_clusters

    prototypes = rng.poisson(rng.uniform(0.5, 20.0, size=(n_c, POI_DIM))).astype(int)
    station_cluster = rng.permutation(np.arange(cfg.n_stations) % n_c)
    poi_map: dict[int, PoiVector] = {}
    for sid in range(cfg.n_stations):
        vec = prototypes[station_cluster[sid]].copy()
        noisy = rng.random(POI_DIM) < cfg.poi_noise
        vec[noisy] += rng.choice([-2, -1, 1, 2], size=int(noisy.sum()))
        poi_map[sid] = PoiVector(sid, tuple(int(v) for v in np.maximum(vec, 0)))

    ranks = np.arange(1, cfg.n_apps + 1, dtype=float)
    base = ranks ** -cfg.zipf_exponent
    base /= base.sum()
    fav = cfg.favourites_per_factor
    user_fav = np.array([_favourites(rng, cfg.n_apps, fav) for _ in range(cfg.n_users)])
    part_fav = np.array([_favourites(rng, cfg.n_apps, fav) for _ in DAY_PARTS])
    cluster_fav = np.array([_favourites(rng, cfg.n_apps, fav) for _ in range(n_c)])

    def onehot(rows):
        out = np.zeros((len(rows), cfg.n_apps))
        for i, r in enumerate(rows):
            out[i, r] = 1.0
        return out

    user_boost, part_boost, cluster_boost = onehot(user_fav), onehot(part_fav), onehot(cluster_fav)
    # each app has one preferred follower
    successor = rng.permutation(cfg.n_apps)

    # home / work / two other stations per user
    user_stations = np.array([rng.choice(cfg.n_stations, size=min(4, cfg.n_stations), replace=cfg.n_stations < 4) for _ in range(cfg.n_users)])
    hour_p = _HOUR_WEIGHTS / _HOUR_WEIGHTS.sum()
    start = datetime.strptime(cfg.start_date, "%Y-%m-%d")

    records: list[UsageRecord] = []
    for u in range(cfg.n_users):
        home, work, *others = user_stations[u]
        prev = None
        for d in range(cfg.days):
            day0 = start + timedelta(days=d)
            weekday = day0.weekday() < 5
            seconds = np.sort(rng.choice(24, size=cfg.records_per_user_day, p=hour_p) * 3600 + rng.integers(0, 3600, size=cfg.records_per_user_day))
            for sec in seconds:
                ts = day0 + timedelta(seconds=int(sec))
                hour = ts.hour
                at_work = weekday and 9 <= hour < 18
                r = rng.random()
                if r < 0.7:
                    station = work if at_work else home
                elif r < 0.85 or not others:
                    station = home if at_work else work
                else:
                    station = others[rng.integers(len(others))]
                logits = (
                    np.log(base)
                    + cfg.user_strength * user_boost[u]
                    + cfg.hour_strength * part_boost[day_part(hour)]
                    + cfg.cluster_strength * cluster_boost[station_cluster[station]]
                )
                if prev is not None:
                    logits[successor[prev]] += cfg.transition_strength
                p = np.exp(logits - logits.max())
                p /= p.sum()
                app = int(rng.choice(cfg.n_apps, p=p))
                prev = app
                records.append(UsageRecord(u, ts, int(station), app))

    manifest = {
        "seed": cfg.seed,
        "config": asdict(cfg),
        "station_cluster": {str(s): int(c) for s, c in enumerate(station_cluster)},
        "prototypes": prototypes.tolist(),
        "mixture": {
            "zipf_exponent": cfg.zipf_exponent,
            "base_weights": base.tolist(),
            "user_strength": cfg.user_strength,
            "hour_strength": cfg.hour_strength,
            "cluster_strength": cfg.cluster_strength,
            "user_favourites": user_fav.tolist(),
            "day_part_favourites": part_fav.tolist(),
            "day_parts": [list(p) for p in DAY_PARTS],
            "cluster_favourites": cluster_fav.tolist(),
            "transition_strength": cfg.transition_strength,
            "successor": successor.tolist(),
        },
        "user_stations": user_stations.tolist(),
        "n_records": len(records),
    }
    return records, poi_map, manifest


@dataclass(frozen=True)
class SynthOutput:
    records: Path
    poi: Path
    manifest: Path


def synth_generate(cfg: SynthConfig, out_dir) -> SynthOutput:
    """Write ``records.csv``, ``poi.csv`` and ``manifest.json`` under ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records, poi_map, manifest = synth_corpus(cfg)
    paths = SynthOutput(out_dir / "records.csv", out_dir / "poi.csv", out_dir / "manifest.json")
    write_records(paths.records, records)
    write_poi(paths.poi, poi_map)
    with open(paths.manifest, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths
