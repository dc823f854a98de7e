from datetime import datetime

import numpy as np
import pytest

from appformer.data import (
    POI_CATEGORIES,
    PoiVector,
    SynthConfig,
    UsageRecord,
    parse_poi,
    parse_records,
    parse_timestamp,
    synth_corpus,
    synth_generate,
    write_poi,
    write_records,
)
from appformer.errors import ConfigError, ParseError


def test_poi_schema_has_seventeen_categories():
    assert len(POI_CATEGORIES) == 17
    assert POI_CATEGORIES[0] == "Medical care" and POI_CATEGORIES[-1] == "Other"


def test_parse_timestamp():
    assert parse_timestamp("20160420235959") == datetime(2016, 4, 20, 23, 59, 59)
    for bad in ("20161320000000", "20160431000000", "2016042000000", "2016042000000x"):
        with pytest.raises(ValueError):
            parse_timestamp(bad)


def test_records_round_trip(tmp_path):
    recs = [UsageRecord(3, datetime(2016, 4, 20, 8, 0, 5), 17, 2), UsageRecord(0, datetime(2016, 4, 21, 0, 0, 0), 1, 9)]
    write_records(tmp_path / "r.csv", recs)
    assert (tmp_path / "r.csv").read_bytes().startswith(b"user_id,timestamp,base_station_id,app_id\n3,20160420080005,17,2\n")
    assert parse_records(tmp_path / "r.csv") == recs


def test_poi_round_trip(tmp_path):
    poi = {5: PoiVector(5, tuple(range(17))), 2: PoiVector(2, (0,) * 17)}
    write_poi(tmp_path / "p.csv", poi)
    assert parse_poi(tmp_path / "p.csv") == poi


@pytest.mark.parametrize(
    "body,line,msg",
    [
        ("1,20160420080000,3\n", 2, "4 columns"),
        ("1,20160420080000,3,4\n1,20161320080000,3,4\n", 3, "invalid calendar"),
        ("1,20160420080000,-3,4\n", 2, "base_station_id"),
        ("x,20160420080000,3,4\n", 2, "user_id"),
    ],
)
def test_record_errors_carry_line_numbers(tmp_path, body, line, msg):
    path = tmp_path / "r.csv"
    path.write_text("user_id,timestamp,base_station_id,app_id\n" + body)
    with pytest.raises(ParseError, match=msg) as exc:
        parse_records(path)
    assert exc.value.line == line
    assert f"r.csv:{line}:" in str(exc.value)


def test_record_header_is_checked(tmp_path):
    path = tmp_path / "r.csv"
    path.write_text("uid,ts,station,app\n")
    with pytest.raises(ParseError):
        parse_records(path)


def test_poi_errors(tmp_path):
    head = "base_station_id," + ",".join(POI_CATEGORIES) + "\n"
    row = ",".join(["0"] * 17)
    path = tmp_path / "p.csv"
    path.write_text(head + f"1,{row}\n1,{row}\n")
    with pytest.raises(ParseError, match="duplicate") as exc:
        parse_poi(path)
    assert exc.value.line == 3
    path.write_text(head + f"1,{row},0\n")
    with pytest.raises(ParseError, match="columns"):
        parse_poi(path)
    path.write_text(head + "1," + ",".join(["0"] * 16 + ["-1"]) + "\n")
    with pytest.raises(ParseError, match="Other"):
        parse_poi(path)


def test_synth_is_deterministic_and_well_formed(tmp_path):
    cfg = SynthConfig(n_users=5, n_apps=8, n_stations=10, days=3, records_per_user_day=6, seed=3)
    r1, p1, m1 = synth_corpus(cfg)
    r2, p2, m2 = synth_corpus(cfg)
    assert r1 == r2 and p1 == p2 and m1 == m2
    assert len(r1) == 5 * 3 * 6
    assert {r.app_id for r in r1} <= set(range(8))
    assert sorted(p1) == list(range(10))
    assert len(set(m1["station_cluster"].values())) == cfg.n_latent_poi_clusters
    out = synth_generate(cfg, tmp_path)
    assert parse_records(out.records) == sorted(r1, key=lambda r: (r.user_id, r.timestamp))
    assert parse_poi(out.poi) == p1


def test_synth_different_seeds_differ():
    a, _, _ = synth_corpus(SynthConfig(n_users=3, days=3, seed=0))
    b, _, _ = synth_corpus(SynthConfig(n_users=3, days=3, seed=1))
    assert a != b


def test_synth_planted_prototypes_are_recoverable():
    _, poi, manifest = synth_corpus(SynthConfig())
    protos = np.array(manifest["prototypes"])
    for sid, vec in poi.items():
        c = manifest["station_cluster"][str(sid)]
        dist = np.abs(protos - np.array(vec.counts)).sum(axis=1)
        assert dist.argmin() == c


def test_synth_config_validation():
    with pytest.raises(ConfigError):
        SynthConfig(days=2)
    with pytest.raises(ConfigError):
        SynthConfig(n_stations=3, n_latent_poi_clusters=5)
    with pytest.raises(ConfigError):
        SynthConfig(start_date="2016/04/20")
