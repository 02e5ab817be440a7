import math

import numpy as np
import pytest
from conftest import ANCHOR, H, sp
from hypothesis import given, settings
from hypothesis import strategies as st

from bayesic.dataset import (ANOMALOUS, NORMAL, UNKNOWN, AgentSequence, EmptyDatasetError, PoiIndex,
                             RowValidationError, SchemaError, Staypoint, build_dataset, build_vocabulary,
                             load_agent_labels, load_poi_index, load_staypoints, map_dataset_pois, map_poi,
                             save_agent_labels, save_staypoints, split_by_time)


def write(tmp_path, text, name="sp.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_unsorted_rows_sorted_on_load(tmp_path):
    p = write(tmp_path, "agent_id,arrival_epoch,duration_s,poi_type\n"
                        "1,300,60,home\n1,100,60,work\n1,200,60,home\n")
    ds = load_staypoints(p)
    assert [s.arrival_epoch for s in ds.agents[1]] == [100, 200, 300]


def test_zero_duration_names_line(tmp_path):
    p = write(tmp_path, "agent_id,arrival_epoch,duration_s,poi_type\n1,100,0,home\n")
    with pytest.raises(RowValidationError, match="line 2"):
        load_staypoints(p)


def test_vocabulary_rule(tmp_path):
    p = write(tmp_path, "agent_id,arrival_epoch,duration_s,poi_type\n1,100,60,work\n1,200,60,home\n")
    ds = load_staypoints(p)
    assert ds.poi_vocabulary == ("home", "work", UNKNOWN)
    assert ds.n_poi_types == 3


def test_missing_column_and_empty_file(tmp_path):
    with pytest.raises(SchemaError):
        load_staypoints(write(tmp_path, "agent_id,arrival_epoch,poi_type\n1,2,home\n"))
    with pytest.raises(EmptyDatasetError):
        load_staypoints(write(tmp_path, "agent_id,arrival_epoch,duration_s,poi_type\n"))


def test_schema_mapping_and_labels(tmp_path):
    p = write(tmp_path, "uid,t,dur,poi,label\n7,10,5,home,anomalous\n7,20,5,home,\n")
    ds = load_staypoints(p, schema={"agent_id": "uid", "arrival_epoch": "t", "duration_s": "dur",
                                    "poi_type": "poi"})
    labels = [s.label for s in ds.agents[7]]
    assert labels[0] == ANOMALOUS


def test_vocabulary_maps_unseen_to_unknown(tmp_path):
    p = write(tmp_path, "agent_id,arrival_epoch,duration_s,poi_type\n1,100,60,zoo\n")
    ds = load_staypoints(p, vocabulary=("home", UNKNOWN))
    assert next(ds.staypoints()).poi_type == UNKNOWN


def test_round_trip(tmp_path, two_agent_dataset):
    out = tmp_path / "rt.csv"
    save_staypoints(two_agent_dataset, out)
    again = load_staypoints(out)
    key = lambda d: [(s.agent_id, s.arrival_epoch, s.duration, s.poi_type) for s in d.staypoints()]
    assert key(again) == key(two_agent_dataset)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 10**6), st.floats(1, 1e5),
                          st.sampled_from(["home", "work", "a,b", "café"])), min_size=1, max_size=30))
def test_round_trip_property(tmp_path_factory, rows):
    ds = build_dataset(Staypoint(a, ANCHOR + t, d, p) for a, t, d, p in rows)
    path = tmp_path_factory.mktemp("rt") / "x.csv"
    save_staypoints(ds, path)
    again = load_staypoints(path)
    key = lambda d: sorted((s.agent_id, s.arrival_epoch, s.duration, s.poi_type) for s in d.staypoints())
    assert key(again) == key(ds)


def test_agent_labels_round_trip(tmp_path):
    labels = {1: NORMAL, 4: ANOMALOUS}
    save_agent_labels(labels, tmp_path / "l.csv")
    assert load_agent_labels(tmp_path / "l.csv") == labels


def test_sequence_validation():
    with pytest.raises(ValueError):
        AgentSequence(1, (sp(1, 5), sp(1, 1)))
    with pytest.raises(ValueError):
        AgentSequence(1, (sp(2, 1),))
    with pytest.raises(ValueError):
        Staypoint(1, 0, 0.0, "home")


# --- POI mapping -----------------------------------------------------------

M_PER_DEG_LAT = math.pi / 180 * 6_371_008.8


def brute_haversine(lat1, lon1, lat2, lon2, r=6_371_008.8):
    p1, p2 = math.radians(lat1), math.radians(lat2)
    a = math.sin((p2 - p1) / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(math.radians(lon2 - lon1) / 2) ** 2
    return 2 * r * math.asin(math.sqrt(a))


def test_exact_coordinates_map_to_poi():
    idx = PoiIndex(((1, "school", 34.05, -118.25),))
    assert map_poi((34.05, -118.25), idx) == "school"


def test_nearest_within_radius_wins():
    base = (34.0, -118.0)
    a = (base[0] + 14 / M_PER_DEG_LAT, base[1])
    b = (base[0] - 20 / M_PER_DEG_LAT, base[1])
    assert brute_haversine(*base, *a) == pytest.approx(14.0, abs=1e-6)
    assert brute_haversine(*base, *b) == pytest.approx(20.0, abs=1e-6)
    idx = PoiIndex(((1, "restaurant", *a), (2, "home", *b)))
    assert map_poi(base, idx, radius=15) == "restaurant"


def test_far_point_is_unknown():
    base = (34.0, -118.0)
    idx = PoiIndex(((1, "home", base[0] + 16 / M_PER_DEG_LAT, base[1]),))
    assert map_poi(base, idx, radius=15) == UNKNOWN
    assert map_poi(base, PoiIndex(()), radius=15) == UNKNOWN


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_mapped_distance_within_radius(seed):
    rng = np.random.default_rng(seed)
    entries = tuple((i, f"t{i % 3}", 34 + rng.uniform(0, 1e-3), -118 + rng.uniform(0, 1e-3)) for i in range(8))
    idx = PoiIndex(entries)
    pt = (34 + rng.uniform(0, 1e-3), -118 + rng.uniform(0, 1e-3))
    out = map_poi(pt, idx, radius=30)
    if out != UNKNOWN:
        assert min(brute_haversine(*pt, e[2], e[3]) for e in entries if e[1] == out) <= 30 + 1e-9


def test_poi_index_file_and_dataset_mapping(tmp_path):
    p = write(tmp_path, "poi_id,poi_type,lat,lon\n2,work,10.0,10.0\n1,home,0.0,0.0\n", "pois.csv")
    idx = load_poi_index(p)
    assert [e[0] for e in idx.entries] == [1, 2]
    ds = build_dataset([sp(1, 1, location=(0.0, 0.0)), sp(1, 2, location=(10.0, 10.0)), sp(1, 3)])
    mapped = map_dataset_pois(ds, idx)
    assert [s.poi_type for s in mapped.staypoints()] == ["home", "work", UNKNOWN]
    assert mapped.poi_vocabulary == ("home", "work", UNKNOWN)


# --- splitting -------------------------------------------------------------


def test_split_boundary_past_end(two_agent_dataset):
    _, end = two_agent_dataset.time_range()
    tr, te = split_by_time(two_agent_dataset, end)
    assert len(te) == 0 and len(tr) == len(two_agent_dataset)


def test_split_staypoint_at_boundary_goes_to_test():
    ds = build_dataset([sp(1, 0), sp(1, 5), sp(1, 9)])
    tr, te = split_by_time(ds, ANCHOR + 5 * H)
    assert [s.arrival_epoch for s in te.staypoints()] == [ANCHOR + 5 * H, ANCHOR + 9 * H]


def test_split_counts_and_partition():
    ds = build_dataset([sp(1, i) for i in range(10)] + [sp(2, 20)])
    tr, te = split_by_time(ds, ANCHOR + 6 * H)
    assert len(tr.agents[1]) == 6 and len(te.agents[1]) == 4
    assert len(tr) + len(te) == len(ds)
    assert te.cold_start_agents == frozenset({2})


def test_split_boundary_outside_range():
    ds = build_dataset([sp(1, 1), sp(1, 2)])
    with pytest.raises(ValueError):
        split_by_time(ds, ANCHOR - 10)


def test_build_vocabulary():
    assert build_vocabulary(["b", "a", UNKNOWN, "b"]) == ("a", "b", UNKNOWN)
