import logging

import pytest
from hypothesis import given, strategies as st

from mobinfer.config import PipelineConfig, load_config, parse_hhmm
from mobinfer.ingest import (
    AGE_CLASSES, SchemaError, age_class, bin_labels, build_persons, children_class,
    clean_trips, gender_class, income_class, load_dataset, load_tables, write_trips_csv,
)

from conftest import PERSON_HEADER, TRIP_HEADER, make_trip

GOOD = [
    "p1,h1,2019,2019-04-08,home,work,drive,08:00,08:20,20,10.5,0,0",
    "p1,h1,2019,2019-04-08,work,home,drive,17:00,17:25,25,10.5,0,0",
    "p2,h1,2019,2019-04-08,home,shopping,walk|transit,10:00,10:30,30,3,1,0",
]


def test_well_formed_file_parses_every_row(write_csv):
    tables = load_tables(write_csv("t.csv", TRIP_HEADER, GOOD))
    assert len(tables.trips) == 3
    assert tables.rejects == []


def test_non_numeric_distance_is_rejected_with_tag(write_csv):
    rows = GOOD[:2] + ["p1,h1,2019,2019-04-08,home,work,drive,08:00,08:20,20,far,0,0"]
    tables = load_tables(write_csv("t.csv", TRIP_HEADER, rows))
    assert len(tables.trips) == 2
    assert [r.reason for r in tables.rejects] == ["bad_distance"]
    assert tables.rejects[0].row == 4


def test_extra_columns_are_ignored_with_warning(write_csv, caplog):
    rows = [r + ",x" for r in GOOD]
    path = write_csv("t.csv", TRIP_HEADER + ",comment", rows)
    with caplog.at_level(logging.WARNING):
        tables = load_tables(path)
    assert len(tables.trips) == 3
    assert any("comment" in w for w in tables.warnings)
    assert "comment" in caplog.text


def test_missing_required_column_is_fatal(write_csv):
    header = TRIP_HEADER.replace(",distance_km", "")
    rows = [",".join(r.split(",")[:10] + r.split(",")[11:]) for r in GOOD]
    with pytest.raises(SchemaError):
        load_tables(write_csv("t.csv", header, rows))


def test_blank_duration_is_derived_from_clock_times(write_csv):
    rows = ["p1,h1,2019,2019-04-08,home,work,drive,23:50,00:10,,4,0,0"]
    tables = load_tables(write_csv("t.csv", TRIP_HEADER, rows))
    assert tables.trips[0]["duration_min"] == 20.0


def _clean_one(**over):
    t = make_trip("home", "work", "drive", dur=10.0, dist=2.0).as_row()
    t.update(over)
    return clean_trips([t])


def test_ordinary_trip_is_retained():
    trips, rep = _clean_one()
    assert len(trips) == 1 and rep.retained == 1


@pytest.mark.parametrize("over, category", [
    ({"distance_km": 0.0}, "zero_or_missing_spatial"),
    ({"distance_km": None}, "zero_or_missing_spatial"),
    ({"geocoded": False}, "zero_or_missing_spatial"),
    ({"duration_min": -5.0}, "negative_duration"),
    ({"dest_purpose": ""}, "missing_purpose"),
    ({"origin_purpose": "moon"}, "missing_purpose"),
    ({"modes": []}, "blank_mode"),
    ({"modes": ["hovercraft"]}, "blank_mode"),
])
def test_exclusion_categories(over, category):
    trips, rep = _clean_one(**over)
    assert trips == []
    assert rep.excluded[category] == 1


def test_first_violated_rule_wins():
    trips, rep = _clean_one(dest_purpose="", distance_km=0.0, duration_min=-1.0)
    assert rep.excluded["missing_purpose"] == 1
    assert sum(rep.excluded.values()) == 1


def test_modes_are_canonicalised_and_ordered():
    trips, _ = _clean_one(modes=["Walk", "transit", "walk"])
    assert trips[0].modes == ("transit", "walk")


row_strategy = st.fixed_dictionaries({
    "dest_purpose": st.sampled_from(["work", "", "shopping", "nowhere"]),
    "modes": st.sampled_from([["drive"], [], ["bike", "walk"], ["jetpack"]]),
    "distance_km": st.sampled_from([None, 0.0, -1.0, 0.4, 12.0]),
    "duration_min": st.sampled_from([-3.0, 0.0, 5.0, 40.0]),
})


@given(st.lists(row_strategy, max_size=25))
def test_cleaning_accounts_for_every_row_and_is_idempotent(overrides):
    rows = []
    for o in overrides:
        r = make_trip("home", "work").as_row()
        r.update(o)
        rows.append(r)
    trips, rep = clean_trips(rows)
    assert rep.retained + sum(rep.excluded.values()) == rep.input_rows == len(rows)
    again, rep2 = clean_trips(trips)
    assert again == trips
    assert sum(rep2.excluded.values()) == 0


def test_label_bins_from_examples():
    assert age_class(34) == "18-34"
    assert children_class(7) == "3+"
    assert children_class("2") == "2"
    assert bin_labels(40, "F", "", 0).income is None
    assert income_class(24_999) == "<25k"
    assert income_class("$100,000 or more") == "100k+"
    assert income_class("Under $25,000") == "<25k"
    assert income_class("$50,000-$74,999") == "50k-74,999"
    assert gender_class("Non-Binary") == "non-binary"
    assert age_class(130) is None


def test_negative_age_is_an_error():
    with pytest.raises(ValueError, match="negative_age"):
        bin_labels(age_years=-1)


@given(st.integers(0, 119))
def test_age_binning_is_monotone(age):
    a, b = AGE_CLASSES.index(age_class(age)), AGE_CLASSES.index(age_class(age + 1))
    assert b - a in (0, 1)


def test_age_bin_edges_are_adjacent():
    assert AGE_CLASSES.index(age_class(12)) == AGE_CLASSES.index(age_class(11)) + 1


def test_persons_without_trips_are_dropped_and_counted():
    trips = [make_trip("home", "work", pid="a"), make_trip("work", "home", pid="ghost")]
    persons = [
        {"person_id": "a", "household_id": "h", "wave": "2019", "age_years": 30,
         "gender": "male", "income": 60000, "n_children": 0},
        {"person_id": "b", "household_id": "h", "wave": "2019", "age_years": 31,
         "gender": "female", "income": 60000, "n_children": 0},
    ]
    from mobinfer.ingest import CleaningReport
    rep = CleaningReport()
    recs = build_persons(trips, persons, rep)
    assert [r.person_id for r in recs] == ["a"]
    assert recs[0].household_size == 2
    assert rep.persons_dropped_no_trips == 1
    assert rep.trips_without_person == 1


def test_round_trip_through_csv(tmp_path, write_csv):
    trips = [make_trip("home", "work", ("drive", "walk"), dur=12.5, dist=3.25, hh=1)]
    write_trips_csv(trips, tmp_path / "trips.csv")
    p = write_csv("persons.csv", PERSON_HEADER, ["p1,h1,2019,44,female,80000,1"])
    persons, rep, _ = load_dataset(tmp_path / "trips.csv", p)
    assert persons[0].trips == trips
    assert persons[0].labels.age == "35-54"
    assert persons[0].labels.income == "75k-99,999"


def test_config_file_overrides_vocabulary(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text(
        '[purposes]\ncodes = ["home", "work", "shop"]\naliases = {store = "shop"}\n'
        '[modes]\ncodes = ["car", "foot"]\n'
        '[peak]\nwindows = ["06:00-08:00"]\n'
        '[train]\nlearning_rate = 0.001\n'
    )
    c = load_config(cfg)
    assert c.purposes.canonical("Store") == "shop"
    assert c.modes.canonical("drive") is None
    assert c.peak_windows == ((360, 480),)
    assert c.train["learning_rate"] == 0.001
    assert c.digest() != PipelineConfig().digest()


def test_parse_hhmm():
    assert parse_hhmm("07:30") == 450
    assert parse_hhmm("730") == 450
    with pytest.raises(ValueError):
        parse_hhmm("25:00")
