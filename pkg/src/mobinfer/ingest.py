"""Trip-diary ingestion: CSV parsing, exclusion rules and label binning."""

from __future__ import annotations

import csv
import datetime as dt
import logging
import math
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field

from .config import PipelineConfig, parse_hhmm

log = logging.getLogger(__name__)

TRIP_COLUMNS = (
    "person_id", "household_id", "wave", "day", "origin_purpose", "dest_purpose",
    "modes", "depart_hhmm", "arrive_hhmm", "duration_min", "distance_km",
    "n_hh_companions", "n_nonhh_companions",
)
# recognised when present; used for the un-geocodable destination rule
OPTIONAL_TRIP_COLUMNS = ("dest_lat", "dest_lon")
PERSON_COLUMNS = (
    "person_id", "household_id", "wave", "age_years", "gender", "income", "n_children",
)

TASKS = ("age", "gender", "income", "children")
AGE_CLASSES = ("0-11", "12-17", "18-34", "35-54", "55-74", "75+")
GENDER_CLASSES = ("male", "female", "non-binary")
INCOME_CLASSES = ("<25k", "25k-49,999", "50k-74,999", "75k-99,999", "100k+")
CHILDREN_CLASSES = ("0", "1", "2", "3+")
CLASSES = {
    "age": AGE_CLASSES,
    "gender": GENDER_CLASSES,
    "income": INCOME_CLASSES,
    "children": CHILDREN_CLASSES,
}
N_CLASSES = {t: len(c) for t, c in CLASSES.items()}

EXCLUSION_CATEGORIES = (
    "missing_purpose", "blank_mode", "zero_or_missing_spatial", "negative_duration",
)

MAX_AGE = 120


class SchemaError(ValueError):
    """A required column is missing from an input table."""


class DataError(ValueError):
    """Input rows cannot be turned into a usable dataset."""


@dataclass(frozen=True)
class Trip:
    person_id: str
    household_id: str
    wave: str
    day: dt.date
    origin_purpose: str
    dest_purpose: str
    modes: tuple
    depart: int
    arrive: int
    duration_min: float
    distance_km: float
    n_hh_companions: int = 0
    n_nonhh_companions: int = 0

    @property
    def weekday(self):
        """0 = Monday ... 6 = Sunday."""
        return self.day.weekday()

    @property
    def speed_kmh(self):
        return self.distance_km / (self.duration_min / 60.0)

    def as_row(self):
        return {
            "person_id": self.person_id,
            "household_id": self.household_id,
            "wave": self.wave,
            "day": self.day,
            "origin_purpose": self.origin_purpose,
            "dest_purpose": self.dest_purpose,
            "modes": list(self.modes),
            "depart": self.depart,
            "arrive": self.arrive,
            "duration_min": self.duration_min,
            "distance_km": self.distance_km,
            "n_hh_companions": self.n_hh_companions,
            "n_nonhh_companions": self.n_nonhh_companions,
            "dest_lat": None,
            "dest_lon": None,
            "row": None,
            "geocoded": True,
        }


@dataclass(frozen=True)
class Labels:
    age: str | None = None
    gender: str | None = None
    income: str | None = None
    children: str | None = None

    def get(self, task):
        return getattr(self, task)


@dataclass
class PersonRecord:
    person_id: str
    household_id: str
    wave: str
    trips: list
    labels: Labels
    household_size: int = 1


@dataclass
class Reject:
    table: str
    row: int
    reason: str
    detail: str = ""


@dataclass
class RawTables:
    trips: list
    persons: list
    rejects: list = field(default_factory=list)
    warnings: list = field(default_factory=list)


@dataclass
class CleaningReport:
    input_rows: int = 0
    retained: int = 0
    excluded: dict = field(default_factory=lambda: dict.fromkeys(EXCLUSION_CATEGORIES, 0))
    persons_dropped_no_trips: int = 0
    trips_without_person: int = 0

    def as_dict(self):
        return {
            "input_rows": self.input_rows,
            "retained": self.retained,
            "excluded": dict(self.excluded),
            "persons_dropped_no_trips": self.persons_dropped_no_trips,
            "trips_without_person": self.trips_without_person,
        }


# -- parsing -----------------------------------------------------------------

def _blank(v):
    return v is None or str(v).strip() == "" or str(v).strip().lower() in ("na", "nan", "null")


def _float_or_none(v):
    if _blank(v):
        return None
    x = float(str(v).strip())
    if math.isnan(x):
        return None
    return x


def _count(v):
    if _blank(v):
        return 0
    x = float(str(v).strip())
    if x < 0 or x != int(x):
        raise ValueError(v)
    return int(x)


def _parse_day(v):
    s = str(v).strip()
    return dt.date.fromisoformat(s)


def _check_header(header, required, table, warnings_out):
    if header is None:
        raise SchemaError(f"{table}: empty file")
    missing = [c for c in required if c not in header]
    if missing:
        raise SchemaError(f"{table}: missing required column(s) {missing}")
    known = set(required) | (set(OPTIONAL_TRIP_COLUMNS) if table == "trips" else set())
    extras = [c for c in header if c not in known]
    if extras:
        msg = f"{table}: ignoring unknown column(s) {extras}"
        log.warning(msg)
        warnings_out.append(msg)


def parse_trip_row(rec, lineno):
    """Parse one trips.csv record. Raises ``ValueError(reason)`` on bad fields."""
    out = {"row": lineno}
    pid = (rec.get("person_id") or "").strip()
    if not pid:
        raise ValueError("missing_person_id")
    out["person_id"] = pid
    out["household_id"] = (rec.get("household_id") or "").strip()
    out["wave"] = (rec.get("wave") or "").strip()
    try:
        out["day"] = _parse_day(rec["day"])
    except (ValueError, TypeError):
        raise ValueError("bad_day") from None
    out["origin_purpose"] = rec.get("origin_purpose")
    out["dest_purpose"] = rec.get("dest_purpose")
    raw_modes = rec.get("modes") or ""
    out["modes"] = [m for m in raw_modes.split("|") if m.strip()]
    try:
        out["distance_km"] = _float_or_none(rec.get("distance_km"))
    except ValueError:
        raise ValueError("bad_distance") from None
    try:
        out["duration_min"] = _float_or_none(rec.get("duration_min"))
    except ValueError:
        raise ValueError("bad_duration") from None
    try:
        out["depart"] = parse_hhmm(rec["depart_hhmm"])
        arr = rec.get("arrive_hhmm")
        out["arrive"] = None if _blank(arr) else parse_hhmm(arr)
    except (ValueError, TypeError, KeyError):
        raise ValueError("bad_time") from None
    if out["duration_min"] is None:
        if out["arrive"] is None:
            raise ValueError("bad_duration")
        out["duration_min"] = float((out["arrive"] - out["depart"]) % (24 * 60))
    if out["arrive"] is None:
        # negative durations are kept so the exclusion rule can see them
        out["arrive"] = int(round(out["depart"] + max(out["duration_min"], 0))) % (24 * 60)
    try:
        out["n_hh_companions"] = _count(rec.get("n_hh_companions"))
        out["n_nonhh_companions"] = _count(rec.get("n_nonhh_companions"))
    except ValueError:
        raise ValueError("bad_companions") from None
    try:
        lat = _float_or_none(rec.get("dest_lat"))
        lon = _float_or_none(rec.get("dest_lon"))
    except ValueError:
        lat = lon = None
    out["dest_lat"], out["dest_lon"] = lat, lon
    # no coordinate columns at all means the survey geocoded upstream
    out["geocoded"] = ("dest_lat" not in rec) or (lat is not None and lon is not None)
    return out


def parse_person_row(rec, lineno):
    pid = (rec.get("person_id") or "").strip()
    if not pid:
        raise ValueError("missing_person_id")
    age = None
    if not _blank(rec.get("age_years")):
        try:
            age = float(str(rec["age_years"]).strip())
        except ValueError:
            age = None
    if age is not None and age < 0:
        raise ValueError("negative_age")
    return {
        "row": lineno,
        "person_id": pid,
        "household_id": (rec.get("household_id") or "").strip(),
        "wave": (rec.get("wave") or "").strip(),
        "age_years": age,
        "gender": rec.get("gender"),
        "income": rec.get("income"),
        "n_children": rec.get("n_children"),
    }


def _read_csv(path, required, table, parser, tables):
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        _check_header(reader.fieldnames, required, table, tables.warnings)
        for lineno, rec in enumerate(reader, start=2):
            try:
                rows.append(parser(rec, lineno))
            except ValueError as exc:
                tables.rejects.append(Reject(table, lineno, str(exc), repr(dict(rec))))
    return rows


def load_tables(trips_path, persons_path=None, config=None):
    """Parse trips.csv (and optionally persons.csv).

    Rows that cannot be parsed are recorded in ``rejects`` with their line
    number and a short reason tag; a missing required column raises
    :class:`SchemaError`.
    """
    tables = RawTables([], [])
    tables.trips = _read_csv(trips_path, TRIP_COLUMNS, "trips", parse_trip_row, tables)
    if persons_path is not None:
        tables.persons = _read_csv(
            persons_path, PERSON_COLUMNS, "persons", parse_person_row, tables)
    return tables


# -- cleaning ----------------------------------------------------------------

def _exclusion(row, config):
    o = config.purposes.canonical(row.get("origin_purpose"))
    d = config.purposes.canonical(row.get("dest_purpose"))
    if o is None or d is None:
        return "missing_purpose", None
    modes = [config.modes.canonical(m) for m in row.get("modes") or []]
    if not modes or any(m is None for m in modes):
        return "blank_mode", None
    dist = row.get("distance_km")
    if not row.get("geocoded", True) or dist is None or dist <= 0:
        return "zero_or_missing_spatial", None
    if row.get("duration_min") is None or row["duration_min"] <= 0:
        return "negative_duration", None
    order = {c: i for i, c in enumerate(config.modes.codes)}
    mode_tuple = tuple(sorted(set(modes), key=order.__getitem__))
    return None, (o, d, mode_tuple)


def clean_trips(rows, config=None):
    """Apply the exclusion rules; returns ``(trips, CleaningReport)``.

    Each excluded row is counted under the first rule it violates, in the
    order purpose, mode, spatial, duration. Accepts parsed rows or
    :class:`Trip` objects so that cleaning can be re-applied.
    """
    config = config or PipelineConfig()
    report = CleaningReport()
    trips = []
    for row in rows:
        if isinstance(row, Trip):
            row = row.as_row()
        report.input_rows += 1
        reason, parsed = _exclusion(row, config)
        if reason is not None:
            report.excluded[reason] += 1
            continue
        o, d, modes = parsed
        trips.append(Trip(
            person_id=row["person_id"],
            household_id=row["household_id"],
            wave=row["wave"],
            day=row["day"],
            origin_purpose=o,
            dest_purpose=d,
            modes=modes,
            depart=int(row["depart"]),
            arrive=int(row["arrive"]),
            duration_min=float(row["duration_min"]),
            distance_km=float(row["distance_km"]),
            n_hh_companions=int(row["n_hh_companions"]),
            n_nonhh_companions=int(row["n_nonhh_companions"]),
        ))
    report.retained = len(trips)
    return trips, report


# -- labels ------------------------------------------------------------------

_AGE_EDGES = (12, 18, 35, 55, 75)
_INCOME_EDGES = (25_000, 50_000, 75_000, 100_000)

_GENDER_ALIASES = {
    "male": "male", "m": "male", "man": "male", "boy": "male",
    "female": "female", "f": "female", "woman": "female", "girl": "female",
    "non-binary": "non-binary", "nonbinary": "non-binary", "non binary": "non-binary",
    "nb": "non-binary",
}


def _bin(value, edges):
    for i, e in enumerate(edges):
        if value < e:
            return i
    return len(edges)


def age_class(age):
    if age is None or (isinstance(age, float) and math.isnan(age)):
        return None
    if age < 0:
        raise ValueError("negative_age")
    if age > MAX_AGE:
        return None
    return AGE_CLASSES[_bin(math.floor(age), _AGE_EDGES)]


def _money(tok):
    tok = tok.replace(",", "").replace("$", "").strip().lower()
    mult = 1
    if tok.endswith("k"):
        tok, mult = tok[:-1], 1000
    return float(tok) * mult


def income_class(raw):
    """Dollar value or category string -> income class, None if unusable."""
    if _blank(raw):
        return None
    s = str(raw).strip()
    if s in INCOME_CLASSES:
        return s
    try:
        v = _money(s)
    except ValueError:
        v = None
    if v is not None:
        return None if v < 0 else INCOME_CLASSES[_bin(v, _INCOME_EDGES)]
    low = s.lower()
    nums = [_money(n) for n in re.findall(r"\$?\d[\d,]*(?:\.\d+)?k?", low)]
    if not nums:
        return None
    if any(w in low for w in ("under", "less", "<", "below")):
        return INCOME_CLASSES[_bin(nums[0] - 1, _INCOME_EDGES)]
    if any(w in low for w in ("more", "over", "+", "above")):
        return INCOME_CLASSES[_bin(nums[0], _INCOME_EDGES)]
    if len(nums) == 2:
        a, b = INCOME_CLASSES[_bin(nums[0], _INCOME_EDGES)], INCOME_CLASSES[_bin(nums[1], _INCOME_EDGES)]
        return a if a == b else None
    return INCOME_CLASSES[_bin(nums[0], _INCOME_EDGES)]


def gender_class(raw):
    if _blank(raw):
        return None
    return _GENDER_ALIASES.get(" ".join(str(raw).strip().lower().split()))


def children_class(raw):
    if _blank(raw):
        return None
    s = str(raw).strip()
    if s == "3+":
        return s
    try:
        n = float(s)
    except ValueError:
        return None
    if n < 0 or n != int(n):
        return None
    return CHILDREN_CLASSES[min(int(n), 3)]


def bin_labels(age_years=None, gender=None, income=None, n_children=None):
    """Raw person attributes -> :class:`Labels`. Negative age raises."""
    return Labels(
        age=age_class(age_years),
        gender=gender_class(gender),
        income=income_class(income),
        children=children_class(n_children),
    )


# -- assembly ----------------------------------------------------------------

def build_persons(trips, person_rows, report=None):
    """Group cleaned trips into time-ordered :class:`PersonRecord` objects.

    Persons with no surviving trips are dropped (counted in the report), as
    are trips whose person is absent from the persons table.
    """
    by_person = defaultdict(list)
    for t in trips:
        by_person[t.person_id].append(t)
    hh_size = Counter(r["household_id"] for r in person_rows)
    known = set()
    records = []
    for r in person_rows:
        pid = r["person_id"]
        if pid in known:
            continue
        known.add(pid)
        ts = by_person.get(pid)
        if not ts:
            if report is not None:
                report.persons_dropped_no_trips += 1
            continue
        ts.sort(key=lambda t: (t.day, t.depart))
        labels = bin_labels(r["age_years"], r["gender"], r["income"], r["n_children"])
        records.append(PersonRecord(
            person_id=pid,
            household_id=r["household_id"],
            wave=r["wave"],
            trips=ts,
            labels=labels,
            household_size=hh_size[r["household_id"]],
        ))
    if report is not None:
        report.trips_without_person = sum(
            len(v) for k, v in by_person.items() if k not in known)
    return records


def load_dataset(trips_path, persons_path, config=None):
    """Load, clean and assemble; returns ``(persons, report, tables)``."""
    config = config or PipelineConfig()
    tables = load_tables(trips_path, persons_path, config)
    trips, report = clean_trips(tables.trips, config)
    persons = build_persons(trips, tables.persons, report)
    if not persons:
        raise DataError("no persons with usable trips")
    return persons, report, tables


def _fmt_hhmm(minutes):
    minutes = int(minutes) % (24 * 60)
    return f"{minutes // 60:02d}:{minutes % 60:02d}"


def _fmt_num(x):
    return repr(float(x)) if x is not None else ""


def trip_csv_row(t):
    return {
        "person_id": t.person_id,
        "household_id": t.household_id,
        "wave": t.wave,
        "day": t.day.isoformat(),
        "origin_purpose": t.origin_purpose,
        "dest_purpose": t.dest_purpose,
        "modes": "|".join(t.modes),
        "depart_hhmm": _fmt_hhmm(t.depart),
        "arrive_hhmm": _fmt_hhmm(t.arrive),
        "duration_min": _fmt_num(t.duration_min),
        "distance_km": _fmt_num(t.distance_km),
        "n_hh_companions": t.n_hh_companions,
        "n_nonhh_companions": t.n_nonhh_companions,
    }


def write_trips_csv(trips, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=TRIP_COLUMNS, lineterminator="\n")
        w.writeheader()
        for t in trips:
            w.writerow(trip_csv_row(t) if isinstance(t, Trip) else t)
