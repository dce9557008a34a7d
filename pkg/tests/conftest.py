import datetime as dt

import pytest

from mobinfer.ingest import Trip

MONDAY = dt.date(2019, 4, 8)


def make_trip(o, d, modes=("drive",), depart=480, dur=15.0, dist=5.0, day=MONDAY,
              hh=0, nonhh=0, pid="p1", hid="h1", wave="2019"):
    if isinstance(modes, str):
        modes = (modes,)
    return Trip(pid, hid, wave, day, o, d, tuple(modes), depart, int(depart + dur) % 1440,
                float(dur), float(dist), hh, nonhh)


def chain(purposes, modes="drive", start=480, gap=60, **kw):
    """Trips along a purpose walk, one per edge."""
    out = []
    for i, (o, d) in enumerate(zip(purposes, purposes[1:])):
        m = modes[i] if isinstance(modes, list) else modes
        out.append(make_trip(o, d, m, depart=start + i * gap, **kw))
    return out


def worked_day():
    """Worked example day: 7 trips, 3 accompanied, 4 tours of which 2 multimodal."""
    return [
        make_trip("home", "work", "drive", depart=470, hh=1),
        make_trip("work", "leisure", "walk", depart=720),
        make_trip("leisure", "work", "walk", depart=780, nonhh=1),
        make_trip("work", "shopping", "transit", depart=1020),
        make_trip("shopping", "home", "walk", depart=1080),
        make_trip("home", "school", "walk", depart=1140, hh=2),
        make_trip("school", "home", "bike", depart=1200),
    ]


TRIP_HEADER = ("person_id,household_id,wave,day,origin_purpose,dest_purpose,modes,"
               "depart_hhmm,arrive_hhmm,duration_min,distance_km,n_hh_companions,"
               "n_nonhh_companions")
PERSON_HEADER = "person_id,household_id,wave,age_years,gender,income,n_children"


@pytest.fixture
def write_csv(tmp_path):
    def _write(name, header, rows):
        p = tmp_path / name
        p.write_text(header + "\n" + "".join(r + "\n" for r in rows))
        return p
    return _write


# -- acceptance summary ------------------------------------------------------------

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, text): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    n, text = mark.args
    notes = [v for k, v in item.user_properties if k == "detail"]
    _CRITERIA[(n, "")] = ("PASS" if rep.passed else "FAIL", text, notes)
    for k, v in item.user_properties:
        if k == "soft":
            suffix, ok, sub_text, sub_note = v
            _CRITERIA[(n, suffix)] = ("PASS" if ok else "FAIL", sub_text, [sub_note])


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n, suffix in sorted(_CRITERIA):
        status, text, notes = _CRITERIA[(n, suffix)]
        line = f"criterion {str(n) + suffix:>3}: {status}  {text}"
        if notes:
            line += "  [" + "; ".join(notes) + "]"
        terminalreporter.write_line(line)
