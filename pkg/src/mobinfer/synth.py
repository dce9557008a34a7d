"""Synthetic trip-diary cohorts with planted label -> behaviour effects.

Households draw income and number of children, persons draw age and
gender; labels are linked through an optional shared household factor
(Gaussian copula, so marginals are preserved). Behaviour is generated one
anchor-to-anchor leg at a time from "knobs" whose values are shifted by the
standardised labels according to an effect table::

    effects = {"children": {"purpose:escort": 1.2, "p_companion": 0.8}}

Probability knobs (``p_*``) and categorical weights (``purpose:*``,
``mode:*``) move on the logit / log-weight scale; ``speed`` and
``distance`` on the log scale; ``depart`` is an additive shift in hours.
"""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit, logit
from scipy.stats import norm

from .config import DEFAULT_MODES, DEFAULT_PURPOSES
from .ingest import (
    AGE_CLASSES, CHILDREN_CLASSES, EXCLUSION_CATEGORIES, GENDER_CLASSES, INCOME_CLASSES,
    PERSON_COLUMNS, TASKS, TRIP_COLUMNS,
)

# survey sample shares per wave (percent)
SURVEY_MARGINALS = {
    "2017": {
        "gender": (48.9, 49.1, 0.31),
        "age": (9.74, 2.97, 34.2, 30.7, 19.1, 3.25),
        "income": (8.07, 12.6, 14.6, 14.3, 50.3),
        "children": (69.6, 13.8, 14.0, 2.57),
    },
    "2019": {
        "gender": (48.4, 49.5, 0.45),
        "age": (10.1, 3.36, 31.9, 31.3, 19.9, 3.44),
        "income": (6.63, 12.4, 15.1, 13.9, 51.9),
        "children": (69.6, 12.4, 12.2, 5.28),
    },
    "2023": {
        "gender": (43.6, 47.9, 2.03),
        "age": (10.8, 3.93, 26.7, 30.3, 23.0, 5.33),
        "income": (7.07, 10.6, 12.9, 10.6, 58.8),
        "children": (67.3, 12.1, 15.1, 5.53),
    },
}
# gender omits undisclosed responses, so each row is renormalised to sum to 1
SURVEY_MARGINALS = {
    w: {t: tuple(float(v) for v in np.asarray(p) / np.sum(p)) for t, p in m.items()}
    for w, m in SURVEY_MARGINALS.items()
}
FIELD_START = {"2017": dt.date(2017, 4, 10), "2019": dt.date(2019, 3, 11), "2023": dt.date(2023, 4, 24)}

STOP_PURPOSES = ("school", "shopping", "errand", "leisure", "escort", "gym", "other")

BASE_BEHAVIOR = {
    "p_work": 0.55,
    "p_extra_tour": 0.35,
    "p_multistop": 0.35,
    "p_subtour": 0.2,
    "p_stop_home": 0.25,
    "p_noreturn": 0.08,
    "p_multimodal": 0.2,
    "p_companion": 0.35,
    "p_hh_companion": 0.6,
    "p_weekend": 2.0 / 7.0,
    "p_peak": 0.45,
    "speed": 1.0,
    "distance": 1.0,
    "depart": 0.0,
    "purpose:school": 0.10,
    "purpose:shopping": 0.22,
    "purpose:errand": 0.18,
    "purpose:leisure": 0.18,
    "purpose:escort": 0.10,
    "purpose:gym": 0.07,
    "purpose:other": 0.15,
    "mode:drive": 0.45,
    "mode:passenger": 0.12,
    "mode:transit": 0.12,
    "mode:walk": 0.18,
    "mode:bike": 0.05,
    "mode:school-bus": 0.03,
    "mode:other": 0.05,
}

# signs follow the reported correlation directions; magnitudes are ours
DEFAULT_EFFECTS = {
    "age": {
        "purpose:school": -1.0, "mode:drive": 0.4, "mode:passenger": -0.3,
        "p_companion": -0.4, "p_multimodal": 0.15, "p_multistop": 0.2,
    },
    "income": {
        "purpose:shopping": -0.3, "speed": 0.12, "distance": 0.2, "mode:drive": 0.25,
        "mode:transit": 0.25, "p_multimodal": 0.25, "p_companion": 0.1,
    },
    "gender": {
        "mode:bike": -0.5, "p_companion": 0.2, "p_work": -0.2,
        "purpose:errand": 0.3, "purpose:shopping": 0.3, "p_multistop": 0.2,
    },
    "children": {
        "mode:passenger": 0.5, "mode:school-bus": 0.7, "purpose:school": 0.5,
        "purpose:escort": 0.9, "mode:drive": -0.2, "mode:transit": -0.3, "mode:walk": -0.3,
        "p_work": -0.3, "distance": -0.15, "purpose:shopping": -0.2, "p_companion": 0.6,
    },
}

KNOB_DESCRIPTOR = {
    "p_work": "tour_share_work",
    "p_multistop": "motif_single_cycle",
    "p_multimodal": "f_mm",
    "p_companion": "f_comp",
    "p_hh_companion": "f_hh",
    "p_weekend": "f_weekend",
    "p_peak": "f_rush",
    "speed": "speed_mean",
    "distance": "distance_mean",
    "depart": "depart_mean",
}

MODE_SPEED_KMH = {
    "drive": 38.0, "passenger": 38.0, "transit": 20.0, "walk": 4.5,
    "bike": 14.0, "school-bus": 28.0, "other": 25.0,
}
DWELL_MIN = {
    "work": (210, 300), "school": (300, 420), "shopping": (15, 60), "errand": (10, 45),
    "leisure": (45, 180), "escort": (3, 15), "gym": (45, 90), "other": (20, 90),
    "home": (30, 180),
}


class InfeasibleSpecError(ValueError):
    pass


def _knob_kind(name):
    if name.startswith("p_"):
        return "prob"
    if name.startswith(("purpose:", "mode:")):
        return "weight"
    if name in ("speed", "distance"):
        return "scale"
    if name == "depart":
        return "shift"
    raise InfeasibleSpecError(f"unknown behaviour knob {name!r}")


def _normalise(p, task):
    p = np.asarray(p, dtype=float)
    if p.shape != (len(_CLASSES[task]),) or np.any(p < 0):
        raise InfeasibleSpecError(f"bad marginal for {task}: {p.tolist()}")
    total = p.sum()
    if total <= 0:
        raise InfeasibleSpecError(f"marginal for {task} sums to zero")
    if total > 1.5:  # percentages
        p = p / 100.0
        total = p.sum()
    if abs(total - 1.0) > 0.01:
        raise InfeasibleSpecError(f"marginal for {task} sums to {total:.4f}, not 1")
    return p / total


_CLASSES = {"age": AGE_CLASSES, "gender": GENDER_CLASSES,
            "income": INCOME_CLASSES, "children": CHILDREN_CLASSES}


@dataclass
class CohortSpec:
    n_households: int = 1000
    waves: dict = field(default_factory=lambda: {"2017": 1 / 3, "2019": 1 / 3, "2023": 1 / 3})
    marginals: dict = field(default_factory=lambda: dict(SURVEY_MARGINALS["2017"]))
    wave_marginals: dict = field(default_factory=dict)
    factor_loadings: dict = field(default_factory=dict)
    effects: dict = field(default_factory=lambda: {t: dict(v) for t, v in DEFAULT_EFFECTS.items()})
    behavior: dict = field(default_factory=dict)
    wave_shifts: dict = field(default_factory=dict)
    noise: float = 0.3
    days: tuple = (3, 7)
    dirty: dict = field(default_factory=dict)
    label_missing: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.n_households < 1:
            raise InfeasibleSpecError("n_households must be positive")
        shares = np.array(list(self.waves.values()), dtype=float)
        if len(shares) == 0 or np.any(shares < 0) or abs(shares.sum() - 1) > 1e-6:
            raise InfeasibleSpecError("wave shares must be non-negative and sum to 1")
        for task in TASKS:
            _normalise(self.marginals[task], task)
            for w, m in self.wave_marginals.items():
                if task in m:
                    _normalise(m[task], task)
        for task, eff in self.effects.items():
            if task not in TASKS:
                raise InfeasibleSpecError(f"effect on unknown label {task!r}")
            for knob in eff:
                _knob_kind(knob)
        for knob in self.behavior:
            _knob_kind(knob)
        for shifts in self.wave_shifts.values():
            for knob in shifts:
                _knob_kind(knob)
        for task, l in self.factor_loadings.items():
            if task not in TASKS or not -1 <= l <= 1:
                raise InfeasibleSpecError(f"bad factor loading {task}={l}")
        lo, hi = self.days
        if not 1 <= lo <= hi:
            raise InfeasibleSpecError("days must satisfy 1 <= min <= max")
        for cat, frac in self.dirty.items():
            if cat not in EXCLUSION_CATEGORIES or not 0 <= frac < 1:
                raise InfeasibleSpecError(f"bad dirty fraction {cat}={frac}")
        if sum(self.dirty.values()) >= 1:
            raise InfeasibleSpecError("dirty fractions must sum to less than 1")
        for task, frac in self.label_missing.items():
            if task not in TASKS or not 0 <= frac < 1:
                raise InfeasibleSpecError(f"bad label_missing {task}={frac}")

    def marginal(self, wave, task):
        m = self.wave_marginals.get(wave, {}).get(task, self.marginals[task])
        return _normalise(m, task)

    def base_behavior(self):
        b = dict(BASE_BEHAVIOR)
        b.update(self.behavior)
        return b

    def to_dict(self):
        d = asdict(self)
        d["days"] = list(self.days)
        return d

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        if "days" in doc:
            doc["days"] = tuple(doc["days"])
        return cls(**doc)

    def digest(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def load_spec(path):
    """Read a cohort spec from TOML or JSON."""
    path = Path(path)
    if path.suffix == ".json":
        doc = json.loads(path.read_text())
    else:
        from .config import tomllib
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    doc = doc.get("cohort", doc)
    return CohortSpec.from_dict(doc)


def wave_shift(spec, wave):
    """Baseline knob values for households of ``wave``."""
    base = spec.base_behavior()
    for knob, s in spec.wave_shifts.get(str(wave), {}).items():
        kind = _knob_kind(knob)
        if kind == "shift":
            base[knob] = base.get(knob, 0.0) + s
        elif kind == "prob":
            base[knob] = float(np.clip(base[knob] * (1.0 + s), 1e-4, 1 - 1e-4))
        else:
            base[knob] = base[knob] * (1.0 + s)
    return base


# -- labels ----------------------------------------------------------------------

def _class_scores(spec):
    """Standardised numeric score for every class of every label."""
    out = {}
    for task in TASKS:
        if task == "gender":
            out[task] = np.array([-1.0, 1.0, 0.0])
            continue
        p = spec.marginal(next(iter(spec.waves)), task)
        idx = np.arange(len(p), dtype=float)
        mu = float(p @ idx)
        sd = math.sqrt(float(p @ (idx - mu) ** 2))
        out[task] = (idx - mu) / sd
    return out


def _quantile_class(u, p):
    cum = np.cumsum(p)
    return int(min(np.searchsorted(cum, u, side="right"), len(p) - 1))


def _latent(rng, loading, factor):
    return loading * factor + math.sqrt(1.0 - loading * loading) * rng.standard_normal()


_AGE_RANGE = ((0, 11), (12, 17), (18, 34), (35, 54), (55, 74), (75, 94))
_INCOME_RANGE = ((5_000, 24_999), (25_000, 49_999), (50_000, 74_999), (75_000, 99_999),
                 (100_000, 250_000))


# -- behaviour -------------------------------------------------------------------

def person_knobs(base, effects, scores, labels, noise, rng):
    """Apply label effects and person noise to baseline knobs."""
    shift = dict.fromkeys(base, 0.0)
    for task, eff in effects.items():
        cls = labels.get(task)
        if cls is None:
            continue
        z = scores[task][cls]
        for knob, coef in eff.items():
            shift[knob] = shift.get(knob, 0.0) + coef * z
    out = {}
    for knob, v in base.items():
        kind = _knob_kind(knob)
        s = shift.get(knob, 0.0)
        if noise:
            s += noise * rng.standard_normal()
        if kind == "prob":
            out[knob] = float(expit(logit(np.clip(v, 1e-6, 1 - 1e-6)) + s))
        elif kind in ("weight", "scale"):
            out[knob] = float(v * math.exp(s))
        else:
            out[knob] = float(v + s)
    return out


def _pick(rng, weights, exclude=()):
    names = [n for n in weights if n not in exclude]
    w = np.array([weights[n] for n in names], dtype=float)
    return names[int(rng.choice(len(names), p=w / w.sum()))]


def _day_dates(rng, start, n_days, p_weekend):
    dates, d = [], start - dt.timedelta(days=1)
    for _ in range(n_days):
        weekend = rng.random() < p_weekend
        d = d + dt.timedelta(days=1)
        while (d.weekday() >= 5) != weekend:
            d = d + dt.timedelta(days=1)
        dates.append(d)
    return dates


def _legs_for_day(rng, k, weekend):
    """Anchor-to-anchor purpose sequences for one day."""
    purposes = {p.split(":", 1)[1]: v for p, v in k.items() if p.startswith("purpose:")}

    def stops(n, avoid=()):
        out = []
        for _ in range(n):
            out.append(_pick(rng, purposes, exclude=tuple(avoid) + tuple(out[-1:])))
        return out

    legs = []
    p_work = k["p_work"] * (0.3 if weekend else 1.0)
    if rng.random() < p_work:
        legs.append(["home", "work"])
        if rng.random() < k["p_subtour"]:
            legs.append(["work"] + stops(2) + ["work"])
        back = stops(1) if rng.random() < k["p_stop_home"] else []
        legs.append(["work"] + back + ["home"])
        n_home = int(rng.random() < k["p_extra_tour"])
    else:
        n_home = 1 + int(rng.random() < k["p_extra_tour"]) + int(rng.random() < k["p_extra_tour"] ** 2)
    for _ in range(n_home):
        n_stops = 1
        if rng.random() < k["p_multistop"]:
            n_stops = 2 + int(rng.random() < 0.3)
        legs.append(["home"] + stops(n_stops) + ["home"])
    if legs and rng.random() < k["p_noreturn"] and len(legs[-1]) > 2:
        legs[-1] = legs[-1][:-1]
    return legs


def _person_trips(rng, k, dates, ids):
    modes_w = {m.split(":", 1)[1]: v for m, v in k.items() if m.startswith("mode:")}
    rows = []
    for day in dates:
        weekend = day.weekday() >= 5
        if rng.random() < k["p_peak"]:
            t = rng.uniform(7 * 60, 9 * 60 - 1)
        else:
            t = rng.uniform(5 * 60, 7 * 60) if rng.random() < 0.3 else rng.uniform(9 * 60, 15 * 60)
        t = float(np.clip(t + 60.0 * k["depart"], 0, 20 * 60))
        for leg in _legs_for_day(rng, k, weekend):
            main = _pick(rng, modes_w)
            n_trips = len(leg) - 1
            alt_trip = -1
            alt = None
            if n_trips >= 1 and rng.random() < k["p_multimodal"]:
                alt = _pick(rng, modes_w, exclude=(main,))
                alt_trip = int(rng.integers(n_trips))
            stop_day = False
            for j in range(n_trips):
                depart = int(round(t))
                if depart >= 24 * 60 - 1:
                    stop_day = True
                    break
                modes = [main]
                if j == alt_trip:
                    modes = [main, alt] if rng.random() < 0.5 else [alt]
                dist = 4.0 * k["distance"] * math.exp(0.6 * rng.standard_normal())
                dist = max(round(dist, 2), 0.1)
                speed = min(MODE_SPEED_KMH[m] for m in modes) * k["speed"]
                speed *= math.exp(0.15 * rng.standard_normal())
                dur = max(round(dist / speed * 60.0, 1), 1.0)
                n_hh = n_non = 0
                if rng.random() < k["p_companion"]:
                    if rng.random() < k["p_hh_companion"]:
                        n_hh = 1 + int(rng.random() < 0.3)
                    else:
                        n_non = 1 + int(rng.random() < 0.3)
                arrive = int(round(depart + dur))
                rows.append({
                    **ids,
                    "day": day.isoformat(),
                    "origin_purpose": leg[j],
                    "dest_purpose": leg[j + 1],
                    "modes": "|".join(modes),
                    "depart_hhmm": f"{depart // 60:02d}:{depart % 60:02d}",
                    "arrive_hhmm": f"{(arrive // 60) % 24:02d}:{arrive % 60:02d}",
                    "duration_min": repr(dur),
                    "distance_km": repr(dist),
                    "n_hh_companions": n_hh,
                    "n_nonhh_companions": n_non,
                })
                lo, hi = DWELL_MIN.get(leg[j + 1], (20, 90))
                t = depart + dur + rng.uniform(lo, hi)
            if stop_day:
                break
    return rows


@dataclass
class Cohort:
    trips: list
    persons: list
    manifest: dict


def _assign_waves(spec):
    waves = list(spec.waves)
    counts = [int(round(spec.waves[w] * spec.n_households)) for w in waves]
    counts[-1] = spec.n_households - sum(counts[:-1])
    out = []
    for w, c in zip(waves, counts):
        out += [w] * max(c, 0)
    return out[: spec.n_households]


def _dirty(rows, spec):
    """Corrupt disjoint rows so each category hits its exact requested fraction."""
    if not spec.dirty:
        return {}
    rng = np.random.default_rng([spec.seed, 0xD1])
    order = rng.permutation(len(rows))
    pos, counts = 0, {}
    for cat in EXCLUSION_CATEGORIES:
        n = int(round(spec.dirty.get(cat, 0.0) * len(rows)))
        for i in order[pos: pos + n]:
            r = rows[i]
            if cat == "missing_purpose":
                r["dest_purpose"] = ""
            elif cat == "blank_mode":
                r["modes"] = ""
            elif cat == "zero_or_missing_spatial":
                r["distance_km"] = "0.0"
            else:
                r["duration_min"] = repr(-float(r["duration_min"]))
        counts[cat] = n
        pos += n
    return counts


def generate(spec):
    """Build the cohort in memory (rows formatted exactly as the CSVs)."""
    spec.validate()
    scores = _class_scores(spec)
    waves = _assign_waves(spec)
    trips, persons = [], []
    lo_days, hi_days = spec.days
    for h, wave in enumerate(waves):
        rng = np.random.default_rng([spec.seed, h])
        base = wave_shift(spec, wave)
        factor = rng.standard_normal()
        hh_id = f"{wave}-h{h:05d}"
        load = spec.factor_loadings
        inc = _quantile_class(norm.cdf(_latent(rng, load.get("income", 0.0), factor)),
                              spec.marginal(wave, "income"))
        kids = _quantile_class(norm.cdf(_latent(rng, load.get("children", 0.0), factor)),
                               spec.marginal(wave, "children"))
        n_persons = 1 + int(rng.binomial(2, 0.35)) + int(kids > 0 and rng.random() < 0.4)
        for i in range(n_persons):
            age = _quantile_class(norm.cdf(_latent(rng, load.get("age", 0.0), factor)),
                                  spec.marginal(wave, "age"))
            gen = _quantile_class(norm.cdf(_latent(rng, load.get("gender", 0.0), factor)),
                                  spec.marginal(wave, "gender"))
            labels = {"age": age, "gender": gen, "income": inc, "children": kids}
            pid = f"{hh_id}-p{i}"
            k = person_knobs(base, spec.effects, scores, labels, spec.noise, rng)
            n_days = int(rng.integers(lo_days, hi_days + 1))
            dates = _day_dates(rng, FIELD_START.get(wave, dt.date(2020, 1, 6)), n_days,
                               k["p_weekend"])
            ids = {"person_id": pid, "household_id": hh_id, "wave": wave}
            trips += _person_trips(rng, k, dates, ids)

            a_lo, a_hi = _AGE_RANGE[age]
            i_lo, i_hi = _INCOME_RANGE[inc]
            raw = {
                "age": int(rng.integers(a_lo, a_hi + 1)),
                "gender": GENDER_CLASSES[gen],
                "income": int(rng.integers(i_lo, i_hi + 1)),
                "children": kids if kids < 3 else int(rng.integers(3, 6)),
            }
            for task, frac in spec.label_missing.items():
                if rng.random() < frac:
                    raw[task] = ""
            persons.append({
                **ids,
                "age_years": raw["age"],
                "gender": raw["gender"],
                "income": raw["income"],
                "n_children": raw["children"],
            })
    dirty_counts = _dirty(trips, spec)
    manifest = {
        "spec": spec.to_dict(),
        "spec_digest": spec.digest(),
        "n_households": spec.n_households,
        "n_persons": len(persons),
        "n_trips": len(trips),
        "dirty_counts": dirty_counts,
        "planted": planted_effects(spec),
    }
    return Cohort(trips, persons, manifest)


def planted_effects(spec):
    """Expected sign of each (label, descriptor) association implied by the effects."""
    out = []
    for task, eff in spec.effects.items():
        for knob, coef in eff.items():
            if coef == 0:
                continue
            if knob.startswith("purpose:"):
                desc = "purpose_share_" + knob.split(":", 1)[1]
            elif knob.startswith("mode:"):
                desc = "mode_share_" + knob.split(":", 1)[1]
            else:
                desc = KNOB_DESCRIPTOR.get(knob)
            if desc is None:
                continue
            out.append({"label": task, "knob": knob, "descriptor": desc,
                        "coef": coef, "sign": 1 if coef > 0 else -1})
    return out


def write_cohort(cohort_or_spec, out_dir):
    """Write trips.csv, persons.csv and manifest.json; returns their paths."""
    cohort = cohort_or_spec if isinstance(cohort_or_spec, Cohort) else generate(cohort_or_spec)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"trips": out / "trips.csv", "persons": out / "persons.csv",
             "manifest": out / "manifest.json"}
    with open(paths["trips"], "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=TRIP_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(cohort.trips)
    with open(paths["persons"], "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=PERSON_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(cohort.persons)
    paths["manifest"].write_text(json.dumps(cohort.manifest, indent=2, sort_keys=True))
    return paths


__all__ = [
    "CohortSpec", "Cohort", "generate", "write_cohort", "wave_shift", "load_spec",
    "planted_effects", "SURVEY_MARGINALS", "DEFAULT_EFFECTS", "BASE_BEHAVIOR",
    "STOP_PURPOSES", "DEFAULT_PURPOSES", "DEFAULT_MODES", "InfeasibleSpecError",
]
