"""Nested feature sets, standardisation and label encoding.

Feature families nest as C < +ST < +D < +M < +CT. Descriptors that can be
undefined for a person (tour shares without tours, the multimodal fraction,
motif statistics without any canonical motif) are stored as NaN together
with a 0/1 indicator column; the standardiser imputes them with the
training-split mean.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .graph import node_descriptors
from .ingest import CLASSES, TASKS
from .trip_features import (
    MOTIFS, anchor_shares, cotravel_fractions, extract_tours, motif_entropy,
    motif_tally, multimodal_fraction, n_closed, spatiotemporal_stats,
)

FAMILIES = ("C", "ST", "D", "M", "CT")
SET_NAMES = {"C": "C", "ST": "+ST", "D": "+D", "M": "+M", "CT": "+CT"}

ST_COLUMNS = (
    "depart_first", "depart_mean", "depart_last", "duration_mean", "duration_max",
    "f_rush", "f_offpeak", "f_weekend", "speed_mean", "speed_max",
    "distance_mean", "distance_max",
)
D_COLUMNS = (
    "trip_entropy", "trip_gini", "global_clustering", "mean_local_clustering",
    "f_mm", "f_mm_missing",
)
M_COLUMNS = tuple(f"motif_{m}" for m in MOTIFS) + ("motif_entropy", "motif_missing")
CT_COLUMNS = ("f_solo", "f_hh", "f_nonhh", "f_comp")


def normalize_family(family):
    f = str(family).lstrip("+").upper()
    if f not in FAMILIES:
        raise ValueError(f"unknown feature family {family!r}")
    return f


def family_columns(config=None):
    """Ordered ``(column, family)`` pairs for the full +CT set."""
    config = config or PipelineConfig()
    c_cols = (
        [f"purpose_share_{p}" for p in config.purposes.codes]
        + [f"mode_share_{m}" for m in config.modes.codes]
        + ["n_tour"]
        + [f"tour_share_{a}" for a in config.anchors]
        + ["tour_share_missing"]
    )
    out = [(c, "C") for c in c_cols]
    out += [(c, "ST") for c in ST_COLUMNS]
    out += [(c, "D") for c in D_COLUMNS]
    out += [(c, "M") for c in M_COLUMNS]
    out += [(c, "CT") for c in CT_COLUMNS]
    return out


def feature_columns(family, config=None):
    last = FAMILIES.index(normalize_family(family))
    keep = set(FAMILIES[: last + 1])
    return [c for c, f in family_columns(config) if f in keep]


def person_descriptors(person, config=None):
    """Every descriptor for one person (NaN where undefined)."""
    config = config or PipelineConfig()
    trips = person.trips if hasattr(person, "trips") else person
    n = len(trips)
    d = {}

    purposes = dict.fromkeys(config.purposes.codes, 0.0)
    modes = dict.fromkeys(config.modes.codes, 0.0)
    for t in trips:
        purposes[t.dest_purpose] += 1.0
        for m in t.modes:
            modes[m] += 1.0 / len(t.modes)
    for p, v in purposes.items():
        d[f"purpose_share_{p}"] = v / n
    for m, v in modes.items():
        d[f"mode_share_{m}"] = v / n

    tours = extract_tours(trips, config.anchors)
    nt = n_closed(tours)
    d["n_tour"] = float(nt)
    for a, s in anchor_shares(tours, config.anchors).items():
        d[f"tour_share_{a}"] = s
    d["tour_share_missing"] = float(nt == 0)

    d.update(spatiotemporal_stats(trips, config.peak_windows))
    d.update(node_descriptors(trips))
    d["f_mm"] = multimodal_fraction(tours) if nt else float("nan")
    d["f_mm_missing"] = float(nt == 0)

    tally = motif_tally(trips)
    for m, v in tally.fractions().items():
        d[f"motif_{m}"] = v
    d["motif_entropy"] = motif_entropy(tally) if tally.M else float("nan")
    d["motif_missing"] = float(tally.M == 0)

    d.update(cotravel_fractions(trips))
    return d


@dataclass
class FeatureVector:
    values: dict
    families: dict

    def names(self):
        return list(self.values)

    def as_array(self):
        return np.array(list(self.values.values()), dtype=float)


def assemble_features(descriptors, family, config=None):
    cols = family_columns(config)
    keep = set(feature_columns(family, config))
    values = {c: float(descriptors[c]) for c, _ in cols if c in keep}
    fams = {c: f for c, f in cols if c in keep}
    return FeatureVector(values, fams)


@dataclass
class DesignMatrix:
    X: np.ndarray
    row_ids: list
    columns: list
    families: list
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    standardized: bool = False

    def subset(self, rows):
        rows = np.asarray(rows)
        return DesignMatrix(self.X[rows], [self.row_ids[i] for i in rows],
                            list(self.columns), list(self.families),
                            self.mean, self.std, self.standardized)


def build_matrix(descriptor_rows, family, config=None, row_ids=None):
    """Stack per-person descriptor dicts into a raw (unstandardised) matrix."""
    cols = family_columns(config)
    keep = set(feature_columns(family, config))
    names = [c for c, _ in cols if c in keep]
    fams = [f for c, f in cols if c in keep]
    X = np.array([[d[c] for c in names] for d in descriptor_rows], dtype=float)
    if X.size == 0:
        X = X.reshape(0, len(names))
    if row_ids is None:
        row_ids = list(range(len(descriptor_rows)))
    return DesignMatrix(X, list(row_ids), names, fams)


class NotFittedError(RuntimeError):
    pass


@dataclass
class Standardizer:
    mean: np.ndarray | None = None
    std: np.ndarray | None = None

    def fit(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape[0] == 0:
            raise ValueError("cannot fit standardizer on zero rows")
        present = ~np.isnan(X)
        n = present.sum(axis=0)
        total = np.where(present, X, 0.0).sum(axis=0)
        # a column missing in every training row imputes to 0
        mean = np.divide(total, n, out=np.zeros(X.shape[1]), where=n > 0)
        filled = np.where(np.isnan(X), mean, X)
        std = filled.std(axis=0)
        # rounding noise on a constant column must not be blown up to +-1
        std[std <= 1e-12 * (np.abs(mean) + 1.0)] = 0.0
        self.mean = mean
        self.std = std
        return self

    def transform(self, X):
        if self.mean is None:
            raise NotFittedError("standardizer used before fit")
        X = np.asarray(X, dtype=float)
        filled = np.where(np.isnan(X), self.mean, X)
        safe = np.where(self.std > 0, self.std, 1.0)
        Z = (filled - self.mean) / safe
        Z[:, self.std <= 0] = 0.0
        return Z


def fit_standardizer(train):
    X = train.X if isinstance(train, DesignMatrix) else train
    return Standardizer().fit(X)


def apply_standardizer(scaler, rows):
    if isinstance(rows, DesignMatrix):
        return DesignMatrix(scaler.transform(rows.X), list(rows.row_ids), list(rows.columns),
                            list(rows.families), scaler.mean, scaler.std, True)
    return scaler.transform(rows)


def encode_labels(person):
    """Class indices for (age, gender, income, children); -1 and mask False when missing."""
    labels = person.labels if hasattr(person, "labels") else person
    y = np.full(len(TASKS), -1, dtype=int)
    for i, task in enumerate(TASKS):
        v = labels.get(task)
        if v is not None:
            y[i] = CLASSES[task].index(v)
    return y, y >= 0


def label_matrix(persons):
    Y = np.array([encode_labels(p)[0] for p in persons], dtype=int)
    return Y.reshape(len(persons), len(TASKS))


def write_design_matrix(dm, path, extra=None):
    """CSV of the matrix plus a JSON sidecar with manifests and scaler stats."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["person_id"] + list(dm.columns))
        for rid, row in zip(dm.row_ids, dm.X):
            w.writerow([rid] + [repr(float(v)) for v in row])
    side = {
        "columns": [{"name": c, "family": f} for c, f in zip(dm.columns, dm.families)],
        "rows": len(dm.row_ids),
        "standardized": dm.standardized,
        "mean": None if dm.mean is None else [float(v) for v in dm.mean],
        "std": None if dm.std is None else [float(v) for v in dm.std],
    }
    if extra:
        side.update(extra)
    sidecar = path.with_suffix(".json")
    sidecar.write_text(json.dumps(side, indent=2, sort_keys=True))
    return sidecar
