import json

import numpy as np
import pytest
from scipy import stats

from mobinfer.experiments import _ordinal, load_experiment_data
from mobinfer.ingest import EXCLUSION_CATEGORIES, TASKS, load_dataset
from mobinfer.metrics import spearman_rho
from mobinfer.synth import (
    SURVEY_MARGINALS, CohortSpec, InfeasibleSpecError, generate, load_spec, wave_shift,
    write_cohort,
)


def _rho(ds, task, name):
    y = _ordinal(ds, task)
    x = np.array([d[name] for d in ds.descriptors], dtype=float)
    ok = ~np.isnan(x) & ~np.isnan(y)
    if np.ptp(x[ok]) == 0:
        return 0.0
    return spearman_rho(x[ok], y[ok])[0]


@pytest.fixture(scope="module")
def default_cohort(tmp_path_factory):
    out = tmp_path_factory.mktemp("default")
    spec = CohortSpec(n_households=1100, seed=5, wave_shifts={"2023": {"p_weekend": 0.3}})
    paths = write_cohort(spec, out)
    ds, report = load_experiment_data(out)
    return ds, report, json.loads(paths["manifest"].read_text())


@pytest.fixture(scope="module")
def null_cohort(tmp_path_factory):
    out = tmp_path_factory.mktemp("null")
    write_cohort(CohortSpec(n_households=1100, seed=6, effects={}), out)
    return load_experiment_data(out)[0]


def test_survey_marginals_sum_to_one():
    for wave, table in SURVEY_MARGINALS.items():
        for task in TASKS:
            assert sum(table[task]) == pytest.approx(1.0), (wave, task)


def test_clean_cohort_has_no_exclusions(default_cohort):
    _, report, manifest = default_cohort
    assert report.retained == report.input_rows == manifest["n_trips"]
    assert all(v == 0 for v in report.excluded.values())
    assert report.persons_dropped_no_trips == 0


def test_planted_signs_are_recovered(default_cohort):
    ds, _, manifest = default_cohort
    assert manifest["planted"]
    for e in manifest["planted"]:
        assert np.sign(_rho(ds, e["label"], e["descriptor"])) == e["sign"], e


def test_zero_effects_give_no_association(null_cohort):
    ds = null_cohort
    assert len(ds) >= 1900
    names = [k for k in ds.descriptors[0] if not k.endswith("_missing")]
    worst = max(abs(_rho(ds, t, n)) for t in TASKS for n in names)
    assert worst < 0.1


def test_children_effect_on_escort_share(tmp_path):
    spec = CohortSpec(n_households=600, seed=3,
                      effects={"children": {"purpose:escort": 1.0}})
    write_cohort(spec, tmp_path)
    ds = load_experiment_data(tmp_path)[0]
    assert _rho(ds, "children", "purpose_share_escort") > 0.3


def test_same_seed_gives_identical_files(tmp_path):
    spec = CohortSpec(n_households=40, seed=11)
    a = write_cohort(spec, tmp_path / "a")
    b = write_cohort(CohortSpec(n_households=40, seed=11), tmp_path / "b")
    for key in ("trips", "persons", "manifest"):
        assert a[key].read_bytes() == b[key].read_bytes()
    c = write_cohort(CohortSpec(n_households=40, seed=12), tmp_path / "c")
    assert a["trips"].read_bytes() != c["trips"].read_bytes()


def test_dirty_fractions_are_exact(tmp_path):
    dirty = {"missing_purpose": 0.02, "blank_mode": 0.01,
             "zero_or_missing_spatial": 0.03, "negative_duration": 0.005}
    cohort = generate(CohortSpec(n_households=80, seed=2, dirty=dirty))
    paths = write_cohort(cohort, tmp_path)
    _, report, _ = load_dataset(paths["trips"], paths["persons"])
    n = cohort.manifest["n_trips"]
    for cat in EXCLUSION_CATEGORIES:
        assert report.excluded[cat] == round(dirty[cat] * n), cat


@pytest.mark.parametrize("bad", [
    {"marginals": {**SURVEY_MARGINALS["2017"], "children": [0.5, 0.2, 0.1, 0.1]}},
    {"waves": {"2017": 0.5, "2023": 0.3}},
    {"effects": {"children": {"no_such_knob": 1.0}}},
    {"effects": {"height": {"p_work": 1.0}}},
    {"dirty": {"blank_mode": 1.5}},
    {"n_households": 0},
])
def test_infeasible_specs_are_rejected(bad):
    with pytest.raises(InfeasibleSpecError):
        CohortSpec(**bad)


def test_wave_shift_scales_knobs():
    spec = CohortSpec(wave_shifts={"2023": {"p_weekend": 0.3, "depart": 15, "speed": -0.1}})
    base, shifted = wave_shift(spec, "2017"), wave_shift(spec, "2023")
    assert shifted["p_weekend"] == pytest.approx(1.3 * base["p_weekend"])
    assert shifted["depart"] == base["depart"] + 15
    assert shifted["speed"] == pytest.approx(0.9 * base["speed"])
    assert wave_shift(CohortSpec(), "2023") == base


def test_weekend_shift_is_measurable(default_cohort):
    ds = default_cohort[0]
    fw = np.array([d["f_weekend"] for d in ds.descriptors])
    base = fw[ds.wave == "2017"].mean()
    gap = fw[ds.wave == "2023"].mean() - base
    assert gap == pytest.approx(0.3 * base, rel=0.25)


def test_unshifted_waves_are_indistinguishable(null_cohort):
    ds = null_cohort
    for name in ("f_weekend", "speed_mean", "f_comp"):
        x = np.array([d[name] for d in ds.descriptors])
        assert stats.ks_2samp(x[ds.wave == "2017"], x[ds.wave == "2023"]).pvalue > 0.01


def test_spec_files_round_trip(tmp_path):
    spec = CohortSpec(n_households=12, seed=4, wave_shifts={"2023": {"p_weekend": 0.2}})
    (tmp_path / "s.json").write_text(json.dumps(spec.to_dict()))
    assert load_spec(tmp_path / "s.json").digest() == spec.digest()
    (tmp_path / "s.toml").write_text(
        "[cohort]\nn_households = 12\nseed = 4\n[cohort.wave_shifts.2023]\np_weekend = 0.2\n")
    assert load_spec(tmp_path / "s.toml").digest() == spec.digest()


def test_label_missingness_reaches_the_labels(tmp_path):
    paths = write_cohort(CohortSpec(n_households=200, seed=1, label_missing={"income": 0.5}),
                         tmp_path)
    persons, _, _ = load_dataset(paths["trips"], paths["persons"])
    miss = np.mean([p.labels.income is None for p in persons])
    assert 0.35 < miss < 0.65
