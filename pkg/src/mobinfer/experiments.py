"""Evaluation splits, multilabel folds, the two training protocols and reports.

All randomness is drawn from named sub-seeds of one experiment seed, so
every stage can be reproduced on its own. Report CSVs contain only
quantities that are deterministic given (seed, config, data); wall times go
to a separate timing file.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .features import (
    FAMILIES, SET_NAMES, Standardizer, build_matrix, family_columns, feature_columns,
    label_matrix, normalize_family, person_descriptors,
)
from .ingest import CLASSES, TASKS, load_dataset
from .metrics import RankDeficientError, evaluate, ols_fit, reliability_bins, spearman_rho
from .mtl import (
    FRACTIONS, TrainConfig, multitask_net, single_task_net, substream, subsample_training,
    train,
)

METRICS = ("accuracy", "auroc", "nll", "ece")
REPORT_COLUMNS = ("split", "task", "setting", "model", "metric", "mean", "sd")
OLS_TARGETS = ("f_mm", "f_comp", "mean_local_clustering", "motif_out_and_back")
OLS_REGRESSORS = ("age", "income", "gender", "household_size")


class SplitError(ValueError):
    pass


def derive_seed(seed, name):
    """Integer sub-seed for stage ``name``."""
    return int(substream(seed, name).integers(2**31 - 1))


# -- data ------------------------------------------------------------------------

@dataclass
class Dataset:
    persons: list
    descriptors: list
    Y: np.ndarray
    household: np.ndarray
    wave: np.ndarray
    config: PipelineConfig = field(default_factory=PipelineConfig)

    def __len__(self):
        return len(self.persons)

    @property
    def person_ids(self):
        return [p.person_id for p in self.persons]

    def matrix(self, family="CT"):
        return build_matrix(self.descriptors, family, self.config, self.person_ids)


def prepare_dataset(persons, config=None):
    """Compute every descriptor once per person."""
    config = config or PipelineConfig()
    if not persons:
        raise ValueError("empty dataset")
    desc = [person_descriptors(p, config) for p in persons]
    return Dataset(
        persons=list(persons),
        descriptors=desc,
        Y=label_matrix(persons),
        household=np.array([p.household_id for p in persons]),
        wave=np.array([str(p.wave) for p in persons]),
        config=config,
    )


def load_experiment_data(data_dir, config=None):
    data_dir = Path(data_dir)
    persons, report, _ = load_dataset(data_dir / "trips.csv", data_dir / "persons.csv", config)
    return prepare_dataset(persons, config), report


# -- splits ----------------------------------------------------------------------

@dataclass(frozen=True)
class SplitPlan:
    kind: str = "overall"
    seed: int = 0
    fractions: tuple = (0.7, 0.1, 0.2)
    train_waves: tuple = ("2017", "2019")
    test_wave: str = "2023"

    def __post_init__(self):
        if self.kind not in ("overall", "cross_temporal"):
            raise SplitError(f"unknown split kind {self.kind!r}")


@dataclass
class Split:
    plan: SplitPlan
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    @property
    def pool(self):
        return np.sort(np.concatenate([self.train, self.val]))

    def sizes(self):
        return len(self.train), len(self.val), len(self.test)


def _fill_by_household(rows_by_hh, order, targets):
    """Walk households in ``order``, filling partitions up to cumulative targets."""
    parts = [[] for _ in targets]
    total, j = 0, 0
    for h in order:
        while j < len(targets) - 1 and total >= targets[j]:
            j += 1
        parts[j].extend(rows_by_hh[h])
        total += len(rows_by_hh[h])
    return [np.array(sorted(p), dtype=int) for p in parts]


def make_split(dataset, plan):
    """Household-grouped train/val/test partition."""
    n = len(dataset)
    if n == 0:
        raise SplitError("empty dataset")
    rng = substream(plan.seed, "split")
    hh = dataset.household
    if plan.kind == "overall":
        pool_rows = np.arange(n)
        test = None
    else:
        present = set(dataset.wave.tolist())
        missing = [w for w in (*plan.train_waves, plan.test_wave) if w not in present]
        if missing:
            raise SplitError(f"cross-temporal split needs waves {missing}, not present")
        test = np.flatnonzero(dataset.wave == plan.test_wave)
        pool_rows = np.flatnonzero(np.isin(dataset.wave, plan.train_waves))

    rows_by_hh = {}
    for i in pool_rows:
        rows_by_hh.setdefault(hh[i], []).append(int(i))
    households = sorted(rows_by_hh)
    order = [households[i] for i in rng.permutation(len(households))]
    m = len(pool_rows)
    f_tr, f_va, f_te = plan.fractions
    if plan.kind == "overall":
        cum = np.cumsum([f_tr, f_va, f_te]) * m
        train, val, test = _fill_by_household(rows_by_hh, order, cum)
    else:
        # keep the train:val ratio of the overall protocol inside the pool
        cum = np.array([f_tr / (f_tr + f_va), 1.0]) * m
        train, val = _fill_by_household(rows_by_hh, order, cum)
    return Split(plan, train, val, test)


@dataclass
class FoldPlan:
    folds: list
    seed: int

    @property
    def k(self):
        return len(self.folds)

    def train_rows(self, i):
        return np.sort(np.concatenate([f for j, f in enumerate(self.folds) if j != i]))

    def val_rows(self, i):
        return self.folds[i]


def make_folds(rows, Y, k=5, seed=0):
    """Greedy multilabel stratification, rarest label combination first.

    ``Y`` holds the label indices of ``rows`` (one column per task, -1 for
    missing). Each row goes to the open fold whose remaining per-label
    demand is largest for that row's labels; fold sizes are fixed to
    ``n // k`` (+1 for the first ``n % k`` folds).
    """
    rows = np.asarray(rows, dtype=int)
    Y = np.asarray(Y, dtype=int)
    if Y.ndim == 1:
        Y = Y[:, None]
    n = len(rows)
    if k < 2:
        raise ValueError("k must be at least 2")
    if n < k:
        raise ValueError(f"cannot make {k} folds from {n} rows")
    rng = substream(seed, "folds")
    cap = np.full(k, n // k)
    cap[: n % k] += 1

    # one-hot label columns; demand[f, c] = desired remaining count
    offsets = np.concatenate([[0], np.cumsum(Y.max(axis=0).clip(min=0) + 1)])
    onehot = np.zeros((n, offsets[-1]), dtype=float)
    for t in range(Y.shape[1]):
        ok = Y[:, t] >= 0
        onehot[np.flatnonzero(ok), offsets[t] + Y[ok, t]] = 1.0
    demand = np.outer(cap / n, onehot.sum(axis=0))

    combos = [tuple(r) for r in Y.tolist()]
    freq = Counter(combos)
    tiebreak = rng.permutation(n)
    order = sorted(range(n), key=lambda i: (freq[combos[i]], tiebreak[i]))

    fill = np.zeros(k, dtype=int)
    assign = np.empty(n, dtype=int)
    for i in order:
        score = demand @ onehot[i]
        score[fill >= cap] = -np.inf
        best = np.flatnonzero(score == score.max())
        if len(best) > 1:
            room = (cap - fill)[best]
            best = best[room == room.max()]
        f = int(best[0])
        assign[i] = f
        fill[f] += 1
        demand[f] -= onehot[i]
    return FoldPlan([np.sort(rows[assign == f]) for f in range(k)], seed)


# -- training helpers ------------------------------------------------------------

@dataclass
class ExperimentConfig:
    seed: int = 0
    k_folds: int = 5
    train: TrainConfig = field(default_factory=TrainConfig)
    feature_sets: tuple = FAMILIES
    tasks: tuple = TASKS
    fractions: tuple = FRACTIONS
    mtvst_family: str = "ST"
    layer_norm: bool = False

    def to_dict(self):
        d = asdict(self)
        d["train"] = asdict(self.train)
        return d

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _train_cfg(base, seed):
    d = asdict(base)
    d["seed"] = seed
    return TrainConfig(**d)


def _fit_predict(net, Z, Y, tr, va, te, cfg):
    """Train ``net`` on rows ``tr`` (early stopping on ``va``); test-set probabilities."""
    res = train(net, Z[tr], Y[tr], Z[va], Y[va], cfg)
    probs = net.predict(Z[te])
    return probs, res


def _summarize(values):
    v = np.asarray(values, dtype=float)
    mean = float(np.mean(v))
    sd = float(np.std(v, ddof=1)) if len(v) > 1 else 0.0
    return mean, sd


@dataclass
class ExperimentResult:
    rows: list
    reliability: dict = field(default_factory=dict)
    timings: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    manifest: dict = field(default_factory=dict)

    def value(self, task, setting, model, metric, stat="mean"):
        for r in self.rows:
            if (r["task"], r["setting"], r["model"], r["metric"]) == (task, str(setting), model, metric):
                return r[stat]
        raise KeyError((task, setting, model, metric))


def _collect(per_fold, split_kind, setting, model, tasks):
    rows = []
    for task in tasks:
        for metric in METRICS:
            mean, sd = _summarize([f[task][metric] for f in per_fold])
            rows.append({"split": split_kind, "task": task, "setting": str(setting),
                         "model": model, "metric": metric, "mean": mean, "sd": sd})
    return rows


def _evaluate_tasks(probs, Y_test, tasks, all_tasks):
    out, skipped = {}, []
    for task in tasks:
        y = Y_test[:, all_tasks.index(task)]
        ok = y >= 0
        if not ok.any():
            out[task] = {m: float("nan") for m in METRICS}
            continue
        ev = evaluate(probs[task][ok], y[ok])
        out[task] = {m: ev[m] for m in METRICS}
        skipped.append((task, ev["auroc_skipped_classes"]))
    return out, skipped


# -- protocols -------------------------------------------------------------------

def run_uplift(dataset, split, config=None):
    """Nested feature sets x tasks with the multitask net, mean/sd over folds."""
    config = config or ExperimentConfig()
    tasks = tuple(config.tasks)
    pool = split.pool
    folds = make_folds(pool, dataset.Y[pool], config.k_folds, derive_seed(config.seed, "folds"))
    full = dataset.matrix("CT")
    Y = dataset.Y[:, [TASKS.index(t) for t in tasks]]
    result = ExperimentResult(rows=[])
    for fam in config.feature_sets:
        fam = normalize_family(fam)
        cols = [full.columns.index(c) for c in feature_columns(fam, dataset.config)]
        X = full.X[:, cols]
        per_fold = []
        pooled = {t: ([], []) for t in tasks}
        for i in range(folds.k):
            tr, va = folds.train_rows(i), folds.val_rows(i)
            scaler = Standardizer().fit(X[tr])
            Z = scaler.transform(X)
            tag = f"uplift:{SET_NAMES[fam]}:{i}"
            net = multitask_net(Z.shape[1], layer_norm=config.layer_norm,
                                dropout=config.train.dropout,
                                seed=derive_seed(config.seed, "init:" + tag), tasks=tasks)
            cfg = _train_cfg(config.train, derive_seed(config.seed, "train:" + tag))
            t0 = time.perf_counter()
            probs, res = _fit_predict(net, Z, Y, tr, va, split.test, cfg)
            result.timings.append({"protocol": "uplift", "setting": SET_NAMES[fam], "fold": i,
                                   "model": "MT", "epochs": res.epochs_run,
                                   "wall_s": time.perf_counter() - t0})
            metrics, skipped = _evaluate_tasks(probs, Y[split.test], tasks, tasks)
            per_fold.append(metrics)
            result.skipped += [(SET_NAMES[fam], i, t, s) for t, s in skipped if s]
            for t in tasks:
                y = Y[split.test, tasks.index(t)]
                ok = y >= 0
                pooled[t][0].append(probs[t][ok])
                pooled[t][1].append(y[ok])
        result.rows += _collect(per_fold, split.plan.kind, SET_NAMES[fam], "MT", tasks)
        for t in tasks:
            P = np.concatenate(pooled[t][0])
            if len(P):
                result.reliability[(t, SET_NAMES[fam])] = reliability_bins(P, np.concatenate(pooled[t][1]))
    return result


def run_mt_vs_st(dataset, split, config=None, fractions=None):
    """MT vs single-task variants on C+ST features at several training fractions."""
    config = config or ExperimentConfig()
    fractions = tuple(fractions or config.fractions)
    tasks = tuple(config.tasks)
    pool = split.pool
    folds = make_folds(pool, dataset.Y[pool], config.k_folds, derive_seed(config.seed, "folds"))
    X = dataset.matrix(config.mtvst_family).X
    Y = dataset.Y[:, [TASKS.index(t) for t in tasks]]
    result = ExperimentResult(rows=[])
    for frac in fractions:
        per_fold = {"MT": [], **{f"ST-{t}": [] for t in tasks}}
        for i in range(folds.k):
            tr_full, va = folds.train_rows(i), folds.val_rows(i)
            tr = subsample_training(tr_full, frac, derive_seed(config.seed, f"subsample:{i}"))
            Z = Standardizer().fit(X[tr]).transform(X)
            tag = f"mtvst:{frac!r}:{i}"

            net = multitask_net(Z.shape[1], layer_norm=config.layer_norm,
                                dropout=config.train.dropout,
                                seed=derive_seed(config.seed, "init:" + tag), tasks=tasks)
            cfg = _train_cfg(config.train, derive_seed(config.seed, "train:" + tag))
            t0 = time.perf_counter()
            probs, res = _fit_predict(net, Z, Y, tr, va, split.test, cfg)
            result.timings.append({"protocol": "mtvst", "setting": repr(frac), "fold": i,
                                   "model": "MT", "epochs": res.epochs_run,
                                   "wall_s": time.perf_counter() - t0})
            per_fold["MT"].append(_evaluate_tasks(probs, Y[split.test], tasks, tasks)[0])

            for j, t in enumerate(tasks):
                net = single_task_net(Z.shape[1], t, layer_norm=config.layer_norm,
                                      dropout=config.train.dropout,
                                      seed=derive_seed(config.seed, f"init:{tag}:{t}"))
                cfg = _train_cfg(config.train, derive_seed(config.seed, f"train:{tag}:{t}"))
                t0 = time.perf_counter()
                probs, res = _fit_predict(net, Z, Y[:, [j]], tr, va, split.test, cfg)
                result.timings.append({"protocol": "mtvst", "setting": repr(frac), "fold": i,
                                       "model": f"ST-{t}", "epochs": res.epochs_run,
                                       "wall_s": time.perf_counter() - t0})
                per_fold[f"ST-{t}"].append(
                    _evaluate_tasks(probs, Y[split.test][:, [j]], (t,), (t,))[0])
        result.rows += _collect(per_fold["MT"], split.plan.kind, repr(frac), "MT", tasks)
        for t in tasks:
            result.rows += _collect(per_fold[f"ST-{t}"], split.plan.kind, repr(frac), "ST", (t,))
    return result


def wall_time_totals(result):
    """Summed training seconds per (fraction, model family)."""
    out = {}
    for r in result.timings:
        key = (r["setting"], "MT" if r["model"] == "MT" else "ST")
        out[key] = out.get(key, 0.0) + r["wall_s"]
    return out


# -- descriptive statistics ------------------------------------------------------

def _ordinal(dataset, task):
    y = dataset.Y[:, TASKS.index(task)].astype(float)
    if task == "gender":
        # female indicator; non-binary rows are left out of the ordinal coding
        female = CLASSES["gender"].index("female")
        nb = CLASSES["gender"].index("non-binary")
        y = np.where(y == nb, -1.0, (y == female).astype(float))
        y[dataset.Y[:, TASKS.index(task)] < 0] = -1.0
    y[y < 0] = np.nan
    return y


def run_descriptive_stats(dataset, tasks=TASKS):
    """Spearman table (sorted by |rho|) and M1/M2 OLS tables."""
    spearman, notes = [], []
    columns = [c for c, _ in family_columns(dataset.config) if not c.endswith("_missing")]
    for task in tasks:
        y = _ordinal(dataset, task)
        for c in columns:
            x = np.array([d[c] for d in dataset.descriptors], dtype=float)
            ok = ~np.isnan(x) & ~np.isnan(y)
            try:
                rho, p = spearman_rho(x[ok], y[ok])
            except ValueError as exc:
                notes.append(f"spearman {c} ~ {task}: skipped ({exc})")
                continue
            spearman.append({"descriptor": c, "label": task, "rho": rho, "p": p,
                             "n": int(ok.sum())})
    spearman.sort(key=lambda r: (-abs(r["rho"]), r["descriptor"], r["label"]))

    regs = {t: _ordinal(dataset, t) for t in ("age", "income", "gender")}
    regs["household_size"] = np.array([p.household_size for p in dataset.persons], dtype=float)
    ols = []
    for target in OLS_TARGETS:
        yv = np.array([d[target] for d in dataset.descriptors], dtype=float)
        for model, names in (("M1", OLS_REGRESSORS), ("M2", OLS_REGRESSORS[:3])):
            Xr = np.column_stack([regs[n] for n in names])
            ok = ~np.isnan(yv) & ~np.isnan(Xr).any(axis=1)
            try:
                fit = ols_fit(Xr[ok], yv[ok], names=list(names), add_intercept=True)
            except (RankDeficientError, ValueError) as exc:
                notes.append(f"ols {target} {model}: skipped ({exc})")
                continue
            ols.append({"target": target, "model": model, **fit.as_dict()})
    return {"spearman": spearman, "ols": ols, "notes": notes}


# -- reports ---------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_report(rows, path, columns=REPORT_COLUMNS):
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])
    return path


def write_reliability(reliability, out_dir, prefix="reliability"):
    out_dir = Path(out_dir)
    paths = []
    for (task, setting), bins in sorted(reliability.items()):
        safe = setting.replace("+", "plus")
        p = out_dir / f"{prefix}_{task}_{safe}.csv"
        with open(p, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_lo", "bin_hi", "count", "acc", "conf"])
            for row in bins.rows():
                w.writerow([_fmt(v) for v in row])
        paths.append(p)
    return paths


def file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_experiment(result, out_dir, name, config=None, extra=None):
    """Report CSV, timing CSV, reliability CSVs and a JSON manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = write_report(result.rows, out_dir / f"{name}_report.csv")
    timing = write_report(result.timings, out_dir / f"{name}_timings.csv",
                          ("protocol", "setting", "fold", "model", "epochs", "wall_s"))
    rel = write_reliability(result.reliability, out_dir, f"{name}_reliability")
    manifest = {
        "experiment": name,
        "report": report.name,
        "report_sha256": file_digest(report),
        "timings": timing.name,
        "reliability": [p.name for p in rel],
        "auroc_skipped": [list(map(str, s)) for s in result.skipped],
    }
    if config is not None:
        manifest["config"] = config.to_dict()
        manifest["config_digest"] = config.digest()
        manifest["seeds"] = {"experiment": config.seed,
                             "folds": derive_seed(config.seed, "folds")}
    if extra:
        manifest.update(extra)
    mpath = out_dir / f"{name}_manifest.json"
    mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str))
    result.manifest = manifest
    return {"report": report, "timings": timing, "reliability": rel, "manifest": mpath}


def write_stats(stats, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sp = write_report(stats["spearman"], out_dir / "spearman.csv",
                      ("descriptor", "label", "rho", "p", "n"))
    rows = []
    for m in stats["ols"]:
        for term, v in m["terms"].items():
            rows.append({"target": m["target"], "model": m["model"], "term": term,
                         "coef": v["coef"], "se": v["se"], "t": v["t"], "p": v["p"],
                         "r2": m["r2"], "n": m["n"]})
    ols = write_report(rows, out_dir / "ols.csv",
                       ("target", "model", "term", "coef", "se", "t", "p", "r2", "n"))
    notes = out_dir / "stats_notes.txt"
    notes.write_text("".join(n + "\n" for n in stats["notes"]))
    return {"spearman": sp, "ols": ols, "notes": notes}
