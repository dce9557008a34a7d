"""Command-line entry point: ``mobinfer <command> [options]``.

Exit status is 0 on success, 1 on usage errors and 2 on data errors. Set
``MOBINFER_NUM_THREADS`` to cap BLAS threads.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import __version__
from .config import load_config
from .experiments import (
    ExperimentConfig, SplitError, SplitPlan, derive_seed, file_digest,
    make_split, run_descriptive_stats, run_mt_vs_st, run_uplift, wall_time_totals,
    write_experiment, write_report, write_stats,
)
from .features import FAMILIES, Standardizer, normalize_family, write_design_matrix
from .ingest import TASKS, DataError, SchemaError, load_dataset, write_trips_csv
from .metrics import DegenerateLabelsError, evaluate, reliability_bins
from .mtl import FRACTIONS, TrainConfig, multitask_net, save_checkpoint, single_task_net, train
from .synth import CohortSpec, InfeasibleSpecError, load_spec, write_cohort

log = logging.getLogger("mobinfer")
THREADS_ENV = "MOBINFER_NUM_THREADS"

DATA_ERRORS = (DataError, SchemaError, SplitError, InfeasibleSpecError, DegenerateLabelsError,
               FileNotFoundError, ValueError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _csv_list(text):
    return [s.strip() for s in text.split(",") if s.strip()]


def _fractions(text):
    try:
        out = [float(s) for s in _csv_list(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad fraction list {text!r}")
    if not out or any(not 0 < f <= 1 for f in out):
        raise argparse.ArgumentTypeError("fractions must lie in (0, 1]")
    return out


def _tasks(text):
    out = _csv_list(text)
    bad = [t for t in out if t not in TASKS]
    if bad or not out:
        raise argparse.ArgumentTypeError(f"unknown task(s) {bad}; choose from {list(TASKS)}")
    return out


def _family(text):
    try:
        return normalize_family(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def build_parser():
    p = _Parser(prog="mobinfer", description="Sociodemographic inference from trip diaries.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, data=True):
        sp.add_argument("--config", help="pipeline TOML (vocabularies, peak windows, [train])")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", required=True, help="output directory")
        if data:
            sp.add_argument("--data", help="directory holding trips.csv and persons.csv")
            sp.add_argument("--trips", help="trips CSV (overrides --data)")
            sp.add_argument("--persons", help="persons CSV (overrides --data)")

    def model_opts(sp):
        sp.add_argument("--split", choices=("overall", "cross"), default="overall")
        sp.add_argument("--tasks", type=_tasks, default=list(TASKS))
        sp.add_argument("--layer-norm", action="store_true")

    common(sub.add_parser("ingest", help="clean trips and write an exclusion report"))
    sp = sub.add_parser("features", help="descriptor extraction and matrix export")
    common(sp)
    sp.add_argument("--feature-set", type=_family, default="CT")
    common(sub.add_parser("stats", help="Spearman and OLS tables"))

    sp = sub.add_parser("train", help="train and evaluate one model")
    common(sp)
    model_opts(sp)
    sp.add_argument("--feature-set", type=_family, default="CT")
    sp.add_argument("--model", choices=("mt", "st"), default="mt",
                    help="'st' trains a single-task variant (exactly one --tasks entry)")

    sp = sub.add_parser("uplift", help="nested feature-set protocol")
    common(sp)
    model_opts(sp)
    sp.add_argument("--feature-set", type=_family, action="append",
                    help="restrict to these feature sets (repeatable)")

    sp = sub.add_parser("mtvst", help="multitask vs single-task data-fraction protocol")
    common(sp)
    model_opts(sp)
    sp.add_argument("--fractions", type=_fractions, default=list(FRACTIONS))
    sp.add_argument("--feature-set", type=_family, default="ST")

    sp = sub.add_parser("synth", help="generate a synthetic cohort")
    common(sp, data=False)
    sp.add_argument("--spec", help="cohort spec (TOML or JSON)")
    sp.add_argument("--households", type=int, help="override n_households")

    sp = sub.add_parser("evaluate", help="metrics on a prediction dump")
    common(sp, data=False)
    sp.add_argument("--predictions", required=True,
                    help="CSV with y_true, p0..pK-1 and an optional task column")
    return p


# -- helpers ---------------------------------------------------------------------

def _input_paths(args):
    trips = args.trips or (Path(args.data) / "trips.csv" if args.data else None)
    persons = args.persons or (Path(args.data) / "persons.csv" if args.data else None)
    if trips is None:
        raise UsageError("give --data or --trips")
    return Path(trips), Path(persons) if persons else None


def _train_config(config, seed):
    known = {f.name for f in fields(TrainConfig)}
    extra = {k: v for k, v in config.train.items() if k in known}
    extra.setdefault("seed", seed)
    return TrainConfig(**extra)


def _experiment_config(args, config):
    k = int(config.train.get("k_folds", 5))
    cfg = ExperimentConfig(seed=args.seed, k_folds=k, train=_train_config(config, args.seed),
                           tasks=tuple(args.tasks), layer_norm=args.layer_norm)
    return cfg


def _split_plan(args):
    return SplitPlan("overall" if args.split == "overall" else "cross_temporal",
                     seed=derive_seed(args.seed, "split"))


def _dataset(args, config):
    trips, persons = _input_paths(args)
    if persons is None:
        raise UsageError("this command needs a persons table")
    inputs = {"trips": file_digest(trips), "persons": file_digest(persons)}
    from .experiments import prepare_dataset
    people, report, _ = load_dataset(trips, persons, config)
    return prepare_dataset(people, config), report, inputs


def _run_id(args, config, inputs):
    blob = json.dumps({"command": args.command, "argv": _stable_args(args),
                       "config": config.digest(), "inputs": inputs}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _stable_args(args):
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("out",)}


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True, default=str))
    return Path(path)


# -- commands --------------------------------------------------------------------

def cmd_ingest(args, config, out):
    trips_path, persons_path = _input_paths(args)
    from .ingest import build_persons, clean_trips, load_tables
    tables = load_tables(trips_path, persons_path, config)
    trips, report = clean_trips(tables.trips, config)
    if persons_path is not None:
        build_persons(trips, tables.persons, report)
    write_trips_csv(trips, out / "trips_clean.csv")
    doc = {"report": report.as_dict(),
           "rejected_rows": [asdict(r) for r in tables.rejects],
           "warnings": tables.warnings}
    _write_json(out / "cleaning_report.json", doc)
    inputs = {"trips": file_digest(trips_path)}
    if persons_path is not None:
        inputs["persons"] = file_digest(persons_path)
    return inputs, [out / "trips_clean.csv", out / "cleaning_report.json"]


def cmd_features(args, config, out):
    ds, report, inputs = _dataset(args, config)
    raw = ds.matrix(args.feature_set)
    side = write_design_matrix(raw, out / "features_raw.csv",
                               {"feature_set": args.feature_set, "config": config.digest()})
    std = Standardizer().fit(raw.X)
    from .features import apply_standardizer
    z = apply_standardizer(std, raw)
    side2 = write_design_matrix(z, out / "features_std.csv",
                                {"feature_set": args.feature_set, "config": config.digest()})
    labels = out / "labels.csv"
    with open(labels, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["person_id", "household_id", "wave", *TASKS])
        for p, y in zip(ds.persons, ds.Y):
            w.writerow([p.person_id, p.household_id, p.wave, *[int(v) for v in y]])
    return inputs, [out / "features_raw.csv", side, out / "features_std.csv", side2, labels]


def cmd_stats(args, config, out):
    ds, _, inputs = _dataset(args, config)
    paths = write_stats(run_descriptive_stats(ds), out)
    return inputs, list(paths.values())


def cmd_train(args, config, out):
    ds, _, inputs = _dataset(args, config)
    split = make_split(ds, _split_plan(args))
    tasks = list(args.tasks)
    if args.model == "st" and len(tasks) != 1:
        raise UsageError("--model st needs exactly one --tasks entry")
    X = ds.matrix(args.feature_set).X
    cols = [TASKS.index(t) for t in tasks]
    Y = ds.Y[:, cols]
    Z = Standardizer().fit(X[split.train]).transform(X)
    cfg = _train_config(config, derive_seed(args.seed, "train"))
    init = derive_seed(args.seed, "init")
    if args.model == "st":
        net = single_task_net(Z.shape[1], tasks[0], args.layer_norm, cfg.dropout, init)
    else:
        net = multitask_net(Z.shape[1], args.layer_norm, cfg.dropout, init, tuple(tasks))
    res = train(net, Z[split.train], Y[split.train], Z[split.val], Y[split.val], cfg)
    probs = net.predict(Z[split.test])
    metrics = {}
    for j, t in enumerate(tasks):
        y = Y[split.test, j]
        ok = y >= 0
        if ok.any():
            metrics[t] = evaluate(probs[t][ok], y[ok])
    (out / "train_log.csv").write_text(res.log_csv())
    ckpt = save_checkpoint(net, out / "model.npz", cfg, {"feature_set": args.feature_set})
    _write_json(out / "metrics.json", {"metrics": metrics, "best_epoch": res.best_epoch,
                                       "epochs_run": res.epochs_run,
                                       "split_sizes": split.sizes()})
    return inputs, [out / "train_log.csv", Path(ckpt), out / "metrics.json"]


def cmd_uplift(args, config, out):
    ds, _, inputs = _dataset(args, config)
    cfg = _experiment_config(args, config)
    if args.feature_set:
        cfg.feature_sets = tuple(f for f in FAMILIES if f in args.feature_set)
    split = make_split(ds, _split_plan(args))
    result = run_uplift(ds, split, cfg)
    paths = write_experiment(result, out, "uplift", cfg, {"split": split.plan.kind,
                                                         "split_sizes": split.sizes()})
    return inputs, [paths["report"], paths["timings"], paths["manifest"], *paths["reliability"]]


def cmd_mtvst(args, config, out):
    ds, _, inputs = _dataset(args, config)
    cfg = _experiment_config(args, config)
    cfg.fractions = tuple(args.fractions)
    cfg.mtvst_family = args.feature_set
    split = make_split(ds, _split_plan(args))
    result = run_mt_vs_st(ds, split, cfg)
    totals = {f"{k[0]}:{k[1]}": v for k, v in wall_time_totals(result).items()}
    paths = write_experiment(result, out, "mtvst", cfg, {"split": split.plan.kind,
                                                        "split_sizes": split.sizes(),
                                                        "wall_time_totals": totals})
    return inputs, [paths["report"], paths["timings"], paths["manifest"]]


def cmd_synth(args, config, out):
    spec = load_spec(args.spec) if args.spec else CohortSpec()
    if args.households:
        spec.n_households = args.households
    if args.seed or not args.spec:
        spec.seed = args.seed
    spec.validate()
    paths = write_cohort(spec, out)
    inputs = {"spec": file_digest(args.spec)} if args.spec else {}
    return inputs, list(paths.values())


def read_prediction_dump(path):
    """``{task: (probs, y)}`` from a dump with y_true, p0..pK-1 (and optional task)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise DataError(f"{path}: empty prediction dump")
    pcols = sorted((c for c in rows[0] if c and c[0] == "p" and c[1:].isdigit()),
                   key=lambda c: int(c[1:]))
    if "y_true" not in rows[0] or not pcols:
        raise SchemaError(f"{path}: need y_true and p0..pK-1 columns")
    groups = {}
    for r in rows:
        task = r.get("task") or "all"
        vals = [r[c] for c in pcols]
        k = sum(1 for v in vals if v not in ("", None))
        groups.setdefault(task, ([], []))
        groups[task][0].append([float(v) for v in vals[:k]])
        groups[task][1].append(int(r["y_true"]))
    out = {}
    for task, (P, y) in groups.items():
        widths = {len(p) for p in P}
        if len(widths) != 1:
            raise DataError(f"task {task}: rows have differing class counts")
        out[task] = (np.array(P, dtype=float), np.array(y, dtype=int))
    return out


def cmd_evaluate(args, config, out):
    dump = read_prediction_dump(args.predictions)
    metrics = {}
    outputs = []
    for task, (P, y) in sorted(dump.items()):
        metrics[task] = evaluate(P, y)
        bins = reliability_bins(P, y)
        path = out / f"reliability_{task}.csv"
        write_report([dict(zip(("bin_lo", "bin_hi", "count", "acc", "conf"), r)) for r in bins.rows()],
                     path, ("bin_lo", "bin_hi", "count", "acc", "conf"))
        outputs.append(path)
    outputs.insert(0, _write_json(out / "metrics.json", metrics))
    return {"predictions": file_digest(args.predictions)}, outputs


COMMANDS = {
    "ingest": cmd_ingest, "features": cmd_features, "stats": cmd_stats, "train": cmd_train,
    "uplift": cmd_uplift, "mtvst": cmd_mtvst, "synth": cmd_synth, "evaluate": cmd_evaluate,
}


def _thread_limit():
    n = os.environ.get(THREADS_ENV)
    if not n:
        return None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=int(n))


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(argv)
        if not args.command:
            parser.print_help(sys.stderr)
            return 1
        config = load_config(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        limiter = _thread_limit()
        t0 = time.perf_counter()
        try:
            inputs, outputs = COMMANDS[args.command](args, config, out)
        finally:
            if limiter is not None:
                limiter.unregister()
        manifest = {
            "command": args.command,
            "argv": argv,
            "config_path": args.config,
            "config_digest": config.digest(),
            "seed": args.seed,
            "input_digests": inputs,
            "run_id": _run_id(args, config, inputs),
            "outputs": {str(Path(p).name): file_digest(p) for p in outputs},
            "wall_time_s": time.perf_counter() - t0,
            "version": __version__,
        }
        _write_json(out / f"run_manifest_{args.command}.json", manifest)
        print(json.dumps({"run_id": manifest["run_id"], "outputs": sorted(manifest["outputs"])}))
        return 0
    except UsageError as exc:
        print(f"mobinfer: usage error: {exc}", file=sys.stderr)
        return 1
    except DATA_ERRORS as exc:
        print(f"mobinfer: data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
